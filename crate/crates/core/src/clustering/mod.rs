//! DTW distances between client series and k-medoids grouping.

mod dtw;
mod kmedoids;

pub use dtw::{dtw_distance, z_normalize, DistanceMatrix};
pub use kmedoids::{assignment_cost, cluster_clients, Clustering};
