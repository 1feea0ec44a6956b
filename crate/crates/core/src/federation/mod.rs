//! Online-Fed, PSO-Fed and PSGF-Fed as a deterministic round state machine.
//!
//! The server side of every round only ever sees flat parameter vectors and
//! index masks; training windows stay inside [`ClientState`] and are touched
//! only by local updates and by metric evaluation.

mod client;
mod plan;
mod round;
mod run;

pub use client::{local_update, AdamLocalUpdate, ClientState, LocalModel, LocalUpdate, TrainOptions};
pub use plan::{draw_round_plan, Mask, FedRatios, Policy, RoundPlan, SelectionMask, ForwardMask};
pub use round::{aggregate, apply_mask, fed_round, online_fed_round, psgf_fed_round, pso_fed_round, RoundOutcome};
pub use run::{
    evaluate_rmse, rmse, run_federation, run_federation_with, squared_error, FedConfig, FederationResult, RoundLog, StopRule,
};
