//! Daily series, chronological windowing and synthetic datasets.

mod daily;
mod synth;
mod windows;

pub use daily::{aggregate_daily, clean_stations, CleaningReport, DailyRecord, DailySeries, DroppedStation};
pub use synth::{synth_dataset, SynthComponents, SynthProfile};
pub use windows::{make_windows, Split, SplitFractions, Window, WindowSet, WindowSplits};
