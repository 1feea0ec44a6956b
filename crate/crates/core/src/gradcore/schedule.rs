/// Learning rate as a function of the optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant { rate: f64 },
    /// Linear warm-up from `base` to `peak` over the first 30% of
    /// `total_steps`, then linear decay back to `base`.
    OneCycle { base: f64, peak: f64, total_steps: usize },
}

const WARMUP_FRACTION: f64 = 0.3;

impl LrSchedule {
    pub fn rate(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant { rate } => rate,
            LrSchedule::OneCycle { base, peak, total_steps } => {
                let total = total_steps.max(1) as f64;
                let warm = (WARMUP_FRACTION * total).max(1.0);
                let s = (step as f64).min(total);
                if s < warm {
                    base + (peak - base) * s / warm
                } else {
                    let span = (total - warm).max(1.0);
                    peak - (peak - base) * ((s - warm) / span).min(1.0)
                }
            }
        }
    }
}
