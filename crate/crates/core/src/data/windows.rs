use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// One supervised example. Both halves are channel-major: `input` holds
/// `M×L` values and `target` the `M×T` values that follow.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Chronological split boundaries as fractions of the series length.
/// Whatever remains after `train + val` is the test split.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.7, val: 0.15 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.train > 0.0 && self.val >= 0.0 && self.train + self.val < 1.0;
        if !ok {
            return Err(Error::Config(format!(
                "split fractions train={} val={} must satisfy train>0, val>=0, train+val<1",
                self.train, self.val
            )));
        }
        Ok(())
    }

    /// `(train_end, val_end)` as day indices for a series of `n` values.
    pub fn boundaries(&self, n: usize) -> (usize, usize) {
        let train_end = libm::round(self.train * n as f64) as usize;
        let val_end = libm::round((self.train + self.val) * n as f64) as usize;
        (train_end.min(n), val_end.min(n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub split: Split,
    pub windows: Vec<Window>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSplits {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

impl WindowSplits {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train.windows.len(), self.val.windows.len(), self.test.windows.len())
    }
}

/// Stride-1 windows over a univariate series.
///
/// A window belongs to the split that contains its whole target region;
/// windows whose target straddles a boundary are discarded, so target
/// regions of different splits never overlap. Inputs may reach back into
/// earlier splits.
pub fn make_windows(
    series: &[f64],
    lookback: usize,
    horizon: usize,
    fractions: SplitFractions,
) -> Result<WindowSplits> {
    fractions.validate()?;
    if lookback == 0 || horizon == 0 {
        return Err(Error::Config("lookback and horizon must be positive".into()));
    }
    let n = series.len();
    if n < lookback + horizon {
        return Err(Error::Length { expected: lookback + horizon, actual: n });
    }
    let (train_end, val_end) = fractions.boundaries(n);
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for start in 0..=n - lookback - horizon {
        let t0 = start + lookback;
        let t1 = t0 + horizon;
        let bucket = if t1 <= train_end {
            &mut train
        } else if t0 >= train_end && t1 <= val_end {
            &mut val
        } else if t0 >= val_end {
            &mut test
        } else {
            continue;
        };
        bucket.push(Window { input: series[start..t0].to_vec(), target: series[t0..t1].to_vec() });
    }
    Ok(WindowSplits {
        train: WindowSet { split: Split::Train, windows: train },
        val: WindowSet { split: Split::Val, windows: val },
        test: WindowSet { split: Split::Test, windows: test },
    })
}
