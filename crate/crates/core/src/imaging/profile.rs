use serde::{Deserialize, Serialize};

use super::BinaryImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// One count per row.
    Horizontal,
    /// One count per column.
    Vertical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InkProfile {
    pub axis: Axis,
    pub counts: Vec<u32>,
    pub smoothed: Vec<f64>,
}

/// Centered moving average of odd width `window`, mirroring the signal at
/// both ends (`x[-1] = x[0]`, `x[-2] = x[1]`, ...).
pub fn moving_average(signal: &[f64], window: usize) -> Result<Vec<f64>> {
    let n = signal.len();
    if window == 0 || window % 2 == 0 {
        return Err(Error::param(format!("window must be odd, got {window}")));
    }
    if window > n {
        return Err(Error::param(format!(
            "window {window} exceeds profile length {n}"
        )));
    }
    let half = (window / 2) as isize;
    let n_i = n as isize;
    let reflect = |i: isize| -> usize {
        let mut i = i;
        // Window never exceeds n, so a single reflection suffices.
        if i < 0 {
            i = -i - 1;
        }
        if i >= n_i {
            i = 2 * n_i - i - 1;
        }
        i as usize
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n_i {
        let mut acc = 0.0;
        for k in -half..=half {
            acc += signal[reflect(i + k)];
        }
        out.push(acc / window as f64);
    }
    Ok(out)
}

/// Per-row or per-column ink counts and their low-pass filtered version.
pub fn ink_profile(img: &BinaryImage, axis: Axis, window: usize) -> Result<InkProfile> {
    let counts: Vec<u32> = match axis {
        Axis::Horizontal => (0..img.height())
            .map(|y| (0..img.width()).filter(|&x| img.get(x, y)).count() as u32)
            .collect(),
        Axis::Vertical => (0..img.width())
            .map(|x| (0..img.height()).filter(|&y| img.get(x, y)).count() as u32)
            .collect(),
    };
    let as_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let smoothed = moving_average(&as_f, window)?;
    Ok(InkProfile {
        axis,
        counts,
        smoothed,
    })
}
