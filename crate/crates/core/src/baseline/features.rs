//! Per-channel time-domain statistics and autoregressive coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::WindowTensor;

pub const AR_ORDER: usize = 4;
/// Values per channel: five statistics then the AR coefficients.
pub const FEATURES_PER_CHANNEL: usize = 5 + AR_ORDER;
pub const FEATURE_NAMES: [&str; FEATURES_PER_CHANNEL] =
    ["mav", "zc", "wl", "rms", "ssc", "ar1", "ar2", "ar3", "ar4"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArMethod {
    #[default]
    Burg,
    YuleWalker,
}

pub fn mav(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64
}

pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn waveform_length(x: &[f64]) -> f64 {
    x.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Sign changes between neighbours whose difference reaches `threshold`.
pub fn zero_crossings(x: &[f64], threshold: f64) -> usize {
    x.windows(2)
        .filter(|w| w[0] * w[1] < 0.0 && (w[0] - w[1]).abs() >= threshold)
        .count()
}

/// Local extrema whose slopes on both sides reach `threshold`.
pub fn slope_sign_changes(x: &[f64], threshold: f64) -> usize {
    x.windows(3)
        .filter(|w| {
            let (left, right) = (w[1] - w[0], w[1] - w[2]);
            left * right > 0.0 && left.abs() >= threshold && right.abs() >= threshold
        })
        .count()
}

/// Burg estimate of `a` in `x[t] = Σ aᵢ·x[t−i] + e[t]`.
pub fn burg(x: &[f64], order: usize) -> Vec<f64> {
    let n = x.len();
    let mut f = x.to_vec();
    let mut b = x.to_vec();
    // prediction-error filter 1 + c₁z⁻¹ + …
    let mut c = vec![1.0];
    for m in 0..order.min(n.saturating_sub(1)) {
        let mut num = 0.0;
        let mut den = 0.0;
        for t in m + 1..n {
            num += f[t] * b[t - 1];
            den += f[t] * f[t] + b[t - 1] * b[t - 1];
        }
        let k = if den > 0.0 { -2.0 * num / den } else { 0.0 };
        for t in (m + 1..n).rev() {
            let (ft, bt) = (f[t], b[t - 1]);
            f[t] = ft + k * bt;
            b[t] = bt + k * ft;
        }
        c.push(0.0);
        let prev = c.clone();
        for i in 1..=m + 1 {
            c[i] = prev[i] + k * prev[m + 1 - i];
        }
    }
    c.resize(order + 1, 0.0);
    c[1..].iter().map(|v| -v).collect()
}

/// Yule-Walker (biased autocorrelation, Levinson-Durbin) estimate in the same
/// prediction form as [`burg`].
pub fn yule_walker(x: &[f64], order: usize) -> Vec<f64> {
    let n = x.len();
    let r: Vec<f64> = (0..=order)
        .map(|lag| {
            (lag..n).map(|t| x[t] * x[t - lag]).sum::<f64>() / n as f64
        })
        .collect();
    let mut a = vec![0.0; order];
    if r[0] <= 0.0 {
        return a;
    }
    let mut err = r[0];
    for m in 0..order {
        let acc: f64 = (0..m).map(|i| a[i] * r[m - i]).sum();
        let k = (r[m + 1] - acc) / err;
        let prev = a.clone();
        a[m] = k;
        for i in 0..m {
            a[i] = prev[i] - k * prev[m - 1 - i];
        }
        err *= 1.0 - k * k;
        if err <= 0.0 {
            break;
        }
    }
    a
}

/// Feature vector of one window with the window's labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    /// Per channel in grid order: MAV, ZC, WL, RMS, SSC, AR1..AR4.
    pub values: Vec<f64>,
    pub gesture_id: u32,
    pub subject_id: u32,
    pub repetition_id: u32,
}

/// Nine features per channel using Burg's method for the AR part.
pub fn extract_features(
    window: &WindowTensor,
    zc_threshold: f64,
    ssc_threshold: f64,
) -> Result<FeatureVector> {
    extract_features_with(window, zc_threshold, ssc_threshold, ArMethod::Burg)
}

pub fn extract_features_with(
    window: &WindowTensor,
    zc_threshold: f64,
    ssc_threshold: f64,
    ar_method: ArMethod,
) -> Result<FeatureVector> {
    let len = window.window_size();
    if len < AR_ORDER + 1 {
        return Err(Error::TooShort {
            len,
            min: AR_ORDER + 1,
        });
    }
    for (name, v) in [("zc_threshold", zc_threshold), ("ssc_threshold", ssc_threshold)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Parameter(format!("{name} must be non-negative, got {v}")));
        }
    }
    let mut values = Vec::with_capacity(window.num_channels() * FEATURES_PER_CHANNEL);
    for c in 0..window.num_channels() {
        let x = window.channel(c);
        values.extend([
            mav(&x),
            zero_crossings(&x, zc_threshold) as f64,
            waveform_length(&x),
            rms(&x),
            slope_sign_changes(&x, ssc_threshold) as f64,
        ]);
        values.extend(match ar_method {
            ArMethod::Burg => burg(&x, AR_ORDER),
            ArMethod::YuleWalker => yule_walker(&x, AR_ORDER),
        });
    }
    Ok(FeatureVector {
        values,
        gesture_id: window.gesture_id,
        subject_id: window.subject_id,
        repetition_id: window.repetition_id,
    })
}

/// CSV header naming every column, e.g. `ch0_mav`.
pub fn feature_header(num_channels: usize) -> Vec<String> {
    (0..num_channels)
        .flat_map(|c| FEATURE_NAMES.iter().map(move |n| format!("ch{c}_{n}")))
        .collect()
}
