//! Envelope extraction for raw multi-channel sEMG.
//!
//! The chain is rectify → first-order Butterworth low-pass → global peak
//! scaling → μ-law companding. Every stage treats channels independently
//! except [`scale_to_unit`], which divides all channels by one shared peak.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw or processed recording, stored sample-major (`samples[i * channels + c]`).
#[derive(Clone, Debug, PartialEq)]
pub struct EmgRecording {
    samples: Vec<f64>,
    num_channels: usize,
    sample_rate_hz: f64,
    pub subject_id: u32,
    pub gesture_id: u32,
    pub repetition_id: u32,
}

impl EmgRecording {
    pub fn new(
        samples: Vec<f64>,
        num_channels: usize,
        sample_rate_hz: f64,
        subject_id: u32,
        gesture_id: u32,
        repetition_id: u32,
    ) -> Result<Self> {
        if num_channels == 0 {
            return Err(Error::Shape("recording needs at least one channel".into()));
        }
        if samples.is_empty() || !samples.len().is_multiple_of(num_channels) {
            return Err(Error::Shape(format!(
                "{} values do not form whole rows of {num_channels} channels",
                samples.len()
            )));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Parameter(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "non-finite sample at sample {}, channel {}",
                i / num_channels,
                i % num_channels
            )));
        }
        Ok(Self {
            samples,
            num_channels,
            sample_rate_hz,
            subject_id,
            gesture_id,
            repetition_id,
        })
    }

    /// Builds a recording from per-channel series of equal length.
    pub fn from_channels(
        channels: &[Vec<f64>],
        sample_rate_hz: f64,
        subject_id: u32,
        gesture_id: u32,
        repetition_id: u32,
    ) -> Result<Self> {
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::Shape("channels differ in length".into()));
        }
        let mut samples = Vec::with_capacity(len * channels.len());
        for i in 0..len {
            samples.extend(channels.iter().map(|c| c[i]));
        }
        Self::new(
            samples,
            channels.len(),
            sample_rate_hz,
            subject_id,
            gesture_id,
            repetition_id,
        )
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len() / self.num_channels
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample(&self, i: usize, channel: usize) -> f64 {
        self.samples[i * self.num_channels + channel]
    }

    pub fn channel(&self, channel: usize) -> Vec<f64> {
        self.samples
            .iter()
            .skip(channel)
            .step_by(self.num_channels)
            .copied()
            .collect()
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            samples: Vec::new(),
            num_channels: self.num_channels,
            sample_rate_hz: self.sample_rate_hz,
            subject_id: self.subject_id,
            gesture_id: self.gesture_id,
            repetition_id: self.repetition_id,
        }
    }

    fn map_channels(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        let n = self.num_samples();
        let mut out = vec![0.0; self.samples.len()];
        for c in 0..self.num_channels {
            let filtered = f(&self.channel(c));
            debug_assert_eq!(filtered.len(), n);
            for (i, v) in filtered.into_iter().enumerate() {
                out[i * self.num_channels + c] = v;
            }
        }
        self.with_samples(out)
    }
}

/// First-order low-pass Butterworth design.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub cutoff_hz: f64,
}

impl FilterSpec {
    pub const ORDER: usize = 1;

    pub fn new(cutoff_hz: f64) -> Self {
        Self { cutoff_hz }
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let nyquist = sample_rate_hz / 2.0;
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist) {
            return Err(Error::InvalidFilter(format!(
                "cutoff {} Hz must lie in (0, {nyquist}) for {sample_rate_hz} Hz sampling",
                self.cutoff_hz
            )));
        }
        Ok(())
    }

    /// Difference-equation coefficients `(b0, b1, a1)` of
    /// `y[n] = b0·x[n] + b1·x[n-1] - a1·y[n-1]`, from the bilinear transform
    /// of `1 / (1 + s/ωc)` with the cutoff prewarped.
    pub fn coefficients(&self, sample_rate_hz: f64) -> Result<(f64, f64, f64)> {
        self.validate(sample_rate_hz)?;
        let k = (std::f64::consts::PI * self.cutoff_hz / sample_rate_hz).tan();
        let b = k / (1.0 + k);
        Ok((b, b, (k - 1.0) / (k + 1.0)))
    }
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self { cutoff_hz: 1.0 }
    }
}

pub fn rectify(recording: &EmgRecording) -> EmgRecording {
    recording.with_samples(recording.samples.iter().map(|v| v.abs()).collect())
}

/// Filters every channel independently from a zero initial state.
pub fn butterworth_lowpass(recording: &EmgRecording, spec: &FilterSpec) -> Result<EmgRecording> {
    let (b0, b1, a1) = spec.coefficients(recording.sample_rate_hz)?;
    Ok(recording.map_channels(|x| {
        let (mut x_prev, mut y_prev) = (0.0, 0.0);
        x.iter()
            .map(|&xn| {
                let y = b0 * xn + b1 * x_prev - a1 * y_prev;
                x_prev = xn;
                y_prev = y;
                y
            })
            .collect()
    }))
}

/// μ-law companding of a single value in `[-1, 1]`.
pub fn mu_law(x: f64, mu: f64) -> f64 {
    x.signum() * (mu * x.abs()).ln_1p() / mu.ln_1p()
}

pub fn mu_law_normalize(recording: &EmgRecording, mu: f64) -> Result<EmgRecording> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Parameter(format!("mu must be positive, got {mu}")));
    }
    let channels = recording.num_channels;
    let mut out = Vec::with_capacity(recording.samples.len());
    for (i, &x) in recording.samples.iter().enumerate() {
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::Domain {
                sample: i / channels,
                channel: i % channels,
                value: x,
            });
        }
        // signum(0.0) is 1.0 in Rust; ln(1) keeps the result at zero anyway.
        out.push(mu_law(x, mu));
    }
    Ok(recording.with_samples(out))
}

/// Divides the whole recording by its largest absolute sample.
pub fn scale_to_unit(recording: &EmgRecording) -> Result<EmgRecording> {
    let peak = recording.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::DegenerateInput("recording is all zeros".into()));
    }
    Ok(recording.with_samples(recording.samples.iter().map(|v| v / peak).collect()))
}

pub fn preprocess(recording: &EmgRecording, spec: &FilterSpec, mu: f64) -> Result<EmgRecording> {
    let envelope = butterworth_lowpass(&rectify(recording), spec)?;
    mu_law_normalize(&scale_to_unit(&envelope)?, mu)
}

/// Signal-stage settings as they appear in run configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub cutoff_hz: f64,
    pub mu: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: 1.0,
            mu: 255.0,
        }
    }
}

impl SignalConfig {
    pub fn filter(&self) -> FilterSpec {
        FilterSpec::new(self.cutoff_hz)
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        self.filter().validate(sample_rate_hz)?;
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::Config(format!("mu must be positive, got {}", self.mu)));
        }
        Ok(())
    }

    pub fn apply(&self, recording: &EmgRecording) -> Result<EmgRecording> {
        preprocess(recording, &self.filter(), self.mu)
    }
}
