//! Seeded synthetic HD-sEMG with gesture-specific spatial activation maps.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Geometry};
use crate::error::{Error, Result};
use crate::signal::EmgRecording;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_subjects: u32,
    pub num_gestures: u32,
    pub num_repetitions: u32,
    pub duration_s: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Peak height of each gesture's activation bump over a unit baseline.
    pub separation: f64,
    pub sample_rate_hz: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_subjects: 1,
            num_gestures: 4,
            num_repetitions: 5,
            duration_s: 0.25,
            noise_sigma: 0.05,
            seed: 0,
            separation: 5.0,
            sample_rate_hz: 2048.0,
            grid_rows: 8,
            grid_cols: 8,
        }
    }
}

/// Width (in electrodes) of the activation bump.
const BUMP_WIDTH: f64 = 1.5;
/// Standard deviation of the per-repetition bump displacement.
const CENTER_JITTER: f64 = 0.25;
const GAIN_JITTER: f64 = 0.05;

impl SyntheticSpec {
    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    pub fn validate(&self, window_size: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_subjects == 0 || self.num_gestures == 0 || self.num_repetitions == 0 {
            return fail("subjects, gestures and repetitions must be at least 1".into());
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return fail("grid dimensions must be positive".into());
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return fail(format!("sample rate {} is not positive", self.sample_rate_hz));
        }
        if !(self.duration_s.is_finite() && self.num_samples() >= window_size.max(1)) {
            return fail(format!(
                "{} s at {} Hz is shorter than a {window_size}-sample window",
                self.duration_s, self.sample_rate_hz
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return fail(format!("noise_sigma {} must be non-negative", self.noise_sigma));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return fail(format!("separation {} must be non-negative", self.separation));
        }
        Ok(())
    }
}

/// Generates every (subject, gesture, repetition) recording.
///
/// Gesture `g` activates a Gaussian bump `1 + separation·exp(−d²/2w²)`
/// centred on its own point of a ring around the grid centre, and modulates
/// its amplitude at its own frequency with depth `0.5·s/(1+s)`. The carrier
/// is white noise; independent sensor noise is added on top. Repetitions
/// jitter the bump centre, the gain and the modulation onset.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate(1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, CENTER_JITTER).expect("valid std");
    let gain_jitter = Normal::new(1.0, GAIN_JITTER).expect("valid std");
    let (rows, cols) = (spec.grid_rows, spec.grid_cols);
    let mid = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let radius = 0.3 * rows.min(cols) as f64;
    let depth = 0.5 * spec.separation / (1.0 + spec.separation);
    let n = spec.num_samples();
    let fs = spec.sample_rate_hz;
    let mut recordings = Vec::new();
    for s in 0..spec.num_subjects {
        for g in 0..spec.num_gestures {
            let angle = TAU * f64::from(g) / f64::from(spec.num_gestures) + 0.7 * f64::from(s);
            let center = (mid.0 + radius * angle.sin(), mid.1 + radius * angle.cos());
            let freq = 2.0 + 1.5 * f64::from(g);
            for r in 0..spec.num_repetitions {
                let cy = center.0 + jitter.sample(&mut rng);
                let cx = center.1 + jitter.sample(&mut rng);
                let gain: f64 = gain_jitter.sample(&mut rng);
                let phase = TAU * rng.random::<f64>();
                let map: Vec<f64> = (0..rows * cols)
                    .map(|c| {
                        let dy = (c / cols) as f64 - cy;
                        let dx = (c % cols) as f64 - cx;
                        let bump = (-(dy * dy + dx * dx) / (2.0 * BUMP_WIDTH * BUMP_WIDTH)).exp();
                        gain * (1.0 + spec.separation * bump)
                    })
                    .collect();
                let mut samples = Vec::with_capacity(n * map.len());
                for t in 0..n {
                    let modulation = 1.0 + depth * (TAU * freq * t as f64 / fs + phase).sin();
                    for &m in &map {
                        let carrier: f64 = StandardNormal.sample(&mut rng);
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        samples.push(m * modulation * carrier + spec.noise_sigma * noise);
                    }
                }
                recordings.push(EmgRecording::new(samples, rows * cols, fs, s, g, r)?);
            }
        }
    }
    let geometry = Geometry {
        sample_rate_hz: fs,
        grid_rows: rows,
        grid_cols: cols,
    };
    Dataset::from_recordings(recordings, geometry, Vec::new())
}
