//! Classical comparison pipeline: nine features per channel and LDA.

mod features;
mod lda;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::WindowTensor;
use crate::train::{check_partition, folds_fingerprint, make_folds, FoldReport};

pub use features::{
    burg, extract_features, extract_features_with, feature_header, mav, rms, slope_sign_changes,
    waveform_length, yule_walker, zero_crossings, ArMethod, FeatureVector, AR_ORDER,
    FEATURES_PER_CHANNEL, FEATURE_NAMES,
};
pub use lda::{lda_fit, lda_predict, lda_scores, LdaModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub zc_threshold: f64,
    pub ssc_threshold: f64,
    pub shrinkage: f64,
    pub ar_method: ArMethod,
    /// Z-score every feature with training-fold statistics before fitting.
    pub standardize: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            zc_threshold: 0.0,
            ssc_threshold: 0.0,
            shrinkage: 0.05,
            ar_method: ArMethod::Burg,
            standardize: true,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zc_threshold >= 0.0 && self.ssc_threshold >= 0.0) {
            return Err(Error::Config("feature thresholds must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.shrinkage) {
            return Err(Error::Config(format!(
                "shrinkage {} outside [0, 1]",
                self.shrinkage
            )));
        }
        Ok(())
    }

    pub fn features(&self, windows: &[WindowTensor]) -> Result<Vec<FeatureVector>> {
        windows
            .iter()
            .map(|w| extract_features_with(w, self.zc_threshold, self.ssc_threshold, self.ar_method))
            .collect()
    }
}

/// Per-feature mean and standard deviation of a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Features with zero spread keep unit scale.
    pub fn fit(features: &[FeatureVector]) -> Self {
        let dim = features.first().map_or(0, |f| f.values.len());
        let n = features.len() as f64;
        let mut mean = vec![0.0; dim];
        for f in features {
            mean.iter_mut().zip(&f.values).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; dim];
        for f in features {
            for ((s, v), m) in var.iter_mut().zip(&f.values).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, feature: &mut FeatureVector) {
        for ((v, m), s) in feature.values.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

/// Repetition-wise cross-validation of LDA on the same folds the transformer
/// uses. Feature extraction time counts as preprocessing.
pub fn run_lda_cv(
    windows: &[WindowTensor],
    num_repetitions: u32,
    config: &BaselineConfig,
) -> Result<FoldReport> {
    config.validate()?;
    let folds = make_folds(windows, num_repetitions)?;
    check_partition(&folds, windows)?;
    let start = Instant::now();
    let features = config.features(windows)?;
    let preprocess_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let mut accuracies = Vec::with_capacity(folds.len());
    let mut parameter_count = 0;
    for fold in &folds {
        let mut train: Vec<FeatureVector> = fold.train.iter().map(|&i| features[i].clone()).collect();
        let scaler = config.standardize.then(|| Standardizer::fit(&train));
        if let Some(s) = &scaler {
            train.iter_mut().for_each(|f| s.apply(f));
        }
        let model = lda_fit(&train, config.shrinkage)?;
        // one linear discriminant (weights and offset) per class
        parameter_count = model.classes.len() * (model.dim() + 1);
        let mut correct = 0usize;
        for &i in &fold.test {
            let mut f = features[i].clone();
            if let Some(s) = &scaler {
                s.apply(&mut f);
            }
            if lda_predict(&model, &f)? == f.gesture_id {
                correct += 1;
            }
        }
        accuracies.push(correct as f64 / fold.test.len() as f64);
    }
    let mut report = FoldReport::from_accuracies(accuracies);
    report.parameter_count = parameter_count;
    report.preprocess_seconds = preprocess_seconds;
    report.train_seconds = start.elapsed().as_secs_f64();
    report.folds_fingerprint = folds_fingerprint(&folds);
    Ok(report)
}

/// Writes a feature matrix as CSV: label columns, then one column per feature
/// named `ch{c}_{feature}`.
pub fn write_features_csv<W: Write>(out: W, features: &[FeatureVector]) -> Result<()> {
    let dim = features.first().map_or(0, |f| f.values.len());
    if !dim.is_multiple_of(FEATURES_PER_CHANNEL) {
        return Err(Error::Shape(format!(
            "feature length {dim} is not a multiple of {FEATURES_PER_CHANNEL}"
        )));
    }
    let csv_err = |e: csv::Error| Error::Format(format!("feature csv: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subject".to_string(), "gesture".into(), "repetition".into()];
    header.extend(feature_header(dim / FEATURES_PER_CHANNEL));
    w.write_record(&header).map_err(csv_err)?;
    for f in features {
        if f.values.len() != dim {
            return Err(Error::Shape("feature vectors differ in length".into()));
        }
        let mut row = vec![
            f.subject_id.to_string(),
            f.gesture_id.to_string(),
            f.repetition_id.to_string(),
        ];
        row.extend(f.values.iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("feature csv: {e}")))
}
