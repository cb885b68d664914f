//! Adam optimization, repetition-wise cross-validation and fold metrics.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::segment::WindowTensor;
use crate::tensor::{Tape, Tensor, Var};
use crate::vit::{self, parameter_count, VitConfig, VitParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// `θ ← θ − lr·wd·θ` applied next to the Adam update (AdamW).
    #[default]
    Decoupled,
    /// `g ← g + wd·θ` before the moment updates (L2 penalty).
    Coupled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub weight_decay_mode: DecayMode,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            learning_rate: 1e-4,
            weight_decay: 1e-3,
            weight_decay_mode: DecayMode::Decoupled,
            eps: 1e-8,
            batch_size: 128,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.eps > 0.0
            && self.batch_size >= 1
            && self.epochs >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config: {self:?}")))
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<I: IntoIterator<Item = usize>>(lengths: I) -> Self {
        let m: Vec<Vec<f64>> = lengths.into_iter().map(|n| vec![0.0; n]).collect();
        Self { v: m.clone(), m }
    }

    pub fn for_params(params: &VitParams) -> Self {
        Self::new(params.entries().iter().map(|(_, t, _)| t.len()))
    }
}

/// One Adam update at step `t` (1-based) with bias correction.
///
/// `decay[i]` marks tensors that receive weight decay.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[Vec<f64>],
    decay: &[bool],
    state: &mut AdamState,
    config: &TrainConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Contract("Adam step counter starts at 1".into()));
    }
    let n = params.len();
    if grads.len() != n || decay.len() != n || state.m.len() != n {
        return Err(Error::Contract(format!(
            "{n} parameter tensors, {} gradients, {} decay flags, {} moment buffers",
            grads.len(),
            decay.len(),
            state.m.len()
        )));
    }
    let TrainConfig {
        beta1,
        beta2,
        learning_rate: lr,
        weight_decay: wd,
        eps,
        ..
    } = *config;
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..n {
        let (p, g) = (&mut *params[i], &grads[i]);
        if p.len() != g.len() || state.m[i].len() != p.len() {
            return Err(Error::Contract(format!(
                "tensor {i}: {} values, {} gradients, {} moments",
                p.len(),
                g.len(),
                state.m[i].len()
            )));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let decayed = decay[i] && wd > 0.0;
        for j in 0..p.len() {
            let mut gj = g[j];
            if decayed && config.weight_decay_mode == DecayMode::Coupled {
                gj += wd * p[j];
            }
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            if decayed && config.weight_decay_mode == DecayMode::Decoupled {
                p[j] -= lr * wd * p[j];
            }
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Cross-entropy of a logits vector against an integer label.
pub fn cross_entropy(tape: &mut Tape, logits: Var, label: usize) -> Result<Var> {
    tape.cross_entropy(logits, label)
}

/// Train/test index split holding out one repetition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test_repetition: u32,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fold `k` tests on repetition `k` and trains on every other repetition.
pub fn make_folds(windows: &[WindowTensor], num_repetitions: u32) -> Result<Vec<Fold>> {
    if num_repetitions < 2 {
        return Err(Error::Protocol(format!(
            "cross-validation needs at least 2 repetitions, got {num_repetitions}"
        )));
    }
    let mut folds: Vec<Fold> = (0..num_repetitions)
        .map(|r| Fold {
            test_repetition: r,
            train: Vec::new(),
            test: Vec::new(),
        })
        .collect();
    for (i, w) in windows.iter().enumerate() {
        if w.repetition_id >= num_repetitions {
            return Err(Error::Protocol(format!(
                "window {i} has repetition {} outside [0, {num_repetitions})",
                w.repetition_id
            )));
        }
        for fold in &mut folds {
            if fold.test_repetition == w.repetition_id {
                fold.test.push(i);
            } else {
                fold.train.push(i);
            }
        }
    }
    if let Some(f) = folds.iter().find(|f| f.test.is_empty()) {
        return Err(Error::Protocol(format!(
            "repetition {} has no windows",
            f.test_repetition
        )));
    }
    Ok(folds)
}

/// Verifies test sets are disjoint, cover `0..n`, and never share a repetition
/// with their training set.
pub fn check_partition(folds: &[Fold], windows: &[WindowTensor]) -> Result<()> {
    let mut seen = vec![false; windows.len()];
    for fold in folds {
        for &i in &fold.test {
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Protocol(format!("window {i} is tested twice")));
            }
            if windows[i].repetition_id != fold.test_repetition {
                return Err(Error::Protocol(format!("window {i} tested in the wrong fold")));
            }
        }
        if fold
            .train
            .iter()
            .any(|&i| windows[i].repetition_id == fold.test_repetition)
        {
            return Err(Error::Protocol(format!(
                "fold {} trains on its test repetition",
                fold.test_repetition
            )));
        }
        if fold.train.len() + fold.test.len() != windows.len() {
            return Err(Error::Protocol(format!(
                "fold {} does not account for every window",
                fold.test_repetition
            )));
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Protocol(format!("window {i} is never tested")));
    }
    Ok(())
}

/// SHA-256 over every fold's train and test indices.
pub fn folds_fingerprint(folds: &[Fold]) -> String {
    let mut h = Sha256::new();
    for f in folds {
        h.update(f.test_repetition.to_le_bytes());
        for part in [&f.train, &f.test] {
            h.update((part.len() as u64).to_le_bytes());
            for &i in part {
                h.update((i as u64).to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (divisor `n − 1`); zero for fewer than 2 values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Sample standard deviation over folds.
    pub std: f64,
    pub parameter_count: usize,
    pub preprocess_seconds: f64,
    pub train_seconds: f64,
    /// Mean training loss of every epoch, per fold.
    pub epoch_losses: Vec<Vec<f64>>,
    pub folds_fingerprint: String,
}

impl FoldReport {
    pub fn from_accuracies(fold_accuracies: Vec<f64>) -> Self {
        Self {
            mean_accuracy: mean(&fold_accuracies),
            std: sample_std(&fold_accuracies),
            fold_accuracies,
            parameter_count: 0,
            preprocess_seconds: 0.0,
            train_seconds: 0.0,
            epoch_losses: Vec::new(),
            folds_fingerprint: String::new(),
        }
    }

    /// Equality of everything except wall-clock timings, compared bitwise.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        bits(&self.fold_accuracies) == bits(&other.fold_accuracies)
            && self.mean_accuracy.to_bits() == other.mean_accuracy.to_bits()
            && self.std.to_bits() == other.std.to_bits()
            && self.parameter_count == other.parameter_count
            && self.epoch_losses.len() == other.epoch_losses.len()
            && self
                .epoch_losses
                .iter()
                .zip(&other.epoch_losses)
                .all(|(a, b)| bits(a) == bits(b))
            && self.folds_fingerprint == other.folds_fingerprint
    }
}

/// Patch matrix of a window, ready to place on a tape.
pub fn patch_matrix(window: &WindowTensor, config: &VitConfig) -> Result<Tensor> {
    config.check_window(window.shape())?;
    let seq = config.geometry().patchify(window)?;
    Tensor::new(vec![seq.num_patches(), seq.patch_dim()], seq.into_data())
}

/// Summed loss and summed parameter gradients over a batch.
fn batch_gradients(
    params: &VitParams,
    samples: &[(&Tensor, usize)],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut total_loss = 0.0;
    let mut total: Option<Vec<Vec<f64>>> = None;
    for &(patches, label) in samples {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let x = tape.constant(patches.clone());
        let logits = vit::forward(&mut tape, x, &bound, params.config())?;
        let loss = cross_entropy(&mut tape, logits, label)?;
        tape.backward(loss)?;
        total_loss += tape.value(loss).data()[0];
        let grads = bound.gradients(&tape);
        match &mut total {
            None => total = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(grads) {
                    a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    let grads = total.ok_or_else(|| Error::Contract("empty batch".into()))?;
    Ok((total_loss, grads))
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over the three inputs
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Visiting order of `num_samples` training samples in one epoch: a seeded
/// permutation, cut into consecutive batches by the caller.
pub fn epoch_order(num_samples: usize, seed: u64, stream: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..num_samples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, stream, epoch)));
    order
}

/// Result of training one model.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: VitParams,
    pub epoch_losses: Vec<f64>,
}

/// Trains a freshly initialized model. `stream` separates shuffling streams
/// of independent runs sharing one seed (for example CV folds).
pub fn train_model(
    windows: &[&WindowTensor],
    config: &VitConfig,
    train: &TrainConfig,
    stream: u64,
) -> Result<TrainedModel> {
    train_model_observed(windows, config, train, stream, |_, _, _| Ok(false))
}

/// [`train_model`] that calls `observe(epoch, params, mean_loss)` after every
/// epoch and stops early once it returns `true`.
pub fn train_model_observed(
    windows: &[&WindowTensor],
    config: &VitConfig,
    train: &TrainConfig,
    stream: u64,
    mut observe: impl FnMut(usize, &VitParams, f64) -> Result<bool>,
) -> Result<TrainedModel> {
    train.validate()?;
    if windows.is_empty() {
        return Err(Error::EmptyResult("no training windows".into()));
    }
    let samples: Vec<(Tensor, usize)> = windows
        .iter()
        .map(|w| {
            let label = w.gesture_id as usize;
            if label >= config.num_classes {
                return Err(Error::Contract(format!(
                    "label {label} outside [0, {})",
                    config.num_classes
                )));
            }
            Ok((patch_matrix(w, config)?, label))
        })
        .collect::<Result<_>>()?;
    let mut params = VitParams::init(config, train.seed)?;
    let decay: Vec<bool> = params.entries().iter().map(|e| e.2).collect();
    let mut state = AdamState::for_params(&params);
    let mut epoch_losses = Vec::with_capacity(train.epochs);
    let mut step = 0u64;
    for epoch in 0..train.epochs {
        let order = epoch_order(samples.len(), train.seed, stream, epoch as u64);
        let mut loss_sum = 0.0;
        for batch in order.chunks(train.batch_size) {
            let refs: Vec<(&Tensor, usize)> = batch.iter().map(|&i| (&samples[i].0, samples[i].1)).collect();
            let (loss, mut grads) = batch_gradients(&params, &refs)?;
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            loss_sum += loss;
            step += 1;
            let mut tensors: Vec<&mut [f64]> = params
                .tensors_mut()
                .into_iter()
                .map(|t| t.data_mut())
                .collect();
            adam_step(&mut tensors, &grads, &decay, &mut state, train, step)?;
        }
        let mean_loss = loss_sum / samples.len() as f64;
        epoch_losses.push(mean_loss);
        if observe(epoch, &params, mean_loss)? {
            break;
        }
    }
    Ok(TrainedModel {
        params,
        epoch_losses,
    })
}

/// Fraction of windows whose argmax prediction equals the label.
pub fn accuracy(params: &VitParams, windows: &[&WindowTensor]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::EmptyResult("no windows to evaluate".into()));
    }
    let mut correct = 0usize;
    for w in windows {
        if vit::predict(w, params)? == w.gesture_id as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / windows.len() as f64)
}

/// Every fold's report plus its trained model.
#[derive(Clone, Debug)]
pub struct CvRun {
    pub report: FoldReport,
    pub models: Vec<VitParams>,
}

fn run_fold(
    windows: &[WindowTensor],
    fold: &Fold,
    config: &VitConfig,
    train: &TrainConfig,
) -> Result<(f64, TrainedModel)> {
    let train_set: Vec<&WindowTensor> = fold.train.iter().map(|&i| &windows[i]).collect();
    let test_set: Vec<&WindowTensor> = fold.test.iter().map(|&i| &windows[i]).collect();
    let model = train_model(&train_set, config, train, u64::from(fold.test_repetition))?;
    let acc = accuracy(&model.params, &test_set)?;
    Ok((acc, model))
}

/// Repetition-wise cross-validation of the transformer. Folds run on up to
/// `jobs` threads; results do not depend on `jobs`.
pub fn run_cv_detailed(
    windows: &[WindowTensor],
    num_repetitions: u32,
    config: &VitConfig,
    train: &TrainConfig,
    jobs: usize,
) -> Result<CvRun> {
    config.validate()?;
    train.validate()?;
    let folds = make_folds(windows, num_repetitions)?;
    check_partition(&folds, windows)?;
    let start = Instant::now();
    let results: Vec<Result<(f64, TrainedModel)>> = if jobs <= 1 {
        folds
            .iter()
            .map(|f| run_fold(windows, f, config, train))
            .collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            folds
                .par_iter()
                .map(|f| run_fold(windows, f, config, train))
                .collect()
        })
    };
    let train_seconds = start.elapsed().as_secs_f64();
    let mut accuracies = Vec::with_capacity(folds.len());
    let mut losses = Vec::with_capacity(folds.len());
    let mut models = Vec::with_capacity(folds.len());
    for r in results {
        let (acc, model) = r?;
        accuracies.push(acc);
        losses.push(model.epoch_losses);
        models.push(model.params);
    }
    let mut report = FoldReport::from_accuracies(accuracies);
    report.parameter_count = parameter_count(config);
    report.train_seconds = train_seconds;
    report.epoch_losses = losses;
    report.folds_fingerprint = folds_fingerprint(&folds);
    Ok(CvRun { report, models })
}

pub fn run_cv(
    windows: &[WindowTensor],
    num_repetitions: u32,
    config: &VitConfig,
    train: &TrainConfig,
) -> Result<FoldReport> {
    run_cv_detailed(windows, num_repetitions, config, train, 1).map(|r| r.report)
}

/// Random permutation of the label vector across windows (chance-level control).
pub fn permute_labels(windows: &[WindowTensor], seed: u64) -> Vec<WindowTensor> {
    let mut labels: Vec<u32> = windows.iter().map(|w| w.gesture_id).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    windows
        .iter()
        .zip(labels)
        .map(|(w, l)| w.relabeled(l))
        .collect()
}
