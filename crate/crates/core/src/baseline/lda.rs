//! Linear discriminant analysis with a shrunk pooled covariance.

use std::collections::BTreeMap;

use super::FeatureVector;
use crate::error::{Error, Result};

/// Pivots below this fraction of the largest diagonal entry count as singular.
const PIVOT_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct LdaModel {
    /// Sorted class ids; row `k` of every per-class table belongs to `classes[k]`.
    pub classes: Vec<u32>,
    pub class_means: Vec<Vec<f64>>,
    /// Row-major `dim × dim` inverse of the regularized pooled covariance.
    pub shared_covariance_inverse: Vec<f64>,
    pub priors: Vec<f64>,
    pub shrinkage: f64,
    /// `Σ⁻¹μ_k`.
    weights: Vec<Vec<f64>>,
    /// `−½μ_kᵀΣ⁻¹μ_k + ln π_k`.
    offsets: Vec<f64>,
}

impl LdaModel {
    pub fn dim(&self) -> usize {
        self.class_means.first().map_or(0, Vec::len)
    }
}

/// Lower-triangular `L` with `A = L·Lᵀ`, rejecting pivots that are tiny
/// relative to the diagonal.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > PIVOT_TOLERANCE * scale) {
            return Err(Error::IllConditioned(format!(
                "pivot {j} is {d:e} against a diagonal scale of {scale:e}"
            )));
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L·Lᵀ·x = b` in place.
fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Fits class means, empirical priors and the pooled within-class covariance
/// regularized as `(1−s)Σ + s·(tr Σ/dim)·I`. A zero-trace covariance is
/// shrunk towards the identity instead.
pub fn lda_fit(features: &[FeatureVector], shrinkage: f64) -> Result<LdaModel> {
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::Parameter(format!("shrinkage {shrinkage} outside [0, 1]")));
    }
    let dim = features.first().map_or(0, |f| f.values.len());
    if dim == 0 {
        return Err(Error::DegenerateInput("no features to fit".into()));
    }
    if let Some(f) = features.iter().find(|f| f.values.len() != dim) {
        return Err(Error::Shape(format!(
            "feature of length {} among length {dim}",
            f.values.len()
        )));
    }
    let mut groups: BTreeMap<u32, Vec<&FeatureVector>> = BTreeMap::new();
    for f in features {
        groups.entry(f.gesture_id).or_default().push(f);
    }
    if groups.len() < 2 || groups.values().any(|g| g.len() < 2) {
        return Err(Error::DegenerateInput(
            "need at least 2 classes with at least 2 samples each".into(),
        ));
    }
    let n = features.len();
    let classes: Vec<u32> = groups.keys().copied().collect();
    let mut class_means = Vec::with_capacity(classes.len());
    let mut priors = Vec::with_capacity(classes.len());
    let mut cov = vec![0.0; dim * dim];
    let mut centered = vec![0.0; dim];
    for members in groups.values() {
        let mut mean = vec![0.0; dim];
        for f in members {
            mean.iter_mut().zip(&f.values).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= members.len() as f64);
        for f in members {
            centered
                .iter_mut()
                .zip(f.values.iter().zip(&mean))
                .for_each(|(c, (v, m))| *c = v - m);
            for i in 0..dim {
                let ci = centered[i];
                if ci == 0.0 {
                    continue;
                }
                let row = &mut cov[i * dim..(i + 1) * dim];
                for j in 0..=i {
                    row[j] += ci * centered[j];
                }
            }
        }
        priors.push(members.len() as f64 / n as f64);
        class_means.push(mean);
    }
    let dof = (n - classes.len()) as f64;
    for i in 0..dim {
        for j in 0..=i {
            let v = cov[i * dim + j] / dof;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    let trace: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();
    let target = if trace > 0.0 { trace / dim as f64 } else { 1.0 };
    for (idx, v) in cov.iter_mut().enumerate() {
        *v *= 1.0 - shrinkage;
        if idx % (dim + 1) == 0 {
            *v += shrinkage * target;
        }
    }
    let l = cholesky(&cov, dim)?;
    let mut inverse = vec![0.0; dim * dim];
    let mut column = vec![0.0; dim];
    for j in 0..dim {
        column.iter_mut().enumerate().for_each(|(i, c)| *c = f64::from(u8::from(i == j)));
        cholesky_solve(&l, dim, &mut column);
        for i in 0..dim {
            inverse[i * dim + j] = column[i];
        }
    }
    let mut weights = Vec::with_capacity(classes.len());
    let mut offsets = Vec::with_capacity(classes.len());
    for (mean, prior) in class_means.iter().zip(&priors) {
        let mut w = mean.clone();
        cholesky_solve(&l, dim, &mut w);
        let quad: f64 = w.iter().zip(mean).map(|(a, b)| a * b).sum();
        offsets.push(-0.5 * quad + prior.ln());
        weights.push(w);
    }
    Ok(LdaModel {
        classes,
        class_means,
        shared_covariance_inverse: inverse,
        priors,
        shrinkage,
        weights,
        offsets,
    })
}

/// Discriminant `δ_k(x) = xᵀΣ⁻¹μ_k − ½μ_kᵀΣ⁻¹μ_k + ln π_k` for every class.
pub fn lda_scores(model: &LdaModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.dim() {
        return Err(Error::Shape(format!(
            "feature of length {}, model expects {}",
            x.len(),
            model.dim()
        )));
    }
    Ok(model
        .weights
        .iter()
        .zip(&model.offsets)
        .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
        .collect())
}

/// Relative gap under which two discriminants count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// Class id with the largest discriminant. Scores within a relative
/// [`TIE_TOLERANCE`] of each other are tied, and the lowest id wins ties.
pub fn lda_predict(model: &LdaModel, feature: &FeatureVector) -> Result<u32> {
    let scores = lda_scores(model, &feature.values)?;
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        let margin = TIE_TOLERANCE * s.abs().max(scores[best].abs()).max(1.0);
        if s > scores[best] + margin {
            best = k;
        }
    }
    Ok(model.classes[best])
}
