//! Run reports: per-fold accuracies averaged over subjects, timings,
//! parameter audits, and their CSV mirrors.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::{mean, sample_std, FoldReport};
use crate::vit::ParameterAudit;

/// Cross-validation result of one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub subject: u32,
    pub per_fold: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub preprocess_s: f64,
    pub train_s: f64,
    pub folds_fingerprint: String,
}

impl SubjectResult {
    pub fn new(subject: u32, report: &FoldReport, preprocess_s: f64) -> Self {
        Self {
            subject,
            per_fold: report.fold_accuracies.clone(),
            mean: report.mean_accuracy,
            std: report.std,
            preprocess_s: preprocess_s + report.preprocess_seconds,
            train_s: report.train_seconds,
            folds_fingerprint: report.folds_fingerprint.clone(),
        }
    }
}

/// One method's results: fold `k` is the mean over subjects of their fold
/// `k` accuracy; `std` is the sample standard deviation over folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub model_id: Option<String>,
    pub per_fold: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub param_count: usize,
    pub preprocess_s: f64,
    pub train_s: f64,
    pub subjects: Vec<SubjectResult>,
}

impl MethodSummary {
    pub fn aggregate(
        method: &str,
        model_id: Option<String>,
        param_count: usize,
        subjects: Vec<SubjectResult>,
    ) -> Result<Self> {
        let folds = subjects
            .first()
            .map(|s| s.per_fold.len())
            .ok_or_else(|| Error::EmptyResult("no subjects to summarize".into()))?;
        if subjects.iter().any(|s| s.per_fold.len() != folds) {
            return Err(Error::Contract("subjects report different fold counts".into()));
        }
        let per_fold: Vec<f64> = (0..folds)
            .map(|k| subjects.iter().map(|s| s.per_fold[k]).sum::<f64>() / subjects.len() as f64)
            .collect();
        Ok(Self {
            method: method.into(),
            model_id,
            mean: mean(&per_fold),
            std: sample_std(&per_fold),
            per_fold,
            param_count,
            preprocess_s: subjects.iter().map(|s| s.preprocess_s).sum(),
            train_s: subjects.iter().map(|s| s.train_s).sum(),
            subjects,
        })
    }
}

/// Contents of `report.json` written by `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model_id: String,
    pub per_fold: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub param_count: usize,
    pub preprocess_s: f64,
    pub train_s: f64,
    pub subjects: Vec<SubjectResult>,
    /// Our parameter counts for every preset next to the published ones.
    pub parameter_audit: Vec<ParameterAudit>,
}

impl TrainReport {
    pub fn new(summary: MethodSummary, parameter_audit: Vec<ParameterAudit>) -> Self {
        Self {
            model_id: summary.model_id.unwrap_or_default(),
            per_fold: summary.per_fold,
            mean: summary.mean,
            std: summary.std,
            param_count: summary.param_count,
            preprocess_s: summary.preprocess_s,
            train_s: summary.train_s,
            subjects: summary.subjects,
            parameter_audit,
        }
    }
}

/// Contents of `compare.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub vit: MethodSummary,
    pub lda: MethodSummary,
    /// Both methods saw the same folds for every subject.
    pub folds_identical: bool,
    /// `vit.mean − lda.mean`.
    pub mean_difference: f64,
}

impl CompareReport {
    pub fn new(vit: MethodSummary, lda: MethodSummary) -> Self {
        let folds_identical = vit.subjects.len() == lda.subjects.len()
            && vit
                .subjects
                .iter()
                .zip(&lda.subjects)
                .all(|(a, b)| a.subject == b.subject && a.folds_fingerprint == b.folds_fingerprint);
        Self {
            mean_difference: vit.mean - lda.mean,
            folds_identical,
            vit,
            lda,
        }
    }
}

fn fold_header(folds: usize) -> String {
    (1..=folds).map(|k| format!("f{k}")).collect::<Vec<_>>().join(",")
}

/// Table-style CSV: one row per method with fold accuracies, mean, std,
/// parameter count and timings.
pub fn summary_csv(methods: &[&MethodSummary]) -> String {
    let folds = methods.first().map_or(0, |m| m.per_fold.len());
    let mut out = format!(
        "method,model_id,{},mean,std,param_count,preprocess_s,train_s\n",
        fold_header(folds)
    );
    for m in methods {
        let folds: Vec<String> = m.per_fold.iter().map(f64::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.method,
            m.model_id.as_deref().unwrap_or(""),
            folds.join(","),
            m.mean,
            m.std,
            m.param_count,
            m.preprocess_s,
            m.train_s
        );
    }
    out
}

/// Per-subject mean accuracy, one row per subject, one column per method.
pub fn boxplot_csv(methods: &[&MethodSummary]) -> Result<String> {
    let first = methods
        .first()
        .ok_or_else(|| Error::EmptyResult("no methods".into()))?;
    let mut out = String::from("subject");
    for m in methods {
        let _ = write!(out, ",{}", m.method);
    }
    out.push('\n');
    for (i, s) in first.subjects.iter().enumerate() {
        let _ = write!(out, "{}", s.subject);
        for m in methods {
            let row = m.subjects.get(i).filter(|r| r.subject == s.subject).ok_or_else(|| {
                Error::Contract(format!("method {} lacks subject {}", m.method, s.subject))
            })?;
            let _ = write!(out, ",{}", row.mean);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parameter audit as CSV rows.
pub fn audit_csv(audit: &[ParameterAudit]) -> String {
    let mut out = String::from("model_id,count,count_without_qkv_bias,published,delta,ratio\n");
    for a in audit {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            a.model_id, a.count, a.count_without_qkv_bias, a.published, a.delta, a.ratio
        );
    }
    out
}

/// Plain-text table of methods for terminals.
pub fn render_table(methods: &[&MethodSummary]) -> String {
    let folds = methods.first().map_or(0, |m| m.per_fold.len());
    let mut out = format!("{:<10}", "method");
    for k in 1..=folds {
        let _ = write!(out, "{:>8}", format!("F{k}"));
    }
    let _ = writeln!(out, "{:>8}{:>8}{:>10}{:>10}", "Avg", "STD", "#Params", "time_s");
    for m in methods {
        let label = match &m.model_id {
            Some(id) => format!("{} {id}", m.method),
            None => m.method.clone(),
        };
        let _ = write!(out, "{label:<10}");
        for a in &m.per_fold {
            let _ = write!(out, "{:>8.2}", 100.0 * a);
        }
        let _ = writeln!(
            out,
            "{:>8.2}{:>8.2}{:>10}{:>10.1}",
            100.0 * m.mean,
            100.0 * m.std,
            m.param_count,
            m.preprocess_s + m.train_s
        );
    }
    out
}
