//! Subcommand bodies. Everything that can be checked without computing is
//! checked before the output location is touched.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use vit_hgr::baseline::{run_lda_cv, write_features_csv};
use vit_hgr::data::{generate_synthetic, import_csv, read_dataset, write_atomic, write_dataset, CsvMapping, Dataset};
use vit_hgr::report::{
    audit_csv, boxplot_csv, render_table, summary_csv, CompareReport, MethodSummary, SubjectResult, TrainReport,
};
use vit_hgr::segment::{PatchLayout, WindowTensor};
use vit_hgr::train::{permute_labels, run_cv_detailed};
use vit_hgr::vit::{audit_presets, checkpoint, parameter_count, VitConfig};

use crate::config::RunConfig;
use crate::CliError;

const DEFAULT_RUN_DIR: &str = "vit-hgr-run";
const DEFAULT_DATASET: &str = "synthetic.emgds";
/// Geometry of the published parameter counts: 65 gestures, 64-sample
/// windows over an 8×8 grid.
const AUDIT_CLASSES: usize = 65;
const AUDIT_WINDOW: (usize, usize, usize) = (64, 8, 8);

fn usage(e: vit_hgr::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn write_file(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    write_atomic(&path, contents.as_ref())?;
    Ok(path)
}

fn to_json(value: &impl Serialize) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(value).map_err(vit_hgr::Error::from)?)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(vit_hgr::Error::Io { path: dir.into(), source: e }))
}

fn output_dir(c: &RunConfig) -> PathBuf {
    c.output.clone().unwrap_or_else(|| DEFAULT_RUN_DIR.into())
}

fn load_dataset(c: &RunConfig) -> Result<Dataset, CliError> {
    let path = c
        .data
        .as_ref()
        .ok_or_else(|| CliError::Usage("no dataset given (use --data or the data key)".into()))?;
    if !path.is_file() {
        return Err(CliError::Usage(format!("dataset {} not found", path.display())));
    }
    Ok(read_dataset(path)?)
}

/// Dataset-dependent checks shared by every command that windows the data.
struct Prepared {
    dataset: Dataset,
    subjects: Vec<u32>,
    window: (usize, usize, usize),
}

fn prepare(c: &RunConfig) -> Result<Prepared, CliError> {
    c.validate_static()?;
    let dataset = load_dataset(c)?;
    let m = &dataset.manifest;
    c.signal.validate(m.sample_rate_hz).map_err(usage)?;
    c.segment.windowing().validate(m.sample_rate_hz).map_err(usage)?;
    let subjects = m.active_subjects();
    if subjects.is_empty() {
        return Err(CliError::Usage("dataset has no active subjects".into()));
    }
    let window = (c.segment.window_size, m.grid_rows, m.grid_cols);
    Ok(Prepared { dataset, subjects, window })
}

/// Preprocessed windows of one subject and the seconds spent on them.
fn subject_windows(c: &RunConfig, ds: &Dataset, subject: u32) -> Result<(Vec<WindowTensor>, f64), CliError> {
    let start = Instant::now();
    let windows = ds.subject_windows(subject, &c.signal, &c.segment.windowing())?;
    let windows = if c.shuffle_labels {
        permute_labels(&windows, c.seed.wrapping_add(u64::from(subject)))
    } else {
        windows
    };
    Ok((windows, start.elapsed().as_secs_f64()))
}

pub fn synth(c: &RunConfig) -> Result<(), CliError> {
    let spec = &c.synthetic;
    spec.validate(c.segment.window_size).map_err(usage)?;
    let path = c.output.clone().unwrap_or_else(|| DEFAULT_DATASET.into());
    let dataset = generate_synthetic(spec)?;
    write_dataset(&path, &dataset)?;
    let m = &dataset.manifest;
    println!(
        "wrote {}: {} subjects, {} gestures, {} repetitions, {} recordings of {} samples × {} channels at {} Hz",
        path.display(),
        m.num_subjects,
        m.num_gestures,
        m.num_repetitions,
        m.recordings.len(),
        spec.num_samples(),
        m.num_channels(),
        m.sample_rate_hz
    );
    Ok(())
}

pub fn import(c: &RunConfig, dir: &Path, mapping: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(mapping)
        .map_err(|e| CliError::Usage(format!("cannot read mapping {}: {e}", mapping.display())))?;
    let mapping: CsvMapping =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("mapping {}: {e}", mapping.display())))?;
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
    }
    let path = c.output.clone().unwrap_or_else(|| "imported.emgds".into());
    let dataset = import_csv(dir, &mapping)?;
    write_dataset(&path, &dataset)?;
    println!("wrote {}: {} recordings", path.display(), dataset.recordings.len());
    Ok(())
}

#[derive(Serialize)]
struct SubjectWindows {
    subject: u32,
    windows: usize,
    preprocess_s: f64,
}

#[derive(Serialize)]
struct PreprocessSummary {
    window_shape: [usize; 3],
    num_patches: usize,
    patch_dim: usize,
    total_windows: usize,
    subjects: Vec<SubjectWindows>,
}

pub fn preprocess(c: &RunConfig) -> Result<(), CliError> {
    let p = prepare(c)?;
    let (num_patches, patch_dim) = c.segment.geometry().dims(p.window).map_err(usage)?;
    let out = output_dir(c);
    create_dir(&out)?;
    write_file(&out, "run_config.json", c.to_json())?;
    let mut features = Vec::new();
    let mut subjects = Vec::new();
    for &s in &p.subjects {
        let (windows, secs) = subject_windows(c, &p.dataset, s)?;
        features.extend(c.baseline.features(&windows)?);
        subjects.push(SubjectWindows { subject: s, windows: windows.len(), preprocess_s: secs });
    }
    let mut csv = Vec::new();
    write_features_csv(&mut csv, &features)?;
    write_file(&out, "features.csv", csv)?;
    let summary = PreprocessSummary {
        window_shape: [p.window.0, p.window.1, p.window.2],
        num_patches,
        patch_dim,
        total_windows: features.len(),
        subjects,
    };
    write_file(&out, "preprocess.json", to_json(&summary)?)?;
    println!(
        "{} windows of shape {:?} ({num_patches} patches of {patch_dim}); features in {}",
        features.len(),
        p.window,
        out.join("features.csv").display()
    );
    Ok(())
}

/// Cross-validates the transformer on every active subject.
fn run_vit(
    c: &RunConfig,
    p: &Prepared,
    cfg: &VitConfig,
    checkpoints: Option<&Path>,
    mut per_subject: impl FnMut(u32, &[WindowTensor], f64) -> Result<(), CliError>,
) -> Result<MethodSummary, CliError> {
    let reps = p.dataset.manifest.num_repetitions;
    let mut results = Vec::new();
    for &s in &p.subjects {
        let (windows, pre_s) = subject_windows(c, &p.dataset, s)?;
        eprintln!("subject {s}: {} windows, training {} folds", windows.len(), reps);
        let run = run_cv_detailed(&windows, reps, cfg, &c.train, c.jobs)?;
        if let Some(dir) = checkpoints {
            let sub = dir.join(format!("subject_{s}"));
            create_dir(&sub)?;
            for (k, params) in run.models.iter().enumerate() {
                checkpoint::save(&sub.join(format!("fold_{}.ckpt", k + 1)), params, c.seed)?;
            }
        }
        eprintln!("subject {s}: mean accuracy {:.4}", run.report.mean_accuracy);
        results.push(SubjectResult::new(s, &run.report, pre_s));
        per_subject(s, &windows, pre_s)?;
    }
    Ok(MethodSummary::aggregate("vit", Some(c.model_label()), parameter_count(cfg), results)?)
}

pub fn train(c: &RunConfig) -> Result<(), CliError> {
    let p = prepare(c)?;
    let cfg = c.vit_config(p.dataset.manifest.num_gestures as usize, p.window)?;
    let out = output_dir(c);
    create_dir(&out)?;
    write_file(&out, "run_config.json", c.to_json())?;
    let ckpt = out.join("checkpoints");
    let summary = run_vit(c, &p, &cfg, Some(&ckpt), |_, _, _| Ok(()))?;
    let audit = audit_presets(AUDIT_CLASSES, AUDIT_WINDOW, PatchLayout::TimeByChannels)?;
    write_file(&out, "report.csv", summary_csv(&[&summary]))?;
    write_file(&out, "boxplot.csv", boxplot_csv(&[&summary])?)?;
    write_file(&out, "audit.csv", audit_csv(&audit))?;
    print!("{}", render_table(&[&summary]));
    let report = TrainReport::new(summary, audit);
    write_file(&out, "report.json", to_json(&report)?)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn compare(c: &RunConfig) -> Result<(), CliError> {
    let p = prepare(c)?;
    let cfg = c.vit_config(p.dataset.manifest.num_gestures as usize, p.window)?;
    let out = output_dir(c);
    create_dir(&out)?;
    write_file(&out, "run_config.json", c.to_json())?;
    let reps = p.dataset.manifest.num_repetitions;
    let mut lda = Vec::new();
    let mut lda_params = 0;
    let vit = run_vit(c, &p, &cfg, None, |s, windows, pre_s| {
        let report = run_lda_cv(windows, reps, &c.baseline)?;
        eprintln!("subject {s}: LDA mean accuracy {:.4}", report.mean_accuracy);
        lda_params = report.parameter_count;
        lda.push(SubjectResult::new(s, &report, pre_s));
        Ok(())
    })?;
    let lda = MethodSummary::aggregate("lda", None, lda_params, lda)?;
    write_file(&out, "compare.csv", summary_csv(&[&vit, &lda]))?;
    write_file(&out, "boxplot.csv", boxplot_csv(&[&vit, &lda])?)?;
    print!("{}", render_table(&[&vit, &lda]));
    let report = CompareReport::new(vit, lda);
    println!(
        "folds identical across methods: {}; mean difference (vit − lda): {:+.4}",
        report.folds_identical, report.mean_difference
    );
    write_file(&out, "compare.json", to_json(&report)?)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn summary_from_train(r: TrainReport) -> MethodSummary {
    MethodSummary {
        method: "vit".into(),
        model_id: Some(r.model_id),
        per_fold: r.per_fold,
        mean: r.mean,
        std: r.std,
        param_count: r.param_count,
        preprocess_s: r.preprocess_s,
        train_s: r.train_s,
        subjects: r.subjects,
    }
}

pub fn report(input: &Path, output: Option<&Path>) -> Result<(), CliError> {
    let file = if input.is_dir() {
        ["compare.json", "report.json"]
            .iter()
            .map(|n| input.join(n))
            .find(|p| p.is_file())
            .ok_or_else(|| CliError::Usage(format!("{} holds no report.json or compare.json", input.display())))?
    } else {
        input.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", file.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))?;
    let bad = |e: serde_json::Error| CliError::Usage(format!("{}: {e}", file.display()));
    let methods: Vec<MethodSummary> = if value.get("vit").is_some() {
        let r: CompareReport = serde_json::from_value(value).map_err(bad)?;
        println!("folds identical across methods: {}", r.folds_identical);
        vec![r.vit, r.lda]
    } else {
        let r: TrainReport = serde_json::from_value(value).map_err(bad)?;
        if !r.parameter_audit.is_empty() {
            print!("{}", audit_csv(&r.parameter_audit));
        }
        vec![summary_from_train(r)]
    };
    let refs: Vec<&MethodSummary> = methods.iter().collect();
    print!("{}", render_table(&refs));
    if let Some(dir) = output {
        create_dir(dir)?;
        write_file(dir, "report.csv", summary_csv(&refs))?;
        write_file(dir, "boxplot.csv", boxplot_csv(&refs)?)?;
    }
    Ok(())
}
