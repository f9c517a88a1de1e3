//! Result exports: report JSON and CSV tables for plotting.

use std::path::Path;

use serde::Serialize;

use crate::dsp::SemgRecording;
use crate::error::{Error, Result};
use crate::eval::EvaluationReport;
use crate::features::{extract_features, project_2d};
use crate::train::{extract_dataset_features, HybridModel, TrainingHistory, Trajectory};

use super::write_atomic;

fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>, header: &[&str]) -> Result<Vec<u8>> {
    let fail = |e: csv::Error| Error::Data(format!("csv encoding: {e}"));
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.serialize(row).map_err(fail)?;
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv encoding: {e}")))
}

/// All reports of one run, as a JSON array.
pub fn write_reports(path: &Path, reports: &[EvaluationReport]) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(reports)?.as_bytes())
}

pub fn read_reports(path: &Path) -> Result<Vec<EvaluationReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Long format `t,true,pred,dof`, one row per timestamp and DoF.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let rows = (0..traj.len()).flat_map(|i| {
        traj.dofs
            .iter()
            .enumerate()
            .map(move |(d, dof)| (traj.times[i], traj.truth[i][d], traj.pred[i][d], dof.name()))
    });
    write_atomic(path, &csv_bytes(rows, &["t", "true", "pred", "dof"])?)
}

/// `stage,epoch,loss` with epochs counted from 1.
pub fn write_loss_history(path: &Path, history: &TrainingHistory) -> Result<()> {
    let rows: Vec<(&str, usize, f64)> = history
        .cnn
        .iter()
        .enumerate()
        .map(|(e, &l)| ("cnn", e + 1, l))
        .chain(history.lstm.iter().enumerate().map(|(e, &l)| ("lstm", e + 1, l)))
        .collect();
    write_atomic(path, &csv_bytes(rows, &["stage", "epoch", "loss"])?)
}

/// One line of a sweep summary: a variant's report with per-DoF R².
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub variant: String,
    pub model: String,
    pub k: usize,
    pub matrix_mode: String,
    pub input_len: usize,
    pub test_windows: usize,
    pub sequences: usize,
    pub r2_mean: f64,
    pub r2_fe: Option<f64>,
    pub r2_ps: Option<f64>,
    pub r2_ru: Option<f64>,
}

impl SummaryRow {
    pub fn from_report(variant: &str, report: &EvaluationReport) -> Self {
        SummaryRow {
            variant: variant.to_string(),
            model: report.model.clone(),
            k: report.k,
            matrix_mode: report.matrix_mode.to_string(),
            input_len: report.input_len,
            test_windows: report.test_windows,
            sequences: report.trajectory.len(),
            r2_mean: report.mean_r2(),
            r2_fe: report.r2("fe"),
            r2_ps: report.r2("ps"),
            r2_ru: report.r2("ru"),
        }
    }
}

pub const SUMMARY_HEADER: [&str; 11] = [
    "variant",
    "model",
    "k",
    "matrix_mode",
    "input_len",
    "test_windows",
    "sequences",
    "r2_mean",
    "r2_fe",
    "r2_ps",
    "r2_ru",
];

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows, &SUMMARY_HEADER)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub angle: f64,
    pub dof: &'static str,
    pub feature_kind: &'static str,
}

/// Learned and handcrafted features of every window of `rec`, each projected
/// onto its top two principal axes, paired with the window's angle per DoF.
pub fn feature_scatter(model: &HybridModel, rec: &SemgRecording) -> Result<Vec<ScatterPoint>> {
    let part = model.prepare(rec)?;
    let deep = extract_dataset_features(&model.cnn, &part.inputs)?;
    let deep_rows: Vec<Vec<f64>> = deep
        .rows()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let hand_rows: Vec<Vec<f64>> = part
        .windows
        .iter()
        .map(|w| Ok(extract_features(&w.samples)?.to_vec()))
        .collect::<Result<_>>()?;
    let dofs = model.dofs();
    let mut points = Vec::new();
    for (kind, rows) in [("deep", deep_rows), ("handcrafted", hand_rows)] {
        for (i, [x, y]) in project_2d(&rows)?.into_iter().enumerate() {
            for (d, dof) in dofs.iter().enumerate() {
                points.push(ScatterPoint {
                    x,
                    y,
                    angle: part.labels.row(i)[d],
                    dof: dof.name(),
                    feature_kind: kind,
                });
            }
        }
    }
    Ok(points)
}

pub fn write_scatter_csv(path: &Path, points: &[ScatterPoint]) -> Result<()> {
    write_atomic(
        path,
        &csv_bytes(points, &["x", "y", "angle", "dof", "feature_kind"])?,
    )
}
