//! The variance-ratio R², session splits, and evaluation runs.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::TrainingConfig;
use crate::dsp::{MatrixMode, Protocol, SemgRecording};
use crate::error::{Error, Result};
use crate::features::{extract_features, fit_pca, Standardizer, PCA_COMPONENTS};
use crate::krr::{self, TuneResult};
use crate::lstm::sequence_count;
use crate::tensor::Tensor;
use crate::train::{
    train_hybrid, train_stage_one, train_stage_two, HybridModel, Partition, Trajectory,
};

pub const SWEEP_TIME_STEPS: [usize; 4] = [8, 18, 58, 98];
pub const MODEL_HYBRID: &str = "cnn-lstm";
pub const MODEL_CNN: &str = "cnn";
pub const MODEL_KRR: &str = "krr";

fn population_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// `1 − Var(α − y) / Var(α)` with population variances.
pub fn r_squared(alpha: &[f64], y: &[f64]) -> Result<f64> {
    if alpha.len() != y.len() {
        return Err(Error::Dimension(format!(
            "R² needs equal lengths, got {} and {}",
            alpha.len(),
            y.len()
        )));
    }
    if alpha.len() < 2 {
        return Err(Error::InsufficientData("R² needs at least two samples".into()));
    }
    let var_a = population_variance(alpha);
    if !(var_a > 0.0) {
        return Err(Error::UndefinedMetric);
    }
    let resid: Vec<f64> = alpha.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(1.0 - population_variance(&resid) / var_a)
}

/// Sample indices `floor(i·T/4)` for `i = 0..=4`.
pub fn fold_boundaries(total: usize) -> [usize; 5] {
    std::array::from_fn(|i| i * total / 4)
}

/// Folds 1–3 for training, fold 4 for testing, cut on raw samples.
/// `required` is the sample count each side needs (enough for `k` windows).
pub fn split_session(
    rec: &SemgRecording,
    required: usize,
) -> Result<(SemgRecording, SemgRecording, [usize; 5])> {
    let b = fold_boundaries(rec.emg_len());
    let test_len = b[4] - b[3];
    if test_len < required || b[3] < required {
        return Err(Error::InsufficientData(format!(
            "session of {} samples leaves {test_len} test samples; {required} are needed",
            rec.emg_len()
        )));
    }
    Ok((rec.slice_samples(0, b[3])?, rec.slice_samples(b[3], b[4])?, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SplitDescriptor {
    Intra {
        session: String,
        boundaries: Vec<usize>,
        train_folds: Vec<usize>,
        test_fold: usize,
    },
    Inter {
        train_session: String,
        test_session: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Intra,
    Inter,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intra" => Ok(SplitMode::Intra),
            "inter" => Ok(SplitMode::Inter),
            other => Err(Error::Usage(format!(
                "unknown split `{other}` (expected intra or inter)"
            ))),
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitMode::Intra => "intra",
            SplitMode::Inter => "inter",
        })
    }
}

/// Evaluation data: one session split in time, or two sessions.
#[derive(Debug, Clone)]
pub enum EvalData {
    Intra(SemgRecording),
    Inter {
        train: SemgRecording,
        test: SemgRecording,
    },
}

impl EvalData {
    pub fn from_sessions(mode: SplitMode, mut sessions: Vec<SemgRecording>) -> Result<Self> {
        match (mode, sessions.len()) {
            (SplitMode::Intra, n) if n >= 1 => Ok(EvalData::Intra(sessions.swap_remove(0))),
            (SplitMode::Inter, 2) => {
                let test = sessions.pop().expect("two sessions");
                let train = sessions.pop().expect("two sessions");
                if train.protocol() != test.protocol() {
                    return Err(Error::Usage(format!(
                        "sessions disagree on protocol ({} vs {})",
                        train.protocol(),
                        test.protocol()
                    )));
                }
                Ok(EvalData::Inter { train, test })
            }
            (SplitMode::Inter, n) => Err(Error::Usage(format!(
                "inter-session evaluation needs exactly two sessions, found {n}"
            ))),
            (SplitMode::Intra, _) => Err(Error::Usage("no session found".into())),
        }
    }

    pub fn protocol(&self) -> Protocol {
        match self {
            EvalData::Intra(r) => r.protocol(),
            EvalData::Inter { train, .. } => train.protocol(),
        }
    }

    /// Train and test recordings plus the split descriptor.
    pub fn resolve(&self, required: usize) -> Result<(SemgRecording, SemgRecording, SplitDescriptor)> {
        match self {
            EvalData::Intra(rec) => {
                let (train, test, b) = split_session(rec, required)?;
                Ok((
                    train,
                    test,
                    SplitDescriptor::Intra {
                        session: rec.session_id().to_string(),
                        boundaries: b.to_vec(),
                        train_folds: vec![1, 2, 3],
                        test_fold: 4,
                    },
                ))
            }
            EvalData::Inter { train, test } => Ok((
                train.clone(),
                test.clone(),
                SplitDescriptor::Inter {
                    train_session: train.session_id().to_string(),
                    test_session: test.session_id().to_string(),
                },
            )),
        }
    }

    /// The recording stage 1 and 2 train on.
    pub fn training_recording(&self, required: usize) -> Result<SemgRecording> {
        Ok(self.resolve(required)?.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofScore {
    pub name: String,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub protocol: Protocol,
    pub split: SplitDescriptor,
    pub dof: Vec<DofScore>,
    pub k: usize,
    pub matrix_mode: MatrixMode,
    /// Length `L` of the input matrices.
    pub input_len: usize,
    pub train_windows: usize,
    pub test_windows: usize,
    pub runtime_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub krr: Option<TuneResult>,
    pub trajectory: Trajectory,
}

impl EvaluationReport {
    pub fn r2(&self, dof: &str) -> Option<f64> {
        self.dof.iter().find(|d| d.name == dof).map(|d| d.r2)
    }

    pub fn mean_r2(&self) -> f64 {
        self.dof.iter().map(|d| d.r2).sum::<f64>() / self.dof.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn find_report<'a>(reports: &'a [EvaluationReport], model: &str) -> Option<&'a EvaluationReport> {
    reports.iter().find(|r| r.model == model)
}

/// Per-DoF R² of a trajectory.
pub fn score_trajectory(traj: &Trajectory) -> Result<Vec<DofScore>> {
    traj.dofs
        .iter()
        .enumerate()
        .map(|(d, dof)| {
            Ok(DofScore {
                name: dof.name().to_string(),
                r2: r_squared(&traj.truth_column(d), &traj.pred_column(d))?,
            })
        })
        .collect()
}

struct ReportContext<'a> {
    model: &'a HybridModel,
    split: &'a SplitDescriptor,
    train_windows: usize,
    test_windows: usize,
}

impl ReportContext<'_> {
    fn report(
        &self,
        name: &str,
        trajectory: Trajectory,
        runtime_s: f64,
        krr: Option<TuneResult>,
    ) -> Result<EvaluationReport> {
        Ok(EvaluationReport {
            model: name.to_string(),
            protocol: self.model.protocol,
            split: self.split.clone(),
            dof: score_trajectory(&trajectory)?,
            k: self.model.k,
            matrix_mode: self.model.dsp.mode,
            input_len: self.model.dsp.matrix_len(),
            train_windows: self.train_windows,
            test_windows: self.test_windows,
            runtime_s,
            krr,
            trajectory,
        })
    }
}

fn handcrafted_rows(part: &Partition) -> Result<Vec<Vec<f64>>> {
    part.windows
        .par_iter()
        .map(|w| Ok(extract_features(&w.samples)?.to_vec()))
        .collect()
}

/// KRR on PCA-reduced handcrafted features of the same conditioned windows,
/// reported at the same sequence-end windows as the networks.
pub fn krr_trajectory(
    train: &Partition,
    test: &Partition,
    k: usize,
    dofs: &[crate::dsp::Dof],
) -> Result<(Trajectory, TuneResult)> {
    let train_rows = handcrafted_rows(train)?;
    let test_rows = handcrafted_rows(test)?;
    let standardizer = Standardizer::fit(&train_rows)?;
    let train_std: Vec<Vec<f64>> = train_rows.iter().map(|r| standardizer.apply(r)).collect();
    let pca = fit_pca(&train_std, PCA_COMPONENTS)?;
    let project = |rows: &[Vec<f64>]| -> Result<Tensor<f64>> {
        let projected: Vec<Vec<f64>> = rows.iter().map(|r| pca.project(r)).collect();
        Tensor::from_rows(&projected)
    };
    let x_train = project(&train_std)?;
    let test_std: Vec<Vec<f64>> = test_rows.iter().map(|r| standardizer.apply(r)).collect();
    let x_test = project(&test_std)?;
    let tuned = krr::tune(&x_train, &train.labels)?;
    let model = krr::fit(&x_train, &train.labels, tuned.gamma, tuned.lambda)?;
    let m = test.len();
    if m < k {
        return Err(Error::InsufficientData(format!(
            "{m} test windows cannot cover k = {k}"
        )));
    }
    let ends = k - 1..m;
    let pred: Vec<Vec<f64>> = ends
        .clone()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&j| model.predict(x_test.row(j)))
        .collect();
    Ok((
        Trajectory {
            dofs: dofs.to_vec(),
            times: test.times[ends.clone()].to_vec(),
            truth: ends.map(|j| test.labels.row(j).to_vec()).collect(),
            pred,
        },
        tuned,
    ))
}

/// Reports for a trained model on a test recording: the hybrid always, and the
/// CNN-only head plus a KRR baseline fitted on `train` when `baselines` is set.
pub fn evaluate_model(
    model: &HybridModel,
    train: &SemgRecording,
    test: &SemgRecording,
    split: &SplitDescriptor,
    baselines: bool,
    training_seconds: f64,
) -> Result<Vec<EvaluationReport>> {
    let start = Instant::now();
    let test_part = model.prepare(test)?;
    let train_part = model.prepare(train)?;
    let ctx = ReportContext {
        model,
        split,
        train_windows: train_part.len(),
        test_windows: test_part.len(),
    };
    let preds = model.predict_partition(&test_part)?;
    let net_time = training_seconds + start.elapsed().as_secs_f64();
    let mut reports = vec![ctx.report(MODEL_HYBRID, preds.hybrid, net_time, None)?];
    if baselines {
        reports.push(ctx.report(MODEL_CNN, preds.cnn, net_time, None)?);
        let krr_start = Instant::now();
        let (traj, tuned) = krr_trajectory(&train_part, &test_part, model.k, &model.dofs())?;
        reports.push(ctx.report(
            MODEL_KRR,
            traj,
            krr_start.elapsed().as_secs_f64(),
            Some(tuned),
        )?);
    }
    Ok(reports)
}

fn required_samples(config: &TrainingConfig, rec: &SemgRecording, k: usize) -> Result<usize> {
    Ok(config.dsp(rec.emg_fs())?.samples_for_windows(k))
}

fn first_recording(data: &EvalData) -> &SemgRecording {
    match data {
        EvalData::Intra(r) => r,
        EvalData::Inter { train, .. } => train,
    }
}

/// Trains the hybrid on the training side of `data` and evaluates it on the test side.
pub fn run_evaluation(
    config: &TrainingConfig,
    data: &EvalData,
    baselines: bool,
) -> Result<Vec<EvaluationReport>> {
    let required = required_samples(config, first_recording(data), config.k)?;
    let (train, test, split) = data.resolve(required)?;
    let start = Instant::now();
    let trained = train_hybrid(config, &train)?;
    let seconds = start.elapsed().as_secs_f64();
    evaluate_model(&trained.model, &train, &test, &split, baselines, seconds)
}

/// One stage-1 CNN, then one stage-2 LSTM and report per time-step count.
pub fn sweep_timesteps(
    config: &TrainingConfig,
    data: &EvalData,
    ks: &[usize],
) -> Result<Vec<EvaluationReport>> {
    let k_max = ks.iter().copied().max().unwrap_or(config.k);
    let required = required_samples(config, first_recording(data), k_max)?;
    let (train, test, split) = data.resolve(required)?;
    let start = Instant::now();
    let one = train_stage_one(config, &train)?;
    let shared = start.elapsed().as_secs_f64();
    ks.iter()
        .map(|&k| {
            let t = Instant::now();
            let (model, _) = train_stage_two(config, &one, k)?;
            let reports = evaluate_model(
                &model,
                &train,
                &test,
                &split,
                false,
                shared + t.elapsed().as_secs_f64(),
            )?;
            let report = reports.into_iter().next().expect("hybrid report");
            debug_assert_eq!(
                report.trajectory.len(),
                sequence_count(report.test_windows, k)
            );
            Ok(report)
        })
        .collect()
}

/// The same pipeline with spectral and with temporal input matrices.
pub fn compare_matrix_modes(config: &TrainingConfig, data: &EvalData) -> Result<Vec<EvaluationReport>> {
    [MatrixMode::Spectral, MatrixMode::Temporal]
        .into_iter()
        .map(|mode| {
            let mut cfg = config.clone();
            cfg.matrix_mode = mode;
            Ok(run_evaluation(&cfg, data, false)?.remove(0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{apply_standard_filters, Protocol};
    use crate::synth::{generate, SynthConfig};
    use proptest::prelude::*;

    #[test]
    fn r2_reference_values() {
        let a = [1.0, 3.0, -2.0, 4.5, 0.0];
        assert_eq!(r_squared(&a, &a).unwrap(), 1.0);
        assert!(r_squared(&a, &[0.7; 5]).unwrap().abs() < 1e-12);
        let shifted: Vec<f64> = a.iter().map(|v| v + 5.0).collect();
        assert!((r_squared(&a, &shifted).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(r_squared(&[2.0; 4], &a[..4]), Err(Error::UndefinedMetric)));
        assert!(r_squared(&[1.0], &[1.0]).is_err());
        assert!(r_squared(&a, &a[..3]).is_err());
    }

    #[test]
    fn r2_by_hand() {
        // Var(α) = 1.25, residual (0, 0, 0, 1) has Var = 0.1875.
        let a = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 2.0, 3.0, 3.0];
        assert!((r_squared(&a, &y).unwrap() - (1.0 - 0.1875 / 1.25)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn r2_affine_equivariance(
            pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..40),
            a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            b in -20.0f64..20.0,
            c in -20.0f64..20.0,
        ) {
            let alpha: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(population_variance(&alpha) > 1e-3);
            let base = r_squared(&alpha, &y).unwrap();
            prop_assert!(base <= 1.0);
            let ta: Vec<f64> = alpha.iter().map(|v| a * v + b).collect();
            let ty: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            prop_assert!((r_squared(&ta, &ty).unwrap() - base).abs() < 1e-12 * (1.0 + base.abs()));
            let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
            prop_assert!((r_squared(&alpha, &shifted).unwrap() - base).abs() < 1e-12 * (1.0 + base.abs()));
        }
    }

    fn session(seconds: f64, seed: u64) -> SemgRecording {
        generate(&SynthConfig::new(Protocol::P1, seconds, seed)).unwrap()
    }

    #[test]
    fn quarter_split() {
        assert_eq!(fold_boundaries(4000), [0, 1000, 2000, 3000, 4000]);
        assert_eq!(fold_boundaries(10), [0, 2, 5, 7, 10]);
        let rec = session(4000.0 / 1024.0, 1);
        assert_eq!(rec.emg_len(), 4000);
        let (train, test, b) = split_session(&rec, 200).unwrap();
        assert_eq!(b[3], 3000);
        assert_eq!(train.emg_len() + test.emg_len(), 4000);
        assert_eq!(test.emg(), &rec.emg().slice(0, 3000..4000).unwrap());
        assert_eq!(train.emg(), &rec.emg().slice(0, 0..3000).unwrap());
        assert!(train.angle_time(train.angle_len() - 1) < test.angle_time(0));
        assert!(matches!(split_session(&rec, 2000), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn test_fold_is_filtered_standalone() {
        let rec = session(8.0, 2);
        let (_, test, b) = split_session(&rec, 200).unwrap();
        let standalone = apply_standard_filters(&test).unwrap();
        let sliced = apply_standard_filters(&rec)
            .unwrap()
            .slice_samples(b[3], b[4])
            .unwrap();
        let diff_start: f64 = (0..50)
            .map(|i| (standalone.emg().row(i)[0] - sliced.emg().row(i)[0]).abs())
            .sum();
        assert!(diff_start > 0.0);
    }

    #[test]
    fn report_json_round_trip() {
        let traj = Trajectory {
            dofs: vec![crate::dsp::Dof::Fe],
            times: vec![0.1, 0.15, 0.2],
            truth: vec![vec![1.0], vec![2.0], vec![3.5]],
            pred: vec![vec![1.1], vec![1.9], vec![3.0]],
        };
        let report = EvaluationReport {
            model: MODEL_HYBRID.into(),
            protocol: Protocol::P1,
            split: SplitDescriptor::Intra {
                session: "s".into(),
                boundaries: vec![0, 1, 2, 3, 4],
                train_folds: vec![1, 2, 3],
                test_fold: 4,
            },
            dof: score_trajectory(&traj).unwrap(),
            k: 18,
            matrix_mode: MatrixMode::Spectral,
            input_len: 101,
            train_windows: 10,
            test_windows: 3,
            runtime_s: 0.123_456_789,
            krr: Some(TuneResult {
                gamma: 0.1,
                lambda: 1e-3,
                score: 0.7,
            }),
            trajectory: traj,
        };
        let back = EvaluationReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
        let v: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        for key in ["model", "protocol", "split", "dof", "k", "matrix_mode", "runtime_s"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["dof"][0]["name"], "fe");
    }

    #[test]
    fn inter_needs_two_sessions() {
        let rec = session(4.0, 3);
        assert!(matches!(
            EvalData::from_sessions(SplitMode::Inter, vec![rec.clone()]),
            Err(Error::Usage(_))
        ));
        assert!(EvalData::from_sessions(SplitMode::Inter, vec![rec.clone(), rec]).is_ok());
    }

    #[test]
    fn test_labels_do_not_leak_into_training() {
        let rec = session(10.0, 4);
        let mut cfg = TrainingConfig::desk();
        cfg.cnn.epochs = 1;
        cfg.lstm.epochs = 1;
        cfg.k = 4;
        let required = cfg.dsp(1024.0).unwrap().samples_for_windows(cfg.k);
        let (train_a, test, _) = split_session(&rec, required).unwrap();

        // Corrupt every angle sample at or after the test boundary.
        let t_test = test.emg_start();
        let mut angles = rec.angles().clone();
        for j in 0..rec.angle_len() {
            if rec.angle_time(j) >= t_test - 1e-9 {
                angles.data_mut()[j] = 1e3;
            }
        }
        let tampered = rec.with_angles(angles).unwrap();
        let (train_b, _, _) = split_session(&tampered, required).unwrap();
        let a = train_hybrid(&cfg, &train_a).unwrap().model;
        let b = train_hybrid(&cfg, &train_b).unwrap().model;
        assert_eq!(a.predict(&test).unwrap().pred, b.predict(&test).unwrap().pred);
    }
}
