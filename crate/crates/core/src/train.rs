//! Two-stage training: the CNN learns angles from input matrices, then the LSTM
//! learns angles from sequences of the frozen CNN's deep features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{StageConfig, TrainingConfig};
use crate::dsp::{
    apply_standard_filters, fit_normalizer, prepare_matrices, Dof, DspConfig, NormalizationStats,
    Protocol, RawWindow, SemgRecording,
};
use crate::error::{Error, Result};
use crate::lstm::{
    build_sequences, lstm_backward, lstm_forward_trace, lstm_predict, readout_mask,
    sequence_count, FeatureSequence, LstmParams, LstmShape, HIDDEN_UNITS,
};
use crate::nn::cnn::stack_matrices;
use crate::nn::layers::mse_loss;
use crate::nn::{CnnArch, CnnModel, GradientSet, Parameters};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::tensor::Tensor;

const CNN_STREAM: u64 = 1;
const LSTM_STREAM: u64 = 2;
const EXTRACT_CHUNK: usize = 256;

fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-DoF z-scoring of the LSTM's targets, fitted on training labels.
/// The CNN regresses angles in degrees directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TargetScaler {
    /// Columns with no spread keep unit scale.
    pub fn fit(labels: &Tensor<f64>) -> Result<Self> {
        if labels.rank() != 2 {
            return Err(Error::Dimension(format!(
                "labels must be [M × D], got {:?}",
                labels.shape()
            )));
        }
        let (m, d) = (labels.shape()[0] as f64, labels.shape()[1]);
        let mut mean = vec![0.0; d];
        for row in labels.rows() {
            mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        mean.iter_mut().for_each(|a| *a /= m);
        let mut var = vec![0.0; d];
        for row in labels.rows() {
            for ((s, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - mu).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / m).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn scale(&self, labels: &Tensor<f64>) -> Tensor<f32> {
        let d = self.dims();
        Tensor::from_fn(labels.shape().to_vec(), |i| {
            ((labels.data()[i] - self.mean[i % d]) / self.std[i % d]) as f32
        })
    }

    pub fn unscale(&self, scaled: &[f32]) -> Vec<f64> {
        scaled
            .iter()
            .enumerate()
            .map(|(j, &v)| v as f64 * self.std[j] + self.mean[j])
            .collect()
    }
}

/// One partition after filtering, normalization and segmentation.
#[derive(Debug, Clone)]
pub struct Partition {
    /// `[M, L, N]`
    pub inputs: Tensor<f32>,
    /// `[M × D]` angles at each window's last sample.
    pub labels: Tensor<f64>,
    pub times: Vec<f64>,
    pub windows: Vec<RawWindow>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub fn prepare_partition(
    rec: &SemgRecording,
    stats: &NormalizationStats,
    dsp: &DspConfig,
) -> Result<Partition> {
    let (windows, matrices) = prepare_matrices(rec, stats, dsp)?;
    let refs: Vec<_> = matrices.iter().collect();
    let inputs = stack_matrices::<f32>(&refs)?;
    let rows: Vec<Vec<f64>> = windows.iter().map(|w| w.label.clone()).collect();
    Ok(Partition {
        inputs,
        labels: Tensor::from_rows(&rows)?,
        times: windows.iter().map(|w| w.end_time).collect(),
        windows,
    })
}

/// Batches over a permutation; a lone trailing sample joins the previous batch.
pub fn batch_ranges(len: usize, batch: usize) -> Vec<std::ops::Range<usize>> {
    let batch = batch.max(1);
    let mut out: Vec<std::ops::Range<usize>> = (0..len)
        .step_by(batch)
        .map(|s| s..(s + batch).min(len))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) && batch > 1 {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").end = last.end;
    }
    out
}

fn gather(t: &Tensor<f32>, idx: &[usize]) -> Result<Tensor<f32>> {
    let row: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data)
}

/// Epoch and batch are reported counting from 1.
fn check_loss(stage: &'static str, epoch: usize, batch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            stage,
            epoch: epoch + 1,
            batch: batch + 1,
            loss,
        })
    }
}

/// Stage 1: SGDM on the regression head's MSE. Returns the model and the
/// per-epoch mean loss.
pub fn train_cnn(
    inputs: &Tensor<f32>,
    targets: &Tensor<f32>,
    arch: CnnArch,
    stage: &StageConfig,
    optimizer: OptimizerConfig,
    seed: u64,
) -> Result<(CnnModel<f32>, Vec<f64>)> {
    let m = inputs.shape()[0];
    if m < 2 || targets.shape()[0] != m {
        return Err(Error::InsufficientData(format!(
            "CNN training needs ≥ 2 samples with matching targets (got {m} inputs, {} targets)",
            targets.shape()[0]
        )));
    }
    let mut rng = stage_rng(seed, CNN_STREAM);
    let mut model = CnnModel::<f32>::new(arch, &mut rng)?;
    let mut opt = Optimizer::new(optimizer, &model.params());
    let mut order: Vec<usize> = (0..m).collect();
    let mut history = Vec::with_capacity(stage.epochs);
    for epoch in 0..stage.epochs {
        let lr = optimizer.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, range) in batch_ranges(m, stage.batch).into_iter().enumerate() {
            let idx = &order[range];
            let x = gather(inputs, idx)?;
            let y = gather(targets, idx)?;
            let (pred, cache) = model.forward_train(&x, &mut rng)?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            let loss = loss as f64;
            check_loss("cnn", epoch, b, loss)?;
            let grads = model.backward(&cache, &grad)?;
            opt.step(model.params_mut(), &grads, lr)?;
            total += loss * idx.len() as f64;
        }
        let mean = total / m as f64;
        log::info!("cnn epoch {}: loss {mean:.6} lr {lr:e}", epoch + 1);
        history.push(mean);
    }
    Ok((model, history))
}

/// Eval-mode deep features for every input, in input order.
pub fn extract_dataset_features(cnn: &CnnModel<f32>, inputs: &Tensor<f32>) -> Result<Tensor<f32>> {
    let m = inputs.shape()[0];
    let chunks: Vec<Tensor<f32>> = (0..m)
        .step_by(EXTRACT_CHUNK)
        .map(|s| inputs.slice(0, s..(s + EXTRACT_CHUNK).min(m)))
        .collect::<Result<_>>()?;
    let feats: Vec<Tensor<f32>> = chunks.iter().map(|c| cnn.extract(c)).collect::<Result<_>>()?;
    let refs: Vec<&Tensor<f32>> = feats.iter().collect();
    Tensor::concat(&refs, 0)
}

/// Stage 2: ADAM on the last-step MSE over feature sequences.
pub fn train_lstm(
    sequences: &[FeatureSequence<f32>],
    shape: LstmShape,
    stage: &StageConfig,
    optimizer: OptimizerConfig,
    dropout: f64,
    seed: u64,
) -> Result<(LstmParams<f32>, Vec<f64>)> {
    if sequences.is_empty() {
        return Err(Error::InsufficientData("LSTM training needs at least one sequence".into()));
    }
    let mut rng = stage_rng(seed, LSTM_STREAM);
    let mut params = LstmParams::<f32>::new(shape, &mut rng);
    let mut opt = Optimizer::new(optimizer, &params.params());
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let d = shape.outputs as f32;
    let mut history = Vec::with_capacity(stage.epochs);
    for epoch in 0..stage.epochs {
        let lr = optimizer.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, range) in batch_ranges(sequences.len(), stage.batch).into_iter().enumerate() {
            let idx = &order[range];
            let masks: Vec<Option<Vec<f32>>> = idx
                .iter()
                .map(|_| readout_mask(shape.hidden, dropout, &mut rng))
                .collect();
            let norm = idx.len() as f32 * d;
            let per_seq: Vec<(f64, GradientSet<f32>)> = idx
                .par_iter()
                .zip(masks)
                .map(|(&i, mask)| {
                    let seq = &sequences[i];
                    let (y, trace) = lstm_forward_trace(&params, &seq.features, mask)?;
                    let diff: Vec<f32> = y.iter().zip(&seq.target).map(|(a, t)| a - t).collect();
                    let sq: f64 = diff.iter().map(|&v| (v as f64).powi(2)).sum();
                    let dy: Vec<f32> = diff.iter().map(|v| 2.0 * v / norm).collect();
                    Ok((sq, lstm_backward(&params, &trace, &dy)?))
                })
                .collect::<Result<_>>()?;
            let mut grads = GradientSet::zeros_like(&params.params());
            let mut sq = 0.0;
            for (s, g) in &per_seq {
                sq += s;
                grads.add_assign(g)?;
            }
            let loss = sq / norm as f64;
            check_loss("lstm", epoch, b, loss)?;
            opt.step(params.params_mut(), &grads, lr)?;
            total += loss * idx.len() as f64;
        }
        let mean = total / sequences.len() as f64;
        log::info!("lstm epoch {}: loss {mean:.6} lr {lr:e}", epoch + 1);
        history.push(mean);
    }
    Ok((params, history))
}

/// The trained pipeline plus everything needed to preprocess new recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    pub cnn: CnnModel<f32>,
    pub lstm: LstmParams<f32>,
    pub normalization: NormalizationStats,
    pub targets: TargetScaler,
    pub dsp: DspConfig,
    pub k: usize,
    pub protocol: Protocol,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHistory {
    pub cnn: Vec<f64>,
    pub lstm: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedHybrid {
    pub model: HybridModel,
    pub history: TrainingHistory,
}

/// Normalization and window geometry fitted on a training recording.
pub fn fit_preprocessing(
    config: &TrainingConfig,
    train: &SemgRecording,
) -> Result<(NormalizationStats, DspConfig)> {
    if let Some(p) = config.protocol {
        if p != train.protocol() {
            return Err(Error::Config(format!(
                "config expects protocol {p}, data is {}",
                train.protocol()
            )));
        }
    }
    let stats = fit_normalizer(&apply_standard_filters(train)?)?;
    Ok((stats, config.dsp(train.emg_fs())?))
}

/// Output of stage 1, reusable across stage-2 variants.
#[derive(Debug, Clone)]
pub struct StageOne {
    pub cnn: CnnModel<f32>,
    pub history: Vec<f64>,
    pub normalization: NormalizationStats,
    pub targets: TargetScaler,
    pub dsp: DspConfig,
    pub protocol: Protocol,
    pub partition: Partition,
    pub scaled_targets: Tensor<f32>,
}

pub fn train_stage_one(config: &TrainingConfig, train: &SemgRecording) -> Result<StageOne> {
    config.validate()?;
    let (normalization, dsp) = fit_preprocessing(config, train)?;
    let partition = prepare_partition(train, &normalization, &dsp)?;
    if partition.len() < config.k {
        return Err(Error::InsufficientData(format!(
            "training partition has {} windows, fewer than k = {}",
            partition.len(),
            config.k
        )));
    }
    let targets = TargetScaler::fit(&partition.labels)?;
    let scaled_targets = targets.scale(&partition.labels);
    let mut arch = CnnArch::standard(dsp.matrix_len(), train.channels(), train.dof_count());
    arch.dropout = config.dropout;
    arch.leaky_slope = config.leaky_slope;
    let (cnn, history) = train_cnn(
        &partition.inputs,
        &partition.labels.cast::<f32>(),
        arch,
        &config.cnn,
        config.cnn_optimizer(),
        config.seed,
    )?;
    Ok(StageOne {
        cnn,
        history,
        normalization,
        targets,
        dsp,
        protocol: train.protocol(),
        partition,
        scaled_targets,
    })
}

/// Stage 2 on top of a frozen stage-1 CNN, with sequences of `k` steps.
pub fn train_stage_two(
    config: &TrainingConfig,
    stage_one: &StageOne,
    k: usize,
) -> Result<(HybridModel, TrainingHistory)> {
    let feats = extract_dataset_features(&stage_one.cnn, &stage_one.partition.inputs)?;
    let sequences = build_sequences(&feats, &stage_one.scaled_targets, k)?;
    let shape = LstmShape {
        hidden: HIDDEN_UNITS,
        features: stage_one.cnn.feature_dim(),
        outputs: stage_one.targets.dims(),
    };
    let (lstm, history) = train_lstm(
        &sequences,
        shape,
        &config.lstm,
        config.lstm_optimizer(),
        config.dropout,
        config.seed,
    )?;
    Ok((
        HybridModel {
            cnn: stage_one.cnn.clone(),
            lstm,
            normalization: stage_one.normalization.clone(),
            targets: stage_one.targets.clone(),
            dsp: stage_one.dsp,
            k,
            protocol: stage_one.protocol,
        },
        TrainingHistory {
            cnn: stage_one.history.clone(),
            lstm: history,
        },
    ))
}

/// Both stages on one training recording.
pub fn train_hybrid(config: &TrainingConfig, train: &SemgRecording) -> Result<TrainedHybrid> {
    let one = train_stage_one(config, train)?;
    let (model, history) = train_stage_two(config, &one, config.k)?;
    Ok(TrainedHybrid { model, history })
}

/// Predicted and true angles at a sequence of timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dofs: Vec<Dof>,
    pub times: Vec<f64>,
    pub truth: Vec<Vec<f64>>,
    pub pred: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn truth_column(&self, d: usize) -> Vec<f64> {
        self.truth.iter().map(|r| r[d]).collect()
    }

    pub fn pred_column(&self, d: usize) -> Vec<f64> {
        self.pred.iter().map(|r| r[d]).collect()
    }
}

/// Hybrid and CNN-only trajectories over the same sequence-end windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub hybrid: Trajectory,
    pub cnn: Trajectory,
}

impl HybridModel {
    pub fn dofs(&self) -> Vec<Dof> {
        self.protocol.dofs().to_vec()
    }

    pub fn prepare(&self, rec: &SemgRecording) -> Result<Partition> {
        if rec.protocol() != self.protocol {
            return Err(Error::Config(format!(
                "model was trained on protocol {}, recording is {}",
                self.protocol,
                rec.protocol()
            )));
        }
        prepare_partition(rec, &self.normalization, &self.dsp)
    }

    pub fn predict_partition(&self, part: &Partition) -> Result<Predictions> {
        let m = part.len();
        if m < self.k {
            return Err(Error::InsufficientData(format!(
                "{m} windows cannot form a sequence of k = {} steps",
                self.k
            )));
        }
        let mut features = Vec::new();
        let mut heads = Vec::new();
        for s in (0..m).step_by(EXTRACT_CHUNK) {
            let chunk = part.inputs.slice(0, s..(s + EXTRACT_CHUNK).min(m))?;
            let (f, p) = self.cnn.forward_eval(&chunk)?;
            features.push(f);
            heads.push(p);
        }
        let features = Tensor::concat(&features.iter().collect::<Vec<_>>(), 0)?;
        let heads = Tensor::concat(&heads.iter().collect::<Vec<_>>(), 0)?;
        let count = sequence_count(m, self.k);
        let hybrid: Vec<Vec<f64>> = (0..count)
            .into_par_iter()
            .map(|i| {
                let seq = features.slice(0, i..i + self.k)?;
                Ok(self.targets.unscale(&lstm_predict(&self.lstm, &seq)?))
            })
            .collect::<Result<_>>()?;
        let ends = self.k - 1..m;
        let truth: Vec<Vec<f64>> = ends.clone().map(|j| part.labels.row(j).to_vec()).collect();
        let times: Vec<f64> = part.times[ends.clone()].to_vec();
        let cnn: Vec<Vec<f64>> = ends
            .map(|j| heads.row(j).iter().map(|&v| v as f64).collect())
            .collect();
        Ok(Predictions {
            hybrid: Trajectory {
                dofs: self.dofs(),
                times: times.clone(),
                truth: truth.clone(),
                pred: hybrid,
            },
            cnn: Trajectory {
                dofs: self.dofs(),
                times,
                truth,
                pred: cnn,
            },
        })
    }

    /// Preprocesses a raw recording with the training statistics and predicts one
    /// angle vector per sequence-end window.
    pub fn predict(&self, rec: &SemgRecording) -> Result<Trajectory> {
        Ok(self.predict_partition(&self.prepare(rec)?)?.hybrid)
    }

    pub fn predict_both(&self, rec: &SemgRecording) -> Result<Predictions> {
        self.predict_partition(&self.prepare(rec)?)
    }
}

/// Sum of all CNN parameters and buffers, for detecting mutation.
pub fn cnn_checksum(cnn: &CnnModel<f32>) -> f64 {
    cnn.params()
        .into_iter()
        .chain(cnn.buffers())
        .flat_map(|t| t.data().iter())
        .enumerate()
        .map(|(i, &v)| v as f64 * (1.0 + (i % 97) as f64))
        .sum()
}
