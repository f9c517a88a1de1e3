//! The single-stream CNN: four conv blocks, two fully connected blocks and a
//! linear regression head. The second FC block's output is the deep feature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    dropout_backward, dropout_forward, leaky_relu_backward, leaky_relu_forward, maxpool_backward,
    maxpool_forward, BatchNorm, BatchNormCache, Conv1d, Linear, Mode, PoolCache, POOL,
};
use super::{GradientSet, Parameters};
use crate::dsp::InputMatrix;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnArch {
    pub input_len: usize,
    pub input_channels: usize,
    pub conv_channels: Vec<usize>,
    pub fc_sizes: Vec<usize>,
    pub outputs: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl CnnArch {
    pub const CONV_CHANNELS: [usize; 4] = [16, 16, 32, 32];
    pub const FC_SIZES: [usize; 2] = [100, 20];
    pub const DROPOUT: f64 = 0.3;
    pub const LEAKY_SLOPE: f64 = 0.1;

    pub fn standard(input_len: usize, input_channels: usize, outputs: usize) -> Self {
        Self {
            input_len,
            input_channels,
            conv_channels: Self::CONV_CHANNELS.to_vec(),
            fc_sizes: Self::FC_SIZES.to_vec(),
            outputs,
            dropout: Self::DROPOUT,
            leaky_slope: Self::LEAKY_SLOPE,
        }
    }

    /// Sequence length after each conv block (pooling trims 2 per block).
    pub fn block_lengths(&self) -> Vec<usize> {
        let mut len = self.input_len;
        self.conv_channels
            .iter()
            .map(|_| {
                len = len.saturating_sub(POOL - 1);
                len
            })
            .collect()
    }

    pub fn flatten_len(&self) -> usize {
        let last_len = self.block_lengths().last().copied().unwrap_or(self.input_len);
        let last_ch = self.conv_channels.last().copied().unwrap_or(self.input_channels);
        last_len * last_ch
    }

    pub fn feature_dim(&self) -> usize {
        self.fc_sizes.last().copied().unwrap_or(self.flatten_len())
    }

    pub fn validate(&self) -> Result<()> {
        let min_len = 1 + (POOL - 1) * self.conv_channels.len();
        if self.input_len < min_len {
            return Err(Error::Dimension(format!(
                "input length {} is too short for {} pooling blocks (need ≥ {min_len})",
                self.input_len,
                self.conv_channels.len()
            )));
        }
        if self.input_channels == 0 || self.outputs == 0 {
            return Err(Error::Dimension("CNN needs ≥ 1 input channel and output".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T: Real> {
    pub conv: Conv1d<T>,
    pub bn: BatchNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcBlock<T: Real> {
    pub fc: Linear<T>,
    pub bn: BatchNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T: Real> {
    arch: CnnArch,
    pub conv_blocks: Vec<ConvBlock<T>>,
    pub fc_blocks: Vec<FcBlock<T>>,
    pub head: Linear<T>,
}

#[derive(Debug, Clone)]
struct ConvTrace<T: Real> {
    input: Tensor<T>,
    bn: BatchNormCache<T>,
    act_in: Tensor<T>,
    pool: PoolCache,
    mask: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
struct FcTrace<T: Real> {
    input: Tensor<T>,
    bn: BatchNormCache<T>,
    act_in: Tensor<T>,
    mask: Option<Vec<T>>,
}

/// Activations kept from a training forward pass.
#[derive(Debug, Clone)]
pub struct CnnCache<T: Real> {
    conv: Vec<ConvTrace<T>>,
    fc: Vec<FcTrace<T>>,
    conv_out_shape: Vec<usize>,
    features: Tensor<T>,
}

impl<T: Real> CnnCache<T> {
    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    /// Activation shape `[B, L, C]` leaving each conv block.
    pub fn conv_output_shapes(&self) -> Vec<Vec<usize>> {
        self.conv
            .iter()
            .skip(1)
            .map(|t| t.input.shape().to_vec())
            .chain(std::iter::once(self.conv_out_shape.clone()))
            .collect()
    }
}

impl<T: Real> CnnModel<T> {
    pub fn new<R: Rng + ?Sized>(arch: CnnArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let gain_sq = 2.0 / (1.0 + arch.leaky_slope * arch.leaky_slope);
        let mut in_ch = arch.input_channels;
        let conv_blocks = arch
            .conv_channels
            .iter()
            .map(|&out| {
                let block = ConvBlock {
                    conv: Conv1d::new(in_ch, out, gain_sq, rng),
                    bn: BatchNorm::new(out),
                };
                in_ch = out;
                block
            })
            .collect();
        let mut width = arch.flatten_len();
        let fc_blocks = arch
            .fc_sizes
            .iter()
            .map(|&out| {
                let block = FcBlock {
                    fc: Linear::new(width, out, gain_sq, rng),
                    bn: BatchNorm::new(out),
                };
                width = out;
                block
            })
            .collect();
        let head = Linear::new(width, arch.outputs, 1.0, rng);
        Ok(Self {
            arch,
            conv_blocks,
            fc_blocks,
            head,
        })
    }

    pub fn arch(&self) -> &CnnArch {
        &self.arch
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        match *x.shape() {
            [b, l, c] if l == self.arch.input_len && c == self.arch.input_channels => Ok(b),
            _ => Err(Error::Dimension(format!(
                "CNN expects [batch, {}, {}] input, got {:?}",
                self.arch.input_len,
                self.arch.input_channels,
                x.shape()
            ))),
        }
    }

    fn slope(&self) -> T {
        T::of(self.arch.leaky_slope)
    }

    /// Training-mode pass: batch statistics, dropout, running-stat updates.
    /// Returns the regression output and the cache for [`CnnModel::backward`].
    pub fn forward_train<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor<T>,
        rng: &mut R,
    ) -> Result<(Tensor<T>, CnnCache<T>)> {
        let b = self.check_input(x)?;
        let slope = self.slope();
        let rate = self.arch.dropout;
        let mut h = x.clone();
        let mut conv = Vec::with_capacity(self.conv_blocks.len());
        for block in &mut self.conv_blocks {
            let z = block.conv.forward(&h)?;
            let (act_in, bn) = block.bn.forward_train(&z)?;
            let a = leaky_relu_forward(&act_in, slope);
            let (p, pool) = maxpool_forward(&a)?;
            let (d, mask) = dropout_forward(&p, rate, Mode::Train, rng);
            conv.push(ConvTrace {
                input: std::mem::replace(&mut h, d),
                bn,
                act_in,
                pool,
                mask,
            });
        }
        let conv_out_shape = h.shape().to_vec();
        let mut h = h.reshape([b, self.arch.flatten_len()])?;
        let mut fc = Vec::with_capacity(self.fc_blocks.len());
        for block in &mut self.fc_blocks {
            let z = block.fc.forward(&h)?;
            let (act_in, bn) = block.bn.forward_train(&z)?;
            let a = leaky_relu_forward(&act_in, slope);
            let (d, mask) = dropout_forward(&a, rate, Mode::Train, rng);
            fc.push(FcTrace {
                input: std::mem::replace(&mut h, d),
                bn,
                act_in,
                mask,
            });
        }
        let pred = self.head.forward(&h)?;
        Ok((
            pred,
            CnnCache {
                conv,
                fc,
                conv_out_shape,
                features: h,
            },
        ))
    }

    /// Gradients of all parameters given `d loss / d prediction`.
    pub fn backward(&self, cache: &CnnCache<T>, grad_pred: &Tensor<T>) -> Result<GradientSet<T>> {
        if cache.conv.len() != self.conv_blocks.len() || cache.fc.len() != self.fc_blocks.len() {
            return Err(Error::Usage("CNN cache does not belong to this model".into()));
        }
        let slope = self.slope();
        let mut conv_grads = Vec::with_capacity(self.conv_blocks.len());
        let mut fc_grads = Vec::with_capacity(self.fc_blocks.len());

        let (mut g, head_w, head_b) = self.head.backward(&cache.features, grad_pred)?;
        for (block, trace) in self.fc_blocks.iter().zip(&cache.fc).rev() {
            let gd = dropout_backward(trace.mask.as_deref(), &g);
            let ga = leaky_relu_backward(&trace.act_in, &gd, slope)?;
            let (gz, dgamma, dbeta) = block.bn.backward(&trace.bn, &ga)?;
            let (gx, dw, db) = block.fc.backward(&trace.input, &gz)?;
            fc_grads.push([dw, db, dgamma, dbeta]);
            g = gx;
        }
        let mut g = g.reshape(cache.conv_out_shape.clone())?;
        for (block, trace) in self.conv_blocks.iter().zip(&cache.conv).rev() {
            let gd = dropout_backward(trace.mask.as_deref(), &g);
            let gp = maxpool_backward(&trace.pool, &gd)?;
            let ga = leaky_relu_backward(&trace.act_in, &gp, slope)?;
            let (gz, dgamma, dbeta) = block.bn.backward(&trace.bn, &ga)?;
            let (gx, dw, db) = block.conv.backward(&trace.input, &gz)?;
            conv_grads.push([dw, db, dgamma, dbeta]);
            g = gx;
        }
        let mut tensors = Vec::new();
        tensors.extend(conv_grads.into_iter().rev().flatten());
        tensors.extend(fc_grads.into_iter().rev().flatten());
        tensors.push(head_w);
        tensors.push(head_b);
        Ok(GradientSet { tensors })
    }

    /// Eval-mode pass returning `(deep features, regression output)`.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let b = self.check_input(x)?;
        let slope = self.slope();
        let mut h = x.clone();
        for block in &self.conv_blocks {
            let z = block.bn.forward_eval(&block.conv.forward(&h)?)?;
            h = maxpool_forward(&leaky_relu_forward(&z, slope))?.0;
        }
        let mut h = h.reshape([b, self.arch.flatten_len()])?;
        for block in &self.fc_blocks {
            let z = block.bn.forward_eval(&block.fc.forward(&h)?)?;
            h = leaky_relu_forward(&z, slope);
        }
        let pred = self.head.forward(&h)?;
        Ok((h, pred))
    }

    /// Deep features `[batch × feature_dim]`, eval mode.
    pub fn extract(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_eval(x)?.0)
    }

    /// Regression-head output `[batch × outputs]`, eval mode.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_eval(x)?.1)
    }

    /// Batch-norm running statistics, in block order (mean then variance).
    pub fn buffers(&self) -> Vec<&Tensor<T>> {
        self.bns()
            .flat_map(|bn| [&bn.running_mean, &bn.running_var])
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let conv = self.conv_blocks.iter_mut().map(|b| &mut b.bn);
        let fc = self.fc_blocks.iter_mut().map(|b| &mut b.bn);
        conv.chain(fc)
            .flat_map(|bn| [&mut bn.running_mean, &mut bn.running_var])
            .collect()
    }

    fn bns(&self) -> impl Iterator<Item = &BatchNorm<T>> {
        self.conv_blocks
            .iter()
            .map(|b| &b.bn)
            .chain(self.fc_blocks.iter().map(|b| &b.bn))
    }

    /// Names matching [`Parameters::params`] order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.conv_blocks.len() {
            for p in ["weight", "bias", "gamma", "beta"] {
                names.push(format!("conv{}.{p}", i + 1));
            }
        }
        for i in 0..self.fc_blocks.len() {
            for p in ["weight", "bias", "gamma", "beta"] {
                names.push(format!("fc{}.{p}", i + 1));
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn buffer_names(&self) -> Vec<String> {
        let conv = (1..=self.conv_blocks.len()).map(|i| format!("conv{i}"));
        let fc = (1..=self.fc_blocks.len()).map(|i| format!("fc{i}"));
        conv.chain(fc)
            .flat_map(|n| [format!("{n}.running_mean"), format!("{n}.running_var")])
            .collect()
    }

    pub fn cast<U: Real>(&self) -> CnnModel<U> {
        let bn = |b: &BatchNorm<T>| BatchNorm {
            gamma: b.gamma.cast(),
            beta: b.beta.cast(),
            running_mean: b.running_mean.cast(),
            running_var: b.running_var.cast(),
        };
        CnnModel {
            arch: self.arch.clone(),
            conv_blocks: self
                .conv_blocks
                .iter()
                .map(|b| ConvBlock {
                    conv: Conv1d {
                        weight: b.conv.weight.cast(),
                        bias: b.conv.bias.cast(),
                    },
                    bn: bn(&b.bn),
                })
                .collect(),
            fc_blocks: self
                .fc_blocks
                .iter()
                .map(|b| FcBlock {
                    fc: Linear {
                        weight: b.fc.weight.cast(),
                        bias: b.fc.bias.cast(),
                    },
                    bn: bn(&b.bn),
                })
                .collect(),
            head: Linear {
                weight: self.head.weight.cast(),
                bias: self.head.bias.cast(),
            },
        }
    }
}

impl<T: Real> Parameters<T> for CnnModel<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for b in &self.conv_blocks {
            out.extend([&b.conv.weight, &b.conv.bias, &b.bn.gamma, &b.bn.beta]);
        }
        for b in &self.fc_blocks {
            out.extend([&b.fc.weight, &b.fc.bias, &b.bn.gamma, &b.bn.beta]);
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.conv_blocks {
            out.extend([
                &mut b.conv.weight,
                &mut b.conv.bias,
                &mut b.bn.gamma,
                &mut b.bn.beta,
            ]);
        }
        for b in &mut self.fc_blocks {
            out.extend([&mut b.fc.weight, &mut b.fc.bias, &mut b.bn.gamma, &mut b.bn.beta]);
        }
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }
}

/// Stacks `1 × L × N` matrices into a `[batch, L, N]` tensor.
pub fn stack_matrices<T: Real>(matrices: &[&InputMatrix]) -> Result<Tensor<T>> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::InsufficientData("empty batch".into()))?;
    let (l, n) = (first.len(), first.channels());
    let mut data = Vec::with_capacity(matrices.len() * l * n);
    for m in matrices {
        if m.len() != l || m.channels() != n {
            return Err(Error::Dimension(format!(
                "batch mixes {l}×{n} and {}×{} matrices",
                m.len(),
                m.channels()
            )));
        }
        data.extend(m.values.data().iter().map(|&v| T::of(v)));
    }
    Tensor::new(vec![matrices.len(), l, n], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_shape_chain() {
        let arch = CnnArch::standard(101, 6, 1);
        assert_eq!(arch.block_lengths(), vec![99, 97, 95, 93]);
        assert_eq!(arch.flatten_len(), 2976);
        assert_eq!(arch.feature_dim(), 20);
    }

    #[test]
    fn forward_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = CnnModel::<f32>::new(CnnArch::standard(101, 6, 3), &mut rng).unwrap();
        let x = Tensor::from_fn(vec![4, 101, 6], |i| (i as f32 * 0.01).sin());
        let (pred, cache) = model.forward_train(&x, &mut rng).unwrap();
        assert_eq!(pred.shape(), &[4, 3]);
        assert_eq!(cache.features().shape(), &[4, 20]);
        let grads = model.backward(&cache, &Tensor::ones([4, 3])).unwrap();
        assert!(grads.matches(&model.params()));
        assert_eq!(model.extract(&x).unwrap().shape(), &[4, 20]);
        assert!(model.predict(&Tensor::zeros([2, 100, 6])).is_err());
    }

    #[test]
    fn eval_extraction_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = CnnModel::<f32>::new(CnnArch::standard(101, 6, 1), &mut rng).unwrap();
        let one = Tensor::from_fn(vec![1, 101, 6], |i| (i as f32 * 0.37).cos());
        let two = Tensor::concat(&[&one, &one], 0).unwrap();
        let f = model.extract(&two).unwrap();
        assert_eq!(f.row(0), f.row(1));
        assert_eq!(model.extract(&one).unwrap().row(0), f.row(0));
    }

    #[test]
    fn names_line_up_with_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = CnnModel::<f32>::new(CnnArch::standard(101, 6, 1), &mut rng).unwrap();
        assert_eq!(model.param_names().len(), model.params().len());
        assert_eq!(model.buffer_names().len(), model.buffers().len());
    }

    #[test]
    fn too_short_input_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert!(CnnModel::<f32>::new(CnnArch::standard(8, 6, 1), &mut rng).is_err());
    }
}
