//! Layer primitives with hand-written backward passes.
//!
//! Sequence activations are `[batch, length, channels]`, dense activations are
//! `[batch, features]`. Work is split across samples or output units only, and
//! every reduction runs in a fixed order inside one task, so results do not
//! depend on the number of worker threads.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const KERNEL: usize = 3;
pub const POOL: usize = 3;
pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistic at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Fan-in scaled normal initialization; `gain² = 2 / (1 + slope²)` for leaky ReLU.
pub fn init_normal<T: Real, R: Rng + ?Sized>(
    shape: Vec<usize>,
    fan_in: usize,
    gain_sq: f64,
    rng: &mut R,
) -> Tensor<T> {
    let std = (gain_sq / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| T::of(normal.sample(rng)))
}

fn dims3<T: Real>(x: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, l, c] => Ok((b, l, c)),
        _ => Err(Error::Dimension(format!(
            "{what} expects [batch, length, channels], got {:?}",
            x.shape()
        ))),
    }
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{what}: gradient {:?} does not match activation {:?}",
            b.shape(),
            a.shape()
        )));
    }
    Ok(())
}

/// Length-axis convolution, kernel 3, zero padding 1, stride 1, full channel mixing.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T: Real> {
    /// `[out, in, 3]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Real> Conv1d<T> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, gain_sq: f64, rng: &mut R) -> Self {
        Self {
            weight: init_normal(vec![out_ch, in_ch, KERNEL], in_ch * KERNEL, gain_sq, rng),
            bias: Tensor::zeros([out_ch]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Weights regrouped as `[k][a][b]` from `[o][i][k]`, with `(a, b) = (o, i)`
    /// or `(i, o)` when `by_input` is set.
    fn taps(&self, by_input: bool) -> Vec<T> {
        let (co, ci) = (self.out_channels(), self.in_channels());
        let w = self.weight.data();
        let mut out = vec![T::zero(); KERNEL * co * ci];
        for o in 0..co {
            for i in 0..ci {
                for k in 0..KERNEL {
                    let v = w[(o * ci + i) * KERNEL + k];
                    let idx = if by_input {
                        (k * ci + i) * co + o
                    } else {
                        (k * co + o) * ci + i
                    };
                    out[idx] = v;
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, l, ci) = dims3(x, "conv1d")?;
        if ci != self.in_channels() {
            return Err(Error::Dimension(format!(
                "conv1d expects {} input channels, got {ci}",
                self.in_channels()
            )));
        }
        let co = self.out_channels();
        let taps = self.taps(false);
        let bias = self.bias.data();
        let mut out = vec![T::zero(); b * l * co];
        out.par_chunks_mut(l * co)
            .zip(x.data().par_chunks(l * ci))
            .for_each(|(y, xs)| {
                for pos in 0..l {
                    let yrow = &mut y[pos * co..(pos + 1) * co];
                    yrow.copy_from_slice(bias);
                    for k in 0..KERNEL {
                        let Some(src) = (pos + k).checked_sub(1).filter(|&s| s < l) else {
                            continue;
                        };
                        let xrow = &xs[src * ci..(src + 1) * ci];
                        let tk = &taps[k * co * ci..(k + 1) * co * ci];
                        for (o, yv) in yrow.iter_mut().enumerate() {
                            let w = &tk[o * ci..(o + 1) * ci];
                            let mut acc = T::zero();
                            for (a, c) in w.iter().zip(xrow) {
                                acc += *a * *c;
                            }
                            *yv += acc;
                        }
                    }
                }
            });
        Tensor::new(vec![b, l, co], out)
    }

    /// Returns `(dx, dweight, dbias)`.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let (b, l, ci) = dims3(x, "conv1d")?;
        let co = self.out_channels();
        if grad_out.shape() != [b, l, co] {
            return Err(Error::Dimension(format!(
                "conv1d gradient {:?} does not match output [{b}, {l}, {co}]",
                grad_out.shape()
            )));
        }
        let dy = grad_out.data();
        let xd = x.data();

        let taps = self.taps(true);
        let mut dx = vec![T::zero(); b * l * ci];
        dx.par_chunks_mut(l * ci)
            .zip(dy.par_chunks(l * co))
            .for_each(|(dxs, dys)| {
                for pos in 0..l {
                    let dyrow = &dys[pos * co..(pos + 1) * co];
                    for k in 0..KERNEL {
                        let Some(src) = (pos + k).checked_sub(1).filter(|&s| s < l) else {
                            continue;
                        };
                        let tk = &taps[k * ci * co..(k + 1) * ci * co];
                        let dxrow = &mut dxs[src * ci..(src + 1) * ci];
                        for (i, dv) in dxrow.iter_mut().enumerate() {
                            let w = &tk[i * co..(i + 1) * co];
                            let mut acc = T::zero();
                            for (a, g) in w.iter().zip(dyrow) {
                                acc += *a * *g;
                            }
                            *dv += acc;
                        }
                    }
                }
            });

        let mut dw = vec![T::zero(); co * ci * KERNEL];
        let mut db = vec![T::zero(); co];
        dw.par_chunks_mut(ci * KERNEL)
            .zip(db.par_iter_mut())
            .enumerate()
            .for_each(|(o, (dwo, dbo))| {
                // dwo laid out [i][k]; accumulate per tap in [k][i] then scatter.
                let mut acc = vec![T::zero(); KERNEL * ci];
                let mut bsum = T::zero();
                for s in 0..b {
                    let xs = &xd[s * l * ci..(s + 1) * l * ci];
                    for pos in 0..l {
                        let g = dy[(s * l + pos) * co + o];
                        bsum += g;
                        for k in 0..KERNEL {
                            let Some(src) = (pos + k).checked_sub(1).filter(|&q| q < l) else {
                                continue;
                            };
                            let xrow = &xs[src * ci..(src + 1) * ci];
                            for (a, xv) in acc[k * ci..(k + 1) * ci].iter_mut().zip(xrow) {
                                *a += g * *xv;
                            }
                        }
                    }
                }
                for i in 0..ci {
                    for k in 0..KERNEL {
                        dwo[i * KERNEL + k] = acc[k * ci + i];
                    }
                }
                *dbo = bsum;
            });

        Ok((
            Tensor::new(vec![b, l, ci], dx)?,
            Tensor::new(self.weight.shape().to_vec(), dw)?,
            Tensor::new(vec![co], db)?,
        ))
    }
}

/// Fully connected layer, `y = x Wᵀ + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain_sq: f64, rng: &mut R) -> Self {
        Self {
            weight: init_normal(vec![outputs, inputs], inputs, gain_sq, rng),
            bias: Tensor::zeros([outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        match *x.shape() {
            [b, f] if f == self.inputs() => Ok(b),
            _ => Err(Error::Dimension(format!(
                "linear layer expects [batch, {}], got {:?}",
                self.inputs(),
                x.shape()
            ))),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.check_input(x)?;
        let (fi, fo) = (self.inputs(), self.outputs());
        let w = self.weight.data();
        let bias = self.bias.data();
        let mut out = vec![T::zero(); b * fo];
        out.par_chunks_mut(fo)
            .zip(x.data().par_chunks(fi))
            .for_each(|(y, xr)| {
                for (o, yv) in y.iter_mut().enumerate() {
                    let mut acc = bias[o];
                    for (a, c) in w[o * fi..(o + 1) * fi].iter().zip(xr) {
                        acc += *a * *c;
                    }
                    *yv = acc;
                }
            });
        Tensor::new(vec![b, fo], out)
    }

    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let b = self.check_input(x)?;
        let (fi, fo) = (self.inputs(), self.outputs());
        if grad_out.shape() != [b, fo] {
            return Err(Error::Dimension(format!(
                "linear gradient {:?} does not match output [{b}, {fo}]",
                grad_out.shape()
            )));
        }
        let w = self.weight.data();
        let dy = grad_out.data();
        let xd = x.data();

        let mut dx = vec![T::zero(); b * fi];
        dx.par_chunks_mut(fi)
            .zip(dy.par_chunks(fo))
            .for_each(|(dxr, dyr)| {
                for (o, &g) in dyr.iter().enumerate() {
                    for (d, wv) in dxr.iter_mut().zip(&w[o * fi..(o + 1) * fi]) {
                        *d += g * *wv;
                    }
                }
            });

        let mut dw = vec![T::zero(); fo * fi];
        let mut db = vec![T::zero(); fo];
        dw.par_chunks_mut(fi)
            .zip(db.par_iter_mut())
            .enumerate()
            .for_each(|(o, (dwr, dbo))| {
                for s in 0..b {
                    let g = dy[s * fo + o];
                    *dbo += g;
                    for (d, xv) in dwr.iter_mut().zip(&xd[s * fi..(s + 1) * fi]) {
                        *d += g * *xv;
                    }
                }
            });

        Ok((
            Tensor::new(vec![b, fi], dx)?,
            Tensor::new(vec![fo, fi], dw)?,
            Tensor::new(vec![fo], db)?,
        ))
    }
}

/// Per-channel batch normalization. Statistics run over every axis but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T: Real> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones([channels]),
            beta: Tensor::zeros([channels]),
            running_mean: Tensor::zeros([channels]),
            running_var: Tensor::ones([channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().last() != Some(&self.channels()) {
            return Err(Error::Dimension(format!(
                "batchnorm over {} channels got {:?}",
                self.channels(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Batch statistics (population variance), accumulated in f64.
    fn batch_stats(&self, x: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
        let c = self.channels();
        let rows = x.len() / c;
        let mut mean = vec![0.0; c];
        for row in x.data().chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v.to_f64_lossless();
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; c];
        for row in x.data().chunks(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v.to_f64_lossless() - m;
                *s += d * d;
            }
        }
        var.iter_mut().for_each(|s| *s /= rows as f64);
        (mean, var)
    }

    fn normalize(&self, x: &Tensor<T>, mean: &[T], inv_std: &[T]) -> (Tensor<T>, Tensor<T>) {
        let c = self.channels();
        let (g, b) = (self.gamma.data(), self.beta.data());
        let mut xhat = x.clone();
        let mut y = x.clone();
        for (hrow, yrow) in xhat
            .data_mut()
            .chunks_mut(c)
            .zip(y.data_mut().chunks_mut(c))
        {
            for ch in 0..c {
                let h = (hrow[ch] - mean[ch]) * inv_std[ch];
                hrow[ch] = h;
                yrow[ch] = g[ch] * h + b[ch];
            }
        }
        (y, xhat)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        self.check(x)?;
        if x.shape()[0] < 2 {
            return Err(Error::DegenerateBatch);
        }
        let (mean, var) = self.batch_stats(x);
        let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + BN_EPS).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
        let (y, xhat) = self.normalize(x, &mean_t, &inv_std);
        let keep = T::of(BN_MOMENTUM);
        let take = T::one() - keep;
        for (r, m) in self.running_mean.data_mut().iter_mut().zip(&mean) {
            *r = keep * *r + take * T::of(*m);
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(&var) {
            *r = keep * *r + take * T::of(*v);
        }
        Ok((y, BatchNormCache { xhat, inv_std }))
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let eps = T::of(BN_EPS);
        let inv_std: Vec<T> = self
            .running_var
            .data()
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        Ok(self.normalize(x, self.running_mean.data(), &inv_std).0)
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(
        &self,
        cache: &BatchNormCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        same_shape(&cache.xhat, grad_out, "batchnorm")?;
        let c = self.channels();
        let n = grad_out.len() / c;
        let mut dgamma = vec![0.0f64; c];
        let mut dbeta = vec![0.0f64; c];
        for (g, h) in grad_out.data().chunks(c).zip(cache.xhat.data().chunks(c)) {
            for ch in 0..c {
                let gv = g[ch].to_f64_lossless();
                dbeta[ch] += gv;
                dgamma[ch] += gv * h[ch].to_f64_lossless();
            }
        }
        let nt = T::of(n as f64);
        let coef: Vec<T> = (0..c)
            .map(|ch| self.gamma.data()[ch] * cache.inv_std[ch] / nt)
            .collect();
        let sum_dy: Vec<T> = dbeta.iter().map(|&v| T::of(v)).collect();
        let sum_dyh: Vec<T> = dgamma.iter().map(|&v| T::of(v)).collect();
        let mut dx = grad_out.clone();
        for (d, h) in dx.data_mut().chunks_mut(c).zip(cache.xhat.data().chunks(c)) {
            for ch in 0..c {
                d[ch] = coef[ch] * (nt * d[ch] - sum_dy[ch] - h[ch] * sum_dyh[ch]);
            }
        }
        Ok((dx, Tensor::vector(sum_dyh), Tensor::vector(sum_dy)))
    }
}

pub fn leaky_relu_forward<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { slope * v })
}

pub fn leaky_relu_backward<T: Real>(
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
    slope: T,
) -> Result<Tensor<T>> {
    same_shape(x, grad_out, "leaky relu")?;
    let mut dx = grad_out.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v < T::zero() {
            *d *= slope;
        }
    }
    Ok(dx)
}

/// Length-axis max pooling, window 3, stride 1, no padding.
#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: [usize; 3],
    /// Offset (0..3) of the winning tap for every output element.
    argmax: Vec<u8>,
}

pub fn maxpool_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
    let (b, l, c) = dims3(x, "maxpool")?;
    if l < POOL {
        return Err(Error::Dimension(format!(
            "maxpool of size {POOL} needs length ≥ {POOL}, got {l}"
        )));
    }
    let lo = l - POOL + 1;
    let xd = x.data();
    let mut out = Vec::with_capacity(b * lo * c);
    let mut argmax = Vec::with_capacity(b * lo * c);
    for s in 0..b {
        for pos in 0..lo {
            for ch in 0..c {
                let mut best = xd[(s * l + pos) * c + ch];
                let mut arg = 0u8;
                for k in 1..POOL {
                    let v = xd[(s * l + pos + k) * c + ch];
                    if v > best {
                        best = v;
                        arg = k as u8;
                    }
                }
                out.push(best);
                argmax.push(arg);
            }
        }
    }
    Ok((
        Tensor::new(vec![b, lo, c], out)?,
        PoolCache {
            input_shape: [b, l, c],
            argmax,
        },
    ))
}

pub fn maxpool_backward<T: Real>(cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, l, c] = cache.input_shape;
    let lo = l - POOL + 1;
    if grad_out.shape() != [b, lo, c] {
        return Err(Error::Dimension(format!(
            "maxpool gradient {:?} does not match output [{b}, {lo}, {c}]",
            grad_out.shape()
        )));
    }
    let mut dx = vec![T::zero(); b * l * c];
    for (idx, &g) in grad_out.data().iter().enumerate() {
        let ch = idx % c;
        let pos = (idx / c) % lo;
        let s = idx / (c * lo);
        let src = pos + cache.argmax[idx] as usize;
        dx[(s * l + src) * c + ch] += g;
    }
    Tensor::new(vec![b, l, c], dx)
}

/// Inverted dropout: survivors are scaled by `1 / (1 − rate)`; eval mode is the identity.
/// Returns the output and the per-element multiplier (`None` when nothing was dropped).
pub fn dropout_forward<T: Real, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> (Tensor<T>, Option<Vec<T>>) {
    if mode == Mode::Eval || rate <= 0.0 {
        return (x.clone(), None);
    }
    let scale = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                scale
            }
        })
        .collect();
    let mut y = x.clone();
    for (v, m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= *m;
    }
    (y, Some(mask))
}

pub fn dropout_backward<T: Real>(mask: Option<&[T]>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut dx = grad_out.clone();
    if let Some(mask) = mask {
        for (d, m) in dx.data_mut().iter_mut().zip(mask) {
            *d *= *m;
        }
    }
    dx
}

/// Mean squared error over every element, and its gradient `2 (pred − target) / count`.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "mse: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = T::of(pred.len() as f64);
    let diff = pred.sub(target)?;
    let loss = diff.data().iter().map(|&d| d * d).sum::<T>() / n;
    let grad = diff.scale(T::of(2.0) / n);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut conv = Conv1d::<f64>::new(1, 1, 2.0, &mut rng(0));
        conv.weight = Tensor::new([1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let x = Tensor::new([1, 5, 1], vec![1.0, -2.0, 3.0, 0.5, 4.0]).unwrap();
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn conv_output_shape() {
        let conv = Conv1d::<f32>::new(6, 16, 2.0, &mut rng(1));
        let y = conv.forward(&Tensor::zeros([2, 101, 6])).unwrap();
        assert_eq!(y.shape(), &[2, 101, 16]);
        assert!(conv.forward(&Tensor::zeros([2, 101, 5])).is_err());
    }

    #[test]
    fn conv_matches_direct_definition() {
        let conv = Conv1d::<f64>::new(2, 3, 2.0, &mut rng(2));
        let x = Tensor::from_fn(vec![2, 6, 2], |i| (i as f64 * 0.7).sin());
        let y = conv.forward(&x).unwrap();
        let (w, b) = (conv.weight.data(), conv.bias.data());
        for s in 0..2 {
            for pos in 0..6 {
                for o in 0..3 {
                    let mut acc = b[o];
                    for i in 0..2 {
                        for k in 0..3 {
                            let src = pos as isize + k as isize - 1;
                            if (0..6).contains(&src) {
                                acc += w[(o * 2 + i) * 3 + k] * x.data()[(s * 6 + src as usize) * 2 + i];
                            }
                        }
                    }
                    assert!((y.data()[(s * 6 + pos) * 3 + o] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut bn = BatchNorm::<f64>::new(3);
        let x = Tensor::from_fn(vec![4, 5, 3], |i| (i as f64 * 1.3).sin() * (1 + i % 3) as f64 + 2.0);
        let (y, _) = bn.forward_train(&x).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = y.data().iter().skip(ch).step_by(3).copied().collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-4, "{v}");
        }
    }

    #[test]
    fn batchnorm_eval_with_batch_stats_matches_train() {
        let mut bn = BatchNorm::<f64>::new(2);
        bn.gamma = Tensor::vector(vec![1.5, -0.5]);
        bn.beta = Tensor::vector(vec![0.2, 0.1]);
        let x = Tensor::from_fn(vec![6, 2], |i| (i as f64 * 0.9).cos() * 3.0);
        let (train_out, _) = bn.forward_train(&x).unwrap();
        let (mean, var) = bn.batch_stats(&x);
        bn.running_mean = Tensor::vector(mean);
        bn.running_var = Tensor::vector(var);
        let eval_out = bn.forward_eval(&x).unwrap();
        for (a, b) in train_out.data().iter().zip(eval_out.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_rejects_single_sample_batches() {
        let mut bn = BatchNorm::<f32>::new(2);
        assert!(matches!(
            bn.forward_train(&Tensor::zeros([1, 4, 2])),
            Err(Error::DegenerateBatch)
        ));
    }

    #[test]
    fn leaky_relu_values() {
        let y = leaky_relu_forward(&Tensor::<f64>::vector(vec![2.0, -2.0, 0.0]), 0.1);
        assert_eq!(y.data()[0], 2.0);
        assert!((y.data()[1] + 0.2).abs() < 1e-15);
        assert_eq!(y.data()[2], 0.0);
    }

    #[test]
    fn maxpool_by_hand() {
        let x = Tensor::<f64>::new([1, 5, 1], vec![1., 3., 2., 5., 4.]).unwrap();
        let (y, cache) = maxpool_forward(&x).unwrap();
        assert_eq!(y.data(), &[3., 5., 5.]);
        let dx = maxpool_backward(&cache, &Tensor::<f64>::ones([1, 3, 1])).unwrap();
        assert_eq!(dx.data(), &[0., 1., 0., 2., 0.]);

        let (y, _) = maxpool_forward(&Tensor::<f32>::zeros([1, 101, 16])).unwrap();
        assert_eq!(y.shape(), &[1, 99, 16]);
    }

    #[test]
    fn maxpool_ties_go_to_first_index() {
        let x = Tensor::<f64>::new([1, 3, 1], vec![2., 2., 2.]).unwrap();
        let (_, cache) = maxpool_forward(&x).unwrap();
        let dx = maxpool_backward(&cache, &Tensor::<f64>::ones([1, 1, 1])).unwrap();
        assert_eq!(dx.data(), &[1., 0., 0.]);
    }

    #[test]
    fn dropout_identities() {
        let x = Tensor::<f64>::from_fn(vec![10, 4], |i| i as f64);
        let (y, m) = dropout_forward(&x, 0.3, Mode::Eval, &mut rng(3));
        assert_eq!(y, x);
        assert!(m.is_none());
        let (y, _) = dropout_forward(&x, 0.0, Mode::Train, &mut rng(3));
        assert_eq!(y, x);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let x = Tensor::<f64>::vector(vec![1.0, -2.0, 0.5, 3.0]);
        let mut r = rng(4);
        let passes = 100_000;
        let mut acc = [0.0; 4];
        for _ in 0..passes {
            let (y, _) = dropout_forward(&x, 0.3, Mode::Train, &mut r);
            for (a, v) in acc.iter_mut().zip(y.data()) {
                *a += v;
            }
        }
        for (a, v) in acc.iter().zip(x.data()) {
            let mean = a / passes as f64;
            assert!((mean - v).abs() <= 0.02 * v.abs(), "{mean} vs {v}");
        }
    }

    #[test]
    fn mse_values() {
        let p = Tensor::<f64>::vector(vec![1.0, 2.0]);
        assert_eq!(mse_loss(&p, &p).unwrap().0, 0.0);
        let (l, g) = mse_loss(&Tensor::vector(vec![3.0]), &Tensor::vector(vec![0.0])).unwrap();
        assert_eq!(l, 9.0);
        assert_eq!(g.data(), &[6.0]);
    }
}
