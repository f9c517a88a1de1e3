//! LSTM sequence regressor over deep-feature sequences.
//!
//! Per time step, with `z = [h_{j-1}, f_j]`:
//!
//! ```text
//! i = σ(W_i z + b_i)    m = σ(W_m z + b_m)    o = σ(W_o z + b_o)
//! c_j = i ⊙ tanh(W_c z + b_c) + m ⊙ c_{j-1}
//! h_j = o ⊙ tanh(c_j)
//! y_j = W_y h_j + b_y
//! ```
//!
//! Only the last output `y_k` is read out. The state starts from zero for every
//! sequence.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::Mode;
use crate::nn::{GradientSet, Parameters};
use crate::tensor::{sigmoid, Real, Tensor};

pub const HIDDEN_UNITS: usize = 50;
pub const DEFAULT_TIME_STEPS: usize = 18;
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmShape {
    pub hidden: usize,
    pub features: usize,
    pub outputs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T: Real> {
    /// Gate weights `[hidden × (hidden + features)]`; the first `hidden` columns act on `h_{j-1}`.
    pub w_i: Tensor<T>,
    pub w_m: Tensor<T>,
    pub w_o: Tensor<T>,
    pub w_c: Tensor<T>,
    pub b_i: Tensor<T>,
    pub b_m: Tensor<T>,
    pub b_o: Tensor<T>,
    pub b_c: Tensor<T>,
    /// `[outputs × hidden]`
    pub w_y: Tensor<T>,
    pub b_y: Tensor<T>,
    /// Initial state; fixed at zero, never trained.
    pub h0: Vec<T>,
    pub c0: Vec<T>,
}

impl<T: Real> LstmParams<T> {
    pub fn zeros(shape: LstmShape) -> Self {
        let LstmShape {
            hidden: h,
            features: f,
            outputs: d,
        } = shape;
        Self {
            w_i: Tensor::zeros([h, h + f]),
            w_m: Tensor::zeros([h, h + f]),
            w_o: Tensor::zeros([h, h + f]),
            w_c: Tensor::zeros([h, h + f]),
            b_i: Tensor::zeros([h]),
            b_m: Tensor::zeros([h]),
            b_o: Tensor::zeros([h]),
            b_c: Tensor::zeros([h]),
            w_y: Tensor::zeros([d, h]),
            b_y: Tensor::zeros([d]),
            h0: vec![T::zero(); h],
            c0: vec![T::zero(); h],
        }
    }

    /// Uniform `±1/√fan_in` weights, zero biases except the forget gate (1.0).
    pub fn new<R: Rng + ?Sized>(shape: LstmShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let gate_bound = 1.0 / ((shape.hidden + shape.features) as f64).sqrt();
        let out_bound = 1.0 / (shape.hidden as f64).sqrt();
        for w in [&mut p.w_i, &mut p.w_m, &mut p.w_o, &mut p.w_c] {
            let dist = Uniform::new(-gate_bound, gate_bound).expect("valid bounds");
            w.data_mut().iter_mut().for_each(|v| *v = T::of(dist.sample(rng)));
        }
        let dist = Uniform::new(-out_bound, out_bound).expect("valid bounds");
        p.w_y
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = T::of(dist.sample(rng)));
        p.b_m.fill(T::of(FORGET_BIAS));
        p
    }

    pub fn shape(&self) -> LstmShape {
        let hidden = self.b_i.len();
        LstmShape {
            hidden,
            features: self.w_i.shape()[1] - hidden,
            outputs: self.b_y.len(),
        }
    }

    pub fn param_names() -> [&'static str; 10] {
        ["w_i", "b_i", "w_m", "b_m", "w_o", "b_o", "w_c", "b_c", "w_y", "b_y"]
    }

    pub fn cast<U: Real>(&self) -> LstmParams<U> {
        LstmParams {
            w_i: self.w_i.cast(),
            w_m: self.w_m.cast(),
            w_o: self.w_o.cast(),
            w_c: self.w_c.cast(),
            b_i: self.b_i.cast(),
            b_m: self.b_m.cast(),
            b_o: self.b_o.cast(),
            b_c: self.b_c.cast(),
            w_y: self.w_y.cast(),
            b_y: self.b_y.cast(),
            h0: self.h0.iter().map(|&v| U::of(v.to_f64_lossless())).collect(),
            c0: self.c0.iter().map(|&v| U::of(v.to_f64_lossless())).collect(),
        }
    }
}

impl<T: Real> Parameters<T> for LstmParams<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        vec![
            &self.w_i, &self.b_i, &self.w_m, &self.b_m, &self.w_o, &self.b_o, &self.w_c,
            &self.b_c, &self.w_y, &self.b_y,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.w_i,
            &mut self.b_i,
            &mut self.w_m,
            &mut self.b_m,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.w_c,
            &mut self.b_c,
            &mut self.w_y,
            &mut self.b_y,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T: Real> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LstmState<T> {
    pub fn initial(params: &LstmParams<T>) -> Self {
        Self {
            h: params.h0.clone(),
            c: params.c0.clone(),
        }
    }
}

/// `k` consecutive deep features and the label of the last window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<T: Real> {
    /// `[k × features]`
    pub features: Tensor<T>,
    pub target: Vec<T>,
    /// Index of the first window in the underlying segmentation.
    pub start: usize,
}

impl<T: Real> FeatureSequence<T> {
    pub fn steps(&self) -> usize {
        self.features.shape()[0]
    }

    /// Index of the last window (the one whose label is the target).
    pub fn end(&self) -> usize {
        self.start + self.steps() - 1
    }
}

pub fn sequence_count(windows: usize, k: usize) -> usize {
    if k == 0 || windows < k {
        0
    } else {
        windows - k + 1
    }
}

/// Stride-1 overlapping sequences; the sequence starting at `i` targets `labels[i + k − 1]`.
pub fn build_sequences<T: Real>(
    features: &Tensor<T>,
    labels: &Tensor<T>,
    k: usize,
) -> Result<Vec<FeatureSequence<T>>> {
    if k == 0 {
        return Err(Error::Config("time steps k must be ≥ 1".into()));
    }
    if features.rank() != 2 || labels.rank() != 2 || features.shape()[0] != labels.shape()[0] {
        return Err(Error::Dimension(format!(
            "features {:?} and labels {:?} must be [M × ·] with equal M",
            features.shape(),
            labels.shape()
        )));
    }
    let m = features.shape()[0];
    if m < k {
        return Err(Error::InsufficientData(format!(
            "{m} feature vectors cannot form a sequence of {k} steps"
        )));
    }
    (0..sequence_count(m, k))
        .map(|start| {
            Ok(FeatureSequence {
                features: features.slice(0, start..start + k)?,
                target: labels.row(start + k - 1).to_vec(),
                start,
            })
        })
        .collect()
}

fn affine<T: Real>(w: &[T], b: &[T], z: &[T], out: &mut [T]) {
    let cols = z.len();
    for (r, o) in out.iter_mut().enumerate() {
        let mut acc = b[r];
        for (a, x) in w[r * cols..(r + 1) * cols].iter().zip(z) {
            acc += *a * *x;
        }
        *o = acc;
    }
}

/// Intermediate values of one step, kept for backpropagation.
#[derive(Debug, Clone)]
struct StepCache<T: Real> {
    z: Vec<T>,
    i: Vec<T>,
    m: Vec<T>,
    o: Vec<T>,
    g: Vec<T>,
    c_prev: Vec<T>,
    tanh_c: Vec<T>,
}

/// Cached forward pass over one sequence.
#[derive(Debug, Clone, Default)]
pub struct LstmTrace<T: Real> {
    steps: Vec<StepCache<T>>,
    h_last: Vec<T>,
    readout_mask: Option<Vec<T>>,
}

impl<T: Real> LstmTrace<T> {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn check_feature<T: Real>(params: &LstmParams<T>, f: &[T]) -> Result<()> {
    let shape = params.shape();
    if f.len() != shape.features {
        return Err(Error::Dimension(format!(
            "LSTM expects {}-dim features, got {}",
            shape.features,
            f.len()
        )));
    }
    Ok(())
}

fn step_inner<T: Real>(params: &LstmParams<T>, state: &LstmState<T>, f: &[T]) -> (LstmState<T>, StepCache<T>) {
    let h = state.h.len();
    let mut z = Vec::with_capacity(h + f.len());
    z.extend_from_slice(&state.h);
    z.extend_from_slice(f);
    let mut i = vec![T::zero(); h];
    let mut m = vec![T::zero(); h];
    let mut o = vec![T::zero(); h];
    let mut g = vec![T::zero(); h];
    affine(params.w_i.data(), params.b_i.data(), &z, &mut i);
    affine(params.w_m.data(), params.b_m.data(), &z, &mut m);
    affine(params.w_o.data(), params.b_o.data(), &z, &mut o);
    affine(params.w_c.data(), params.b_c.data(), &z, &mut g);
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    m.iter_mut().for_each(|v| *v = sigmoid(*v));
    o.iter_mut().for_each(|v| *v = sigmoid(*v));
    g.iter_mut().for_each(|v| *v = v.tanh());
    let c: Vec<T> = (0..h).map(|r| i[r] * g[r] + m[r] * state.c[r]).collect();
    let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
    let h_new: Vec<T> = (0..h).map(|r| o[r] * tanh_c[r]).collect();
    let cache = StepCache {
        z,
        i,
        m,
        o,
        g,
        c_prev: state.c.clone(),
        tanh_c,
    };
    (LstmState { h: h_new, c }, cache)
}

fn readout<T: Real>(params: &LstmParams<T>, h: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); params.b_y.len()];
    affine(params.w_y.data(), params.b_y.data(), h, &mut y);
    y
}

/// One update of the cell and its readout `y_j`.
pub fn lstm_step<T: Real>(
    params: &LstmParams<T>,
    state: &LstmState<T>,
    f: &[T],
) -> Result<(LstmState<T>, Vec<T>)> {
    check_feature(params, f)?;
    if state.h.len() != params.shape().hidden || state.c.len() != state.h.len() {
        return Err(Error::Dimension(format!(
            "state of size {}/{} for a {}-unit LSTM",
            state.h.len(),
            state.c.len(),
            params.shape().hidden
        )));
    }
    let (next, _) = step_inner(params, state, f);
    let y = readout(params, &next.h);
    Ok((next, y))
}

/// Full rollout with an optional multiplier applied to `h_k` before the readout.
pub fn lstm_forward_trace<T: Real>(
    params: &LstmParams<T>,
    features: &Tensor<T>,
    readout_mask: Option<Vec<T>>,
) -> Result<(Vec<T>, LstmTrace<T>)> {
    let shape = params.shape();
    if features.rank() != 2 || features.shape()[1] != shape.features {
        return Err(Error::Dimension(format!(
            "LSTM expects [k × {}] features, got {:?}",
            shape.features,
            features.shape()
        )));
    }
    if let Some(mask) = &readout_mask {
        if mask.len() != shape.hidden {
            return Err(Error::Dimension("readout mask size".into()));
        }
    }
    let mut state = LstmState::initial(params);
    let mut steps = Vec::with_capacity(features.shape()[0]);
    for f in features.rows() {
        let (next, cache) = step_inner(params, &state, f);
        steps.push(cache);
        state = next;
    }
    let h_in: Vec<T> = match &readout_mask {
        Some(mask) => state.h.iter().zip(mask).map(|(a, b)| *a * *b).collect(),
        None => state.h.clone(),
    };
    let y = readout(params, &h_in);
    Ok((
        y,
        LstmTrace {
            steps,
            h_last: state.h,
            readout_mask,
        },
    ))
}

/// Draws the readout dropout multiplier for one sequence.
pub fn readout_mask<T: Real, R: Rng + ?Sized>(hidden: usize, rate: f64, rng: &mut R) -> Option<Vec<T>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = T::of(1.0 / (1.0 - rate));
    Some(
        (0..hidden)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect(),
    )
}

/// `y_k` for one sequence. Train mode applies inverted dropout to `h_k`.
pub fn lstm_forward<T: Real, R: Rng + ?Sized>(
    params: &LstmParams<T>,
    seq: &FeatureSequence<T>,
    mode: Mode,
    dropout: f64,
    rng: &mut R,
) -> Result<Vec<T>> {
    let mask = match mode {
        Mode::Train => readout_mask(params.shape().hidden, dropout, rng),
        Mode::Eval => None,
    };
    Ok(lstm_forward_trace(params, &seq.features, mask)?.0)
}

/// Eval-mode `y_k`.
pub fn lstm_predict<T: Real>(params: &LstmParams<T>, features: &Tensor<T>) -> Result<Vec<T>> {
    Ok(lstm_forward_trace(params, features, None)?.0)
}

/// Backpropagation through time from `d loss / d y_k`.
pub fn lstm_backward<T: Real>(
    params: &LstmParams<T>,
    trace: &LstmTrace<T>,
    grad_y: &[T],
) -> Result<GradientSet<T>> {
    if trace.is_empty() {
        return Err(Error::Usage(
            "lstm_backward needs the trace of a forward pass".into(),
        ));
    }
    let LstmShape {
        hidden: h,
        outputs: d,
        ..
    } = params.shape();
    if grad_y.len() != d {
        return Err(Error::Dimension(format!(
            "output gradient has {} entries, LSTM has {d} outputs",
            grad_y.len()
        )));
    }
    let mut grads = GradientSet::zeros_like(&params.params());
    let [dw_i, db_i, dw_m, db_m, dw_o, db_o, dw_c, db_c, dw_y, db_y] = &mut grads.tensors[..] else {
        unreachable!("LSTM has ten parameter tensors");
    };

    let h_in: Vec<T> = match &trace.readout_mask {
        Some(mask) => trace.h_last.iter().zip(mask).map(|(a, b)| *a * *b).collect(),
        None => trace.h_last.clone(),
    };
    for (r, &g) in grad_y.iter().enumerate() {
        db_y.data_mut()[r] = g;
        for (dst, hv) in dw_y.data_mut()[r * h..(r + 1) * h].iter_mut().zip(&h_in) {
            *dst = g * *hv;
        }
    }
    let mut dh = vec![T::zero(); h];
    let wy = params.w_y.data();
    for (r, &g) in grad_y.iter().enumerate() {
        for (acc, w) in dh.iter_mut().zip(&wy[r * h..(r + 1) * h]) {
            *acc += g * *w;
        }
    }
    if let Some(mask) = &trace.readout_mask {
        dh.iter_mut().zip(mask).for_each(|(a, b)| *a *= *b);
    }

    let cols = trace.steps[0].z.len();
    let mut dc = vec![T::zero(); h];
    let mut da = [vec![T::zero(); h], vec![T::zero(); h], vec![T::zero(); h], vec![T::zero(); h]];
    let one = T::one();
    for step in trace.steps.iter().rev() {
        for r in 0..h {
            let do_ = dh[r] * step.tanh_c[r];
            dc[r] += dh[r] * step.o[r] * (one - step.tanh_c[r] * step.tanh_c[r]);
            let di = dc[r] * step.g[r];
            let dg = dc[r] * step.i[r];
            let dm = dc[r] * step.c_prev[r];
            da[0][r] = di * step.i[r] * (one - step.i[r]);
            da[1][r] = dm * step.m[r] * (one - step.m[r]);
            da[2][r] = do_ * step.o[r] * (one - step.o[r]);
            da[3][r] = dg * (one - step.g[r] * step.g[r]);
            dc[r] *= step.m[r];
        }
        let mut dz = vec![T::zero(); cols];
        let gates: [(&Tensor<T>, &mut Tensor<T>, &mut Tensor<T>); 4] = [
            (&params.w_i, &mut *dw_i, &mut *db_i),
            (&params.w_m, &mut *dw_m, &mut *db_m),
            (&params.w_o, &mut *dw_o, &mut *db_o),
            (&params.w_c, &mut *dw_c, &mut *db_c),
        ];
        for ((w, dw, db), a) in gates.into_iter().zip(&da) {
            let wd = w.data();
            let dwd = dw.data_mut();
            for (r, &ar) in a.iter().enumerate().take(h) {
                db.data_mut()[r] += ar;
                let row = r * cols..(r + 1) * cols;
                for ((g, zv), (wv, dzv)) in dwd[row.clone()]
                    .iter_mut()
                    .zip(&step.z)
                    .zip(wd[row].iter().zip(dz.iter_mut()))
                {
                    *g += ar * *zv;
                    *dzv += ar * *wv;
                }
            }
        }
        dh.copy_from_slice(&dz[..h]);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(hidden: usize, features: usize, outputs: usize) -> LstmShape {
        LstmShape {
            hidden,
            features,
            outputs,
        }
    }

    fn random_params(s: LstmShape, seed: u64) -> LstmParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LstmParams::<f64>::new(s, &mut rng);
        for t in p.params_mut() {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
        p
    }

    fn random_features(k: usize, f: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![k, f], |_| rng.random_range(-1.5..1.5))
    }

    #[test]
    fn zero_params_give_half_gates_and_bias_output() {
        let mut p = LstmParams::<f64>::zeros(shape(50, 20, 2));
        p.b_y = Tensor::vector(vec![0.3, -0.7]);
        let s0 = LstmState::initial(&p);
        let (s1, y) = lstm_step(&p, &s0, &[0.9; 20]).unwrap();
        assert!(s1.c.iter().all(|&v| v == 0.0));
        assert!(s1.h.iter().all(|&v| v == 0.0));
        assert_eq!(y, vec![0.3, -0.7]);
        let (_, trace) = lstm_forward_trace(&p, &Tensor::full([1, 20], 0.9), None).unwrap();
        let st = &trace.steps[0];
        assert!(st.i.iter().chain(&st.m).chain(&st.o).all(|&v| v == 0.5));
    }

    #[test]
    fn step_matches_straight_line_transcription() {
        let s = shape(5, 3, 2);
        let p = random_params(s, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let state = LstmState {
            h: (0..5).map(|_| rng.random_range(-0.9..0.9)).collect(),
            c: (0..5).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let f = [0.4, -1.1, 0.25];
        let (next, y) = lstm_step(&p, &state, &f).unwrap();

        // Independent transcription using tensor ops.
        let z = Tensor::concat(&[&Tensor::vector(state.h.clone()), &Tensor::vector(f.to_vec())], 0)
            .unwrap()
            .reshape([8, 1])
            .unwrap();
        let gate = |w: &Tensor<f64>, b: &Tensor<f64>| {
            w.matmul(&z).unwrap().reshape([5]).unwrap().add(b).unwrap()
        };
        let i = gate(&p.w_i, &p.b_i).sigmoid();
        let m = gate(&p.w_m, &p.b_m).sigmoid();
        let o = gate(&p.w_o, &p.b_o).sigmoid();
        let g = gate(&p.w_c, &p.b_c).tanh();
        let c = i.mul(&g).unwrap().add(&m.mul(&Tensor::vector(state.c.clone())).unwrap()).unwrap();
        let h = o.mul(&c.tanh()).unwrap();
        let yy = p
            .w_y
            .matmul(&h.reshape([5, 1]).unwrap())
            .unwrap()
            .reshape([2])
            .unwrap()
            .add(&p.b_y)
            .unwrap();
        for (a, b) in next.c.iter().zip(c.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in next.h.iter().zip(h.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in y.iter().zip(yy.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_rollout_equals_step() {
        let p = random_params(shape(6, 4, 1), 3);
        let feats = random_features(1, 4, 4);
        let y = lstm_predict(&p, &feats).unwrap();
        let (_, ys) = lstm_step(&p, &LstmState::initial(&p), feats.row(0)).unwrap();
        assert_eq!(y, ys);
    }

    #[test]
    fn rollout_bounds_hold() {
        for seed in 0..20 {
            let p = random_params(shape(6, 4, 1), seed);
            let feats = random_features(12, 4, seed + 100);
            let mut state = LstmState::initial(&p);
            for f in feats.rows() {
                let (next, _) = lstm_step(&p, &state, f).unwrap();
                for r in 0..6 {
                    assert!(next.c[r].abs() <= state.c[r].abs() + 1.0);
                    assert!(next.h[r].abs() < 1.0);
                }
                state = next;
            }
        }
    }

    #[test]
    fn stateless_across_sequences() {
        let p = random_params(shape(5, 3, 1), 9);
        let a = random_features(4, 3, 10);
        let b = random_features(4, 3, 11);
        let ya = lstm_predict(&p, &a).unwrap();
        let _ = lstm_predict(&p, &b).unwrap();
        assert_eq!(lstm_predict(&p, &a).unwrap(), ya);
    }

    #[test]
    fn first_step_input_reaches_output() {
        let p = random_params(shape(5, 3, 1), 12);
        let a = random_features(6, 3, 13);
        let mut b = a.clone();
        b.data_mut()[0] += 1e-3;
        let ya = lstm_predict(&p, &a).unwrap();
        let yb = lstm_predict(&p, &b).unwrap();
        assert!((ya[0] - yb[0]).abs() > 0.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = random_params(shape(4, 3, 2), 14);
        let (_, trace) = lstm_forward_trace(&p, &random_features(3, 3, 15), None).unwrap();
        assert!(lstm_backward(&p, &trace, &[0.0, 0.0]).unwrap().is_zero());
    }

    #[test]
    fn readout_gradient_is_outer_product() {
        let p = random_params(shape(4, 3, 2), 16);
        let (_, trace) = lstm_forward_trace(&p, &random_features(3, 3, 17), None).unwrap();
        let g = lstm_backward(&p, &trace, &[0.7, -1.3]).unwrap();
        let dwy = &g.tensors[8];
        for r in 0..2 {
            for c in 0..4 {
                assert_eq!(dwy.data()[r * 4 + c], [0.7, -1.3][r] * trace.h_last[c]);
            }
        }
    }

    #[test]
    fn backward_without_trace_is_usage_error() {
        let p = random_params(shape(4, 3, 1), 18);
        assert!(matches!(
            lstm_backward(&p, &LstmTrace::default(), &[1.0]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn sequence_counts() {
        let feats = Tensor::<f64>::zeros([20, 20]);
        let labels = Tensor::<f64>::from_fn(vec![20, 1], |i| i as f64);
        let seqs = build_sequences(&feats, &labels, 18).unwrap();
        assert_eq!(seqs.len(), 3);
        assert_eq!(seqs[0].target, vec![17.0]);
        assert_eq!(seqs[2].end(), 19);

        let one = build_sequences(&feats, &labels, 20).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].target, vec![19.0]);

        assert!(matches!(
            build_sequences(&feats, &labels, 21),
            Err(Error::InsufficientData(_))
        ));

        let feats = Tensor::<f64>::zeros([100, 20]);
        let labels = Tensor::<f64>::zeros([100, 1]);
        let counts: Vec<usize> = [8, 18, 58, 98]
            .iter()
            .map(|&k| build_sequences(&feats, &labels, k).unwrap().len())
            .collect();
        assert_eq!(counts, vec![93, 83, 43, 3]);
    }

    #[test]
    fn dimension_errors() {
        let p = random_params(shape(4, 3, 1), 19);
        assert!(lstm_step(&p, &LstmState::initial(&p), &[1.0; 4]).is_err());
        assert!(lstm_predict(&p, &Tensor::zeros([3, 2])).is_err());
    }
}
