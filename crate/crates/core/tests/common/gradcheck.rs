//! Analytic gradients against central finite differences, in f64.
//!
//! Each check records the relative error of every gradient it compares.

use emgkin::lstm::{lstm_backward, lstm_forward_trace, readout_mask, LstmParams, LstmShape};
use emgkin::nn::layers::{
    dropout_backward, dropout_forward, leaky_relu_backward, leaky_relu_forward, maxpool_backward,
    maxpool_forward, mse_loss, BatchNorm, Conv1d, Linear, Mode,
};
use emgkin::nn::{CnnArch, CnnModel, Parameters};
use emgkin::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central difference of `f` with respect to every element of `x`.
fn numeric(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut g = Tensor::zeros(x.shape().to_vec());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let up = f(&probe);
        probe.data_mut()[i] = orig - STEP;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = (up - down) / (2.0 * STEP);
    }
    g
}

fn norm(t: &Tensor<f64>) -> f64 {
    t.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Named relative errors collected by the checks below.
#[derive(Default)]
pub struct Checks {
    pub errors: Vec<(String, f64)>,
}

impl Checks {
    /// Relative error of the two gradients. Tensors whose true gradient
    /// vanishes (a bias feeding batch norm) are compared on an absolute scale.
    fn compare(&mut self, what: &str, analytic: &Tensor<f64>, numeric: &Tensor<f64>) {
        assert_eq!(analytic.shape(), numeric.shape(), "{what}: shape");
        let rel = if norm(analytic) < 1e-12 && norm(numeric) < 1e-7 {
            0.0
        } else {
            let diff: f64 = analytic
                .data()
                .iter()
                .zip(numeric.data())
                .map(|(a, n)| (a - n).powi(2))
                .sum::<f64>()
                .sqrt();
            diff / norm(analytic).max(norm(numeric)).max(1e-8)
        };
        self.errors.push((what.to_string(), rel));
    }

    pub fn max_error(&self) -> f64 {
        self.errors.iter().map(|e| e.1).fold(0.0, f64::max)
    }

    /// Panics naming every comparison at or above [`TOL`].
    pub fn assert_ok(&self) {
        let bad: Vec<String> = self
            .errors
            .iter()
            .filter(|e| !(e.1 < TOL))
            .map(|(w, e)| format!("{w}: {e:e}"))
            .collect();
        assert!(bad.is_empty(), "gradient mismatch: {}", bad.join(", "));
    }
}

pub fn conv1d_gradients(c: &mut Checks) {
    let mut conv = Conv1d::<f64>::new(3, 4, 2.0, &mut rng(1));
    conv.bias = random(&[4], 2);
    let x = random(&[2, 6, 3], 3);
    let w = random(&[2, 6, 4], 4);
    let (dx, dw, db) = conv.backward(&x, &w).unwrap();

    c.compare("conv dx", &dx, &numeric(&x, |x| dot(&conv.forward(x).unwrap(), &w)));
    let nw = numeric(&conv.weight, |p| {
        let mut c = conv.clone();
        c.weight = p.clone();
        dot(&c.forward(&x).unwrap(), &w)
    });
    c.compare("conv dweight", &dw, &nw);
    let nb = numeric(&conv.bias, |p| {
        let mut c = conv.clone();
        c.bias = p.clone();
        dot(&c.forward(&x).unwrap(), &w)
    });
    c.compare("conv dbias", &db, &nb);
}

pub fn linear_gradients(c: &mut Checks) {
    let mut fc = Linear::<f64>::new(5, 3, 2.0, &mut rng(5));
    fc.bias = random(&[3], 6);
    let x = random(&[4, 5], 7);
    let w = random(&[4, 3], 8);
    let (dx, dw, db) = fc.backward(&x, &w).unwrap();

    c.compare("fc dx", &dx, &numeric(&x, |x| dot(&fc.forward(x).unwrap(), &w)));
    let nw = numeric(&fc.weight, |p| {
        let mut l = fc.clone();
        l.weight = p.clone();
        dot(&l.forward(&x).unwrap(), &w)
    });
    c.compare("fc dweight", &dw, &nw);
    let nb = numeric(&fc.bias, |p| {
        let mut l = fc.clone();
        l.bias = p.clone();
        dot(&l.forward(&x).unwrap(), &w)
    });
    c.compare("fc dbias", &db, &nb);
}

pub fn batchnorm_gradients_rank2_and_rank3(c: &mut Checks) {
    for (shape, seed) in [(vec![5, 3], 10u64), (vec![3, 4, 2], 20)] {
        let ch = *shape.last().unwrap();
        let mut bn = BatchNorm::<f64>::new(ch);
        bn.gamma = random(&[ch], seed).map(|v| v + 1.5);
        bn.beta = random(&[ch], seed + 1);
        let x = random(&shape, seed + 2).map(|v| 2.0 * v + 0.3);
        let w = random(&shape, seed + 3);
        let (_, cache) = bn.clone().forward_train(&x).unwrap();
        let (dx, dg, db) = bn.backward(&cache, &w).unwrap();

        let loss = |bn: &BatchNorm<f64>, x: &Tensor<f64>| {
            dot(&bn.clone().forward_train(x).unwrap().0, &w)
        };
        c.compare("bn dx", &dx, &numeric(&x, |x| loss(&bn, x)));
        let ng = numeric(&bn.gamma, |p| {
            let mut b = bn.clone();
            b.gamma = p.clone();
            loss(&b, &x)
        });
        c.compare("bn dgamma", &dg, &ng);
        let nb = numeric(&bn.beta, |p| {
            let mut b = bn.clone();
            b.beta = p.clone();
            loss(&b, &x)
        });
        c.compare("bn dbeta", &db, &nb);
    }
}

pub fn leaky_relu_gradient(c: &mut Checks) {
    // Keep every input away from the kink.
    let x = random(&[3, 7], 30).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    let w = random(&[3, 7], 31);
    let dx = leaky_relu_backward(&x, &w, 0.1).unwrap();
    c.compare("lrelu dx", &dx, &numeric(&x, |x| dot(&leaky_relu_forward(x, 0.1), &w)));
}

pub fn maxpool_gradient_off_ties(c: &mut Checks) {
    // Distinct values spaced far apart compared with the probe step.
    let mut r = rng(40);
    let mut vals: Vec<f64> = (0..2 * 8 * 3).map(|i| i as f64 * 0.1).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, r.random_range(0..=i));
    }
    let x = Tensor::new([2, 8, 3], vals).unwrap();
    let w = random(&[2, 6, 3], 41);
    let (_, cache) = maxpool_forward(&x).unwrap();
    let dx = maxpool_backward(&cache, &w).unwrap();
    c.compare(
        "maxpool dx",
        &dx,
        &numeric(&x, |x| dot(&maxpool_forward(x).unwrap().0, &w)),
    );
}

pub fn dropout_gradient_with_fixed_mask(c: &mut Checks) {
    let x = random(&[4, 6], 50);
    let w = random(&[4, 6], 51);
    let (_, mask) = dropout_forward(&x, 0.3, Mode::Train, &mut rng(52));
    let dx = dropout_backward(mask.as_deref(), &w);
    let n = numeric(&x, |x| {
        dot(&dropout_forward(x, 0.3, Mode::Train, &mut rng(52)).0, &w)
    });
    c.compare("dropout dx", &dx, &n);

    let (_, none) = dropout_forward(&x, 0.0, Mode::Train, &mut rng(52));
    assert!(none.is_none());
    assert_eq!(dropout_backward(None, &w), w);
}

pub fn mse_gradient(c: &mut Checks) {
    let p = random(&[5, 3], 60);
    let t = random(&[5, 3], 61);
    let (_, g) = mse_loss(&p, &t).unwrap();
    c.compare("mse", &g, &numeric(&p, |p| mse_loss(p, &t).unwrap().0));
}

fn tiny_arch(dropout: f64) -> CnnArch {
    CnnArch {
        input_len: 9,
        input_channels: 2,
        conv_channels: vec![3, 3, 4, 4],
        fc_sizes: vec![5, 3],
        outputs: 2,
        dropout,
        leaky_slope: 0.1,
    }
}

pub fn cnn_end_to_end(c: &mut Checks, dropout: f64, seed: u64) {
    let model = CnnModel::<f64>::new(tiny_arch(dropout), &mut rng(seed)).unwrap();
    let x = random(&[4, 9, 2], seed + 1);
    let y = random(&[4, 2], seed + 2);
    let loss = |m: &CnnModel<f64>| {
        let mut m = m.clone();
        let (pred, _) = m.forward_train(&x, &mut rng(seed + 3)).unwrap();
        mse_loss(&pred, &y).unwrap().0
    };
    let mut m = model.clone();
    let (pred, cache) = m.forward_train(&x, &mut rng(seed + 3)).unwrap();
    let (_, gp) = mse_loss(&pred, &y).unwrap();
    let grads = model.backward(&cache, &gp).unwrap();
    assert!(grads.matches(&model.params()));

    let names = model.param_names();
    for (idx, name) in names.iter().enumerate() {
        let n = numeric(model.params()[idx], |p| {
            let mut probe = model.clone();
            *probe.params_mut()[idx] = p.clone();
            loss(&probe)
        });
        c.compare(&format!("cnn {name} (dropout {dropout})"), &grads.tensors[idx], &n);
    }
}

pub fn lstm_bptt(c: &mut Checks, mask: bool, seed: u64) {
    let shape = LstmShape {
        hidden: 4,
        features: 3,
        outputs: 2,
    };
    let mut params = LstmParams::<f64>::new(shape, &mut rng(seed));
    for t in params.params_mut() {
        let noise = random(t.shape(), seed + 1);
        t.add_assign(&noise.scale(0.5)).unwrap();
    }
    let feats = random(&[3, 3], seed + 2);
    let w = [0.8, -1.1];
    let m = if mask {
        readout_mask::<f64, _>(4, 0.3, &mut rng(seed + 3))
    } else {
        None
    };
    let loss = |p: &LstmParams<f64>| {
        let (y, _) = lstm_forward_trace(p, &feats, m.clone()).unwrap();
        y[0] * w[0] + y[1] * w[1]
    };
    let (_, trace) = lstm_forward_trace(&params, &feats, m.clone()).unwrap();
    let grads = lstm_backward(&params, &trace, &w).unwrap();
    for (idx, name) in LstmParams::<f64>::param_names().iter().enumerate() {
        let n = numeric(params.params()[idx], |p| {
            let mut probe = params.clone();
            *probe.params_mut()[idx] = p.clone();
            loss(&probe)
        });
        c.compare(&format!("lstm {name}"), &grads.tensors[idx], &n);
    }
}

/// Every check in the suite.
pub fn run_all() -> Checks {
    let mut c = Checks::default();
    conv1d_gradients(&mut c);
    linear_gradients(&mut c);
    batchnorm_gradients_rank2_and_rank3(&mut c);
    leaky_relu_gradient(&mut c);
    maxpool_gradient_off_ties(&mut c);
    dropout_gradient_with_fixed_mask(&mut c);
    mse_gradient(&mut c);
    cnn_end_to_end(&mut c, 0.0, 70);
    cnn_end_to_end(&mut c, 0.3, 80);
    lstm_bptt(&mut c, false, 90);
    lstm_bptt(&mut c, true, 100);
    c
}
