//! Kernel ridge regression with an RBF kernel, tuned by inner cross-validation.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::r_squared;
use crate::tensor::Tensor;

pub const CV_FOLDS: usize = 5;

/// `logspace(-3, 1, 5)`
pub const GAMMA_GRID: [f64; 5] = [1e-3, 1e-2, 1e-1, 1e0, 1e1];
/// `logspace(-6, 0, 5)`
pub const LAMBDA_GRID: [f64; 5] = [1e-6, 3.162_277_660_168_379_5e-5, 1e-3, 3.162_277_660_168_379e-2, 1e0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrModel {
    /// `[M × p]`
    pub support: Tensor<f64>,
    /// `[M × D]`
    pub coef: Tensor<f64>,
    pub gamma: f64,
    pub lambda: f64,
    pub mean: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * sq_dist(a, b)).exp()
}

fn distances(x: &Tensor<f64>) -> DMatrix<f64> {
    let m = x.shape()[0];
    DMatrix::from_fn(m, m, |i, j| sq_dist(x.row(i), x.row(j)))
}

fn check_xy(x: &Tensor<f64>, y: &Tensor<f64>) -> Result<(usize, usize)> {
    if x.rank() != 2 || y.rank() != 2 || x.shape()[0] != y.shape()[0] {
        return Err(Error::Dimension(format!(
            "KRR needs X [M × p] and Y [M × D], got {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let m = x.shape()[0];
    if m < 2 {
        return Err(Error::InsufficientData(format!("KRR needs ≥ 2 samples, got {m}")));
    }
    Ok((m, y.shape()[1]))
}

fn column_means(y: &Tensor<f64>) -> Vec<f64> {
    let (m, d) = (y.shape()[0], y.shape()[1]);
    let mut mean = vec![0.0; d];
    for row in y.rows() {
        mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    mean
}

/// Solves `(K + λI) α = Y − mean` for the rows in `idx` of a precomputed distance matrix.
fn solve(
    dist: &DMatrix<f64>,
    idx: &[usize],
    y: &Tensor<f64>,
    mean: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let n = idx.len();
    let d = mean.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        let v = (-gamma * dist[(idx[i], idx[j])]).exp();
        if i == j {
            v + lambda
        } else {
            v
        }
    });
    let rhs = DMatrix::from_fn(n, d, |i, c| y.row(idx[i])[c] - mean[c]);
    let chol = k.cholesky().ok_or_else(|| {
        Error::Solver(format!(
            "kernel system is not positive definite (γ = {gamma}, λ = {lambda}); use λ > 0"
        ))
    })?;
    Ok(chol.solve(&rhs))
}

pub fn fit(x: &Tensor<f64>, y: &Tensor<f64>, gamma: f64, lambda: f64) -> Result<KrrModel> {
    let (m, d) = check_xy(x, y)?;
    if !(gamma > 0.0) || !(lambda >= 0.0) {
        return Err(Error::Config(format!(
            "KRR needs γ > 0 and λ ≥ 0, got γ = {gamma}, λ = {lambda}"
        )));
    }
    let dist = distances(x);
    if lambda == 0.0 {
        for i in 0..m {
            if (0..i).any(|j| dist[(i, j)] == 0.0) {
                return Err(Error::Solver(format!(
                    "duplicate training point {i} makes the λ = 0 system singular; use λ > 0"
                )));
            }
        }
    }
    let mean = column_means(y);
    let idx: Vec<usize> = (0..m).collect();
    let alpha = solve(&dist, &idx, y, &mean, gamma, lambda)?;
    Ok(KrrModel {
        support: x.clone(),
        coef: Tensor::from_fn(vec![m, d], |i| alpha[(i / d, i % d)]),
        gamma,
        lambda,
        mean,
    })
}

impl KrrModel {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        let mut out = self.mean.clone();
        for (s, a) in self.support.rows().zip(self.coef.rows()) {
            let kv = rbf(s, x, self.gamma);
            for c in 0..d {
                out[c] += a[c] * kv;
            }
        }
        out
    }

    pub fn predict_batch(&self, x: &Tensor<f64>) -> Vec<Vec<f64>> {
        x.rows().collect::<Vec<_>>().par_iter().map(|r| self.predict(r)).collect()
    }
}

/// Contiguous folds `[floor(i·M/F), floor((i+1)·M/F))`.
fn folds(m: usize, f: usize) -> Vec<std::ops::Range<usize>> {
    (0..f).map(|i| i * m / f..(i + 1) * m / f).collect()
}

/// Mean R² over outputs; outputs whose truth is constant are skipped.
fn mean_r2(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Option<f64> {
    let d = truth.first()?.len();
    let scores: Vec<f64> = (0..d)
        .filter_map(|c| {
            let a: Vec<f64> = truth.iter().map(|r| r[c]).collect();
            let p: Vec<f64> = pred.iter().map(|r| r[c]).collect();
            r_squared(&a, &p).ok()
        })
        .collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub gamma: f64,
    pub lambda: f64,
    pub score: f64,
}

/// Grid search with 5 contiguous inner folds, maximizing mean held-out R².
/// Ties go to the smaller γ, then the larger λ.
pub fn tune(x: &Tensor<f64>, y: &Tensor<f64>) -> Result<TuneResult> {
    let (m, _) = check_xy(x, y)?;
    if m < 2 * CV_FOLDS {
        return Err(Error::InsufficientData(format!(
            "{m} samples are too few for {CV_FOLDS}-fold tuning"
        )));
    }
    let dist = distances(x);
    let grid: Vec<(f64, f64)> = GAMMA_GRID
        .iter()
        .flat_map(|&g| LAMBDA_GRID.iter().rev().map(move |&l| (g, l)))
        .collect();
    let splits = folds(m, CV_FOLDS);
    let scores: Vec<f64> = grid
        .par_iter()
        .map(|&(gamma, lambda)| {
            let mut total = 0.0;
            let mut counted = 0;
            for test in &splits {
                let train: Vec<usize> = (0..m).filter(|i| !test.contains(i)).collect();
                let sub = Tensor::from_rows(
                    &train.iter().map(|&i| y.row(i).to_vec()).collect::<Vec<_>>(),
                )
                .expect("non-empty");
                let mean = column_means(&sub);
                let Ok(alpha) = solve(&dist, &train, y, &mean, gamma, lambda) else {
                    return f64::NEG_INFINITY;
                };
                let pred: Vec<Vec<f64>> = test
                    .clone()
                    .map(|q| {
                        let mut out = mean.clone();
                        for (r, &i) in train.iter().enumerate() {
                            let kv = (-gamma * dist[(i, q)]).exp();
                            for (c, o) in out.iter_mut().enumerate() {
                                *o += alpha[(r, c)] * kv;
                            }
                        }
                        out
                    })
                    .collect();
                let truth: Vec<Vec<f64>> = test.clone().map(|q| y.row(q).to_vec()).collect();
                if let Some(s) = mean_r2(&truth, &pred) {
                    total += s;
                    counted += 1;
                }
            }
            if counted == 0 {
                f64::NEG_INFINITY
            } else {
                total / counted as f64
            }
        })
        .collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    if !scores[best].is_finite() {
        return Err(Error::Solver("no grid point produced a usable fit".into()));
    }
    Ok(TuneResult {
        gamma: grid[best].0,
        lambda: grid[best].1,
        score: scores[best],
    })
}

/// Training-set R² (mean over outputs).
pub fn training_r2(model: &KrrModel, x: &Tensor<f64>, y: &Tensor<f64>) -> Option<f64> {
    let truth: Vec<Vec<f64>> = y.rows().map(|r| r.to_vec()).collect();
    mean_r2(&truth, &model.predict_batch(x))
}
