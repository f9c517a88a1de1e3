//! Classical per-channel sEMG features (MAV, RMS, VAR, AR(4)), z-scoring and PCA.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const AR_ORDER: usize = 4;
/// Features per channel: MAV, RMS, VAR and the AR coefficients.
pub const FEATURES_PER_CHANNEL: usize = 3 + AR_ORDER;
pub const PCA_COMPONENTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelFeatures {
    pub mav: f64,
    pub rms: f64,
    pub var: f64,
    /// `x_t = Σ a_i x_{t-i} + e_t`
    pub ar: [f64; AR_ORDER],
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandcraftedVector {
    pub channels: Vec<ChannelFeatures>,
    /// Set when at least one channel's AR system was singular.
    pub degenerate: bool,
}

impl HandcraftedVector {
    /// Channel-major concatenation, 7 values per channel.
    pub fn to_vec(&self) -> Vec<f64> {
        self.channels
            .iter()
            .flat_map(|c| [c.mav, c.rms, c.var, c.ar[0], c.ar[1], c.ar[2], c.ar[3]])
            .collect()
    }
}

/// Yule-Walker AR fit via Levinson-Durbin on the biased, mean-removed
/// autocorrelation. Returns `None` when the system is singular.
pub fn ar_coefficients(x: &[f64], order: usize) -> Option<Vec<f64>> {
    let n = x.len();
    if n <= order {
        return None;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let r: Vec<f64> = (0..=order)
        .map(|lag| {
            (0..n - lag)
                .map(|t| (x[t] - mean) * (x[t + lag] - mean))
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if r[0] <= 1e-24 * (1.0 + scale * scale) {
        return None;
    }
    let mut a = vec![0.0; order];
    let mut err = r[0];
    for m in 0..order {
        let acc = r[m + 1] - (0..m).map(|i| a[i] * r[m - i]).sum::<f64>();
        let k = acc / err;
        let prev = a.clone();
        a[m] = k;
        for i in 0..m {
            a[i] = prev[i] - k * prev[m - 1 - i];
        }
        err *= 1.0 - k * k;
        if err <= 1e-15 * r[0] {
            return None;
        }
    }
    Some(a)
}

fn channel_features(x: &[f64]) -> (ChannelFeatures, bool) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let mav = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    let ms = x.iter().map(|v| v * v).sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let (ar, degenerate) = match ar_coefficients(x, AR_ORDER) {
        Some(a) => ([a[0], a[1], a[2], a[3]], false),
        None => ([0.0; AR_ORDER], true),
    };
    (
        ChannelFeatures {
            mav,
            rms: ms.sqrt(),
            var,
            ar,
        },
        degenerate,
    )
}

/// Features of a `[samples × N]` window.
pub fn extract_features(window: &Tensor<f64>) -> Result<HandcraftedVector> {
    if window.rank() != 2 {
        return Err(Error::Dimension(format!(
            "window must be [samples × channels], got {:?}",
            window.shape()
        )));
    }
    let n = window.shape()[1];
    let mut degenerate = false;
    let channels = (0..n)
        .map(|c| {
            let col: Vec<f64> = window.rows().map(|r| r[c]).collect();
            let (f, d) = channel_features(&col);
            degenerate |= d;
            f
        })
        .collect();
    Ok(HandcraftedVector {
        channels,
        degenerate,
    })
}

/// Per-column z-score fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InsufficientData("no rows to standardize".into()))?;
        let d = first.len();
        let m = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (acc, v) in mean.iter_mut().zip(r) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut std = vec![0.0; d];
        for r in rows {
            for ((acc, v), mu) in std.iter_mut().zip(r).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        // Constant columns pass through centered but unscaled.
        std.iter_mut().for_each(|v| {
            *v = (*v / m).sqrt();
            if *v < 1e-12 {
                *v = 1.0;
            }
        });
        Ok(Self { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Principal axes of a training feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// `[d × r]`, orthonormal columns, `r ≤ n_components`.
    pub components: Tensor<f64>,
    /// Variances along the retained components, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Output width; projections are zero-padded when fewer components were retained.
    pub n_components: usize,
}

impl PcaBasis {
    pub fn retained(&self) -> usize {
        self.explained_variance.len()
    }

    /// `componentsᵀ · (v − mean)`, zero-padded to `n_components`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        let r = self.retained();
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let c = self.components.data();
        let mut out = vec![0.0; self.n_components];
        for (j, o) in out.iter_mut().enumerate().take(r) {
            *o = (0..d).map(|i| c[i * r + j] * centered[i]).sum();
        }
        out
    }

    /// Maps a projection back to feature space.
    pub fn reconstruct(&self, p: &[f64]) -> Vec<f64> {
        let r = self.retained();
        let c = self.components.data();
        self.mean
            .iter()
            .enumerate()
            .map(|(i, m)| m + (0..r).map(|j| c[i * r + j] * p[j]).sum::<f64>())
            .collect()
    }
}

/// Fits a PCA basis; needs more rows than requested components.
pub fn fit_pca(rows: &[Vec<f64>], n_components: usize) -> Result<PcaBasis> {
    if rows.len() <= n_components {
        return Err(Error::InsufficientData(format!(
            "PCA with {n_components} components needs at least {} rows, got {}",
            n_components + 1,
            rows.len()
        )));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("ragged feature rows".into()));
    }
    let m = rows.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / m;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = 1e-10 * top.max(f64::MIN_POSITIVE);
    let kept: Vec<usize> = order
        .into_iter()
        .take(n_components.min(d))
        .filter(|&k| eig.eigenvalues[k] > tol)
        .collect();
    if kept.len() < n_components {
        warn!(
            "feature matrix has rank {} < {n_components}; padding projections with zeros",
            kept.len()
        );
    }
    let r = kept.len().max(1);
    let components = Tensor::from_fn(vec![d, r], |idx| {
        let (i, j) = (idx / r, idx % r);
        kept.get(j).map_or(0.0, |&k| eig.eigenvectors[(i, k)])
    });
    Ok(PcaBasis {
        mean,
        components,
        explained_variance: kept.iter().map(|&k| eig.eigenvalues[k]).collect(),
        n_components,
    })
}

/// Top-2 principal-axis coordinates, for scatter export.
pub fn project_2d(rows: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let basis = fit_pca(rows, 2)?;
    Ok(rows
        .iter()
        .map(|r| {
            let p = basis.project(r);
            [p[0], p[1]]
        })
        .collect())
}
