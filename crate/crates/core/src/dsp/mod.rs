//! sEMG preprocessing: filtering, min-max scaling, sliding windows and the
//! temporal / spectral input matrices fed to the CNN.

pub mod filter;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use filter::{design_filter, Biquad, BiquadCascade, FilterChain, FilterSpec};

pub const DEFAULT_EMG_FS: f64 = 1024.0;
pub const DEFAULT_ANGLE_FS: f64 = 100.0;
pub const DEFAULT_CHANNELS: usize = 6;
/// FFT length giving a 101-bin one-sided spectrum.
pub const DEFAULT_N_FFT: usize = 200;

/// Wrist degree of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dof {
    Fe,
    Ps,
    Ru,
}

impl Dof {
    pub const ALL: [Dof; 3] = [Dof::Fe, Dof::Ps, Dof::Ru];

    pub fn name(self) -> &'static str {
        match self {
            Dof::Fe => "fe",
            Dof::Ps => "ps",
            Dof::Ru => "ru",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    P1,
    P2,
    P3,
    P4,
}

impl Protocol {
    /// Active degrees of freedom, in output order.
    pub fn dofs(self) -> &'static [Dof] {
        match self {
            Protocol::P1 => &[Dof::Fe],
            Protocol::P2 => &[Dof::Ps],
            Protocol::P3 => &[Dof::Ru],
            Protocol::P4 => &Dof::ALL,
        }
    }

    pub fn dof_count(self) -> usize {
        self.dofs().len()
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "P1" => Ok(Protocol::P1),
            "P2" => Ok(Protocol::P2),
            "P3" => Ok(Protocol::P3),
            "P4" => Ok(Protocol::P4),
            other => Err(Error::Config(format!(
                "unknown protocol `{other}` (expected P1..P4)"
            ))),
        }
    }
}

/// One recording session: raw sEMG plus synchronized wrist angles.
///
/// Both streams are uniformly sampled; sample `i` of the sEMG stream sits at
/// `emg_start + i / emg_fs` seconds, and likewise for the angles.
#[derive(Debug, Clone, PartialEq)]
pub struct SemgRecording {
    emg: Tensor<f64>,
    angles: Tensor<f64>,
    emg_fs: f64,
    angle_fs: f64,
    emg_start: f64,
    angle_start: f64,
    protocol: Protocol,
    session_id: String,
}

impl SemgRecording {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        emg: Tensor<f64>,
        angles: Tensor<f64>,
        emg_fs: f64,
        angle_fs: f64,
        emg_start: f64,
        angle_start: f64,
        protocol: Protocol,
        session_id: impl Into<String>,
    ) -> Result<Self> {
        if emg.rank() != 2 || angles.rank() != 2 {
            return Err(Error::Dimension(format!(
                "recording needs 2-D emg and angle tensors, got {:?} and {:?}",
                emg.shape(),
                angles.shape()
            )));
        }
        if angles.shape()[1] != protocol.dof_count() {
            return Err(Error::Dimension(format!(
                "protocol {protocol} has {} active DoF but angles have {} columns",
                protocol.dof_count(),
                angles.shape()[1]
            )));
        }
        if !(emg_fs > 0.0 && angle_fs > 0.0) {
            return Err(Error::Data(format!(
                "sampling rates must be positive (emg {emg_fs}, angles {angle_fs})"
            )));
        }
        Ok(Self {
            emg,
            angles,
            emg_fs,
            angle_fs,
            emg_start,
            angle_start,
            protocol,
            session_id: session_id.into(),
        })
    }

    pub fn emg(&self) -> &Tensor<f64> {
        &self.emg
    }

    pub fn angles(&self) -> &Tensor<f64> {
        &self.angles
    }

    pub fn emg_fs(&self) -> f64 {
        self.emg_fs
    }

    pub fn angle_fs(&self) -> f64 {
        self.angle_fs
    }

    pub fn emg_start(&self) -> f64 {
        self.emg_start
    }

    pub fn angle_start(&self) -> f64 {
        self.angle_start
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn emg_len(&self) -> usize {
        self.emg.shape()[0]
    }

    pub fn angle_len(&self) -> usize {
        self.angles.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.emg.shape()[1]
    }

    pub fn dof_count(&self) -> usize {
        self.angles.shape()[1]
    }

    pub fn emg_time(&self, i: usize) -> f64 {
        self.emg_start + i as f64 / self.emg_fs
    }

    pub fn angle_time(&self, j: usize) -> f64 {
        self.angle_start + j as f64 / self.angle_fs
    }

    /// Copy with the sEMG samples replaced (same shape).
    pub fn with_emg(&self, emg: Tensor<f64>) -> Result<Self> {
        if emg.shape() != self.emg.shape() {
            return Err(Error::Dimension(format!(
                "replacement emg {:?} differs from {:?}",
                emg.shape(),
                self.emg.shape()
            )));
        }
        Ok(Self {
            emg,
            ..self.clone()
        })
    }

    pub fn with_angles(&self, angles: Tensor<f64>) -> Result<Self> {
        Self::new(
            self.emg.clone(),
            angles,
            self.emg_fs,
            self.angle_fs,
            self.emg_start,
            self.angle_start,
            self.protocol,
            self.session_id.clone(),
        )
    }

    /// Column `c` of the sEMG matrix.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.emg.rows().map(|r| r[c]).collect()
    }

    /// Angles linearly interpolated at time `t`, clamped to the recorded span.
    pub fn angle_at(&self, t: f64) -> Vec<f64> {
        let pos = (t - self.angle_start) * self.angle_fs;
        let last = self.angle_len() - 1;
        if pos <= 0.0 {
            return self.angles.row(0).to_vec();
        }
        if pos >= last as f64 {
            return self.angles.row(last).to_vec();
        }
        let j = pos.floor() as usize;
        let frac = pos - j as f64;
        self.angles
            .row(j)
            .iter()
            .zip(self.angles.row(j + 1))
            .map(|(a, b)| a + frac * (b - a))
            .collect()
    }

    /// Sub-recording of sEMG samples `[start, end)` and the angle samples whose
    /// timestamps fall inside the same time span.
    pub fn slice_samples(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.emg_len() {
            return Err(Error::InsufficientData(format!(
                "cannot slice samples {start}..{end} of {}",
                self.emg_len()
            )));
        }
        let t0 = self.emg_time(start);
        let t1 = self.emg_time(end);
        let eps = 1e-9;
        let first = (0..self.angle_len()).find(|&j| self.angle_time(j) >= t0 - eps);
        let past = (0..self.angle_len()).find(|&j| self.angle_time(j) >= t1 - eps);
        let first = first.ok_or_else(|| {
            Error::InsufficientData(format!("no angle samples after t = {t0:.3} s"))
        })?;
        let past = past.unwrap_or(self.angle_len());
        if past <= first {
            return Err(Error::InsufficientData(format!(
                "no angle samples in [{t0:.3}, {t1:.3}) s"
            )));
        }
        Self::new(
            self.emg.slice(0, start..end)?,
            self.angles.slice(0, first..past)?,
            self.emg_fs,
            self.angle_fs,
            t0,
            self.angle_time(first),
            self.protocol,
            self.session_id.clone(),
        )
    }
}

/// Causal filter chain applied independently to every channel.
pub fn apply_filter_chain(rec: &SemgRecording, chain: &FilterChain) -> Result<SemgRecording> {
    if !rec.emg().all_finite() {
        return Err(Error::Data("sEMG contains non-finite samples".into()));
    }
    let (t, n) = (rec.emg_len(), rec.channels());
    let filtered: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|c| chain.filter(&rec.channel(c)))
        .collect();
    let emg = Tensor::from_fn(vec![t, n], |i| filtered[i % n][i / n]);
    rec.with_emg(emg)
}

/// Standard chain (20 Hz high-pass, 450 Hz low-pass, 50 Hz notch) at the recording's rate.
pub fn apply_standard_filters(rec: &SemgRecording) -> Result<SemgRecording> {
    apply_filter_chain(rec, &FilterChain::standard(rec.emg_fs())?)
}

/// Per-channel min/max fitted on a training partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn fit_normalizer(train: &SemgRecording) -> Result<NormalizationStats> {
    let n = train.channels();
    let mut min = vec![f64::INFINITY; n];
    let mut max = vec![f64::NEG_INFINITY; n];
    for row in train.emg().rows() {
        for (c, &v) in row.iter().enumerate() {
            min[c] = min[c].min(v);
            max[c] = max[c].max(v);
        }
    }
    for c in 0..n {
        if !(max[c] > min[c]) {
            return Err(Error::DegenerateChannel {
                channel: c,
                value: min[c],
            });
        }
    }
    Ok(NormalizationStats { min, max })
}

pub fn apply_normalizer(stats: &NormalizationStats, rec: &SemgRecording) -> Result<SemgRecording> {
    let n = rec.channels();
    if stats.min.len() != n {
        return Err(Error::Dimension(format!(
            "normalizer fitted on {} channels, recording has {n}",
            stats.min.len()
        )));
    }
    let mut emg = rec.emg().clone();
    for (i, v) in emg.data_mut().iter_mut().enumerate() {
        let c = i % n;
        *v = (*v - stats.min[c]) / (stats.max[c] - stats.min[c]);
    }
    rec.with_emg(emg)
}

/// A raw window of sEMG samples with its causally aligned label.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    pub start_sample: usize,
    /// Timestamp of the window's last sample.
    pub end_time: f64,
    /// `[window_samples × N]`
    pub samples: Tensor<f64>,
    pub label: Vec<f64>,
}

pub fn window_count(total: usize, window: usize, hop: usize) -> usize {
    if window > total || hop == 0 {
        0
    } else {
        (total - window) / hop + 1
    }
}

pub fn segment_windows(
    rec: &SemgRecording,
    window_samples: usize,
    hop_samples: usize,
) -> Result<Vec<RawWindow>> {
    if window_samples == 0 || hop_samples == 0 {
        return Err(Error::Config("window and hop must be positive".into()));
    }
    if window_samples > rec.emg_len() {
        return Err(Error::InsufficientData(format!(
            "window of {window_samples} samples exceeds recording length {}",
            rec.emg_len()
        )));
    }
    let count = window_count(rec.emg_len(), window_samples, hop_samples);
    (0..count)
        .map(|w| {
            let start = w * hop_samples;
            let end_time = rec.emg_time(start + window_samples - 1);
            Ok(RawWindow {
                start_sample: start,
                end_time,
                samples: rec.emg().slice(0, start..start + window_samples)?,
                label: rec.angle_at(end_time),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixMode {
    Temporal,
    Spectral,
}

impl fmt::Display for MatrixMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixMode::Temporal => "temporal",
            MatrixMode::Spectral => "spectral",
        })
    }
}

impl FromStr for MatrixMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temporal" => Ok(MatrixMode::Temporal),
            "spectral" => Ok(MatrixMode::Spectral),
            other => Err(Error::Config(format!(
                "unknown matrix mode `{other}` (expected spectral or temporal)"
            ))),
        }
    }
}

/// One CNN input frame, `1 × L × N`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMatrix {
    pub mode: MatrixMode,
    pub values: Tensor<f64>,
    pub window_start_sample: usize,
    pub end_time: f64,
    pub label: Vec<f64>,
}

impl InputMatrix {
    pub fn len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Builds input matrices; holds the FFT plan so it can be reused across windows.
#[derive(Clone)]
pub struct MatrixBuilder {
    mode: MatrixMode,
    n_fft: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for MatrixBuilder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixBuilder")
            .field("mode", &self.mode)
            .field("n_fft", &self.n_fft)
            .finish()
    }
}

impl MatrixBuilder {
    pub fn new(mode: MatrixMode, n_fft: usize) -> Self {
        Self {
            mode,
            n_fft,
            fft: FftPlanner::new().plan_fft_forward(n_fft),
        }
    }

    /// Matrix length L produced for windows of `window_samples`.
    pub fn output_len(&self, window_samples: usize) -> usize {
        match self.mode {
            MatrixMode::Temporal => window_samples,
            MatrixMode::Spectral => self.n_fft / 2 + 1,
        }
    }

    /// `[L × N]` values for a `[window_samples × N]` window.
    pub fn values(&self, window: &Tensor<f64>) -> Result<Tensor<f64>> {
        if window.rank() != 2 {
            return Err(Error::Dimension(format!(
                "window must be [samples × channels], got {:?}",
                window.shape()
            )));
        }
        let (w, n) = (window.shape()[0], window.shape()[1]);
        match self.mode {
            MatrixMode::Temporal => Ok(window.clone()),
            MatrixMode::Spectral => {
                if w > self.n_fft {
                    return Err(Error::Dimension(format!(
                        "window of {w} samples exceeds n_fft = {}",
                        self.n_fft
                    )));
                }
                let bins = self.n_fft / 2 + 1;
                let mut out = vec![0.0; bins * n];
                let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
                for c in 0..n {
                    buf.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
                    for (z, row) in buf.iter_mut().zip(window.rows()) {
                        z.re = row[c];
                    }
                    self.fft.process(&mut buf);
                    for (l, z) in buf.iter().take(bins).enumerate() {
                        out[l * n + c] = z.norm();
                    }
                }
                Tensor::new(vec![bins, n], out)
            }
        }
    }

    pub fn build(&self, window: &RawWindow) -> Result<InputMatrix> {
        let values = self.values(&window.samples)?;
        let shape = [1, values.shape()[0], values.shape()[1]];
        Ok(InputMatrix {
            mode: self.mode,
            values: values.reshape(shape)?,
            window_start_sample: window.start_sample,
            end_time: window.end_time,
            label: window.label.clone(),
        })
    }
}

/// Convenience wrapper using the default FFT length.
pub fn build_matrix(window: &RawWindow, mode: MatrixMode) -> Result<InputMatrix> {
    MatrixBuilder::new(mode, DEFAULT_N_FFT).build(window)
}

/// Window geometry and matrix mode for one pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DspConfig {
    pub window_samples: usize,
    pub hop_samples: usize,
    pub n_fft: usize,
    pub mode: MatrixMode,
}

impl DspConfig {
    /// Millisecond settings rounded down to whole samples (100 ms / 50 ms → 102 / 51 at 1024 Hz).
    pub fn from_millis(window_ms: f64, hop_ms: f64, fs: f64, mode: MatrixMode) -> Result<Self> {
        let window_samples = (window_ms * fs / 1000.0).floor() as usize;
        let hop_samples = (hop_ms * fs / 1000.0).floor() as usize;
        if window_samples == 0 || hop_samples == 0 {
            return Err(Error::Config(format!(
                "window {window_ms} ms / hop {hop_ms} ms round to zero samples at {fs} Hz"
            )));
        }
        let n_fft = DEFAULT_N_FFT.max(window_samples);
        Ok(Self {
            window_samples,
            hop_samples,
            n_fft,
            mode,
        })
    }

    pub fn matrix_len(&self) -> usize {
        match self.mode {
            MatrixMode::Temporal => self.window_samples,
            MatrixMode::Spectral => self.n_fft / 2 + 1,
        }
    }

    /// Samples needed for `k` consecutive windows.
    pub fn samples_for_windows(&self, k: usize) -> usize {
        self.window_samples + k.saturating_sub(1) * self.hop_samples
    }
}

/// Filters with the standard chain, then normalizes with `stats`.
pub fn condition(rec: &SemgRecording, stats: &NormalizationStats) -> Result<SemgRecording> {
    apply_normalizer(stats, &apply_standard_filters(rec)?)
}

/// Filter, normalize, segment and build matrices for one partition.
pub fn prepare_matrices(
    rec: &SemgRecording,
    stats: &NormalizationStats,
    cfg: &DspConfig,
) -> Result<(Vec<RawWindow>, Vec<InputMatrix>)> {
    let conditioned = condition(rec, stats)?;
    let windows = segment_windows(&conditioned, cfg.window_samples, cfg.hop_samples)?;
    let builder = MatrixBuilder::new(cfg.mode, cfg.n_fft);
    let matrices = windows
        .par_iter()
        .map(|w| builder.build(w))
        .collect::<Result<Vec<_>>>()?;
    Ok((windows, matrices))
}
