//! Seeded synthetic sessions for the four wrist protocols.
//!
//! Each active DoF follows `A_d · sin(2π f t + φ_d)`. The rectified angle drives
//! agonist channels on one half-wave and antagonist channels on the other, and
//! each channel carries band-limited (20–450 Hz) noise whose amplitude follows
//! that drive. Broadband noise and a 50 Hz mains tone are added on top.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::filter::{FilterChain, FilterSpec};
use crate::dsp::{Dof, Protocol, SemgRecording, DEFAULT_ANGLE_FS, DEFAULT_CHANNELS, DEFAULT_EMG_FS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHANNELS: usize = DEFAULT_CHANNELS;

/// Half-wave that drives each channel, per DoF (`true` = positive angles).
/// Every column splits the channels three and three; the columns overlap so
/// multi-DoF sessions mix sources on every electrode.
pub const POLARITY: [[bool; 3]; CHANNELS] = [
    [true, true, false],
    [true, false, false],
    [true, false, false],
    [false, true, true],
    [false, false, true],
    [false, true, true],
];

/// Channel sensitivity per DoF (F-E, P-S, R-U). P-S is the weakest source.
pub const DEFAULT_GAIN: [[f64; 3]; CHANNELS] = [
    [1.0, 0.15, 0.70],
    [0.9, 0.45, 0.20],
    [0.6, 0.30, 0.55],
    [1.0, 0.40, 0.25],
    [0.8, 0.15, 0.70],
    [0.5, 0.35, 0.45],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub protocol: Protocol,
    pub duration_s: f64,
    pub contraction_hz: f64,
    /// Peak angle in degrees for F-E, P-S, R-U.
    pub amplitude_deg: [f64; 3],
    pub gain: [[f64; 3]; CHANNELS],
    /// Fraction of the two neighbouring channels mixed into each channel.
    pub crosstalk: f64,
    /// Mean channel power over broadband noise power, in dB.
    pub snr_db: f64,
    /// Mains tone level relative to the channel signal.
    pub mains_db: f64,
    pub seed: u64,
    pub session_id: String,
    pub emg_fs: f64,
    pub angle_fs: f64,
}

impl SynthConfig {
    pub fn new(protocol: Protocol, duration_s: f64, seed: u64) -> Self {
        Self {
            protocol,
            duration_s,
            contraction_hz: 0.1,
            amplitude_deg: [60.0, 50.0, 25.0],
            gain: DEFAULT_GAIN,
            crosstalk: 0.1,
            snr_db: 20.0,
            mains_db: -20.0,
            seed,
            session_id: format!("{}-s{seed}", protocol.to_string().to_lowercase()),
            emg_fs: DEFAULT_EMG_FS,
            angle_fs: DEFAULT_ANGLE_FS,
        }
    }

    /// The 180 s session length used for full-scale runs.
    pub fn full(protocol: Protocol, seed: u64) -> Self {
        Self::new(protocol, 180.0, seed)
    }

    /// The 60 s session length used for desk-scale runs.
    pub fn desk(protocol: Protocol, seed: u64) -> Self {
        Self::new(protocol, 60.0, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.contraction_hz > 0.0 && self.contraction_hz < 1.0) {
            return Err(Error::Config(format!(
                "contraction frequency {} Hz must lie in (0, 1)",
                self.contraction_hz
            )));
        }
        if !(self.duration_s >= 1.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!(
                "duration {} s is too short",
                self.duration_s
            )));
        }
        for &dof in self.protocol.dofs() {
            let a = self.amplitude_deg[dof.index()];
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config(format!(
                    "protocol {} needs a positive {} amplitude, got {a}",
                    self.protocol,
                    dof.name()
                )));
            }
            if self.gain.iter().all(|row| row[dof.index()] == 0.0) {
                return Err(Error::Config(format!(
                    "no channel is sensitive to {} in protocol {}",
                    dof.name(),
                    self.protocol
                )));
            }
        }
        if self.gain.iter().flatten().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::Config("gain entries must be finite and ≥ 0".into()));
        }
        if !(0.0..1.0).contains(&self.crosstalk) {
            return Err(Error::Config(format!(
                "crosstalk {} must lie in [0, 1)",
                self.crosstalk
            )));
        }
        if !(self.emg_fs > 900.0 && self.angle_fs > 0.0) {
            return Err(Error::Config(format!(
                "sEMG rate {} Hz cannot carry the 20–450 Hz band",
                self.emg_fs
            )));
        }
        if !self.snr_db.is_finite() || !self.mains_db.is_finite() {
            return Err(Error::Config("noise levels must be finite".into()));
        }
        Ok(())
    }

    fn phase(&self, dof: Dof) -> f64 {
        match self.protocol {
            Protocol::P4 => dof.index() as f64 * 2.0 * std::f64::consts::PI / 3.0,
            _ => 0.0,
        }
    }

    /// Angle of one DoF at time `t`; zero when the DoF is inactive.
    pub fn angle(&self, dof: Dof, t: f64) -> f64 {
        if !self.protocol.dofs().contains(&dof) {
            return 0.0;
        }
        let a = self.amplitude_deg[dof.index()];
        a * (2.0 * std::f64::consts::PI * self.contraction_hz * t + self.phase(dof)).sin()
    }

    /// Noise-free amplitude envelope of channel `n` at time `t`.
    pub fn drive(&self, n: usize, t: f64) -> f64 {
        self.protocol
            .dofs()
            .iter()
            .map(|&dof| {
                let d = dof.index();
                let theta = self.angle(dof, t);
                let active = if POLARITY[n][d] { theta > 0.0 } else { theta < 0.0 };
                if active {
                    self.gain[n][d] * theta.abs() / self.amplitude_deg[d]
                } else {
                    0.0
                }
            })
            .sum()
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn channel_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn generate(config: &SynthConfig) -> Result<SemgRecording> {
    config.validate()?;
    let fs = config.emg_fs;
    let t_e = (config.duration_s * fs).round() as usize;
    let t_a = (config.duration_s * config.angle_fs).round() as usize;
    let band = FilterChain::from_specs(
        &[FilterSpec::high_pass(4, 20.0), FilterSpec::low_pass(4, 450.0)],
        fs,
    )?;

    let raw: Vec<Vec<f64>> = (0..CHANNELS)
        .into_par_iter()
        .map(|n| {
            let mut rng = channel_rng(config.seed, n as u64 + 1);
            let white: Vec<f64> = (0..t_e).map(|_| StandardNormal.sample(&mut rng)).collect();
            let carrier = band.filter(&white);
            let scale = 1.0 / rms(&carrier).max(f64::MIN_POSITIVE);
            carrier
                .iter()
                .enumerate()
                .map(|(i, w)| config.drive(n, i as f64 / fs) * w * scale)
                .collect()
        })
        .collect();

    let c = config.crosstalk;
    let mixed: Vec<Vec<f64>> = (0..CHANNELS)
        .map(|n| {
            let left = &raw[(n + CHANNELS - 1) % CHANNELS];
            let right = &raw[(n + 1) % CHANNELS];
            (0..t_e)
                .map(|i| (1.0 - c) * raw[n][i] + 0.5 * c * (left[i] + right[i]))
                .collect()
        })
        .collect();

    // Noise and mains levels are relative to the mean channel power, so a
    // channel whose muscles stay silent still carries a noise floor.
    let level = (mixed.iter().map(|s| rms(s).powi(2)).sum::<f64>() / CHANNELS as f64).sqrt();
    let noisy: Vec<Vec<f64>> = mixed
        .into_par_iter()
        .enumerate()
        .map(|(n, signal)| {
            let mut rng = channel_rng(config.seed, CHANNELS as u64 + n as u64 + 1);
            let noise_rms = level * 10f64.powf(-config.snr_db / 20.0);
            let mains_amp = std::f64::consts::SQRT_2 * level * 10f64.powf(config.mains_db / 20.0);
            let mains_phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            signal
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let t = i as f64 / fs;
                    let e: f64 = StandardNormal.sample(&mut rng);
                    s + noise_rms * e
                        + mains_amp * (2.0 * std::f64::consts::PI * 50.0 * t + mains_phase).sin()
                })
                .collect()
        })
        .collect();

    let emg = Tensor::from_fn(vec![t_e, CHANNELS], |i| noisy[i % CHANNELS][i / CHANNELS]);
    let dofs = config.protocol.dofs();
    let angles = Tensor::from_fn(vec![t_a, dofs.len()], |i| {
        config.angle(dofs[i % dofs.len()], (i / dofs.len()) as f64 / config.angle_fs)
    });
    SemgRecording::new(
        emg,
        angles,
        fs,
        config.angle_fs,
        0.0,
        0.0,
        config.protocol,
        config.session_id.clone(),
    )
}

/// Configuration of the second session: a fresh seed and each gain entry scaled by U(0.8, 1.2).
pub fn second_session(config: &SynthConfig) -> SynthConfig {
    let seed_b = config
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(0xD1B5_4A32_D192_ED03);
    let mut rng = channel_rng(seed_b, 0);
    let mut b = config.clone();
    b.seed = seed_b;
    for g in b.gain.iter_mut().flatten() {
        *g *= rng.random_range(0.8..1.2);
    }
    b.session_id = format!("{}-b", config.session_id);
    b
}

/// Two sessions of the same protocol with a shifted gain matrix in the second.
pub fn generate_session_pair(config: &SynthConfig) -> Result<(SemgRecording, SemgRecording)> {
    let mut a = config.clone();
    a.session_id = format!("{}-a", config.session_id);
    Ok((generate(&a)?, generate(&second_session(config))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(protocol: Protocol, seed: u64) -> SynthConfig {
        SynthConfig::new(protocol, 20.0, seed)
    }

    #[test]
    fn silent_channels_keep_a_noise_floor() {
        let rec = generate(&SynthConfig::new(Protocol::P1, 2.0, 1)).unwrap();
        for n in 0..CHANNELS {
            let ch = rec.channel(n);
            assert!(rms(&ch) > 1e-3, "channel {n} is silent");
        }
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn protocol_columns() {
        for (p, dofs) in [
            (Protocol::P1, vec![Dof::Fe]),
            (Protocol::P2, vec![Dof::Ps]),
            (Protocol::P3, vec![Dof::Ru]),
            (Protocol::P4, Dof::ALL.to_vec()),
        ] {
            let rec = generate(&short(p, 1)).unwrap();
            assert_eq!(rec.dof_count(), dofs.len());
            assert_eq!(rec.channels(), 6);
            assert_eq!(rec.emg_len(), 20 * 1024);
            assert_eq!(rec.angle_len(), 20 * 100);
            let cfg = short(p, 1);
            for dof in Dof::ALL {
                let peak = (0..2000)
                    .map(|j| cfg.angle(dof, j as f64 / 100.0).abs())
                    .fold(0.0, f64::max);
                assert_eq!(peak > 0.0, dofs.contains(&dof), "{p} {dof:?}");
            }
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let a = generate(&short(Protocol::P4, 7)).unwrap();
        let b = generate(&short(Protocol::P4, 7)).unwrap();
        assert_eq!(a, b);
        let c = generate(&short(Protocol::P4, 8)).unwrap();
        assert_ne!(a.emg(), c.emg());
    }

    #[test]
    fn angles_bounded_and_periodic() {
        let cfg = short(Protocol::P4, 2);
        for dof in Dof::ALL {
            let a = cfg.amplitude_deg[dof.index()];
            for j in 0..1000 {
                let t = j as f64 * 0.0173;
                let v = cfg.angle(dof, t);
                assert!(v.abs() <= a + 1e-12);
                assert!((v - cfg.angle(dof, t + 10.0)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn envelope_tracks_drive() {
        for p in [Protocol::P1, Protocol::P4] {
            let cfg = short(p, 3);
            let rec = generate(&cfg).unwrap();
            let hop = 51;
            let win = 102;
            for n in 0..CHANNELS {
                let x = rec.channel(n);
                let mut env = Vec::new();
                let mut drive = Vec::new();
                let mut start = 0;
                while start + win <= x.len() {
                    let seg = &x[start..start + win];
                    env.push(seg.iter().map(|v| v.abs()).sum::<f64>() / win as f64);
                    drive.push(cfg.drive(n, (start + win / 2) as f64 / 1024.0));
                    start += hop;
                }
                let r = pearson(&env, &drive);
                assert!(r > 0.8, "{p} channel {n}: corr {r}");
            }
        }
    }

    #[test]
    fn mixing_is_invertible_for_all_dofs() {
        // Amplitudes are linear in the six half-wave envelopes; the map must be full rank.
        let m = nalgebra::DMatrix::from_fn(6, 6, |n, j| {
            let (d, positive) = (j / 2, j % 2 == 0);
            if POLARITY[n][d] == positive {
                DEFAULT_GAIN[n][d]
            } else {
                0.0
            }
        });
        let smallest = m.singular_values().min();
        assert!(smallest > 0.1, "smallest singular value {smallest}");
    }

    #[test]
    fn weakest_dof_is_pronation_supination() {
        let col = |d: usize| DEFAULT_GAIN.iter().map(|r| r[d]).sum::<f64>();
        assert!(col(1) < col(2) && col(2) < col(0));
    }

    #[test]
    fn session_pair_differs() {
        let cfg = short(Protocol::P1, 5);
        let b = second_session(&cfg);
        assert_ne!(b.seed, cfg.seed);
        for (ga, gb) in cfg.gain.iter().flatten().zip(b.gain.iter().flatten()) {
            let r = gb / ga;
            assert!((0.8..1.2).contains(&r));
        }
        let (ra, rb) = generate_session_pair(&cfg).unwrap();
        assert_ne!(ra.emg(), rb.emg());
        assert_eq!(ra.angles(), rb.angles());
    }

    #[test]
    fn invalid_configs() {
        let mut c = short(Protocol::P1, 0);
        c.contraction_hz = 1.5;
        assert!(matches!(generate(&c), Err(Error::Config(_))));
        let mut c = short(Protocol::P2, 0);
        c.amplitude_deg[1] = 0.0;
        assert!(matches!(generate(&c), Err(Error::Config(_))));
        let mut c = short(Protocol::P1, 0);
        c.gain[0][0] = -1.0;
        assert!(matches!(generate(&c), Err(Error::Config(_))));
    }
}
