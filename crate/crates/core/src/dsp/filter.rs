//! IIR filter design and causal filtering with biquad cascades.
//!
//! Butterworth sections are obtained by the bilinear transform with frequency
//! pre-warping, so the designed magnitude at the cutoff is exactly 1/√2.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterSpec {
    ButterHigh { order: usize, cutoff_hz: f64 },
    ButterLow { order: usize, cutoff_hz: f64 },
    Notch { center_hz: f64, bandwidth_hz: f64 },
}

impl FilterSpec {
    pub const fn high_pass(order: usize, cutoff_hz: f64) -> Self {
        FilterSpec::ButterHigh { order, cutoff_hz }
    }

    pub const fn low_pass(order: usize, cutoff_hz: f64) -> Self {
        FilterSpec::ButterLow { order, cutoff_hz }
    }

    pub const fn notch(center_hz: f64, bandwidth_hz: f64) -> Self {
        FilterSpec::Notch {
            center_hz,
            bandwidth_hz,
        }
    }
}

/// One second-order section, `a0` normalized to 1.
///
/// First-order sections are stored with `b2 == a2 == 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + self.b1 * z_inv + self.b2 * z2) / (1.0 + self.a1 * z_inv + self.a2 * z2)
    }

    /// Roots of `z² + a1 z + a2` (a single root at `-a1` for first-order sections).
    fn poles(&self) -> Vec<Complex64> {
        if self.a2 == 0.0 {
            return vec![Complex64::new(-self.a1, 0.0)];
        }
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        vec![(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    sections: Vec<Biquad>,
}

impl BiquadCascade {
    pub fn new(sections: Vec<Biquad>) -> Self {
        Self { sections }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / fs);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64, fs: f64) -> f64 {
        self.response(freq_hz, fs).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(Biquad::poles).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Single causal pass from rest (transposed direct form II per section).
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let mut signal = input.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for x in signal.iter_mut() {
                let y = s.b0 * *x + z1;
                z1 = s.b1 * *x - s.a1 * y + z2;
                z2 = s.b2 * *x - s.a2 * y;
                *x = y;
            }
        }
        signal
    }
}

fn check_frequency(what: &str, hz: f64, fs: f64) -> Result<()> {
    if !(fs > 0.0) {
        return Err(Error::Design(format!("sampling rate {fs} must be positive")));
    }
    if !(hz > 0.0 && hz < fs / 2.0) {
        return Err(Error::Design(format!(
            "{what} {hz} Hz must lie in (0, {}) for fs = {fs} Hz",
            fs / 2.0
        )));
    }
    Ok(())
}

fn butterworth(order: usize, cutoff_hz: f64, fs: f64, high_pass: bool) -> Result<BiquadCascade> {
    if order == 0 {
        return Err(Error::Design("filter order must be at least 1".into()));
    }
    check_frequency("cutoff", cutoff_hz, fs)?;
    let k = (PI * cutoff_hz / fs).tan();
    let k2 = k * k;
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for pair in 1..=order / 2 {
        let q = 1.0 / (2.0 * ((2 * pair - 1) as f64 * PI / (2 * order) as f64).sin());
        let norm = 1.0 / (1.0 + k / q + k2);
        let (b0, b1) = if high_pass {
            (norm, -2.0 * norm)
        } else {
            (k2 * norm, 2.0 * k2 * norm)
        };
        sections.push(Biquad {
            b0,
            b1,
            b2: b0,
            a1: 2.0 * (k2 - 1.0) * norm,
            a2: (1.0 - k / q + k2) * norm,
        });
    }
    if order % 2 == 1 {
        let norm = 1.0 / (1.0 + k);
        let (b0, b1) = if high_pass {
            (norm, -norm)
        } else {
            (k * norm, k * norm)
        };
        sections.push(Biquad {
            b0,
            b1,
            b2: 0.0,
            a1: (k - 1.0) * norm,
            a2: 0.0,
        });
    }
    Ok(BiquadCascade::new(sections))
}

fn notch(center_hz: f64, bandwidth_hz: f64, fs: f64) -> Result<BiquadCascade> {
    check_frequency("notch center", center_hz, fs)?;
    if !(bandwidth_hz > 0.0 && bandwidth_hz < center_hz) {
        return Err(Error::Design(format!(
            "notch bandwidth {bandwidth_hz} Hz must lie in (0, {center_hz})"
        )));
    }
    let w0 = 2.0 * PI * center_hz / fs;
    let alpha = w0.sin() * bandwidth_hz / (2.0 * center_hz);
    let a0 = 1.0 + alpha;
    let c = -2.0 * w0.cos() / a0;
    Ok(BiquadCascade::new(vec![Biquad {
        b0: 1.0 / a0,
        b1: c,
        b2: 1.0 / a0,
        a1: c,
        a2: (1.0 - alpha) / a0,
    }]))
}

pub fn design_filter(spec: &FilterSpec, fs: f64) -> Result<BiquadCascade> {
    match *spec {
        FilterSpec::ButterHigh { order, cutoff_hz } => butterworth(order, cutoff_hz, fs, true),
        FilterSpec::ButterLow { order, cutoff_hz } => butterworth(order, cutoff_hz, fs, false),
        FilterSpec::Notch {
            center_hz,
            bandwidth_hz,
        } => notch(center_hz, bandwidth_hz, fs),
    }
}

/// Ordered filter chain applied to every channel.
#[derive(Debug, Clone)]
pub struct FilterChain {
    stages: Vec<BiquadCascade>,
}

impl FilterChain {
    pub const HIGH_PASS: FilterSpec = FilterSpec::high_pass(3, 20.0);
    pub const LOW_PASS: FilterSpec = FilterSpec::low_pass(3, 450.0);
    pub const MAINS_NOTCH: FilterSpec = FilterSpec::notch(50.0, 2.0);

    pub fn from_specs(specs: &[FilterSpec], fs: f64) -> Result<Self> {
        let stages = specs
            .iter()
            .map(|s| design_filter(s, fs))
            .collect::<Result<_>>()?;
        Ok(Self { stages })
    }

    /// High-pass 20 Hz, low-pass 450 Hz, then the 50 Hz notch.
    pub fn standard(fs: f64) -> Result<Self> {
        Self::from_specs(&[Self::HIGH_PASS, Self::LOW_PASS, Self::MAINS_NOTCH], fs)
    }

    pub fn stages(&self) -> &[BiquadCascade] {
        &self.stages
    }

    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        self.stages
            .iter()
            .fold(input.to_vec(), |signal, stage| stage.filter(&signal))
    }

    pub fn magnitude(&self, freq_hz: f64, fs: f64) -> f64 {
        self.stages
            .iter()
            .map(|s| s.magnitude(freq_hz, fs))
            .product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 1024.0;

    fn db(x: f64) -> f64 {
        20.0 * x.log10()
    }

    /// Peak amplitude over the last second of a filtered unit sine.
    fn steady_amplitude(filter: impl Fn(&[f64]) -> Vec<f64>, freq: f64) -> f64 {
        let n = (FS * 10.0) as usize;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / FS).sin())
            .collect();
        let y = filter(&x);
        y[n - FS as usize..].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn butterworth_cutoffs_are_minus_3db() {
        let hp = design_filter(&FilterSpec::high_pass(3, 20.0), FS).unwrap();
        let lp = design_filter(&FilterSpec::low_pass(3, 450.0), FS).unwrap();
        let target = db(std::f64::consts::FRAC_1_SQRT_2);
        assert!((db(hp.magnitude(20.0, FS)) - target).abs() < 0.5);
        assert!((db(lp.magnitude(450.0, FS)) - target).abs() < 0.5);
        assert!(hp.is_stable() && lp.is_stable());
        assert_eq!(hp.sections().len(), 2);
    }

    #[test]
    fn low_pass_passband_probe() {
        let lp = design_filter(&FilterSpec::low_pass(3, 450.0), FS).unwrap();
        let amp = steady_amplitude(|x| lp.filter(x), 100.0);
        assert!(db(amp).abs() < 1.0, "{amp}");
    }

    #[test]
    fn notch_attenuates_mains_by_20db() {
        let n = design_filter(&FilterSpec::notch(50.0, 2.0), FS).unwrap();
        assert!(n.is_stable());
        let amp = steady_amplitude(|x| n.filter(x), 50.0);
        assert!(db(amp) <= -20.0, "{amp}");
        assert!(db(n.magnitude(50.0, FS)) < -20.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(design_filter(&FilterSpec::low_pass(3, 512.0), FS).is_err());
        assert!(design_filter(&FilterSpec::low_pass(0, 100.0), FS).is_err());
        assert!(design_filter(&FilterSpec::high_pass(2, -1.0), FS).is_err());
        assert!(design_filter(&FilterSpec::notch(50.0, 0.0), FS).is_err());
    }

    #[test]
    fn standard_chain_probes() {
        let chain = FilterChain::standard(FS).unwrap();
        let mains = steady_amplitude(|x| chain.filter(x), 50.0);
        assert!(mains <= 0.1, "{mains}");
        let pass = steady_amplitude(|x| chain.filter(x), 100.0);
        assert!((0.89..=1.12).contains(&pass), "{pass}");

        let offset = 3.0;
        let y = chain.filter(&vec![offset; 4 * FS as usize]);
        let tail = y[3 * FS as usize..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(tail < 1e-3 * offset, "{tail}");
    }

    #[test]
    fn filtering_is_linear() {
        let chain = FilterChain::standard(FS).unwrap();
        let x: Vec<f64> = (0..2048).map(|i| ((i * 37 % 101) as f64 - 50.0) / 13.0).collect();
        let scaled: Vec<f64> = x.iter().map(|v| -2.5 * v).collect();
        let a = chain.filter(&x);
        let b = chain.filter(&scaled);
        for (u, v) in a.iter().zip(&b) {
            assert!((-2.5 * u - v).abs() < 1e-9);
        }
    }
}
