//! Training configuration and its TOML form.
//!
//! A config file may name a `preset` (`paper` or `desk`); any other key
//! overrides the preset value.
//!
//! ```toml
//! preset = "desk"
//! protocol = "P1"
//! matrix_mode = "spectral"
//! seed = 7
//!
//! [cnn]
//! epochs = 5
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp::{DspConfig, MatrixMode, Protocol};
use crate::error::{Error, Result};
use crate::lstm::DEFAULT_TIME_STEPS;
use crate::optim::OptimizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected paper or desk)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// When set, the data must match this protocol.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol>,
    pub matrix_mode: MatrixMode,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub k: usize,
    pub cnn: StageConfig,
    pub lstm: StageConfig,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl TrainingConfig {
    /// Full-scale settings: 50 CNN epochs, 100 LSTM epochs.
    pub fn paper() -> Self {
        Self {
            protocol: None,
            matrix_mode: MatrixMode::Spectral,
            window_ms: 100.0,
            hop_ms: 50.0,
            k: DEFAULT_TIME_STEPS,
            cnn: StageConfig {
                epochs: 50,
                batch: 128,
                lr0: 1e-4,
            },
            lstm: StageConfig {
                epochs: 100,
                batch: 64,
                lr0: 1e-3,
            },
            dropout: 0.3,
            leaky_slope: 0.1,
            seed: 0,
        }
    }

    /// Desk-scale settings: 5 CNN epochs, 10 LSTM epochs.
    pub fn desk() -> Self {
        let mut c = Self::paper();
        c.cnn.epochs = 5;
        c.lstm.epochs = 10;
        c
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("window_ms", self.window_ms)?;
        positive("hop_ms", self.hop_ms)?;
        positive("cnn.lr0", self.cnn.lr0)?;
        positive("lstm.lr0", self.lstm.lr0)?;
        if self.k == 0 {
            return Err(Error::Config("k must be ≥ 1".into()));
        }
        for (name, stage) in [("cnn", &self.cnn), ("lstm", &self.lstm)] {
            if stage.epochs == 0 || stage.batch == 0 {
                return Err(Error::Config(format!(
                    "{name}.epochs and {name}.batch must be ≥ 1"
                )));
            }
        }
        if self.cnn.batch < 2 {
            return Err(Error::Config(
                "cnn.batch must be ≥ 2 for batch normalization".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky_slope {} must lie in [0, 1)",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    pub fn dsp(&self, emg_fs: f64) -> Result<DspConfig> {
        DspConfig::from_millis(self.window_ms, self.hop_ms, emg_fs, self.matrix_mode)
    }

    pub fn cnn_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig::sgdm(self.cnn.lr0)
    }

    pub fn lstm_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig::adam(self.lstm.lr0)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_preset(text, None)
    }

    /// Like [`Self::from_toml_str`], but `preset`, when given, replaces the
    /// file's own preset as the base that the file's keys override.
    pub fn from_toml_with_preset(text: &str, preset: Option<Preset>) -> Result<Self> {
        let mut raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        raw.preset = preset.or(raw.preset);
        let cfg = raw.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_preset(path, None)
    }

    pub fn load_with_preset(path: &Path, preset: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_with_preset(&text, preset).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl fmt::Display for TrainingConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let protocol = self
            .protocol
            .map(|p| p.to_string())
            .unwrap_or_else(|| "from data".into());
        write!(
            f,
            "protocol={protocol} matrix_mode={} window_ms={} hop_ms={} k={} \
             cnn.epochs={} cnn.batch={} cnn.lr0={} lstm.epochs={} lstm.batch={} lstm.lr0={} \
             dropout={} leaky_slope={} seed={}",
            self.matrix_mode,
            self.window_ms,
            self.hop_ms,
            self.k,
            self.cnn.epochs,
            self.cnn.batch,
            self.cnn.lr0,
            self.lstm.epochs,
            self.lstm.batch,
            self.lstm.lr0,
            self.dropout,
            self.leaky_slope,
            self.seed
        )
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    epochs: Option<usize>,
    batch: Option<usize>,
    lr0: Option<f64>,
}

impl RawStage {
    fn apply(self, base: &mut StageConfig) {
        if let Some(v) = self.epochs {
            base.epochs = v;
        }
        if let Some(v) = self.batch {
            base.batch = v;
        }
        if let Some(v) = self.lr0 {
            base.lr0 = v;
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<Preset>,
    protocol: Option<Protocol>,
    matrix_mode: Option<MatrixMode>,
    window_ms: Option<f64>,
    hop_ms: Option<f64>,
    k: Option<usize>,
    #[serde(default)]
    cnn: RawStage,
    #[serde(default)]
    lstm: RawStage,
    dropout: Option<f64>,
    leaky_slope: Option<f64>,
    seed: Option<u64>,
}

impl RawConfig {
    fn resolve(self) -> TrainingConfig {
        let mut c = TrainingConfig::preset(self.preset.unwrap_or(Preset::Paper));
        c.protocol = self.protocol.or(c.protocol);
        c.matrix_mode = self.matrix_mode.unwrap_or(c.matrix_mode);
        c.window_ms = self.window_ms.unwrap_or(c.window_ms);
        c.hop_ms = self.hop_ms.unwrap_or(c.hop_ms);
        c.k = self.k.unwrap_or(c.k);
        self.cnn.apply(&mut c.cnn);
        self.lstm.apply(&mut c.lstm);
        c.dropout = self.dropout.unwrap_or(c.dropout);
        c.leaky_slope = self.leaky_slope.unwrap_or(c.leaky_slope);
        c.seed = self.seed.unwrap_or(c.seed);
        c
    }
}
