use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::TrainConfig;
use crate::error::{Error, Result};
use crate::features::Mode;
use crate::pursuit::PursuitConfig;
use crate::signal_io::{LengthFit, MurmurClass, SynthSpec, DEFAULT_SAMPLE_RATE};

/// Segment attribute that groups segments for joint decomposition or for
/// group-aware folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum GroupKey {
    RecordingId,
    Location,
}

/// The bundled synthetic dataset: one [`SynthSpec`] per class, class `i`
/// seeded with `seed + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub per_class: usize,
    pub carrier_band: (f64, f64),
    /// `null` means noiseless.
    pub noise_snr_db: Option<f64>,
    pub sample_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            per_class: 200,
            carrier_band: (25.0, 400.0),
            noise_snr_db: Some(20.0),
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

impl SynthConfig {
    pub fn specs(&self, seed: u64, length: usize) -> Vec<SynthSpec> {
        MurmurClass::ALL
            .iter()
            .zip(0u64..)
            .map(|(&class, i)| SynthSpec {
                carrier_band: self.carrier_band,
                noise_snr_db: self.noise_snr_db.unwrap_or(f64::INFINITY),
                length,
                sample_rate: self.sample_rate,
                ..SynthSpec::new(class, seed.wrapping_add(i), self.per_class)
            })
            .collect()
    }
}

/// Everything `pipeline` needs, in one JSON document. Missing fields take
/// their defaults; unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Real data. When absent the synthetic dataset is generated instead.
    pub manifest: Option<PathBuf>,
    pub synth: SynthConfig,
    pub m: usize,
    pub fit: LengthFit,
    pub zeta: usize,
    pub residual_tol: f64,
    pub joint_by: Option<GroupKey>,
    pub mode: Mode,
    pub max_normalize: bool,
    pub heads: usize,
    pub d_head: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub clip_norm: Option<f64>,
    pub k: usize,
    pub group_by: Option<GroupKey>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            seed: 7,
            out_dir: PathBuf::from("run"),
            manifest: None,
            synth: SynthConfig::default(),
            m: 512,
            fit: LengthFit::Resample,
            zeta: 511,
            residual_tol: 0.0,
            joint_by: None,
            mode: Mode::SquaredMagnitude,
            max_normalize: false,
            heads: 4,
            d_head: 32,
            learning_rate: train.learning_rate,
            momentum: train.momentum,
            batch_size: train.batch_size,
            epochs: train.epochs,
            warmup_epochs: train.warmup_epochs,
            clip_norm: train.clip_norm,
            k: 5,
            group_by: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            warmup_epochs: self.warmup_epochs,
            clip_norm: self.clip_norm,
        }
    }

    pub fn pursuit_config(&self) -> PursuitConfig {
        PursuitConfig {
            zeta: self.zeta,
            residual_tol: self.residual_tol,
            ..PursuitConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::dictionary::levels_for(self.m)?;
        self.pursuit_config().validate(self.m)?;
        self.train_config().validate()?;
        crate::classifier::Arch::new(self.m, self.heads, self.d_head)?;
        if self.k < 2 {
            return Err(Error::InvalidK(self.k));
        }
        if self.manifest.is_none() {
            for spec in self.synth.specs(self.seed, self.m) {
                spec.validate()?;
            }
        }
        Ok(())
    }
}
