//! Run configuration as TOML sections: `schedule`, `loss`, `ctmc`, `model`,
//! `train`, `data` and `sample`. Every key has a default, so an empty file
//! is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::Stationary;
use crate::loss::continuous::{AuxKind, CtmcLoss};
use crate::loss::{LossConfig, LossMode};
use crate::model::{Architecture, OptimConfig, DEFAULT_BINS, DEFAULT_FREQUENCIES};
use crate::prob::ProbVector;
use crate::sampler::{GridSpacing, McmcOptions};
use crate::schedule::{NoiseSchedule, ScheduleKind, TimeMode};
use crate::trainer::TrainConfig;

pub const DEFAULT_DISCRETE_T: f64 = 1000.0;
pub const DEFAULT_CONTINUOUS_T: f64 = 1.0;
pub const DEFAULT_COSINE_OFFSET: f64 = 0.008;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    Cosine,
    Linear,
    Exponential,
    ConstantRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub mode: TimeMode,
    pub kind: KindName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    pub clip_beta: bool,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            mode: TimeMode::Discrete,
            kind: KindName::Cosine,
            a: None,
            b: None,
            c: None,
            t_max: None,
            clip_beta: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub mode: LossMode,
    /// Defaults to the mode's own weight when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ce_weight: Option<f64>,
    pub phi_clip: bool,
    pub s_ratio: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = LossConfig::default();
        LossSection {
            mode: d.mode,
            ce_weight: None,
            phi_clip: d.phi_clip,
            s_ratio: d.s_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtmcSection {
    pub loss: CtmcLoss,
    pub aux: AuxKind,
}

impl Default for CtmcSection {
    fn default() -> Self {
        CtmcSection {
            loss: CtmcLoss::SinglePass,
            aux: AuxKind::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    ExactTabular,
    TinyNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub backend: Backend,
    pub bins: usize,
    pub embed: usize,
    pub hidden: usize,
    pub freqs: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            backend: Backend::ExactTabular,
            bins: DEFAULT_BINS,
            embed: 16,
            hidden: 32,
            freqs: DEFAULT_FREQUENCIES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub ema_decay: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let o = OptimConfig::default();
        TrainSection {
            batch_size: 64,
            epochs: 10,
            lr: o.lr,
            momentum: o.momentum,
            ema_decay: o.ema_decay,
            clip_norm: o.clip_norm,
            seed: 0,
            eval_every: 1,
        }
    }
}

/// `"uniform"`, one shared vector, or one vector per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StationarySpec {
    Named(String),
    Shared(Vec<f64>),
    PerElement(Vec<Vec<f64>>),
}

impl StationarySpec {
    pub fn resolve(&self, k: usize, d: usize) -> Result<Stationary> {
        let m = match self {
            StationarySpec::Named(name) if name == "uniform" => Stationary::uniform(k),
            StationarySpec::Named(name) => {
                return Err(Error::Config(format!(
                    "unknown stationary distribution {name:?}"
                )));
            }
            StationarySpec::Shared(v) => Stationary::Shared(ProbVector::new(v.clone())?),
            StationarySpec::PerElement(vs) => Stationary::PerElement(
                vs.iter()
                    .map(|v| ProbVector::new(v.clone()))
                    .collect::<Result<_>>()?,
            ),
        };
        m.validate(k, d)?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub k: usize,
    pub d: usize,
    pub stationary: StationarySpec,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            k: 3,
            d: 2,
            stationary: StationarySpec::Named("uniform".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub steps: usize,
    pub spacing: GridSpacing,
    /// Generate from the EMA weights instead of the raw weights.
    pub use_ema: bool,
    pub mcmc: bool,
    pub mcmc_steps: usize,
    pub mcmc_dt: f64,
    pub mcmc_start: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        let m = McmcOptions::default();
        SampleSection {
            steps: 50,
            spacing: GridSpacing::Uniform,
            use_ema: false,
            mcmc: m.enabled,
            mcmc_steps: m.steps,
            mcmc_dt: m.dn,
            mcmc_start: m.start_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub schedule: ScheduleSection,
    pub loss: LossSection,
    pub ctmc: CtmcSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub sample: SampleSection,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the serialized configuration.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn t_max(&self) -> f64 {
        self.schedule.t_max.unwrap_or(match self.schedule.mode {
            TimeMode::Discrete => DEFAULT_DISCRETE_T,
            TimeMode::Continuous => DEFAULT_CONTINUOUS_T,
        })
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        let t_max = self.t_max();
        let kind = match s.kind {
            KindName::Cosine => ScheduleKind::Cosine {
                a: s.a.unwrap_or(DEFAULT_COSINE_OFFSET),
            },
            KindName::Linear => ScheduleKind::Linear,
            KindName::Exponential => match (s.a, s.b) {
                (None, None) => ScheduleKind::exponential_default(t_max),
                (Some(a), Some(b)) => ScheduleKind::Exponential { a, b },
                _ => {
                    return Err(Error::Config(
                        "exponential schedule needs both a and b, or neither".into(),
                    ))
                }
            },
            KindName::ConstantRate => ScheduleKind::ConstantRate {
                c: s.c
                    .ok_or_else(|| Error::Config("constant_rate schedule needs c".into()))?,
            },
        };
        NoiseSchedule::new(kind, t_max, s.mode)
    }

    pub fn stationary(&self) -> Result<Stationary> {
        self.data.stationary.resolve(self.data.k, self.data.d)
    }

    pub fn architecture(&self) -> Architecture {
        let (k, d, t_max) = (self.data.k, self.data.d, self.t_max());
        let m = &self.model;
        match m.backend {
            Backend::ExactTabular => Architecture::ExactTabular {
                k,
                d,
                bins: m.bins,
                t_max,
            },
            Backend::TinyNet => Architecture::TinyNet {
                k,
                d,
                embed: m.embed,
                hidden: m.hidden,
                freqs: m.freqs,
                t_max,
            },
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        let l = &self.loss;
        LossConfig {
            mode: l.mode,
            ce_weight: l.ce_weight.unwrap_or(l.mode.default_ce_weight()),
            phi_clip: l.phi_clip,
            s_ratio: l.s_ratio,
            ctmc: self.ctmc.loss,
            aux: self.ctmc.aux,
            clip_beta: self.schedule.clip_beta,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            schedule: self.noise_schedule()?,
            loss: self.loss_config(),
            m: self.stationary()?,
            arch: self.architecture(),
            batch_size: t.batch_size,
            epochs: t.epochs,
            optim: OptimConfig {
                lr: t.lr,
                momentum: t.momentum,
                ema_decay: t.ema_decay,
                clip_norm: t.clip_norm,
            },
            seed: t.seed,
            eval_every: t.eval_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mcmc(&self) -> McmcOptions {
        let s = &self.sample;
        McmcOptions {
            enabled: s.mcmc,
            dn: s.mcmc_dt,
            steps: s.mcmc_steps,
            start_step: s.mcmc_start,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
[schedule]
mode = "continuous"
kind = "exponential"
a = 0.2
b = 150
T = 1.0
clip_beta = true

[loss]
mode = "usd3_star"
ce_weight = 0.5
phi_clip = false
s_ratio = 0.9

[ctmc]
loss = "two_pass"
aux = "forward_rate"

[model]
backend = "tiny_net"
embed = 8
hidden = 12
freqs = 4

[train]
batch_size = 32
epochs = 3
lr = 0.05
momentum = 0.9
seed = 7

[data]
k = 4
d = 3
stationary = [[0.1, 0.2, 0.3, 0.4], [0.25, 0.25, 0.25, 0.25], [0.4, 0.3, 0.2, 0.1]]

[sample]
steps = 20
spacing = "geometric"
mcmc = true
"#;

    #[test]
    fn empty_file_uses_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        let tc = c.train_config().unwrap();
        assert_eq!(tc.schedule.t_max(), 1000.0);
        assert_eq!(tc.schedule.mode(), TimeMode::Discrete);
        assert_eq!(tc.loss.ce_weight, 0.001);
        assert_eq!(tc.m, Stationary::uniform(3));
    }

    #[test]
    fn round_trip_is_identity() {
        for text in ["", FULL] {
            let a = Config::parse(text).unwrap();
            let serialized = a.to_toml().unwrap();
            let b = Config::parse(&serialized).unwrap();
            assert_eq!(a, b);
            assert_eq!(serialized, b.to_toml().unwrap());
            assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        }
    }

    #[test]
    fn full_file_resolves() {
        let c = Config::parse(FULL).unwrap();
        let tc = c.train_config().unwrap();
        assert_eq!(
            tc.schedule.kind(),
            ScheduleKind::Exponential { a: 0.2, b: 150.0 }
        );
        assert_eq!(tc.loss.ctmc, CtmcLoss::TwoPass);
        assert_eq!(tc.loss.ce_weight, 0.5);
        assert!(matches!(
            tc.arch,
            Architecture::TinyNet {
                k: 4,
                d: 3,
                embed: 8,
                ..
            }
        ));
        assert!(matches!(tc.m, Stationary::PerElement(ref v) if v.len() == 3));
        assert!(c.mcmc().enabled);
        assert_eq!(c.sample.spacing, GridSpacing::Geometric);
    }

    #[test]
    fn stationary_forms() {
        let shared = Config::parse("[data]\nk = 2\nd = 2\nstationary = [0.3, 0.7]\n").unwrap();
        assert!(matches!(
            shared.stationary().unwrap(),
            Stationary::Shared(_)
        ));
        let bad_len = Config::parse("[data]\nk = 3\nstationary = [0.3, 0.7]\n").unwrap();
        assert!(bad_len.stationary().is_err());
        let bad_name = Config::parse("[data]\nstationary = \"absorbing\"\n").unwrap();
        assert!(bad_name.stationary().is_err());
        let not_normalized = Config::parse("[data]\nk = 2\nstationary = [0.3, 0.8]\n").unwrap();
        assert!(not_normalized.stationary().is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(Config::parse("[train]\nlearning_rate = 1.0\n").is_err());
        assert!(Config::parse("[schedule]\nkind = \"sigmoid\"\n").is_err());
        let c = Config::parse("[schedule]\nkind = \"constant_rate\"\n").unwrap();
        assert!(c.noise_schedule().is_err());
        let c = Config::parse("[schedule]\nkind = \"exponential\"\na = 1.0\n").unwrap();
        assert!(c.noise_schedule().is_err());
        let c = Config::parse("[schedule]\nT = 10.5\n").unwrap();
        assert!(c.noise_schedule().is_err());
        let c = Config::parse("[train]\nbatch_size = 0\n").unwrap();
        assert!(c.train_config().is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = Config::default();
        let mut b = a.clone();
        b.train.seed = 1;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
        assert_eq!(a.digest().unwrap().len(), 64);
    }
}
