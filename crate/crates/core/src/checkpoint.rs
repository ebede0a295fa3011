//! JSON checkpoints. Parameter arrays are stored as hex strings of
//! little-endian `f64` bytes so a save/load/save cycle is byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Stationary;
use crate::model::{Architecture, ModelParams, TrainState};
use crate::schedule::{NoiseSchedule, TimeMode};
use crate::trainer::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub mode: TimeMode,
    pub schedule: NoiseSchedule,
    pub k: usize,
    pub d: usize,
    pub m: Stationary,
    pub arch: Architecture,
    pub params: String,
    pub ema: String,
    pub config_digest: String,
    pub seed: u64,
}

pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    hex::encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes =
        hex::decode(text).map_err(|e| Error::Checkpoint(format!("bad hex payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "payload of {} bytes is not a whole number of f64s",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

impl Checkpoint {
    pub fn new(cfg: &TrainConfig, state: &TrainState, config_digest: String) -> Self {
        Checkpoint {
            schema_version: SCHEMA_VERSION,
            mode: cfg.schedule.mode(),
            schedule: cfg.schedule,
            k: cfg.k(),
            d: cfg.d(),
            m: cfg.m.clone(),
            arch: cfg.arch,
            params: encode_f64s(&state.params.weights),
            ema: encode_f64s(&state.ema),
            config_digest,
            seed: cfg.seed,
        }
    }

    fn decode(&self, payload: &str) -> Result<ModelParams> {
        let weights = decode_f64s(payload)?;
        if weights.len() != self.arch.num_params() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.arch.num_params(),
                weights.len()
            )));
        }
        Ok(ModelParams {
            arch: self.arch,
            weights,
        })
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        self.decode(&self.params)
    }

    pub fn ema_params(&self) -> Result<ModelParams> {
        self.decode(&self.ema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.mode != self.schedule.mode() {
            return Err(Error::Checkpoint("mode disagrees with schedule".into()));
        }
        if self.k != self.arch.k() || self.d != self.arch.d() {
            return Err(Error::Checkpoint("K or D disagrees with the model".into()));
        }
        self.arch.validate()?;
        self.m.validate(self.k, self.d)?;
        self.model_params()?;
        self.ema_params()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s =
            serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::parse(&text)
    }
}
