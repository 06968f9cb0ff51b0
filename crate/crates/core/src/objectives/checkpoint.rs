use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use crate::container::{Container, Section};
use crate::error::{Error, Result};
use crate::network::{ArchConfig, ModelParams};

#[derive(Serialize, Deserialize)]
struct Meta {
    arch: ArchConfig,
    spiral_length: usize,
    epoch: usize,
    config_hash: String,
}

/// Model weights plus the run that produced them. Parameters and optimizer
/// moments are stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub epoch: usize,
    /// Configuration text echoed verbatim.
    pub config: String,
    pub config_hash: String,
}

fn to_f32(v: &[f64]) -> Section {
    Section::F32(v.iter().map(|&x| x as f32).collect())
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        let meta = Meta {
            arch: self.params.arch.clone(),
            spiral_length: self.params.spiral_length,
            epoch: self.epoch,
            config_hash: self.config_hash.clone(),
        };
        c.push(
            "meta",
            Section::Bytes(serde_json::to_vec(&meta).expect("meta serialises")),
        );
        c.push("config", Section::Bytes(self.config.clone().into_bytes()));
        for t in &self.params.layout.tensors {
            c.push(format!("param/{}", t.name), to_f32(&self.params.values[t.range()]));
        }
        if let Some(a) = &self.adam {
            c.push("adam/m", to_f32(&a.m));
            c.push("adam/v", to_f32(&a.v));
            c.push("adam/step", Section::U64(vec![a.step]));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: Meta =
            serde_json::from_slice(c.bytes("meta")?).map_err(|e| Error::Format(format!("checkpoint meta: {e}")))?;
        let config = String::from_utf8(c.bytes("config")?.to_vec())
            .map_err(|_| Error::Format("checkpoint config is not UTF-8".into()))?;
        let mut params = ModelParams::empty(meta.arch, meta.spiral_length);
        for t in params.layout.tensors.clone() {
            let src = c.f32s(&format!("param/{}", t.name))?;
            if src.len() != t.len() {
                return Err(Error::Format(format!(
                    "tensor {} holds {} values, expected {}",
                    t.name,
                    src.len(),
                    t.len()
                )));
            }
            for (d, &s) in params.values[t.range()].iter_mut().zip(src) {
                *d = s as f64;
            }
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        let adam = if c.names().any(|n| n == "adam/m") {
            let m: Vec<f64> = c.f32s("adam/m")?.iter().map(|&x| x as f64).collect();
            let v: Vec<f64> = c.f32s("adam/v")?.iter().map(|&x| x as f64).collect();
            let step = *c
                .u64s("adam/step")?
                .first()
                .ok_or_else(|| Error::Format("empty adam/step".into()))?;
            if m.len() != params.param_count() || v.len() != params.param_count() {
                return Err(Error::Format("optimizer state does not match the parameters".into()));
            }
            Some(AdamState { m, v, step })
        } else {
            None
        };
        Ok(Self {
            params,
            adam,
            epoch: meta.epoch,
            config,
            config_hash: meta.config_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    /// The same checkpoint after a save/load round trip.
    pub fn quantized(&self) -> Result<Self> {
        Self::from_container(&Container::from_bytes(&self.to_container().to_bytes())?)
    }
}
