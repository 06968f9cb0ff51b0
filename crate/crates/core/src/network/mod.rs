//! Spiral-convolution encoder/decoder for identity transfer.
//!
//! The encoder maps a target mesh to an identity code. The decoder broadcasts
//! the code over the coarsest level and walks back up the hierarchy,
//! concatenating the source mesh's coordinates before every convolution; its
//! output is a per-vertex offset added to the source.

mod layers;
mod model;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multires::Hierarchy;

pub use layers::{
    gather, pool, scatter, spiral_conv, spiral_conv_backward, spiral_conv_traced, unpool, Activation, ConvShape,
    ConvTrace,
};
pub use model::{
    decode, decode_backward, decode_traced, encode, encode_backward, encode_traced, forward_transfer, DecoderTrace,
    EncoderTrace,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Hierarchy level the network reads and writes.
    pub input_level: usize,
    /// Encoder convolution widths, one per level starting at `input_level`.
    pub encoder_channels: Vec<usize>,
    pub latent_dim: usize,
    /// Scale applied to the initial weights of the offset layer.
    pub output_init_scale: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_level: 0,
            encoder_channels: vec![16, 32, 64, 128],
            latent_dim: 64,
            output_init_scale: 0.1,
        }
    }
}

impl ArchConfig {
    pub fn depth(&self) -> usize {
        self.encoder_channels.len()
    }

    /// Decoder convolution output widths, coarse to fine; the last is 3.
    pub fn decoder_channels(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.encoder_channels.iter().rev().skip(1).copied().collect();
        out.push(3);
        out
    }

    pub fn level_of_conv(&self, i: usize) -> usize {
        self.input_level + i
    }

    pub fn validate(&self, hierarchy: &Hierarchy) -> Result<()> {
        if self.encoder_channels.is_empty() || self.latent_dim == 0 {
            return Err(Error::Invalid(
                "network needs at least one layer and a latent size".into(),
            ));
        }
        let needed = self.input_level + self.depth();
        if needed > hierarchy.level_count() {
            return Err(Error::Invalid(format!(
                "architecture needs {needed} hierarchy levels, hierarchy has {}",
                hierarchy.level_count()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Every tensor lives in one flat buffer; the layout names the slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl ParamLayout {
    fn build(arch: &ArchConfig, spiral_length: usize) -> Self {
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut add = |name: String, shape: Vec<usize>| {
            let spec = TensorSpec {
                name,
                shape,
                offset: total,
            };
            total += spec.len();
            tensors.push(spec);
        };
        let s = spiral_length;
        let mut c_in = 3;
        for (i, &c_out) in arch.encoder_channels.iter().enumerate() {
            add(format!("enc.conv{i}.weight"), vec![c_out, s * c_in]);
            add(format!("enc.conv{i}.bias"), vec![c_out]);
            c_in = c_out;
        }
        add("enc.fc.weight".into(), vec![arch.latent_dim, c_in]);
        add("enc.fc.bias".into(), vec![arch.latent_dim]);
        add("dec.fc.weight".into(), vec![c_in, arch.latent_dim]);
        add("dec.fc.bias".into(), vec![c_in]);
        for (i, c_out) in arch.decoder_channels().into_iter().enumerate() {
            add(format!("dec.conv{i}.weight"), vec![c_out, s * (c_in + 3)]);
            add(format!("dec.conv{i}.bias"), vec![c_out]);
            c_in = c_out;
        }
        Self { tensors, total }
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub spiral_length: usize,
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ModelParams {
    /// Uniform fan-in initialisation, zero biases.
    pub fn init(arch: ArchConfig, hierarchy: &Hierarchy, seed: u64) -> Result<Self> {
        arch.validate(hierarchy)?;
        let spiral_length = hierarchy.spiral_length();
        let layout = ParamLayout::build(&arch, spiral_length);
        let mut values = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = format!("dec.conv{}.weight", arch.depth() - 1);
        for t in &layout.tensors {
            if t.name.ends_with(".bias") {
                continue;
            }
            let fan_in = t.shape[1] as f64;
            let mut bound = 1.0 / fan_in.sqrt();
            if t.name == last {
                bound *= arch.output_init_scale;
            }
            for v in &mut values[t.range()] {
                *v = bound * rng.gen_range(-1.0..1.0);
            }
        }
        Ok(Self {
            arch,
            spiral_length,
            layout,
            values,
        })
    }

    /// Zero-filled parameters of the given architecture.
    pub fn empty(arch: ArchConfig, spiral_length: usize) -> Self {
        let layout = ParamLayout::build(&arch, spiral_length);
        let values = vec![0.0; layout.total];
        Self {
            arch,
            spiral_length,
            layout,
            values,
        }
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    pub fn tensor(&self, name: &str) -> &[f64] {
        let spec = self.layout.get(name).unwrap_or_else(|| panic!("no tensor {name}"));
        &self.values[spec.range()]
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut [f64] {
        let spec = self
            .layout
            .get(name)
            .unwrap_or_else(|| panic!("no tensor {name}"))
            .clone();
        &mut self.values[spec.range()]
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Identity code produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn lerp(&self, other: &LatentCode, t: f64) -> LatentCode {
        LatentCode(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect(),
        )
    }
}
