//! Network configuration documents (TOML).
//!
//! ```toml
//! name = "net"
//! in_channels = 4
//! precision = "fp32"      # or "fp16"
//! seed = 7                # weight initialization
//!
//! [[layers]]
//! kind = "conv"           # conv | inverse | pointwise
//! name = "down1"
//! kernel_size = 2
//! stride = 2
//! in_channels = 4
//! out_channels = 8
//! reuse_key = "down1"     # optional; strided layers default to their name
//! index = "grid"          # optional: grid | hash
//!
//! [[layers]]
//! kind = "pointwise"
//! name = "relu1"
//! op = "relu"             # relu | bias | batch_norm
//!
//! [[layers]]
//! kind = "inverse"
//! name = "up1"
//! reuse_key = "down1"
//! kernel_size = 2
//! stride = 2
//! in_channels = 8
//! out_channels = 4
//! ```

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sparseconv::mapping::IndexKind;
use sparseconv::{LayerSpec, Precision};

/// The bundled two-stage U-Net analog used by examples and tests.
pub const TOY_NETWORK: &str = include_str!("../examples/minkunet_toy.toml");

fn default_dim() -> usize {
    3
}

fn default_stride() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub name: String,
    pub in_channels: usize,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    pub layers: Vec<LayerConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointwiseKind {
    Relu,
    Bias,
    BatchNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerConfig {
    Conv {
        name: String,
        kernel_size: usize,
        #[serde(default = "default_stride")]
        stride: u32,
        in_channels: usize,
        out_channels: usize,
        #[serde(default)]
        reuse_key: Option<String>,
        #[serde(default)]
        index: Option<IndexKind>,
    },
    Inverse {
        name: String,
        reuse_key: String,
        kernel_size: usize,
        stride: u32,
        in_channels: usize,
        out_channels: usize,
    },
    Pointwise {
        name: String,
        op: PointwiseKind,
    },
}

impl LayerConfig {
    pub fn name(&self) -> &str {
        match self {
            LayerConfig::Conv { name, .. } | LayerConfig::Inverse { name, .. } | LayerConfig::Pointwise { name, .. } => name,
        }
    }

    /// The engine layer for convolution kinds.
    pub fn spec(&self) -> Option<LayerSpec> {
        match self {
            LayerConfig::Conv { name, kernel_size, stride, in_channels, out_channels, reuse_key, index } => Some(LayerSpec {
                reuse_key: reuse_key.clone(),
                index_kind: *index,
                ..LayerSpec::conv(name, *kernel_size, *stride, *in_channels, *out_channels)
            }),
            LayerConfig::Inverse { name, reuse_key, kernel_size, stride, in_channels, out_channels } => {
                Some(LayerSpec::inverse(name, reuse_key, *kernel_size, *stride, *in_channels, *out_channels))
            }
            LayerConfig::Pointwise { .. } => None,
        }
    }
}

impl NetworkConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: NetworkConfig = toml::from_str(s).context("parsing network config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `toy` names the bundled network; anything else is a path.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if name_or_path == "toy" {
            return Self::from_toml_str(TOY_NETWORK);
        }
        let text = std::fs::read_to_string(Path::new(name_or_path)).with_context(|| format!("reading {name_or_path}"))?;
        Self::from_toml_str(&text).with_context(|| format!("in {name_or_path}"))
    }

    /// Channel chain, unique names, and reuse keys naming earlier strided layers
    /// of matching shape.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            bail!("network `{}` has no layers", self.name);
        }
        if self.in_channels == 0 {
            bail!("in_channels must be positive");
        }
        let mut names = HashMap::new();
        let mut keys: HashMap<String, (usize, u32)> = HashMap::new();
        let mut channels = self.in_channels;
        for (i, layer) in self.layers.iter().enumerate() {
            if names.insert(layer.name().to_string(), i).is_some() {
                bail!("duplicate layer name `{}`", layer.name());
            }
            if let Some(spec) = layer.spec() {
                spec.validate().map_err(|e| anyhow!("layer `{}`: {e}", spec.name))?;
                if spec.c_in != channels {
                    bail!("layer `{}` expects {} input channels but receives {channels}", spec.name, spec.c_in);
                }
                if spec.c_out == 0 {
                    bail!("layer `{}` has no output channels", spec.name);
                }
                if spec.transposed {
                    let key = spec.reuse_key.as_deref().unwrap_or_default();
                    let &(k, s) = keys
                        .get(key)
                        .ok_or_else(|| anyhow!("layer `{}` reuses `{key}`, which no earlier strided layer provides", spec.name))?;
                    if k != spec.kernel_size || s != spec.stride {
                        bail!("layer `{}` has K={} s={} but `{key}` has K={k} s={s}", spec.name, spec.kernel_size, spec.stride);
                    }
                } else if spec.stride > 1 {
                    if let Some(key) = spec.cache_key() {
                        keys.insert(key.to_string(), (spec.kernel_size, spec.stride));
                    }
                }
                channels = spec.c_out;
            }
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.layers.iter().filter_map(|l| l.spec()).next_back().map_or(self.in_channels, |s| s.c_out)
    }

    /// Names of convolution layers, the entries a strategy file covers.
    pub fn conv_layer_names(&self) -> Vec<String> {
        self.layers.iter().filter_map(|l| l.spec()).map(|s| s.name).collect()
    }
}
