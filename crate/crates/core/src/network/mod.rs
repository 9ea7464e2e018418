//! The invertible network: dense blocks, affine coupling blocks, the
//! conditional latent block and whole-network forward and inverse passes.
//!
//! Forward: Haar analysis, low band halved into pixel range, `blocks`
//! coupling blocks on the `(3, 9)` channel split, then the high branch is
//! normalized by the latent block conditioned on the (detached) LR output.
//! Inverse runs the same steps backwards.

mod checkpoint;
mod graph;
mod weights;

use thiserror::Error;

use crate::config::{ConfigError, KvFile};
use crate::tensor::{Real, Tensor, TensorError, Var};

pub use checkpoint::{
    checkpoint_bytes, latent_bytes, load_checkpoint, parse_checkpoint, parse_latent, read_latent,
    save_checkpoint, write_latent, CHECKPOINT_VERSION,
};
pub use graph::{ForwardOutput, Graph};
pub use weights::{
    dense_layer_channels, dense_param_count, init_weights, ConvLayer, CouplingBlock, DenseBlock,
    Weights, RANDOM_FINAL_SCALE,
};

pub const LOW_CHANNELS: usize = 3;
pub const HIGH_CHANNELS: usize = 9;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite scale exponent in {0}")]
    NonFinite(String),
    #[error("bad magic in {0}")]
    BadMagic(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("shape error: {0}")]
    Shape(String),
}

pub type Result<T, E = NetworkError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub blocks: usize,
    /// Width of the intermediate dense-block layers.
    pub hidden: usize,
    /// Convolutions per dense block.
    pub layers: usize,
    /// Channels of the grain part of the latent; the rest is detail.
    pub z_grain_dim: usize,
    /// Log-scales are bounded to `(-alpha, alpha)`.
    pub alpha: f64,
    /// Multiplier on the Kaiming bound for non-final layers.
    pub init_scale: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            blocks: 8,
            hidden: 32,
            layers: 5,
            z_grain_dim: 1,
            alpha: 2.0,
            init_scale: 1.0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.blocks == 0 {
            return bad("blocks must be positive");
        }
        if self.hidden == 0 || self.layers == 0 {
            return bad("hidden and layers must be positive");
        }
        if self.z_grain_dim > HIGH_CHANNELS {
            return bad("z_grain_dim must be at most 9");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("clamp_alpha must be positive");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be nonnegative");
        }
        Ok(())
    }

    /// Pull network keys out of a config file, leaving the others.
    pub fn take_from(kv: &mut KvFile) -> Result<Self, ConfigError> {
        let d = NetworkConfig::default();
        let cfg = NetworkConfig {
            blocks: kv.take("blocks")?.unwrap_or(d.blocks),
            hidden: kv.take("hidden")?.unwrap_or(d.hidden),
            layers: kv.take("layers")?.unwrap_or(d.layers),
            z_grain_dim: kv.take("z_grain_dim")?.unwrap_or(d.z_grain_dim),
            alpha: kv.take("clamp_alpha")?.unwrap_or(d.alpha),
            init_scale: kv.take("init_scale")?.unwrap_or(d.init_scale),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "blocks = {}\nhidden = {}\nlayers = {}\nz_grain_dim = {}\nclamp_alpha = {}\ninit_scale = {}\n",
            self.blocks, self.hidden, self.layers, self.z_grain_dim, self.alpha, self.init_scale
        )
    }

    /// Parameter count from architecture arithmetic alone.
    pub fn param_count(&self) -> usize {
        let (lo, hi) = (LOW_CHANNELS, HIGH_CHANNELS);
        let d = |i, o| dense_param_count(i, o, self.hidden, self.layers);
        self.blocks * (d(hi, lo) + 2 * d(lo, hi)) + 2 * d(lo, hi)
    }
}

/// Which latent the inverse pass is fed and how the grain part is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InverseMode {
    /// Full latent.
    Grainy,
    /// Grain channels of the decoded latent set to zero.
    Clean,
    /// The latent produced by a forward pass; mechanically the same as
    /// `Grainy`.
    TrueLatent,
}

impl std::str::FromStr for InverseMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "grainy" => Ok(InverseMode::Grainy),
            "clean" => Ok(InverseMode::Clean),
            "true-latent" | "true_latent" => Ok(InverseMode::TrueLatent),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Weights plus the metadata stored alongside them.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub config: NetworkConfig,
    /// Target reduction rate these weights were fine-tuned for.
    pub r_target: f64,
    pub weights: Weights<Tensor<T>>,
}

impl<T: Real> NetworkParams<T> {
    /// Random init with zero final layers: the identity network.
    pub fn new(config: NetworkConfig, seed: u64) -> Self {
        let weights = init_weights(&config, seed, true);
        NetworkParams {
            config,
            r_target: 0.0,
            weights,
        }
    }

    /// Random init including the final layers (see [`RANDOM_FINAL_SCALE`]).
    pub fn random(config: NetworkConfig, seed: u64) -> Self {
        let weights = init_weights(&config, seed, false);
        NetworkParams {
            config,
            r_target: 0.0,
            weights,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.leaves().iter().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            config: self.config.clone(),
            r_target: self.r_target,
            weights: self.weights.map(|_, t| t.cast()),
        }
    }

    /// Graph whose weights are leaves; trainable ones receive gradients.
    pub fn graph(&self, trainable: bool) -> Graph<T> {
        Graph::new(
            self.config.clone(),
            self.weights.map(|_, t| {
                if trainable {
                    Var::param(t.clone())
                } else {
                    Var::constant(t.clone())
                }
            }),
        )
    }

    /// `(lr, z)` for a `[B, 3, H, W]` batch.
    pub fn forward(&self, hr: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let out = self.graph(false).forward(&Var::constant(hr.clone()))?;
        Ok((out.lr.value().clone(), out.z.value().clone()))
    }

    /// HR batch (unclamped) from an LR batch and a latent.
    pub fn inverse(&self, lr: &Tensor<T>, z: &Tensor<T>, mode: InverseMode) -> Result<Tensor<T>> {
        let g = self.graph(false);
        let out = g.inverse(&Var::constant(lr.clone()), &Var::constant(z.clone()), mode)?;
        Ok(out.value().clone())
    }
}
