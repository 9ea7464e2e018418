//! Training objectives: forward fidelity, latent regularization, inverse
//! fidelities, display power and SSIM, and their weighted totals.

mod power;
mod ssim;

use thiserror::Error;

use crate::config::{ConfigError, KvFile};
use crate::tensor::{Real, TensorError, Var};

pub use power::{power, power_var, PowerModel, PowerModelConfig, LUMA_709};
pub use ssim::{
    gaussian_taps, loss_ssim, ssim, ssim_var, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW,
};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0} non-finite")]
    NonFinite(&'static str),
    #[error("pixel value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("image {width}x{height} is smaller than the 11x11 SSIM window")]
    TooSmall { width: usize, height: usize },
    #[error("reduction rate {0} outside [0, 1]")]
    InvalidRate(f64),
}

pub type Result<T, E = ObjectiveError> = std::result::Result<T, E>;

fn same_shape<T: Real>(a: &Var<T>, b: &Var<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(ObjectiveError::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Batch mean of per-sample RMS differences.
pub fn loss_forward<T: Real>(pred: &Var<T>, gt: &Var<T>) -> Result<Var<T>> {
    same_shape(pred, gt, "loss_forward")?;
    Ok(pred.sub(gt)?.square().mean_per_sample().sqrt().mean())
}

/// `mean(z^2) / 2`.
pub fn loss_reg<T: Real>(z: &Var<T>) -> Var<T> {
    z.square().mean().scale(0.5)
}

/// Mean absolute difference, used for both inverse-pass fidelities.
pub fn loss_back<T: Real>(reconstructed: &Var<T>, gt: &Var<T>) -> Result<Var<T>> {
    same_shape(reconstructed, gt, "loss_back")?;
    Ok(reconstructed.sub(gt)?.abs().mean())
}

/// `|P(clamp(pred)) - (1 - R) P(reference)|`; the reference is a constant.
pub fn loss_power<T: Real>(
    pred: &Var<T>,
    reference: &Var<T>,
    r: f64,
    cfg: &PowerModelConfig,
) -> Result<Var<T>> {
    if !(0.0..=1.0).contains(&r) {
        return Err(ObjectiveError::InvalidRate(r));
    }
    same_shape(pred, reference, "loss_power")?;
    let p_pred = power_var(&pred.clamp(0.0, 1.0), cfg)?;
    let target = power_var(&reference.detach(), cfg)?.item().as_f64() * (1.0 - r);
    Ok(p_pred.shift(-target).abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    /// `[forward, reg, back_clean, back_grainy, power, ssim]`
    pub lambda: [f64; 6],
    /// Target reduction rate.
    pub r: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: [40.0, 1.0, 1.0, 1.0, 1e10, 1e4],
            r: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.lambda.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(ConfigError::Invalid(
                "loss weights must be nonnegative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(ConfigError::Invalid(format!(
                "R = {} outside [0, 1]",
                self.r
            )));
        }
        Ok(())
    }

    pub fn take_from(kv: &mut KvFile) -> Result<Self, ConfigError> {
        let d = Self::default();
        let lambda = match kv.take_list::<f64>("lambdas")? {
            None => d.lambda,
            Some(v) => v.try_into().map_err(|v: Vec<f64>| {
                ConfigError::Invalid(format!("lambdas needs 6 values, got {}", v.len()))
            })?,
        };
        let w = LossWeights {
            lambda,
            r: kv.take("r_target")?.unwrap_or(d.r),
        };
        w.validate()?;
        Ok(w)
    }

    pub fn to_kv_string(&self) -> String {
        let l = self.lambda;
        format!(
            "lambdas = {}, {}, {}, {}, {}, {}\nr_target = {}\n",
            l[0], l[1], l[2], l[3], l[4], l[5], self.r
        )
    }
}

/// The six loss terms; stage 1 leaves the last two unused.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts<V> {
    pub forw: V,
    pub reg: V,
    pub back_c: V,
    pub back_g: V,
    pub pow: V,
    pub ssim: V,
}

impl<V> LossParts<V> {
    fn labelled(&self) -> [(&'static str, &V); 6] {
        [
            ("loss_forward", &self.forw),
            ("loss_reg", &self.reg),
            ("loss_back_clean", &self.back_c),
            ("loss_back_grainy", &self.back_g),
            ("loss_power", &self.pow),
            ("loss_ssim", &self.ssim),
        ]
    }
}

fn weighted(values: [(&'static str, f64); 6], w: &LossWeights, terms: usize) -> Result<f64> {
    let mut total = 0.0;
    for (k, (name, v)) in values.iter().enumerate().take(terms) {
        if !v.is_finite() {
            return Err(ObjectiveError::NonFinite(name));
        }
        total += w.lambda[k] * v;
    }
    Ok(total)
}

/// `l1 forw + l2 reg + l3 back_c + l4 back_g`.
pub fn total_loss_stage1(parts: &LossParts<f64>, w: &LossWeights) -> Result<f64> {
    weighted(parts.labelled().map(|(n, v)| (n, *v)), w, 4)
}

/// Stage 1 plus `l5 pow + l6 ssim`.
pub fn total_loss_stage2(parts: &LossParts<f64>, w: &LossWeights) -> Result<f64> {
    weighted(parts.labelled().map(|(n, v)| (n, *v)), w, 6)
}

/// Differentiable weighted sum over the first four (`stage2 == false`) or
/// all six terms.
pub fn total_loss_var<T: Real>(
    parts: &LossParts<Var<T>>,
    w: &LossWeights,
    stage2: bool,
) -> Result<Var<T>> {
    let terms = if stage2 { 6 } else { 4 };
    let labelled = parts.labelled();
    weighted(labelled.map(|(n, v)| (n, v.item().as_f64())), w, terms)?;
    let mut total = labelled[0].1.scale(w.lambda[0]);
    for (k, (_, v)) in labelled.iter().enumerate().take(terms).skip(1) {
        total = total.add(&v.scale(w.lambda[k]))?;
    }
    Ok(total)
}
