//! Display power models on linearized RGB.
//!
//! Luminance model: `mean(0.2126 R' + 0.7152 G' + 0.0722 B')` with
//! `c' = c^gamma`. RGBW model: white is extracted as `W = min(R', G', B')`,
//! the residuals drive the colour sub-pixels, and the weighted drive sum is
//! divided by `k_W` so a full-white pixel costs 1.

use std::fmt;
use std::str::FromStr;

use super::{ObjectiveError, Result};
use crate::config::{ConfigError, KvFile};
use crate::image::Image;
use crate::tensor::{Real, Tensor, Var};

pub const LUMA_709: [f64; 3] = [0.2126, 0.7152, 0.0722];
const RANGE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerModel {
    Luminance,
    Rgbw,
}

impl fmt::Display for PowerModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PowerModel::Luminance => "luminance",
            PowerModel::Rgbw => "rgbw",
        })
    }
}

impl FromStr for PowerModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "luminance" => Ok(PowerModel::Luminance),
            "rgbw" => Ok(PowerModel::Rgbw),
            other => Err(format!("unknown power model `{other}` (luminance or rgbw)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerModelConfig {
    pub model: PowerModel,
    pub gamma: f64,
    /// `[k_R, k_G, k_B, k_W]`
    pub rgbw_coefficients: [f64; 4],
}

impl Default for PowerModelConfig {
    fn default() -> Self {
        PowerModelConfig {
            model: PowerModel::Rgbw,
            gamma: 2.2,
            rgbw_coefficients: [0.25; 4],
        }
    }
}

impl PowerModelConfig {
    pub fn luminance() -> Self {
        PowerModelConfig {
            model: PowerModel::Luminance,
            ..Self::default()
        }
    }

    pub fn rgbw() -> Self {
        Self::default()
    }

    pub fn with_model(&self, model: PowerModel) -> Self {
        PowerModelConfig {
            model,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(ConfigError::Invalid("gamma must be positive".into()));
        }
        let k = &self.rgbw_coefficients;
        if k.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || k[3] <= 0.0 {
            return Err(ConfigError::Invalid(
                "rgbw_coefficients must be nonnegative with k_W > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn take_from(kv: &mut KvFile) -> Result<Self, ConfigError> {
        let d = Self::default();
        let coeffs: Option<Vec<f64>> = kv.take_list("rgbw_coefficients")?;
        let rgbw_coefficients = match coeffs {
            None => d.rgbw_coefficients,
            Some(v) => v.try_into().map_err(|v: Vec<f64>| {
                ConfigError::Invalid(format!("rgbw_coefficients needs 4 values, got {}", v.len()))
            })?,
        };
        let cfg = PowerModelConfig {
            model: kv.take("power_model")?.unwrap_or(d.model),
            gamma: kv.take("gamma")?.unwrap_or(d.gamma),
            rgbw_coefficients,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        let k = self.rgbw_coefficients;
        format!(
            "power_model = {}\ngamma = {}\nrgbw_coefficients = {}, {}, {}, {}\n",
            self.model, self.gamma, k[0], k[1], k[2], k[3]
        )
    }

    /// Power of one pixel from display-referred values.
    pub fn pixel_power(&self, rgb: [f64; 3]) -> f64 {
        let lin = rgb.map(|c| c.max(0.0).powf(self.gamma));
        match self.model {
            PowerModel::Luminance => lin.iter().zip(LUMA_709).map(|(c, w)| c * w).sum(),
            PowerModel::Rgbw => {
                let k = self.rgbw_coefficients;
                let w = lin[0].min(lin[1]).min(lin[2]);
                (k[0] * (lin[0] - w) + k[1] * (lin[1] - w) + k[2] * (lin[2] - w) + k[3] * w) / k[3]
            }
        }
    }
}

/// Mean per-pixel power of an image with values in `[0, 1]`.
pub fn power(img: &Image, cfg: &PowerModelConfig) -> Result<f64> {
    if let Some(v) = img
        .data()
        .iter()
        .find(|&&v| !(v as f64 >= -RANGE_TOLERANCE && v as f64 <= 1.0 + RANGE_TOLERANCE))
    {
        return Err(ObjectiveError::OutOfRange(*v as f64));
    }
    let n = img.width() * img.height();
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let total: f64 = (0..n)
        .map(|i| {
            cfg.pixel_power([r[i] as f64, g[i] as f64, b[i] as f64].map(|v| v.clamp(0.0, 1.0)))
        })
        .sum();
    Ok(total / n as f64)
}

/// Per-pixel minimum over the channel axis, `[B, C, H, W] -> [B, 1, H, W]`.
/// The gradient goes to the first minimal channel.
fn channel_min<T: Real>(x: &Var<T>) -> Result<Var<T>> {
    let (b, c, h, w) = x.value().dims4()?;
    let plane = h * w;
    let src = x.value().data();
    let mut out = vec![T::zero(); b * plane];
    let mut arg = vec![0usize; b * plane];
    for n in 0..b {
        for i in 0..plane {
            let mut best = 0;
            for ch in 1..c {
                if src[(n * c + ch) * plane + i] < src[(n * c + best) * plane + i] {
                    best = ch;
                }
            }
            out[n * plane + i] = src[(n * c + best) * plane + i];
            arg[n * plane + i] = best;
        }
    }
    let value = Tensor::new(vec![b, 1, h, w], out)?;
    Ok(Var::custom(value, vec![x.clone()], move |g| {
        let mut gx = vec![T::zero(); b * c * plane];
        for n in 0..b {
            for i in 0..plane {
                gx[(n * c + arg[n * plane + i]) * plane + i] = g.data()[n * plane + i];
            }
        }
        vec![Tensor::new(vec![b, c, h, w], gx).expect("input shape")]
    }))
}

/// Differentiable mean power over a `[B, 3, H, W]` batch. Inputs are used
/// as given; callers clamp first when needed.
pub fn power_var<T: Real>(x: &Var<T>, cfg: &PowerModelConfig) -> Result<Var<T>> {
    let (_, c, _, _) = x.value().dims4()?;
    if c != 3 {
        return Err(ObjectiveError::Shape(format!(
            "power needs 3 channels, got {:?}",
            x.shape()
        )));
    }
    let lin = x.pow(cfg.gamma);
    let ch = |i: usize| lin.slice(1, i, 1);
    let per_pixel = match cfg.model {
        PowerModel::Luminance => ch(0)?
            .scale(LUMA_709[0])
            .add(&ch(1)?.scale(LUMA_709[1]))?
            .add(&ch(2)?.scale(LUMA_709[2]))?,
        PowerModel::Rgbw => {
            let k = cfg.rgbw_coefficients;
            let w = channel_min(&lin)?;
            // sum_c k_c (c' - W) + k_W W = sum_c k_c c' + (k_W - sum_c k_c) W
            ch(0)?
                .scale(k[0] / k[3])
                .add(&ch(1)?.scale(k[1] / k[3]))?
                .add(&ch(2)?.scale(k[2] / k[3]))?
                .add(&w.scale((k[3] - k[0] - k[1] - k[2]) / k[3]))?
        }
    };
    Ok(per_pixel.mean())
}
