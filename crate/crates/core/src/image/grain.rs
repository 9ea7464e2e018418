//! Autoregressive film-grain synthesis in the style of the AV1 grain model.
//!
//! A white Gaussian field is run through a causal 2-D AR filter whose
//! neighbourhood, for lag `L`, is every `(dy, dx)` with `-L <= dy <= 0`,
//! `-L <= dx <= L`, scanned row by row and stopping before `(0, 0)`. That is
//! `2L(L+1)` coefficients. The filtered field is scaled per pixel by a
//! piecewise-linear function of luma and added to every channel.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{luma, Image, ImageError};
use crate::config::KvFile;

const MARGIN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct GrainConfig {
    /// AR weights in neighbourhood scan order.
    pub ar_coefficients: Vec<f64>,
    /// Grain strength at equally spaced luma points from 0 to 1.
    pub intensity: Vec<f64>,
    pub seed: u64,
}

impl GrainConfig {
    /// Presets of increasing strength (0 = no grain).
    pub fn preset(level: usize, seed: u64) -> Self {
        let ar = vec![0.05, 0.15, 0.05, 0.35];
        let intensity = match level {
            0 => vec![0.0, 0.0],
            1 => vec![0.010, 0.020, 0.025, 0.015],
            2 => vec![0.020, 0.040, 0.050, 0.030],
            _ => vec![0.030, 0.060, 0.075, 0.045],
        };
        GrainConfig {
            ar_coefficients: ar,
            intensity,
            seed,
        }
    }

    pub fn lag(&self) -> Result<usize, ImageError> {
        let n = self.ar_coefficients.len();
        (0..=8)
            .find(|&l| 2 * l * (l + 1) == n)
            .ok_or_else(|| ImageError::InvalidGrain(format!("{n} AR coefficients is not 2L(L+1)")))
    }

    pub fn validate(&self) -> Result<(), ImageError> {
        self.lag()?;
        let l1: f64 = self.ar_coefficients.iter().map(|c| c.abs()).sum();
        if l1 >= 1.0 || !l1.is_finite() {
            return Err(ImageError::UnstableAr(l1));
        }
        if self.intensity.is_empty() || self.intensity.iter().any(|&v| v.is_nan() || v < 0.0) {
            return Err(ImageError::InvalidGrain(
                "intensity table must be non-empty and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Strength at luma `y`, linearly interpolated in the table.
    pub fn strength(&self, y: f64) -> f64 {
        let t = &self.intensity;
        if t.len() == 1 {
            return t[0];
        }
        let pos = y.clamp(0.0, 1.0) * (t.len() - 1) as f64;
        let i = (pos.floor() as usize).min(t.len() - 2);
        let frac = pos - i as f64;
        t[i] * (1.0 - frac) + t[i + 1] * frac
    }

    pub fn from_kv(mut kv: KvFile) -> Result<Self, ImageError> {
        let base = GrainConfig::preset(2, 0);
        let cfg = GrainConfig {
            ar_coefficients: kv
                .take_list("ar_coefficients")?
                .unwrap_or(base.ar_coefficients),
            intensity: kv.take_list("intensity")?.unwrap_or(base.intensity),
            seed: kv.take("seed")?.unwrap_or(0),
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self, ImageError> {
        Self::from_kv(KvFile::read(path)?)
    }

    pub fn to_kv_string(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        };
        format!(
            "ar_coefficients = {}\nintensity = {}\nseed = {}\n",
            join(&self.ar_coefficients),
            join(&self.intensity),
            self.seed
        )
    }
}

/// Neighbourhood offsets `(dy, dx)` matching the coefficient order.
pub fn lag_offsets(lag: usize) -> Vec<(isize, isize)> {
    let l = lag as isize;
    let mut out = Vec::new();
    for dy in -l..=0 {
        for dx in -l..=l {
            if dy == 0 && dx >= 0 {
                break;
            }
            out.push((dy, dx));
        }
    }
    out
}

/// AR-filtered unit-variance white noise, `height` rows of `width` samples.
///
/// The recursion starts from zero state on a field padded by a fixed margin
/// on the top, left and right; the returned window is taken away from those
/// edges.
pub fn ar_filter_field(
    width: usize,
    height: usize,
    coefficients: &[f64],
    seed: u64,
) -> Result<Vec<f64>, ImageError> {
    let cfg = GrainConfig {
        ar_coefficients: coefficients.to_vec(),
        intensity: vec![0.0],
        seed,
    };
    cfg.validate()?;
    let offsets = lag_offsets(cfg.lag()?);
    let pw = width + 2 * MARGIN;
    let ph = height + MARGIN;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = vec![0f64; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            let mut v: f64 = StandardNormal.sample(&mut rng);
            for (&(dy, dx), &a) in offsets.iter().zip(coefficients) {
                let sy = y as isize + dy;
                let sx = x as isize + dx;
                if sy >= 0 && sx >= 0 && sx < pw as isize {
                    v += a * field[sy as usize * pw + sx as usize];
                }
            }
            field[y * pw + x] = v;
        }
    }
    let mut out = Vec::with_capacity(width * height);
    for y in MARGIN..ph {
        out.extend_from_slice(&field[y * pw + MARGIN..y * pw + MARGIN + width]);
    }
    Ok(out)
}

/// `clamp(clean + s(Y) * g, 0, 1)` with the same grain field on every channel.
pub fn synthesize_grain(clean: &Image, cfg: &GrainConfig) -> Result<Image, ImageError> {
    cfg.validate()?;
    let (w, h) = clean.dims();
    let g = ar_filter_field(w, h, &cfg.ar_coefficients, cfg.seed)?;
    let n = w * h;
    let mut out = clean.clone();
    let data = out.data_mut();
    for i in 0..n {
        let y = luma(data[i] as f64, data[n + i] as f64, data[2 * n + i] as f64);
        let delta = cfg.strength(y) * g[i];
        for c in 0..3 {
            let v = data[c * n + i] as f64 + delta;
            data[c * n + i] = v.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(out)
}
