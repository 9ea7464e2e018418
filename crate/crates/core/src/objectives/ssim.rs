//! Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), valid
//! positions only, `C1 = 0.01^2`, `C2 = 0.03^2`, averaged over channels and
//! positions.

use super::{ObjectiveError, Result};
use crate::image::Image;
use crate::tensor::{Real, Tensor, Var};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable valid correlation of every plane, `[B, C, H, W] ->
/// [B, C, H - k + 1, W - k + 1]`.
fn filter_valid<T: Real>(x: &Tensor<T>, taps: &[f64]) -> Tensor<T> {
    let s = x.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let k = taps.len();
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0f64; h * wo];
    let mut out = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xo in 0..wo {
                rows[y * wo + xo] = taps
                    .iter()
                    .enumerate()
                    .map(|(j, t)| t * src[y * w + xo + j].as_f64())
                    .sum();
            }
        }
        for yo in 0..ho {
            for xo in 0..wo {
                let v: f64 = taps
                    .iter()
                    .enumerate()
                    .map(|(j, t)| t * rows[(yo + j) * wo + xo])
                    .sum();
                out.push(T::from_f64_lossy(v));
            }
        }
    }
    Tensor::new(vec![s[0], s[1], ho, wo], out).expect("valid extents")
}

/// Adjoint of [`filter_valid`]: scatter each output back over its window.
fn filter_valid_adjoint<T: Real>(g: &Tensor<T>, taps: &[f64], h: usize, w: usize) -> Tensor<T> {
    let s = g.shape();
    let (planes, ho, wo) = (s[0] * s[1], s[2], s[3]);
    let k = taps.len();
    let mut out = vec![T::zero(); planes * h * w];
    let mut rows = vec![0f64; h * wo];
    for p in 0..planes {
        let gp = &g.data()[p * ho * wo..(p + 1) * ho * wo];
        rows.iter_mut().for_each(|v| *v = 0.0);
        for yo in 0..ho {
            for xo in 0..wo {
                let gv = gp[yo * wo + xo].as_f64();
                for (j, t) in taps.iter().enumerate() {
                    rows[(yo + j) * wo + xo] += t * gv;
                }
            }
        }
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let mut acc = vec![0f64; w];
            for xo in 0..wo {
                let r = rows[y * wo + xo];
                for j in 0..k {
                    acc[xo + j] += taps[j] * r;
                }
            }
            for x in 0..w {
                dst[y * w + x] = T::from_f64_lossy(acc[x]);
            }
        }
    }
    Tensor::new(vec![s[0], s[1], h, w], out).expect("input extents")
}

fn gaussian<T: Real>(x: &Var<T>) -> Var<T> {
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let value = filter_valid(x.value(), &taps);
    let (h, w) = (x.shape()[2], x.shape()[3]);
    Var::custom(value, vec![x.clone()], move |g| {
        vec![filter_valid_adjoint(g, &taps, h, w)]
    })
}

/// Differentiable mean SSIM of two `[B, C, H, W]` batches.
pub fn ssim_var<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    if a.shape() != b.shape() {
        return Err(ObjectiveError::Shape(format!(
            "ssim: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (_, _, h, w) = a.value().dims4()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(ObjectiveError::TooSmall {
            width: w,
            height: h,
        });
    }
    let mu_a = gaussian(a);
    let mu_b = gaussian(b);
    let mu_aa = mu_a.square();
    let mu_bb = mu_b.square();
    let mu_ab = mu_a.mul(&mu_b)?;
    let var_a = gaussian(&a.square()).sub(&mu_aa)?;
    let var_b = gaussian(&b.square()).sub(&mu_bb)?;
    let cov = gaussian(&a.mul(b)?).sub(&mu_ab)?;
    let num = mu_ab
        .scale(2.0)
        .shift(SSIM_C1)
        .mul(&cov.scale(2.0).shift(SSIM_C2))?;
    let den = mu_aa
        .add(&mu_bb)?
        .shift(SSIM_C1)
        .mul(&var_a.add(&var_b)?.shift(SSIM_C2))?;
    Ok(num.div(&den)?.mean())
}

/// `1 - SSIM`.
pub fn loss_ssim<T: Real>(pred: &Var<T>, reference: &Var<T>) -> Result<Var<T>> {
    Ok(ssim_var(pred, reference)?.scale(-1.0).shift(1.0))
}

/// SSIM of two images, evaluated in `f64`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    let ta = Var::constant(a.to_tensor::<f64>());
    let tb = Var::constant(b.to_tensor::<f64>());
    Ok(ssim_var(&ta, &tb)?.item())
}
