//! One-level orthonormal Haar decomposition.
//!
//! Every 2x2 block `(a b / c d)` of each input channel maps to
//!
//! ```text
//! low = (a + b + c + d) / 2
//! h   = (a - b + c - d) / 2
//! v   = (a + b - c - d) / 2
//! d   = (a - b - c + d) / 2
//! ```
//!
//! The 4x4 analysis matrix is symmetric and orthogonal, so synthesis applies
//! the same butterfly and both directions preserve the L2 norm. The low band
//! is therefore twice the 2x2 average.
//!
//! Packed channel layout for `C` input channels: the `C` low bands first, then
//! `(h, v, d)` for channel 0, `(h, v, d)` for channel 1, and so on. For RGB:
//! `[R_low, G_low, B_low | R_h, R_v, R_d, G_h, G_v, G_d, B_h, B_v, B_d]`.

use crate::tensor::{Real, Result, Tensor, TensorError, Var};

/// Low and high bands of a batch of images.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandTensor<T> {
    /// `[B, C, H/2, W/2]`
    pub low: Tensor<T>,
    /// `[B, 3C, H/2, W/2]`
    pub high: Tensor<T>,
}

fn analysis<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::InvalidArgument {
            op: "haar_forward",
            reason: format!("height and width must be even, got {h}x{w}"),
        });
    }
    let (h2, w2) = (h / 2, w / 2);
    let plane = h2 * w2;
    let half = T::from_f64_lossy(0.5);
    let src = x.data();
    let mut out = vec![T::zero(); b * 4 * c * plane];
    for n in 0..b {
        let base_out = n * 4 * c * plane;
        for ch in 0..c {
            let img = &src[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
            let low = base_out + ch * plane;
            let hi = base_out + (c + 3 * ch) * plane;
            for y in 0..h2 {
                for x2 in 0..w2 {
                    let a = img[2 * y * w + 2 * x2];
                    let bb = img[2 * y * w + 2 * x2 + 1];
                    let cc = img[(2 * y + 1) * w + 2 * x2];
                    let d = img[(2 * y + 1) * w + 2 * x2 + 1];
                    let i = y * w2 + x2;
                    out[low + i] = (a + bb + cc + d) * half;
                    out[hi + i] = (a - bb + cc - d) * half;
                    out[hi + plane + i] = (a + bb - cc - d) * half;
                    out[hi + 2 * plane + i] = (a - bb - cc + d) * half;
                }
            }
        }
    }
    Tensor::new(vec![b, 4 * c, h2, w2], out)
}

fn synthesis<T: Real>(packed: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c4, h2, w2) = packed.dims4()?;
    if c4 % 4 != 0 {
        return Err(TensorError::InvalidArgument {
            op: "haar_inverse",
            reason: format!("packed channel count {c4} is not a multiple of 4"),
        });
    }
    let c = c4 / 4;
    let (h, w) = (2 * h2, 2 * w2);
    let plane = h2 * w2;
    let half = T::from_f64_lossy(0.5);
    let src = packed.data();
    let mut out = vec![T::zero(); b * c * h * w];
    for n in 0..b {
        let base_in = n * c4 * plane;
        for ch in 0..c {
            let img = &mut out[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
            let low = base_in + ch * plane;
            let hi = base_in + (c + 3 * ch) * plane;
            for y in 0..h2 {
                for x2 in 0..w2 {
                    let i = y * w2 + x2;
                    let l = src[low + i];
                    let dh = src[hi + i];
                    let dv = src[hi + plane + i];
                    let dd = src[hi + 2 * plane + i];
                    img[2 * y * w + 2 * x2] = (l + dh + dv + dd) * half;
                    img[2 * y * w + 2 * x2 + 1] = (l - dh + dv - dd) * half;
                    img[(2 * y + 1) * w + 2 * x2] = (l + dh - dv - dd) * half;
                    img[(2 * y + 1) * w + 2 * x2 + 1] = (l - dh - dv + dd) * half;
                }
            }
        }
    }
    Tensor::new(vec![b, c, h, w], out)
}

fn unpack<T: Real>(packed: Tensor<T>) -> SubbandTensor<T> {
    let (b, c4, h2, w2) = packed.dims4().expect("rank 4");
    let c = c4 / 4;
    let per = c4 * h2 * w2;
    let split_at = c * h2 * w2;
    let mut low = Vec::with_capacity(b * split_at);
    let mut high = Vec::with_capacity(b * (per - split_at));
    for chunk in packed.data().chunks(per) {
        low.extend_from_slice(&chunk[..split_at]);
        high.extend_from_slice(&chunk[split_at..]);
    }
    SubbandTensor {
        low: Tensor::new(vec![b, c, h2, w2], low).expect("low shape"),
        high: Tensor::new(vec![b, 3 * c, h2, w2], high).expect("high shape"),
    }
}

fn pack<T: Real>(sb: &SubbandTensor<T>) -> Result<Tensor<T>> {
    let (b, c, h2, w2) = sb.low.dims4()?;
    let (hb, hc, hh, hw) = sb.high.dims4()?;
    if hb != b || hh != h2 || hw != w2 || hc != 3 * c {
        return Err(TensorError::ShapeMismatch {
            op: "haar_inverse",
            lhs: sb.low.shape().to_vec(),
            rhs: sb.high.shape().to_vec(),
        });
    }
    let lo_per = c * h2 * w2;
    let hi_per = 3 * lo_per;
    let mut data = Vec::with_capacity(b * 4 * lo_per);
    for n in 0..b {
        data.extend_from_slice(&sb.low.data()[n * lo_per..(n + 1) * lo_per]);
        data.extend_from_slice(&sb.high.data()[n * hi_per..(n + 1) * hi_per]);
    }
    Tensor::new(vec![b, 4 * c, h2, w2], data)
}

/// Decompose `[B, C, H, W]` (even `H`, `W`) into low and high bands.
pub fn haar_forward<T: Real>(img: &Tensor<T>) -> Result<SubbandTensor<T>> {
    analysis(img).map(unpack)
}

/// Exact inverse of [`haar_forward`].
pub fn haar_inverse<T: Real>(sb: &SubbandTensor<T>) -> Result<Tensor<T>> {
    synthesis(&pack(sb)?)
}

/// Differentiable analysis producing the packed `[B, 4C, H/2, W/2]` layout.
pub fn haar_forward_var<T: Real>(img: &Var<T>) -> Result<Var<T>> {
    let out = analysis(img.value())?;
    Ok(Var::custom(out, vec![img.clone()], |g| {
        vec![synthesis(g).expect("shape checked in forward")]
    }))
}

/// Differentiable synthesis from the packed layout.
pub fn haar_inverse_var<T: Real>(packed: &Var<T>) -> Result<Var<T>> {
    let out = synthesis(packed.value())?;
    Ok(Var::custom(out, vec![packed.clone()], |g| {
        vec![analysis(g).expect("even extents by construction")]
    }))
}
