//! Bicubic x2 downscaling used to build low-resolution ground truth.
//!
//! The cubic convolution kernel with `a = -0.5` is widened by the scale factor
//! (antialiased resize, as in the usual `imresize` convention), giving eight
//! taps per output sample. Out-of-range taps are clamped to the border pixel.

use super::{Image, ImageError};

pub const BICUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn bicubic_kernel(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Taps and weights for output samples of a x2 reduction along one axis.
fn taps(len_out: usize, len_in: usize) -> Vec<[(usize, f64); 8]> {
    (0..len_out)
        .map(|i| {
            let center = 2.0 * i as f64 + 0.5;
            let mut out = [(0usize, 0.0f64); 8];
            let mut total = 0.0;
            for (j, slot) in out.iter_mut().enumerate() {
                let k = 2 * i as isize - 3 + j as isize;
                let w = bicubic_kernel((k as f64 - center) / 2.0, BICUBIC_A) / 2.0;
                *slot = (k.clamp(0, len_in as isize - 1) as usize, w);
                total += w;
            }
            for slot in out.iter_mut() {
                slot.1 /= total;
            }
            out
        })
        .collect()
}

/// Half-resolution bicubic reduction; output clamped to `[0, 1]`.
pub fn bicubic_downscale_x2(img: &Image) -> Result<Image, ImageError> {
    let (w, h) = img.dims();
    if w % 2 != 0 || h % 2 != 0 {
        return Err(ImageError::OddDimensions {
            width: w,
            height: h,
        });
    }
    let (w2, h2) = (w / 2, h / 2);
    let tx = taps(w2, w);
    let ty = taps(h2, h);
    let mut data = Vec::with_capacity(3 * w2 * h2);
    let mut rows = vec![0f64; h * w2];
    for c in 0..3 {
        let plane = img.plane(c);
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            for (x, t) in tx.iter().enumerate() {
                rows[y * w2 + x] = t.iter().map(|&(k, wt)| wt * src[k] as f64).sum();
            }
        }
        for t in &ty {
            for x in 0..w2 {
                let v: f64 = t.iter().map(|&(k, wt)| wt * rows[k * w2 + x]).sum();
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Image::new(w2, h2, data)
}
