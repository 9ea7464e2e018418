//! 3x3, stride 1, zero-padding 1 convolution kernels.
//!
//! Each sample is unfolded into a `[cin*9, h*w]` column matrix and multiplied
//! with the `[cout, cin*9]` weight matrix. Products run through a blocked
//! GEMM; summation order depends only on the shapes, so results are
//! reproducible bit for bit.

use super::{Real, Result, Tensor, TensorError};

pub const KERNEL: usize = 3;

fn im2col<T: Real>(src: &[T], cin: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    for c in 0..cin {
        let plane = &src[c * hw..(c + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[((c * KERNEL + ky) * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            out[0] = T::zero();
                            out[1..].copy_from_slice(&src_row[..w - 1]);
                        }
                        1 => out.copy_from_slice(src_row),
                        _ => {
                            out[..w - 1].copy_from_slice(&src_row[1..]);
                            out[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], cin: usize, h: usize, w: usize, dst: &mut [T]) {
    let hw = h * w;
    for c in 0..cin {
        let plane = &mut dst[c * hw..(c + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &col[((c * KERNEL + ky) * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let out = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (o, &v) in out[..w - 1].iter_mut().zip(&src[1..]) {
                                *o = *o + v;
                            }
                        }
                        1 => {
                            for (o, &v) in out.iter_mut().zip(src) {
                                *o = *o + v;
                            }
                        }
                        _ => {
                            for (o, &v) in out[1..].iter_mut().zip(&src[..w - 1]) {
                                *o = *o + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn check_shapes<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, cin, h, w) = input.dims4()?;
    let ws = weight.shape();
    if ws.len() != 4 || ws[2] != KERNEL || ws[3] != KERNEL || ws[1] != cin {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: ws.to_vec(),
        });
    }
    let cout = ws[0];
    if bias.shape() != [cout] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d bias",
            lhs: ws.to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    Ok((b, cin, h, w, cout))
}

/// Cross-correlation of `input [B,Cin,H,W]` with `weight [Cout,Cin,3,3]`
/// plus per-channel `bias [Cout]`, zero padding 1.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, cin, h, w, cout) = check_shapes(input, weight, bias)?;
    let hw = h * w;
    let k = cin * KERNEL * KERNEL;
    let mut col = vec![T::zero(); k * hw];
    let mut out = vec![T::zero(); b * cout * hw];
    for n in 0..b {
        im2col(
            &input.data()[n * cin * hw..(n + 1) * cin * hw],
            cin,
            h,
            w,
            &mut col,
        );
        let dst = &mut out[n * cout * hw..(n + 1) * cout * hw];
        for (co, &bv) in bias.data().iter().enumerate() {
            dst[co * hw..(co + 1) * hw].fill(bv);
        }
        T::gemm(
            cout,
            k,
            hw,
            T::one(),
            weight.data(),
            (k as isize, 1),
            &col,
            (hw as isize, 1),
            T::one(),
            dst,
            (hw as isize, 1),
        );
    }
    Tensor::new(vec![b, cout, h, w], out)
}

/// Gradients of a convolution with respect to input, weight and bias.
pub(crate) fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (b, cin, h, w) = input.dims4().expect("rank checked in forward");
    let cout = weight.shape()[0];
    let hw = h * w;
    let k = cin * KERNEL * KERNEL;
    let mut col = vec![T::zero(); k * hw];
    let mut dcol = vec![T::zero(); k * hw];
    let mut dw = vec![T::zero(); cout * k];
    let mut db = vec![T::zero(); cout];
    let mut dx = if need_input {
        vec![T::zero(); b * cin * hw]
    } else {
        Vec::new()
    };
    for n in 0..b {
        let go = &grad_out.data()[n * cout * hw..(n + 1) * cout * hw];
        for (co, acc) in db.iter_mut().enumerate() {
            let s = go[co * hw..(co + 1) * hw]
                .iter()
                .fold(0.0f64, |a, v| a + v.as_f64());
            *acc = *acc + T::from_f64_lossy(s);
        }
        im2col(
            &input.data()[n * cin * hw..(n + 1) * cin * hw],
            cin,
            h,
            w,
            &mut col,
        );
        // dW[cout, k] += dOut[cout, hw] * col^T[hw, k]
        T::gemm(
            cout,
            hw,
            k,
            T::one(),
            go,
            (hw as isize, 1),
            &col,
            (1, hw as isize),
            T::one(),
            &mut dw,
            (k as isize, 1),
        );
        if need_input {
            // dcol[k, hw] = W^T[k, cout] * dOut[cout, hw]
            T::gemm(
                k,
                cout,
                hw,
                T::one(),
                weight.data(),
                (1, k as isize),
                go,
                (hw as isize, 1),
                T::zero(),
                &mut dcol,
                (hw as isize, 1),
            );
            col2im(&dcol, cin, h, w, &mut dx[n * cin * hw..(n + 1) * cin * hw]);
        }
    }
    let dx = need_input.then(|| Tensor::new(input.shape().to_vec(), dx).expect("same shape"));
    (
        dx,
        Tensor::new(weight.shape().to_vec(), dw).expect("same shape"),
        Tensor::new(vec![cout], db).expect("same shape"),
    )
}
