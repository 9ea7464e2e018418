//! Differentiable operations on [`Var`].
//!
//! Binary elementwise operations accept equal shapes, or one operand holding a
//! single element that is broadcast over the other.

use super::autograd::Var;
use super::conv::{check_shapes, conv2d_backward, conv2d_forward};
use super::{Real, Result, Tensor, TensorError};

type CustomBackward<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Tensor<T>>>;

pub(crate) enum Op<T: Real> {
    Add(Var<T>, Var<T>),
    Sub(Var<T>, Var<T>),
    Mul(Var<T>, Var<T>),
    Div(Var<T>, Var<T>),
    Scale(Var<T>, T),
    Shift(Var<T>),
    Exp(Var<T>),
    Log(Var<T>),
    Abs(Var<T>),
    Square(Var<T>),
    Sqrt(Var<T>),
    Pow(Var<T>, T),
    Sigmoid(Var<T>),
    LeakyRelu(Var<T>, T),
    Clamp(Var<T>, T, T),
    Sum(Var<T>),
    Mean(Var<T>),
    MeanPerSample(Var<T>),
    Concat {
        parts: Vec<Var<T>>,
        axis: usize,
    },
    Slice {
        input: Var<T>,
        axis: usize,
        start: usize,
    },
    Conv2d {
        input: Var<T>,
        weight: Var<T>,
        bias: Var<T>,
    },
    Custom {
        inputs: Vec<Var<T>>,
        backward: CustomBackward<T>,
    },
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(a.shape().to_vec(), data).expect("same shape")
    } else if b.numel() == 1 {
        let y = b.data()[0];
        a.map(|x| f(x, y))
    } else {
        let x = a.data()[0];
        b.map(|y| f(x, y))
    }
}

/// Reduce a gradient computed at the broadcast shape back to `target`.
fn unbroadcast<T: Real>(g: Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    if g.shape() == target.shape() {
        g
    } else {
        Tensor::new(
            target.shape().to_vec(),
            vec![T::from_f64_lossy(g.sum_f64())],
        )
        .expect("single element")
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<&Var<T>> {
        use Op::*;
        match self {
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![a, b],
            Scale(a, _)
            | Shift(a)
            | Exp(a)
            | Log(a)
            | Abs(a)
            | Square(a)
            | Sqrt(a)
            | Pow(a, _)
            | Sigmoid(a)
            | LeakyRelu(a, _)
            | Clamp(a, _, _)
            | Sum(a)
            | Mean(a)
            | MeanPerSample(a) => vec![a],
            Concat { parts, .. } => parts.iter().collect(),
            Slice { input, .. } => vec![input],
            Conv2d {
                input,
                weight,
                bias,
            } => vec![input, weight, bias],
            Custom { inputs, .. } => inputs.iter().collect(),
        }
    }

    /// Gradients of the inputs given the output value and its gradient.
    pub(crate) fn backward(&self, out: &Tensor<T>, g: &Tensor<T>) -> Vec<(Var<T>, Tensor<T>)> {
        use Op::*;
        let unary = |a: &Var<T>, f: &dyn Fn(T, T, T) -> T| -> Vec<(Var<T>, Tensor<T>)> {
            let x = a.value();
            let data = x
                .data()
                .iter()
                .zip(out.data())
                .zip(g.data())
                .map(|((&x, &y), &g)| f(x, y, g))
                .collect();
            vec![(
                a.clone(),
                Tensor::new(x.shape().to_vec(), data).expect("same shape"),
            )]
        };
        match self {
            Add(a, b) => vec![
                (a.clone(), unbroadcast(g.clone(), a.value())),
                (b.clone(), unbroadcast(g.clone(), b.value())),
            ],
            Sub(a, b) => vec![
                (a.clone(), unbroadcast(g.clone(), a.value())),
                (b.clone(), unbroadcast(g.map(|v| -v), b.value())),
            ],
            Mul(a, b) => {
                let ga = zip_map(g, b.value(), |g, y| g * y);
                let gb = zip_map(g, a.value(), |g, x| g * x);
                vec![
                    (a.clone(), unbroadcast(ga, a.value())),
                    (b.clone(), unbroadcast(gb, b.value())),
                ]
            }
            Div(a, b) => {
                let ga = zip_map(g, b.value(), |g, y| g / y);
                let gy = zip_map(g, out, |g, q| g * q);
                let gb = zip_map(&gy, b.value(), |gq, y| -gq / y);
                vec![
                    (a.clone(), unbroadcast(ga, a.value())),
                    (b.clone(), unbroadcast(gb, b.value())),
                ]
            }
            Scale(a, c) => vec![(a.clone(), g.map(|v| v * *c))],
            Shift(a) => vec![(a.clone(), g.clone())],
            Exp(a) => unary(a, &|_, y, g| g * y),
            Log(a) => unary(a, &|x, _, g| g / x),
            Abs(a) => unary(a, &|x, _, g| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            }),
            Square(a) => unary(a, &|x, _, g| g * (x + x)),
            Sqrt(a) => unary(a, &|_, y, g| {
                if y > T::zero() {
                    g / (y + y)
                } else {
                    T::zero()
                }
            }),
            Pow(a, p) => {
                let p = *p;
                unary(a, &move |x, _, g| {
                    if x == T::zero() && p > T::one() {
                        T::zero()
                    } else {
                        g * p * x.powf(p - T::one())
                    }
                })
            }
            Sigmoid(a) => unary(a, &|_, y, g| g * y * (T::one() - y)),
            LeakyRelu(a, slope) => {
                let slope = *slope;
                unary(a, &move |x, _, g| if x > T::zero() { g } else { g * slope })
            }
            Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                unary(a, &move |x, _, g| {
                    if x >= lo && x <= hi {
                        g
                    } else {
                        T::zero()
                    }
                })
            }
            Sum(a) => vec![(a.clone(), Tensor::full(a.shape(), g.data()[0]))],
            Mean(a) => {
                let n = T::from_usize(a.value().numel()).expect("size fits");
                vec![(a.clone(), Tensor::full(a.shape(), g.data()[0] / n))]
            }
            MeanPerSample(a) => {
                let b = a.shape()[0];
                let per = a.value().numel() / b;
                let n = T::from_usize(per).expect("size fits");
                let grad = Tensor::from_fn(a.shape(), |i| g.data()[i / per] / n);
                vec![(a.clone(), grad)]
            }
            Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                parts
                    .iter()
                    .map(|p| {
                        let len = p.shape()[*axis];
                        let mut data = Vec::with_capacity(p.value().numel());
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            data.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        offset += len;
                        (
                            p.clone(),
                            Tensor::new(p.shape().to_vec(), data).expect("part shape"),
                        )
                    })
                    .collect()
            }
            Slice { input, axis, start } => {
                let (outer, total, inner) = axis_split(input.shape(), *axis);
                let len = out.shape()[*axis];
                let mut data = vec![T::zero(); input.value().numel()];
                for o in 0..outer {
                    let dst = (o * total + start) * inner;
                    let src = o * len * inner;
                    data[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                vec![(
                    input.clone(),
                    Tensor::new(input.shape().to_vec(), data).expect("input shape"),
                )]
            }
            Conv2d {
                input,
                weight,
                bias,
            } => {
                let (gx, gw, gb) =
                    conv2d_backward(input.value(), weight.value(), g, input.requires_grad());
                let mut res = vec![(weight.clone(), gw), (bias.clone(), gb)];
                if let Some(gx) = gx {
                    res.push((input.clone(), gx));
                }
                res
            }
            Custom { inputs, backward } => inputs.iter().cloned().zip(backward(g)).collect(),
        }
    }
}

fn check_binary<T: Real>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() == b.shape() || a.value().numel() == 1 || b.value().numel() == 1 {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn unary_value<T: Real>(a: &Var<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    a.value().map(f)
}

impl<T: Real> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        check_binary("add", self, other)?;
        let v = zip_map(self.value(), other.value(), |x, y| x + y);
        Ok(Var::from_op(v, Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        check_binary("sub", self, other)?;
        let v = zip_map(self.value(), other.value(), |x, y| x - y);
        Ok(Var::from_op(v, Op::Sub(self.clone(), other.clone())))
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        check_binary("mul", self, other)?;
        let v = zip_map(self.value(), other.value(), |x, y| x * y);
        Ok(Var::from_op(v, Op::Mul(self.clone(), other.clone())))
    }

    pub fn div(&self, other: &Var<T>) -> Result<Var<T>> {
        check_binary("div", self, other)?;
        if other.value().data().iter().any(|v| *v == T::zero()) {
            return Err(TensorError::DivisionByZero);
        }
        let v = zip_map(self.value(), other.value(), |x, y| x / y);
        Ok(Var::from_op(v, Op::Div(self.clone(), other.clone())))
    }

    /// Multiply by a constant.
    pub fn scale(&self, c: f64) -> Var<T> {
        let c = T::from_f64_lossy(c);
        Var::from_op(unary_value(self, |x| x * c), Op::Scale(self.clone(), c))
    }

    /// Add a constant.
    pub fn shift(&self, c: f64) -> Var<T> {
        let c = T::from_f64_lossy(c);
        Var::from_op(unary_value(self, |x| x + c), Op::Shift(self.clone()))
    }

    pub fn exp(&self) -> Var<T> {
        Var::from_op(unary_value(self, T::exp), Op::Exp(self.clone()))
    }

    pub fn log(&self) -> Var<T> {
        Var::from_op(unary_value(self, T::ln), Op::Log(self.clone()))
    }

    pub fn abs(&self) -> Var<T> {
        Var::from_op(unary_value(self, T::abs), Op::Abs(self.clone()))
    }

    pub fn square(&self) -> Var<T> {
        Var::from_op(unary_value(self, |x| x * x), Op::Square(self.clone()))
    }

    /// Square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&self) -> Var<T> {
        Var::from_op(unary_value(self, T::sqrt), Op::Sqrt(self.clone()))
    }

    /// `x^p` for nonnegative `x`.
    pub fn pow(&self, p: f64) -> Var<T> {
        let p = T::from_f64_lossy(p);
        Var::from_op(unary_value(self, |x| x.powf(p)), Op::Pow(self.clone(), p))
    }

    pub fn sigmoid(&self) -> Var<T> {
        let v = unary_value(self, |x| T::one() / (T::one() + (-x).exp()));
        Var::from_op(v, Op::Sigmoid(self.clone()))
    }

    /// `max(x, slope * x)`; the derivative at 0 is `slope`.
    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let s = T::from_f64_lossy(slope);
        let v = unary_value(self, |x| if x > T::zero() { x } else { x * s });
        Var::from_op(v, Op::LeakyRelu(self.clone(), s))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<T> {
        let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        let v = unary_value(self, |x| x.max(lo).min(hi));
        Var::from_op(v, Op::Clamp(self.clone(), lo, hi))
    }

    pub fn sum(&self) -> Var<T> {
        let v = Tensor::scalar(T::from_f64_lossy(self.value().sum_f64()));
        Var::from_op(v, Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Var<T> {
        let v = Tensor::scalar(T::from_f64_lossy(self.value().mean_f64()));
        Var::from_op(v, Op::Mean(self.clone()))
    }

    /// Mean over every axis but the first: `[B, ...] -> [B]`.
    pub fn mean_per_sample(&self) -> Var<T> {
        let b = self.shape()[0];
        let per = self.value().numel() / b;
        let data = self
            .value()
            .data()
            .chunks(per)
            .map(|c| T::from_f64_lossy(c.iter().fold(0.0, |a, v| a + v.as_f64()) / per as f64))
            .collect();
        let v = Tensor::new(vec![b], data).expect("batch extent");
        Var::from_op(v, Op::MeanPerSample(self.clone()))
    }

    /// `[start, start + len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                reason: format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            });
        }
        let (outer, total, inner) = axis_split(shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * total + start) * inner;
            data.extend_from_slice(&self.value().data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let v = Tensor::new(out_shape, data)?;
        Ok(Var::from_op(
            v,
            Op::Slice {
                input: self.clone(),
                axis,
                start,
            },
        ))
    }
}

/// Join tensors along `axis`; all other extents must agree.
pub fn concat<T: Real>(parts: &[Var<T>], axis: usize) -> Result<Var<T>> {
    let first = parts.first().ok_or(TensorError::InvalidArgument {
        op: "concat",
        reason: "no inputs".into(),
    })?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(TensorError::InvalidArgument {
            op: "concat",
            reason: format!("axis {axis} out of range for rank {rank}"),
        });
    }
    for p in parts {
        let same = p.shape().len() == rank
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !same {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let (outer, _, inner) = axis_split(first.shape(), axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let len = p.shape()[axis] * inner;
            data.extend_from_slice(&p.value().data()[o * len..(o + 1) * len]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let v = Tensor::new(shape, data)?;
    Ok(Var::from_op(
        v,
        Op::Concat {
            parts: parts.to_vec(),
            axis,
        },
    ))
}

/// Cut `input` along `axis` into consecutive pieces of the given sizes.
pub fn split<T: Real>(input: &Var<T>, axis: usize, sizes: &[usize]) -> Result<Vec<Var<T>>> {
    let shape = input.shape();
    if axis >= shape.len() || sizes.iter().sum::<usize>() != shape[axis] {
        return Err(TensorError::InvalidArgument {
            op: "split",
            reason: format!("sizes {sizes:?} do not partition axis {axis} of {shape:?}"),
        });
    }
    let mut start = 0;
    sizes
        .iter()
        .map(|&len| {
            let part = input.slice(axis, start, len);
            start += len;
            part
        })
        .collect()
}

/// 3x3 convolution, stride 1, zero padding 1.
pub fn conv2d<T: Real>(input: &Var<T>, weight: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
    check_shapes(input.value(), weight.value(), bias.value())?;
    let v = conv2d_forward(input.value(), weight.value(), bias.value())?;
    Ok(Var::from_op(
        v,
        Op::Conv2d {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
        },
    ))
}
