//! Named parameter tree shared by tensors, graph variables and optimizer
//! state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NetworkConfig;
use crate::tensor::{Real, Tensor, KERNEL};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<P> {
    /// `[Cout, Cin, 3, 3]`
    pub weight: P,
    /// `[Cout]`
    pub bias: P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock<P> {
    pub layers: Vec<ConvLayer<P>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock<P> {
    pub phi: DenseBlock<P>,
    pub psi: DenseBlock<P>,
    pub eta: DenseBlock<P>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights<P> {
    pub blocks: Vec<CouplingBlock<P>>,
    pub phi_g: DenseBlock<P>,
    pub theta_g: DenseBlock<P>,
}

impl<P> DenseBlock<P> {
    fn map<Q>(&self, prefix: &str, f: &mut impl FnMut(&str, &P) -> Q) -> DenseBlock<Q> {
        DenseBlock {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| ConvLayer {
                    weight: f(&format!("{prefix}.layer{i}.weight"), &l.weight),
                    bias: f(&format!("{prefix}.layer{i}.bias"), &l.bias),
                })
                .collect(),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.layer{i}.weight"), &l.weight));
            out.push((format!("{prefix}.layer{i}.bias"), &l.bias));
        }
    }
}

impl<P> Weights<P> {
    /// Same tree with every leaf transformed; `f` sees the leaf's name.
    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> Weights<Q> {
        Weights {
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| CouplingBlock {
                    phi: b.phi.map(&format!("block{i}.phi"), &mut f),
                    psi: b.psi.map(&format!("block{i}.psi"), &mut f),
                    eta: b.eta.map(&format!("block{i}.eta"), &mut f),
                })
                .collect(),
            phi_g: self.phi_g.map("latent.phi_g", &mut f),
            theta_g: self.theta_g.map("latent.theta_g", &mut f),
        }
    }

    /// Leaves in canonical order with their names.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            b.phi.visit(&format!("block{i}.phi"), &mut out);
            b.psi.visit(&format!("block{i}.psi"), &mut out);
            b.eta.visit(&format!("block{i}.eta"), &mut out);
        }
        self.phi_g.visit("latent.phi_g", &mut out);
        self.theta_g.visit("latent.theta_g", &mut out);
        out
    }

    pub fn leaves(&self) -> Vec<&P> {
        self.named().into_iter().map(|(_, p)| p).collect()
    }

    /// Rebuild a tree of the same layout from leaves in canonical order.
    pub fn zip_leaves<Q: Clone>(&self, leaves: &[Q]) -> Weights<Q> {
        let mut it = leaves.iter();
        self.map(|_, _| it.next().expect("leaf count matches").clone())
    }
}

/// `(Cin, Cout)` of every convolution in a dense block.
pub fn dense_layer_channels(
    cin: usize,
    cout: usize,
    hidden: usize,
    layers: usize,
) -> Vec<(usize, usize)> {
    (0..layers)
        .map(|i| {
            let inp = cin + i * hidden;
            let out = if i + 1 == layers { cout } else { hidden };
            (inp, out)
        })
        .collect()
}

/// Parameters of one dense block.
pub fn dense_param_count(cin: usize, cout: usize, hidden: usize, layers: usize) -> usize {
    dense_layer_channels(cin, cout, hidden, layers)
        .iter()
        .map(|&(i, o)| o * i * KERNEL * KERNEL + o)
        .sum()
}

/// Final layers drawn at this fraction of the Kaiming bound when they are not
/// zeroed. At full scale eight composed blocks overflow `f32` precision.
pub const RANDOM_FINAL_SCALE: f64 = 0.1;

fn init_dense<T: Real>(
    cin: usize,
    cout: usize,
    cfg: &NetworkConfig,
    rng: &mut ChaCha8Rng,
    zero_last: bool,
) -> DenseBlock<Tensor<T>> {
    let slope = super::LEAKY_SLOPE;
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    let chans = dense_layer_channels(cin, cout, cfg.hidden, cfg.layers);
    let last = chans.len() - 1;
    DenseBlock {
        layers: chans
            .into_iter()
            .enumerate()
            .map(|(i, (ci, co))| {
                let fan_in = (ci * KERNEL * KERNEL) as f64;
                let mut bound = cfg.init_scale * gain * (3.0 / fan_in).sqrt();
                if i == last {
                    bound *= RANDOM_FINAL_SCALE;
                }
                let weight = if i == last && zero_last {
                    Tensor::zeros(&[co, ci, KERNEL, KERNEL])
                } else {
                    Tensor::from_fn(&[co, ci, KERNEL, KERNEL], |_| {
                        T::from_f64_lossy(rng.random_range(-bound..bound))
                    })
                };
                ConvLayer {
                    weight,
                    bias: Tensor::zeros(&[co]),
                }
            })
            .collect(),
    }
}

/// Kaiming-uniform weights, zero biases; the final layer of each dense block
/// is zero when `zero_last` is set, making the network the identity.
pub fn init_weights<T: Real>(
    cfg: &NetworkConfig,
    seed: u64,
    zero_last: bool,
) -> Weights<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (super::LOW_CHANNELS, super::HIGH_CHANNELS);
    let blocks = (0..cfg.blocks)
        .map(|_| CouplingBlock {
            phi: init_dense(hi, lo, cfg, &mut rng, zero_last),
            psi: init_dense(lo, hi, cfg, &mut rng, zero_last),
            eta: init_dense(lo, hi, cfg, &mut rng, zero_last),
        })
        .collect();
    Weights {
        blocks,
        phi_g: init_dense(lo, hi, cfg, &mut rng, zero_last),
        theta_g: init_dense(lo, hi, cfg, &mut rng, zero_last),
    }
}
