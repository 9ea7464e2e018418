use super::weights::DenseBlock;
use super::{
    InverseMode, NetworkConfig, NetworkError, Result, Weights, HIGH_CHANNELS, LEAKY_SLOPE,
    LOW_CHANNELS,
};
use crate::haar::{haar_forward_var, haar_inverse_var};
use crate::tensor::{concat, conv2d, Real, Tensor, Var};

/// Network weights as graph leaves, ready to run passes.
pub struct Graph<T: Real> {
    pub config: NetworkConfig,
    pub weights: Weights<Var<T>>,
    /// Stop gradients through the latent block's LR condition. Only
    /// gradient checks turn this off.
    pub detach_condition: bool,
}

/// Everything a forward pass produces.
pub struct ForwardOutput<T: Real> {
    /// Low branch in pixel units, unclamped.
    pub lr: Var<T>,
    /// High branch before latent normalization.
    pub z_tilde: Var<T>,
    pub z: Var<T>,
}

fn check_channels<T: Real>(v: &Var<T>, channels: usize, what: &str) -> Result<()> {
    let s = v.shape();
    if s.len() != 4 || s[1] != channels {
        return Err(NetworkError::Shape(format!(
            "{what} must be [B, {channels}, H, W], got {s:?}"
        )));
    }
    Ok(())
}

fn check_spatial<T: Real>(a: &Var<T>, b: &Var<T>, what: &str) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa[0] != sb[0] || sa[2..] != sb[2..] {
        return Err(NetworkError::Shape(format!(
            "{what}: batch/spatial extents differ, {sa:?} vs {sb:?}"
        )));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new(config: NetworkConfig, weights: Weights<Var<T>>) -> Self {
        Graph {
            config,
            weights,
            detach_condition: true,
        }
    }

    /// Densely connected convolutions; every layer sees all earlier outputs.
    pub fn dense(&self, block: &DenseBlock<Var<T>>, x: &Var<T>) -> Result<Var<T>> {
        let mut feats = vec![x.clone()];
        let last = block.layers.len() - 1;
        for (i, layer) in block.layers.iter().enumerate() {
            let input = if feats.len() == 1 {
                feats[0].clone()
            } else {
                concat(&feats, 1)?
            };
            let out = conv2d(&input, &layer.weight, &layer.bias)?;
            if i == last {
                return Ok(out);
            }
            feats.push(out.leaky_relu(LEAKY_SLOPE));
        }
        unreachable!("dense blocks have at least one layer")
    }

    /// Bounded log-scale `alpha * (2 sigmoid(y) - 1)`.
    fn log_scale(&self, raw: &Var<T>, location: impl FnOnce() -> String) -> Result<Var<T>> {
        if !raw.value().all_finite() {
            return Err(NetworkError::NonFinite(location()));
        }
        let a = self.config.alpha;
        Ok(raw.sigmoid().scale(2.0 * a).shift(-a))
    }

    pub fn coupling_forward(
        &self,
        index: usize,
        h1: &Var<T>,
        h2: &Var<T>,
    ) -> Result<(Var<T>, Var<T>)> {
        let b = &self.weights.blocks[index];
        let h1n = h1.add(&self.dense(&b.phi, h2)?)?;
        let s = self.log_scale(&self.dense(&b.psi, &h1n)?, || {
            format!("coupling block {index}")
        })?;
        let h2n = h2.mul(&s.exp())?.add(&self.dense(&b.eta, &h1n)?)?;
        Ok((h1n, h2n))
    }

    pub fn coupling_inverse(
        &self,
        index: usize,
        h1n: &Var<T>,
        h2n: &Var<T>,
    ) -> Result<(Var<T>, Var<T>)> {
        let b = &self.weights.blocks[index];
        let s = self.log_scale(&self.dense(&b.psi, h1n)?, || {
            format!("coupling block {index}")
        })?;
        let h2 = h2n
            .sub(&self.dense(&b.eta, h1n)?)?
            .mul(&s.scale(-1.0).exp())?;
        let h1 = h1n.sub(&self.dense(&b.phi, &h2)?)?;
        Ok((h1, h2))
    }

    fn latent_affine(&self, lr: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let cond = if self.detach_condition {
            lr.detach()
        } else {
            lr.clone()
        };
        let shift = self.dense(&self.weights.phi_g, &cond)?;
        let s = self.log_scale(&self.dense(&self.weights.theta_g, &cond)?, || {
            "latent block".into()
        })?;
        Ok((shift, s))
    }

    /// `z = (z_tilde - phi_g(c)) * exp(-s(theta_g(c)))`, condition detached.
    pub fn latent_encode(&self, z_tilde: &Var<T>, lr: &Var<T>) -> Result<Var<T>> {
        check_channels(z_tilde, HIGH_CHANNELS, "latent")?;
        check_channels(lr, LOW_CHANNELS, "LR condition")?;
        check_spatial(z_tilde, lr, "latent_encode")?;
        let (shift, s) = self.latent_affine(lr)?;
        Ok(z_tilde.sub(&shift)?.mul(&s.scale(-1.0).exp())?)
    }

    /// `z_tilde = z * exp(s(theta_g(c))) + phi_g(c)`.
    pub fn latent_decode(&self, z: &Var<T>, lr: &Var<T>) -> Result<Var<T>> {
        check_channels(z, HIGH_CHANNELS, "latent")?;
        check_channels(lr, LOW_CHANNELS, "LR condition")?;
        check_spatial(z, lr, "latent_decode")?;
        let (shift, s) = self.latent_affine(lr)?;
        Ok(z.mul(&s.exp())?.add(&shift)?)
    }

    pub fn forward(&self, hr: &Var<T>) -> Result<ForwardOutput<T>> {
        check_channels(hr, LOW_CHANNELS, "input image")?;
        let packed = haar_forward_var(hr)?;
        let mut h1 = packed.slice(1, 0, LOW_CHANNELS)?.scale(0.5);
        let mut h2 = packed.slice(1, LOW_CHANNELS, HIGH_CHANNELS)?;
        for i in 0..self.weights.blocks.len() {
            (h1, h2) = self.coupling_forward(i, &h1, &h2)?;
        }
        let z = self.latent_encode(&h2, &h1)?;
        Ok(ForwardOutput {
            lr: h1,
            z_tilde: h2,
            z,
        })
    }

    /// Zero the trailing `z_grain_dim` channels.
    pub fn zero_grain(&self, z_tilde: &Var<T>) -> Result<Var<T>> {
        let g = self.config.z_grain_dim;
        if g == 0 {
            return Ok(z_tilde.clone());
        }
        let s = z_tilde.shape();
        let detail = z_tilde.slice(1, 0, HIGH_CHANNELS - g)?;
        let zeros = Var::constant(Tensor::zeros(&[s[0], g, s[2], s[3]]));
        Ok(concat(&[detail, zeros], 1)?)
    }

    /// Coupling blocks in reverse and Haar synthesis, from a decoded latent.
    pub fn inverse_from_tilde(&self, lr: &Var<T>, z_tilde: &Var<T>) -> Result<Var<T>> {
        check_channels(lr, LOW_CHANNELS, "LR image")?;
        check_channels(z_tilde, HIGH_CHANNELS, "latent")?;
        check_spatial(z_tilde, lr, "inverse")?;
        let mut h1 = lr.clone();
        let mut h2 = z_tilde.clone();
        for i in (0..self.weights.blocks.len()).rev() {
            (h1, h2) = self.coupling_inverse(i, &h1, &h2)?;
        }
        let packed = concat(&[h1.scale(2.0), h2], 1)?;
        Ok(haar_inverse_var(&packed)?)
    }

    /// Decode `z` through the latent block, apply `mode`, invert.
    pub fn inverse(&self, lr: &Var<T>, z: &Var<T>, mode: InverseMode) -> Result<Var<T>> {
        let z_tilde = self.latent_decode(z, lr)?;
        self.inverse_with_tilde(lr, &z_tilde, mode)
    }

    /// Like [`Graph::inverse`] but `z_tilde` is used as given, skipping the
    /// latent block.
    pub fn inverse_with_tilde(
        &self,
        lr: &Var<T>,
        z_tilde: &Var<T>,
        mode: InverseMode,
    ) -> Result<Var<T>> {
        let z_tilde = match mode {
            InverseMode::Clean => self.zero_grain(z_tilde)?,
            InverseMode::Grainy | InverseMode::TrueLatent => z_tilde.clone(),
        };
        self.inverse_from_tilde(lr, &z_tilde)
    }
}
