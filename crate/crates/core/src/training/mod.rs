//! Two-stage optimization.
//!
//! Stage 1 minimizes forward fidelity, latent regularization and both
//! inverse fidelities. Stage 2 starts from a stage-1 network and adds the
//! power and SSIM terms for one target reduction rate.

mod adam;
mod gradcheck;

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::config::{ConfigError, KvFile};
use crate::image::{random_crop_flip, Image, ImageError, TrainingPair};
use crate::network::{Graph, InverseMode, NetworkConfig, NetworkError, NetworkParams};
use crate::objectives::{
    loss_back, loss_forward, loss_power, loss_reg, loss_ssim, total_loss_var, LossParts,
    LossWeights, ObjectiveError, PowerModelConfig,
};
use crate::tensor::{backward, Real, Tensor, TensorError, Var};

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::{gradient_check, GradcheckEntry, GradcheckOptions, GradcheckReport};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("iteration {iter}: {source}")]
    NonFinite {
        iter: usize,
        #[source]
        source: ObjectiveError,
    },
    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TrainingError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub crop: usize,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub lr: f64,
    /// Stage-1 iterations at which the learning rate halves. Empty means
    /// 20/40/60/80 % of `stage1_iters`.
    pub lr_milestones: Vec<usize>,
    pub adam: AdamHyper,
    /// Global gradient L2 norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub power: PowerModelConfig,
    pub network: NetworkConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 16,
            crop: 144,
            stage1_iters: 2000,
            stage2_iters: 200,
            lr: 2e-4,
            lr_milestones: Vec::new(),
            adam: AdamHyper::default(),
            grad_clip: 10.0,
            seed: 0,
            weights: LossWeights::default(),
            power: PowerModelConfig::default(),
            network: NetworkConfig::default(),
        }
    }
}

impl TrainingConfig {
    /// Values used for full-length runs.
    pub fn full_scale() -> Self {
        TrainingConfig {
            stage1_iters: 500_000,
            stage2_iters: 5_000,
            lr_milestones: vec![100_000, 200_000, 300_000, 400_000],
            ..Self::default()
        }
    }

    pub fn milestones(&self) -> Vec<usize> {
        if self.lr_milestones.is_empty() {
            (1..=4).map(|k| self.stage1_iters * k / 5).collect()
        } else {
            self.lr_milestones.clone()
        }
    }

    /// Stage-1 learning rate at `iter`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        let halvings = self.milestones().iter().filter(|&&m| iter >= m).count();
        self.lr * 0.5f64.powi(halvings as i32)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.crop < 2 || !self.crop.is_multiple_of(2) {
            return bad(format!("crop must be even and positive, got {}", self.crop));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive".into());
        }
        if self.grad_clip.is_nan() || self.grad_clip < 0.0 {
            return bad("grad_clip must be nonnegative".into());
        }
        let ms = &self.lr_milestones;
        if ms.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("lr_milestones {ms:?} must be strictly increasing"));
        }
        if ms.last().is_some_and(|&m| m >= self.stage1_iters) {
            return bad(format!(
                "lr_milestones {ms:?} must be below stage1_iters {}",
                self.stage1_iters
            ));
        }
        self.network.validate()?;
        self.power.validate()?;
        self.weights.validate()
    }

    /// Read every key this crate understands and reject the rest.
    pub fn from_kv(mut kv: KvFile) -> Result<Self, ConfigError> {
        let d = Self::default();
        let adam = AdamHyper {
            beta1: kv.take("beta1")?.unwrap_or(d.adam.beta1),
            beta2: kv.take("beta2")?.unwrap_or(d.adam.beta2),
            eps: kv.take("eps")?.unwrap_or(d.adam.eps),
        };
        let cfg = TrainingConfig {
            batch_size: kv.take("batch_size")?.unwrap_or(d.batch_size),
            crop: kv.take("crop")?.unwrap_or(d.crop),
            stage1_iters: kv.take("stage1_iters")?.unwrap_or(d.stage1_iters),
            stage2_iters: kv.take("stage2_iters")?.unwrap_or(d.stage2_iters),
            lr: kv.take("lr")?.unwrap_or(d.lr),
            lr_milestones: kv.take_list("lr_milestones")?.unwrap_or_default(),
            adam,
            grad_clip: kv.take("grad_clip")?.unwrap_or(d.grad_clip),
            seed: kv.take("seed")?.unwrap_or(d.seed),
            weights: LossWeights::take_from(&mut kv)?,
            power: PowerModelConfig::take_from(&mut kv)?,
            network: NetworkConfig::take_from(&mut kv)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        Self::from_kv(KvFile::read(path)?)
    }

    pub fn to_kv_string(&self) -> String {
        let ms: Vec<String> = self.lr_milestones.iter().map(|m| m.to_string()).collect();
        format!(
            "batch_size = {}\ncrop = {}\nstage1_iters = {}\nstage2_iters = {}\nlr = {}\nlr_milestones = {}\n\
             beta1 = {}\nbeta2 = {}\neps = {}\ngrad_clip = {}\nseed = {}\n{}{}{}",
            self.batch_size,
            self.crop,
            self.stage1_iters,
            self.stage2_iters,
            self.lr,
            ms.join(", "),
            self.adam.beta1,
            self.adam.beta2,
            self.adam.eps,
            self.grad_clip,
            self.seed,
            self.weights.to_kv_string(),
            self.power.to_kv_string(),
            self.network.to_kv_string(),
        )
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub total: f64,
    pub parts: LossParts<f64>,
    pub lr: f64,
}

pub const HISTORY_HEADER: &str =
    "iter,loss_total,loss_forw,loss_reg,loss_back_c,loss_back_g,loss_pow,loss_ssim,lr";

pub fn write_history_csv(mut out: impl Write, history: &[LossRecord]) -> std::io::Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    for r in history {
        let p = &r.parts;
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.iter, r.total, p.forw, p.reg, p.back_c, p.back_g, p.pow, p.ssim, r.lr
        )?;
    }
    Ok(())
}

pub fn save_history_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_history_csv(&mut w, history)?;
    w.flush()?;
    Ok(())
}

/// Network after training plus one loss record per iteration.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams<f32>,
    pub history: Vec<LossRecord>,
}

/// Tensors of one training batch.
pub struct Batch {
    pub grainy_hr: Tensor<f32>,
    pub clean_hr: Tensor<f32>,
    pub clean_lr: Tensor<f32>,
}

impl Batch {
    pub fn from_pairs(pairs: &[TrainingPair]) -> Result<Self> {
        let stack = |f: fn(&TrainingPair) -> &Image| -> Result<Tensor<f32>> {
            let imgs: Vec<Image> = pairs.iter().map(|p| f(p).clone()).collect();
            Ok(Image::batch_to_tensor(&imgs)?)
        };
        Ok(Batch {
            grainy_hr: stack(|p| &p.grainy_hr)?,
            clean_hr: stack(|p| &p.clean_hr)?,
            clean_lr: stack(|p| &p.clean_lr)?,
        })
    }
}

/// Draw `batch_size` random crops from `data`.
pub fn sample_batch(
    data: &[TrainingPair],
    cfg: &TrainingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    let pairs = (0..cfg.batch_size)
        .map(|_| {
            let idx = rng.random_range(0..data.len());
            let seed: u64 = rng.random();
            random_crop_flip(&data[idx], cfg.crop, seed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Batch::from_pairs(&pairs)
}

/// Standard normal tensor.
pub fn gaussian_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        v as f32
    })
}

/// Loss terms for one batch on a trainable graph, stage 2 terms included
/// when `stage2` is set.
pub fn batch_losses<T: Real>(
    graph: &Graph<T>,
    batch: &Batch,
    z_sample: &Tensor<T>,
    cfg: &TrainingConfig,
    stage2: bool,
) -> Result<LossParts<Var<T>>> {
    let grainy = Var::constant(batch.grainy_hr.cast());
    let clean = Var::constant(batch.clean_hr.cast());
    let lr_gt = Var::constant(batch.clean_lr.cast());
    let out = graph.forward(&grainy)?;
    let forw = loss_forward(&out.lr, &lr_gt)?;
    let reg = loss_reg(&out.z);
    let z_tilde = graph.latent_decode(&Var::constant(z_sample.clone()), &out.lr)?;
    let rec_g = graph.inverse_with_tilde(&out.lr, &z_tilde, InverseMode::Grainy)?;
    let rec_c = graph.inverse_with_tilde(&out.lr, &z_tilde, InverseMode::Clean)?;
    let back_g = loss_back(&rec_g, &grainy)?;
    let back_c = loss_back(&rec_c, &clean)?;
    let zero = || Var::constant(Tensor::scalar(T::from_f64_lossy(0.0)));
    let (pow, ssim) = if stage2 {
        (
            loss_power(&out.lr, &lr_gt, cfg.weights.r, &cfg.power)?,
            loss_ssim(&out.lr, &lr_gt)?,
        )
    } else {
        (zero(), zero())
    };
    Ok(LossParts {
        forw,
        reg,
        back_c,
        back_g,
        pow,
        ssim,
    })
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor<f32>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

fn run(
    mut params: NetworkParams<f32>,
    data: &[TrainingPair],
    cfg: &TrainingConfig,
    stage2: bool,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    cfg.validate()?;
    let iters = if stage2 {
        cfg.stage2_iters
    } else {
        cfg.stage1_iters
    };
    let stage_salt = if stage2 {
        0x5354_4147_4532
    } else {
        0x5354_4147_4531
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stage_salt);
    let names: Vec<String> = params.weights.named().into_iter().map(|(n, _)| n).collect();
    let mut state = AdamState::new(&params.weights.leaves());
    let mut history = Vec::with_capacity(iters);
    for iter in 0..iters {
        let lr = if stage2 { cfg.lr } else { cfg.lr_at(iter) };
        let batch = sample_batch(data, cfg, &mut rng)?;
        let (b, _, h, w) = batch.clean_lr.dims4()?;
        let z = gaussian_tensor(&[b, crate::network::HIGH_CHANNELS, h, w], &mut rng);
        let graph = params.graph(true);
        let parts = batch_losses(&graph, &batch, &z, cfg, stage2)?;
        let total = total_loss_var(&parts, &cfg.weights, stage2)
            .map_err(|source| TrainingError::NonFinite { iter, source })?;
        let values = LossParts {
            forw: parts.forw.item() as f64,
            reg: parts.reg.item() as f64,
            back_c: parts.back_c.item() as f64,
            back_g: parts.back_g.item() as f64,
            pow: parts.pow.item() as f64,
            ssim: parts.ssim.item() as f64,
        };
        history.push(LossRecord {
            iter,
            total: total.item() as f64,
            parts: values,
            lr,
        });
        let grads = backward(&total)?;
        let leaves = graph.weights.leaves();
        let mut flat: Vec<Tensor<f32>> = Vec::with_capacity(leaves.len());
        for (k, v) in leaves.iter().enumerate() {
            flat.push(
                grads
                    .get(v)
                    .cloned()
                    .ok_or_else(|| TrainingError::MissingGrad(names[k].clone()))?,
            );
        }
        drop(graph);
        clip_global_norm(&mut flat, cfg.grad_clip);
        let mut tensors: Vec<Tensor<f32>> = params.weights.leaves().into_iter().cloned().collect();
        let grads: Vec<Option<Tensor<f32>>> = flat.into_iter().map(Some).collect();
        adam_step(&mut tensors, &grads, &mut state, lr, &cfg.adam)
            .map_err(|i| TrainingError::MissingGrad(names[i].clone()))?;
        params.weights = params.weights.zip_leaves(&tensors);
    }
    if stage2 {
        params.r_target = cfg.weights.r;
    }
    Ok(TrainOutcome { params, history })
}

/// Stage 1 from `init`.
pub fn train_stage1(
    init: NetworkParams<f32>,
    data: &[TrainingPair],
    cfg: &TrainingConfig,
) -> Result<TrainOutcome> {
    run(init, data, cfg, false)
}

/// Stage 2 fine-tuning for `cfg.weights.r`; the result records that rate.
pub fn train_stage2(
    params: NetworkParams<f32>,
    data: &[TrainingPair],
    cfg: &TrainingConfig,
) -> Result<TrainOutcome> {
    run(params, data, cfg, true)
}
