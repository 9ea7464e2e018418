//! Network evaluation on image pairs under the three latent configurations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    achieved_reduction, histogram_kld, psnr_y, MetricReport, MetricRow, MetricsError, Result,
};
use crate::image::{Image, TrainingPair};
use crate::network::{Graph, InverseMode, NetworkParams, HIGH_CHANNELS};
use crate::objectives::{ssim, PowerModel, PowerModelConfig};
use crate::tensor::{Tensor, Var};
use crate::training::gaussian_tensor;

/// How the inverse pass obtains its latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationConfig {
    /// Grainy output from the true forward latent; clean output from a
    /// sample with the grain part zeroed.
    TrueLatent = 1,
    /// Sampled latent used directly, skipping the latent block.
    Bypass = 2,
    /// Sampled latent decoded through the latent block.
    Conditional = 3,
}

impl TryFrom<u32> for AblationConfig {
    type Error = MetricsError;
    fn try_from(id: u32) -> Result<Self> {
        match id {
            1 => Ok(AblationConfig::TrueLatent),
            2 => Ok(AblationConfig::Bypass),
            3 => Ok(AblationConfig::Conditional),
            other => Err(MetricsError::UnknownConfig(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Seed of the latent samples; sample `i` depends only on this and `i`.
    pub seed: u64,
    /// Round the LR image to 8 bits before the inverse pass.
    pub quantize_lr: bool,
    /// Gamma and RGBW coefficients; both models are always reported.
    pub power: PowerModelConfig,
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            seed: 0,
            quantize_lr: false,
            power: PowerModelConfig::default(),
            threads: 1,
        }
    }
}

/// Worker count: `ThreeR_NUM_THREADS` if set, else the available cores.
pub fn num_threads() -> usize {
    std::env::var("ThreeR_NUM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Metrics of the LR output and both HR reconstructions, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub config: AblationConfig,
    pub clean_lr: MetricReport,
    pub clean_hr: MetricReport,
    pub grainy_hr: MetricReport,
}

struct ImageResult {
    clean_lr: MetricRow,
    clean_hr: MetricRow,
    grainy_hr: MetricRow,
}

/// Latent sample for image `index`.
pub(crate) fn latent_sample(seed: u64, index: usize, shape: &[usize]) -> Tensor<f32> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    gaussian_tensor(shape, &mut rng)
}

fn evaluate_one(
    params: &NetworkParams<f32>,
    name: &str,
    pair: &TrainingPair,
    index: usize,
    config: AblationConfig,
    opts: &EvalOptions,
) -> Result<ImageResult> {
    let graph: Graph<f32> = params.graph(false);
    let x = Var::constant(pair.grainy_hr.to_tensor::<f32>());
    let out = graph.forward(&x)?;
    let mut lr_img = Image::from_tensor(out.lr.value(), 0)?.clamped();
    if opts.quantize_lr {
        lr_img = lr_img.quantized_8bit();
    }
    let lr_in = if opts.quantize_lr {
        Var::constant(lr_img.to_tensor::<f32>())
    } else {
        out.lr.clone()
    };
    let reference = &pair.clean_lr;
    let rate_y = achieved_reduction(
        &lr_img,
        reference,
        &opts.power.with_model(PowerModel::Luminance),
    )?;
    let rate_rgbw =
        achieved_reduction(&lr_img, reference, &opts.power.with_model(PowerModel::Rgbw))?;

    let z = Var::constant(latent_sample(
        opts.seed,
        index,
        &[1, HIGH_CHANNELS, lr_img.height(), lr_img.width()],
    ));
    let (grainy, clean) = match config {
        AblationConfig::TrueLatent => (
            graph.inverse(&lr_in, &out.z, InverseMode::TrueLatent)?,
            graph.inverse(&lr_in, &z, InverseMode::Clean)?,
        ),
        AblationConfig::Bypass => (
            graph.inverse_with_tilde(&lr_in, &z, InverseMode::Grainy)?,
            graph.inverse_with_tilde(&lr_in, &z, InverseMode::Clean)?,
        ),
        AblationConfig::Conditional => (
            graph.inverse(&lr_in, &z, InverseMode::Grainy)?,
            graph.inverse(&lr_in, &z, InverseMode::Clean)?,
        ),
    };
    let grainy = Image::from_tensor(grainy.value(), 0)?.clamped();
    let clean = Image::from_tensor(clean.value(), 0)?.clamped();
    let row = |pred: &Image, gt: &Image| -> Result<MetricRow> {
        Ok(MetricRow {
            image: name.to_string(),
            psnr_y: psnr_y(pred, gt)?,
            ssim: ssim(pred, gt)?,
            kld: histogram_kld(gt, pred, 256),
            rate_y,
            rate_rgbw,
        })
    };
    Ok(ImageResult {
        clean_lr: row(&lr_img, reference)?,
        clean_hr: row(&clean, &pair.clean_hr)?,
        grainy_hr: row(&grainy, &pair.grainy_hr)?,
    })
}

/// Evaluate `config` on named pairs, spreading images over `opts.threads`
/// workers. Rows keep the input order.
pub fn evaluate_ablation(
    params: &NetworkParams<f32>,
    pairs: &[(String, TrainingPair)],
    config: AblationConfig,
    opts: &EvalOptions,
) -> Result<AblationReport> {
    let threads = opts.threads.clamp(1, pairs.len().max(1));
    let mut results: Vec<Option<Result<ImageResult>>> = (0..pairs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    (t..pairs.len())
                        .step_by(threads)
                        .map(|i| {
                            (
                                i,
                                evaluate_one(params, &pairs[i].0, &pairs[i].1, i, config, opts),
                            )
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("evaluation worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    let mut report = AblationReport {
        config,
        clean_lr: MetricReport::default(),
        clean_hr: MetricReport::default(),
        grainy_hr: MetricReport::default(),
    };
    for r in results {
        let r = r.expect("every index evaluated")?;
        report.clean_lr.rows.push(r.clean_lr);
        report.clean_hr.rows.push(r.clean_hr);
        report.grainy_hr.rows.push(r.grainy_hr);
    }
    Ok(report)
}

/// Standard evaluation: sampled latents through the latent block.
pub fn evaluate_pairs(
    params: &NetworkParams<f32>,
    pairs: &[(String, TrainingPair)],
    opts: &EvalOptions,
) -> Result<AblationReport> {
    evaluate_ablation(params, pairs, AblationConfig::Conditional, opts)
}
