//! Central finite-difference check of every stage-1 parameter gradient in
//! 64-bit arithmetic on a reduced network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{batch_losses, gaussian_tensor, Batch, Result, TrainingConfig};
use crate::image::CorpusSpec;
use crate::network::{NetworkConfig, NetworkParams, HIGH_CHANNELS};
use crate::objectives::{total_loss_var, LossWeights};
use crate::tensor::{backward, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub network: NetworkConfig,
    pub batch: usize,
    /// HR side length of the toy images.
    pub size: usize,
    /// Finite-difference step.
    pub step: f64,
    /// Below this magnitude the error is taken relative to the floor, which
    /// sits above the rounding noise of the difference quotient.
    pub floor: f64,
    pub tolerance: f64,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            network: NetworkConfig {
                blocks: 2,
                hidden: 4,
                layers: 3,
                ..NetworkConfig::default()
            },
            batch: 2,
            size: 16,
            step: 3e-6,
            floor: 1e-5,
            tolerance: 1e-4,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    pub entries: Vec<GradcheckEntry>,
    pub worst: Option<GradcheckEntry>,
    /// Entries above the tolerance.
    pub failures: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_err)
    }
}

/// Compare backprop against central differences for every scalar weight of
/// a randomly initialized network (non-zero final layers) on a grainy toy
/// batch.
pub fn gradient_check(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    opts.network.validate()?;
    let spec = CorpusSpec {
        count: opts.batch,
        width: opts.size,
        height: opts.size,
        grain_levels: vec![3],
        ar_coefficients: None,
        test_every: 0,
        seed: opts.seed,
    };
    let pairs: Vec<_> = spec.pairs()?.into_iter().map(|(p, _)| p).collect();
    let batch = Batch::from_pairs(&pairs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let half = opts.size / 2;
    let z: Tensor<f64> = gaussian_tensor(&[opts.batch, HIGH_CHANNELS, half, half], &mut rng).cast();
    let params: NetworkParams<f64> =
        NetworkParams::<f32>::random(opts.network.clone(), opts.seed).cast();
    let cfg = TrainingConfig {
        weights: opts.weights.clone(),
        network: opts.network.clone(),
        ..TrainingConfig::default()
    };

    let loss_at = |p: &NetworkParams<f64>, trainable: bool| -> Result<_> {
        // Finite differences see the path through the latent condition.
        let mut graph = p.graph(trainable);
        graph.detach_condition = false;
        let parts = batch_losses(&graph, &batch, &z, &cfg, false)?;
        let total = total_loss_var(&parts, &cfg.weights, false)?;
        Ok((graph, total))
    };

    let (graph, total) = loss_at(&params, true)?;
    let grads = backward(&total)?;
    let analytic: Vec<Tensor<f64>> = graph
        .weights
        .leaves()
        .iter()
        .map(|v| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(v.value().shape()))
        })
        .collect();
    drop(graph);

    let names: Vec<String> = params.weights.named().into_iter().map(|(n, _)| n).collect();
    let base: Vec<Tensor<f64>> = params.weights.leaves().into_iter().cloned().collect();
    let mut report = GradcheckReport {
        checked: 0,
        entries: Vec::new(),
        worst: None,
        failures: Vec::new(),
    };
    for (k, leaf) in base.iter().enumerate() {
        for i in 0..leaf.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let mut tensors = base.clone();
                tensors[k].data_mut()[i] += delta;
                let p = NetworkParams {
                    weights: params.weights.zip_leaves(&tensors),
                    ..params.clone()
                };
                Ok(loss_at(&p, false)?.1.item())
            };
            let numeric = (eval(opts.step)? - eval(-opts.step)?) / (2.0 * opts.step);
            let a = analytic[k].data()[i];
            let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            let entry = GradcheckEntry {
                name: names[k].clone(),
                index: i,
                analytic: a,
                numeric,
                rel_err,
            };
            report.checked += 1;
            if rel_err > opts.tolerance {
                report.failures.push(entry.clone());
            }
            if report.worst.as_ref().is_none_or(|w| rel_err > w.rel_err) {
                report.worst = Some(entry.clone());
            }
            report.entries.push(entry);
        }
    }
    Ok(report)
}
