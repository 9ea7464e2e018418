//! Image quality metrics, achieved power reduction, per-image reports,
//! ablation evaluation and energy-savings reports.

mod energy;
mod evaluate;

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::image::{Image, ImageError};
use crate::network::NetworkError;
use crate::objectives::{power, ObjectiveError, PowerModelConfig};

pub use energy::{
    energy_report_csv, energy_savings_report, read_chain_measurements, ChainMeasurements,
    ChainRecord, EnergyCoefficients, EnergyRow, ENERGY_HEADER,
};
pub use evaluate::{
    evaluate_ablation, evaluate_pairs, num_threads, AblationConfig, AblationReport, EvalOptions,
};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("reference power is zero")]
    ZeroReferencePower,
    #[error("unknown ablation configuration {0} (expected 1, 2 or 3)")]
    UnknownConfig(u32),
    #[error("no measurement row for baseline `{variant}` at qp {qp}")]
    MissingBaseline { variant: String, qp: String },
    #[error("measurements line {line}: {message}")]
    Measurements { line: usize, message: String },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        let ((aw, ah), (bw, bh)) = (a.dims(), b.dims());
        return Err(MetricsError::DimensionMismatch(aw, ah, bw, bh));
    }
    Ok(())
}

/// PSNR of BT.601 luma with peak 1; `+inf` for identical luma.
pub fn psnr_y(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let (ya, yb) = (a.luma_plane(), b.luma_plane());
    let mse = ya
        .iter()
        .zip(&yb)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        / ya.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

/// `KL(p || q)` in nats for two distributions over the same support.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

/// Luma histogram with add-one smoothing, normalized to sum 1.
pub fn luma_histogram(img: &Image, bins: usize) -> Vec<f64> {
    let mut counts = vec![1.0f64; bins];
    for y in img.luma_plane() {
        let idx = ((y.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[idx] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    counts.into_iter().map(|c| c / total).collect()
}

/// `KL(H_a || H_b)` of smoothed luma histograms.
pub fn histogram_kld(a: &Image, b: &Image, bins: usize) -> f64 {
    kl_divergence(&luma_histogram(a, bins), &luma_histogram(b, bins))
}

/// `1 - P(pred) / P(reference)`.
pub fn achieved_reduction(pred: &Image, reference: &Image, cfg: &PowerModelConfig) -> Result<f64> {
    same_dims(pred, reference)?;
    let p_ref = power(reference, cfg)?;
    if p_ref == 0.0 {
        return Err(MetricsError::ZeroReferencePower);
    }
    Ok(1.0 - power(pred, cfg)? / p_ref)
}

/// Linear-light luminance scaling: each channel becomes
/// `((1 - r) c^gamma)^(1/gamma)`.
pub fn ls_scale(img: &Image, r: f64, gamma: f64) -> Image {
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = ((1.0 - r) * (*v as f64).max(0.0).powf(gamma)).powf(1.0 / gamma) as f32;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub image: String,
    pub psnr_y: f64,
    pub ssim: f64,
    pub kld: f64,
    pub rate_y: f64,
    pub rate_rgbw: f64,
}

impl MetricRow {
    fn values(&self) -> [f64; 5] {
        [
            self.psnr_y,
            self.ssim,
            self.kld,
            self.rate_y,
            self.rate_rgbw,
        ]
    }
}

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.6}")
    }
}

/// Per-image metrics plus their column means.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub const HEADER: &'static str = "image,psnr_y,ssim,kld,rate_y,rate_rgbw";

    /// Arithmetic mean of every column.
    pub fn mean(&self) -> MetricRow {
        let n = self.rows.len() as f64;
        let mut acc = [0.0; 5];
        for r in &self.rows {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let m = acc.map(|a| a / n);
        MetricRow {
            image: "mean".into(),
            psnr_y: m[0],
            ssim: m[1],
            kld: m[2],
            rate_y: m[3],
            rate_rgbw: m[4],
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in self
            .rows
            .iter()
            .cloned()
            .chain(std::iter::once(self.mean()))
        {
            let v = r.values().map(fmt_value);
            let _ = writeln!(s, "{},{}", r.image, v.join(","));
        }
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
