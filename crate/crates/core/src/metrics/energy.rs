//! Energy savings along a distribution chain from user-supplied measurements.
//!
//! Each stage's energy is its measured quantity times a user coefficient:
//! encode time for the head end, bitrate for delivery, decode time for the
//! device and measured display power for the screen. Savings are relative to
//! a baseline variant at the same QP.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{MetricsError, Result};
use crate::config::{ConfigError, KvFile};

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ChainRecord {
    pub variant: String,
    pub qp: String,
    pub encode_s: f64,
    pub decode_s: f64,
    pub bitrate_kbps: f64,
    pub display_w: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainMeasurements {
    pub records: Vec<ChainRecord>,
}

impl ChainMeasurements {
    /// Parse `variant,qp,encode_s,decode_s,bitrate_kbps,display_w` CSV.
    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, row) in reader.deserialize::<ChainRecord>().enumerate() {
            let line = i + 2;
            let rec = row.map_err(|e| MetricsError::Measurements {
                line,
                message: e.to_string(),
            })?;
            let values = [rec.encode_s, rec.decode_s, rec.bitrate_kbps, rec.display_w];
            if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(MetricsError::Measurements {
                    line,
                    message: "measurements must be finite and nonnegative".into(),
                });
            }
            if !seen.insert((rec.variant.clone(), rec.qp.clone())) {
                return Err(MetricsError::Measurements {
                    line,
                    message: format!("duplicate row for `{}` at qp {}", rec.variant, rec.qp),
                });
            }
            records.push(rec);
        }
        Ok(ChainMeasurements { records })
    }
}

pub fn read_chain_measurements(path: &Path) -> Result<ChainMeasurements> {
    ChainMeasurements::parse(&std::fs::read_to_string(path)?)
}

/// Energy per unit of each measured quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyCoefficients {
    /// Per second of encoding.
    pub head_end: f64,
    /// Per kbps of bitrate.
    pub delivery: f64,
    /// Per second of decoding.
    pub device: f64,
    /// Per watt of display power.
    pub display: f64,
}

impl Default for EnergyCoefficients {
    fn default() -> Self {
        EnergyCoefficients {
            head_end: 1.0,
            delivery: 1.0,
            device: 1.0,
            display: 1.0,
        }
    }
}

impl EnergyCoefficients {
    pub fn from_kv(mut kv: KvFile) -> Result<Self, ConfigError> {
        let d = Self::default();
        let c = EnergyCoefficients {
            head_end: kv.take("head_end")?.unwrap_or(d.head_end),
            delivery: kv.take("delivery")?.unwrap_or(d.delivery),
            device: kv.take("device")?.unwrap_or(d.device),
            display: kv.take("display")?.unwrap_or(d.display),
        };
        kv.finish()?;
        if [c.head_end, c.delivery, c.device, c.display]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(ConfigError::Invalid(
                "energy coefficients must be nonnegative".into(),
            ));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRow {
    pub variant: String,
    pub qp: String,
    /// `[encode, delivery, decode, display]`
    pub energy: [f64; 4],
    /// Percent saved per stage relative to the baseline.
    pub saving_pct: [f64; 4],
    pub total: f64,
    pub total_saving_pct: f64,
}

fn saving(value: f64, base: f64) -> f64 {
    if base == 0.0 {
        if value == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        100.0 * (1.0 - value / base)
    }
}

/// One row per measurement, savings against `baseline` at the same QP.
pub fn energy_savings_report(
    m: &ChainMeasurements,
    baseline: &str,
    coeffs: &EnergyCoefficients,
) -> Result<Vec<EnergyRow>> {
    let energy = |r: &ChainRecord| {
        [
            r.encode_s * coeffs.head_end,
            r.bitrate_kbps * coeffs.delivery,
            r.decode_s * coeffs.device,
            r.display_w * coeffs.display,
        ]
    };
    m.records
        .iter()
        .map(|r| {
            let base = m
                .records
                .iter()
                .find(|b| b.variant == baseline && b.qp == r.qp)
                .ok_or_else(|| MetricsError::MissingBaseline {
                    variant: baseline.to_string(),
                    qp: r.qp.clone(),
                })?;
            let (e, eb) = (energy(r), energy(base));
            let (total, total_base) = (e.iter().sum::<f64>(), eb.iter().sum::<f64>());
            Ok(EnergyRow {
                variant: r.variant.clone(),
                qp: r.qp.clone(),
                energy: e,
                saving_pct: [0, 1, 2, 3].map(|k| saving(e[k], eb[k])),
                total,
                total_saving_pct: saving(total, total_base),
            })
        })
        .collect()
}

pub const ENERGY_HEADER: &str = "variant,qp,encode_j,delivery_j,decode_j,display_j,total_j,\
encode_saving_pct,delivery_saving_pct,decode_saving_pct,display_saving_pct,total_saving_pct";

pub fn energy_report_csv(rows: &[EnergyRow]) -> String {
    let mut s = format!("{ENERGY_HEADER}\n");
    for r in rows {
        let _ = write!(s, "{},{}", r.variant, r.qp);
        for v in r
            .energy
            .iter()
            .chain([r.total].iter())
            .chain(r.saving_pct.iter())
        {
            let _ = write!(s, ",{v:.6}");
        }
        let _ = writeln!(s, ",{:.6}", r.total_saving_pct);
    }
    s
}
