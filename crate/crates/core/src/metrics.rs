//! Error metrics shared by every report.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

/// Truth magnitudes below this are left out of percentage errors, kW.
pub const MAPE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    /// Percent.
    pub mape: f64,
    /// Population std of the absolute errors.
    pub std: f64,
    pub count: usize,
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn population_std(v: &[f64]) -> f64 {
    let m = mean(v);
    mean(&v.iter().map(|x| (x - m).powi(2)).collect::<Vec<_>>()).sqrt()
}

impl Metrics {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        check_len("metric inputs", truth.len(), pred.len())?;
        let abs: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect();
        let pct: Vec<f64> = abs.iter().zip(truth).filter(|(_, t)| t.abs() >= MAPE_FLOOR).map(|(e, t)| 100.0 * e / t.abs()).collect();
        Ok(Self { mae: mean(&abs), mape: mean(&pct), std: population_std(&abs), count: abs.len() })
    }

    /// Flattens rows of equal or unequal length pairwise.
    pub fn compute_rows(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Self> {
        check_len("metric rows", truth.len(), pred.len())?;
        let mut p = Vec::new();
        let mut t = Vec::new();
        for (a, b) in pred.iter().zip(truth) {
            check_len("metric row", b.len(), a.len())?;
            p.extend_from_slice(a);
            t.extend_from_slice(b);
        }
        Self::compute(&p, &t)
    }
}
