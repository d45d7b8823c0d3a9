//! Control metrics: ordering accuracy, quantile-region MAE and linearity.

use serde::Serialize;

use crate::envelope::DrumClass;
use crate::error::{bail, Result};
use crate::timbre::Descriptor;

/// Target levels on the min/max scale.
pub const LEVELS: [f64; 3] = [0.2, 0.5, 0.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxSource {
    Fixed,
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlEvalRecord {
    pub descriptor: Descriptor,
    pub class: DrumClass,
    pub target: f64,
    pub measured: f64,
    /// Index into [`LEVELS`], if the target was set at one.
    pub level: Option<usize>,
    /// Records sharing a pair id were generated from the same latent.
    pub pair: usize,
    pub aux: AuxSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderingReport {
    pub e1: Option<f64>,
    pub e2: Option<f64>,
    pub e3: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaeReport {
    pub f1: Option<f64>,
    pub f2: Option<f64>,
    pub f3: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionReport {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

fn pair_accuracy(records: &[ControlEvalRecord], lo: usize, hi: usize) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for a in records.iter().filter(|r| r.level == Some(lo)) {
        for b in records.iter().filter(|r| r.level == Some(hi) && r.pair == a.pair) {
            total += 1;
            let want = b.target - a.target;
            let got = b.measured - a.measured;
            if want != 0.0 && got != 0.0 && want.signum() == got.signum() {
                hits += 1;
            }
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

/// E1 compares levels (0.2, 0.8), E2 (0.2, 0.5) and E3 (0.5, 0.8) over
/// records with matching pair ids. A criterion with no pairs is absent.
pub fn ordering_accuracy(records: &[ControlEvalRecord]) -> OrderingReport {
    OrderingReport {
        e1: pair_accuracy(records, 0, 2),
        e2: pair_accuracy(records, 0, 1),
        e3: pair_accuracy(records, 1, 2),
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `p·(n−1)`).
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        bail!(InvalidInput, "quantile of an empty set");
    }
    if !(0.0..=1.0).contains(&p) {
        bail!(InvalidInput, "quantile level {p} outside [0, 1]");
    }
    let mut v = values.to_vec();
    if v.iter().any(|x| !x.is_finite()) {
        bail!(NonFinite, "quantile input contains a non-finite value");
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    Ok(if i + 1 < v.len() { v[i] + frac * (v[i + 1] - v[i]) } else { v[i] })
}

pub fn quantiles(values: &[f64]) -> Result<(f64, f64, f64)> {
    Ok((quantile(values, 0.2)?, quantile(values, 0.5)?, quantile(values, 0.8)?))
}

fn region_mae(records: &[ControlEvalRecord], lo: f64, hi: f64) -> Option<f64> {
    let errs: Vec<f64> =
        records.iter().filter(|r| r.target >= lo && r.target <= hi).map(|r| (r.measured - r.target).abs()).collect();
    (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
}

/// MAE over targets in `[q20, q50]`, `[q50, q80]` and `[q20, q80]` of the
/// dataset's values of the descriptor.
pub fn mae_quantile(records: &[ControlEvalRecord], dataset_values: &[f64]) -> Result<MaeReport> {
    let (q20, q50, q80) = quantiles(dataset_values)?;
    Ok(MaeReport {
        f1: region_mae(records, q20, q50),
        f2: region_mae(records, q50, q80),
        f3: region_mae(records, q20, q80),
    })
}

/// Least-squares fit of measured on target for targets in `[q20, q80]`,
/// with `R² = 1 − SS_res / SS_tot` of the measured values.
pub fn linear_fit_r2(records: &[ControlEvalRecord], dataset_values: &[f64]) -> Result<RegressionReport> {
    let (q20, _, q80) = quantiles(dataset_values)?;
    let pts: Vec<(f64, f64)> =
        records.iter().filter(|r| r.target >= q20 && r.target <= q80).map(|r| (r.target, r.measured)).collect();
    if pts.len() < 3 {
        bail!(InvalidInput, "regression needs at least 3 records in [q20, q80], found {}", pts.len());
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 1e-12 * (1.0 + mx * mx) * n {
        bail!(InvalidInput, "targets in [q20, q80] have zero variance");
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        0.0
    } else {
        let ss_res: f64 = pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
        1.0 - ss_res / syy
    };
    Ok(RegressionReport { slope, intercept, r2, n: pts.len() })
}
