//! Validation metrics: error, agreement, interval and probabilistic scores.
//!
//! Undefined metrics (constant inputs) are `None`, never a silent zero.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Standard-normal quantile.
///
/// Acklam's rational approximation (relative error below 1.2e-9) followed by one
/// Halley refinement step against `erfc`.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = 0.5 * erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// Standard-normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn check_pair(est: &[f64], truth: &[f64]) -> Result<()> {
    if est.len() != truth.len() {
        return Err(Error::dim(format!(
            "estimate has {} units, reference has {}",
            est.len(),
            truth.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::dim("no units to compare"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Mean of estimate minus truth; negative means underestimation.
    pub mbe: f64,
}

pub fn error_metrics(est: &[f64], truth: &[f64]) -> Result<ErrorMetrics> {
    check_pair(est, truth)?;
    let n = est.len() as f64;
    let (mut abs, mut sq, mut bias) = (0.0, 0.0, 0.0);
    for (e, y) in est.iter().zip(truth) {
        let d = e - y;
        abs += d.abs();
        sq += d * d;
        bias += d;
    }
    Ok(ErrorMetrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        mbe: bias / n,
    })
}

/// Population (1/n) mean, variance and covariance.
fn moments(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    (ma, mb, va / n, vb / n, cov / n)
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

/// Lin's concordance correlation coefficient with population moments.
pub fn ccc(est: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_pair(est, truth)?;
    if is_constant(est) || is_constant(truth) {
        return Ok(None);
    }
    let (me, my, ve, vy, cov) = moments(est, truth);
    Ok(Some(2.0 * cov / (ve + vy + (me - my).powi(2))))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    check_pair(a, b)?;
    if is_constant(a) || is_constant(b) {
        return Ok(None);
    }
    let (_, _, va, vb, cov) = moments(a, b);
    Ok(Some(cov / (va * vb).sqrt()))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson and Spearman correlations.
pub fn rank_corr(est: &[f64], truth: &[f64]) -> Result<(Option<f64>, Option<f64>)> {
    let p = pearson(est, truth)?;
    let s = pearson(&average_ranks(est), &average_ranks(truth))?;
    Ok((p, s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Interval { lower, upper }
    }

    pub fn point(x: f64) -> Self {
        Interval { lower: x, upper: x }
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    /// Closed-interval overlap; touching endpoints count.
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }
}

/// Wilson score interval for `successes` out of `n` (n may be an effective size).
pub fn wilson(successes: f64, n: f64, level: f64) -> Result<Interval> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::domain(format!("Wilson interval needs n > 0, got {n}")));
    }
    if !(0.0..=n).contains(&successes) {
        return Err(Error::domain(format!(
            "successes {successes} outside [0, {n}]"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("level {level} outside (0, 1)")));
    }
    let z = normal_quantile((1.0 + level) / 2.0);
    let z2 = z * z;
    let center = (successes + z2 / 2.0) / (n + z2);
    let half = z / (n + z2) * (successes * (n - successes) / n + z2 / 4.0).sqrt();
    // Exact boundaries: at k = 0 (k = n) the lower (upper) bound is 0 (1) analytically.
    let lower = if successes == 0.0 { 0.0 } else { (center - half).max(0.0) };
    let upper = if successes == n { 1.0 } else { (center + half).min(1.0) };
    Ok(Interval { lower, upper })
}

/// Share of paired intervals that overlap.
pub fn coverage(model: &[Interval], reference: &[Interval]) -> Result<f64> {
    if model.len() != reference.len() {
        return Err(Error::dim(format!(
            "{} model intervals vs {} reference intervals",
            model.len(),
            reference.len()
        )));
    }
    if model.is_empty() {
        return Err(Error::dim("no intervals"));
    }
    let hits = model.iter().zip(reference).filter(|(a, b)| a.overlaps(b)).count();
    Ok(hits as f64 / model.len() as f64)
}

/// CRPS of an empirical ensemble against a scalar outcome, in O(B log B).
pub fn crps_empirical(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::domain("CRPS needs at least one sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let b = sorted.len() as f64;
    let mut abs = 0.0;
    let mut spread = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        abs += (x - y).abs();
        spread += (2.0 * (i as f64 + 1.0) - b - 1.0) * x;
    }
    Ok(abs / b - spread / (b * b))
}

/// One evaluation unit (a district at the evaluation month).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalUnit {
    pub estimate: f64,
    pub truth: f64,
    pub model_80: Interval,
    pub model_90: Interval,
    pub reference_80: Interval,
    pub reference_90: Interval,
    pub samples: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub mbe: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub ccc: Option<f64>,
    pub coverage_80: f64,
    pub coverage_90: f64,
    pub length_80: f64,
    pub length_90: f64,
    /// Averaged over units; `None` when samples are unavailable.
    pub crps: Option<f64>,
    pub n_units: usize,
}

pub fn evaluate_units(units: &[EvalUnit]) -> Result<MetricsReport> {
    let est: Vec<f64> = units.iter().map(|u| u.estimate).collect();
    let truth: Vec<f64> = units.iter().map(|u| u.truth).collect();
    let err = error_metrics(&est, &truth)?;
    let (pearson, spearman) = rank_corr(&est, &truth)?;
    let ccc = ccc(&est, &truth)?;
    let m80: Vec<Interval> = units.iter().map(|u| u.model_80).collect();
    let m90: Vec<Interval> = units.iter().map(|u| u.model_90).collect();
    let r80: Vec<Interval> = units.iter().map(|u| u.reference_80).collect();
    let r90: Vec<Interval> = units.iter().map(|u| u.reference_90).collect();
    let n = units.len() as f64;
    let crps = if units.iter().all(|u| u.samples.is_some()) {
        let mut total = 0.0;
        for u in units {
            total += crps_empirical(u.samples.as_deref().unwrap(), u.truth)?;
        }
        Some(total / n)
    } else {
        None
    };
    Ok(MetricsReport {
        mae: err.mae,
        rmse: err.rmse,
        mbe: err.mbe,
        pearson,
        spearman,
        ccc,
        coverage_80: coverage(&m80, &r80)?,
        coverage_90: coverage(&m90, &r90)?,
        length_80: m80.iter().map(Interval::length).sum::<f64>() / n,
        length_90: m90.iter().map(Interval::length).sum::<f64>() / n,
        crps,
        n_units: units.len(),
    })
}
