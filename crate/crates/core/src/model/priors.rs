//! Prior densities: ICAR, random walk, iid normal, and scale hyperpriors.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::graph::AdjacencyGraph;
use crate::model::spec::{ModelSpec, PriorFamily};

/// Scale multiplier of the soft sum-to-zero constraints: sd = 0.001 × size.
pub const SOFT_CONSTRAINT_SCALE: f64 = 0.001;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -HALF_LN_2PI - sd.ln() - 0.5 * z * z
}

/// Log density of the scale hyperprior at `sigma` (no Jacobian).
pub fn hyperprior_logpdf(sigma: f64, spec: &ModelSpec) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::domain(format!("scale must be positive, got {sigma}")));
    }
    Ok(match spec.prior_family {
        PriorFamily::Pc => {
            let rate = spec.pc_rate();
            rate.ln() - rate * sigma
        }
        PriorFamily::HalfCauchy => {
            let a = spec.half_cauchy_scale;
            let u = sigma / a;
            (2.0 / (PI * a)).ln() - (u * u).ln_1p()
        }
    })
}

/// d/d(log sigma) of `hyperprior_logpdf`.
pub(crate) fn hyperprior_dlog(sigma: f64, spec: &ModelSpec) -> f64 {
    match spec.prior_family {
        PriorFamily::Pc => -spec.pc_rate() * sigma,
        PriorFamily::HalfCauchy => {
            let u2 = (sigma / spec.half_cauchy_scale).powi(2);
            -2.0 * u2 / (1.0 + u2)
        }
    }
}

/// Unnormalised ICAR log density with per-component soft sum-to-zero constraints.
///
/// Isolated nodes carry no pairwise or constraint term; their entries are ignored.
pub fn icar_logpdf(phi: &[f64], sigma: f64, graph: &AdjacencyGraph) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::domain(format!("ICAR scale must be positive, got {sigma}")));
    }
    if phi.len() != graph.node_count() {
        return Err(Error::dim(format!(
            "phi has {} entries for a graph of {} nodes",
            phi.len(),
            graph.node_count()
        )));
    }
    Ok(icar_terms(phi, sigma.ln(), graph, None))
}

/// ICAR value; when `grad` is given, adds d/dphi into `grad.0` and d/dlog(sigma) into `grad.1`.
pub(crate) fn icar_terms(
    phi: &[f64],
    log_sigma: f64,
    graph: &AdjacencyGraph,
    grad: Option<(&mut [f64], &mut f64)>,
) -> f64 {
    let inv_var = (-2.0 * log_sigma).exp();
    let mut sq = 0.0;
    for &(i, j) in graph.edges() {
        let d = phi[i] - phi[j];
        sq += d * d;
    }
    let rank = graph.node_count() - graph.components().len();
    let mut value = -0.5 * inv_var * sq - rank as f64 * log_sigma;

    let mut sums = Vec::with_capacity(graph.components().len());
    for comp in graph.components() {
        if comp.len() < 2 {
            sums.push(0.0);
            continue;
        }
        let total: f64 = comp.iter().map(|&i| phi[i]).sum();
        value += normal_logpdf(total, 0.0, SOFT_CONSTRAINT_SCALE * comp.len() as f64);
        sums.push(total);
    }

    if let Some((g_phi, g_log_sigma)) = grad {
        for &(i, j) in graph.edges() {
            let d = inv_var * (phi[i] - phi[j]);
            g_phi[i] -= d;
            g_phi[j] += d;
        }
        for (comp, total) in graph.components().iter().zip(&sums) {
            if comp.len() < 2 {
                continue;
            }
            let sd = SOFT_CONSTRAINT_SCALE * comp.len() as f64;
            let g = -total / (sd * sd);
            for &i in comp {
                g_phi[i] += g;
            }
        }
        *g_log_sigma += inv_var * sq - rank as f64;
    }
    value
}

/// iid N(0, sigma²) block; gradient accumulated when requested.
pub(crate) fn iid_terms(x: &[f64], log_sigma: f64, grad: Option<(&mut [f64], &mut f64)>) -> f64 {
    let inv_var = (-2.0 * log_sigma).exp();
    let sq: f64 = x.iter().map(|v| v * v).sum();
    let n = x.len() as f64;
    let value = -n * (HALF_LN_2PI + log_sigma) - 0.5 * inv_var * sq;
    if let Some((g, g_ls)) = grad {
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi -= inv_var * xi;
        }
        *g_ls += inv_var * sq - n;
    }
    value
}

/// First-order random walk plus a soft sum-to-zero constraint on the whole series.
pub(crate) fn rw1_terms(x: &[f64], log_sigma: f64, grad: Option<(&mut [f64], &mut f64)>) -> f64 {
    let inv_var = (-2.0 * log_sigma).exp();
    let steps = x.len().saturating_sub(1) as f64;
    let sq: f64 = x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    let total: f64 = x.iter().sum();
    let sd = SOFT_CONSTRAINT_SCALE * x.len() as f64;
    let value = -steps * (HALF_LN_2PI + log_sigma) - 0.5 * inv_var * sq
        + normal_logpdf(total, 0.0, sd);
    if let Some((g, g_ls)) = grad {
        for (t, w) in x.windows(2).enumerate() {
            let d = inv_var * (w[1] - w[0]);
            g[t] += d;
            g[t + 1] -= d;
        }
        let gc = -total / (sd * sd);
        for gi in g.iter_mut() {
            *gi += gc;
        }
        *g_ls += inv_var * sq - steps;
    }
    value
}
