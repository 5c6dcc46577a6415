//! Split-R̂ and bulk effective sample size.

use serde::Serialize;

use crate::metrics::normal_quantile;
use crate::sampler::draws::PosteriorDraws;

/// R̂ threshold below which all coordinates are considered converged.
pub const RHAT_OK: f64 = 1.05;
/// Post-warmup divergence rate that triggers a warning.
pub const DIVERGENCE_WARN_RATE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateDiagnostics {
    pub name: String,
    /// `None` when unavailable (single chain) or degenerate (constant draws).
    pub rhat: Option<f64>,
    pub ess_bulk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub coordinates: Vec<CoordinateDiagnostics>,
    pub max_rhat: Option<f64>,
    pub min_ess_bulk: Option<f64>,
    pub divergences: usize,
    pub divergence_rate: f64,
    pub rhat_available: bool,
    pub degenerate: Vec<String>,
    pub warnings: Vec<String>,
    pub ok: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Splits each chain into two halves, dropping the middle draw of odd-length chains.
fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Classic split-R̂. Needs at least two chains of four draws; `None` when unavailable or degenerate.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return None;
    }
    let split = split_chains(chains);
    let n = split[0].len() as f64;
    let means: Vec<f64> = split.iter().map(|c| mean(c)).collect();
    let within = mean(&split.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let between = n * sample_var(&means);
    if !(within > 0.0) {
        return None;
    }
    let var_plus = (n - 1.0) / n * within + between / n;
    Some((var_plus / within).sqrt())
}

fn autocovariance(x: &[f64], lag: usize) -> f64 {
    let m = mean(x);
    let n = x.len();
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Effective sample size by Geyer's initial monotone sequence over the given chains.
fn ess(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min()?;
    if n < 4 {
        return None;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let nf = n as f64;
    let acov = |lag: usize| -> f64 { chains.iter().map(|c| autocovariance(c, lag)).sum::<f64>() / m as f64 };
    let mean_var = acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
        var_plus += sample_var(&means);
    }
    if !(var_plus > 0.0) || !(mean_var > 0.0) {
        return None;
    }
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = 1.0 - (mean_var - acov(1)) / var_plus;
    rho[1] = rho_odd;
    let mut t = 1;
    while t + 4 < n && rho_even + rho_odd > 0.0 {
        rho_even = 1.0 - (mean_var - acov(t + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - acov(t + 2)) / var_plus;
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 && max_t + 1 < n {
        rho[max_t + 1] = rho_even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        let prev = rho[t - 1] + rho[t];
        if rho[t + 1] + rho[t + 2] > prev {
            rho[t + 1] = prev / 2.0;
            rho[t + 2] = prev / 2.0;
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let extra = if max_t + 1 < n { rho[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho[..=max_t.min(n - 1)].iter().sum::<f64>() + extra).max(1.0 / total.log10());
    Some(total / tau)
}

/// Rank-normalised split-chain ESS.
pub fn bulk_ess(chains: &[Vec<f64>]) -> Option<f64> {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return None;
    }
    let split = split_chains(chains);
    let pooled: Vec<f64> = split.iter().flatten().copied().collect();
    if pooled.iter().all(|v| *v == pooled[0]) {
        return None;
    }
    // Average ranks, then normal scores.
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let s = pooled.len() as f64;
    let z: Vec<f64> = ranks
        .iter()
        .map(|r| normal_quantile((r - 0.375) / (s + 0.25)))
        .collect();
    let len = split[0].len();
    let z_chains: Vec<Vec<f64>> = z.chunks(len).map(<[f64]>::to_vec).collect();
    ess(&z_chains)
}

/// Per-coordinate convergence report for a set of draws.
pub fn diagnostics(draws: &PosteriorDraws) -> DiagnosticsReport {
    let rhat_available = draws.chains() >= 2 && draws.draws_per_chain() >= 4;
    let mut coordinates = Vec::with_capacity(draws.dim());
    let mut degenerate = Vec::new();
    for (j, name) in draws.names().iter().enumerate() {
        let chains = draws.chain_columns(j);
        let rhat = if rhat_available { split_rhat(&chains) } else { None };
        let ess_bulk = bulk_ess(&chains);
        if ess_bulk.is_none() || (rhat_available && rhat.is_none()) {
            degenerate.push(name.clone());
        }
        coordinates.push(CoordinateDiagnostics {
            name: name.clone(),
            rhat,
            ess_bulk,
        });
    }
    let max_rhat = coordinates.iter().filter_map(|c| c.rhat).reduce(f64::max);
    let min_ess_bulk = coordinates.iter().filter_map(|c| c.ess_bulk).reduce(f64::min);
    let divergences = draws.divergences();
    let divergence_rate = if draws.is_empty() {
        0.0
    } else {
        divergences as f64 / draws.len() as f64
    };
    let mut warnings = Vec::new();
    if !rhat_available {
        warnings.push("split R-hat unavailable: needs at least 2 chains of 4 draws".to_string());
    }
    if divergence_rate > DIVERGENCE_WARN_RATE {
        warnings.push(format!(
            "{:.1}% of post-warmup transitions diverged",
            100.0 * divergence_rate
        ));
    }
    if !degenerate.is_empty() {
        warnings.push(format!("{} coordinates have degenerate (constant) draws", degenerate.len()));
    }
    let ok = rhat_available && max_rhat.is_some_and(|r| r < RHAT_OK);
    DiagnosticsReport {
        coordinates,
        max_rhat,
        min_ess_bulk,
        divergences,
        divergence_rate,
        rhat_available,
        degenerate,
        warnings,
        ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn iid_chains(seed: u64, chains: usize, n: usize, shift: &[f64]) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..chains)
            .map(|c| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) + shift[c]).collect())
            .collect()
    }

    #[test]
    fn iid_draws_have_rhat_near_one() {
        for seed in 0..20 {
            let r = split_rhat(&iid_chains(seed, 4, 1000, &[0.0; 4])).unwrap();
            assert!((0.99..=1.02).contains(&r), "seed {seed}: {r}");
        }
    }

    #[test]
    fn separated_chains_flagged() {
        let r = split_rhat(&iid_chains(1, 2, 500, &[0.0, 10.0])).unwrap();
        assert!(r > 1.05 * 3.0);
        let names = vec!["x".to_string()];
        let chains = iid_chains(1, 2, 500, &[0.0, 10.0]);
        let values: Vec<f64> = chains.concat();
        let draws = PosteriorDraws::from_matrix(names, 2, 500, values).unwrap();
        assert!(!diagnostics(&draws).ok);
    }

    #[test]
    fn constant_chains_are_degenerate() {
        let chains = vec![vec![1.5; 100], vec![1.5; 100]];
        assert_eq!(split_rhat(&chains), None);
        assert_eq!(bulk_ess(&chains), None);
        let draws = PosteriorDraws::from_matrix(vec!["c".into()], 2, 100, vec![1.5; 200]).unwrap();
        let report = diagnostics(&draws);
        assert_eq!(report.degenerate, vec!["c".to_string()]);
        assert!(!report.ok);
    }

    #[test]
    fn single_chain_reports_unavailable() {
        let draws = PosteriorDraws::from_matrix(vec!["x".into()], 1, 200, iid_chains(4, 1, 200, &[0.0]).concat()).unwrap();
        let report = diagnostics(&draws);
        assert!(!report.rhat_available);
        assert_eq!(report.coordinates[0].rhat, None);
        assert!(report.coordinates[0].ess_bulk.is_some());
    }

    #[test]
    fn ess_of_iid_is_close_to_count_and_ar1_is_smaller() {
        let chains = iid_chains(7, 4, 1000, &[0.0; 4]);
        let e = bulk_ess(&chains).unwrap();
        assert!(e > 3000.0 && e < 5000.0, "{e}");

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ar: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..1000)
                    .map(|_| {
                        x = 0.9 * x + rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        // Integrated autocorrelation time of AR(1) with rho 0.9 is 19.
        let e = bulk_ess(&ar).unwrap();
        assert!(e > 4000.0 / 19.0 / 2.0 && e < 4000.0 / 19.0 * 2.0, "{e}");
    }
}
