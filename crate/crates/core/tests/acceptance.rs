//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria 4, 5, 6 and 11 share one set of simulated recovery fits, so this
//! target runs without the libtest harness and reports every criterion even
//! when an earlier one fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use jmrp_core::estimators::{direct_series, full_series, mr_series, DrawMode, EstimateSeries, EstimatorTag};
use jmrp_core::indicators::{classify, fcs, FcsClass, FcsThresholds, FoodFrequencies};
use jmrp_core::metrics::{ccc, coverage, crps_empirical, normal_cdf, rank_corr, wilson, Interval};
use jmrp_core::model::{icar_logpdf, AdjacencyGraph, Dataset, JointPosterior, Modality, ModelSpec, PriorFamily};
use jmrp_core::sampler::{diagnostics, sample, sample_model, LogDensity, PosteriorDraws, SamplerConfig};
use jmrp_core::simulate::{generate, true_prevalence, GroundTruth, SimConfig};
use jmrp_core::weights::{rake, Cell, MarginTarget, PostStratTable, Provenance, TargetScope};
use jmrp_core::model::Covariate;
use jmrp_core::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn approx_eq(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------- criterion 1

fn gradient_points() -> Outcome {
    let start = Instant::now();
    let mut conf = SimConfig::small(3, 4, 3, 10);
    conf.seed = 71;
    conf.mp_per_district_month = 8;
    conf.f2f_per_district = 10;
    let (data, _, _) = generate(&conf).map_err(|e| e.to_string())?;
    let mut records = data.records.clone();
    records.truncate(1000);
    let data = Dataset::new(records, data.spec.clone(), data.graph.clone()).map_err(|e| e.to_string())?;
    let post = JointPosterior::new(&data).map_err(|e| e.to_string())?;
    let layout = post.layout().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x: Vec<f64> = (0..layout.dim)
            .map(|i| {
                if i >= layout.sigma_start {
                    rng.random_range(-1.5..0.5)
                } else {
                    0.5 * rng.sample::<f64, _>(StandardNormal)
                }
            })
            .collect();
        let params = layout.unpack(&x).map_err(|e| e.to_string())?;
        let grad = layout
            .pack(&post.grad_log_posterior(&params).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        for i in 0..layout.dim {
            let h = 1e-5 * x[i].abs().max(1.0);
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] += h;
            dn[i] -= h;
            let f = |v: &[f64]| post.log_posterior(&layout.unpack(v).unwrap()).unwrap();
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-5 && secs < 30.0,
        format!("N = {}, max relative error {worst:.2e} (< 1e-5), {secs:.1} s (< 30 s)", data.records.len()),
    )
}

// ---------------------------------------------------------------- criterion 2

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &(a, b) in edges {
            for (u, w) in [(a, b), (b, a)] {
                if u == v && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
    }
    seen.iter().all(|s| *s)
}

/// Gaussian log density (up to a constant) with precision Q / sigma² on the sum-zero subspace.
fn dense_icar(phi: &[f64], sigma: f64, edges: &[(usize, usize)]) -> f64 {
    let n = phi.len();
    let mut q = DMatrix::<f64>::zeros(n, n);
    for &(i, j) in edges {
        q[(i, j)] -= 1.0;
        q[(j, i)] -= 1.0;
        q[(i, i)] += 1.0;
        q[(j, j)] += 1.0;
    }
    // Orthonormal basis of the sum-zero subspace from the complement of the ones vector.
    let mut basis = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        basis[(k, 0)] = 1.0;
        if k > 0 {
            basis[(k, k)] = 1.0;
        }
    }
    let qr = basis.qr();
    let full = qr.q();
    let v = full.columns(1, n - 1).into_owned();
    let prec = v.transpose() * q * &v / (sigma * sigma);
    let c = v.transpose() * DVector::from_column_slice(phi);
    let logdet = prec.clone().cholesky().expect("connected graph is positive definite on the subspace").l().diagonal().map(f64::ln).sum() * 2.0;
    0.5 * logdet - 0.5 * (c.transpose() * prec * &c)[(0, 0)]
}

fn icar_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut graphs = 0;
    let mut worst = 0.0f64;
    for n in 2..=5usize {
        let all: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        for mask in 0u32..(1 << all.len()) {
            let edges: Vec<_> = all.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, e)| *e).collect();
            if !connected(n, &edges) {
                continue;
            }
            graphs += 1;
            let graph = AdjacencyGraph::new(n, edges.iter().copied()).map_err(|e| e.to_string())?;
            let centred = |rng: &mut ChaCha8Rng| {
                let v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let m = v.iter().sum::<f64>() / n as f64;
                v.into_iter().map(|x| x - m).collect::<Vec<f64>>()
            };
            let a = centred(&mut rng);
            let b = centred(&mut rng);
            for sigma in [0.3, 1.0, 2.5] {
                let got = icar_logpdf(&a, sigma, &graph).unwrap() - icar_logpdf(&b, sigma, &graph).unwrap();
                let want = dense_icar(&a, sigma, &edges) - dense_icar(&b, sigma, &edges);
                worst = worst.max((got - want).abs());
            }
            // Scale dependence, same phi: includes the rank term.
            let got = icar_logpdf(&a, 0.4, &graph).unwrap() - icar_logpdf(&a, 1.7, &graph).unwrap();
            let want = dense_icar(&a, 0.4, &edges) - dense_icar(&a, 1.7, &edges);
            worst = worst.max((got - want).abs());
        }
    }
    check(worst < 1e-8, format!("{graphs} connected graphs on 2..=5 nodes, max abs difference {worst:.2e} (< 1e-8)"))
}

// ---------------------------------------------------------------- criterion 3

struct StdNormal(usize);

impl LogDensity for StdNormal {
    fn dim(&self) -> usize {
        self.0
    }
    fn log_density_and_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        for (g, x) in grad.iter_mut().zip(q) {
            *g = -x;
        }
        -0.5 * q.iter().map(|x| x * x).sum::<f64>()
    }
}

fn ks_normal(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = normal_cdf(*x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

fn sampler_calibration() -> Outcome {
    let start = Instant::now();
    let seeds = 5;
    let (mut mean_err, mut var_err, mut ks, mut rhat) = (vec![0.0; 5], vec![0.0; 5], 0.0, 0.0);
    for seed in 0..seeds {
        let conf = SamplerConfig { chains: 4, iterations: 1500, warmup: 500, seed, ..SamplerConfig::default() };
        let draws = sample(&StdNormal(5), &conf, 1).map_err(|e| e.to_string())?;
        let mut pooled = Vec::new();
        for j in 0..5 {
            let col = draws.column(j);
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (col.len() - 1) as f64;
            mean_err[j] += m / seeds as f64;
            var_err[j] += (v - 1.0) / seeds as f64;
            pooled.extend(col);
        }
        ks += ks_normal(&mut pooled) / seeds as f64;
        rhat += diagnostics(&draws).max_rhat.unwrap_or(f64::INFINITY) / seeds as f64;
    }
    let secs = start.elapsed().as_secs_f64();
    let max_mean = mean_err.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let max_var = var_err.iter().map(|x| x.abs()).fold(0.0, f64::max);
    check(
        max_mean < 0.1 && max_var < 0.15 && ks < 0.03 && rhat < 1.02 && secs < 60.0,
        format!(
            "seed-averaged |mean| {max_mean:.3} (< 0.1), |var-1| {max_var:.3} (< 0.15), KS {ks:.4} (< 0.03), \
             max R-hat {rhat:.4} (< 1.02), {secs:.1} s (< 60 s)"
        ),
    )
}

// ------------------------------------------------------- shared recovery fits

const HOLDOUT_MONTH: usize = 9;

fn recovery_config(k: u64) -> SimConfig {
    let mut conf = SimConfig::small(3, 4, 3, 10);
    conf.f2f_months = vec![0, 4, HOLDOUT_MONTH];
    conf.holdout_months = vec![HOLDOUT_MONTH];
    conf.seed = 1000 + k;
    conf
}

fn recovery_sampler(k: u64) -> SamplerConfig {
    SamplerConfig { chains: 4, iterations: 1000, warmup: 500, seed: k, ..SamplerConfig::default() }
}

struct RecoveryRun {
    data: Dataset,
    truth: GroundTruth,
    draws: PosteriorDraws,
    max_rhat: f64,
}

fn recovery_run(k: u64) -> Result<RecoveryRun, Error> {
    let (data, _, truth) = generate(&recovery_config(k))?;
    let draws = sample_model(&data, &recovery_sampler(k), 1)?;
    let max_rhat = diagnostics(&draws).max_rhat.unwrap_or(f64::INFINITY);
    Ok(RecoveryRun { data, truth, draws, max_rhat })
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- criterion 4

fn parameter_recovery(runs: &[RecoveryRun], secs: f64) -> Outcome {
    let mut cases = 0;
    let mut covered = 0;
    for run in runs {
        for (name, value) in run.truth.named_params(&run.data.graph) {
            if name != "gamma" && !name.starts_with("beta[") {
                continue;
            }
            let j = run.draws.column_index(&name).ok_or(format!("{name} missing from draws"))?;
            let mut col = run.draws.column(j);
            col.sort_by(f64::total_cmp);
            cases += 1;
            if quantile(&col, 0.05) <= value && value <= quantile(&col, 0.95) {
                covered += 1;
            }
        }
    }
    let rate = covered as f64 / cases as f64;
    let good = runs.iter().filter(|r| r.max_rhat < 1.05).count();
    let rhats: Vec<String> = runs.iter().map(|r| format!("{:.3}", r.max_rhat)).collect();
    check(
        rate >= 0.8 && good >= 9 && secs < 1800.0,
        format!(
            "90% interval coverage {covered}/{cases} = {rate:.3} (>= 0.80); runs with max R-hat < 1.05: {good}/10 (>= 9) \
             [{}]; {secs:.0} s (< 1800 s)",
            rhats.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn phone_only_fit(run: &RecoveryRun, k: u64) -> Result<PosteriorDraws, Error> {
    let records: Vec<_> = run.data.records.iter().filter(|r| r.modality == Modality::Mp).cloned().collect();
    let data = Dataset::new(records, run.data.spec.phone_only(), run.data.graph.clone())?;
    sample_model(&data, &recovery_sampler(k), 1)
}

fn mbe(series: &EstimateSeries, truth: &GroundTruth) -> f64 {
    let errs: Vec<f64> = series
        .rows
        .iter()
        .map(|r| r.summary.expect("every district has cells").mean - true_prevalence(truth, r.district, r.month))
        .collect();
    mean(&errs)
}

fn bias_correction(runs: &[RecoveryRun], mp_fits: &[PosteriorDraws]) -> Outcome {
    let mut jm = Vec::new();
    let mut mr = Vec::new();
    for (k, (run, mp)) in runs.iter().zip(mp_fits).enumerate() {
        let spec = &run.data.spec;
        let table = &run.truth.table;
        let joint = full_series(&run.draws, spec, table, EstimatorTag::Jmrp, Modality::F2f, DrawMode::Rate, k as u64, false)
            .map_err(|e| e.to_string())?;
        let phone = full_series(mp, &spec.phone_only(), table, EstimatorTag::Mrp, Modality::Mp, DrawMode::Rate, k as u64, false)
            .map_err(|e| e.to_string())?;
        jm.push(mbe(&joint, &run.truth));
        mr.push(mbe(&phone, &run.truth));
    }
    let j = mean(&jm.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let m = mean(&mr.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let reduction = 1.0 - j / m;
    check(
        j < 0.03 && reduction >= 0.5,
        format!(
            "mean |MBE| jMRP {j:.4} (< 0.03) vs MRP {m:.4}; reduction {:.0}% (>= 50%); per-seed jMRP {:?}, MRP {:?}",
            100.0 * reduction,
            jm.iter().map(|x| format!("{x:+.4}")).collect::<Vec<_>>(),
            mr.iter().map(|x| format!("{x:+.4}")).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn coverage_behaviour(runs: &[RecoveryRun]) -> Outcome {
    let mut model = Vec::new();
    let mut reference = Vec::new();
    let mut jmr_len = Vec::new();
    for (k, run) in runs.iter().enumerate() {
        let spec = &run.data.spec;
        let direct = direct_series(&run.truth.holdout_records, spec, Modality::F2f).map_err(|e| e.to_string())?;
        let joint = full_series(
            &run.draws,
            spec,
            &run.truth.table,
            EstimatorTag::Jmrp,
            Modality::F2f,
            DrawMode::Bernoulli,
            k as u64,
            false,
        )
        .map_err(|e| e.to_string())?;
        let jmr = mr_series(&run.draws, spec, &run.data.records, EstimatorTag::JmrF2f, DrawMode::Bernoulli, k as u64, false)
            .map_err(|e| e.to_string())?;
        for s in 0..spec.districts {
            let d = direct.get(EstimatorTag::DirectF2f, s, HOLDOUT_MONTH).and_then(|r| r.summary);
            let j = joint.get(EstimatorTag::Jmrp, s, HOLDOUT_MONTH).and_then(|r| r.summary);
            let m = jmr.get(EstimatorTag::JmrF2f, s, HOLDOUT_MONTH).and_then(|r| r.summary);
            let (Some(d), Some(j), Some(m)) = (d, j, m) else {
                return Err(format!("missing estimate for district {s}"));
            };
            reference.push(d.interval(0.9).unwrap());
            model.push(j.interval(0.9).unwrap());
            jmr_len.push(m.interval(0.9).unwrap().length());
        }
    }
    let cov = coverage(&model, &reference).map_err(|e| e.to_string())?;
    let jl = mean(&model.iter().map(Interval::length).collect::<Vec<_>>());
    let ml = mean(&jmr_len);
    check(
        (0.8..=1.0).contains(&cov) && jl < ml,
        format!(
            "jMRP 90% overlap coverage vs held-out Wilson {cov:.3} (in [0.80, 1.00]) over {} districts; \
             mean 90% length jMRP {jl:.3} < jMR-F2F {ml:.3}",
            model.len()
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn raking_oracle() -> Outcome {
    let schema = vec![Covariate::new("a", &["a0", "a1"]), Covariate::new("b", &["b0", "b1"])];
    let cell = |a: usize, b: usize, w: f64| Cell { district: 0, covariates: vec![a, b], phone: 1.0, weight: w };
    let uniform: Vec<Cell> = (0..2).flat_map(|a| (0..2).map(move |b| cell(a, b, 1.0))).collect();
    let prior = PostStratTable::new(schema.clone(), 1, uniform, Provenance::FrequencyCounts).map_err(|e| e.to_string())?;
    let target = |var: &str, l0: &str, l1: &str, p: f64| MarginTarget {
        variable: var.to_string(),
        proportions: [(l0.to_string(), p), (l1.to_string(), 1.0 - p)].into_iter().collect(),
        scope: TargetScope::National,
    };
    let targets = [target("a", "a0", "a1", 0.3), target("b", "b0", "b1", 0.65)];
    let out = rake(&prior, &targets, 1e-12, 50).map_err(|e| e.to_string())?;
    let total = out.table.total();
    let pa = [0.3, 0.7];
    let pb = [0.65, 0.35];
    let worst = out
        .table
        .cells
        .iter()
        .map(|c| (c.weight / total - pa[c.covariates[0]] * pb[c.covariates[1]]).abs())
        .fold(0.0, f64::max);

    // A structural zero stays zero.
    let with_zero = vec![cell(0, 0, 1.0), cell(0, 1, 0.0), cell(1, 0, 1.0), cell(1, 1, 1.0)];
    let prior = PostStratTable::new(schema.clone(), 1, with_zero, Provenance::FrequencyCounts).map_err(|e| e.to_string())?;
    let zeroed = rake(&prior, &targets, 1e-10, 1000).map_err(|e| e.to_string())?;
    let zero_kept = zeroed.table.cells.iter().any(|c| c.covariates == [0, 1] && c.weight == 0.0);

    // A category with no prior mass cannot reach a positive target.
    let empty_level = vec![cell(0, 0, 1.0), cell(0, 1, 1.0), cell(1, 0, 0.0), cell(1, 1, 0.0)];
    let prior = PostStratTable::new(schema, 1, empty_level, Provenance::FrequencyCounts).map_err(|e| e.to_string())?;
    let infeasible = match rake(&prior, &targets, 1e-10, 1000) {
        Err(Error::Infeasible { variable, category, .. }) => variable == "a" && category == "a1",
        _ => false,
    };
    check(
        worst < 1e-10 && out.cycles <= 50 && zero_kept && infeasible,
        format!(
            "2x2 max error {worst:.1e} (< 1e-10) in {} cycles (<= 50); zero cell kept: {zero_kept}; \
             infeasible a=a1 reported: {infeasible}",
            out.cycles
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn crps_naive(samples: &[f64], y: f64) -> f64 {
    let b = samples.len() as f64;
    let first = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / b;
    let pair: f64 = samples.iter().flat_map(|x| samples.iter().map(move |z| (x - z).abs())).sum();
    first - pair / (2.0 * b * b)
}

fn metric_oracles() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    // CCC with population moments: x = (1,2,3,4), y = (2,2,4,5).
    let x = [1.0, 2.0, 3.0, 4.0];
    let y = [2.0, 2.0, 4.0, 5.0];
    // mean x 2.5, mean y 3.25, var x 1.25, var y 1.6875, cov 1.375.
    let hand = 2.0 * 1.375 / (1.25 + 1.6875 + 0.75f64.powi(2));
    let got = ccc(&x, &y).unwrap().unwrap();
    ok &= approx_eq(got, hand, 1e-12);
    notes.push(format!("CCC {got:.6} vs {hand:.6}"));

    // Spearman with ties: ranks x (1,2,3,4), y (1.5,1.5,3,4); centred cross
    // products sum to 4.5, squares to 5 and 4.5.
    let (_, rho) = rank_corr(&x, &y).unwrap();
    let rho = rho.unwrap();
    let hand = 4.5 / (5.0f64 * 4.5).sqrt();
    ok &= approx_eq(rho, hand, 1e-12);
    notes.push(format!("Spearman {rho:.6} vs {hand:.6}"));

    // Wilson boundaries are exact at k = 0 and k = n.
    let lo = wilson(0.0, 20.0, 0.9).unwrap();
    let hi = wilson(20.0, 20.0, 0.9).unwrap();
    let exact = lo.lower == 0.0 && hi.upper == 1.0 && lo.upper > 0.0 && hi.lower < 1.0;
    ok &= exact;
    notes.push(format!("Wilson bounds exact: {exact}"));

    // Sorted CRPS equals the pairwise definition.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for b in [1usize, 2, 3, 10, 57, 200] {
        let s: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
        let y = rng.random::<f64>();
        worst = worst.max((crps_empirical(&s, y).unwrap() - crps_naive(&s, y)).abs());
    }
    ok &= worst < 1e-12;
    notes.push(format!("CRPS sorted vs naive {worst:.1e} (< 1e-12)"));
    check(ok, notes.join("; "))
}

// ---------------------------------------------------------------- criterion 9

fn fcs_oracle() -> Outcome {
    let max = fcs(&FoodFrequencies([7; 8])).unwrap();
    // staples 7 x 2 + pulses 2 x 3 + vegetables 4 x 1 + meat 1 x 4 = 28
    let boundary = fcs(&FoodFrequencies([7, 2, 4, 0, 1, 0, 0, 0])).unwrap();
    let class = classify(boundary, &FcsThresholds::zimbabwe());
    check(
        max == 112.0 && boundary == 28.0 && class == FcsClass::Poor,
        format!("max score {max} (= 112); score {boundary} classifies as {} (= poor)", class.as_str()),
    )
}

// --------------------------------------------------------------- criterion 10

/// simulate -> fit -> estimate -> evaluate, returning every CSV produced.
fn pipeline_bytes(seed: u64) -> Result<Vec<Vec<u8>>, Error> {
    let mut conf = SimConfig::small(2, 2, 2, 3);
    conf.population_per_district = 400;
    conf.mp_per_district_month = 20;
    conf.f2f_per_district = 20;
    conf.seed = seed;
    let (data, table, truth) = generate(&conf)?;
    let sampler = SamplerConfig { chains: 2, iterations: 300, warmup: 150, seed, ..SamplerConfig::default() };
    let draws = sample_model(&data, &sampler, 2)?;
    let mut est = direct_series(&data.records, &data.spec, Modality::F2f)?;
    est.extend(full_series(&draws, &data.spec, &table, EstimatorTag::Jmrp, Modality::F2f, DrawMode::Bernoulli, seed, true)?);
    est.extend(mr_series(&draws, &data.spec, &data.records, EstimatorTag::JmrF2f, DrawMode::Bernoulli, seed, true)?);

    let mut out = vec![Vec::new(); 5];
    jmrp_core::model::io::write_records(&mut out[0], &data.spec, &data.records)?;
    table.write_csv(&mut out[1])?;
    draws.write_csv(&mut out[2])?;
    est.write_csv(&mut out[3])?;
    // Evaluation table: per estimator, mean absolute error against truth.
    let mut metrics = String::from("estimator,mae\n");
    for tag in [EstimatorTag::DirectF2f, EstimatorTag::Jmrp, EstimatorTag::JmrF2f] {
        let errs: Vec<f64> = est
            .rows
            .iter()
            .filter(|r| r.estimator == tag)
            .filter_map(|r| r.summary.map(|s| (s.mean - true_prevalence(&truth, r.district, r.month)).abs()))
            .collect();
        metrics += &format!("{tag},{}\n", mean(&errs));
    }
    out[4] = metrics.into_bytes();
    Ok(out)
}

fn end_to_end_determinism() -> Outcome {
    let a = pipeline_bytes(31).map_err(|e| e.to_string())?;
    let b = pipeline_bytes(31).map_err(|e| e.to_string())?;
    let names = ["data", "table", "draws", "estimates", "metrics"];
    let diff: Vec<&str> = names.iter().zip(a.iter().zip(&b)).filter(|(_, (x, y))| x != y).map(|(n, _)| *n).collect();
    let bytes: usize = a.iter().map(Vec::len).sum();
    check(diff.is_empty(), format!("two runs, {bytes} bytes over 5 CSVs; differing: {diff:?}"))
}

// --------------------------------------------------------------- criterion 11

fn with_setting(spec: &ModelSpec, edit: &str, value: &str) -> Result<ModelSpec, Error> {
    let mut json: serde_json::Value = serde_json::from_str(&spec.to_json()).expect("spec json");
    json[edit] = serde_json::Value::String(value.to_string());
    ModelSpec::from_json_str(&json.to_string())
}

fn sensitivity(run: &RecoveryRun) -> Outcome {
    let pc = &run.data.spec;
    let hc = with_setting(pc, "prior_family", "HalfCauchy").map_err(|e| e.to_string())?;
    let district = with_setting(pc, "interaction_level", "district").map_err(|e| e.to_string())?;
    if hc.prior_family != PriorFamily::HalfCauchy || hc.half_cauchy_scale != 1.0 {
        return Err("half-Cauchy setting not applied".into());
    }
    let mut gamma = Vec::new();
    let mut settings = Vec::new();
    for (label, spec) in [("PC", pc.clone()), ("half-Cauchy", hc), ("district interaction", district)] {
        let draws = if label == "PC" {
            run.draws.clone()
        } else {
            let data = Dataset::new(run.data.records.clone(), spec.clone(), run.data.graph.clone()).map_err(|e| e.to_string())?;
            sample_model(&data, &recovery_sampler(0), 1).map_err(|e| e.to_string())?
        };
        let est = full_series(&draws, &spec, &run.truth.table, EstimatorTag::Jmrp, Modality::F2f, DrawMode::Rate, 0, false)
            .map_err(|e| e.to_string())?;
        let finite = est.rows.iter().all(|r| r.summary.is_some_and(|s| s.mean.is_finite()));
        let g = mean(&draws.column(draws.column_index("gamma").unwrap()));
        settings.push(format!("{label}: gamma {g:.3}, estimates finite {finite}"));
        if !finite {
            return Err(settings.join("; "));
        }
        gamma.push(g);
    }
    let d = (gamma[0] - gamma[1]).abs();
    check(d < 0.1, format!("{}; |PC - HC| = {d:.3} (< 0.1)", settings.join("; ")))
}

// ---------------------------------------------------------------------- main

fn report(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail, pass) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("[{tag}] criterion {id:>2} {name}: {detail} [{secs:.1} s]");
    pass
}

fn main() {
    // libtest flags (e.g. --nocapture, a filter) are accepted and ignored.
    let mut pass = true;
    pass &= report(1, "gradient vs finite differences", gradient_points);
    pass &= report(2, "ICAR vs dense Gaussian", icar_oracle);
    pass &= report(3, "NUTS calibration", sampler_calibration);

    let start = Instant::now();
    let runs: Vec<Result<RecoveryRun, Error>> = (0..10).map(recovery_run).collect();
    let recovery_secs = start.elapsed().as_secs_f64();
    let fits: Result<Vec<RecoveryRun>, String> = runs.into_iter().collect::<Result<_, _>>().map_err(|e| e.to_string());

    match &fits {
        Ok(runs) => {
            pass &= report(4, "parameter recovery", || parameter_recovery(runs, recovery_secs));
            let mp: Result<Vec<_>, _> = runs[..5].iter().enumerate().map(|(k, r)| phone_only_fit(r, k as u64)).collect();
            match mp {
                Ok(mp) => pass &= report(5, "bias correction", || bias_correction(&runs[..5], &mp)),
                Err(e) => pass &= report(5, "bias correction", || Err(e.to_string())),
            }
            pass &= report(6, "coverage behaviour", || coverage_behaviour(&runs[..5]));
        }
        Err(e) => {
            for (id, name) in [(4, "parameter recovery"), (5, "bias correction"), (6, "coverage behaviour")] {
                pass &= report(id, name, || Err(format!("recovery fits failed: {e}")));
            }
        }
    }
    pass &= report(7, "raking oracle", raking_oracle);
    pass &= report(8, "metric formula oracles", metric_oracles);
    pass &= report(9, "FCS", fcs_oracle);
    pass &= report(10, "end-to-end determinism", end_to_end_determinism);
    match &fits {
        Ok(runs) => pass &= report(11, "sensitivity settings", || sensitivity(&runs[0])),
        Err(e) => pass &= report(11, "sensitivity settings", || Err(format!("recovery fits failed: {e}"))),
    }
    if !pass {
        std::process::exit(1);
    }
}
