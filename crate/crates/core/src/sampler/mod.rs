//! No-U-Turn sampler with warmup adaptation, draw storage and convergence diagnostics.

mod adapt;
pub mod diagnostics;
pub mod draws;
pub mod nuts;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{logistic, Dataset, DesignLayout, JointPosterior, Modality, NonCentered, ModelSpec, ParamLayout};

pub use adapt::{DualAveraging, Welford, WindowSchedule};
pub use diagnostics::{diagnostics, split_rhat, bulk_ess, DiagnosticsReport};
pub use draws::{ChainAdaptation, PosteriorDraws};
pub use nuts::{Hamiltonian, PhasePoint, TransitionStats};

/// Unnormalised log density with gradient over a flat unconstrained vector.
///
/// Implementations return a non-finite value when the point is outside the support.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;

    fn coordinate_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{i}]")).collect()
    }

    /// Maps a sampling coordinate to the values stored as a draw.
    fn constrain(&self, position: &[f64]) -> Vec<f64> {
        position.to_vec()
    }
}

fn default_chains() -> usize {
    4
}
fn default_iterations() -> usize {
    1500
}
fn default_warmup() -> usize {
    500
}
fn default_target_accept() -> f64 {
    0.8
}
fn default_max_treedepth() -> u32 {
    10
}
fn default_init_scale() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_chains")]
    pub chains: usize,
    /// Total iterations per chain, warmup included.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_target_accept")]
    pub target_accept: f64,
    #[serde(default = "default_max_treedepth")]
    pub max_treedepth: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: default_chains(),
            iterations: default_iterations(),
            warmup: default_warmup(),
            target_accept: default_target_accept(),
            max_treedepth: default_max_treedepth(),
            seed: 0,
            init_scale: default_init_scale(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::schema("chains must be at least 1"));
        }
        if self.warmup >= self.iterations {
            return Err(Error::schema(format!(
                "warmup ({}) must be smaller than iterations ({})",
                self.warmup, self.iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::schema("target_accept must lie in (0, 1)"));
        }
        if self.max_treedepth == 0 || self.max_treedepth > 30 {
            return Err(Error::schema("max_treedepth must lie in [1, 30]"));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::schema("init_scale must be nonnegative"));
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        self.iterations - self.warmup
    }

    /// Independent stream for one chain.
    pub fn chain_rng(&self, chain: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(chain as u64 + 1);
        rng
    }
}

struct ChainOutput {
    draws: Vec<f64>,
    stats: Vec<TransitionStats>,
    adaptation: ChainAdaptation,
}

const INIT_ATTEMPTS: usize = 100;

fn initial_point<D: LogDensity + ?Sized>(
    target: &D,
    conf: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PhasePoint> {
    for _ in 0..INIT_ATTEMPTS {
        let q: Vec<f64> = (0..target.dim())
            .map(|_| conf.init_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let z = PhasePoint::new(target, q);
        if z.is_finite() {
            return Ok(z);
        }
    }
    Err(Error::Initialization(format!(
        "log density not finite at {INIT_ATTEMPTS} random starting points"
    )))
}

fn run_chain<D: LogDensity + ?Sized>(target: &D, conf: &SamplerConfig, chain: usize) -> Result<ChainOutput> {
    let mut rng = conf.chain_rng(chain);
    let dim = target.dim();
    let mut z = initial_point(target, conf, &mut rng)?;
    let mut inv_mass = vec![1.0; dim];

    let mut eps = Hamiltonian { target, inv_mass: &inv_mass }.find_reasonable_step_size(&z, 1.0, &mut rng);
    let mut averager = DualAveraging::new(conf.target_accept, eps);
    let mut windows = WindowSchedule::new(conf.warmup);
    let mut estimator = Welford::new(dim);

    let kept = conf.draws_per_chain();
    let mut draws = Vec::with_capacity(kept * dim);
    let mut stats = Vec::with_capacity(kept);

    for iter in 0..conf.iterations {
        let ham = Hamiltonian { target, inv_mass: &inv_mass };
        let (next, st) = ham.transition(&z, eps, conf.max_treedepth, &mut rng);
        z = next;
        if iter < conf.warmup {
            eps = averager.update(st.accept_stat);
            if windows.in_slow_window() {
                estimator.add(&z.q);
            }
            if windows.step() {
                inv_mass = estimator.regularized_variance();
                estimator.restart();
                let ham = Hamiltonian { target, inv_mass: &inv_mass };
                eps = ham.find_reasonable_step_size(&z, eps, &mut rng);
                averager.restart(eps);
            }
            if iter + 1 == conf.warmup {
                eps = averager.final_step_size();
            }
        } else {
            draws.extend(target.constrain(&z.q));
            stats.push(st);
        }
    }
    Ok(ChainOutput {
        draws,
        stats,
        adaptation: ChainAdaptation {
            step_size: eps,
            inv_mass,
        },
    })
}

/// Runs all chains on up to `threads` worker threads; output does not depend on `threads`.
pub fn sample<D: LogDensity + ?Sized>(target: &D, conf: &SamplerConfig, threads: usize) -> Result<PosteriorDraws> {
    conf.validate()?;
    let threads = threads.max(1).min(conf.chains);
    let mut outputs: Vec<Option<Result<ChainOutput>>> = (0..conf.chains).map(|_| None).collect();
    if threads == 1 {
        for (c, slot) in outputs.iter_mut().enumerate() {
            *slot = Some(run_chain(target, conf, c));
        }
    } else {
        for batch in (0..conf.chains).collect::<Vec<_>>().chunks(threads) {
            let results: Vec<(usize, Result<ChainOutput>)> = std::thread::scope(|scope| {
                let handles: Vec<_> = batch
                    .iter()
                    .map(|&c| scope.spawn(move || (c, run_chain(target, conf, c))))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("chain thread panicked"))
                    .collect()
            });
            for (c, r) in results {
                outputs[c] = Some(r);
            }
        }
    }

    let names = target.coordinate_names();
    let mut values = Vec::with_capacity(conf.chains * conf.draws_per_chain() * target.dim());
    let mut stats = Vec::new();
    let mut adaptation = Vec::new();
    for out in outputs {
        let out = out.expect("every chain ran")?;
        values.extend(out.draws);
        stats.extend(out.stats);
        adaptation.push(out.adaptation);
    }
    PosteriorDraws::from_parts(names, conf.chains, conf.draws_per_chain(), values, &stats, adaptation)
}

/// Fits the joint model to `data`.
pub fn sample_model(data: &Dataset, conf: &SamplerConfig, threads: usize) -> Result<PosteriorDraws> {
    let posterior = JointPosterior::new(data)?;
    sample(&NonCentered::new(&posterior), conf, threads)
}

/// A poststratification cell or record profile at which to evaluate probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CellProfile {
    pub covariates: Vec<usize>,
    pub phone: f64,
    pub district: usize,
    pub month: usize,
}

/// Evaluates fitted probabilities from stored draws of a model with a given spec.
#[derive(Debug, Clone)]
pub struct DrawPredictor<'a> {
    pub draws: &'a PosteriorDraws,
    pub spec: &'a ModelSpec,
    pub design: DesignLayout,
    pub layout: ParamLayout,
}

impl<'a> DrawPredictor<'a> {
    pub fn new(draws: &'a PosteriorDraws, spec: &'a ModelSpec) -> Result<Self> {
        let design = DesignLayout::new(spec);
        let layout = ParamLayout::from_names(spec, design.width(), draws.names())?;
        Ok(DrawPredictor { draws, spec, design, layout })
    }

    pub fn check(&self, cell: &CellProfile) -> Result<()> {
        if cell.district >= self.spec.districts || cell.month >= self.spec.months {
            return Err(Error::schema(format!(
                "cell (district {}, month {}) outside S = {}, T = {}",
                cell.district, cell.month, self.spec.districts, self.spec.months
            )));
        }
        Ok(())
    }

    pub fn row(&self, cell: &CellProfile, modality: Modality) -> Result<Vec<f64>> {
        self.design.row(self.spec, &cell.covariates, cell.phone, modality)
    }

    /// Covariate contribution `x'beta` for draw `b`.
    pub fn xb(&self, b: usize, row: &[f64]) -> f64 {
        let beta = self.layout.beta(self.draws.draw(b));
        row.iter().zip(beta).map(|(x, v)| x * v).sum()
    }

    pub fn area_effect(&self, b: usize, district: usize, month: usize) -> f64 {
        self.layout.area_effect(self.spec, self.draws.draw(b), district, month)
    }
}

/// Fitted probability of the cell under each posterior draw, with modality fixed.
pub fn extract_cell_probability(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    cell: &CellProfile,
    modality: Modality,
) -> Result<Vec<f64>> {
    let predictor = DrawPredictor::new(draws, spec)?;
    predictor.check(cell)?;
    let row = predictor.row(cell, modality)?;
    Ok((0..draws.len())
        .map(|b| logistic(predictor.xb(b, &row) + predictor.area_effect(b, cell.district, cell.month)))
        .collect())
}
