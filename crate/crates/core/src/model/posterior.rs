//! Joint log-posterior and its analytic gradient.
//!
//! Records sharing a design row, district and month are pooled into one
//! binomial observation before evaluation; the density is unchanged.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::design::DesignLayout;
use crate::model::graph::AdjacencyGraph;
use crate::model::params::{ParamLayout, ParamState, SIGMA_NU, SIGMA_PHI, SIGMA_PSI, SIGMA_XI, SIGMA_ZETA};
use crate::model::priors::{
    hyperprior_dlog, hyperprior_logpdf, icar_terms, iid_terms, normal_logpdf, rw1_terms,
};
use crate::model::spec::{ModelSpec, SurveyRecord};
use crate::sampler::LogDensity;

/// Validated survey data bound to a model and a neighbourhood graph.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<SurveyRecord>,
    pub spec: ModelSpec,
    pub graph: AdjacencyGraph,
}

impl Dataset {
    pub fn new(records: Vec<SurveyRecord>, spec: ModelSpec, graph: AdjacencyGraph) -> Result<Self> {
        spec.validate()?;
        if graph.node_count() != spec.districts {
            return Err(Error::schema(format!(
                "graph has {} nodes, model has S = {}",
                graph.node_count(),
                spec.districts
            )));
        }
        for (i, rec) in records.iter().enumerate() {
            rec.validate(&spec)
                .map_err(|e| Error::schema(format!("record {i}: {e}")))?;
        }
        Ok(Dataset { records, spec, graph })
    }

    pub fn design(&self) -> DesignLayout {
        DesignLayout::new(&self.spec)
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.spec, &self.graph, self.design().width())
    }
}

#[derive(Debug, Clone)]
struct Pooled {
    row: usize,
    district: usize,
    month: usize,
    psi: usize,
    trials: f64,
    successes: f64,
}

/// Preprocessed posterior ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct JointPosterior {
    spec: ModelSpec,
    graph: AdjacencyGraph,
    design: DesignLayout,
    layout: ParamLayout,
    rows: Vec<f64>,
    width: usize,
    pooled: Vec<Pooled>,
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl JointPosterior {
    pub fn new(data: &Dataset) -> Result<Self> {
        let design = data.design();
        let width = design.width();
        let layout = data.layout();
        let mut rows = Vec::new();
        let mut row_ids: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut pooled: Vec<Pooled> = Vec::new();
        let mut pooled_ids: HashMap<(usize, usize, usize), usize> = HashMap::new();
        let mut buf = vec![0.0; width];
        for rec in &data.records {
            design.fill(&data.spec, &rec.covariates, rec.phone, rec.modality, &mut buf)?;
            let key: Vec<u64> = buf.iter().map(|v| v.to_bits()).collect();
            let next = row_ids.len();
            let row = *row_ids.entry(key).or_insert_with(|| {
                rows.extend_from_slice(&buf);
                next
            });
            let id = *pooled_ids
                .entry((row, rec.district, rec.month))
                .or_insert_with(|| {
                    pooled.push(Pooled {
                        row,
                        district: rec.district,
                        month: rec.month,
                        psi: data.spec.psi_index(rec.district, rec.month),
                        trials: 0.0,
                        successes: 0.0,
                    });
                    pooled.len() - 1
                });
            pooled[id].trials += 1.0;
            if rec.outcome {
                pooled[id].successes += 1.0;
            }
        }
        Ok(JointPosterior {
            spec: data.spec.clone(),
            graph: data.graph.clone(),
            design,
            layout,
            rows,
            width,
            pooled,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn design(&self) -> &DesignLayout {
        &self.design
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn names(&self) -> Vec<String> {
        self.layout.names(&self.spec, self.design.column_names())
    }

    /// Number of distinct (design row, district, month) observation groups.
    pub fn pooled_len(&self) -> usize {
        self.pooled.len()
    }

    pub fn log_posterior(&self, params: &ParamState) -> Result<f64> {
        self.layout.check(params)?;
        if !params.is_finite() {
            return Err(Error::domain("non-finite parameter"));
        }
        Ok(self.evaluate(params, None))
    }

    pub fn grad_log_posterior(&self, params: &ParamState) -> Result<ParamState> {
        self.layout.check(params)?;
        if !params.is_finite() {
            return Err(Error::domain("non-finite parameter"));
        }
        let mut grad = ParamState::zeros(&self.spec, self.width);
        self.evaluate(params, Some(&mut grad));
        for (s, idx) in self.layout.phi_index.iter().enumerate() {
            if idx.is_none() {
                grad.phi[s] = 0.0;
            }
        }
        Ok(grad)
    }

    /// Log-likelihood part only.
    pub fn log_likelihood(&self, params: &ParamState) -> Result<f64> {
        self.layout.check(params)?;
        Ok(self.likelihood(params, None))
    }

    fn likelihood(&self, p: &ParamState, mut grad: Option<&mut ParamState>) -> f64 {
        let unique = self.rows.len() / self.width.max(1);
        let xb: Vec<f64> = (0..unique)
            .map(|u| {
                self.rows[u * self.width..(u + 1) * self.width]
                    .iter()
                    .zip(&p.beta)
                    .map(|(x, b)| x * b)
                    .sum()
            })
            .collect();
        let mut resid_row = grad.as_ref().map(|_| vec![0.0; unique]);
        let mut ll = 0.0;
        for obs in &self.pooled {
            let eta = p.gamma
                + xb[obs.row]
                + p.phi[obs.district]
                + p.zeta[obs.district]
                + p.nu[obs.month]
                + p.xi[obs.month]
                + p.psi[obs.psi];
            ll += obs.successes * eta - obs.trials * softplus(eta);
            if let Some(g) = grad.as_deref_mut() {
                let r = obs.successes - obs.trials * logistic(eta);
                g.gamma += r;
                g.phi[obs.district] += r;
                g.zeta[obs.district] += r;
                g.nu[obs.month] += r;
                g.xi[obs.month] += r;
                g.psi[obs.psi] += r;
                resid_row.as_mut().unwrap()[obs.row] += r;
            }
        }
        if let (Some(g), Some(resid)) = (grad, resid_row) {
            for (u, r) in resid.iter().enumerate() {
                if *r == 0.0 {
                    continue;
                }
                let row = &self.rows[u * self.width..(u + 1) * self.width];
                for (gb, x) in g.beta.iter_mut().zip(row) {
                    *gb += r * x;
                }
            }
        }
        ll
    }

    fn evaluate(&self, p: &ParamState, mut grad: Option<&mut ParamState>) -> f64 {
        let mut value = self.likelihood(p, grad.as_deref_mut());
        let beta_sd = self.spec.beta_sd;
        value += normal_logpdf(p.gamma, 0.0, beta_sd);
        value += p.beta.iter().map(|b| normal_logpdf(*b, 0.0, beta_sd)).sum::<f64>();

        match grad {
            None => {
                value += icar_terms(&p.phi, p.log_sigma[SIGMA_PHI], &self.graph, None);
                value += iid_terms(&p.zeta, p.log_sigma[SIGMA_ZETA], None);
                value += rw1_terms(&p.nu, p.log_sigma[SIGMA_NU], None);
                value += iid_terms(&p.xi, p.log_sigma[SIGMA_XI], None);
                value += iid_terms(&p.psi, p.log_sigma[SIGMA_PSI], None);
            }
            Some(g) => {
                let inv_var = 1.0 / (beta_sd * beta_sd);
                g.gamma -= p.gamma * inv_var;
                for (gb, b) in g.beta.iter_mut().zip(&p.beta) {
                    *gb -= b * inv_var;
                }
                let [g_phi, g_zeta, g_nu, g_xi, g_psi] = &mut g.log_sigma;
                value += icar_terms(&p.phi, p.log_sigma[SIGMA_PHI], &self.graph, Some((&mut g.phi, g_phi)));
                value += iid_terms(&p.zeta, p.log_sigma[SIGMA_ZETA], Some((&mut g.zeta, g_zeta)));
                value += rw1_terms(&p.nu, p.log_sigma[SIGMA_NU], Some((&mut g.nu, g_nu)));
                value += iid_terms(&p.xi, p.log_sigma[SIGMA_XI], Some((&mut g.xi, g_xi)));
                value += iid_terms(&p.psi, p.log_sigma[SIGMA_PSI], Some((&mut g.psi, g_psi)));
                for (k, gk) in g.log_sigma.iter_mut().enumerate() {
                    *gk += hyperprior_dlog(p.log_sigma[k].exp(), &self.spec) + 1.0;
                }
            }
        }
        // Hyperpriors on sigma plus the log-sigma Jacobian.
        for ls in p.log_sigma {
            value += hyperprior_logpdf(ls.exp(), &self.spec).unwrap_or(f64::NEG_INFINITY) + ls;
        }
        value
    }
}

impl LogDensity for JointPosterior {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        let params = match self.layout.unpack(position) {
            Ok(p) if p.is_finite() => p,
            _ => return f64::NAN,
        };
        let mut g = ParamState::zeros(&self.spec, self.width);
        let value = self.evaluate(&params, Some(&mut g));
        match self.layout.pack(&g) {
            Ok(flat) => grad.copy_from_slice(&flat),
            Err(_) => return f64::NAN,
        }
        value
    }

    fn coordinate_names(&self) -> Vec<String> {
        self.names()
    }
}

/// Sampling view of the joint posterior with standardised random effects.
///
/// Every effect block becomes `sigma_k * z_k` and the sampler moves `z` and
/// `log_sigma`, which removes the funnel between small scales and their
/// effects. For the ICAR and RW1 blocks each constrained group is centred,
/// `x = sigma * (z - mean(z))`, and the group mean of `z` gets its own
/// `N(0, 1/n)` prior, so the sum-to-zero constraint holds exactly without a
/// stiff direction in the sampler's space. Stored draws are natural
/// coordinates.
#[derive(Debug, Clone)]
pub struct NonCentered<'a> {
    inner: &'a JointPosterior,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
struct Block {
    scale: usize,
    range: std::ops::Range<usize>,
    /// Flat indices under one sum-to-zero constraint each.
    groups: Vec<Vec<usize>>,
}

impl<'a> NonCentered<'a> {
    pub fn new(inner: &'a JointPosterior) -> Self {
        let l = &inner.layout;
        let phi_groups = inner
            .graph
            .components()
            .iter()
            .filter(|c| c.len() >= 2)
            .map(|c| c.iter().filter_map(|&s| l.phi_index[s]).collect())
            .collect();
        let blocks = vec![
            Block { scale: SIGMA_PHI, range: l.phi_start..l.zeta_start, groups: phi_groups },
            Block { scale: SIGMA_ZETA, range: l.zeta_start..l.nu_start, groups: Vec::new() },
            Block { scale: SIGMA_NU, range: l.nu_start..l.xi_start, groups: vec![(l.nu_start..l.xi_start).collect()] },
            Block { scale: SIGMA_XI, range: l.xi_start..l.psi_start, groups: Vec::new() },
            Block { scale: SIGMA_PSI, range: l.psi_start..l.sigma_start, groups: Vec::new() },
        ];
        NonCentered { inner, blocks }
    }
}

fn group_mean(v: &[f64], group: &[usize]) -> f64 {
    group.iter().map(|&i| v[i]).sum::<f64>() / group.len() as f64
}

impl LogDensity for NonCentered<'_> {
    fn dim(&self) -> usize {
        self.inner.layout.dim
    }

    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        let x = self.constrain(position);
        let mut gx = vec![0.0; x.len()];
        let mut value = self.inner.log_density_and_grad(&x, &mut gx);
        if !value.is_finite() {
            return value;
        }
        grad.copy_from_slice(&gx);
        let sig = self.inner.layout.sigma_start;
        for b in &self.blocks {
            let ls = position[sig + b.scale];
            let sigma = ls.exp();
            let mut dlog = 0.0;
            for i in b.range.clone() {
                grad[i] = sigma * gx[i];
                dlog += x[i] * gx[i];
            }
            // Jacobian of the rescaling, less one dimension per constrained group.
            let kept = (b.range.len() - b.groups.len()) as f64;
            value += kept * ls;
            grad[sig + b.scale] += dlog + kept;
            for g in &b.groups {
                let gbar = sigma * group_mean(&gx, g);
                let zbar = group_mean(position, g);
                value -= 0.5 * g.len() as f64 * zbar * zbar;
                for &i in g {
                    grad[i] -= gbar + zbar;
                }
            }
        }
        value
    }

    fn coordinate_names(&self) -> Vec<String> {
        self.inner.names()
    }

    fn constrain(&self, position: &[f64]) -> Vec<f64> {
        let mut x = position.to_vec();
        let sig = self.inner.layout.sigma_start;
        for b in &self.blocks {
            let sigma = position[sig + b.scale].exp();
            for i in b.range.clone() {
                x[i] *= sigma;
            }
            for g in &b.groups {
                let shift = sigma * group_mean(position, g);
                for &i in g {
                    x[i] -= shift;
                }
            }
        }
        x
    }
}

/// Unnormalised log posterior of `params` given `data`.
pub fn log_posterior(params: &ParamState, data: &Dataset) -> Result<f64> {
    JointPosterior::new(data)?.log_posterior(params)
}

/// Gradient with respect to every unconstrained coordinate, shaped like `ParamState`.
pub fn grad_log_posterior(params: &ParamState, data: &Dataset) -> Result<ParamState> {
    JointPosterior::new(data)?.grad_log_posterior(params)
}
