//! Latent parameter vector and its flat unconstrained layout.

use crate::error::{Error, Result};
use crate::model::graph::AdjacencyGraph;
use crate::model::spec::ModelSpec;

/// Scale parameters, in the order stored in `log_sigma`.
pub const SCALE_NAMES: [&str; 5] = ["phi", "zeta", "nu", "xi", "psi"];

pub const SIGMA_PHI: usize = 0;
pub const SIGMA_ZETA: usize = 1;
pub const SIGMA_NU: usize = 2;
pub const SIGMA_XI: usize = 3;
pub const SIGMA_PSI: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub gamma: f64,
    pub beta: Vec<f64>,
    /// Structured spatial effect; isolated districts stay at zero.
    pub phi: Vec<f64>,
    pub zeta: Vec<f64>,
    pub nu: Vec<f64>,
    pub xi: Vec<f64>,
    /// Row-major (unit, month), unit being province or district.
    pub psi: Vec<f64>,
    pub log_sigma: [f64; 5],
}

impl ParamState {
    pub fn zeros(spec: &ModelSpec, beta_len: usize) -> Self {
        ParamState {
            gamma: 0.0,
            beta: vec![0.0; beta_len],
            phi: vec![0.0; spec.districts],
            zeta: vec![0.0; spec.districts],
            nu: vec![0.0; spec.months],
            xi: vec![0.0; spec.months],
            psi: vec![0.0; spec.psi_len()],
            log_sigma: [0.0; 5],
        }
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.log_sigma[k].exp()
    }

    pub fn is_finite(&self) -> bool {
        self.gamma.is_finite()
            && [&self.beta, &self.phi, &self.zeta, &self.nu, &self.xi, &self.psi]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
            && self.log_sigma.iter().all(|x| x.is_finite())
    }
}

/// Maps `ParamState` to and from the sampler's flat coordinate vector.
///
/// Order: gamma, beta, phi (non-isolated districts), zeta, nu, xi, psi, log_sigma.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub beta_len: usize,
    pub districts: usize,
    pub months: usize,
    pub psi_len: usize,
    /// Flat index of each district's phi, `None` when the district is isolated.
    pub phi_index: Vec<Option<usize>>,
    pub beta_start: usize,
    pub phi_start: usize,
    pub zeta_start: usize,
    pub nu_start: usize,
    pub xi_start: usize,
    pub psi_start: usize,
    pub sigma_start: usize,
    pub dim: usize,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec, graph: &AdjacencyGraph, beta_len: usize) -> Self {
        let free: Vec<bool> = (0..spec.districts).map(|s| !graph.is_isolated(s)).collect();
        Self::with_free_phi(spec, &free, beta_len)
    }

    fn with_free_phi(spec: &ModelSpec, free: &[bool], beta_len: usize) -> Self {
        let beta_start = 1;
        let phi_start = beta_start + beta_len;
        let mut next = phi_start;
        let phi_index = free
            .iter()
            .map(|&f| {
                f.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        let zeta_start = next;
        let nu_start = zeta_start + spec.districts;
        let xi_start = nu_start + spec.months;
        let psi_start = xi_start + spec.months;
        let sigma_start = psi_start + spec.psi_len();
        ParamLayout {
            beta_len,
            districts: spec.districts,
            months: spec.months,
            psi_len: spec.psi_len(),
            phi_index,
            beta_start,
            phi_start,
            zeta_start,
            nu_start,
            xi_start,
            psi_start,
            sigma_start,
            dim: sigma_start + 5,
        }
    }

    /// Coordinate names, used as column headers for stored draws.
    pub fn names(&self, spec: &ModelSpec, beta_names: &[String]) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim);
        names.push("gamma".to_string());
        names.extend(beta_names.iter().map(|b| format!("beta[{b}]")));
        for (s, idx) in self.phi_index.iter().enumerate() {
            if idx.is_some() {
                names.push(format!("phi[{s}]"));
            }
        }
        names.extend((0..self.districts).map(|s| format!("zeta[{s}]")));
        names.extend((0..self.months).map(|t| format!("nu[{t}]")));
        names.extend((0..self.months).map(|t| format!("xi[{t}]")));
        let units = self.psi_len / self.months;
        let unit = match spec.interaction_level {
            crate::model::spec::InteractionLevel::Province => "r",
            crate::model::spec::InteractionLevel::District => "s",
        };
        for u in 0..units {
            for t in 0..self.months {
                names.push(format!("psi[{unit}{u}:t{t}]"));
            }
        }
        names.extend(SCALE_NAMES.iter().map(|n| format!("log_sigma_{n}")));
        names
    }

    /// Recovers the layout from stored coordinate names.
    pub fn from_names(spec: &ModelSpec, beta_len: usize, names: &[String]) -> Result<Self> {
        let mut free = vec![false; spec.districts];
        for name in names {
            if let Some(inner) = name.strip_prefix("phi[").and_then(|r| r.strip_suffix(']')) {
                let s: usize = inner
                    .parse()
                    .map_err(|_| Error::schema(format!("bad coordinate name '{name}'")))?;
                if s >= spec.districts {
                    return Err(Error::schema(format!("'{name}' exceeds S = {}", spec.districts)));
                }
                free[s] = true;
            }
        }
        let layout = Self::with_free_phi(spec, &free, beta_len);
        if layout.dim != names.len() {
            return Err(Error::schema(format!(
                "draws have {} coordinates, model implies {}",
                names.len(),
                layout.dim
            )));
        }
        Ok(layout)
    }

    pub fn pack(&self, state: &ParamState) -> Result<Vec<f64>> {
        self.check(state)?;
        let mut x = vec![0.0; self.dim];
        x[0] = state.gamma;
        x[self.beta_start..self.phi_start].copy_from_slice(&state.beta);
        for (s, idx) in self.phi_index.iter().enumerate() {
            if let Some(i) = idx {
                x[*i] = state.phi[s];
            }
        }
        x[self.zeta_start..self.nu_start].copy_from_slice(&state.zeta);
        x[self.nu_start..self.xi_start].copy_from_slice(&state.nu);
        x[self.xi_start..self.psi_start].copy_from_slice(&state.xi);
        x[self.psi_start..self.sigma_start].copy_from_slice(&state.psi);
        x[self.sigma_start..].copy_from_slice(&state.log_sigma);
        Ok(x)
    }

    pub fn unpack(&self, x: &[f64]) -> Result<ParamState> {
        if x.len() != self.dim {
            return Err(Error::dim(format!(
                "flat vector has {} entries, layout expects {}",
                x.len(),
                self.dim
            )));
        }
        let phi = self
            .phi_index
            .iter()
            .map(|idx| idx.map_or(0.0, |i| x[i]))
            .collect();
        let mut log_sigma = [0.0; 5];
        log_sigma.copy_from_slice(&x[self.sigma_start..]);
        Ok(ParamState {
            gamma: x[0],
            beta: x[self.beta_start..self.phi_start].to_vec(),
            phi,
            zeta: x[self.zeta_start..self.nu_start].to_vec(),
            nu: x[self.nu_start..self.xi_start].to_vec(),
            xi: x[self.xi_start..self.psi_start].to_vec(),
            psi: x[self.psi_start..self.sigma_start].to_vec(),
            log_sigma,
        })
    }

    pub fn check(&self, state: &ParamState) -> Result<()> {
        let checks = [
            ("beta", state.beta.len(), self.beta_len),
            ("phi", state.phi.len(), self.districts),
            ("zeta", state.zeta.len(), self.districts),
            ("nu", state.nu.len(), self.months),
            ("xi", state.xi.len(), self.months),
            ("psi", state.psi.len(), self.psi_len),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::dim(format!("{name} has length {got}, expected {want}")));
            }
        }
        Ok(())
    }

    /// Linear predictor excluding the covariate term, read directly from a flat draw.
    pub fn area_effect(&self, spec: &ModelSpec, x: &[f64], district: usize, month: usize) -> f64 {
        let phi = self.phi_index[district].map_or(0.0, |i| x[i]);
        x[0] + phi
            + x[self.zeta_start + district]
            + x[self.nu_start + month]
            + x[self.xi_start + month]
            + x[self.psi_start + spec.psi_index(district, month)]
    }

    pub fn beta<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.beta_start..self.phi_start]
    }
}
