//! Multinomial No-U-Turn transition with a diagonal Euclidean metric.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::sampler::LogDensity;

/// Energy error beyond which a trajectory is flagged divergent.
const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl PhasePoint {
    pub fn new<D: LogDensity + ?Sized>(target: &D, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = target.log_density_and_grad(&q, &mut grad);
        let p = vec![0.0; q.len()];
        PhasePoint { q, p, grad, logp }
    }

    pub fn is_finite(&self) -> bool {
        self.logp.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }
}

/// Outcome of one transition.
#[derive(Debug, Clone, Copy)]
pub struct TransitionStats {
    pub accept_stat: f64,
    pub depth: u32,
    pub n_leapfrog: u32,
    pub divergent: bool,
    pub energy: f64,
}

pub struct Hamiltonian<'a, D: ?Sized> {
    pub target: &'a D,
    pub inv_mass: &'a [f64],
}

impl<D: LogDensity + ?Sized> Hamiltonian<'_, D> {
    pub fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(self.inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
    }

    pub fn energy(&self, z: &PhasePoint) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    /// Velocity `M^{-1} p`.
    pub fn dtau_dp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(self.inv_mass).map(|(p, m)| p * m).collect()
    }

    pub fn sample_momentum(&self, z: &mut PhasePoint, rng: &mut ChaCha8Rng) {
        for (p, m) in z.p.iter_mut().zip(self.inv_mass) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    pub fn leapfrog(&self, z: &mut PhasePoint, eps: f64) {
        let half = 0.5 * eps;
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(self.inv_mass) {
            *q += eps * m * p;
        }
        z.logp = self.target.log_density_and_grad(&z.q, &mut z.grad);
        if !z.is_finite() {
            z.logp = f64::NEG_INFINITY;
            return;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

struct TreeState {
    h0: f64,
    eps: f64,
    n_leapfrog: u32,
    sum_metro_prob: f64,
    divergent: bool,
}

/// Edge momenta and velocities of a (sub)trajectory.
struct Edges {
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    rho: Vec<f64>,
}

impl<D: LogDensity + ?Sized> Hamiltonian<'_, D> {
    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &self,
        depth: u32,
        z: &mut PhasePoint,
        z_propose: &mut PhasePoint,
        sign: f64,
        log_sum_weight: &mut f64,
        state: &mut TreeState,
        rng: &mut ChaCha8Rng,
    ) -> (bool, Edges) {
        if depth == 0 {
            self.leapfrog(z, sign * state.eps);
            state.n_leapfrog += 1;
            let h = self.energy(z);
            if h - state.h0 > MAX_DELTA_H {
                state.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, state.h0 - h);
            state.sum_metro_prob += if state.h0 - h > 0.0 {
                1.0
            } else {
                (state.h0 - h).exp()
            };
            z_propose.clone_from(z);
            let p_sharp = self.dtau_dp(&z.p);
            let edges = Edges {
                p_beg: z.p.clone(),
                p_end: z.p.clone(),
                p_sharp_beg: p_sharp.clone(),
                p_sharp_end: p_sharp,
                rho: z.p.clone(),
            };
            return (!state.divergent, edges);
        }

        let mut lsw_init = f64::NEG_INFINITY;
        let (valid_init, init) =
            self.build_tree(depth - 1, z, z_propose, sign, &mut lsw_init, state, rng);
        if !valid_init {
            return (false, init);
        }

        let mut z_propose_final = z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let (valid_final, fin) = self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            sign,
            &mut lsw_final,
            state,
            rng,
        );
        if !valid_final {
            return (false, fin);
        }

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree {
            std::mem::swap(z_propose, &mut z_propose_final);
        } else {
            let accept = (lsw_final - lsw_subtree).exp();
            if rng.random::<f64>() < accept {
                std::mem::swap(z_propose, &mut z_propose_final);
            }
        }

        let rho_subtree = add(&init.rho, &fin.rho);
        let mut persist = no_u_turn(&init.p_sharp_beg, &fin.p_sharp_end, &rho_subtree);
        let rho_ext = add(&init.rho, &fin.p_beg);
        persist &= no_u_turn(&init.p_sharp_beg, &fin.p_sharp_beg, &rho_ext);
        let rho_ext = add(&fin.rho, &init.p_end);
        persist &= no_u_turn(&init.p_sharp_end, &fin.p_sharp_end, &rho_ext);

        let edges = Edges {
            p_beg: init.p_beg,
            p_end: fin.p_end,
            p_sharp_beg: init.p_sharp_beg,
            p_sharp_end: fin.p_sharp_end,
            rho: rho_subtree,
        };
        (persist, edges)
    }

    /// One NUTS transition from `current`; the returned point has fresh momentum state.
    pub fn transition(
        &self,
        current: &PhasePoint,
        eps: f64,
        max_depth: u32,
        rng: &mut ChaCha8Rng,
    ) -> (PhasePoint, TransitionStats) {
        let mut z = current.clone();
        self.sample_momentum(&mut z, rng);
        let h0 = self.energy(&z);

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        let p_sharp = self.dtau_dp(&z.p);
        let mut p_sharp_fwd_fwd = p_sharp.clone();
        let mut p_fwd_bck = z.p.clone();
        let mut p_sharp_fwd_bck = p_sharp.clone();
        let mut p_bck_fwd = z.p.clone();
        let mut p_sharp_bck_fwd = p_sharp.clone();
        let mut p_sharp_bck_bck = p_sharp;

        let mut rho = z.p.clone();
        let mut log_sum_weight = 0.0;
        let mut state = TreeState {
            h0,
            eps,
            n_leapfrog: 0,
            sum_metro_prob: 0.0,
            divergent: false,
        };
        let mut depth = 0;

        while depth < max_depth {
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid;
            let rho_fwd;
            let rho_bck;
            if rng.random::<f64>() > 0.5 {
                rho_bck = rho.clone();
                p_bck_fwd.clone_from(&p_fwd_bck);
                p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
                let (ok, edges) = self.build_tree(
                    depth,
                    &mut z_fwd,
                    &mut z_propose,
                    1.0,
                    &mut lsw_subtree,
                    &mut state,
                    rng,
                );
                valid = ok;
                p_fwd_bck = edges.p_beg;
                p_sharp_fwd_bck = edges.p_sharp_beg;
                p_sharp_fwd_fwd = edges.p_sharp_end;
                rho_fwd = edges.rho;
            } else {
                rho_fwd = rho.clone();
                p_fwd_bck.clone_from(&p_bck_fwd);
                p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
                let (ok, edges) = self.build_tree(
                    depth,
                    &mut z_bck,
                    &mut z_propose,
                    -1.0,
                    &mut lsw_subtree,
                    &mut state,
                    rng,
                );
                valid = ok;
                p_bck_fwd = edges.p_beg;
                p_sharp_bck_fwd = edges.p_sharp_beg;
                p_sharp_bck_bck = edges.p_sharp_end;
                rho_bck = edges.rho;
            }
            if !valid {
                break;
            }
            depth += 1;

            if lsw_subtree > log_sum_weight {
                z_sample.clone_from(&z_propose);
            } else {
                let accept = (lsw_subtree - log_sum_weight).exp();
                if rng.random::<f64>() < accept {
                    z_sample.clone_from(&z_propose);
                }
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

            rho = add(&rho_bck, &rho_fwd);
            let mut persist = no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let rho_ext = add(&rho_bck, &p_fwd_bck);
            persist &= no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
            let rho_ext = add(&rho_fwd, &p_bck_fwd);
            persist &= no_u_turn(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
            if !persist {
                break;
            }
        }

        let stats = TransitionStats {
            accept_stat: if state.n_leapfrog > 0 {
                state.sum_metro_prob / state.n_leapfrog as f64
            } else {
                0.0
            },
            depth,
            n_leapfrog: state.n_leapfrog,
            divergent: state.divergent,
            energy: self.energy(&z_sample),
        };
        (z_sample, stats)
    }

    /// Doubles or halves `eps` until a single leapfrog step crosses 0.8 acceptance.
    pub fn find_reasonable_step_size(
        &self,
        z: &PhasePoint,
        mut eps: f64,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        let threshold = 0.8f64.ln();
        let trial = |eps: f64, rng: &mut ChaCha8Rng| {
            let mut w = z.clone();
            self.sample_momentum(&mut w, rng);
            let h0 = self.energy(&w);
            self.leapfrog(&mut w, eps);
            h0 - self.energy(&w)
        };
        let delta = trial(eps, rng);
        let direction = if delta > threshold { 1 } else { -1 };
        for _ in 0..100 {
            let delta = trial(eps, rng);
            if direction == 1 && !(delta > threshold) {
                break;
            }
            if direction == -1 && !(delta < threshold) {
                break;
            }
            eps = if direction == 1 { 2.0 * eps } else { 0.5 * eps };
            if !(1e-10..=1e7).contains(&eps) {
                eps = eps.clamp(1e-10, 1e7);
                break;
            }
        }
        eps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    struct IsoGauss(usize);

    impl LogDensity for IsoGauss {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density_and_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi = -xi;
            }
            -0.5 * x.iter().map(|v| v * v).sum::<f64>()
        }
    }

    #[test]
    fn leapfrog_energy_error_is_second_order() {
        let target = IsoGauss(3);
        let inv_mass = vec![1.0, 0.5, 2.0];
        let ham = Hamiltonian { target: &target, inv_mass: &inv_mass };
        let start = {
            let mut z = PhasePoint::new(&target, vec![0.7, -1.2, 0.4]);
            z.p = vec![0.3, 0.9, -1.1];
            z
        };
        // Integrate to a fixed time 1.0 and record the energy error.
        let errors: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&eps| {
                let mut z = start.clone();
                let steps = (1.0f64 / eps).round() as usize;
                for _ in 0..steps {
                    ham.leapfrog(&mut z, eps);
                }
                (ham.energy(&z) - ham.energy(&start)).abs()
            })
            .collect();
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.9, "observed order {order}, errors {errors:?}");
        }
    }

    #[test]
    fn leapfrog_budget_bounded_by_depth() {
        let target = IsoGauss(2);
        let inv_mass = vec![1.0; 2];
        let ham = Hamiltonian { target: &target, inv_mass: &inv_mass };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = PhasePoint::new(&target, vec![0.1, -0.2]);
        // A tiny step never U-turns, so the tree grows to max depth.
        for max_depth in [1, 3, 6] {
            let (_, stats) = ham.transition(&z, 1e-4, max_depth, &mut rng);
            assert!(stats.n_leapfrog <= 1 << max_depth);
            assert_eq!(stats.depth, max_depth);
        }
    }

    #[test]
    fn divergence_flagged_for_huge_step() {
        let target = IsoGauss(2);
        let inv_mass = vec![1.0; 2];
        let ham = Hamiltonian { target: &target, inv_mass: &inv_mass };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = PhasePoint::new(&target, vec![1.0, 1.0]);
        let (_, stats) = ham.transition(&z, 200.0, 10, &mut rng);
        assert!(stats.divergent);
    }
}
