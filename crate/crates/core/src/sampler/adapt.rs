//! Warmup adaptation: dual-averaging step size and windowed diagonal mass matrix.

/// Dual averaging of log step size toward a target acceptance statistic.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(target: f64, step_size: f64) -> Self {
        let mut da = DualAveraging {
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            mu: 0.0,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        };
        da.restart(step_size);
        da
    }

    pub fn restart(&mut self, step_size: f64) {
        self.mu = (10.0 * step_size).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Returns the next step size given the latest acceptance statistic.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let stat = if accept_stat.is_finite() { accept_stat.min(1.0) } else { 0.0 };
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// Averaged step size used after warmup.
    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone)]
pub struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Welford {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Sample variance shrunk toward 1e-3 as in the standard windowed scheme.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }

    pub fn restart(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|m| *m = 0.0);
        self.m2.iter_mut().for_each(|m| *m = 0.0);
    }
}

/// Warmup phases: initial fast buffer, expanding slow windows, terminal fast buffer.
#[derive(Debug, Clone)]
pub struct WindowSchedule {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
}

impl WindowSchedule {
    pub const BASE_WINDOW: usize = 25;

    pub fn new(warmup: usize) -> Self {
        let init_buffer = (0.15 * warmup as f64) as usize;
        let term_buffer = (0.1 * warmup as f64) as usize;
        let mut window_size = Self::BASE_WINDOW;
        if init_buffer + term_buffer + window_size > warmup {
            window_size = warmup.saturating_sub(init_buffer + term_buffer);
        }
        WindowSchedule {
            warmup,
            init_buffer,
            term_buffer,
            window_size,
            next_window: (init_buffer + window_size).saturating_sub(1),
            counter: 0,
        }
    }

    fn last_slow_iteration(&self) -> usize {
        (self.warmup - self.term_buffer).saturating_sub(1)
    }

    /// Whether the current warmup iteration feeds the variance estimator.
    pub fn in_slow_window(&self) -> bool {
        self.window_size > 0
            && self.counter >= self.init_buffer
            && self.counter < self.warmup - self.term_buffer
    }

    fn ends_window(&self) -> bool {
        self.window_size > 0 && self.counter == self.next_window && self.counter != self.warmup
    }

    fn compute_next_window(&mut self) {
        if self.next_window == self.last_slow_iteration() {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != self.last_slow_iteration() {
            let boundary = self.next_window + 2 * self.window_size;
            if boundary >= self.warmup - self.term_buffer {
                self.next_window = self.last_slow_iteration();
            }
        }
    }

    /// Advances one iteration; true when a slow window just closed.
    pub fn step(&mut self) -> bool {
        let closed = self.ends_window();
        if closed {
            self.compute_next_window();
        }
        self.counter += 1;
        closed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_ends_for_default_warmup() {
        let mut w = WindowSchedule::new(500);
        let mut ends = Vec::new();
        let mut slow = 0;
        for i in 0..500 {
            if w.in_slow_window() {
                slow += 1;
            }
            if w.step() {
                ends.push(i);
            }
        }
        // 75 fast, windows of 25, 50, 100 and a stretched final window, 50 fast.
        assert_eq!(ends, vec![99, 149, 249, 449]);
        assert_eq!(slow, 375);
    }

    #[test]
    fn short_warmup_still_schedules() {
        let mut w = WindowSchedule::new(40);
        let ends: Vec<usize> = (0..40).filter(|_| w.step()).collect();
        assert_eq!(ends, vec![30, 35]);
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 0.5];
        let mut w = Welford::new(1);
        for x in xs {
            w.add(&[x]);
        }
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        let reg = w.regularized_variance()[0];
        assert!((reg - (5.0 / 10.0 * var + 1e-3 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn dual_averaging_moves_toward_target() {
        let mut da = DualAveraging::new(0.8, 1.0);
        // Persistently low acceptance must shrink the step.
        let mut eps = 1.0;
        for _ in 0..50 {
            eps = da.update(0.2);
        }
        assert!(eps < 1.0);
        let mut da = DualAveraging::new(0.8, 1.0);
        for _ in 0..50 {
            eps = da.update(1.0);
        }
        assert!(eps > 1.0);
    }
}
