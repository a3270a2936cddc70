//! Step-size dual averaging and windowed metric adaptation.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(step_size: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * step_size).ln(),
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    pub fn restart(&mut self, step_size: f64) {
        *self = Self::new(step_size, self.target);
    }

    /// Feeds one acceptance statistic and returns the next step size.
    pub fn update(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.clamp(0.0, 1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = x_eta * x + (1.0 - x_eta) * self.x_bar;
        x.exp()
    }

    /// Step size to use after warmup.
    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Running mean and variance.
#[derive(Debug, Clone)]
pub struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Sample variance shrunk toward a small constant.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|m| {
                let var = if self.n > 1 { m / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }

    pub fn reset(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|v| *v = 0.0);
        self.m2.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Running mean and covariance.
#[derive(Debug, Clone)]
pub struct WelfordCov {
    n: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl WelfordCov {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let x = DVector::from_column_slice(x);
        let before = &x - &self.mean;
        self.mean += &before / self.n as f64;
        let after = &x - &self.mean;
        self.m2.ger(1.0, &before, &after, 1.0);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Sample covariance blended with `prior` as if it were backed by
    /// `dim` draws.
    pub fn blended_covariance(&self, prior: &DMatrix<f64>) -> DMatrix<f64> {
        let dim = self.mean.len() as f64;
        if self.n < 2 {
            return prior.clone();
        }
        let n = self.n as f64;
        let sample = &self.m2 * (1.0 / (n - 1.0));
        let sample = (&sample + sample.transpose()) * 0.5;
        sample * (n / (n + dim)) + prior * (dim / (n + dim))
    }

    /// Sample covariance shrunk toward a small multiple of the identity.
    pub fn regularized_covariance(&self) -> DMatrix<f64> {
        let dim = self.mean.len();
        let n = self.n as f64;
        let mut cov = if self.n > 1 {
            let m = &self.m2 * (1.0 / (n - 1.0));
            (&m + m.transpose()) * (0.5 * n / (n + 5.0))
        } else {
            DMatrix::zeros(dim, dim)
        };
        let ridge = if self.n > 1 { 1e-3 * 5.0 / (n + 5.0) } else { 1.0 };
        for i in 0..dim {
            cov[(i, i)] += ridge;
        }
        cov
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.mean.len());
    }
}

/// Warmup schedule: a fast initial buffer, doubling slow windows for the
/// metric, and a terminal buffer for the final step size.
#[derive(Debug, Clone)]
pub struct WindowSchedule {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_end: usize,
    window_size: usize,
    slow: bool,
}

impl WindowSchedule {
    pub fn new(warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (75, 50, 25);
        if warmup < 20 {
            return Self {
                warmup,
                init_buffer: warmup,
                term_buffer: 0,
                window_end: warmup,
                window_size: 0,
                slow: false,
            };
        }
        if init + base + term > warmup {
            init = warmup * 15 / 100;
            term = warmup / 10;
            base = warmup - init - term;
        }
        Self {
            warmup,
            init_buffer: init,
            term_buffer: term,
            window_end: init + base,
            window_size: base,
            slow: true,
        }
    }

    fn last_slow_end(&self) -> usize {
        self.warmup - self.term_buffer
    }

    /// Whether iteration `i` (0-based) feeds the metric estimate.
    pub fn in_slow_window(&self, i: usize) -> bool {
        self.slow && i >= self.init_buffer && i < self.last_slow_end()
    }

    /// Whether the metric should be updated after iteration `i`.
    pub fn end_of_window(&mut self, i: usize) -> bool {
        if self.window_size == 0 || i + 1 != self.window_end {
            return false;
        }
        let last = self.last_slow_end();
        if self.window_end >= last {
            self.window_size = 0;
            return true;
        }
        self.window_size *= 2;
        self.window_end += self.window_size;
        // a window that would leave less than a full next window is merged
        if self.window_end + 2 * self.window_size >= last {
            self.window_end = last;
        }
        true
    }
}
