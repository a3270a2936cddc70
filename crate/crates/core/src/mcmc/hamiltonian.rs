//! Leapfrog integration and the adaptive warmup loop shared by the
//! gradient-based samplers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::adapt::{DualAveraging, WelfordCov, WindowSchedule, Welford};
use super::{ChainOutput, ChainStats, SamplerConfig, Target};
use crate::error::{Error, Result};

/// Energy error beyond which a trajectory is flagged divergent.
pub const MAX_ENERGY_ERROR: f64 = 1000.0;

#[derive(Debug, Clone)]
pub struct Point {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl Point {
    pub fn hamiltonian(&self, inv_metric: &[f64]) -> f64 {
        let h = -self.logp + kinetic(&self.p, inv_metric);
        if h.is_finite() {
            h
        } else {
            f64::INFINITY
        }
    }

    pub fn p_sharp(&self, inv_metric: &[f64]) -> Vec<f64> {
        self.p.iter().zip(inv_metric).map(|(p, m)| p * m).collect()
    }
}

pub fn kinetic(p: &[f64], inv_metric: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
}

pub fn draw_momentum(rng: &mut ChaCha8Rng, inv_metric: &[f64]) -> Vec<f64> {
    inv_metric
        .iter()
        .map(|m| {
            let z: f64 = rng.sample(StandardNormal);
            z / m.sqrt()
        })
        .collect()
}

/// One leapfrog step; a negative `eps` integrates backward.
pub fn leapfrog(target: &dyn Target, from: &Point, eps: f64, inv_metric: &[f64]) -> Point {
    let dim = from.q.len();
    let mut p: Vec<f64> = (0..dim).map(|i| from.p[i] + 0.5 * eps * from.grad[i]).collect();
    let q: Vec<f64> = (0..dim).map(|i| from.q[i] + eps * inv_metric[i] * p[i]).collect();
    let mut grad = vec![0.0; dim];
    let logp = target.log_density_grad(&q, &mut grad);
    for i in 0..dim {
        p[i] += 0.5 * eps * grad[i];
    }
    Point { q, p, grad, logp }
}

/// Position, gradient and log density of the current chain state.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub q: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl ChainState {
    pub fn at(target: &dyn Target, q: Vec<f64>) -> Result<Self> {
        let mut grad = vec![0.0; q.len()];
        let logp = target.log_density_grad(&q, &mut grad);
        if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Sampler(format!("log density or gradient is not finite at the initial point (log density {logp})")));
        }
        Ok(Self { q, grad, logp })
    }

    pub fn with_momentum(&self, p: Vec<f64>) -> Point {
        Point {
            q: self.q.clone(),
            p,
            grad: self.grad.clone(),
            logp: self.logp,
        }
    }
}

/// Outcome of one transition.
#[derive(Debug, Clone)]
pub struct TransitionInfo {
    pub state: ChainState,
    pub accept_stat: f64,
    pub divergent: bool,
    pub n_leapfrog: usize,
    pub depth: usize,
}

pub trait Transition {
    fn transition(
        &self,
        target: &dyn Target,
        current: &ChainState,
        eps: f64,
        inv_metric: &[f64],
        cfg: &SamplerConfig,
        rng: &mut ChaCha8Rng,
    ) -> TransitionInfo;
}

/// Doubles or halves the step size until a single leapfrog step crosses an
/// acceptance probability of 0.8.
pub fn find_reasonable_step(target: &dyn Target, state: &ChainState, eps: f64, inv_metric: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let mut eps = eps;
    let mut direction = 0.0;
    let threshold = 0.8f64.ln();
    loop {
        let start = state.with_momentum(draw_momentum(rng, inv_metric));
        let h0 = start.hamiltonian(inv_metric);
        let next = leapfrog(target, &start, eps, inv_metric);
        let delta = h0 - next.hamiltonian(inv_metric);
        let dir = if delta > threshold { 1.0 } else { -1.0 };
        if direction == 0.0 {
            direction = dir;
        } else if dir != direction {
            break;
        }
        eps = if direction > 0.0 { eps * 2.0 } else { eps * 0.5 };
        if !(1e-12..=1e7).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-12, 1e7)
}

/// Negative Hessian by central differences of a gradient, symmetrized.
pub fn numeric_precision(q: &[f64], gradient: impl Fn(&[f64], &mut [f64])) -> DMatrix<f64> {
    let dim = q.len();
    let mut h = DMatrix::zeros(dim, dim);
    let (mut gp, mut gm) = (vec![0.0; dim], vec![0.0; dim]);
    let mut x = q.to_vec();
    for j in 0..dim {
        let step = 1e-5 * q[j].abs().max(1.0);
        x[j] = q[j] + step;
        gradient(&x, &mut gp);
        x[j] = q[j] - step;
        gradient(&x, &mut gm);
        x[j] = q[j];
        for i in 0..dim {
            h[(i, j)] = -(gp[i] - gm[i]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Lower Cholesky factor of the covariance implied by a precision matrix
/// with eigenvalues replaced by their absolute values, floored at `floor`.
pub fn covariance_factor(precision: &DMatrix<f64>, floor: f64) -> Option<DMatrix<f64>> {
    let eig = precision.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let inv = eig.eigenvalues.map(|v| 1.0 / v.abs().max(floor));
    let cov = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    cov.cholesky().map(|c| c.l())
}

/// Newton ascent using the precision hint (absolute eigenvalues) as the
/// curvature, with backtracking on the true log density. Returns `init`
/// unchanged for targets without a hint.
pub fn ascend(target: &dyn Target, init: &[f64], max_iter: usize) -> Vec<f64> {
    let dim = init.len();
    let mut x = init.to_vec();
    let mut g = vec![0.0; dim];
    let mut lp = target.log_density_grad(&x, &mut g);
    if !lp.is_finite() {
        return x;
    }
    for _ in 0..max_iter {
        let Some(h) = target.precision_hint(&x) else {
            break;
        };
        let eig = h.symmetric_eigen();
        if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            break;
        }
        let coef = eig
            .eigenvectors
            .tr_mul(&DVector::from_column_slice(&g))
            .zip_map(&eig.eigenvalues, |c, l| c / l.abs().max(PRECISION_FLOOR));
        let step = &eig.eigenvectors * coef;
        let mut t = 1.0;
        let mut gain = 0.0;
        let mut gc = vec![0.0; dim];
        for _ in 0..30 {
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let lc = target.log_density_grad(&cand, &mut gc);
            if lc.is_finite() && lc > lp {
                gain = lc - lp;
                x = cand;
                g.copy_from_slice(&gc);
                lp = lc;
                break;
            }
            t *= 0.5;
        }
        if gain <= 1e-9 * lp.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Smallest precision eigenvalue kept when seeding a dense metric.
pub const PRECISION_FLOOR: f64 = 1.0;

/// The target seen through `q = L z`; `None` is the identity.
struct Whitened<'a> {
    inner: &'a dyn Target,
    chol: Option<&'a DMatrix<f64>>,
}

impl Whitened<'_> {
    fn position(&self, z: &[f64]) -> Vec<f64> {
        match self.chol {
            Some(l) => (l * DVector::from_column_slice(z)).as_slice().to_vec(),
            None => z.to_vec(),
        }
    }
}

impl Target for Whitened<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let Some(l) = self.chol else {
            return self.inner.log_density_grad(z, grad);
        };
        let q = self.position(z);
        let mut gq = vec![0.0; q.len()];
        let logp = self.inner.log_density_grad(&q, &mut gq);
        let gz = l.tr_mul(&DVector::from_column_slice(&gq));
        grad.copy_from_slice(gz.as_slice());
        logp
    }
}

/// Runs warmup with step-size and metric adaptation, then sampling.
pub fn run_adaptive(
    kernel: &dyn Transition,
    target: &dyn Target,
    init: &[f64],
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let warmup = cfg.warmup_iterations();
    let total = cfg.iterations;
    let dense = cfg.metric == "dense";
    let mut chol: Option<DMatrix<f64>> = None;
    if dense {
        chol = target.precision_hint(init).and_then(|h| covariance_factor(&h, PRECISION_FLOOR));
    }
    let start = match &chol {
        Some(l) => l.solve_lower_triangular(&DVector::from_column_slice(init)).map(|z| z.as_slice().to_vec()),
        None => None,
    };
    if start.is_none() {
        chol = None;
    }
    let mut state = ChainState::at(&Whitened { inner: target, chol: chol.as_ref() }, start.unwrap_or_else(|| init.to_vec()))?;
    let mut inv_metric = vec![1.0; dim];
    let mut reported = match &chol {
        Some(l) => (l * l.transpose()).diagonal().as_slice().to_vec(),
        None => vec![1.0; dim],
    };
    let mut eps = find_reasonable_step(&Whitened { inner: target, chol: chol.as_ref() }, &state, 1.0, &inv_metric, rng);
    let mut da = DualAveraging::new(eps, cfg.target_accept);
    let mut schedule = WindowSchedule::new(warmup);
    let mut welford = Welford::new(if dense { 0 } else { dim });
    let mut welford_cov = WelfordCov::new(if dense { dim } else { 0 });

    let mut draws = Vec::with_capacity(total - warmup);
    let mut stats = ChainStats::default();
    let mut accept_sum = 0.0;
    let mut depth_sum = 0usize;
    for i in 0..total {
        let space = Whitened { inner: target, chol: chol.as_ref() };
        let info = kernel.transition(&space, &state, eps, &inv_metric, cfg, rng);
        stats.grad_evals += info.n_leapfrog;
        state = info.state;
        let q = space.position(&state.q);
        if i < warmup {
            eps = da.update(info.accept_stat);
            if schedule.in_slow_window(i) {
                if dense {
                    welford_cov.add(&q);
                } else {
                    welford.add(&q);
                }
            }
            if schedule.end_of_window(i) {
                if dense {
                    let cov = match &chol {
                        Some(l) => welford_cov.blended_covariance(&(l * l.transpose())),
                        None => welford_cov.regularized_covariance(),
                    };
                    welford_cov.reset();
                    reported = cov.diagonal().as_slice().to_vec();
                    if let Some(c) = cov.cholesky() {
                        let l = c.l();
                        let z = l.solve_lower_triangular(&DVector::from_column_slice(&q)).map(|z| z.as_slice().to_vec());
                        if let Some(z) = z {
                            chol = Some(l);
                            state = ChainState::at(&Whitened { inner: target, chol: chol.as_ref() }, z)?;
                        }
                    }
                } else {
                    inv_metric = welford.regularized_variance();
                    reported = inv_metric.clone();
                    welford.reset();
                }
                let space = Whitened { inner: target, chol: chol.as_ref() };
                eps = find_reasonable_step(&space, &state, eps, &inv_metric, rng);
                da.restart(eps);
            }
            if i + 1 == warmup {
                eps = da.final_step_size();
            }
        } else {
            accept_sum += info.accept_stat;
            depth_sum += info.depth;
            stats.divergences += info.divergent as usize;
            stats.max_depth_hits += (info.depth >= cfg.max_tree_depth) as usize;
            draws.push(q);
        }
    }
    let kept = draws.len().max(1) as f64;
    stats.step_size = eps;
    stats.accept_mean = accept_sum / kept;
    stats.mean_depth = depth_sum as f64 / kept;
    stats.inv_metric = reported;
    Ok(ChainOutput { draws, stats })
}
