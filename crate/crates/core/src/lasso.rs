//! Lasso with offsets and an unpenalized intercept, fitted by penalized
//! IRLS with coordinate descent over a log-spaced lambda path, plus K-fold
//! cross-validation and the two-pass variable screen.
//!
//! Objective: `NLL(b0, beta) + lambda * |beta|_1`, where the Poisson NLL is
//! `sum(mu - d * eta)` and the Gaussian NLL is `sum((y - eta)^2) / 2`.
//! Columns are not standardized.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{SlopeChangeDesign, VariableKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LassoFamily {
    #[default]
    Poisson,
    Gaussian,
}

impl LassoFamily {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "poisson" => Ok(Self::Poisson),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(Error::UnknownStrategy {
                kind: "lasso family",
                name: other.to_string(),
                available: "poisson, gaussian".into(),
            }),
        }
    }

    fn mean(&self, eta: f64) -> f64 {
        match self {
            Self::Poisson => eta.exp(),
            Self::Gaussian => eta,
        }
    }

    fn nll(&self, y: f64, eta: f64) -> f64 {
        match self {
            Self::Poisson => eta.exp() - y * eta,
            Self::Gaussian => 0.5 * (y - eta).powi(2),
        }
    }

    /// Unit deviance of one observation.
    pub fn deviance(&self, y: f64, mu: f64) -> f64 {
        match self {
            Self::Poisson => {
                let t = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
                2.0 * (t - (y - mu))
            }
            Self::Gaussian => (y - mu).powi(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LassoConfig {
    pub family: LassoFamily,
    pub folds: usize,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    /// Convergence threshold on the largest coefficient change, measured on
    /// the weighted-standardized scale `sqrt(sum w x_j^2) * |delta beta_j|`.
    pub tolerance: f64,
    pub max_irls: usize,
    pub max_passes: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            family: LassoFamily::Poisson,
            folds: 10,
            n_lambda: 100,
            lambda_min_ratio: 1e-4,
            tolerance: 1e-7,
            max_irls: 100,
            max_passes: 100_000,
        }
    }
}

/// Data for one lasso problem.
pub struct LassoProblem<'a> {
    pub columns: Vec<&'a [f64]>,
    pub y: Vec<f64>,
    pub offset: Vec<f64>,
    pub family: LassoFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub converged: bool,
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

impl<'a> LassoProblem<'a> {
    pub fn new(columns: Vec<&'a [f64]>, y: Vec<f64>, offset: Vec<f64>, family: LassoFamily) -> Result<Self> {
        let n = y.len();
        if offset.len() != n || columns.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("lasso columns, response and offsets differ in length".into()));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("lasso needs at least one observation".into()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite() || (family == LassoFamily::Poisson && *v < 0.0)) {
            return Err(Error::NonFinite {
                index: i,
                what: "lasso response".into(),
            });
        }
        Ok(Self { columns, y, offset, family })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    pub fn linear_predictor(&self, fit: &LassoFit) -> Vec<f64> {
        let mut eta: Vec<f64> = self.offset.iter().map(|o| o + fit.intercept).collect();
        for (col, &b) in self.columns.iter().zip(&fit.beta) {
            if b != 0.0 {
                for (e, x) in eta.iter_mut().zip(col.iter()) {
                    *e += b * x;
                }
            }
        }
        eta
    }

    pub fn null_fit(&self) -> LassoFit {
        let intercept = match self.family {
            LassoFamily::Poisson => {
                let d: f64 = self.y.iter().sum();
                let e: f64 = self.offset.iter().map(|o| o.exp()).sum();
                if d > 0.0 {
                    (d / e).ln()
                } else {
                    -30.0
                }
            }
            LassoFamily::Gaussian => self.y.iter().zip(&self.offset).map(|(y, o)| y - o).sum::<f64>() / self.n_obs() as f64,
        };
        LassoFit {
            intercept,
            beta: vec![0.0; self.n_vars()],
            converged: true,
        }
    }

    /// Gradient of the NLL with respect to each coefficient, and the
    /// IRLS weights, at `fit`.
    pub fn gradient(&self, fit: &LassoFit) -> (Vec<f64>, Vec<f64>) {
        let eta = self.linear_predictor(fit);
        let mu: Vec<f64> = eta.iter().map(|&e| self.family.mean(e)).collect();
        let resid: Vec<f64> = mu.iter().zip(&self.y).map(|(m, y)| m - y).collect();
        let grad = self.columns.iter().map(|c| c.iter().zip(&resid).map(|(x, r)| x * r).sum()).collect();
        let w = match self.family {
            LassoFamily::Poisson => mu,
            LassoFamily::Gaussian => vec![1.0; self.n_obs()],
        };
        (grad, w)
    }

    /// Smallest lambda at which every penalized coefficient is zero.
    pub fn lambda_max(&self) -> f64 {
        let (g, _) = self.gradient(&self.null_fit());
        g.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn objective(&self, fit: &LassoFit, lambda: f64) -> f64 {
        let eta = self.linear_predictor(fit);
        let nll: f64 = eta.iter().zip(&self.y).map(|(&e, &y)| self.family.nll(y, e)).sum();
        nll + lambda * fit.beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    pub fn nll(&self, fit: &LassoFit) -> f64 {
        self.objective(fit, 0.0)
    }

    /// Largest KKT violation on the weighted-standardized gradient scale:
    /// `|g_j| <= lambda` for zero coefficients, `g_j = -lambda sign(beta_j)`
    /// otherwise, and a zero intercept gradient.
    pub fn kkt_violation(&self, fit: &LassoFit, lambda: f64) -> f64 {
        let (g, w) = self.gradient(fit);
        let sw: f64 = w.iter().sum();
        let eta = self.linear_predictor(fit);
        let g0: f64 = eta.iter().zip(&self.y).map(|(&e, y)| self.family.mean(e) - y).sum();
        let mut worst = g0.abs() / sw.sqrt();
        for (j, col) in self.columns.iter().enumerate() {
            let norm = col.iter().zip(&w).map(|(x, w)| w * x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let v = if fit.beta[j] == 0.0 {
                (g[j].abs() - lambda).max(0.0)
            } else {
                (g[j] + lambda * fit.beta[j].signum()).abs()
            };
            worst = worst.max(v / norm);
        }
        worst
    }

    /// Exact minimizer of the weighted quadratic subproblem over the current
    /// nonzero coefficients with their signs held, stepping only as far as
    /// the first sign change (that coefficient is set to zero and the solve
    /// repeated). Leaves the state unchanged when the system is singular.
    fn newton_polish(&self, w: &[f64], lambda: f64, b0: &mut f64, beta: &mut [f64], res: &mut [f64]) {
        let n = self.n_obs();
        for _ in 0..=beta.len() {
            let active: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
            let m = active.len() + 1;
            let col = |k: usize, i: usize| if k == 0 { 1.0 } else { self.columns[active[k - 1]][i] };
            let mut h = DMatrix::<f64>::zeros(m, m);
            let mut g = DVector::<f64>::zeros(m);
            for a in 0..m {
                g[a] = (0..n).map(|i| w[i] * col(a, i) * res[i]).sum::<f64>();
                if a > 0 {
                    g[a] -= lambda * beta[active[a - 1]].signum();
                }
                for b in 0..=a {
                    let v: f64 = (0..n).map(|i| w[i] * col(a, i) * col(b, i)).sum();
                    h[(a, b)] = v;
                    h[(b, a)] = v;
                }
            }
            let ridge = 1e-12 * (0..m).map(|a| h[(a, a)]).fold(0.0, f64::max);
            for a in 0..m {
                h[(a, a)] += ridge;
            }
            let Some(chol) = h.cholesky() else {
                return;
            };
            let delta = chol.solve(&g);
            if delta.iter().any(|d| !d.is_finite()) {
                return;
            }
            let mut t = 1.0;
            let mut blocked = None;
            for (k, &j) in active.iter().enumerate() {
                let next = beta[j] + delta[k + 1];
                if next.signum() != beta[j].signum() {
                    let tk = beta[j] / (beta[j] - next);
                    if tk < t {
                        t = tk;
                        blocked = Some(j);
                    }
                }
            }
            *b0 += t * delta[0];
            for (k, &j) in active.iter().enumerate() {
                beta[j] += t * delta[k + 1];
            }
            for (i, r) in res.iter_mut().enumerate() {
                *r -= t * (0..m).map(|k| delta[k] * col(k, i)).sum::<f64>();
            }
            match blocked {
                Some(j) => {
                    let c = self.columns[j];
                    for i in 0..n {
                        res[i] += beta[j] * c[i];
                    }
                    beta[j] = 0.0;
                }
                None => return,
            }
        }
    }

    /// Fits at one lambda from a warm start.
    pub fn fit(&self, lambda: f64, start: &LassoFit, cfg: &LassoConfig) -> LassoFit {
        let n = self.n_obs();
        let p = self.n_vars();
        let mut fit = start.clone();
        fit.converged = false;
        let mut obj = self.objective(&fit, lambda);
        if !obj.is_finite() {
            fit = self.null_fit();
            obj = self.objective(&fit, lambda);
        }
        let mut passes = 0;
        for _ in 0..cfg.max_irls {
            let eta = self.linear_predictor(&fit);
            let (w, mut res): (Vec<f64>, Vec<f64>) = match self.family {
                LassoFamily::Poisson => eta
                    .iter()
                    .zip(&self.y)
                    .map(|(&e, &y)| {
                        let mu = e.exp().max(1e-300);
                        (mu, (y - mu) / mu)
                    })
                    .unzip(),
                LassoFamily::Gaussian => eta.iter().zip(&self.y).map(|(&e, &y)| (1.0, y - e)).unzip(),
            };
            let sw: f64 = w.iter().sum();
            let xw2: Vec<f64> = self.columns.iter().map(|c| c.iter().zip(&w).map(|(x, w)| w * x * x).sum()).collect();
            let mut b0 = fit.intercept;
            let mut beta = fit.beta.clone();

            let update = |j: usize, beta: &mut [f64], res: &mut [f64]| -> f64 {
                if xw2[j] <= 0.0 {
                    return 0.0;
                }
                let col = self.columns[j];
                let old = beta[j];
                let g: f64 = col.iter().zip(w.iter().zip(res.iter())).map(|(x, (w, r))| x * w * r).sum::<f64>() + xw2[j] * old;
                let new = soft_threshold(g, lambda) / xw2[j];
                if new != old {
                    let d = new - old;
                    for i in 0..n {
                        res[i] -= d * col[i];
                    }
                    beta[j] = new;
                }
                xw2[j].sqrt() * (new - old).abs()
            };
            let center = |b0: &mut f64, res: &mut [f64]| -> f64 {
                let d = w.iter().zip(res.iter()).map(|(w, r)| w * r).sum::<f64>() / sw;
                *b0 += d;
                res.iter_mut().for_each(|r| *r -= d);
                sw.sqrt() * d.abs()
            };

            // full sweeps settle the active set; a Newton step on the active
            // set then solves the sign-fixed quadratic exactly
            let mut sweeps_since_newton = 0;
            loop {
                let mut change = center(&mut b0, &mut res);
                for j in 0..p {
                    change = change.max(update(j, &mut beta, &mut res));
                }
                passes += 1;
                sweeps_since_newton += 1;
                if change < cfg.tolerance || passes >= cfg.max_passes {
                    break;
                }
                if sweeps_since_newton >= 3 {
                    self.newton_polish(&w, lambda, &mut b0, &mut beta, &mut res);
                    sweeps_since_newton = 0;
                }
            }

            // step halving guards the IRLS step
            let mut candidate = LassoFit {
                intercept: b0,
                beta,
                converged: false,
            };
            let mut new_obj = self.objective(&candidate, lambda);
            let mut halvings = 0;
            while !(new_obj <= obj + 1e-12 * obj.abs().max(1.0)) && halvings < 30 {
                candidate.intercept = 0.5 * (candidate.intercept + fit.intercept);
                for j in 0..p {
                    candidate.beta[j] = 0.5 * (candidate.beta[j] + fit.beta[j]);
                }
                new_obj = self.objective(&candidate, lambda);
                halvings += 1;
            }
            if !new_obj.is_finite() {
                return fit;
            }
            let step = ((candidate.intercept - fit.intercept).abs() * sw.sqrt()).max(
                (0..p)
                    .map(|j| xw2[j].sqrt() * (candidate.beta[j] - fit.beta[j]).abs())
                    .fold(0.0, f64::max),
            );
            fit = candidate;
            obj = new_obj;
            if self.family == LassoFamily::Gaussian || step < cfg.tolerance {
                fit.converged = passes < cfg.max_passes;
                return fit;
            }
            if passes >= cfg.max_passes {
                return fit;
            }
        }
        fit
    }
}

/// `n` log-spaced values from `lambda_max` down to `lambda_max * ratio`.
pub fn lambda_grid(lambda_max: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lambda_max];
    }
    let (hi, lo) = (lambda_max.ln(), (lambda_max * ratio).ln());
    (0..n).map(|i| (hi + (lo - hi) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Fits every lambda of `grid` with warm starts.
pub fn solve_path(problem: &LassoProblem<'_>, grid: &[f64], cfg: &LassoConfig) -> Vec<LassoFit> {
    let mut current = problem.null_fit();
    grid.iter()
        .map(|&lambda| {
            let fit = problem.fit(lambda, &current, cfg);
            if fit.converged {
                current = fit.clone();
            }
            fit
        })
        .collect()
}

/// Fold of each observation: shuffled, then cut into contiguous blocks.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos * k / n;
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoPath {
    pub names: Vec<String>,
    pub lambdas: Vec<f64>,
    pub intercepts: Vec<f64>,
    /// One row per lambda.
    pub coefficients: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
    pub cv_mean: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub index_min: usize,
    pub lambda_min: f64,
    /// Variables with a nonzero coefficient at `lambda_min`.
    pub selected: Vec<String>,
}

impl LassoPath {
    pub fn fit_at(&self, index: usize) -> LassoFit {
        LassoFit {
            intercept: self.intercepts[index],
            beta: self.coefficients[index].clone(),
            converged: self.converged[index],
        }
    }

    pub fn coefficient_at_min(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|j| self.coefficients[self.index_min][j])
    }
}

/// Lambda path on all data with K-fold cross-validated deviance.
pub fn fit_path(design: &SlopeChangeDesign, y: &[f64], offset: &[f64], cfg: &LassoConfig, seed: u64) -> Result<LassoPath> {
    let n = design.n_rows();
    if cfg.folds < 2 {
        return Err(Error::InvalidArgument(format!("cross-validation needs at least 2 folds, got {}", cfg.folds)));
    }
    if cfg.folds > n {
        return Err(Error::InvalidArgument(format!("{} folds for {n} observations", cfg.folds)));
    }
    let names = design.names();
    let problem = LassoProblem::new((0..design.n_cols()).map(|j| design.column(j)).collect(), y.to_vec(), offset.to_vec(), cfg.family)?;
    let lambda_max = problem.lambda_max();
    if design.n_cols() == 0 || !(lambda_max > 1e-12) {
        let null = problem.null_fit();
        return Ok(LassoPath {
            names,
            lambdas: vec![lambda_max],
            intercepts: vec![null.intercept],
            coefficients: vec![null.beta],
            converged: vec![true],
            cv_mean: vec![f64::NAN],
            cv_se: vec![f64::NAN],
            index_min: 0,
            lambda_min: lambda_max,
            selected: Vec::new(),
        });
    }
    let grid = lambda_grid(lambda_max, cfg.n_lambda, cfg.lambda_min_ratio);
    let folds = fold_assignment(n, cfg.folds, seed);

    let (full, fold_dev): (Vec<LassoFit>, Vec<Vec<f64>>) = rayon::join(
        || solve_path(&problem, &grid, cfg),
        || {
            (0..cfg.folds)
                .into_par_iter()
                .map(|f| {
                    let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
                    let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
                    let cols: Vec<Vec<f64>> = (0..design.n_cols()).map(|j| design.column(j)).map(|c| train.iter().map(|&i| c[i]).collect()).collect();
                    let sub = LassoProblem {
                        columns: cols.iter().map(|c| c.as_slice()).collect(),
                        y: train.iter().map(|&i| y[i]).collect(),
                        offset: train.iter().map(|&i| offset[i]).collect(),
                        family: cfg.family,
                    };
                    let held_cols: Vec<Vec<f64>> = (0..design.n_cols()).map(|j| design.column(j)).map(|c| test.iter().map(|&i| c[i]).collect()).collect();
                    let held = LassoProblem {
                        columns: held_cols.iter().map(|c| c.as_slice()).collect(),
                        y: test.iter().map(|&i| y[i]).collect(),
                        offset: test.iter().map(|&i| offset[i]).collect(),
                        family: cfg.family,
                    };
                    solve_path(&sub, &grid, cfg)
                        .iter()
                        .map(|fit| {
                            if !fit.converged {
                                return f64::NAN;
                            }
                            let eta = held.linear_predictor(fit);
                            let dev: f64 = eta.iter().zip(&held.y).map(|(&e, &y)| cfg.family.deviance(y, cfg.family.mean(e))).sum();
                            dev / test.len() as f64
                        })
                        .collect()
                })
                .collect()
        },
    );

    let k = cfg.folds as f64;
    let mut cv_mean = Vec::with_capacity(grid.len());
    let mut cv_se = Vec::with_capacity(grid.len());
    for l in 0..grid.len() {
        let vals: Vec<f64> = fold_dev.iter().map(|d| d[l]).collect();
        if vals.iter().any(|v| !v.is_finite()) || !full[l].converged {
            cv_mean.push(f64::NAN);
            cv_se.push(f64::NAN);
            continue;
        }
        let m = vals.iter().sum::<f64>() / k;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0);
        cv_mean.push(m);
        cv_se.push((var / k).sqrt());
    }
    let index_min = cv_mean
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Lasso("no lambda on the path converged in every fold".into()))?;
    let selected = names
        .iter()
        .zip(&full[index_min].beta)
        .filter(|(_, b)| **b != 0.0)
        .map(|(n, _)| n.clone())
        .collect();
    Ok(LassoPath {
        names,
        lambdas: grid.clone(),
        intercepts: full.iter().map(|f| f.intercept).collect(),
        coefficients: full.iter().map(|f| f.beta.clone()).collect(),
        converged: full.iter().map(|f| f.converged).collect(),
        cv_mean,
        cv_se,
        index_min,
        lambda_min: grid[index_min],
        selected,
    })
}

/// One variable's fate in the screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenRow {
    pub variable: String,
    pub pass: usize,
    pub coefficient: f64,
    pub kept: bool,
}

#[derive(Debug, Clone)]
pub struct ScreenResult {
    pub design: SlopeChangeDesign,
    pub report: Vec<ScreenRow>,
    pub passes: Vec<LassoPath>,
}

impl ScreenResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.report {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn survivors(&self) -> Vec<String> {
        self.design.names()
    }
}

/// Two-pass screen: age and period columns first, then the survivors with
/// every cohort column. Difference constants are never screened.
pub fn screen(design: &SlopeChangeDesign, y: &[f64], offset: &[f64], cfg: &LassoConfig, seed: u64) -> Result<ScreenResult> {
    let always: Vec<String> = design
        .columns
        .iter()
        .filter(|c| c.kind == VariableKind::DiffConstant)
        .map(|c| c.name.clone())
        .collect();
    let ap = design.select_kinds(&[VariableKind::Age, VariableKind::Period, VariableKind::Index]);
    let pass1 = fit_path(&ap, y, offset, cfg, seed)?;
    let mut report: Vec<ScreenRow> = pass1
        .names
        .iter()
        .map(|name| {
            let coefficient = pass1.coefficient_at_min(name).unwrap_or(0.0);
            ScreenRow {
                variable: name.clone(),
                pass: 1,
                coefficient,
                kept: coefficient != 0.0,
            }
        })
        .collect();

    let cohort_names: Vec<String> = design
        .columns
        .iter()
        .filter(|c| c.kind == VariableKind::Cohort)
        .map(|c| c.name.clone())
        .collect();
    let mut keep2: Vec<String> = pass1.selected.clone();
    keep2.extend(cohort_names.iter().cloned());
    let mut passes = vec![pass1];
    let final_names: Vec<String> = if cohort_names.is_empty() {
        keep2
    } else {
        let second = design.retain_names(&keep2)?;
        let pass2 = fit_path(&second, y, offset, cfg, seed.wrapping_add(1))?;
        for name in &pass2.names {
            let coefficient = pass2.coefficient_at_min(name).unwrap_or(0.0);
            report.push(ScreenRow {
                variable: name.clone(),
                pass: 2,
                coefficient,
                kept: coefficient != 0.0,
            });
        }
        let sel = pass2.selected.clone();
        passes.push(pass2);
        sel
    };
    let mut keep = final_names;
    keep.extend(always);
    Ok(ScreenResult {
        design: design.retain_names(&keep)?,
        report,
        passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Poisson, StandardNormal};

    fn problem_from(cols: &[Vec<f64>], y: Vec<f64>, family: LassoFamily) -> LassoProblem<'_> {
        let n = y.len();
        LassoProblem::new(cols.iter().map(|c| c.as_slice()).collect(), y, vec![0.0; n], family).unwrap()
    }

    #[test]
    fn orthonormal_gaussian_is_soft_threshold() {
        let n = 40;
        let p = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Gram-Schmidt against the constant and each other
        let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64).sqrt(); n]];
        for _ in 0..p {
            let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(b).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
        let cols = basis[1..].to_vec();
        let y: Vec<f64> = (0..n).map(|i| 3.0 * cols[0][i] - 0.5 * cols[2][i] + 2.0 + rng.sample::<f64, _>(StandardNormal) * 0.3).collect();
        let prob = problem_from(&cols, y.clone(), LassoFamily::Gaussian);
        let cfg = LassoConfig {
            family: LassoFamily::Gaussian,
            ..Default::default()
        };
        for lambda in [0.05, 0.4, 1.0, 2.5] {
            let fit = prob.fit(lambda, &prob.null_fit(), &cfg);
            for j in 0..p {
                let xty: f64 = cols[j].iter().zip(&y).map(|(a, b)| a * b).sum();
                assert!((fit.beta[j] - soft_threshold(xty, lambda)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn huge_lambda_gives_null_poisson_model() {
        let cols = vec![vec![0.0, 1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0, 0.0]];
        let y = vec![4.0, 2.0, 7.0, 1.0];
        let offset = vec![0.5f64.ln(), 1.0f64.ln(), 2.0f64.ln(), 1.5f64.ln()];
        let prob = LassoProblem::new(cols.iter().map(|c| c.as_slice()).collect(), y, offset, LassoFamily::Poisson).unwrap();
        let fit = prob.fit(1e6, &prob.null_fit(), &LassoConfig::default());
        assert!(fit.beta.iter().all(|b| *b == 0.0));
        assert!((fit.intercept - (14.0f64 / 5.0).ln()).abs() < 1e-9);
        let lmax = prob.lambda_max();
        let at_max = prob.fit(lmax, &prob.null_fit(), &LassoConfig::default());
        assert!(at_max.beta.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn poisson_path_satisfies_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 120;
        let cols: Vec<Vec<f64>> = (0..6).map(|_| (0..n).map(|_| rng.random::<f64>() * 2.0).collect()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| Poisson::new((1.0 + 0.8 * cols[0][i] - 0.5 * cols[3][i]).exp()).unwrap().sample(&mut rng))
            .collect();
        let prob = problem_from(&cols, y, LassoFamily::Poisson);
        let cfg = LassoConfig::default();
        let grid = lambda_grid(prob.lambda_max(), 30, 1e-4);
        for (fit, &lambda) in solve_path(&prob, &grid, &cfg).iter().zip(&grid) {
            assert!(fit.converged);
            assert!(prob.kkt_violation(fit, lambda) < 1e-4, "{lambda}");
        }
    }

    #[test]
    fn folds_are_balanced_and_reproducible() {
        let a = fold_assignment(23, 10, 3);
        assert_eq!(a, fold_assignment(23, 10, 3));
        for f in 0..10 {
            let c = a.iter().filter(|&&x| x == f).count();
            assert!((2..=3).contains(&c));
        }
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = lambda_grid(10.0, 100, 1e-4);
        assert_eq!(g.len(), 100);
        assert!((g[0] - 10.0).abs() < 1e-12);
        assert!((g[99] - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn unknown_family() {
        assert!(LassoFamily::from_name("binomial").is_err());
    }
}
