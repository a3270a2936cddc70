//! Leave-one-out scoring from a pointwise log-likelihood matrix:
//! harmonic-mean importance ratios, Pareto smoothing of the upper tail,
//! and the loo = NLL + penalty decomposition.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::{sample, SamplerConfig};
use crate::model::Model;

/// Pareto shape above which an importance estimate is unreliable.
pub const K_WARN: f64 = 0.7;

fn log_sum_exp(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = x.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + x.map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn column(loglik: &[Vec<f64>], j: usize) -> Vec<f64> {
    loglik.iter().map(|row| row[j]).collect()
}

fn check_matrix(loglik: &[Vec<f64>]) -> Result<usize> {
    if loglik.len() < 2 {
        return Err(Error::InvalidArgument(format!("leave-one-out needs at least 2 draws, got {}", loglik.len())));
    }
    let n = loglik[0].len();
    if loglik.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("log-likelihood rows differ in length".into()));
    }
    if let Some((s, j)) = loglik
        .iter()
        .enumerate()
        .find_map(|(s, r)| r.iter().position(|v| !v.is_finite() && *v != f64::NEG_INFINITY).map(|j| (s, j)))
    {
        return Err(Error::NonFinite {
            index: j,
            what: format!("log-likelihood at draw {s}"),
        });
    }
    Ok(n)
}

/// Unsmoothed per-point estimate `log(1 / mean_s(1/p_s))`.
pub fn harmonic_mean_loo(loglik: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = check_matrix(loglik)?;
    let s = loglik.len() as f64;
    Ok((0..n)
        .map(|j| {
            let col = column(loglik, j);
            s.ln() - log_sum_exp(col.iter().map(|v| -v))
        })
        .collect())
}

/// Generalized Pareto fit by the profile-likelihood/quantile method with a
/// weak prior pulling the shape toward 0.5. `x` must be sorted ascending
/// and positive. Returns `(k, sigma)`.
pub fn fit_generalized_pareto(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let prior = 3.0;
    let m = 30 + (n as f64).sqrt() as usize;
    let quartile = x[((n as f64) / 4.0 + 0.5).floor() as usize - 1];
    let x_max = x[n - 1];
    let thetas: Vec<f64> = (1..=m)
        .map(|j| 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / quartile)
        .collect();
    let profile = |theta: f64| {
        let k = x.iter().map(|v| (-theta * v).ln_1p()).sum::<f64>() / n as f64;
        n as f64 * ((-theta / k).ln() - k - 1.0)
    };
    let log_lik: Vec<f64> = thetas.iter().map(|&t| profile(t)).collect();
    let valid: Vec<(f64, f64)> = thetas.iter().copied().zip(log_lik).filter(|(_, l)| l.is_finite()).collect();
    let norm = log_sum_exp(valid.iter().map(|(_, l)| *l));
    let theta_hat: f64 = valid.iter().map(|(t, l)| t * (l - norm).exp()).sum();
    let k = x.iter().map(|v| (-theta_hat * v).ln_1p()).sum::<f64>() / n as f64;
    let sigma = -k / theta_hat;
    // weakly informative shrinkage of the shape
    let k = (k * n as f64 + 0.5 * 10.0) / (n as f64 + 10.0);
    (k, sigma)
}

fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * ((-k * (-p).ln_1p()).exp_m1()) / k
    }
}

/// Number of tail draws replaced by smoothing.
pub fn tail_length(n_draws: usize) -> usize {
    (0.2 * n_draws as f64).ceil() as usize
}

/// Pareto smoothing of log importance ratios. The largest `ceil(0.2 S)`
/// ratios are replaced by expected order statistics of a generalized Pareto
/// fitted to their excess over the next largest ratio, truncated at the
/// largest raw ratio. Returns the smoothed log ratios and the fitted shape
/// (NaN when the tail is degenerate).
pub fn pareto_smooth(log_ratios: &[f64]) -> Result<(Vec<f64>, f64)> {
    let s = log_ratios.len();
    if s < 5 {
        return Err(Error::InvalidArgument(format!("Pareto smoothing needs at least 5 ratios, got {s}")));
    }
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lw: Vec<f64> = log_ratios.iter().map(|v| v - max).collect();
    let m = tail_length(s).min(s - 1);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
    let tail_idx = &order[s - m..];
    let cutoff = lw[order[s - m - 1]];
    let exp_cutoff = cutoff.exp();
    let excess: Vec<f64> = tail_idx.iter().map(|&i| lw[i].exp() - exp_cutoff).collect();
    // ties at the cutoff carry no tail information
    let positive: Vec<f64> = excess.iter().copied().filter(|&e| e > 0.0).collect();
    if positive.len() < 5 || positive[0] == positive[positive.len() - 1] {
        return Ok((log_ratios.to_vec(), f64::NAN));
    }
    let (k, sigma) = fit_generalized_pareto(&positive);
    if !k.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
        return Ok((log_ratios.to_vec(), k));
    }
    let mut smoothed = log_ratios.to_vec();
    for (rank, &i) in tail_idx.iter().enumerate() {
        let p = (rank as f64 + 0.5) / m as f64;
        let v = (exp_cutoff + gpd_quantile(p, k, sigma)).ln();
        smoothed[i] = v.min(0.0) + max;
    }
    Ok((smoothed, k))
}

/// Leave-one-out summary of one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub elpd_loo: f64,
    /// `-elpd_loo`; lower is better.
    pub loo: f64,
    /// `-sum_j log(mean_s p_s(j))`.
    pub nll: f64,
    /// `loo - nll`.
    pub penalty: f64,
    /// Standard error of `loo` from the pointwise values.
    pub se_loo: f64,
    pub pareto_k: Vec<f64>,
    pub pointwise_elpd: Vec<f64>,
    pub pointwise_lppd: Vec<f64>,
}

/// Pareto-smoothed importance-sampling leave-one-out.
pub fn psis_loo(loglik: &[Vec<f64>]) -> Result<LooResult> {
    let n = check_matrix(loglik)?;
    let s = loglik.len() as f64;
    let per_point: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|j| -> Result<(f64, f64, f64)> {
            let ll = column(loglik, j);
            let lppd = log_sum_exp(ll.iter().copied()) - s.ln();
            let ratios: Vec<f64> = ll.iter().map(|v| -v).collect();
            let (lw, k) = pareto_smooth(&ratios)?;
            let elpd = log_sum_exp(lw.iter().zip(&ll).map(|(w, l)| w + l)) - log_sum_exp(lw.iter().copied());
            if !elpd.is_finite() {
                return Err(Error::NonFinite {
                    index: j,
                    what: "pointwise elpd".into(),
                });
            }
            // weights decrease with p, so the weighted mean never exceeds the plain mean
            Ok((elpd.min(lppd), lppd, k))
        })
        .collect::<Result<_>>()?;
    let pointwise_elpd: Vec<f64> = per_point.iter().map(|p| p.0).collect();
    let pointwise_lppd: Vec<f64> = per_point.iter().map(|p| p.1).collect();
    let pareto_k: Vec<f64> = per_point.iter().map(|p| p.2).collect();
    Ok(LooResult::from_pointwise(pointwise_elpd, pointwise_lppd, pareto_k))
}

impl LooResult {
    pub fn from_pointwise(pointwise_elpd: Vec<f64>, pointwise_lppd: Vec<f64>, pareto_k: Vec<f64>) -> Self {
        let elpd_loo: f64 = pointwise_elpd.iter().sum();
        let nll = -pointwise_lppd.iter().sum::<f64>();
        let loo = -elpd_loo;
        let n = pointwise_elpd.len() as f64;
        let mean = elpd_loo / n;
        let var = pointwise_elpd.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            elpd_loo,
            loo,
            nll,
            penalty: loo - nll,
            se_loo: (n * var).sqrt(),
            pareto_k,
            pointwise_elpd,
            pointwise_lppd,
        }
    }

    pub fn n_obs(&self) -> usize {
        self.pointwise_elpd.len()
    }

    /// Observations whose Pareto shape exceeds `threshold`.
    pub fn high_k(&self, threshold: f64) -> Vec<usize> {
        self.pareto_k.iter().enumerate().filter(|(_, k)| **k > threshold).map(|(i, _)| i).collect()
    }

    /// Counts of k in (-inf, 0.5], (0.5, 0.7], (0.7, 1], (1, inf), undefined.
    pub fn k_histogram(&self) -> [usize; 5] {
        let mut h = [0; 5];
        for &k in &self.pareto_k {
            let b = if k.is_nan() {
                4
            } else if k <= 0.5 {
                0
            } else if k <= K_WARN {
                1
            } else if k <= 1.0 {
                2
            } else {
                3
            };
            h[b] += 1;
        }
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_loo_csv(&[("model".to_string(), self.clone())], path)
    }
}

pub fn write_loo_csv(results: &[(String, LooResult)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model", "n_obs", "elpd_loo", "loo", "nll", "penalty", "se_loo", "k_le_0.5", "k_0.5_0.7", "k_0.7_1", "k_gt_1", "k_undefined",
    ])?;
    for (name, r) in results {
        let h = r.k_histogram();
        let mut rec = vec![
            name.clone(),
            r.n_obs().to_string(),
            r.elpd_loo.to_string(),
            r.loo.to_string(),
            r.nll.to_string(),
            r.penalty.to_string(),
            r.se_loo.to_string(),
        ];
        rec.extend(h.iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pointwise_csv(result: &LooResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["obs", "elpd_loo", "lppd", "pareto_k"])?;
    for j in 0..result.n_obs() {
        w.write_record([
            (j + 1).to_string(),
            result.pointwise_elpd[j].to_string(),
            result.pointwise_lppd[j].to_string(),
            result.pareto_k[j].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row of a model comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub model: String,
    pub loo: f64,
    /// `loo - best loo`.
    pub loo_diff: f64,
    /// Standard error of the difference from the pointwise differences.
    pub se_diff: f64,
}

/// Ranks models by loo, ascending.
pub fn loo_compare(results: &[(String, LooResult)]) -> Result<Vec<CompareRow>> {
    let Some((_, first)) = results.first() else {
        return Ok(Vec::new());
    };
    if let Some((name, r)) = results.iter().find(|(_, r)| r.n_obs() != first.n_obs()) {
        return Err(Error::Dimension(format!(
            "model `{name}` has {} observations, expected {}",
            r.n_obs(),
            first.n_obs()
        )));
    }
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| results[a].1.loo.total_cmp(&results[b].1.loo));
    let best = &results[order[0]].1;
    Ok(order
        .iter()
        .map(|&i| {
            let (name, r) = &results[i];
            CompareRow {
                model: name.clone(),
                loo: r.loo,
                loo_diff: r.loo - best.loo,
                se_diff: se_of_difference(best, r),
            }
        })
        .collect())
}

/// Standard error of `b.loo - a.loo`.
pub fn se_of_difference(a: &LooResult, b: &LooResult) -> f64 {
    let d: Vec<f64> = a.pointwise_elpd.iter().zip(&b.pointwise_elpd).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = d.iter().sum::<f64>() / n;
    (n * d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub fn write_compare_csv(rows: &[CompareRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Largest number of observations the exact oracle will refit.
pub const EXACT_LOO_MAX_OBS: usize = 200;

/// Exact leave-one-out by refitting once per observation. Each omitted
/// point is scored by the log of its mean likelihood over the refit's
/// draws. Points whose refit fails are reported as NaN with the error.
#[derive(Debug, Clone)]
pub struct ExactLoo {
    pub pointwise_elpd: Vec<f64>,
    pub failures: Vec<(usize, String)>,
}

pub fn exact_loo_oracle(model: &Model, init: &[f64], cfg: &SamplerConfig, seed: u64) -> Result<ExactLoo> {
    let n = model.n_obs();
    if n > EXACT_LOO_MAX_OBS {
        return Err(Error::InvalidArgument(format!(
            "exact leave-one-out refits at most {EXACT_LOO_MAX_OBS} observations, got {n}"
        )));
    }
    let results: Vec<std::result::Result<f64, String>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let reduced = model.select_rows(&keep);
            let held = model.select_rows(&[i]);
            let post = sample(&reduced, init, cfg, seed.wrapping_add(i as u64)).map_err(|e| e.to_string())?;
            let lls: Vec<f64> = post
                .draws
                .iter()
                .map(|d| {
                    let theta = held.unconstrain_vector(d).expect("draw matches layout");
                    held.pointwise_loglik(&held.natural(&theta))[0]
                })
                .collect();
            Ok(log_sum_exp(lls.iter().copied()) - (lls.len() as f64).ln())
        })
        .collect();
    let mut pointwise_elpd = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => pointwise_elpd.push(v),
            Err(e) => {
                pointwise_elpd.push(f64::NAN);
                failures.push((i, e));
            }
        }
    }
    Ok(ExactLoo { pointwise_elpd, failures })
}
