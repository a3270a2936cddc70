//! Posterior sampling: target and sampler traits, the sampler registry,
//! parallel chains and posterior summaries.

pub mod adapt;
pub mod diagnostics;
pub mod hamiltonian;
pub mod hmc;
pub mod nuts;
pub mod rwm;

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use diagnostics::{effective_sample_size, quantile, split_rhat};

/// A differentiable log density over an unconstrained vector.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Log density at `theta`; writes the gradient into `grad`.
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;

    fn log_density(&self, theta: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.log_density_grad(theta, &mut g)
    }

    /// Approximate posterior precision near `theta`, used to seed a dense
    /// metric.
    fn precision_hint(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn param_names(&self) -> Vec<String> {
        (1..=self.dim()).map(|i| format!("theta[{i}]")).collect()
    }

    /// Maps an unconstrained draw to the reported parameters.
    fn constrain(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    fn pointwise_loglik(&self, _theta: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ChainStats {
    pub step_size: f64,
    pub accept_mean: f64,
    pub divergences: usize,
    pub max_depth_hits: usize,
    pub mean_depth: f64,
    pub grad_evals: usize,
    pub inv_metric: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// Post-warmup unconstrained draws.
    pub draws: Vec<Vec<f64>>,
    pub stats: ChainStats,
}

pub trait Sampler: Send + Sync {
    fn name(&self) -> &'static str;

    fn run_chain(&self, target: &dyn Target, init: &[f64], cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<ChainOutput>;
}

static SAMPLERS: &[&dyn Sampler] = &[&nuts::Nuts, &hmc::StaticHmc, &rwm::RandomWalk];

pub fn sampler_by_name(name: &str) -> Result<&'static dyn Sampler> {
    SAMPLERS.iter().copied().find(|s| s.name() == name).ok_or_else(|| Error::UnknownStrategy {
        kind: "sampler",
        name: name.to_string(),
        available: sampler_names().join(", "),
    })
}

pub fn sampler_names() -> Vec<&'static str> {
    SAMPLERS.iter().map(|s| s.name()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub algorithm: String,
    pub chains: usize,
    /// Iterations per chain, warmup included.
    pub iterations: usize,
    /// Defaults to half the iterations.
    pub warmup: Option<usize>,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// `dense` or `diag` mass matrix for the gradient-based samplers.
    pub metric: String,
    /// Newton steps toward the mode before the chains are started; 0 starts
    /// from the given point.
    pub init_ascent: usize,
    /// Maximum leapfrog steps per transition for static HMC.
    pub hmc_steps: usize,
    /// Half-width of the uniform perturbation applied to each chain's
    /// starting point, in approximate posterior standard deviations when
    /// the target offers a precision hint.
    pub init_jitter: f64,
    pub parallel: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            algorithm: "nuts".into(),
            chains: 4,
            iterations: 2000,
            warmup: None,
            target_accept: 0.9,
            max_tree_depth: 10,
            metric: "dense".into(),
            init_ascent: 50,
            hmc_steps: 16,
            init_jitter: 1.0,
            parallel: true,
        }
    }
}

impl SamplerConfig {
    pub fn warmup_iterations(&self) -> usize {
        self.warmup.unwrap_or(self.iterations / 2)
    }

    pub fn validate(&self) -> Result<()> {
        sampler_by_name(&self.algorithm)?;
        if self.chains == 0 {
            return Err(Error::Config("sampler.chains must be at least 1".into()));
        }
        if self.warmup_iterations() >= self.iterations {
            return Err(Error::Config(format!(
                "sampler.warmup ({}) must be below sampler.iterations ({})",
                self.warmup_iterations(),
                self.iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("sampler.target_accept must lie in (0, 1)".into()));
        }
        if !matches!(self.metric.as_str(), "dense" | "diag") {
            return Err(Error::Config(format!("sampler.metric must be `dense` or `diag`, got `{}`", self.metric)));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::Config("sampler.max_tree_depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// Posterior draws pooled over chains (chain-major) with diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub names: Vec<String>,
    pub n_chains: usize,
    /// One row per draw on the reported scale.
    pub draws: Vec<Vec<f64>>,
    /// One row per draw of per-observation log-likelihoods.
    #[serde(skip)]
    pub loglik: Option<Vec<Vec<f64>>>,
    pub chain_stats: Vec<ChainStats>,
}

/// Marginal posterior summary of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q20: f64,
    pub q50: f64,
    pub q80: f64,
    pub q975: f64,
    pub t_ratio: f64,
    pub rhat: f64,
    pub ess: f64,
}

/// Summary quantiles in output order.
pub const SUMMARY_PROBS: [f64; 5] = [0.025, 0.2, 0.5, 0.8, 0.975];

/// Runs `cfg.chains` chains from jittered copies of `init`. Chain `k` uses
/// stream `k` of a generator seeded with `seed`, so results do not depend
/// on thread scheduling.
pub fn sample(target: &dyn Target, init: &[f64], cfg: &SamplerConfig, seed: u64) -> Result<PosteriorSample> {
    cfg.validate()?;
    if init.len() != target.dim() {
        return Err(Error::Dimension(format!("initial point has {} entries for a {}-dimensional target", init.len(), target.dim())));
    }
    let sampler = sampler_by_name(&cfg.algorithm)?;
    let centre = hamiltonian::ascend(target, init, cfg.init_ascent);
    let init = centre.as_slice();
    let spread = if cfg.init_jitter > 0.0 {
        target.precision_hint(init).and_then(|h| hamiltonian::covariance_factor(&h, hamiltonian::PRECISION_FLOOR))
    } else {
        None
    };
    let run = |k: usize| -> Result<ChainOutput> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let u: Vec<f64> = init
            .iter()
            .map(|_| if cfg.init_jitter > 0.0 { rng.random_range(-cfg.init_jitter..=cfg.init_jitter) } else { 0.0 })
            .collect();
        let shift = match &spread {
            Some(l) => (l * nalgebra::DVector::from_column_slice(&u)).as_slice().to_vec(),
            None => u,
        };
        let start: Vec<f64> = init.iter().zip(&shift).map(|(v, d)| v + d).collect();
        sampler.run_chain(target, &start, cfg, &mut rng)
    };
    let outputs: Vec<ChainOutput> = if cfg.parallel {
        (0..cfg.chains).into_par_iter().map(run).collect::<Result<_>>()?
    } else {
        (0..cfg.chains).map(run).collect::<Result<_>>()?
    };
    let unconstrained: Vec<&Vec<f64>> = outputs.iter().flat_map(|o| o.draws.iter()).collect();
    let draws: Vec<Vec<f64>> = unconstrained.par_iter().map(|t| target.constrain(t)).collect();
    let loglik: Option<Vec<Vec<f64>>> = unconstrained.par_iter().map(|t| target.pointwise_loglik(t)).collect();
    Ok(PosteriorSample {
        names: target.param_names(),
        n_chains: cfg.chains,
        draws,
        loglik,
        chain_stats: outputs.into_iter().map(|o| o.stats).collect(),
    })
}

impl PosteriorSample {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.draws.len() / self.n_chains.max(1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Result<Vec<f64>> {
        self.index_of(name).map(|j| self.column(j)).ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn chains_of(values: &[f64], n_chains: usize) -> Vec<&[f64]> {
        let per = values.len() / n_chains.max(1);
        (0..n_chains).map(|k| &values[k * per..(k + 1) * per]).collect()
    }

    pub fn summarize_values(&self, name: &str, values: &[f64]) -> ParamSummary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let q: Vec<f64> = SUMMARY_PROBS.iter().map(|&p| quantile(&sorted, p)).collect();
        let chains = Self::chains_of(values, self.n_chains);
        ParamSummary {
            name: name.to_string(),
            mean,
            sd,
            q025: q[0],
            q20: q[1],
            q50: q[2],
            q80: q[3],
            q975: q[4],
            t_ratio: if sd > 0.0 { mean / sd } else { f64::NAN },
            rhat: split_rhat(&chains),
            ess: effective_sample_size(&chains),
        }
    }

    pub fn summarize(&self) -> Vec<ParamSummary> {
        (0..self.names.len())
            .into_par_iter()
            .map(|j| self.summarize_values(&self.names[j], &self.column(j)))
            .collect()
    }

    pub fn divergences(&self) -> usize {
        self.chain_stats.iter().map(|s| s.divergences).sum()
    }

    /// Largest split R-hat and smallest ESS over the summaries.
    pub fn convergence(summary: &[ParamSummary]) -> (f64, f64) {
        let rhat = summary.iter().map(|s| s.rhat).filter(|r| r.is_finite()).fold(1.0, f64::max);
        let ess = summary.iter().map(|s| s.ess).filter(|e| e.is_finite()).fold(f64::INFINITY, f64::min);
        (rhat, ess)
    }

    pub fn write_draws_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let per = self.draws_per_chain().max(1);
        for (i, d) in self.draws.iter().enumerate() {
            let mut rec = vec![(i / per + 1).to_string(), (i % per + 1).to_string()];
            rec.extend(d.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub fn write_summary_csv(summary: &[ParamSummary], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in summary {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_chain_stats_csv(stats: &[ChainStats], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("chain,step_size,accept_mean,divergences,max_depth_hits,mean_depth,grad_evals\n");
    for (k, s) in stats.iter().enumerate() {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            k + 1,
            s.step_size,
            s.accept_mean,
            s.divergences,
            s.max_depth_hits,
            s.mean_depth,
            s.grad_evals
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
