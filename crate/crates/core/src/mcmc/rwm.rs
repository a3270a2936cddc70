//! Adaptive random-walk Metropolis with a diagonal Gaussian proposal.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::adapt::Welford;
use super::{ChainOutput, ChainStats, Sampler, SamplerConfig, Target};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomWalk;

const TARGET_ACCEPT: f64 = 0.234;

impl Sampler for RandomWalk {
    fn name(&self) -> &'static str {
        "rwm"
    }

    fn run_chain(&self, target: &dyn Target, init: &[f64], cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<ChainOutput> {
        let dim = target.dim();
        let warmup = cfg.warmup_iterations();
        let mut q = init.to_vec();
        let mut logp = target.log_density(&q);
        if !logp.is_finite() {
            return Err(Error::Sampler(format!("log density is not finite at the initial point ({logp})")));
        }
        let mut scale = vec![0.1; dim];
        let mut log_factor = (2.38f64 / (dim.max(1) as f64).sqrt()).ln();
        let mut welford = Welford::new(dim);
        let mut draws = Vec::with_capacity(cfg.iterations - warmup);
        let mut stats = ChainStats::default();
        let mut accepted = 0usize;
        for i in 0..cfg.iterations {
            let factor = log_factor.exp();
            let proposal: Vec<f64> = (0..dim)
                .map(|j| {
                    let z: f64 = rng.sample(StandardNormal);
                    q[j] + factor * scale[j] * z
                })
                .collect();
            let lp = target.log_density(&proposal);
            stats.grad_evals += 1;
            let log_alpha = if lp.is_finite() { (lp - logp).min(0.0) } else { f64::NEG_INFINITY };
            let accept = rng.random::<f64>().ln() < log_alpha;
            if accept {
                q = proposal;
                logp = lp;
            }
            if i < warmup {
                // Robbins-Monro on the global factor
                log_factor += (log_alpha.exp() - TARGET_ACCEPT) / ((i + 1) as f64).powf(0.6);
                welford.add(&q);
                if welford.count() >= 50 && (i + 1) % 50 == 0 {
                    scale = welford.regularized_variance().iter().map(|v| v.sqrt()).collect();
                }
            } else {
                accepted += accept as usize;
                draws.push(q.clone());
            }
        }
        stats.step_size = log_factor.exp();
        stats.accept_mean = accepted as f64 / draws.len().max(1) as f64;
        stats.inv_metric = scale.iter().map(|s| s * s).collect();
        Ok(ChainOutput { draws, stats })
    }
}
