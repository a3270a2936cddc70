//! Hamiltonian Monte Carlo with a bounded, randomized number of leapfrog
//! steps.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::hamiltonian::{draw_momentum, leapfrog, run_adaptive, ChainState, Transition, TransitionInfo, MAX_ENERGY_ERROR};
use super::{ChainOutput, Sampler, SamplerConfig, Target};
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default)]
pub struct StaticHmc;

impl Transition for StaticHmc {
    fn transition(
        &self,
        target: &dyn Target,
        current: &ChainState,
        eps: f64,
        inv_metric: &[f64],
        cfg: &SamplerConfig,
        rng: &mut ChaCha8Rng,
    ) -> TransitionInfo {
        let start = current.with_momentum(draw_momentum(rng, inv_metric));
        let h0 = start.hamiltonian(inv_metric);
        let mut point = start;
        let mut divergent = false;
        // a random path length avoids resonance on near-periodic orbits
        let max_steps = cfg.hmc_steps.max(1);
        let steps = rng.random_range(max_steps.div_ceil(2)..=max_steps);
        let mut taken = 0;
        for _ in 0..steps {
            point = leapfrog(target, &point, eps, inv_metric);
            taken += 1;
            if point.hamiltonian(inv_metric) - h0 > MAX_ENERGY_ERROR {
                divergent = true;
                break;
            }
        }
        let delta = point.hamiltonian(inv_metric) - h0;
        let accept_stat = if divergent || delta.is_nan() { 0.0 } else { (-delta).exp().min(1.0) };
        let state = if rng.random::<f64>() < accept_stat {
            ChainState {
                q: point.q,
                grad: point.grad,
                logp: point.logp,
            }
        } else {
            current.clone()
        };
        TransitionInfo {
            state,
            accept_stat,
            divergent,
            n_leapfrog: taken,
            depth: 0,
        }
    }
}

impl Sampler for StaticHmc {
    fn name(&self) -> &'static str {
        "hmc"
    }

    fn run_chain(&self, target: &dyn Target, init: &[f64], cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<ChainOutput> {
        run_adaptive(self, target, init, cfg, rng)
    }
}
