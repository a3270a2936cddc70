//! No-U-turn sampler with multinomial trajectory sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::hamiltonian::{draw_momentum, leapfrog, run_adaptive, ChainState, Point, Transition, TransitionInfo, MAX_ENERGY_ERROR};
use super::{ChainOutput, Sampler, SamplerConfig, Target};
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default)]
pub struct Nuts;

struct Tree {
    begin: Point,
    end: Point,
    proposal: Point,
    log_w: f64,
    rho: Vec<f64>,
    valid: bool,
    divergent: bool,
    n_leapfrog: usize,
    sum_accept: f64,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
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

fn no_u_turn(a: &Point, b: &Point, rho: &[f64], inv_metric: &[f64]) -> bool {
    dot(&a.p_sharp(inv_metric), rho) > 0.0 && dot(&b.p_sharp(inv_metric), rho) > 0.0
}

/// U-turn checks for two adjacent segments `x` then `y` along a trajectory:
/// across the merged span and across each junction.
fn merged_ok(x_outer: &Point, x_inner: &Point, rho_x: &[f64], y_inner: &Point, y_outer: &Point, rho_y: &[f64], inv_metric: &[f64]) -> bool {
    no_u_turn(x_outer, y_outer, &add(rho_x, rho_y), inv_metric)
        && no_u_turn(x_outer, y_inner, &add(rho_x, &y_inner.p), inv_metric)
        && no_u_turn(x_inner, y_outer, &add(&x_inner.p, rho_y), inv_metric)
}

struct Ctx<'a> {
    target: &'a dyn Target,
    inv_metric: &'a [f64],
    h0: f64,
}

impl Ctx<'_> {
    fn build(&self, from: &Point, depth: usize, eps: f64, rng: &mut ChaCha8Rng) -> Tree {
        if depth == 0 {
            let next = leapfrog(self.target, from, eps, self.inv_metric);
            let delta = next.hamiltonian(self.inv_metric) - self.h0;
            let delta = if delta.is_nan() { f64::INFINITY } else { delta };
            let divergent = delta > MAX_ENERGY_ERROR;
            return Tree {
                rho: next.p.clone(),
                begin: next.clone(),
                end: next.clone(),
                proposal: next,
                log_w: -delta,
                valid: !divergent,
                divergent,
                n_leapfrog: 1,
                sum_accept: (-delta).exp().min(1.0),
            };
        }
        let first = self.build(from, depth - 1, eps, rng);
        if !first.valid {
            return first;
        }
        let second = self.build(&first.end, depth - 1, eps, rng);
        let n_leapfrog = first.n_leapfrog + second.n_leapfrog;
        let sum_accept = first.sum_accept + second.sum_accept;
        if !second.valid {
            return Tree {
                n_leapfrog,
                sum_accept,
                ..second
            };
        }
        let log_w = log_add_exp(first.log_w, second.log_w);
        let take_second = rng.random::<f64>().ln() < second.log_w - log_w;
        let valid = merged_ok(&first.begin, &first.end, &first.rho, &second.begin, &second.end, &second.rho, self.inv_metric);
        Tree {
            rho: add(&first.rho, &second.rho),
            proposal: if take_second { second.proposal } else { first.proposal },
            begin: first.begin,
            end: second.end,
            log_w,
            valid,
            divergent: false,
            n_leapfrog,
            sum_accept,
        }
    }
}

impl Transition for Nuts {
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
        let ctx = Ctx {
            target,
            inv_metric,
            h0: start.hamiltonian(inv_metric),
        };
        let mut minus = start.clone();
        let mut plus = start.clone();
        let mut rho = start.p.clone();
        let mut proposal = start;
        let mut log_w = 0.0;
        let mut depth = 0;
        let mut n_leapfrog = 0;
        let mut sum_accept = 0.0;
        let mut divergent = false;

        while depth < cfg.max_tree_depth {
            let forward = rng.random::<bool>();
            let sub = if forward {
                ctx.build(&plus, depth, eps, rng)
            } else {
                ctx.build(&minus, depth, -eps, rng)
            };
            n_leapfrog += sub.n_leapfrog;
            sum_accept += sub.sum_accept;
            if !sub.valid {
                divergent = sub.divergent;
                break;
            }
            depth += 1;
            if rng.random::<f64>().ln() < sub.log_w - log_w {
                proposal = sub.proposal;
            }
            log_w = log_add_exp(log_w, sub.log_w);
            let ok = if forward {
                merged_ok(&minus, &plus, &rho, &sub.begin, &sub.end, &sub.rho, inv_metric)
            } else {
                merged_ok(&plus, &minus, &rho, &sub.begin, &sub.end, &sub.rho, inv_metric)
            };
            rho = add(&rho, &sub.rho);
            if forward {
                plus = sub.end;
            } else {
                minus = sub.end;
            }
            if !ok {
                break;
            }
        }
        TransitionInfo {
            state: ChainState {
                q: proposal.q,
                grad: proposal.grad,
                logp: proposal.logp,
            },
            accept_stat: if n_leapfrog > 0 { sum_accept / n_leapfrog as f64 } else { 0.0 },
            divergent,
            n_leapfrog,
            depth,
        }
    }
}

impl Sampler for Nuts {
    fn name(&self) -> &'static str {
        "nuts"
    }

    fn run_chain(&self, target: &dyn Target, init: &[f64], cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<ChainOutput> {
        run_adaptive(self, target, init, cfg, rng)
    }
}
