use std::fmt::Debug;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

const FACTORIAL_TABLE: usize = 256;

/// `ln(y!)`, exact zero at 0 and 1 and tabulated for small counts.
pub(crate) fn ln_factorial(y: f64) -> f64 {
    static TABLE: std::sync::OnceLock<Vec<f64>> = std::sync::OnceLock::new();
    if y >= 0.0 && y < FACTORIAL_TABLE as f64 && y.fract() == 0.0 {
        let t = TABLE.get_or_init(|| {
            let mut t = vec![0.0; FACTORIAL_TABLE];
            for k in 2..FACTORIAL_TABLE {
                t[k] = t[k - 1] + (k as f64).ln();
            }
            t
        });
        t[y as usize]
    } else {
        ln_gamma(y + 1.0)
    }
}

/// Tail of Stirling's series for `ln_gamma(x)` after `(x - 1/2) ln x - x + ln(2 pi)/2`.
fn stirling_tail(x: f64) -> f64 {
    let r = 1.0 / (x * x);
    (1.0 / 12.0 - r * (1.0 / 360.0 - r * (1.0 / 1260.0 - r / 1680.0))) / x
}

/// Tail of the asymptotic series for `digamma(x)` after `ln x`.
fn digamma_tail(x: f64) -> f64 {
    let r = 1.0 / (x * x);
    -0.5 / x - r * (1.0 / 12.0 - r * (1.0 / 120.0 - r * (1.0 / 252.0 - r / 240.0)))
}

/// `ln_gamma(y + phi) - ln_gamma(phi)` without cancellation at large `phi`.
pub(crate) fn ln_gamma_ratio(y: f64, phi: f64) -> f64 {
    if y == 0.0 {
        0.0
    } else if y.fract() == 0.0 && y <= 64.0 {
        (0..y as usize).map(|i| (phi + i as f64).ln()).sum()
    } else if phi >= 10.0 {
        (phi - 0.5) * (y / phi).ln_1p() + y * (phi + y).ln() - y + stirling_tail(phi + y) - stirling_tail(phi)
    } else {
        ln_gamma(y + phi) - ln_gamma(phi)
    }
}

/// `digamma(y + phi) - digamma(phi)`, stable like [`ln_gamma_ratio`].
pub(crate) fn digamma_diff(y: f64, phi: f64) -> f64 {
    if y == 0.0 {
        0.0
    } else if y.fract() == 0.0 && y <= 64.0 {
        (0..y as usize).map(|i| 1.0 / (phi + i as f64)).sum()
    } else if phi >= 10.0 {
        (y / phi).ln_1p() + digamma_tail(phi + y) - digamma_tail(phi)
    } else {
        digamma(y + phi) - digamma(phi)
    }
}

/// Observation model for one cell given its linear predictor.
///
/// `eta` is the full linear predictor including the log-exposure offset; for
/// log-link families the mean is `exp(eta)`, for the Gaussian it is `eta`.
/// `aux` is the family's extra parameter on its natural scale (dispersion
/// `phi` or noise sd `sigma`) and is ignored by families without one.
pub trait ObservationFamily: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    /// Name of the auxiliary parameter, if the family has one.
    fn aux_name(&self) -> Option<&'static str> {
        None
    }

    fn log_link(&self) -> bool {
        true
    }

    fn log_density(&self, y: f64, eta: f64, aux: f64) -> f64;

    /// `(log p, d log p / d eta, d log p / d log aux)`
    fn log_density_grad(&self, y: f64, eta: f64, aux: f64) -> (f64, f64, f64);

    /// Variance of one observation with mean `mean`.
    fn variance(&self, mean: f64, aux: f64) -> f64;

    fn sample(&self, mean: f64, aux: f64, rng: &mut dyn rand::RngCore) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PoissonFamily;

impl ObservationFamily for PoissonFamily {
    fn name(&self) -> &'static str {
        "poisson"
    }

    fn log_density(&self, y: f64, eta: f64, _aux: f64) -> f64 {
        y * eta - eta.exp() - ln_factorial(y)
    }

    fn log_density_grad(&self, y: f64, eta: f64, _aux: f64) -> (f64, f64, f64) {
        let mu = eta.exp();
        (y * eta - mu - ln_factorial(y), y - mu, 0.0)
    }

    fn variance(&self, mean: f64, _aux: f64) -> f64 {
        mean
    }

    fn sample(&self, mean: f64, _aux: f64, rng: &mut dyn rand::RngCore) -> f64 {
        sample_poisson(mean, rng)
    }
}

fn sample_poisson(mean: f64, rng: &mut dyn rand::RngCore) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).map(|d| d.sample(rng)).unwrap_or(mean.round())
}

/// Negative binomial with mean `mu` and dispersion `phi`:
/// `Var = mu^2 / phi + mu` (large `phi` approaches the Poisson).
#[derive(Debug, Clone, Copy, Default)]
pub struct NegativeBinomialFamily;

impl ObservationFamily for NegativeBinomialFamily {
    fn name(&self) -> &'static str {
        "negative_binomial"
    }

    fn aux_name(&self) -> Option<&'static str> {
        Some("phi")
    }

    fn log_density(&self, y: f64, eta: f64, phi: f64) -> f64 {
        let mu = eta.exp();
        let log_mu_phi = log_add(eta, phi.ln());
        ln_gamma_ratio(y, phi) - ln_factorial(y) - phi * (mu / phi).ln_1p()
            + y * (eta - log_mu_phi)
    }

    fn log_density_grad(&self, y: f64, eta: f64, phi: f64) -> (f64, f64, f64) {
        let mu = eta.exp();
        let lp = self.log_density(y, eta, phi);
        let d_eta = phi * (y - mu) / (mu + phi);
        let d_phi = digamma_diff(y, phi) - (mu / phi).ln_1p() + (mu - y) / (mu + phi);
        (lp, d_eta, phi * d_phi)
    }

    fn variance(&self, mean: f64, phi: f64) -> f64 {
        mean * mean / phi + mean
    }

    fn sample(&self, mean: f64, phi: f64, rng: &mut dyn rand::RngCore) -> f64 {
        if mean <= 0.0 {
            return 0.0;
        }
        let rate = Gamma::new(phi, mean / phi)
            .map(|g| g.sample(rng))
            .unwrap_or(mean);
        sample_poisson(rate, rng)
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Identity-link Gaussian with noise sd `sigma`, for one-dimensional curves.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianFamily;

impl ObservationFamily for GaussianFamily {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn aux_name(&self) -> Option<&'static str> {
        Some("sigma")
    }

    fn log_link(&self) -> bool {
        false
    }

    fn log_density(&self, y: f64, eta: f64, sigma: f64) -> f64 {
        let z = (y - eta) / sigma;
        -0.5 * (2.0 * std::f64::consts::PI).ln() - sigma.ln() - 0.5 * z * z
    }

    fn log_density_grad(&self, y: f64, eta: f64, sigma: f64) -> (f64, f64, f64) {
        let r = y - eta;
        let s2 = sigma * sigma;
        (self.log_density(y, eta, sigma), r / s2, -1.0 + r * r / s2)
    }

    fn variance(&self, _mean: f64, sigma: f64) -> f64 {
        sigma * sigma
    }

    fn sample(&self, mean: f64, sigma: f64, rng: &mut dyn rand::RngCore) -> f64 {
        Normal::new(mean, sigma).map(|n| n.sample(rng)).unwrap_or(mean)
    }
}

type FamilyCtor = fn() -> Arc<dyn ObservationFamily>;

const FAMILIES: &[(&str, FamilyCtor)] = &[
    ("poisson", || Arc::new(PoissonFamily)),
    ("negative_binomial", || Arc::new(NegativeBinomialFamily)),
    ("nb", || Arc::new(NegativeBinomialFamily)),
    ("gaussian", || Arc::new(GaussianFamily)),
];

/// Looks up an observation family by registered name.
pub fn family_by_name(name: &str) -> Result<Arc<dyn ObservationFamily>> {
    FAMILIES
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, ctor)| ctor())
        .ok_or_else(|| Error::UnknownStrategy {
            kind: "observation family",
            name: name.to_string(),
            available: family_names().join(", "),
        })
}

pub fn family_names() -> Vec<&'static str> {
    FAMILIES.iter().map(|(n, _)| *n).collect()
}

/// Per-observation `log p(d[j] | mu[j])` for a family on the mean scale.
pub fn pointwise_loglik(
    family: &dyn ObservationFamily,
    mu: &[f64],
    d: &[f64],
    aux: f64,
) -> Result<Vec<f64>> {
    if mu.len() != d.len() {
        return Err(Error::Dimension(format!("{} means for {} observations", mu.len(), d.len())));
    }
    if family.aux_name().is_some() && !(aux > 0.0 && aux.is_finite() || aux == f64::INFINITY) {
        return Err(Error::InvalidArgument(format!(
            "{} must be positive, got {aux}",
            family.aux_name().unwrap_or("aux")
        )));
    }
    mu.iter()
        .zip(d)
        .enumerate()
        .map(|(j, (&m, &y))| {
            if family.log_link() {
                if !(m > 0.0) || !m.is_finite() {
                    return Err(Error::NonFinite {
                        index: j,
                        what: format!("mean must be positive and finite, got {m}"),
                    });
                }
                Ok(family.log_density(y, m.ln(), aux))
            } else {
                Ok(family.log_density(y, m, aux))
            }
        })
        .collect()
}

/// Sample one observation from a family on a caller-supplied RNG.
pub fn simulate<R: Rng>(family: &dyn ObservationFamily, mean: f64, aux: f64, rng: &mut R) -> f64 {
    family.sample(mean, aux, rng)
}
