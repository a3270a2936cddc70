//! Shrinkage densities for slope-change parameters and their hyperpriors.
//!
//! Every density is parameterized by a scale `s = 1/lambda`. With the scale
//! held fixed, minus the log density is (up to a constant) the familiar
//! penalty: `lambda |b|` for the Laplace, `log(1 + lambda^2 b^2)` for the
//! Cauchy and `(nu + 1)/2 log(nu + lambda^2 b^2)` for a Student-t.

use std::f64::consts::{LN_2, PI};
use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Gradient of a prior log density at one parameter.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PriorGrad {
    pub log_density: f64,
    pub d_b: f64,
    pub d_log_scale: f64,
    pub d_log_nu: f64,
}

pub trait ShrinkagePrior: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    /// True when the density has a free degrees-of-freedom parameter.
    fn uses_nu(&self) -> bool {
        false
    }

    fn log_density(&self, b: f64, scale: f64, nu: f64) -> f64;

    fn grad(&self, b: f64, scale: f64, nu: f64) -> PriorGrad;

    fn cdf(&self, b: f64, scale: f64, nu: f64) -> f64;

    /// Variance at the given scale, `None` when infinite.
    fn variance(&self, scale: f64, nu: f64) -> Option<f64>;

    /// Non-excess kurtosis, `None` when undefined.
    fn kurtosis(&self, nu: f64) -> Option<f64>;

    /// Penalty `-log p(b) + log p(0)` at fixed scale.
    fn penalty(&self, b: f64, scale: f64, nu: f64) -> f64 {
        self.log_density(0.0, scale, nu) - self.log_density(b, scale, nu)
    }
}

/// Double exponential: `0.5 lambda exp(-lambda |b|)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Laplace;

impl ShrinkagePrior for Laplace {
    fn name(&self) -> &'static str {
        "laplace"
    }

    fn log_density(&self, b: f64, scale: f64, _nu: f64) -> f64 {
        -LN_2 - scale.ln() - b.abs() / scale
    }

    fn grad(&self, b: f64, scale: f64, nu: f64) -> PriorGrad {
        // subgradient 0 at the kink
        let sign = if b > 0.0 {
            1.0
        } else if b < 0.0 {
            -1.0
        } else {
            0.0
        };
        PriorGrad {
            log_density: self.log_density(b, scale, nu),
            d_b: -sign / scale,
            d_log_scale: -1.0 + b.abs() / scale,
            d_log_nu: 0.0,
        }
    }

    fn cdf(&self, b: f64, scale: f64, _nu: f64) -> f64 {
        if b < 0.0 {
            0.5 * (b / scale).exp()
        } else {
            1.0 - 0.5 * (-b / scale).exp()
        }
    }

    fn variance(&self, scale: f64, _nu: f64) -> Option<f64> {
        Some(2.0 * scale * scale)
    }

    fn kurtosis(&self, _nu: f64) -> Option<f64> {
        Some(6.0)
    }
}

/// Student-t with `nu` degrees of freedom and scale `s`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StudentT;

fn t_log_density(b: f64, scale: f64, nu: f64) -> f64 {
    let z = b / scale;
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln() - scale.ln()
        - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
}

fn t_grad(b: f64, scale: f64, nu: f64) -> PriorGrad {
    let z = b / scale;
    let z2 = z * z;
    let d_nu = 0.5 * digamma(0.5 * (nu + 1.0)) - 0.5 * digamma(0.5 * nu) - 0.5 / nu - 0.5 * (z2 / nu).ln_1p()
        + 0.5 * (nu + 1.0) * z2 / (nu * (nu + z2));
    PriorGrad {
        log_density: t_log_density(b, scale, nu),
        d_b: -(nu + 1.0) * b / (nu * scale * scale + b * b),
        d_log_scale: -1.0 + (nu + 1.0) * z2 / (nu + z2),
        d_log_nu: nu * d_nu,
    }
}

/// Regularized incomplete beta via statrs, for the t CDF.
fn t_cdf(b: f64, scale: f64, nu: f64) -> f64 {
    let z = b / scale;
    let x = nu / (nu + z * z);
    let tail = 0.5 * statrs::function::beta::beta_reg(0.5 * nu, 0.5, x);
    if z < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

fn t_variance(scale: f64, nu: f64) -> Option<f64> {
    (nu > 2.0).then(|| scale * scale * nu / (nu - 2.0))
}

fn t_kurtosis(nu: f64) -> Option<f64> {
    (nu > 4.0).then(|| 3.0 + 6.0 / (nu - 4.0))
}

impl ShrinkagePrior for StudentT {
    fn name(&self) -> &'static str {
        "student_t"
    }

    fn uses_nu(&self) -> bool {
        true
    }

    fn log_density(&self, b: f64, scale: f64, nu: f64) -> f64 {
        t_log_density(b, scale, nu)
    }

    fn grad(&self, b: f64, scale: f64, nu: f64) -> PriorGrad {
        t_grad(b, scale, nu)
    }

    fn cdf(&self, b: f64, scale: f64, nu: f64) -> f64 {
        t_cdf(b, scale, nu)
    }

    fn variance(&self, scale: f64, nu: f64) -> Option<f64> {
        t_variance(scale, nu)
    }

    fn kurtosis(&self, nu: f64) -> Option<f64> {
        t_kurtosis(nu)
    }
}

/// Cauchy: `lambda / (pi (1 + lambda^2 b^2))`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Cauchy;

impl ShrinkagePrior for Cauchy {
    fn name(&self) -> &'static str {
        "cauchy"
    }

    fn log_density(&self, b: f64, scale: f64, _nu: f64) -> f64 {
        let z = b / scale;
        -scale.ln() - PI.ln() - (z * z).ln_1p()
    }

    fn grad(&self, b: f64, scale: f64, nu: f64) -> PriorGrad {
        let z = b / scale;
        PriorGrad {
            log_density: self.log_density(b, scale, nu),
            d_b: -2.0 * b / (scale * scale + b * b),
            d_log_scale: -1.0 + 2.0 * z * z / (1.0 + z * z),
            d_log_nu: 0.0,
        }
    }

    fn cdf(&self, b: f64, scale: f64, _nu: f64) -> f64 {
        0.5 + (b / scale).atan() / PI
    }

    fn variance(&self, _scale: f64, _nu: f64) -> Option<f64> {
        None
    }

    fn kurtosis(&self, _nu: f64) -> Option<f64> {
        None
    }
}

/// Closed-form t with two degrees of freedom.
#[derive(Debug, Clone, Copy, Default)]
pub struct StudentT2;

/// Unit-scale t-2 density `(2 + b^2)^-1.5`.
pub fn t2_pdf(b: f64) -> f64 {
    (2.0 + b * b).powf(-1.5)
}

/// Unit-scale t-2 distribution function `(b / sqrt(2 + b^2) + 1) / 2`.
pub fn t2_cdf(b: f64) -> f64 {
    0.5 * (b / (2.0 + b * b).sqrt() + 1.0)
}

impl ShrinkagePrior for StudentT2 {
    fn name(&self) -> &'static str {
        "t2"
    }

    fn log_density(&self, b: f64, scale: f64, _nu: f64) -> f64 {
        let z = b / scale;
        -1.5 * (2.0 + z * z).ln() - scale.ln()
    }

    fn grad(&self, b: f64, scale: f64, nu: f64) -> PriorGrad {
        let z = b / scale;
        PriorGrad {
            log_density: self.log_density(b, scale, nu),
            d_b: -3.0 * b / (2.0 * scale * scale + b * b),
            d_log_scale: -1.0 + 3.0 * z * z / (2.0 + z * z),
            d_log_nu: 0.0,
        }
    }

    fn cdf(&self, b: f64, scale: f64, _nu: f64) -> f64 {
        t2_cdf(b / scale)
    }

    fn variance(&self, _scale: f64, _nu: f64) -> Option<f64> {
        None
    }

    fn kurtosis(&self, _nu: f64) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Normal;

impl ShrinkagePrior for Normal {
    fn name(&self) -> &'static str {
        "normal"
    }

    fn log_density(&self, b: f64, scale: f64, _nu: f64) -> f64 {
        let z = b / scale;
        -0.5 * (2.0 * PI).ln() - scale.ln() - 0.5 * z * z
    }

    fn grad(&self, b: f64, scale: f64, nu: f64) -> PriorGrad {
        let z = b / scale;
        PriorGrad {
            log_density: self.log_density(b, scale, nu),
            d_b: -b / (scale * scale),
            d_log_scale: -1.0 + z * z,
            d_log_nu: 0.0,
        }
    }

    fn cdf(&self, b: f64, scale: f64, _nu: f64) -> f64 {
        0.5 * statrs::function::erf::erfc(-b / (scale * std::f64::consts::SQRT_2))
    }

    fn variance(&self, scale: f64, _nu: f64) -> Option<f64> {
        Some(scale * scale)
    }

    fn kurtosis(&self, _nu: f64) -> Option<f64> {
        Some(3.0)
    }
}

type PriorCtor = fn() -> Arc<dyn ShrinkagePrior>;

const PRIORS: &[(&str, PriorCtor)] = &[
    ("laplace", || Arc::new(Laplace)),
    ("double_exponential", || Arc::new(Laplace)),
    ("student_t", || Arc::new(StudentT)),
    ("cauchy", || Arc::new(Cauchy)),
    ("t2", || Arc::new(StudentT2)),
    ("normal", || Arc::new(Normal)),
];

/// Looks up a shrinkage prior by registered name.
pub fn prior_by_name(name: &str) -> Result<Arc<dyn ShrinkagePrior>> {
    PRIORS
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, ctor)| ctor())
        .ok_or_else(|| Error::UnknownStrategy {
            kind: "prior family",
            name: name.to_string(),
            available: prior_names().join(", "),
        })
}

pub fn prior_names() -> Vec<&'static str> {
    PRIORS.iter().map(|(n, _)| *n).collect()
}

/// A hyperparameter that is either held fixed or sampled. Written as a
/// number or the string `"estimated"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HyperRepr", into = "HyperRepr")]
pub enum Hyper {
    Fixed(f64),
    Estimated,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum HyperRepr {
    Value(f64),
    Word(String),
}

impl TryFrom<HyperRepr> for Hyper {
    type Error = String;

    fn try_from(r: HyperRepr) -> std::result::Result<Self, String> {
        match r {
            HyperRepr::Value(v) => Ok(Hyper::Fixed(v)),
            HyperRepr::Word(w) if w == "estimated" => Ok(Hyper::Estimated),
            HyperRepr::Word(w) => Err(format!("expected a number or \"estimated\", got \"{w}\"")),
        }
    }
}

impl From<Hyper> for HyperRepr {
    fn from(h: Hyper) -> Self {
        match h {
            Hyper::Fixed(v) => HyperRepr::Value(v),
            Hyper::Estimated => HyperRepr::Word("estimated".into()),
        }
    }
}

/// Shrinkage family plus hyperprior ranges (all on the log scale, except the
/// constant which is already a log rate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSpec {
    pub family: String,
    pub nu: Hyper,
    pub scale: Hyper,
    pub log_s_range: (f64, f64),
    pub log_c_range: (f64, f64),
    pub log_nu_range: (f64, f64),
    pub log_phi_range: (f64, f64),
    pub log_sigma_range: (f64, f64),
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            family: "laplace".into(),
            nu: Hyper::Estimated,
            scale: Hyper::Estimated,
            log_s_range: (-6.0, -3.0),
            log_c_range: (-8.0, -3.0),
            log_nu_range: (-1.0, 6.0),
            log_phi_range: (-2.0, 15.0),
            log_sigma_range: (-10.0, 5.0),
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        prior_by_name(&self.family)?;
        for (name, (lo, hi)) in [
            ("log_s_range", self.log_s_range),
            ("log_c_range", self.log_c_range),
            ("log_nu_range", self.log_nu_range),
            ("log_phi_range", self.log_phi_range),
            ("log_sigma_range", self.log_sigma_range),
        ] {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite interval with lo < hi")));
            }
        }
        for (name, h) in [("nu", self.nu), ("scale", self.scale)] {
            if let Hyper::Fixed(v) = h {
                if !(v > 0.0) {
                    return Err(Error::Config(format!("fixed {name} must be positive")));
                }
            }
        }
        Ok(())
    }

    /// True when the family samples `nu`.
    pub fn estimates_nu(&self) -> Result<bool> {
        Ok(prior_by_name(&self.family)?.uses_nu() && self.nu == Hyper::Estimated)
    }
}

/// Current hyperparameter values on the natural scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperValues {
    pub scale: f64,
    pub nu: f64,
}

fn log_uniform_density(log_x: f64, range: (f64, f64)) -> f64 {
    if log_x < range.0 || log_x > range.1 {
        f64::NEG_INFINITY
    } else {
        -(range.1 - range.0).ln()
    }
}

/// Sum of shrinkage log densities over `beta` plus the log densities of the
/// estimated hyperparameters (uniform on their log ranges).
pub fn log_prior(spec: &PriorSpec, beta: &[f64], hyper: HyperValues) -> Result<f64> {
    let prior = prior_by_name(&spec.family)?;
    if !(hyper.scale > 0.0) || (prior.uses_nu() && !(hyper.nu > 0.0)) {
        return Err(Error::InvalidArgument("scale and nu must be positive".into()));
    }
    let mut lp: f64 = beta.iter().map(|&b| prior.log_density(b, hyper.scale, hyper.nu)).sum();
    if spec.scale == Hyper::Estimated {
        lp += log_uniform_density(hyper.scale.ln(), spec.log_s_range);
    }
    if spec.estimates_nu()? {
        lp += log_uniform_density(hyper.nu.ln(), spec.log_nu_range);
    }
    Ok(lp)
}

/// Variance and kurtosis of a unit t(6) and of a Laplace with scale sqrt(3)/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentMatchReport {
    pub t6_variance: f64,
    pub t6_kurtosis: f64,
    pub laplace_scale: f64,
    pub laplace_variance: f64,
    pub laplace_kurtosis: f64,
}

pub fn t6_laplace_match_check() -> MomentMatchReport {
    let laplace_scale = 3f64.sqrt() / 2.0;
    MomentMatchReport {
        t6_variance: t_variance(1.0, 6.0).unwrap_or(f64::NAN),
        t6_kurtosis: t_kurtosis(6.0).unwrap_or(f64::NAN),
        laplace_scale,
        laplace_variance: Laplace.variance(laplace_scale, 0.0).unwrap_or(f64::NAN),
        laplace_kurtosis: Laplace.kurtosis(0.0).unwrap_or(f64::NAN),
    }
}
