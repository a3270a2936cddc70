//! Joint log density: log-likelihood plus shrinkage log prior plus
//! hyperpriors, over an unconstrained parameter vector.
//!
//! Bounded scalars (the constant, `log s`, `log nu`, `log phi`/`log sigma`)
//! are sampled through a logistic transform onto their interval, so a
//! uniform density on the interval becomes the logistic Jacobian. A uniform
//! on `log s` is the `1/s` prior on the scale.

use std::sync::Arc;

use nalgebra::DMatrix;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{family_by_name, MeanEval, MeanParams, MeanStructure, ObservationFamily};
use crate::mcmc::hamiltonian::numeric_precision;
use crate::mcmc::Target;
use crate::prior::{prior_by_name, Hyper, PriorSpec, ShrinkagePrior};

/// Prior on the constant `c` (a log rate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantPrior {
    /// Uniform on `c`, i.e. `1/x` on the rate.
    #[default]
    LogUniform,
    /// Uniform on the rate `exp(c)`.
    Flat,
}

#[derive(Debug, Clone, Copy)]
struct Bounded {
    index: usize,
    lo: f64,
    hi: f64,
}

impl Bounded {
    fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Value, derivative of value w.r.t. theta, log Jacobian, and the
    /// derivative of the log Jacobian w.r.t. theta.
    fn constrain(&self, theta: f64) -> (f64, f64, f64, f64) {
        let s = sigmoid(theta);
        let w = self.width();
        let log_jac = w.ln() + log_sigmoid(theta) + log_sigmoid(-theta);
        (self.lo + w * s, w * s * (1.0 - s), log_jac, 1.0 - 2.0 * s)
    }

    fn unconstrain(&self, value: f64) -> f64 {
        let u = ((value - self.lo) / self.width()).clamp(1e-12, 1.0 - 1e-12);
        (u / (1.0 - u)).ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Positions of each parameter block in the unconstrained vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    c: Bounded,
    log_s: Option<Bounded>,
    log_nu: Option<Bounded>,
    log_aux: Option<Bounded>,
    pub beta: std::ops::Range<usize>,
    pub psi: std::ops::Range<usize>,
    pub eta: std::ops::Range<usize>,
    pub dim: usize,
}

impl ParamLayout {
    pub fn n_unshrunk(&self) -> usize {
        self.beta.start
    }
}

/// Parameters on their natural scale.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams {
    pub c: f64,
    pub scale: f64,
    pub nu: f64,
    pub aux: f64,
    pub beta: Vec<f64>,
    pub psi: Vec<f64>,
    pub eta: Vec<f64>,
}

impl NaturalParams {
    pub fn mean_params(&self) -> MeanParams<'_> {
        MeanParams {
            c: self.c,
            beta: &self.beta,
            psi: &self.psi,
            eta: &self.eta,
        }
    }
}

/// A fully specified model over fixed data.
#[derive(Debug, Clone)]
pub struct Model {
    pub y: Vec<f64>,
    /// Log exposures (zero for Gaussian curves).
    pub offset: Vec<f64>,
    pub family: Arc<dyn ObservationFamily>,
    pub prior: Arc<dyn ShrinkagePrior>,
    pub prior_spec: PriorSpec,
    pub structure: MeanStructure,
    pub constant_prior: ConstantPrior,
    layout: ParamLayout,
}

impl Model {
    pub fn new(
        y: Vec<f64>,
        offset: Vec<f64>,
        family_name: &str,
        prior_spec: PriorSpec,
        structure: MeanStructure,
        constant_prior: ConstantPrior,
    ) -> Result<Self> {
        prior_spec.validate()?;
        let family = family_by_name(family_name)?;
        let prior = prior_by_name(&prior_spec.family)?;
        let n = structure.n_obs();
        if y.len() != n || offset.len() != n {
            return Err(Error::Dimension(format!(
                "{} observations and {} offsets for a design with {n} rows",
                y.len(),
                offset.len()
            )));
        }
        let is_curve = matches!(structure, MeanStructure::Curve1D { .. });
        if is_curve == family.log_link() {
            return Err(Error::InvalidArgument(format!(
                "family `{}` is not available for the `{}` mean structure",
                family.name(),
                structure.kind_name()
            )));
        }
        let mut next = 0;
        let mut bounded = |range: (f64, f64)| {
            let b = Bounded {
                index: next,
                lo: range.0,
                hi: range.1,
            };
            next += 1;
            b
        };
        let c = bounded(prior_spec.log_c_range);
        let log_s = (prior_spec.scale == Hyper::Estimated).then(|| bounded(prior_spec.log_s_range));
        let log_nu = (prior.uses_nu() && prior_spec.nu == Hyper::Estimated).then(|| bounded(prior_spec.log_nu_range));
        let log_aux = family.aux_name().map(|a| {
            bounded(if a == "phi" {
                prior_spec.log_phi_range
            } else {
                prior_spec.log_sigma_range
            })
        });
        let beta = next..next + structure.n_beta();
        let psi = beta.end..beta.end + structure.n_psi();
        let eta = psi.end..psi.end + structure.n_eta();
        let dim = eta.end;
        Ok(Self {
            y,
            offset,
            family,
            prior,
            prior_spec,
            structure,
            constant_prior,
            layout: ParamLayout {
                c,
                log_s,
                log_nu,
                log_aux,
                beta,
                psi,
                eta,
                dim,
            },
        })
    }

    /// The same model restricted to a subset of observations; parameter
    /// layout is unchanged.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            y: rows.iter().map(|&r| self.y[r]).collect(),
            offset: rows.iter().map(|&r| self.offset[r]).collect(),
            structure: self.structure.select_rows(rows),
            ..self.clone()
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Names of the natural-scale parameters, in draw order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["c".to_string()];
        if self.layout.log_s.is_some() {
            names.push("s".into());
        }
        if self.layout.log_nu.is_some() {
            names.push("nu".into());
        }
        if let Some(a) = self.family.aux_name() {
            names.push(a.into());
        }
        names.extend(self.structure.x().names());
        if let MeanStructure::RenshawHaberman { z, weights, .. } = &self.structure {
            names.extend(z.names());
            names.extend(weights.names());
        }
        names
    }

    /// Number of leading unshrunk entries (constant and hyperparameters).
    pub fn n_unshrunk(&self) -> usize {
        self.layout.n_unshrunk()
    }

    fn fixed_scale(&self) -> f64 {
        match self.prior_spec.scale {
            Hyper::Fixed(s) => s,
            Hyper::Estimated => (0.5 * (self.prior_spec.log_s_range.0 + self.prior_spec.log_s_range.1)).exp(),
        }
    }

    fn fixed_nu(&self) -> f64 {
        match (self.prior.name(), self.prior_spec.nu) {
            ("cauchy", _) => 1.0,
            ("t2", _) => 2.0,
            (_, Hyper::Fixed(v)) => v,
            (_, Hyper::Estimated) => (0.5 * (self.prior_spec.log_nu_range.0 + self.prior_spec.log_nu_range.1)).exp(),
        }
    }

    pub fn natural(&self, theta: &[f64]) -> NaturalParams {
        let l = &self.layout;
        NaturalParams {
            c: l.c.constrain(theta[l.c.index]).0,
            scale: l
                .log_s
                .map(|b| b.constrain(theta[b.index]).0.exp())
                .unwrap_or_else(|| self.fixed_scale()),
            nu: l
                .log_nu
                .map(|b| b.constrain(theta[b.index]).0.exp())
                .unwrap_or_else(|| self.fixed_nu()),
            aux: l.log_aux.map(|b| b.constrain(theta[b.index]).0.exp()).unwrap_or(f64::NAN),
            beta: theta[l.beta.clone()].to_vec(),
            psi: theta[l.psi.clone()].to_vec(),
            eta: theta[l.eta.clone()].to_vec(),
        }
    }

    /// Natural-scale draw vector in [`Model::param_names`] order.
    pub fn natural_vector(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.natural(theta);
        let mut out = vec![p.c];
        if self.layout.log_s.is_some() {
            out.push(p.scale);
        }
        if self.layout.log_nu.is_some() {
            out.push(p.nu);
        }
        if self.layout.log_aux.is_some() {
            out.push(p.aux);
        }
        out.extend(p.beta);
        out.extend(p.psi);
        out.extend(p.eta);
        out
    }

    /// Splits a natural-scale draw (as stored in a posterior sample).
    pub fn natural_from_vector(&self, v: &[f64]) -> NaturalParams {
        let l = &self.layout;
        let mut i = 1;
        let mut next = |present: bool, fallback: f64| {
            if present {
                i += 1;
                v[i - 1]
            } else {
                fallback
            }
        };
        let scale = next(l.log_s.is_some(), self.fixed_scale());
        let nu = next(l.log_nu.is_some(), self.fixed_nu());
        let aux = next(l.log_aux.is_some(), f64::NAN);
        NaturalParams {
            c: v[0],
            scale,
            nu,
            aux,
            beta: v[l.beta.clone()].to_vec(),
            psi: v[l.psi.clone()].to_vec(),
            eta: v[l.eta.clone()].to_vec(),
        }
    }

    /// Unconstrained start from named natural-scale values. Missing names
    /// keep [`Model::default_init`]; bounded scalars are kept well inside
    /// their intervals.
    pub fn init_from_named(&self, values: &std::collections::BTreeMap<String, f64>) -> Result<Vec<f64>> {
        let mut natural = self.natural_vector(&self.default_init());
        for (slot, name) in natural.iter_mut().zip(self.param_names()) {
            if let Some(&v) = values.get(&name) {
                if v.is_finite() {
                    *slot = v;
                }
            }
        }
        let mut theta = self.unconstrain_vector(&natural)?;
        for t in &mut theta[..self.layout.n_unshrunk()] {
            *t = t.clamp(-3.0, 3.0);
        }
        Ok(theta)
    }

    /// Inverse of [`Model::natural_vector`].
    pub fn unconstrain_vector(&self, natural: &[f64]) -> Result<Vec<f64>> {
        if natural.len() != self.layout.dim {
            return Err(Error::Dimension(format!("{} values for {} parameters", natural.len(), self.layout.dim)));
        }
        let l = &self.layout;
        let mut theta = natural.to_vec();
        theta[l.c.index] = l.c.unconstrain(natural[l.c.index]);
        for b in [l.log_s, l.log_nu, l.log_aux].into_iter().flatten() {
            theta[b.index] = b.unconstrain(natural[b.index].ln());
        }
        Ok(theta)
    }

    /// Initial point: shrunk parameters at zero, bounded scalars at their
    /// midpoints, and a small negative period slope for trend models.
    pub fn default_init(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.layout.dim];
        if let MeanStructure::RenshawHaberman { z, .. } = &self.structure {
            let r = self.layout.psi.clone();
            // first period column per population carries the initial slope
            let mut seen = std::collections::HashSet::new();
            for (i, col) in z.columns.iter().enumerate() {
                if seen.insert(col.population) {
                    theta[r.start + i] = -0.01;
                }
            }
        }
        theta
    }

    /// Sets the constant's initial value (natural scale) in an unconstrained vector.
    pub fn set_constant(&self, theta: &mut [f64], c: f64) {
        let b = self.layout.c;
        theta[b.index] = b.unconstrain(c.clamp(b.lo, b.hi));
    }

    pub fn evaluate_mean(&self, p: &NaturalParams) -> MeanEval {
        self.structure.evaluate(&p.mean_params())
    }

    /// Per-observation log-likelihood at natural parameters.
    pub fn pointwise_loglik(&self, p: &NaturalParams) -> Vec<f64> {
        let eval = self.evaluate_mean(p);
        eval.m_hat
            .iter()
            .zip(&self.offset)
            .zip(&self.y)
            .map(|((m, o), &y)| self.family.log_density(y, m + o, p.aux))
            .collect()
    }

    /// Expected value of each observation.
    pub fn fitted_means(&self, p: &NaturalParams) -> Vec<f64> {
        let eval = self.evaluate_mean(p);
        eval.m_hat
            .iter()
            .zip(&self.offset)
            .map(|(m, o)| if self.family.log_link() { (m + o).exp() } else { *m })
            .collect()
    }

    /// Log prior of the shrunk parameters plus hyperprior densities.
    pub fn log_prior(&self, p: &NaturalParams) -> f64 {
        let mut lp: f64 = p
            .beta
            .iter()
            .chain(&p.psi)
            .chain(&p.eta)
            .map(|&b| self.prior.log_density(b, p.scale, p.nu))
            .sum();
        let l = &self.layout;
        for b in [Some(l.c), l.log_s, l.log_nu, l.log_aux].into_iter().flatten() {
            lp -= b.width().ln();
        }
        if self.constant_prior == ConstantPrior::Flat {
            lp += p.c;
        }
        lp
    }

    /// Log-likelihood plus log prior at natural parameters (no Jacobian).
    /// Negated with fixed hyperparameters this is the penalized objective.
    pub fn joint_log_density(&self, p: &NaturalParams) -> f64 {
        self.pointwise_loglik(p).iter().sum::<f64>() + self.log_prior(p)
    }

    /// Unconstrained target with Jacobian, and its gradient.
    pub fn target_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.target_grad_with(theta, grad, false)
    }

    /// With `gaussian_proxy` each shrinkage prior is replaced by a normal of
    /// the same variance (the scale squared when infinite), which is smooth
    /// at zero.
    fn target_grad_with(&self, theta: &[f64], grad: &mut [f64], gaussian_proxy: bool) -> f64 {
        let l = &self.layout;
        grad.iter_mut().for_each(|g| *g = 0.0);

        let (c, dc, jac_c, djac_c) = l.c.constrain(theta[l.c.index]);
        let mut lp = jac_c - l.c.width().ln();
        let mut d_c_total = 0.0;
        if self.constant_prior == ConstantPrior::Flat {
            lp += c;
            d_c_total += 1.0;
        }

        let (scale, ds) = match l.log_s {
            Some(b) => {
                let (v, dv, j, dj) = b.constrain(theta[b.index]);
                lp += j - b.width().ln();
                grad[b.index] += dj;
                (v.exp(), Some((b.index, dv)))
            }
            None => (self.fixed_scale(), None),
        };
        let (nu, dn) = match l.log_nu {
            Some(b) => {
                let (v, dv, j, dj) = b.constrain(theta[b.index]);
                lp += j - b.width().ln();
                grad[b.index] += dj;
                (v.exp(), Some((b.index, dv)))
            }
            None => (self.fixed_nu(), None),
        };
        let (aux, da) = match l.log_aux {
            Some(b) => {
                let (v, dv, j, dj) = b.constrain(theta[b.index]);
                lp += j - b.width().ln();
                grad[b.index] += dj;
                (v.exp(), Some((b.index, dv)))
            }
            None => (f64::NAN, None),
        };

        // shrinkage priors
        let mut d_log_s = 0.0;
        let mut d_log_nu = 0.0;
        let proxy_var = self.prior.variance(scale, nu).unwrap_or(scale * scale);
        for i in l.beta.start..l.eta.end {
            if gaussian_proxy {
                let b = theta[i];
                lp -= 0.5 * (b * b / proxy_var + (2.0 * std::f64::consts::PI * proxy_var).ln());
                grad[i] -= b / proxy_var;
                d_log_s += b * b / proxy_var - 1.0;
                continue;
            }
            let g = self.prior.grad(theta[i], scale, nu);
            lp += g.log_density;
            grad[i] += g.d_b;
            d_log_s += g.d_log_scale;
            d_log_nu += g.d_log_nu;
        }

        // likelihood
        let params = MeanParams {
            c,
            beta: &theta[l.beta.clone()],
            psi: &theta[l.psi.clone()],
            eta: &theta[l.eta.clone()],
        };
        let eval = self.structure.evaluate(&params);
        let mut g_m = vec![0.0; self.n_obs()];
        let mut d_log_aux = 0.0;
        for j in 0..self.n_obs() {
            let (ll, de, daux) = self.family.log_density_grad(self.y[j], eval.m_hat[j] + self.offset[j], aux);
            lp += ll;
            g_m[j] = de;
            d_log_aux += daux;
        }
        let mg = self.structure.backprop(&eval, &g_m);
        d_c_total += mg.c;
        grad[l.c.index] += d_c_total * dc + djac_c;
        for (g, v) in grad[l.beta.clone()].iter_mut().zip(&mg.beta) {
            *g += v;
        }
        for (g, v) in grad[l.psi.clone()].iter_mut().zip(&mg.psi) {
            *g += v;
        }
        for (g, v) in grad[l.eta.clone()].iter_mut().zip(&mg.eta) {
            *g += v;
        }
        if let Some((i, dv)) = ds {
            grad[i] += d_log_s * dv;
        }
        if let Some((i, dv)) = dn {
            grad[i] += d_log_nu * dv;
        }
        if let Some((i, dv)) = da {
            grad[i] += d_log_aux * dv;
        }
        lp
    }
}

impl Target for Model {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.target_grad(theta, grad)
    }

    fn param_names(&self) -> Vec<String> {
        Model::param_names(self)
    }

    fn precision_hint(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        Some(numeric_precision(theta, |q, g| {
            self.target_grad_with(q, g, true);
        }))
    }

    fn constrain(&self, theta: &[f64]) -> Vec<f64> {
        self.natural_vector(theta)
    }

    fn pointwise_loglik(&self, theta: &[f64]) -> Option<Vec<f64>> {
        Some(Model::pointwise_loglik(self, &self.natural(theta)))
    }
}
