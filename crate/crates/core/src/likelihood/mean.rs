use serde::{Deserialize, Serialize};

use crate::design::{SlopeChangeDesign, TrendWeightDesign};
use crate::error::{Error, Result};

/// Mean structure of the log rate (or of the response, for curves).
///
/// * APC: `m = c + X beta`
/// * Renshaw-Haberman: `m = c + X beta + A o (Z psi)` with per-age weights
///   `alpha = exp(alpha1 - max(alpha1))` per population, `alpha1 = Y eta`
/// * Curve1D: `m = c + X beta` over one ordered index
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum MeanStructure {
    Apc {
        x: SlopeChangeDesign,
    },
    RenshawHaberman {
        x: SlopeChangeDesign,
        z: SlopeChangeDesign,
        weights: TrendWeightDesign,
        /// Smooth-max temperature replacing the hard max; `None` uses the max.
        softmax_temperature: Option<f64>,
    },
    Curve1D {
        x: SlopeChangeDesign,
    },
}

/// Parameter blocks of a mean structure, borrowed from a full vector.
#[derive(Debug, Clone, Copy)]
pub struct MeanParams<'a> {
    pub c: f64,
    pub beta: &'a [f64],
    pub psi: &'a [f64],
    pub eta: &'a [f64],
}

/// Gradient of a scalar with respect to each mean parameter block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeanGradient {
    pub c: f64,
    pub beta: Vec<f64>,
    pub psi: Vec<f64>,
    pub eta: Vec<f64>,
}

/// Intermediate quantities of one mean evaluation.
#[derive(Debug, Clone)]
pub struct MeanEval {
    pub m_hat: Vec<f64>,
    /// `Z psi` per observation (empty for linear structures).
    pub trend: Vec<f64>,
    /// Per (population, age) weight (empty for linear structures).
    pub alpha: Vec<f64>,
    /// Per-population derivative of the subtracted max w.r.t. `alpha1`.
    max_weights: Vec<f64>,
}

impl MeanStructure {
    pub fn apc(x: SlopeChangeDesign) -> Self {
        MeanStructure::Apc { x }
    }

    /// Restricts every block to the given observation rows.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        match self {
            MeanStructure::Apc { x } => MeanStructure::Apc { x: x.select_rows(rows) },
            MeanStructure::Curve1D { x } => MeanStructure::Curve1D { x: x.select_rows(rows) },
            MeanStructure::RenshawHaberman {
                x,
                z,
                weights,
                softmax_temperature,
            } => {
                let mut weights = weights.clone();
                weights.selector = rows.iter().map(|&r| weights.selector[r]).collect();
                MeanStructure::RenshawHaberman {
                    x: x.select_rows(rows),
                    z: z.select_rows(rows),
                    weights,
                    softmax_temperature: *softmax_temperature,
                }
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            MeanStructure::Apc { .. } => "apc",
            MeanStructure::RenshawHaberman { .. } => "rh",
            MeanStructure::Curve1D { .. } => "curve1d",
        }
    }

    pub fn n_obs(&self) -> usize {
        self.x().n_rows()
    }

    pub fn x(&self) -> &SlopeChangeDesign {
        match self {
            MeanStructure::Apc { x } | MeanStructure::Curve1D { x } => x,
            MeanStructure::RenshawHaberman { x, .. } => x,
        }
    }

    pub fn n_beta(&self) -> usize {
        self.x().n_cols()
    }

    pub fn n_psi(&self) -> usize {
        match self {
            MeanStructure::RenshawHaberman { z, .. } => z.n_cols(),
            _ => 0,
        }
    }

    pub fn n_eta(&self) -> usize {
        match self {
            MeanStructure::RenshawHaberman { weights, .. } => weights.n_cols(),
            _ => 0,
        }
    }

    /// Evaluates `m_hat` and the pieces needed for its gradient.
    pub fn evaluate(&self, p: &MeanParams<'_>) -> MeanEval {
        let mut m_hat = vec![p.c; self.n_obs()];
        self.x().mul_vec_add(p.beta, &mut m_hat);
        match self {
            MeanStructure::RenshawHaberman {
                z,
                weights,
                softmax_temperature,
                ..
            } => {
                let trend = z.mul_vec(p.psi);
                let (alpha, max_weights) = trend_weights(weights, p.eta, *softmax_temperature);
                for (j, m) in m_hat.iter_mut().enumerate() {
                    *m += alpha[weights.selector[j]] * trend[j];
                }
                MeanEval {
                    m_hat,
                    trend,
                    alpha,
                    max_weights,
                }
            }
            _ => MeanEval {
                m_hat,
                trend: Vec::new(),
                alpha: Vec::new(),
                max_weights: Vec::new(),
            },
        }
    }

    /// Chain rule: given `g = dL/dm_hat`, returns `dL/d(c, beta, psi, eta)`.
    pub fn backprop(&self, eval: &MeanEval, g: &[f64]) -> MeanGradient {
        let mut out = MeanGradient {
            c: g.iter().sum(),
            beta: self.x().tmul_vec(g),
            ..Default::default()
        };
        if let MeanStructure::RenshawHaberman { z, weights, .. } = self {
            let n_ages = weights.n_ages;
            let weighted: Vec<f64> = g
                .iter()
                .enumerate()
                .map(|(j, gj)| gj * eval.alpha[weights.selector[j]])
                .collect();
            out.psi = z.tmul_vec(&weighted);
            // h_r = dL/dalpha_r
            let mut h = vec![0.0; weights.n_rows()];
            for (j, gj) in g.iter().enumerate() {
                h[weights.selector[j]] += gj * eval.trend[j];
            }
            let mut d_alpha1: Vec<f64> = h.iter().zip(&eval.alpha).map(|(h, a)| h * a).collect();
            for p in 0..weights.populations.len() {
                let block = p * n_ages..(p + 1) * n_ages;
                let total: f64 = d_alpha1[block.clone()].iter().sum();
                for r in block {
                    d_alpha1[r] -= eval.max_weights[r] * total;
                }
            }
            out.eta = (0..weights.n_cols())
                .map(|c| weights.column(c).iter().zip(&d_alpha1).map(|(y, d)| y * d).sum())
                .collect();
        }
        out
    }

    /// `m_hat` only, with a finiteness check.
    pub fn mean_vector(&self, p: &MeanParams<'_>) -> Result<Vec<f64>> {
        self.check_dims(p)?;
        let m = self.evaluate(p).m_hat;
        if let Some(j) = m.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: j,
                what: "log mean".into(),
            });
        }
        Ok(m)
    }

    /// `mu = exposure * exp(m_hat)`.
    pub fn expected_counts(&self, p: &MeanParams<'_>, exposures: &[f64]) -> Result<Vec<f64>> {
        let m = self.mean_vector(p)?;
        m.iter()
            .zip(exposures)
            .enumerate()
            .map(|(j, (m, e))| {
                let mu = e * m.exp();
                if mu.is_finite() {
                    Ok(mu)
                } else {
                    Err(Error::NonFinite {
                        index: j,
                        what: format!("exp of log mean {m}"),
                    })
                }
            })
            .collect()
    }

    fn check_dims(&self, p: &MeanParams<'_>) -> Result<()> {
        if p.beta.len() != self.n_beta() || p.psi.len() != self.n_psi() || p.eta.len() != self.n_eta() {
            return Err(Error::Dimension(format!(
                "parameter blocks ({}, {}, {}) for a structure expecting ({}, {}, {})",
                p.beta.len(),
                p.psi.len(),
                p.eta.len(),
                self.n_beta(),
                self.n_psi(),
                self.n_eta()
            )));
        }
        Ok(())
    }
}

/// Per-(population, age) weights `exp(alpha1 - max alpha1)` and the
/// derivative of the subtracted max with respect to each `alpha1`.
pub fn trend_weights(weights: &TrendWeightDesign, eta: &[f64], temperature: Option<f64>) -> (Vec<f64>, Vec<f64>) {
    let alpha1 = weights.alpha1(eta);
    let n_ages = weights.n_ages;
    let mut alpha = vec![0.0; alpha1.len()];
    let mut dmax = vec![0.0; alpha1.len()];
    for p in 0..weights.populations.len() {
        let block = &alpha1[p * n_ages..(p + 1) * n_ages];
        let top = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shift = match temperature {
            Some(t) if t > 0.0 => {
                let s: f64 = block.iter().map(|a| ((a - top) / t).exp()).sum();
                for (k, a) in block.iter().enumerate() {
                    dmax[p * n_ages + k] = ((a - top) / t).exp() / s;
                }
                top + t * s.ln()
            }
            _ => {
                // subgradient at ties: the first maximizer
                let m = block.iter().position(|&a| a == top).unwrap_or(0);
                dmax[p * n_ages + m] = 1.0;
                top
            }
        };
        for (k, a) in block.iter().enumerate() {
            alpha[p * n_ages + k] = (a - shift).exp();
        }
    }
    (alpha, dmax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_frame_design, RowIndex, VariableKind};
    use crate::frame::{load_rectangles, AgeYearGrid, PopulationTables};

    fn frame(n_pop: usize, n_ages: usize, n_years: usize) -> crate::frame::MortalityFrame {
        let t: Vec<_> = (0..n_pop)
            .map(|p| PopulationTables {
                name: format!("P{p}"),
                deaths: AgeYearGrid::filled(60, 2000, n_ages, n_years, 1.0),
                exposures: AgeYearGrid::filled(60, 2000, n_ages, n_years, 1000.0),
            })
            .collect();
        load_rectangles(&t).unwrap()
    }

    fn rh(f: &crate::frame::MortalityFrame) -> MeanStructure {
        let full = build_frame_design(f, &[VariableKind::Age, VariableKind::Period, VariableKind::Cohort], f.n_populations() == 2).unwrap();
        MeanStructure::RenshawHaberman {
            x: full.select_kinds(&[VariableKind::Age, VariableKind::Cohort, VariableKind::DiffConstant]),
            z: full.select_kinds(&[VariableKind::Period]),
            weights: TrendWeightDesign::build(&RowIndex::from_frame(f)),
            softmax_temperature: None,
        }
    }

    #[test]
    fn constant_only_gives_flat_counts() {
        let f = frame(1, 3, 2);
        let x = build_frame_design(&f, &[VariableKind::Age], false).unwrap();
        let s = MeanStructure::apc(x);
        let beta = vec![0.0; s.n_beta()];
        let mu = s
            .expected_counts(&MeanParams { c: 0.01f64.ln(), beta: &beta, psi: &[], eta: &[] }, &f.exposures)
            .unwrap();
        assert!(mu.iter().all(|m| (m - 10.0).abs() < 1e-12));
    }

    #[test]
    fn rh_with_flat_weights_is_apc() {
        let f = frame(1, 4, 3);
        let s = rh(&f);
        let full = build_frame_design(&f, &[VariableKind::Age, VariableKind::Period, VariableKind::Cohort], false).unwrap();
        let apc = MeanStructure::apc(full.clone());
        let beta: Vec<f64> = (0..s.n_beta()).map(|i| 0.01 * i as f64 - 0.02).collect();
        let psi: Vec<f64> = (0..s.n_psi()).map(|i| -0.03 + 0.01 * i as f64).collect();
        // eta with only the constant-ramp-free part: zero gives alpha1 == 0 everywhere
        let eta = vec![0.0; s.n_eta()];
        let m_rh = s.mean_vector(&MeanParams { c: -4.0, beta: &beta, psi: &psi, eta: &eta }).unwrap();
        // map blocks back to the full APC column order
        let mut full_beta = vec![0.0; full.n_cols()];
        for (i, name) in s.x().names().iter().enumerate() {
            full_beta[full.position_of(name).unwrap()] = beta[i];
        }
        if let MeanStructure::RenshawHaberman { z, .. } = &s {
            for (i, name) in z.names().iter().enumerate() {
                full_beta[full.position_of(name).unwrap()] = psi[i];
            }
        }
        let m_apc = apc.mean_vector(&MeanParams { c: -4.0, beta: &full_beta, psi: &[], eta: &[] }).unwrap();
        for (a, b) in m_rh.iter().zip(&m_apc) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rh_matches_scalar_loop() {
        let f = frame(1, 4, 3);
        let s = rh(&f);
        let beta: Vec<f64> = (0..s.n_beta()).map(|i| 0.05 * ((i * 7 % 5) as f64 - 2.0)).collect();
        let psi = vec![-0.1, 0.04];
        let eta = vec![0.3, -0.2, 0.1, 0.05];
        let m = s.mean_vector(&MeanParams { c: -3.0, beta: &beta, psi: &psi, eta: &eta }).unwrap();

        // hand-rolled: level curves by direct summation of (k - i + 1)+
        let rampsum = |k: usize, params: &[(usize, f64)]| -> f64 {
            params.iter().map(|&(i, b)| ((k + 1).saturating_sub(i)) as f64 * b).sum()
        };
        let x = s.x();
        let age_params: Vec<(usize, f64)> = x.columns.iter().zip(&beta).filter(|(c, _)| c.kind == VariableKind::Age).map(|(c, &b)| (c.index, b)).collect();
        let coh_params: Vec<(usize, f64)> = x.columns.iter().zip(&beta).filter(|(c, _)| c.kind == VariableKind::Cohort).map(|(c, &b)| (c.index, b)).collect();
        let alpha1: Vec<f64> = (1..=4).map(|k| rampsum(k, &[(1, eta[0]), (2, eta[1]), (3, eta[2]), (4, eta[3])])).collect();
        let top = alpha1.iter().copied().fold(f64::MIN, f64::max);
        for j in 0..f.len() {
            let (a, y, w) = (f.age_idx[j], f.year_idx[j], f.cohort_idx[j]);
            let trend = rampsum(y, &[(2, psi[0]), (3, psi[1])]);
            let expect = -3.0 + rampsum(a, &age_params) + rampsum(w, &coh_params) + (alpha1[a - 1] - top).exp() * trend;
            assert!((m[j] - expect).abs() < 1e-12, "row {j}");
        }
    }

    #[test]
    fn weights_are_in_unit_interval_with_max_one() {
        let f = frame(2, 5, 3);
        let s = rh(&f);
        if let MeanStructure::RenshawHaberman { weights, .. } = &s {
            let eta: Vec<f64> = (0..weights.n_cols()).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.2).collect();
            let (alpha, _) = trend_weights(weights, &eta, None);
            for p in 0..2 {
                let block = &alpha[p * 5..(p + 1) * 5];
                assert!(block.iter().all(|&a| a > 0.0 && a <= 1.0));
                assert!(block.iter().any(|&a| a == 1.0));
            }
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for temp in [None, Some(0.5)] {
            let f = frame(2, 4, 3);
            let mut s = rh(&f);
            if let MeanStructure::RenshawHaberman { softmax_temperature, .. } = &mut s {
                *softmax_temperature = temp;
            }
            let beta: Vec<f64> = (0..s.n_beta()).map(|i| 0.03 * ((i * 5 % 7) as f64 - 3.0)).collect();
            let psi: Vec<f64> = (0..s.n_psi()).map(|i| -0.05 + 0.02 * i as f64).collect();
            let eta: Vec<f64> = (0..s.n_eta()).map(|i| 0.1 * ((i * 3 % 5) as f64 - 2.0) + 0.013 * i as f64).collect();
            let g: Vec<f64> = (0..s.n_obs()).map(|j| ((j * 7 % 11) as f64 - 5.0) * 0.1).collect();
            let loss = |c: f64, b: &[f64], p: &[f64], e: &[f64]| -> f64 {
                let m = s.evaluate(&MeanParams { c, beta: b, psi: p, eta: e }).m_hat;
                m.iter().zip(&g).map(|(m, g)| m * g).sum()
            };
            let eval = s.evaluate(&MeanParams { c: -2.0, beta: &beta, psi: &psi, eta: &eta });
            let grad = s.backprop(&eval, &g);
            let h = 1e-6;
            let check = |analytic: f64, numeric: f64| assert!((analytic - numeric).abs() < 1e-6 * numeric.abs().max(1.0), "{analytic} vs {numeric}");
            check(grad.c, (loss(-2.0 + h, &beta, &psi, &eta) - loss(-2.0 - h, &beta, &psi, &eta)) / (2.0 * h));
            for i in 0..eta.len() {
                let mut up = eta.clone();
                up[i] += h;
                let mut dn = eta.clone();
                dn[i] -= h;
                check(grad.eta[i], (loss(-2.0, &beta, &psi, &up) - loss(-2.0, &beta, &psi, &dn)) / (2.0 * h));
            }
            for i in 0..psi.len() {
                let mut up = psi.clone();
                up[i] += h;
                let mut dn = psi.clone();
                dn[i] -= h;
                check(grad.psi[i], (loss(-2.0, &beta, &up, &eta) - loss(-2.0, &beta, &dn, &eta)) / (2.0 * h));
            }
        }
    }

    #[test]
    fn blowup_is_reported() {
        let f = frame(1, 3, 2);
        let x = build_frame_design(&f, &[VariableKind::Age], false).unwrap();
        let s = MeanStructure::apc(x);
        let r = s.expected_counts(&MeanParams { c: 800.0, beta: &[0.0, 0.0], psi: &[], eta: &[] }, &f.exposures);
        assert!(matches!(r, Err(Error::NonFinite { index: 0, .. })));
    }
}
