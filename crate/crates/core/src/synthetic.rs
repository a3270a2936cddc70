//! Synthetic mortality data from known piecewise-linear truths, for tests,
//! calibration and the CLI's demo data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{load_rectangles, AgeYearGrid, MortalityFrame, PopulationTables};
use crate::likelihood::family_by_name;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub first_age: i32,
    pub n_ages: usize,
    pub first_year: i32,
    pub n_years: usize,
    pub populations: Vec<String>,
    /// Person-years per cell.
    pub exposure: f64,
    /// Log rate at the youngest age, first year.
    pub base_log_rate: f64,
    /// Observation family used to draw the deaths.
    pub family: String,
    /// Negative-binomial dispersion.
    pub phi: f64,
    /// Age-varying trend weights (Renshaw-Haberman truth) instead of a
    /// common period effect.
    pub trend_weights: bool,
    /// Give every population the first population's truth.
    pub identical: bool,
    pub cohort_effect: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            first_age: 60,
            n_ages: 20,
            first_year: 1990,
            n_years: 15,
            populations: vec!["A".into()],
            exposure: 50_000.0,
            base_log_rate: -4.6,
            family: "poisson".into(),
            phi: 3000.0,
            trend_weights: false,
            identical: true,
            cohort_effect: true,
        }
    }
}

/// Piecewise-linear curve with slope `s0` from position 1 and slope changes
/// `(knot, delta)` taking effect after each knot.
fn kinked(k: usize, s0: f64, kinks: &[(usize, f64)]) -> f64 {
    let k = k as f64;
    let mut v = s0 * (k - 1.0);
    for &(knot, delta) in kinks {
        v += delta * (k - knot as f64).max(0.0);
    }
    v
}

/// True log rates per population as `[age][year]` grids.
pub fn true_log_rates(spec: &SyntheticSpec) -> Vec<Vec<Vec<f64>>> {
    let (na, ny) = (spec.n_ages, spec.n_years);
    let n_coh = na + ny - 1;
    (0..spec.populations.len())
        .map(|p| {
            let q = if spec.identical { 0.0 } else { p as f64 };
            let mid_a = na / 2 + 1;
            let mid_y = ny / 2 + 1;
            let mid_c = n_coh / 2 + 1;
            let mut grid = vec![vec![0.0; ny]; na];
            for (u, row) in grid.iter_mut().enumerate() {
                let age = kinked(u + 1, 0.085, &[(mid_a, 0.02), (na.saturating_sub(2).max(2), -0.015)]);
                // weights peak at a younger-old age; a weight linear in age
                // would be absorbed by a quadratic cohort effect
                let alpha = if spec.trend_weights {
                    trend_weight(u as f64 / (na.max(2) - 1) as f64)
                } else {
                    1.0
                };
                for (n, cell) in row.iter_mut().enumerate() {
                    let trend = kinked(n + 1, -0.012 - 0.004 * q, &[(mid_y, -0.012 + 0.006 * q)]);
                    // cohort position runs from the oldest (first year, last age) upwards
                    let w = n + na - u;
                    let cohort = if spec.cohort_effect {
                        kinked(w, 0.0, &[(mid_c, -0.006), (mid_c + 4, 0.004 - 0.002 * q)])
                    } else {
                        0.0
                    };
                    *cell = spec.base_log_rate + 0.08 * q + age + alpha * trend + cohort;
                }
            }
            grid
        })
        .collect()
}

/// Age weight of the trend at relative age position `x` in [0, 1].
pub fn trend_weight(x: f64) -> f64 {
    0.2 + 0.8 * (-((x - 0.35) / 0.25).powi(2)).exp()
}

/// Draws deaths around the true rates and returns the frame (untrimmed)
/// with the true log rates in frame row order.
pub fn simulate_frame(spec: &SyntheticSpec, seed: u64) -> Result<(MortalityFrame, Vec<f64>)> {
    if spec.populations.is_empty() || spec.populations.len() > 2 {
        return Err(Error::InvalidArgument("one or two populations".into()));
    }
    if spec.n_ages == 0 || spec.n_years == 0 || !(spec.exposure > 0.0) {
        return Err(Error::InvalidArgument("empty grid or non-positive exposure".into()));
    }
    let family = family_by_name(&spec.family)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = true_log_rates(spec);
    let mut tables = Vec::new();
    for (p, name) in spec.populations.iter().enumerate() {
        let mut deaths = vec![vec![0.0; spec.n_years]; spec.n_ages];
        for u in 0..spec.n_ages {
            for n in 0..spec.n_years {
                let mu = spec.exposure * truth[p][u][n].exp();
                deaths[u][n] = family.sample(mu, spec.phi, &mut rng).round();
            }
        }
        tables.push(PopulationTables {
            name: name.clone(),
            deaths: AgeYearGrid::new(spec.first_age, spec.first_year, deaths)?,
            exposures: AgeYearGrid::filled(spec.first_age, spec.first_year, spec.n_ages, spec.n_years, spec.exposure),
        });
    }
    let frame = load_rectangles(&tables)?;
    let log_rates = (0..frame.len())
        .map(|j| truth[frame.pop_idx[j]][frame.age_idx[j] - 1][frame.year_idx[j] - 1])
        .collect();
    Ok((frame, log_rates))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let spec = SyntheticSpec {
            populations: vec!["A".into(), "B".into()],
            ..Default::default()
        };
        let (f1, t1) = simulate_frame(&spec, 3).unwrap();
        let (f2, _) = simulate_frame(&spec, 3).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(f1.len(), 2 * 20 * 15);
        // identical truths
        assert_eq!(t1[..300], t1[300..]);
        let total: u64 = f1.deaths.iter().sum();
        let expected: f64 = t1.iter().map(|m| 50_000.0 * m.exp()).sum();
        assert!((total as f64 - expected).abs() < 5.0 * expected.sqrt());
    }

    #[test]
    fn trend_weights_vary_by_age() {
        let spec = SyntheticSpec {
            trend_weights: true,
            cohort_effect: false,
            ..Default::default()
        };
        let g = &true_log_rates(&spec)[0];
        let change = |u: usize| g[u][14] - g[u][0];
        assert!(change(7) < change(0) && change(7) < change(19) && change(19) < 0.0);
        let ratio = change(19) / change(7);
        assert!((ratio - trend_weight(1.0) / trend_weight(7.0 / 19.0)).abs() < 1e-12);
    }
}
