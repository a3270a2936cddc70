//! Fitted curves per population from one parameter draw: trend (period
//! levels), age trend weights, age levels and cohort levels.

use crate::design::{LevelCurve, RowIndex, VariableKind};
use crate::likelihood::{trend_weights, MeanStructure};
use crate::model::{Model, NaturalParams};

/// Curves for one population. The second population's curves include the
/// first's (its own parameters are differences).
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationCurves {
    /// Period levels by dense year.
    pub trend: Vec<f64>,
    /// Trend weight by dense age (all 1 for linear models).
    pub alpha: Vec<f64>,
    pub age: Vec<f64>,
    pub cohort: Vec<f64>,
    /// Constant plus any difference constant.
    pub constant: f64,
}

impl PopulationCurves {
    /// Log rate at dense (age, year, cohort) positions. Cohorts outside the
    /// fitted range are continued with `cohort_slope` past the end and held
    /// at the first level before the start.
    pub fn log_rate(&self, age: usize, year_level: f64, cohort: isize, cohort_slope: f64) -> f64 {
        let n = self.cohort.len() as isize;
        let coh = if n == 0 {
            0.0
        } else if cohort < 1 {
            self.cohort[0]
        } else if cohort > n {
            self.cohort[n as usize - 1] + cohort_slope * (cohort - n) as f64
        } else {
            self.cohort[cohort as usize - 1]
        };
        self.constant + self.age[age - 1] + coh + self.alpha[age - 1] * year_level
    }
}

fn sum_curves(curves: &[LevelCurve], kind: VariableKind, population: usize, extent: usize) -> Vec<f64> {
    let mut out = vec![0.0; extent];
    for c in curves.iter().filter(|c| c.kind == kind && c.population <= population) {
        for (o, v) in out.iter_mut().zip(&c.levels) {
            *o += v;
        }
    }
    out
}

pub fn rows_of(model: &Model) -> &RowIndex {
    &model.structure.x().rows
}

/// Curves for every population at natural parameters `p`.
pub fn population_curves(model: &Model, p: &NaturalParams) -> Vec<PopulationCurves> {
    let x = model.structure.x();
    let rows = &x.rows;
    let [na, ny, nc] = rows.extents;
    let mut curves = x.level_curves(&p.beta);
    let mut alpha = vec![1.0; rows.populations.len() * na];
    if let MeanStructure::RenshawHaberman {
        z,
        weights,
        softmax_temperature,
        ..
    } = &model.structure
    {
        curves.extend(z.level_curves(&p.psi));
        alpha = trend_weights(weights, &p.eta, *softmax_temperature).0;
    }
    (0..rows.populations.len())
        .map(|pop| {
            let diff_const: f64 = x
                .columns
                .iter()
                .zip(&p.beta)
                .filter(|(c, _)| c.kind == VariableKind::DiffConstant && c.population <= pop)
                .map(|(_, b)| b)
                .sum();
            PopulationCurves {
                trend: sum_curves(&curves, VariableKind::Period, pop, ny),
                alpha: alpha[pop * na..(pop + 1) * na].to_vec(),
                age: sum_curves(&curves, VariableKind::Age, pop, na),
                cohort: sum_curves(&curves, VariableKind::Cohort, pop, nc),
                constant: p.c + diff_const,
            }
        })
        .collect()
}

/// Least-squares `(intercept, slope)` of `y` against `0, 1, 2, ...`.
pub fn ls_line(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    if y.len() < 2 {
        return (y.first().copied().unwrap_or(0.0), 0.0);
    }
    let xm = (n - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (v - ym);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    (ym - slope * xm, slope)
}

/// `y` minus its least-squares line.
pub fn detrend(y: &[f64]) -> Vec<f64> {
    let (a, b) = ls_line(y);
    y.iter().enumerate().map(|(i, v)| v - a - b * i as f64).collect()
}

/// Least-squares slope over the last `window` values.
pub fn terminal_slope(y: &[f64], window: usize) -> f64 {
    let w = window.min(y.len());
    ls_line(&y[y.len() - w..]).1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detrended_series_has_zero_slope() {
        let y: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin() + 0.3 * i as f64 - 2.0).collect();
        let r = detrend(&y);
        assert!(ls_line(&r).1.abs() < 1e-10);
        assert!(ls_line(&r).0.abs() < 1e-10);
    }

    #[test]
    fn terminal_slope_uses_the_window() {
        let y: Vec<f64> = (0..10).map(|i| if i < 5 { 0.0 } else { 2.0 * (i - 5) as f64 }).collect();
        assert!((terminal_slope(&y, 5) - 2.0).abs() < 1e-12);
        assert!((terminal_slope(&y, 50) - ls_line(&y).1).abs() < 1e-12);
    }
}
