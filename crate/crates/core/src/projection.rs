//! Trend-continuation projections with posterior bands.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ProjectionConfig;
use crate::curves::{population_curves, terminal_slope, PopulationCurves};
use crate::error::{Error, Result};
use crate::frame::MortalityFrame;
use crate::mcmc::{quantile, PosteriorSample};
use crate::model::Model;

/// `annual^years`: the factor after compounding an annual change.
pub fn compound_factor(annual: f64, years: u32) -> f64 {
    annual.powi(years as i32)
}

/// Mortality factor `exp(slope * alpha * t)` after `t` years of a log-rate
/// trend `slope` with age weight `alpha`.
pub fn trend_factor(slope: f64, alpha: f64, t: f64) -> f64 {
    (slope * alpha * t).exp()
}

/// Posterior mean and quantiles of one projected quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub quantiles: Vec<f64>,
}

impl Band {
    fn of(mut values: Vec<f64>, probs: &[f64]) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.sort_by(|a, b| a.total_cmp(b));
        Self {
            mean,
            quantiles: probs.iter().map(|&p| quantile(&values, p)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub population: String,
    pub age: i32,
    pub year: i32,
    pub horizon: usize,
    /// Trend-only factor relative to the last fitted year.
    pub factor: Band,
    /// Projected death rate including age and cohort levels.
    pub rate: Band,
    pub deaths: Option<Band>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub quantiles: Vec<f64>,
    pub rows: Vec<ProjectionRow>,
    /// Posterior mean terminal trend slope per population.
    pub trend_slopes: Vec<f64>,
}

struct DrawInfo {
    curves: Vec<PopulationCurves>,
    trend_slope: Vec<f64>,
    cohort_slope: Vec<f64>,
    aux: f64,
}

/// Continues each draw's terminal period slope (least squares over the last
/// `trend_window` fitted years) for `horizon` years. With `include_cohort`
/// the cohort curve's terminal slope is continued for unseen cohorts,
/// otherwise they keep the last fitted cohort level. With `simulate`,
/// deaths are drawn per draw at the last observed exposure.
pub fn project(model: &Model, sample: &PosteriorSample, frame: &MortalityFrame, cfg: &ProjectionConfig, seed: u64) -> Result<Projection> {
    if cfg.horizon == 0 {
        return Err(Error::InvalidArgument("projection horizon must be positive".into()));
    }
    if sample.n_draws() == 0 {
        return Err(Error::InvalidArgument("no posterior draws".into()));
    }
    if sample.names != model.param_names() {
        return Err(Error::Dimension("posterior sample does not match the model's parameters".into()));
    }
    let draws: Vec<DrawInfo> = sample
        .draws
        .par_iter()
        .map(|d| {
            let p = model.natural_from_vector(d);
            let curves = population_curves(model, &p);
            DrawInfo {
                trend_slope: curves.iter().map(|c| terminal_slope(&c.trend, cfg.trend_window)).collect(),
                cohort_slope: curves
                    .iter()
                    .map(|c| if cfg.include_cohort && c.cohort.len() >= 2 { terminal_slope(&c.cohort, cfg.trend_window) } else { 0.0 })
                    .collect(),
                curves,
                aux: p.aux,
            }
        })
        .collect();

    let n_pop = frame.n_populations();
    let (na, ny) = (frame.n_ages, frame.n_years);
    let last_year = frame.first_year + ny as i32 - 1;
    let coh_offset = frame.first_year - frame.first_age - frame.first_cohort;
    let mut cells = Vec::new();
    for p in 0..n_pop {
        let expo = frame.exposures_grid(p);
        for u in 1..=na {
            // latest observed exposure for the age
            let e = expo.values[u - 1].iter().rev().copied().find(|v| v.is_finite()).unwrap_or(f64::NAN);
            for t in 1..=cfg.horizon {
                cells.push((p, u, t, e));
            }
        }
    }
    let rows: Vec<ProjectionRow> = cells
        .par_iter()
        .map(|&(p, u, t, e)| {
            let n_future = (ny + t) as isize;
            let cohort = n_future - u as isize + 1 + coh_offset as isize;
            let mut factor = Vec::with_capacity(draws.len());
            let mut rate = Vec::with_capacity(draws.len());
            for d in &draws {
                let c = &d.curves[p];
                let level = c.trend[ny - 1] + d.trend_slope[p] * t as f64;
                factor.push((d.trend_slope[p] * c.alpha[u - 1] * t as f64).exp());
                rate.push(c.log_rate(u, level, cohort, d.cohort_slope[p]).exp());
            }
            let deaths = cfg.simulate.then(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((p * na + u) * cfg.horizon + t) as u64);
                let sims = rate
                    .iter()
                    .zip(&draws)
                    .map(|(r, d)| model.family.sample(r * e, d.aux, &mut rng))
                    .collect();
                Band::of(sims, &cfg.quantiles)
            });
            ProjectionRow {
                population: frame.populations[p].clone(),
                age: frame.first_age + u as i32 - 1,
                year: last_year + t as i32,
                horizon: t,
                factor: Band::of(factor, &cfg.quantiles),
                rate: Band::of(rate, &cfg.quantiles),
                deaths,
            }
        })
        .collect();
    let trend_slopes = (0..n_pop)
        .map(|p| draws.iter().map(|d| d.trend_slope[p]).sum::<f64>() / draws.len() as f64)
        .collect();
    Ok(Projection {
        quantiles: cfg.quantiles.clone(),
        rows,
        trend_slopes,
    })
}

fn q_label(prefix: &str, q: f64) -> String {
    format!("{prefix}_q{}", (q * 1000.0).round() / 10.0)
}

impl Projection {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let simulate = self.rows.first().is_some_and(|r| r.deaths.is_some());
        let mut header: Vec<String> = ["population", "age", "year", "horizon"].iter().map(|s| s.to_string()).collect();
        let mut groups = vec!["factor", "rate"];
        if simulate {
            groups.push("deaths");
        }
        for g in &groups {
            header.push(format!("{g}_mean"));
            header.extend(self.quantiles.iter().map(|&q| q_label(g, q)));
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.population.clone(), r.age.to_string(), r.year.to_string(), r.horizon.to_string()];
            for band in [Some(&r.factor), Some(&r.rate), r.deaths.as_ref()].into_iter().flatten() {
                rec.push(band.mean.to_string());
                rec.extend(band.quantiles.iter().map(|v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
