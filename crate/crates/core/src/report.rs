//! Output files for a finished fit, and the saved fit state that later
//! commands reload.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::curves::{detrend, ls_line, population_curves, PopulationCurves};
use crate::error::{Error, Result};
use crate::frame::MortalityFrame;
use crate::loo::{psis_loo, write_loo_csv, write_pointwise_csv};
use crate::mcmc::{quantile, write_chain_stats_csv, write_summary_csv, PosteriorSample};
use crate::pipeline::{build_model, ActiveSet, FitReport, FittedModel, PipelineRun, PreparedData};

pub const HISTORY_HEADER: [&str; 11] = [
    "round", "attempt", "n_variables", "n_dropped", "n_restored", "loo", "nll", "penalty", "se_loo", "accepted", "note",
];

/// Writes `rows` under `header`; the header is written even with no rows.
pub fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn band(values: &mut [f64]) -> (f64, f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.sort_by(|a, b| a.total_cmp(b));
    (mean, quantile(values, 0.025), quantile(values, 0.975))
}

/// Mean and 95% band of one curve across draws.
fn curve_bands(draws: &[Vec<PopulationCurves>], pop: usize, pick: impl Fn(&PopulationCurves) -> &Vec<f64>) -> Vec<(f64, f64, f64)> {
    let len = pick(&draws[0][pop]).len();
    (0..len)
        .map(|i| {
            let mut v: Vec<f64> = draws.iter().map(|d| pick(&d[pop])[i]).collect();
            band(&mut v)
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes every output file for `run` into `outdir`.
pub fn emit_outputs(run: &PipelineRun, frame: &MortalityFrame, outdir: &Path) -> Result<()> {
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let fit = &run.fit;
    write_summary_csv(&fit.summary, &outdir.join("params.csv"))?;
    fit.sample.write_draws_csv(&outdir.join("draws.csv"))?;
    write_chain_stats_csv(&fit.sample.chain_stats, &outdir.join("chain_stats.csv"))?;
    write_loo_csv(&[(run.report.stage.clone(), fit.loo.clone())], &outdir.join("loo.csv"))?;
    write_pointwise_csv(&fit.loo, &outdir.join("loo_pointwise.csv"))?;
    let history: Vec<_> = run.report.rounds.iter().filter(|r| r.round > 0).collect();
    write_rows(&outdir.join("history.csv"), &HISTORY_HEADER, &history)?;
    write_rows(&outdir.join("table3.csv"), &["population", "kind", "count", "sum_abs_mean"], &run.report.counts)?;
    write_curves(fit, frame, outdir)?;
    write_fitted(fit, frame, outdir)?;
    write_text(&outdir.join("report.json"), &serde_json::to_string_pretty(&run.report)?)
}

fn write_curves(fit: &FittedModel, frame: &MortalityFrame, outdir: &Path) -> Result<()> {
    let model = &fit.model;
    let draws: Vec<Vec<PopulationCurves>> = fit
        .sample
        .draws
        .par_iter()
        .map(|d| population_curves(model, &model.natural_from_vector(d)))
        .collect();
    let mut trend = vec!["population,year,log_trend,q025,q975".to_string()];
    let mut weights = vec!["population,age,alpha,q025,q975".to_string()];
    let mut ages = vec!["population,age,log_factor,q025,q975,rotated".to_string()];
    let mut cohorts = vec!["population,cohort,log_factor,q025,q975,fitted_line".to_string()];
    for (p, name) in frame.populations.iter().enumerate() {
        for (i, (m, lo, hi)) in curve_bands(&draws, p, |c| &c.trend).into_iter().enumerate() {
            trend.push(format!("{name},{},{m},{lo},{hi}", frame.first_year + i as i32));
        }
        for (i, (m, lo, hi)) in curve_bands(&draws, p, |c| &c.alpha).into_iter().enumerate() {
            weights.push(format!("{name},{},{m},{lo},{hi}", frame.first_age + i as i32));
        }
        let age = curve_bands(&draws, p, |c| &c.age);
        let rotated = detrend(&age.iter().map(|b| b.0).collect::<Vec<_>>());
        for (i, ((m, lo, hi), r)) in age.into_iter().zip(rotated).enumerate() {
            ages.push(format!("{name},{},{m},{lo},{hi},{r}", frame.first_age + i as i32));
        }
        let coh = curve_bands(&draws, p, |c| &c.cohort);
        let (a, b) = ls_line(&coh.iter().map(|c| c.0).collect::<Vec<_>>());
        for (i, (m, lo, hi)) in coh.into_iter().enumerate() {
            cohorts.push(format!("{name},{},{m},{lo},{hi},{}", frame.first_cohort + i as i32, a + b * i as f64));
        }
    }
    for (file, lines) in [
        ("trend.csv", trend),
        ("age_weights.csv", weights),
        ("age_factors.csv", ages),
        ("cohort_factors.csv", cohorts),
    ] {
        write_text(&outdir.join(file), &(lines.join("\n") + "\n"))?;
    }
    Ok(())
}

fn write_fitted(fit: &FittedModel, frame: &MortalityFrame, outdir: &Path) -> Result<()> {
    let model = &fit.model;
    let means: Vec<Vec<f64>> = fit
        .sample
        .draws
        .par_iter()
        .map(|d| model.fitted_means(&model.natural_from_vector(d)))
        .collect();
    let lines: Vec<(usize, String)> = (0..frame.len())
        .into_par_iter()
        .map(|j| {
            let e = frame.exposures[j];
            let mut rates: Vec<f64> = means.iter().map(|m| m[j] / e).collect();
            let (m, lo, hi) = band(&mut rates);
            let line = format!(
                "{},{},{},{},{},{},{},{m},{lo},{hi}",
                frame.populations[frame.pop_idx[j]],
                frame.year(j),
                frame.age(j),
                frame.cohort(j),
                frame.deaths[j],
                e,
                frame.deaths[j] as f64 / e
            );
            (j, line)
        })
        .collect();
    let header = "population,year,age,cohort,deaths,exposure,actual_rate,fitted_rate,q025,q975";
    let mut by_year: Vec<usize> = (0..frame.len()).collect();
    by_year.sort_by_key(|&j| (frame.pop_idx[j], frame.year(j), frame.age(j)));
    let mut by_cohort = by_year.clone();
    by_cohort.sort_by_key(|&j| (frame.pop_idx[j], frame.cohort(j), frame.age(j)));
    for (file, order) in [("fitted_by_year.csv", by_year), ("fitted_by_cohort.csv", by_cohort)] {
        let mut text = String::from(header);
        text.push('\n');
        for j in order {
            text.push_str(&lines[j].1);
            text.push('\n');
        }
        write_text(&outdir.join(file), &text)?;
    }
    Ok(())
}

/// Everything needed to rebuild a fitted model without re-sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitState {
    pub config: RunConfig,
    pub frame: MortalityFrame,
    pub active: ActiveSet,
    pub report: FitReport,
    pub sample: PosteriorSample,
}

impl FitState {
    pub const FILE: &'static str = "fit_state.json";

    pub fn new(config: &RunConfig, frame: &MortalityFrame, run: &PipelineRun) -> Self {
        Self {
            config: config.clone(),
            frame: frame.clone(),
            active: run.fit.active.clone(),
            report: run.report.clone(),
            sample: run.fit.sample.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }

    /// Rebuilds the model and recomputes pointwise log-likelihoods, loo and
    /// summaries from the stored draws.
    pub fn restore(&self) -> Result<(PreparedData, PipelineRun)> {
        let data = PreparedData::new(self.frame.clone(), &self.config)?;
        let model = build_model(&data, &self.config, &self.active)?;
        if model.param_names() != self.sample.names {
            return Err(Error::Data("saved draws do not match the rebuilt model".into()));
        }
        let mut sample: PosteriorSample = self.sample.clone();
        let loglik: Vec<Vec<f64>> = sample
            .draws
            .par_iter()
            .map(|d| model.pointwise_loglik(&model.natural_from_vector(d)))
            .collect();
        let loo = psis_loo(&loglik)?;
        sample.loglik = Some(loglik);
        let summary = sample.summarize();
        let fit = FittedModel {
            active: self.active.clone(),
            model,
            sample,
            summary,
            loo,
        };
        Ok((
            data,
            PipelineRun {
                report: self.report.clone(),
                fit,
            },
        ))
    }
}
