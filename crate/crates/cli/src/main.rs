use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mortspline::config::{DataFormat, PopulationSource, RunConfig};
use mortspline::lasso::ScreenResult;
use mortspline::loo::{loo_compare, write_compare_csv, write_loo_csv, write_pointwise_csv};
use mortspline::pipeline::{fit_ladder, ladder_rows, run_pipeline, run_screen, PipelineRun, PreparedData};
use mortspline::projection::project;
use mortspline::report::{emit_outputs, write_rows, FitState};
use mortspline::synthetic::{simulate_frame, SyntheticSpec};
use mortspline::{Error, Result};

/// Bayesian slope-change spline mortality models: screen, sample, score, prune, project.
#[derive(Parser)]
#[command(name = "mortspline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Screen, sample, score and prune one model.
    Fit(RunArgs),
    /// Run the configured model ladder, each stage seeded from the last.
    Ladder(RunArgs),
    /// Lasso screen only.
    Screen(RunArgs),
    /// Recompute PSIS-LOO from a saved fit.
    Loo(StateArgs),
    /// Project mortality from a saved fit by continuing the terminal trend.
    Project(ProjectArgs),
    /// Rewrite every output file from a saved fit.
    Report(StateArgs),
    /// Write synthetic deaths/exposures tables and a matching config.
    Simulate(SimulateArgs),
    /// Fit the Sweden/Denmark male ladder from HMD files and compare with
    /// reference loo values.
    ReproPaper(ReproArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Population name; repeat once per population, paired with --deaths and --exposures.
    #[arg(long = "pop")]
    pops: Vec<String>,
    /// Deaths table (wide CSV unless the config says otherwise).
    #[arg(long = "deaths")]
    deaths: Vec<PathBuf>,
    #[arg(long = "exposures")]
    exposures: Vec<PathBuf>,
}

#[derive(Args)]
struct StateArgs {
    /// Directory holding fit_state.json; outputs go here unless --out is given.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProjectArgs {
    #[command(flatten)]
    state: StateArgs,
    /// Years to project (overrides the saved config).
    #[arg(long)]
    horizon: Option<usize>,
    /// Simulate deaths per draw.
    #[arg(long)]
    simulate: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    populations: usize,
    #[arg(long, default_value_t = 20)]
    ages: usize,
    #[arg(long, default_value_t = 15)]
    years: usize,
    /// Observation family for the simulated deaths.
    #[arg(long, default_value = "poisson")]
    family: String,
    /// Age-varying trend weights in the truth.
    #[arg(long)]
    trend_weights: bool,
}

#[derive(Args)]
struct ReproArgs {
    /// Directory with SWE.Deaths_1x1.txt, SWE.Exposures_1x1.txt,
    /// DNK.Deaths_1x1.txt and DNK.Exposures_1x1.txt.
    #[arg(long)]
    hmd_dir: PathBuf,
    /// Optional config whose sampler/lasso/pruning settings are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "repro-paper")]
    out: PathBuf,
}

/// Reference ladder loo values used as soft targets.
const REFERENCE_LOO: [(&str, f64); 4] = [("apc", 22158.5), ("rh", 20725.5), ("rh_t2", 20723.4), ("rh_t2_nb", 20648.1)];

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Sampler(_) => 3,
        e if e.is_data_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Ladder(a) => cmd_ladder(&a),
        Command::Screen(a) => cmd_screen(&a),
        Command::Loo(a) => cmd_loo(&a),
        Command::Project(a) => cmd_project(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::ReproPaper(a) => cmd_repro(&a),
    }
}

fn resolve_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(o) = &a.out {
        cfg.output_dir = o.clone();
    }
    if !(a.pops.is_empty() && a.deaths.is_empty() && a.exposures.is_empty()) {
        if a.deaths.len() != a.exposures.len() || (!a.pops.is_empty() && a.pops.len() != a.deaths.len()) {
            return Err(Error::Config("--pop, --deaths and --exposures must be given once per population".into()));
        }
        cfg.data.populations = a
            .deaths
            .iter()
            .zip(&a.exposures)
            .enumerate()
            .map(|(i, (d, e))| PopulationSource {
                name: a.pops.get(i).cloned().unwrap_or_else(|| format!("pop{}", i + 1)),
                deaths: d.clone(),
                exposures: e.clone(),
            })
            .collect();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_manifest(cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join("manifest.toml");
    fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))
}

fn print_run(run: &PipelineRun) {
    let r = &run.report;
    println!(
        "{}: {} variables, loo {:.2} (nll {:.2} + penalty {:.2}), se {:.2}, max R-hat {:.3}, min ESS {:.0}",
        r.stage, r.n_variables, r.loo, r.nll, r.penalty, r.se_loo, r.max_rhat, r.min_ess
    );
    for w in &r.warnings {
        println!("  warning: {w}");
    }
}

fn save_run(cfg: &RunConfig, data: &PreparedData, run: &PipelineRun, dir: &Path) -> Result<()> {
    emit_outputs(run, &data.frame, dir)?;
    FitState::new(cfg, &data.frame, run).save(&dir.join(FitState::FILE))
}

fn cmd_fit(a: &RunArgs) -> Result<()> {
    let cfg = resolve_config(a)?;
    let data = PreparedData::load(&cfg)?;
    write_manifest(&cfg, &cfg.output_dir)?;
    let run = run_pipeline(&cfg, &data)?;
    save_run(&cfg, &data, &run, &cfg.output_dir)?;
    print_run(&run);
    Ok(())
}

fn run_ladder(cfg: &RunConfig, data: &PreparedData) -> Result<Vec<PipelineRun>> {
    write_manifest(cfg, &cfg.output_dir)?;
    let runs = fit_ladder(cfg, data)?;
    for (run, stage) in runs.iter().zip(&cfg.ladder) {
        let stage_cfg = stage.apply(cfg);
        save_run(&stage_cfg, data, run, &cfg.output_dir.join(&stage.name))?;
        print_run(run);
    }
    write_rows(
        &cfg.output_dir.join("ladder.csv"),
        &["stage", "model", "family", "prior", "n_variables", "nll", "penalty", "loo", "se_loo", "loo_diff_prev", "se_diff_prev"],
        &ladder_rows(&runs),
    )?;
    let named: Vec<(String, _)> = runs.iter().map(|r| (r.report.stage.clone(), r.fit.loo.clone())).collect();
    write_loo_csv(&named, &cfg.output_dir.join("loo.csv"))?;
    write_compare_csv(&loo_compare(&named)?, &cfg.output_dir.join("loo_compare.csv"))?;
    Ok(runs)
}

fn cmd_ladder(a: &RunArgs) -> Result<()> {
    let cfg = resolve_config(a)?;
    let data = PreparedData::load(&cfg)?;
    run_ladder(&cfg, &data).map(|_| ())
}

fn write_screen(screened: &ScreenResult, dir: &Path) -> Result<()> {
    screened.write_csv(&dir.join("screen.csv"))?;
    let survivors: Vec<[String; 1]> = screened.survivors().into_iter().map(|s| [s]).collect();
    write_rows(&dir.join("survivors.csv"), &["variable"], &survivors)
}

fn cmd_screen(a: &RunArgs) -> Result<()> {
    let cfg = resolve_config(a)?;
    let data = PreparedData::load(&cfg)?;
    write_manifest(&cfg, &cfg.output_dir)?;
    let screened = run_screen(&cfg, &data)?;
    write_screen(&screened, &cfg.output_dir)?;
    println!("screen kept {} of {} variables", screened.design.n_cols(), data.design.n_cols());
    Ok(())
}

fn load_state(a: &StateArgs) -> Result<(FitState, PathBuf)> {
    let state = FitState::load(&a.fit.join(FitState::FILE))?;
    let out = a.out.clone().unwrap_or_else(|| a.fit.clone());
    create_dir(&out)?;
    Ok((state, out))
}

fn cmd_loo(a: &StateArgs) -> Result<()> {
    let (state, out) = load_state(a)?;
    let (_, run) = state.restore()?;
    write_loo_csv(&[(run.report.stage.clone(), run.fit.loo.clone())], &out.join("loo.csv"))?;
    write_pointwise_csv(&run.fit.loo, &out.join("loo_pointwise.csv"))?;
    let l = &run.fit.loo;
    println!("loo {:.2} = nll {:.2} + penalty {:.2} (se {:.2})", l.loo, l.nll, l.penalty, l.se_loo);
    Ok(())
}

fn cmd_project(a: &ProjectArgs) -> Result<()> {
    let (state, out) = load_state(&a.state)?;
    let (data, run) = state.restore()?;
    let mut pcfg = state.config.projection.clone();
    if let Some(h) = a.horizon {
        pcfg.horizon = h;
    }
    pcfg.simulate |= a.simulate;
    let proj = project(&run.fit.model, &run.fit.sample, &data.frame, &pcfg, a.seed.unwrap_or(state.config.seed))?;
    proj.write_csv(&out.join("projection.csv"))?;
    for (p, s) in data.frame.populations.iter().zip(&proj.trend_slopes) {
        println!("{p}: terminal trend slope {s:.5} per year, full-weight factor after {} years {:.4}", pcfg.horizon, (s * pcfg.horizon as f64).exp());
    }
    Ok(())
}

fn cmd_report(a: &StateArgs) -> Result<()> {
    let (state, out) = load_state(a)?;
    let (data, run) = state.restore()?;
    emit_outputs(&run, &data.frame, &out)?;
    print_run(&run);
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let names = ["A", "B"];
    if a.populations == 0 || a.populations > 2 {
        return Err(Error::Config("--populations must be 1 or 2".into()));
    }
    let spec = SyntheticSpec {
        n_ages: a.ages,
        n_years: a.years,
        populations: names[..a.populations].iter().map(|s| s.to_string()).collect(),
        family: a.family.clone(),
        trend_weights: a.trend_weights,
        ..Default::default()
    };
    let (frame, _) = simulate_frame(&spec, a.seed)?;
    create_dir(&a.out)?;
    let mut cfg = RunConfig::default();
    for (p, name) in frame.populations.iter().enumerate() {
        let d = PathBuf::from(format!("{name}_deaths.csv"));
        let e = PathBuf::from(format!("{name}_exposures.csv"));
        frame.deaths_grid(p).write_wide_csv(&a.out.join(&d))?;
        frame.exposures_grid(p).write_wide_csv(&a.out.join(&e))?;
        cfg.data.populations.push(PopulationSource {
            name: name.clone(),
            deaths: d,
            exposures: e,
        });
    }
    cfg.output_dir = PathBuf::from("out");
    let path = a.out.join("config.toml");
    fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
    println!("wrote {} populations and {}", frame.n_populations(), path.display());
    Ok(())
}

fn cmd_repro(a: &ReproArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.output_dir = a.out.clone();
    cfg.data.format = DataFormat::Hmd;
    cfg.data.hmd_column = "Male".into();
    cfg.data.ages = Some((50, 99));
    cfg.data.years = Some((1970, 2016));
    cfg.data.cohort_min_cells = 13;
    cfg.data.round_deaths = true;
    cfg.data.populations = ["SWE", "DNK"]
        .iter()
        .map(|c| PopulationSource {
            name: c.to_string(),
            deaths: a.hmd_dir.join(format!("{c}.Deaths_1x1.txt")),
            exposures: a.hmd_dir.join(format!("{c}.Exposures_1x1.txt")),
        })
        .collect();
    cfg.ladder = mortspline::config::LadderStage::default_ladder();
    cfg.validate()?;
    let data = PreparedData::load(&cfg)?;
    println!(
        "{} cells, cohorts {}-{}, {} candidate variables",
        data.frame.len(),
        data.frame.first_cohort,
        data.frame.last_cohort(),
        data.design.n_cols()
    );
    let runs = run_ladder(&cfg, &data)?;
    println!("stage      loo        reference  rel.diff  within 1%");
    for (run, (stage, target)) in runs.iter().zip(REFERENCE_LOO) {
        let rel = (run.report.loo - target) / target;
        println!(
            "{stage:<10} {:<10.1} {target:<10.1} {:+.4}   {}",
            run.report.loo,
            rel,
            if rel.abs() <= 0.01 { "yes" } else { "no" }
        );
    }
    Ok(())
}
