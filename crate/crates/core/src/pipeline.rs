//! Screen, sample, score and prune: the full fitting procedure for one
//! model, and ladders of models that seed each rung from the last.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::design::{build_frame_design, Column, SlopeChangeDesign, TrendWeightDesign, VariableKind};
use crate::error::{Error, Result};
use crate::frame::MortalityFrame;
use crate::lasso::{screen, ScreenResult};
use crate::likelihood::MeanStructure;
use crate::loo::{psis_loo, se_of_difference, LooResult, K_WARN};
use crate::mcmc::{sample, ParamSummary, PosteriorSample};
use crate::model::Model;

/// Builds a mean structure from the surviving APC columns and trend weights.
pub trait StructureBuilder: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether the structure carries age trend weights.
    fn uses_weights(&self) -> bool;

    fn build(&self, design: SlopeChangeDesign, weights: TrendWeightDesign, temperature: Option<f64>) -> Result<MeanStructure>;
}

pub struct ApcBuilder;

impl StructureBuilder for ApcBuilder {
    fn name(&self) -> &'static str {
        "apc"
    }

    fn uses_weights(&self) -> bool {
        false
    }

    fn build(&self, design: SlopeChangeDesign, _weights: TrendWeightDesign, _temperature: Option<f64>) -> Result<MeanStructure> {
        Ok(MeanStructure::Apc { x: design })
    }
}

/// Age, cohort and difference-constant columns enter linearly; the period
/// columns form the trend multiplied by the age weights.
pub struct RenshawHabermanBuilder;

impl StructureBuilder for RenshawHabermanBuilder {
    fn name(&self) -> &'static str {
        "renshaw_haberman"
    }

    fn uses_weights(&self) -> bool {
        true
    }

    fn build(&self, design: SlopeChangeDesign, weights: TrendWeightDesign, temperature: Option<f64>) -> Result<MeanStructure> {
        if weights.selector.len() != design.n_rows() {
            return Err(Error::Dimension("trend weights and design cover different rows".into()));
        }
        Ok(MeanStructure::RenshawHaberman {
            x: design.select_kinds(&[VariableKind::Age, VariableKind::Cohort, VariableKind::DiffConstant]),
            z: design.select_kinds(&[VariableKind::Period]),
            weights,
            softmax_temperature: temperature,
        })
    }
}

static STRUCTURES: &[(&str, &dyn StructureBuilder)] = &[
    ("apc", &ApcBuilder),
    ("renshaw_haberman", &RenshawHabermanBuilder),
    ("rh", &RenshawHabermanBuilder),
];

pub fn structure_by_name(name: &str) -> Result<&'static dyn StructureBuilder> {
    STRUCTURES
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, b)| *b)
        .ok_or_else(|| Error::UnknownStrategy {
            kind: "model kind",
            name: name.to_string(),
            available: structure_names().join(", "),
        })
}

pub fn structure_names() -> Vec<&'static str> {
    STRUCTURES.iter().map(|(n, _)| *n).collect()
}

/// Observations and the unscreened designs for one frame.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub frame: MortalityFrame,
    pub design: SlopeChangeDesign,
    pub weights: TrendWeightDesign,
    pub y: Vec<f64>,
    pub offset: Vec<f64>,
}

impl PreparedData {
    pub fn new(frame: MortalityFrame, cfg: &RunConfig) -> Result<Self> {
        frame.validate()?;
        let design = build_frame_design(&frame, &cfg.model.kinds, cfg.model.include_diff_const)?;
        let weights = TrendWeightDesign::build(&design.rows);
        Ok(Self {
            y: frame.deaths_f64(),
            offset: frame.log_exposures(),
            frame,
            design,
            weights,
        })
    }

    pub fn load(cfg: &RunConfig) -> Result<Self> {
        Self::new(cfg.load_frame()?, cfg)
    }
}

/// Variables in a model: APC design columns plus trend-weight columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub design: Vec<String>,
    /// `None` means every weight column.
    pub weights: Option<Vec<String>>,
}

impl ActiveSet {
    pub fn all(data: &PreparedData) -> Self {
        Self {
            design: data.design.names(),
            weights: None,
        }
    }

    pub fn len(&self, data: &PreparedData, builder: &dyn StructureBuilder) -> usize {
        let w = if builder.uses_weights() {
            self.weights.as_ref().map_or(data.weights.n_cols(), Vec::len)
        } else {
            0
        };
        self.design.len() + w
    }

    pub fn is_empty(&self) -> bool {
        self.design.is_empty() && self.weights.as_ref().is_some_and(Vec::is_empty)
    }

    /// The set without `names` (names not present are ignored).
    pub fn without(&self, names: &BTreeSet<String>, data: &PreparedData) -> Self {
        let weights = self.weights.clone().unwrap_or_else(|| data.weights.names());
        Self {
            design: self.design.iter().filter(|n| !names.contains(*n)).cloned().collect(),
            weights: Some(weights.into_iter().filter(|n| !names.contains(n)).collect()),
        }
    }
}

pub fn build_model(data: &PreparedData, cfg: &RunConfig, active: &ActiveSet) -> Result<Model> {
    let builder = structure_by_name(&cfg.model.kind)?;
    let design = data.design.retain_names(&active.design)?;
    let weights = match &active.weights {
        Some(w) => data.weights.retain_names(w)?,
        None => data.weights.clone(),
    };
    let structure = builder.build(design, weights, cfg.model.softmax_temperature)?;
    Model::new(
        data.y.clone(),
        data.offset.clone(),
        &cfg.model.family,
        cfg.prior.clone(),
        structure,
        cfg.model.constant_prior,
    )
}

/// A sampled model with its summaries and loo.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub active: ActiveSet,
    pub model: Model,
    pub sample: PosteriorSample,
    pub summary: Vec<ParamSummary>,
    pub loo: LooResult,
}

impl FittedModel {
    pub fn posterior_means(&self) -> BTreeMap<String, f64> {
        self.summary.iter().map(|s| (s.name.clone(), s.mean)).collect()
    }

    /// Shrunk variables with `|mean / sd|` below `threshold`.
    pub fn low_t_candidates(&self, threshold: f64) -> Vec<&ParamSummary> {
        self.summary[self.model.n_unshrunk()..]
            .iter()
            .filter(|s| !(s.t_ratio.abs() >= threshold))
            .collect()
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.model.param_names()[self.model.n_unshrunk()..].to_vec()
    }
}

/// Samples `model` from `init` and scores it. Sampler problems become
/// [`Error::Sampler`].
pub fn fit_model(model: Model, active: ActiveSet, init: &[f64], cfg: &RunConfig, seed: u64) -> Result<FittedModel> {
    let sample = sample(&model, init, &cfg.sampler, seed).map_err(|e| match e {
        Error::Sampler(_) | Error::Config(_) | Error::UnknownStrategy { .. } => e,
        other => Error::Sampler(other.to_string()),
    })?;
    if sample.n_draws() == 0 {
        return Err(Error::Sampler("no draws retained".into()));
    }
    if sample.divergences() >= sample.n_draws() {
        return Err(Error::Sampler("every post-warmup transition diverged".into()));
    }
    let loglik = sample
        .loglik
        .as_ref()
        .ok_or_else(|| Error::Sampler("no pointwise log-likelihood".into()))?;
    if loglik.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Sampler("non-finite pointwise log-likelihood in the draws".into()));
    }
    let loo = psis_loo(loglik)?;
    let summary = sample.summarize();
    Ok(FittedModel {
        active,
        model,
        sample,
        summary,
        loo,
    })
}

/// Starting values from the screen's lasso fit: intercept and coefficients.
fn lasso_start(screened: &ScreenResult) -> BTreeMap<String, f64> {
    let mut values = BTreeMap::new();
    if let Some(last) = screened.passes.last() {
        let fit = last.fit_at(last.index_min);
        values.insert("c".to_string(), fit.intercept);
        for (n, b) in last.names.iter().zip(&fit.beta) {
            values.insert(n.clone(), *b);
        }
    }
    values
}

/// First period column of each population.
fn leading_period_columns(design: &SlopeChangeDesign) -> Vec<String> {
    let mut first: BTreeMap<usize, &Column> = BTreeMap::new();
    for col in design.columns.iter().filter(|c| c.kind == VariableKind::Period) {
        let slot = first.entry(col.population).or_insert(col);
        if col.index < slot.index {
            *slot = col;
        }
    }
    first.values().map(|c| c.name.clone()).collect()
}

fn crude_start(data: &PreparedData) -> BTreeMap<String, f64> {
    let d: f64 = data.y.iter().sum();
    let e: f64 = data.offset.iter().map(|o| o.exp()).sum();
    BTreeMap::from([("c".to_string(), (d.max(0.5) / e).ln())])
}

/// One attempt in the pruning history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub attempt: usize,
    pub n_variables: usize,
    pub n_dropped: usize,
    pub n_restored: usize,
    pub loo: f64,
    pub nll: f64,
    pub penalty: f64,
    pub se_loo: f64,
    pub accepted: bool,
    pub note: String,
}

impl RoundRecord {
    fn from_fit(round: usize, attempt: usize, fit: &FittedModel, n_dropped: usize, n_restored: usize, accepted: bool, note: &str) -> Self {
        Self {
            round,
            attempt,
            n_variables: fit.variable_names().len(),
            n_dropped,
            n_restored,
            loo: fit.loo.loo,
            nll: fit.loo.nll,
            penalty: fit.loo.penalty,
            se_loo: fit.loo.se_loo,
            accepted,
            note: note.to_string(),
        }
    }
}

/// Variable count and sum of absolute posterior means for one population
/// and variable group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindCount {
    pub population: String,
    pub kind: String,
    pub count: usize,
    pub sum_abs_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub stage: String,
    pub model_kind: String,
    pub family: String,
    pub prior: String,
    pub n_screened: usize,
    /// Pruning history; round 0 is the initial fit.
    pub rounds: Vec<RoundRecord>,
    pub n_variables: usize,
    pub n_params: usize,
    pub loo: f64,
    pub nll: f64,
    pub penalty: f64,
    pub se_loo: f64,
    pub counts: Vec<KindCount>,
    pub max_rhat: f64,
    pub min_ess: f64,
    pub divergences: usize,
    pub warnings: Vec<String>,
}

/// The report plus everything needed to write outputs.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: FitReport,
    pub fit: FittedModel,
}

/// Per (population, group) counts. Groups: age, period, cohort, weight,
/// diff_const. Second-population entries are the difference variables.
pub fn kind_counts(fit: &FittedModel) -> Vec<KindCount> {
    let means = fit.posterior_means();
    let mut groups: BTreeMap<(usize, usize), (usize, f64)> = BTreeMap::new();
    let order = ["age", "period", "cohort", "weight", "diff_const"];
    let mut add = |pop: usize, kind: &str, name: &str| {
        let k = order.iter().position(|o| *o == kind).unwrap_or(order.len());
        let e = groups.entry((pop, k)).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += means.get(name).map_or(0.0, |m| m.abs());
    };
    let structure = &fit.model.structure;
    for c in &structure.x().columns {
        add(c.population, c.kind.as_str(), &c.name);
    }
    if let MeanStructure::RenshawHaberman { z, weights, .. } = structure {
        for c in &z.columns {
            add(c.population, c.kind.as_str(), &c.name);
        }
        for c in &weights.columns {
            add(c.population, "weight", &c.name);
        }
    }
    let pops = &structure.x().rows.populations;
    groups
        .into_iter()
        .map(|((p, k), (count, sum))| KindCount {
            population: pops.get(p).cloned().unwrap_or_else(|| p.to_string()),
            kind: order.get(k).copied().unwrap_or("other").to_string(),
            count,
            sum_abs_mean: sum,
        })
        .collect()
}

fn make_report(stage: &str, cfg: &RunConfig, n_screened: usize, rounds: Vec<RoundRecord>, fit: &FittedModel) -> FitReport {
    let (max_rhat, min_ess) = PosteriorSample::convergence(&fit.summary);
    let divergences = fit.sample.divergences();
    let mut warnings = Vec::new();
    if max_rhat > 1.05 {
        warnings.push(format!("max split R-hat {max_rhat:.3} exceeds 1.05"));
    }
    if min_ess < 100.0 {
        warnings.push(format!("min ESS {min_ess:.0} below 100"));
    }
    if divergences > 0 {
        warnings.push(format!("{divergences} divergent transitions"));
    }
    for name in trend_sign_disagreements(fit) {
        warnings.push(format!("chains disagree on the sign of the {name} trend"));
    }
    let high_k = fit.loo.high_k(K_WARN).len();
    if high_k > 0 {
        warnings.push(format!("{high_k} observations with Pareto k above {K_WARN}"));
    }
    FitReport {
        stage: stage.to_string(),
        model_kind: cfg.model.kind.clone(),
        family: cfg.model.family.clone(),
        prior: cfg.prior.family.clone(),
        n_screened,
        rounds,
        n_variables: fit.variable_names().len(),
        n_params: fit.model.layout().dim,
        loo: fit.loo.loo,
        nll: fit.loo.nll,
        penalty: fit.loo.penalty,
        se_loo: fit.loo.se_loo,
        counts: kind_counts(fit),
        max_rhat,
        min_ess,
        divergences,
        warnings,
    }
}

/// Populations whose chain-mean trend change over the fitted years has
/// different signs across chains.
fn trend_sign_disagreements(fit: &FittedModel) -> Vec<String> {
    let MeanStructure::RenshawHaberman { z, .. } = &fit.model.structure else {
        return Vec::new();
    };
    let sample = &fit.sample;
    let per = sample.draws_per_chain();
    if sample.n_chains < 2 || per == 0 {
        return Vec::new();
    }
    let mut by_population: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for (c, col) in z.columns.iter().enumerate() {
        if let Some(j) = sample.index_of(&col.name) {
            let extent = z.column(c).iter().copied().fold(0.0, f64::max);
            by_population.entry(col.population).or_default().push((j, extent));
        }
    }
    let labels = &z.rows.populations;
    by_population
        .into_iter()
        .filter(|(_, cols)| {
            let signs: BTreeSet<bool> = (0..sample.n_chains)
                .map(|k| {
                    let draws = &sample.draws[k * per..(k + 1) * per];
                    let change: f64 = draws.iter().map(|d| cols.iter().map(|&(j, e)| d[j] * e).sum::<f64>()).sum();
                    change < 0.0
                })
                .collect();
            signs.len() > 1
        })
        .map(|(p, _)| labels.get(p).cloned().unwrap_or_else(|| p.to_string()))
        .collect()
}

fn round_seed(seed: u64, round: usize, attempt: usize) -> u64 {
    seed.wrapping_add(1_000 * round as u64 + attempt as u64)
}

/// Drop/re-sample/compare rounds from an initial fit. Returns the final fit
/// and the history (excluding the initial fit).
pub fn prune(data: &PreparedData, cfg: &RunConfig, mut current: FittedModel) -> Result<(FittedModel, Vec<RoundRecord>)> {
    let p = &cfg.pruning;
    let mut history = Vec::new();
    for round in 1..=p.max_rounds {
        let cands = current.low_t_candidates(p.threshold);
        if cands.is_empty() {
            break;
        }
        let mut by_t: Vec<(String, f64)> = cands.iter().map(|s| (s.name.clone(), s.t_ratio.abs())).collect();
        by_t.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let n_restore = ((by_t.len() as f64) * p.restore_fraction).round() as usize;
        let attempts: Vec<usize> = if n_restore > 0 && n_restore < by_t.len() { vec![0, n_restore] } else { vec![0] };
        let init_values = current.posterior_means();
        let mut accepted = None;
        for (attempt, &restored) in attempts.iter().enumerate() {
            let dropped: BTreeSet<String> = by_t[restored..].iter().map(|(n, _)| n.clone()).collect();
            let active = current.active.without(&dropped, data);
            let model = build_model(data, cfg, &active)?;
            let init = model.init_from_named(&init_values)?;
            let fit = match fit_model(model, active, &init, cfg, round_seed(cfg.seed, round, attempt)) {
                Ok(f) => f,
                Err(Error::Sampler(msg)) => {
                    history.push(RoundRecord {
                        round,
                        attempt,
                        n_variables: current.variable_names().len() - dropped.len(),
                        n_dropped: dropped.len(),
                        n_restored: restored,
                        loo: f64::NAN,
                        nll: f64::NAN,
                        penalty: f64::NAN,
                        se_loo: f64::NAN,
                        accepted: false,
                        note: format!("sampler failure, previous round kept: {msg}"),
                    });
                    return Ok((current, history));
                }
                Err(e) => return Err(e),
            };
            let ok = fit.loo.loo <= current.loo.loo + p.tie_tolerance;
            let note = if ok { "loo not worse" } else { "loo worse" };
            history.push(RoundRecord::from_fit(round, attempt, &fit, dropped.len(), restored, ok, note));
            if ok {
                accepted = Some(fit);
                break;
            }
        }
        match accepted {
            Some(f) => current = f,
            None => break,
        }
    }
    Ok((current, history))
}

/// Screens (when enabled), fits, scores and prunes one model.
pub fn run_pipeline(cfg: &RunConfig, data: &PreparedData) -> Result<PipelineRun> {
    run_stage("fit", cfg, data, None)
}

/// One stage. With `seed_from` the screen is skipped and the previous
/// stage's survivors and posterior means seed the fit.
pub fn run_stage(stage: &str, cfg: &RunConfig, data: &PreparedData, seed_from: Option<&FittedModel>) -> Result<PipelineRun> {
    cfg.validate()?;
    let builder = structure_by_name(&cfg.model.kind)?;
    let (active, start) = match seed_from {
        Some(prev) => {
            let weights = match &prev.model.structure {
                MeanStructure::RenshawHaberman { weights: w, .. } if builder.uses_weights() => Some(w.names()),
                _ => None,
            };
            let mut design = prev.active.design.clone();
            let had_weights = matches!(prev.model.structure, MeanStructure::RenshawHaberman { .. });
            if builder.uses_weights() && !had_weights {
                // the linear period trend is no longer confounded once it is
                // weighted by age
                for name in leading_period_columns(&data.design) {
                    if !design.contains(&name) {
                        design.push(name);
                    }
                }
            }
            (ActiveSet { design, weights }, prev.posterior_means())
        }
        None if cfg.screen.enabled => {
            let screened = run_screen(cfg, data)?;
            let mut start = lasso_start(&screened);
            start.entry("c".into()).or_insert_with(|| crude_start(data)["c"]);
            (
                ActiveSet {
                    design: screened.survivors(),
                    weights: None,
                },
                start,
            )
        }
        None => (ActiveSet::all(data), crude_start(data)),
    };
    let n_screened = active.len(data, builder);
    let model = build_model(data, cfg, &active)?;
    let init = model.init_from_named(&start)?;
    let first = fit_model(model, active, &init, cfg, round_seed(cfg.seed, 0, 0))?;
    let mut rounds = vec![RoundRecord::from_fit(0, 0, &first, 0, 0, true, "initial fit")];
    let (fit, history) = prune(data, cfg, first)?;
    rounds.extend(history);
    let report = make_report(stage, cfg, n_screened, rounds, &fit);
    Ok(PipelineRun { report, fit })
}

/// Lasso screen of the unscreened APC design.
pub fn run_screen(cfg: &RunConfig, data: &PreparedData) -> Result<ScreenResult> {
    screen(&data.design, &data.y, &data.offset, &cfg.lasso, cfg.seed)
}

/// One row of a ladder comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub stage: String,
    pub model: String,
    pub family: String,
    pub prior: String,
    pub n_variables: usize,
    pub nll: f64,
    pub penalty: f64,
    pub loo: f64,
    pub se_loo: f64,
    pub loo_diff_prev: f64,
    pub se_diff_prev: f64,
}

pub fn ladder_rows(runs: &[PipelineRun]) -> Vec<LadderRow> {
    runs.iter()
        .enumerate()
        .map(|(i, r)| {
            let (d, se) = if i == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let prev = &runs[i - 1].fit.loo;
                (r.fit.loo.loo - prev.loo, se_of_difference(&r.fit.loo, prev))
            };
            LadderRow {
                stage: r.report.stage.clone(),
                model: r.report.model_kind.clone(),
                family: r.report.family.clone(),
                prior: r.report.prior.clone(),
                n_variables: r.report.n_variables,
                nll: r.report.nll,
                penalty: r.report.penalty,
                loo: r.report.loo,
                se_loo: r.report.se_loo,
                loo_diff_prev: d,
                se_diff_prev: se,
            }
        })
        .collect()
}

/// Runs every configured ladder stage in order, each seeded from the last.
pub fn fit_ladder(cfg: &RunConfig, data: &PreparedData) -> Result<Vec<PipelineRun>> {
    if cfg.ladder.is_empty() {
        return Err(Error::Config("ladder has no stages".into()));
    }
    let mut runs: Vec<PipelineRun> = Vec::new();
    for (i, stage) in cfg.ladder.iter().enumerate() {
        let mut stage_cfg = stage.apply(cfg);
        stage_cfg.seed = cfg.seed.wrapping_add(100_000 * i as u64);
        let prev = runs.last().map(|r| &r.fit);
        runs.push(run_stage(&stage.name, &stage_cfg, data, prev)?);
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{simulate_frame, SyntheticSpec};

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.sampler.chains = 2;
        cfg.sampler.iterations = 300;
        cfg.sampler.max_tree_depth = 6;
        cfg.sampler.parallel = false;
        cfg.lasso.n_lambda = 30;
        cfg.lasso.folds = 4;
        cfg.pruning.max_rounds = 0;
        cfg.data.cohort_min_cells = 3;
        cfg
    }

    fn small_data(cfg: &RunConfig, pops: usize) -> PreparedData {
        let spec = SyntheticSpec {
            n_ages: 6,
            n_years: 5,
            populations: ["A", "B"][..pops].iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        };
        let (frame, _) = simulate_frame(&spec, 5).unwrap();
        PreparedData::new(frame.trim_cohorts(cfg.data.cohort_min_cells).unwrap(), cfg).unwrap()
    }

    #[test]
    fn registry_lookup() {
        assert_eq!(structure_by_name("RH").unwrap().name(), "renshaw_haberman");
        assert!(matches!(structure_by_name("lee_carter"), Err(Error::UnknownStrategy { .. })));
    }

    #[test]
    fn rh_builder_splits_columns() {
        let cfg = small_cfg();
        let data = small_data(&cfg, 2);
        let s = RenshawHabermanBuilder
            .build(data.design.clone(), data.weights.clone(), None)
            .unwrap();
        if let MeanStructure::RenshawHaberman { x, z, weights, .. } = &s {
            assert!(z.columns.iter().all(|c| c.kind == VariableKind::Period));
            assert!(x.columns.iter().all(|c| c.kind != VariableKind::Period));
            assert_eq!(x.n_cols() + z.n_cols(), data.design.n_cols());
            assert_eq!(weights.n_cols(), 2 * 6);
        } else {
            panic!("wrong structure");
        }
    }

    #[test]
    fn weighted_stage_restores_the_linear_period_trend() {
        let mut cfg = small_cfg();
        let data = small_data(&cfg, 2);
        let second_year = data.design.rows.origins[1] + 1;
        let expected: Vec<String> = ["A", "B"].iter().map(|p| crate::design::column_name(p, VariableKind::Period, second_year)).collect();
        assert_eq!(leading_period_columns(&data.design), expected);

        cfg.ladder = ["apc", "rh"]
            .iter()
            .map(|k| crate::config::LadderStage {
                name: k.to_string(),
                kind: Some(k.to_string()),
                family: None,
                prior_family: None,
                nu: None,
            })
            .collect();
        let runs = fit_ladder(&cfg, &data).unwrap();
        for name in &expected {
            assert!(runs[1].fit.active.design.contains(name), "{name}");
        }
    }

    #[test]
    fn zero_round_pipeline_is_one_pass() {
        let mut cfg = small_cfg();
        cfg.screen.enabled = false;
        let data = small_data(&cfg, 1);
        let run = run_pipeline(&cfg, &data).unwrap();
        assert_eq!(run.report.rounds.len(), 1);
        assert_eq!(run.report.n_variables, data.design.n_cols());
        let r = &run.report;
        assert!((r.loo - (r.nll + r.penalty)).abs() < 1e-9);
        let counted: usize = r.counts.iter().map(|c| c.count).sum();
        assert_eq!(counted, r.n_variables);
    }

    #[test]
    fn without_removes_from_both_blocks() {
        let cfg = small_cfg();
        let data = small_data(&cfg, 1);
        let all = ActiveSet::all(&data);
        let drop: BTreeSet<String> = [all.design[0].clone(), data.weights.names()[2].clone()].into();
        let less = all.without(&drop, &data);
        assert_eq!(less.design.len(), all.design.len() - 1);
        assert_eq!(less.weights.unwrap().len(), data.weights.n_cols() - 1);
    }
}
