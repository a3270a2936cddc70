//! Run configuration: a TOML file with one table per stage of the pipeline.
//! Unknown keys are rejected and every default is written back into the
//! run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::design::VariableKind;
use crate::error::{Error, Result};
use crate::frame::{load_rectangles, AgeYearGrid, MortalityFrame, PopulationTables};
use crate::lasso::LassoConfig;
use crate::likelihood::family_by_name;
use crate::mcmc::SamplerConfig;
use crate::model::ConstantPrior;
use crate::prior::{Hyper, PriorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// One row per age, one column per year.
    #[default]
    Wide,
    /// Human Mortality Database text tables (`Year Age Female Male Total`).
    Hmd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSource {
    pub name: String,
    pub deaths: PathBuf,
    pub exposures: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub populations: Vec<PopulationSource>,
    pub format: DataFormat,
    /// Column read from HMD tables.
    pub hmd_column: String,
    /// Inclusive age range; required for HMD input, optional filter otherwise.
    pub ages: Option<(i32, i32)>,
    pub years: Option<(i32, i32)>,
    /// Cohorts with fewer cells than this (in any population) are dropped.
    pub cohort_min_cells: usize,
    /// Round fractional death counts (HMD splits some deaths across cells).
    pub round_deaths: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            populations: Vec::new(),
            format: DataFormat::Wide,
            hmd_column: "Total".into(),
            ages: None,
            years: None,
            cohort_min_cells: 3,
            round_deaths: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Registered mean-structure name (`apc`, `renshaw_haberman`).
    pub kind: String,
    pub family: String,
    pub kinds: Vec<VariableKind>,
    pub include_diff_const: bool,
    /// Smooth max for the trend-weight normalization; the hard max when absent.
    pub softmax_temperature: Option<f64>,
    pub constant_prior: ConstantPrior,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: "apc".into(),
            family: "poisson".into(),
            kinds: vec![VariableKind::Age, VariableKind::Period, VariableKind::Cohort],
            include_diff_const: true,
            softmax_temperature: None,
            constant_prior: ConstantPrior::LogUniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreenConfig {
    pub enabled: bool,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self { enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruningConfig {
    /// Variables with `|mean / sd|` below this are candidates for removal.
    pub threshold: f64,
    pub max_rounds: usize,
    /// A drop is kept when `loo_new <= loo_old + tie_tolerance`.
    pub tie_tolerance: f64,
    /// Fraction of just-dropped variables put back after a worse loo.
    pub restore_fraction: f64,
}

impl Default for PruningConfig {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            max_rounds: 5,
            tie_tolerance: 0.0,
            restore_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionConfig {
    pub horizon: usize,
    /// Trailing fitted years used for the least-squares trend slope.
    pub trend_window: usize,
    pub quantiles: Vec<f64>,
    /// Simulate future deaths from the observation family per draw.
    pub simulate: bool,
    /// Continue the cohort slope for cohorts born after the data.
    pub include_cohort: bool,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            trend_window: 20,
            quantiles: vec![0.025, 0.5, 0.975],
            simulate: false,
            include_cohort: false,
        }
    }
}

/// One rung of a model ladder; unset fields keep the base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderStage {
    pub name: String,
    pub kind: Option<String>,
    pub family: Option<String>,
    pub prior_family: Option<String>,
    pub nu: Option<Hyper>,
}

impl LadderStage {
    fn new(name: &str, kind: &str, family: &str, prior: &str, nu: Option<Hyper>) -> Self {
        Self {
            name: name.into(),
            kind: Some(kind.into()),
            family: Some(family.into()),
            prior_family: Some(prior.into()),
            nu,
        }
    }

    /// APC, then Renshaw-Haberman, then a t(2) prior, then negative binomial.
    pub fn default_ladder() -> Vec<Self> {
        vec![
            Self::new("apc", "apc", "poisson", "laplace", None),
            Self::new("rh", "renshaw_haberman", "poisson", "laplace", None),
            Self::new("rh_t2", "renshaw_haberman", "poisson", "t2", None),
            Self::new("rh_t2_nb", "renshaw_haberman", "negative_binomial", "t2", None),
        ]
    }

    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        if let Some(k) = &self.kind {
            cfg.model.kind = k.clone();
        }
        if let Some(f) = &self.family {
            cfg.model.family = f.clone();
        }
        if let Some(p) = &self.prior_family {
            cfg.prior.family = p.clone();
        }
        if let Some(nu) = self.nu {
            cfg.prior.nu = nu;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub prior: PriorSpec,
    pub sampler: SamplerConfig,
    pub lasso: LassoConfig,
    pub screen: ScreenConfig,
    pub pruning: PruningConfig,
    pub projection: ProjectionConfig,
    pub ladder: Vec<LadderStage>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 20190101,
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            prior: PriorSpec::default(),
            sampler: SamplerConfig::default(),
            lasso: LassoConfig::default(),
            screen: ScreenConfig::default(),
            pruning: PruningConfig::default(),
            projection: ProjectionConfig::default(),
            ladder: LadderStage::default_ladder(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut cfg.data.populations {
            p.deaths = resolve(base, &p.deaths);
            p.exposures = resolve(base, &p.exposures);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.sampler.validate()?;
        family_by_name(&self.model.family)?;
        crate::pipeline::structure_by_name(&self.model.kind)?;
        if self.model.kinds.is_empty() {
            return Err(Error::Config("model.kinds must not be empty".into()));
        }
        for k in &self.model.kinds {
            if !matches!(k, VariableKind::Age | VariableKind::Period | VariableKind::Cohort) {
                return Err(Error::Config(format!("model.kinds: `{k}` is not age, period or cohort")));
            }
        }
        if let Some(t) = self.model.softmax_temperature {
            if !(t > 0.0) {
                return Err(Error::Config("model.softmax_temperature must be positive".into()));
            }
        }
        if self.data.populations.len() > 2 {
            return Err(Error::Config("at most two populations are supported".into()));
        }
        if self.data.cohort_min_cells == 0 {
            return Err(Error::Config("data.cohort_min_cells must be at least 1".into()));
        }
        let p = &self.pruning;
        if !(p.threshold >= 0.0) || !(p.restore_fraction >= 0.0 && p.restore_fraction <= 1.0) || !p.tie_tolerance.is_finite() {
            return Err(Error::Config("pruning: threshold >= 0, restore_fraction in [0, 1], finite tie_tolerance".into()));
        }
        let pr = &self.projection;
        if pr.horizon == 0 {
            return Err(Error::Config("projection.horizon must be positive".into()));
        }
        if pr.trend_window < 2 {
            return Err(Error::Config("projection.trend_window must be at least 2".into()));
        }
        if pr.quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::Config("projection.quantiles must lie in [0, 1]".into()));
        }
        if self.lasso.folds < 2 || self.lasso.n_lambda < 2 {
            return Err(Error::Config("lasso: folds and n_lambda must be at least 2".into()));
        }
        for s in &self.ladder {
            s.apply(self).validate_stage()?;
        }
        Ok(())
    }

    fn validate_stage(&self) -> Result<()> {
        self.prior.validate()?;
        family_by_name(&self.model.family)?;
        crate::pipeline::structure_by_name(&self.model.kind)?;
        Ok(())
    }

    /// Loads the configured populations and applies cohort trimming.
    pub fn load_frame(&self) -> Result<MortalityFrame> {
        if self.data.populations.is_empty() {
            return Err(Error::Data("no populations configured".into()));
        }
        let tables = self
            .data
            .populations
            .iter()
            .map(|p| {
                let (deaths, exposures) = match self.data.format {
                    DataFormat::Wide => (AgeYearGrid::read_wide_csv(&p.deaths)?, AgeYearGrid::read_wide_csv(&p.exposures)?),
                    DataFormat::Hmd => {
                        let (ages, years) = match (self.data.ages, self.data.years) {
                            (Some(a), Some(y)) => (a, y),
                            _ => return Err(Error::Config("data.ages and data.years are required for HMD input".into())),
                        };
                        (
                            AgeYearGrid::read_hmd(&p.deaths, &self.data.hmd_column, ages, years)?,
                            AgeYearGrid::read_hmd(&p.exposures, &self.data.hmd_column, ages, years)?,
                        )
                    }
                };
                let mut deaths = restrict(deaths, self.data.ages, self.data.years)?;
                if self.data.round_deaths {
                    deaths.values.iter_mut().flatten().for_each(|v| *v = v.round());
                }
                Ok(PopulationTables {
                    name: p.name.clone(),
                    deaths,
                    exposures: restrict(exposures, self.data.ages, self.data.years)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        load_rectangles(&tables)?.trim_cohorts(self.data.cohort_min_cells)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn restrict(grid: AgeYearGrid, ages: Option<(i32, i32)>, years: Option<(i32, i32)>) -> Result<AgeYearGrid> {
    if ages.is_none() && years.is_none() {
        return Ok(grid);
    }
    let (a0, a1) = ages.unwrap_or((grid.first_age, grid.first_age + grid.n_ages() as i32 - 1));
    let (y0, y1) = years.unwrap_or((grid.first_year, grid.first_year + grid.n_years() as i32 - 1));
    let mut rows = Vec::new();
    for a in a0..=a1 {
        let mut row = Vec::new();
        for y in y0..=y1 {
            row.push(
                grid.get(a, y)
                    .ok_or_else(|| Error::Data(format!("no value for age {a}, year {y}")))?,
            );
        }
        rows.push(row);
    }
    AgeYearGrid::new(a0, y0, rows)
}
