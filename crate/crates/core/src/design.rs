//! Slope-change design matrices.
//!
//! A slope-change variable with index `i` over an ordered index (age, period,
//! cohort) contributes `(k - i + 1)+` at a row whose dense position is `k`,
//! so its parameter is the second difference of a piecewise-linear curve.
//! Index 1 of each kind is never a column; it is absorbed by the constant.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::MortalityFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Age,
    Period,
    Cohort,
    /// Shift of the whole second population's log rates.
    DiffConstant,
    /// Generic ordered index for one-dimensional curves.
    Index,
}

impl VariableKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            VariableKind::Age => "age",
            VariableKind::Period => "period",
            VariableKind::Cohort => "cohort",
            VariableKind::DiffConstant => "diff_const",
            VariableKind::Index => "index",
        }
    }

    fn slot(&self) -> usize {
        match self {
            VariableKind::Age | VariableKind::Index => 0,
            VariableKind::Period => 1,
            VariableKind::Cohort => 2,
            VariableKind::DiffConstant => usize::MAX,
        }
    }
}

impl fmt::Display for VariableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `max(k - i + 1, 0)` for a variable of index `i >= 2` at dense position `k >= 1`.
pub fn slope_change_value(variable_index: usize, dense_position: usize) -> Result<u64> {
    if variable_index < 2 {
        return Err(Error::InvalidArgument(format!(
            "slope-change variable index must be >= 2, got {variable_index}"
        )));
    }
    Ok(ramp(variable_index, dense_position))
}

#[inline]
pub(crate) fn ramp(i: usize, k: usize) -> u64 {
    (k + 1).saturating_sub(i) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: VariableKind,
    /// Population that owns the parameter (the second population for
    /// difference variables).
    pub population: usize,
    /// Dense variable index `i` (0 for the difference constant).
    pub index: usize,
    /// Calendar label (age, year, cohort) of the index.
    pub label: i32,
    /// Rows the column applies to: `None` for every row, `Some(p)` for rows
    /// of population `p` only.
    pub scope: Option<usize>,
}

/// Per-row dense positions, shared by every design built from one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowIndex {
    /// `[age, period, cohort]` dense positions (1-based) per row.
    pub positions: Vec<[usize; 3]>,
    pub population: Vec<usize>,
    pub populations: Vec<String>,
    /// First calendar value of each of age, period, cohort.
    pub origins: [i32; 3],
    /// Number of distinct positions of each of age, period, cohort.
    pub extents: [usize; 3],
}

impl RowIndex {
    pub fn from_frame(frame: &MortalityFrame) -> Self {
        Self {
            positions: (0..frame.len())
                .map(|j| [frame.age_idx[j], frame.year_idx[j], frame.cohort_idx[j]])
                .collect(),
            population: frame.pop_idx.clone(),
            populations: frame.populations.clone(),
            origins: [frame.first_age, frame.first_year, frame.first_cohort],
            extents: [frame.n_ages, frame.n_years, frame.n_cohorts],
        }
    }

    /// One ordered index, for one-dimensional curve fits.
    pub fn for_positions(name: &str, first_label: i32, positions: &[usize]) -> Self {
        let extent = positions.iter().copied().max().unwrap_or(0);
        Self {
            positions: positions.iter().map(|&k| [k, 0, 0]).collect(),
            population: vec![0; positions.len()],
            populations: vec![name.to_string()],
            origins: [first_label, 0, 0],
            extents: [extent, 0, 0],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn subset(&self, rows: &[usize]) -> Self {
        Self {
            positions: rows.iter().map(|&j| self.positions[j]).collect(),
            population: rows.iter().map(|&j| self.population[j]).collect(),
            populations: self.populations.clone(),
            origins: self.origins,
            extents: self.extents,
        }
    }
}

/// Dense slope-change design with named columns, stored column-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeChangeDesign {
    pub rows: RowIndex,
    pub columns: Vec<Column>,
    data: Vec<Vec<f64>>,
}

/// Ramp columns sharing one index and row scope.
struct RampGroup {
    scope: Option<usize>,
    slot: usize,
    extent: usize,
    /// `(column, variable index)` pairs.
    columns: Vec<(usize, usize)>,
}

pub fn column_name(population: &str, kind: VariableKind, label: i32) -> String {
    match kind {
        VariableKind::DiffConstant => format!("{population}:{kind}"),
        _ => format!("{population}:{kind}[{label}]"),
    }
}

impl SlopeChangeDesign {
    fn from_columns(rows: RowIndex, columns: Vec<Column>) -> Self {
        let data = columns.iter().map(|c| compute_column(&rows, c)).collect();
        Self { rows, columns, data }
    }

    /// Zero-column design over the given rows.
    pub fn empty(rows: RowIndex) -> Self {
        Self {
            rows,
            columns: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, c: usize) -> &[f64] {
        &self.data[c]
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn position_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col][row]
    }

    /// Recomputes one entry from the column definition alone.
    pub fn entry_formula(&self, row: usize, col: usize) -> f64 {
        entry(&self.rows, &self.columns[col], row)
    }

    /// `X * beta`
    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows()];
        self.mul_vec_add(beta, &mut out);
        out
    }

    pub fn mul_vec_add(&self, beta: &[f64], out: &mut [f64]) {
        debug_assert_eq!(beta.len(), self.n_cols());
        // ramps sum to a double cumulative sum of slope changes per index
        for group in self.ramp_groups() {
            let mut slopes = vec![0.0; group.extent + 1];
            for &(c, i) in &group.columns {
                slopes[i] += beta[c];
            }
            let mut levels = vec![0.0; group.extent + 1];
            let (mut s1, mut level) = (0.0, 0.0);
            for k in 1..=group.extent {
                s1 += slopes[k];
                level += s1;
                levels[k] = level;
            }
            for (r, o) in out.iter_mut().enumerate() {
                if group.scope.is_none_or(|p| self.rows.population[r] == p) {
                    *o += levels[self.rows.positions[r][group.slot]];
                }
            }
        }
        for (c, col) in self.columns.iter().enumerate() {
            if col.kind == VariableKind::DiffConstant && beta[c] != 0.0 {
                for (r, o) in out.iter_mut().enumerate() {
                    if col.scope.is_none_or(|p| self.rows.population[r] == p) {
                        *o += beta[c];
                    }
                }
            }
        }
    }

    /// `X' g`
    pub fn tmul_vec(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols()];
        for group in self.ramp_groups() {
            let mut totals = vec![0.0; group.extent + 2];
            for (r, &v) in g.iter().enumerate() {
                if group.scope.is_none_or(|p| self.rows.population[r] == p) {
                    totals[self.rows.positions[r][group.slot]] += v;
                }
            }
            // tail[i] = sum_{k >= i} (k - i + 1) totals[k]
            let mut tail = vec![0.0; group.extent + 2];
            let (mut r1, mut r2) = (0.0, 0.0);
            for i in (1..=group.extent).rev() {
                r1 += totals[i];
                r2 += r1;
                tail[i] = r2;
            }
            for &(c, i) in &group.columns {
                out[c] = tail[i];
            }
        }
        for (c, col) in self.columns.iter().enumerate() {
            if col.kind == VariableKind::DiffConstant {
                out[c] = g
                    .iter()
                    .enumerate()
                    .filter(|(r, _)| col.scope.is_none_or(|p| self.rows.population[*r] == p))
                    .map(|(_, v)| v)
                    .sum();
            }
        }
        out
    }

    fn ramp_groups(&self) -> Vec<RampGroup> {
        let mut groups: Vec<RampGroup> = Vec::new();
        for (c, col) in self.columns.iter().enumerate() {
            if col.kind == VariableKind::DiffConstant {
                continue;
            }
            let slot = col.kind.slot();
            let pos = match groups.iter().position(|g| g.scope == col.scope && g.slot == slot) {
                Some(p) => p,
                None => {
                    groups.push(RampGroup {
                        scope: col.scope,
                        slot,
                        extent: self.rows.extents[slot].max(col.index),
                        columns: Vec::new(),
                    });
                    groups.len() - 1
                }
            };
            groups[pos].columns.push((c, col.index));
        }
        groups
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            rows: self.rows.subset(rows),
            columns: self.columns.clone(),
            data: self
                .data
                .iter()
                .map(|col| rows.iter().map(|&j| col[j]).collect())
                .collect(),
        }
    }

    /// Keeps only the columns whose kind is in `kinds`.
    pub fn select_kinds(&self, kinds: &[VariableKind]) -> Self {
        let keep: Vec<usize> = (0..self.n_cols())
            .filter(|&c| kinds.contains(&self.columns[c].kind))
            .collect();
        self.select_columns(&keep)
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            rows: self.rows.clone(),
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
            data: cols.iter().map(|&c| self.data[c].clone()).collect(),
        }
    }

    /// Keeps the named columns in the order this design lists them.
    pub fn retain_names(&self, names: &[String]) -> Result<Self> {
        let wanted: HashSet<&str> = names.iter().map(String::as_str).collect();
        for n in &wanted {
            if self.position_of(n).is_none() {
                return Err(Error::UnknownColumn(n.to_string()));
            }
        }
        let keep: Vec<usize> = (0..self.n_cols())
            .filter(|&c| wanted.contains(self.columns[c].name.as_str()))
            .collect();
        Ok(self.select_columns(&keep))
    }

    /// Appends columns of `other` (same rows) not already present.
    pub fn union(&self, other: &SlopeChangeDesign) -> Result<Self> {
        if other.rows != self.rows {
            return Err(Error::Dimension("union of designs over different rows".into()));
        }
        let mut out = self.clone();
        for (c, col) in other.columns.iter().enumerate() {
            if out.position_of(&col.name).is_none() {
                out.columns.push(col.clone());
                out.data.push(other.data[c].clone());
            }
        }
        Ok(out)
    }

    /// Removes the named columns. Dropping an age/period/cohort column
    /// extends the previous linear segment through that index.
    pub fn drop_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let mut seen = HashSet::new();
        for n in names {
            let n = n.as_ref();
            if !seen.insert(n) {
                return Err(Error::InvalidArgument(format!("column `{n}` dropped twice")));
            }
            if self.position_of(n).is_none() {
                return Err(Error::UnknownColumn(n.to_string()));
            }
        }
        let keep: Vec<usize> = (0..self.n_cols())
            .filter(|&c| !seen.contains(self.columns[c].name.as_str()))
            .collect();
        Ok(self.select_columns(&keep))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for r in 0..self.n_rows() {
            w.write_record(self.data.iter().map(|col| format_entry(col[r])))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Per (population, kind) level curves implied by `beta`: the double
    /// cumulative sum of the slope changes, with dropped indices as zeros.
    pub fn level_curves(&self, beta: &[f64]) -> Vec<LevelCurve> {
        let mut groups: BTreeMap<(usize, VariableKind), Vec<f64>> = BTreeMap::new();
        for (c, col) in self.columns.iter().enumerate() {
            if col.kind == VariableKind::DiffConstant {
                continue;
            }
            let extent = self.rows.extents[col.kind.slot()];
            let slopes = groups
                .entry((col.population, col.kind))
                .or_insert_with(|| vec![0.0; extent + 1]);
            slopes[col.index] += beta[c];
        }
        groups
            .into_iter()
            .map(|((population, kind), slopes)| {
                let extent = slopes.len() - 1;
                let mut levels = vec![0.0; extent];
                let mut slope = 0.0;
                let mut level = 0.0;
                for k in 1..=extent {
                    // level[k] = sum_i beta_i (k - i + 1)+ ; first differences accumulate beta
                    slope += slopes[k];
                    if k >= 2 {
                        level += slope;
                    }
                    levels[k - 1] = level;
                }
                LevelCurve {
                    population,
                    kind,
                    origin: self.rows.origins[kind.slot()],
                    levels,
                }
            })
            .collect()
    }
}

fn format_entry(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        v.to_string()
    }
}

fn entry(rows: &RowIndex, col: &Column, r: usize) -> f64 {
    if let Some(p) = col.scope {
        if rows.population[r] != p {
            return 0.0;
        }
    }
    match col.kind {
        VariableKind::DiffConstant => 1.0,
        kind => ramp(col.index, rows.positions[r][kind.slot()]) as f64,
    }
}

fn compute_column(rows: &RowIndex, col: &Column) -> Vec<f64> {
    (0..rows.len()).map(|r| entry(rows, col, r)).collect()
}

/// Level parameters over one index for one population.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelCurve {
    pub population: usize,
    pub kind: VariableKind,
    pub origin: i32,
    /// Levels at dense positions `1..=extent` (the first is always 0).
    pub levels: Vec<f64>,
}

/// Level-dummy reconstruction `X_level * levels` using 0/1 indicators for
/// positions `2..`; equals `X_slope * beta` when the levels come from
/// [`SlopeChangeDesign::level_curves`].
pub fn level_dummy_fit(design: &SlopeChangeDesign, curves: &[LevelCurve]) -> Vec<f64> {
    let rows = &design.rows;
    let mut out = vec![0.0; rows.len()];
    for curve in curves {
        // the owning population's curve applies where the design's columns applied
        let scope = design
            .columns
            .iter()
            .find(|c| c.population == curve.population && c.kind == curve.kind)
            .and_then(|c| c.scope);
        for (r, o) in out.iter_mut().enumerate() {
            if scope.is_some_and(|p| rows.population[r] != p) {
                continue;
            }
            let k = rows.positions[r][curve.kind.slot()];
            *o += curve.levels[k - 1];
        }
    }
    out
}

/// Level curves for `beta`, checking `X_slope * beta == X_level * levels`
/// within `tol`. Returns the curves or the largest discrepancy as an error.
pub fn level_equivalence_check(
    design: &SlopeChangeDesign,
    beta: &[f64],
    tol: f64,
) -> Result<Vec<LevelCurve>> {
    let curves = design.level_curves(beta);
    let mut slope_fit = design.mul_vec(beta);
    for (c, col) in design.columns.iter().enumerate() {
        if col.kind == VariableKind::DiffConstant {
            for (r, v) in slope_fit.iter_mut().enumerate() {
                *v -= beta[c] * entry(&design.rows, col, r);
            }
        }
    }
    let level_fit = level_dummy_fit(design, &curves);
    let worst = slope_fit
        .iter()
        .zip(&level_fit)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if worst > tol {
        return Err(Error::InvalidArgument(format!(
            "slope and level parameterizations differ by {worst:e}"
        )));
    }
    Ok(curves)
}

fn kind_columns(rows: &RowIndex, population: usize, kind: VariableKind, scope: Option<usize>) -> Vec<Column> {
    let slot = kind.slot();
    let pop_name = &rows.populations[population];
    (2..=rows.extents[slot])
        .map(|i| {
            let label = rows.origins[slot] + i as i32 - 1;
            Column {
                name: column_name(pop_name, kind, label),
                kind,
                population,
                index: i,
                label,
                scope,
            }
        })
        .collect()
}

/// One column per index `2..=max` of each requested kind, over the rows of
/// population `population`.
pub fn build_single_population(
    frame: &MortalityFrame,
    population: usize,
    kinds: &[VariableKind],
) -> Result<SlopeChangeDesign> {
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("no variable kinds requested".into()));
    }
    if population >= frame.n_populations() {
        return Err(Error::InvalidArgument(format!("no population {population}")));
    }
    let rows = RowIndex::from_frame(frame).subset(&frame.block(population));
    let mut columns = Vec::new();
    for &kind in kinds {
        if !matches!(kind, VariableKind::Age | VariableKind::Period | VariableKind::Cohort) {
            return Err(Error::InvalidArgument(format!("`{kind}` is not an APC kind")));
        }
        columns.extend(kind_columns(&rows, population, kind, None));
    }
    Ok(SlopeChangeDesign::from_columns(rows, columns))
}

/// Slope-change design over a single ordered index (one-dimensional curve).
pub fn build_index_design(name: &str, first_label: i32, positions: &[usize]) -> SlopeChangeDesign {
    let rows = RowIndex::for_positions(name, first_label, positions);
    let columns = kind_columns(&rows, 0, VariableKind::Index, None);
    SlopeChangeDesign::from_columns(rows, columns)
}

/// Four-quadrant two-population design from the first population's block:
/// `[X1 0; X1 X1]`, plus an all-ones difference constant over the second
/// block when requested. The second population's rows must be in the same
/// order as the first's.
pub fn build_joint(
    design_pop1: &SlopeChangeDesign,
    second_population: &str,
    include_difference_constant: bool,
) -> Result<SlopeChangeDesign> {
    let r1 = &design_pop1.rows;
    if r1.population.iter().any(|&p| p != 0) {
        return Err(Error::Dimension("joint design needs a first-population block".into()));
    }
    if design_pop1.columns.iter().any(|c| c.scope.is_some()) {
        return Err(Error::Dimension("design is already joint".into()));
    }
    let mut rows = r1.clone();
    rows.populations = vec![r1.populations[0].clone(), second_population.to_string()];
    rows.positions.extend_from_slice(&r1.positions);
    rows.population.extend(std::iter::repeat_n(1, r1.len()));

    let mut columns: Vec<Column> = design_pop1.columns.clone();
    for c in &design_pop1.columns {
        columns.push(Column {
            name: column_name(second_population, c.kind, c.label),
            population: 1,
            scope: Some(1),
            ..c.clone()
        });
    }
    if include_difference_constant {
        columns.push(Column {
            name: column_name(second_population, VariableKind::DiffConstant, 0),
            kind: VariableKind::DiffConstant,
            population: 1,
            index: 0,
            label: 0,
            scope: Some(1),
        });
    }
    Ok(SlopeChangeDesign::from_columns(rows, columns))
}

/// Single- or two-population APC design for a frame, as the fitting
/// pipeline uses it.
pub fn build_frame_design(
    frame: &MortalityFrame,
    kinds: &[VariableKind],
    include_difference_constant: bool,
) -> Result<SlopeChangeDesign> {
    let x1 = build_single_population(frame, 0, kinds)?;
    match frame.n_populations() {
        1 => Ok(x1),
        2 => {
            let b0 = frame.block(0);
            let b1 = frame.block(1);
            if b0.len() != b1.len() {
                return Err(Error::Dimension("population blocks differ in size".into()));
            }
            for (&i, &j) in b0.iter().zip(&b1) {
                if frame.age_idx[i] != frame.age_idx[j] || frame.year_idx[i] != frame.year_idx[j] {
                    return Err(Error::Dimension("population blocks differ in row order".into()));
                }
            }
            build_joint(&x1, &frame.populations[1], include_difference_constant)
        }
        n => Err(Error::Data(format!("{n} populations"))),
    }
}

/// Age trend-weight design: `alpha1 = Y * eta` per (population, age) and a
/// selector mapping each observation to its (population, age) row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendWeightDesign {
    pub n_ages: usize,
    pub first_age: i32,
    pub populations: Vec<String>,
    pub columns: Vec<Column>,
    /// `(P * n_ages)` rows, column-major.
    data: Vec<Vec<f64>>,
    /// Row of `Y` for each observation.
    pub selector: Vec<usize>,
}

impl TrendWeightDesign {
    /// Columns for every age `i = 1..=n_ages` in each population block;
    /// index 1 is a linear ramp (a constant shift is removed by the max).
    pub fn build(rows: &RowIndex) -> Self {
        let n_ages = rows.extents[0];
        let mut columns = Vec::new();
        for (p, name) in rows.populations.iter().enumerate() {
            for i in 1..=n_ages {
                let label = rows.origins[0] + i as i32 - 1;
                columns.push(Column {
                    name: format!("{name}:weight[{label}]"),
                    kind: VariableKind::Age,
                    population: p,
                    index: i,
                    label,
                    scope: Some(p),
                });
            }
        }
        let n_pop = rows.populations.len();
        let data = columns
            .iter()
            .map(|c| {
                (0..n_pop * n_ages)
                    .map(|r| {
                        let (p, k) = (r / n_ages, r % n_ages + 1);
                        if Some(p) == c.scope {
                            ramp(c.index, k) as f64
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let selector = (0..rows.len())
            .map(|j| rows.population[j] * n_ages + rows.positions[j][0] - 1)
            .collect();
        Self {
            n_ages,
            first_age: rows.origins[0],
            populations: rows.populations.clone(),
            columns,
            data,
            selector,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.populations.len() * self.n_ages
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, c: usize) -> &[f64] {
        &self.data[c]
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn alpha1(&self, eta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows()];
        for (col, &e) in self.data.iter().zip(eta) {
            for (o, &y) in out.iter_mut().zip(col) {
                *o += y * e;
            }
        }
        out
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
            data: cols.iter().map(|&c| self.data[c].clone()).collect(),
            ..self.clone()
        }
    }

    pub fn drop_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let mut seen = HashSet::new();
        for n in names {
            let n = n.as_ref();
            if !seen.insert(n) {
                return Err(Error::InvalidArgument(format!("column `{n}` dropped twice")));
            }
            if !self.columns.iter().any(|c| c.name == n) {
                return Err(Error::UnknownColumn(n.to_string()));
            }
        }
        let keep: Vec<usize> = (0..self.n_cols())
            .filter(|&c| !seen.contains(self.columns[c].name.as_str()))
            .collect();
        Ok(self.select_columns(&keep))
    }

    pub fn retain_names(&self, names: &[String]) -> Result<Self> {
        let wanted: HashSet<&str> = names.iter().map(String::as_str).collect();
        for n in &wanted {
            if !self.columns.iter().any(|c| c.name == *n) {
                return Err(Error::UnknownColumn(n.to_string()));
            }
        }
        let keep: Vec<usize> = (0..self.n_cols())
            .filter(|&c| wanted.contains(self.columns[c].name.as_str()))
            .collect();
        Ok(self.select_columns(&keep))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{load_rectangles, AgeYearGrid, PopulationTables};

    fn frame(n_pop: usize, n_ages: usize, n_years: usize) -> MortalityFrame {
        let t: Vec<_> = (0..n_pop)
            .map(|p| PopulationTables {
                name: ["SWE", "DNK"][p].to_string(),
                deaths: AgeYearGrid::filled(50, 1970, n_ages, n_years, 1.0),
                exposures: AgeYearGrid::filled(50, 1970, n_ages, n_years, 1.0),
            })
            .collect();
        load_rectangles(&t).unwrap()
    }

    #[test]
    fn products_match_dense_columns() {
        let f = frame(2, 6, 5);
        let full = build_frame_design(&f, &[VariableKind::Age, VariableKind::Period, VariableKind::Cohort], true).unwrap();
        let names = full.names();
        let x = full.drop_columns(&[&names[1], &names[7], &names[20]]).unwrap();
        let beta: Vec<f64> = (0..x.n_cols()).map(|c| ((c * 37 % 11) as f64 - 5.0) * 0.1).collect();
        let g: Vec<f64> = (0..x.n_rows()).map(|r| ((r * 13 % 7) as f64 - 3.0) * 0.2).collect();
        let fast = x.mul_vec(&beta);
        for (r, v) in fast.iter().enumerate() {
            let dense: f64 = (0..x.n_cols()).map(|c| x.get(r, c) * beta[c]).sum();
            assert!((v - dense).abs() < 1e-12);
        }
        let fast_t = x.tmul_vec(&g);
        for (c, v) in fast_t.iter().enumerate() {
            let dense: f64 = x.column(c).iter().zip(&g).map(|(a, b)| a * b).sum();
            assert!((v - dense).abs() < 1e-12);
        }
    }

    #[test]
    fn slope_change_values() {
        assert_eq!(slope_change_value(2, 3).unwrap(), 2);
        assert_eq!(slope_change_value(4, 1).unwrap(), 0);
        assert_eq!(slope_change_value(2, 38).unwrap(), 37);
        assert!(slope_change_value(1, 5).is_err());
    }

    #[test]
    fn small_age_period_design() {
        let f = frame(1, 3, 2);
        let x = build_single_population(&f, 0, &[VariableKind::Age, VariableKind::Period]).unwrap();
        assert_eq!(x.n_cols(), 3);
        assert_eq!(x.n_rows(), 6);
        assert_eq!(x.names(), vec!["SWE:age[51]", "SWE:age[52]", "SWE:period[1971]"]);
        assert!((0..3).all(|c| x.get(0, c) == 0.0));
        assert!(build_single_population(&f, 0, &[]).is_err());
    }

    #[test]
    fn unit_parameter_gives_ramp() {
        let f = frame(1, 5, 1);
        let x = build_single_population(&f, 0, &[VariableKind::Age]).unwrap();
        let c = x.position_of("SWE:age[52]").unwrap();
        let mut beta = vec![0.0; x.n_cols()];
        beta[c] = 1.0;
        assert_eq!(x.mul_vec(&beta), vec![0.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn joint_quadrants() {
        let f = frame(2, 3, 2);
        let x1 = build_single_population(&f, 0, &[VariableKind::Age, VariableKind::Period]).unwrap();
        let j = build_joint(&x1, "DNK", false).unwrap();
        assert_eq!((j.n_rows(), j.n_cols()), (12, 6));
        for r in 0..6 {
            for c in 3..6 {
                assert_eq!(j.get(r, c), 0.0);
            }
            for c in 0..3 {
                assert_eq!(j.get(r, c), j.get(r + 6, c));
                assert_eq!(j.get(r + 6, c + 3), x1.get(r, c));
            }
        }
        let jc = build_joint(&x1, "DNK", true).unwrap();
        assert_eq!(jc.n_cols(), 7);
        assert_eq!(jc.columns[6].name, "DNK:diff_const");
        let cst: Vec<f64> = jc.column(6).to_vec();
        assert_eq!(&cst[..6], &[0.0; 6]);
        assert_eq!(&cst[6..], &[1.0; 6]);
    }

    #[test]
    fn zero_differences_give_identical_populations() {
        let f = frame(2, 4, 3);
        let j = build_frame_design(&f, &[VariableKind::Age, VariableKind::Period, VariableKind::Cohort], true).unwrap();
        let beta: Vec<f64> = (0..j.n_cols())
            .map(|c| if j.columns[c].population == 0 { 0.1 * c as f64 - 0.3 } else { 0.0 })
            .collect();
        let fit = j.mul_vec(&beta);
        let n = fit.len() / 2;
        assert_eq!(&fit[..n], &fit[n..]);
    }

    #[test]
    fn paper_joint_design_has_331_columns() {
        let f = frame(2, 50, 47).restrict_cohorts(1883, 1953).unwrap();
        let j = build_frame_design(&f, &[VariableKind::Age, VariableKind::Period, VariableKind::Cohort], true).unwrap();
        assert_eq!(j.n_cols(), 331);
    }

    #[test]
    fn drop_columns_errors_and_metadata() {
        let f = frame(1, 4, 3);
        let x = build_single_population(&f, 0, &[VariableKind::Age]).unwrap();
        let d = x.drop_columns(&["SWE:age[52]"]).unwrap();
        assert_eq!(d.names(), vec!["SWE:age[51]", "SWE:age[53]"]);
        assert_eq!(d.n_rows(), x.n_rows());
        assert!(matches!(x.drop_columns(&["nope"]), Err(Error::UnknownColumn(_))));
        assert!(x.drop_columns(&["SWE:age[52]", "SWE:age[52]"]).is_err());
        let all = x.drop_columns(&x.names()).unwrap();
        assert_eq!(all.n_cols(), 0);
        assert!(all.mul_vec(&[]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn levels_are_double_cumulative_sums() {
        let f = frame(1, 4, 1);
        let x = build_single_population(&f, 0, &[VariableKind::Age]).unwrap();
        let mut beta = vec![0.0; 3];
        beta[0] = 1.0;
        let curves = level_equivalence_check(&x, &beta, 1e-12).unwrap();
        assert_eq!(curves[0].levels, vec![0.0, 1.0, 2.0, 3.0]);
        let curves = level_equivalence_check(&x, &[0.0; 3], 1e-12).unwrap();
        assert!(curves[0].levels.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn second_differences_recover_beta() {
        let f = frame(1, 7, 1);
        let x = build_single_population(&f, 0, &[VariableKind::Age]).unwrap();
        let beta = [0.3, -0.2, 0.05, 0.7, -1.1, 0.4];
        let lv = &x.level_curves(&beta)[0].levels;
        for k in 1..lv.len() - 1 {
            let d2 = lv[k + 1] - 2.0 * lv[k] + lv[k - 1];
            assert!((d2 - beta[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn trend_weight_design_structure() {
        let f = frame(2, 3, 2);
        let rows = RowIndex::from_frame(&f);
        let y = TrendWeightDesign::build(&rows);
        assert_eq!((y.n_rows(), y.n_cols()), (6, 6));
        assert_eq!(y.column(0), &[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        assert_eq!(y.column(4), &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0]);
        assert_eq!(y.selector.len(), 12);
        assert_eq!(y.selector[..3], [0, 1, 2]);
        assert_eq!(y.selector[9..], [3, 4, 5]);
    }

    #[test]
    fn csv_export_has_header() {
        let f = frame(1, 3, 2);
        let x = build_single_population(&f, 0, &[VariableKind::Age, VariableKind::Period]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        x.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "SWE:age[51],SWE:age[52],SWE:period[1971]");
        assert_eq!(lines.count(), 6);
    }
}
