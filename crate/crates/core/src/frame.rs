//! Deaths/exposures ingestion.
//!
//! Rectangular age-by-year tables are flattened into a long-format frame with
//! year-major ordering (fixed year, ages ascending), one block per population.
//! Cohort is year of death minus age at death.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An age-by-year rectangle of values, rows are ages and columns are years.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeYearGrid {
    pub first_age: i32,
    pub first_year: i32,
    /// `values[age_offset][year_offset]`
    pub values: Vec<Vec<f64>>,
}

impl AgeYearGrid {
    pub fn new(first_age: i32, first_year: i32, values: Vec<Vec<f64>>) -> Result<Self> {
        let width = values.first().map(|r| r.len()).unwrap_or(0);
        if values.is_empty() || width == 0 {
            return Err(Error::Dimension("empty grid".into()));
        }
        if values.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("ragged grid rows".into()));
        }
        Ok(Self {
            first_age,
            first_year,
            values,
        })
    }

    pub fn filled(first_age: i32, first_year: i32, n_ages: usize, n_years: usize, v: f64) -> Self {
        Self {
            first_age,
            first_year,
            values: vec![vec![v; n_years]; n_ages],
        }
    }

    pub fn n_ages(&self) -> usize {
        self.values.len()
    }

    pub fn n_years(&self) -> usize {
        self.values[0].len()
    }

    pub fn get(&self, age: i32, year: i32) -> Option<f64> {
        let a = usize::try_from(age - self.first_age).ok()?;
        let y = usize::try_from(year - self.first_year).ok()?;
        self.values.get(a)?.get(y).copied()
    }

    /// Reads a wide CSV: header `age,<year>,<year>,...`, one row per age.
    pub fn read_wide_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_wide_csv(&text)
    }

    pub fn parse_wide_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        if headers.len() < 2 {
            return Err(Error::Data("wide csv needs an age column and at least one year".into()));
        }
        let years: Vec<i32> = headers
            .iter()
            .skip(1)
            .map(|h| {
                h.parse::<i32>()
                    .map_err(|_| Error::Data(format!("bad year header `{h}`")))
            })
            .collect::<Result<_>>()?;
        check_consecutive(&years, "year")?;
        let mut ages = Vec::new();
        let mut values = Vec::new();
        for record in reader.records() {
            let record = record?;
            let age = record
                .get(0)
                .and_then(|s| s.parse::<i32>().ok())
                .ok_or_else(|| Error::Data(format!("bad age cell in row {:?}", record)))?;
            let row: Vec<f64> = record
                .iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Data(format!("bad value `{s}` at age {age}")))
                })
                .collect::<Result<_>>()?;
            if row.len() != years.len() {
                return Err(Error::Dimension(format!("row for age {age} has {} values", row.len())));
            }
            ages.push(age);
            values.push(row);
        }
        check_consecutive(&ages, "age")?;
        Self::new(ages[0], years[0], values)
    }

    pub fn write_wide_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["age".to_string()];
        header.extend((0..self.n_years()).map(|y| (self.first_year + y as i32).to_string()));
        w.write_record(&header)?;
        for (a, row) in self.values.iter().enumerate() {
            let mut rec = vec![(self.first_age + a as i32).to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads one sex column of a Human Mortality Database 1x1 text file
    /// (`Year Age Female Male Total`, preamble lines ignored), restricted to
    /// the given inclusive age and year ranges. Open age labels like `110+`
    /// are parsed as their lower bound.
    pub fn read_hmd(path: &Path, column: &str, ages: (i32, i32), years: (i32, i32)) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_hmd(&text, column, ages, years)
    }

    pub fn parse_hmd(text: &str, column: &str, ages: (i32, i32), years: (i32, i32)) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<&str> = loop {
            match lines.next() {
                Some(l) if l.trim_start().starts_with("Year") => break l.split_whitespace().collect(),
                Some(_) => continue,
                None => return Err(Error::Data("no `Year Age ...` header in HMD file".into())),
            }
        };
        let col = header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(column))
            .ok_or_else(|| Error::Data(format!("column `{column}` not in HMD header {header:?}")))?;
        let n_ages = (ages.1 - ages.0 + 1) as usize;
        let n_years = (years.1 - years.0 + 1) as usize;
        let mut values = vec![vec![f64::NAN; n_years]; n_ages];
        for line in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() <= col {
                continue;
            }
            let year: i32 = match fields[0].parse() {
                Ok(y) => y,
                Err(_) => continue,
            };
            let age: i32 = fields[1]
                .trim_end_matches('+')
                .parse()
                .map_err(|_| Error::Data(format!("bad HMD age `{}`", fields[1])))?;
            if !(ages.0..=ages.1).contains(&age) || !(years.0..=years.1).contains(&year) {
                continue;
            }
            let v: f64 = fields[col]
                .parse()
                .map_err(|_| Error::Data(format!("bad HMD value `{}`", fields[col])))?;
            values[(age - ages.0) as usize][(year - years.0) as usize] = v;
        }
        for (a, row) in values.iter().enumerate() {
            for (y, v) in row.iter().enumerate() {
                if v.is_nan() {
                    return Err(Error::Data(format!(
                        "HMD file missing age {} year {}",
                        ages.0 + a as i32,
                        years.0 + y as i32
                    )));
                }
            }
        }
        Self::new(ages.0, years.0, values)
    }
}

fn check_consecutive(v: &[i32], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Data(format!("no {what} values")));
    }
    for w in v.windows(2) {
        if w[1] != w[0] + 1 {
            return Err(Error::Data(format!("{what} values must be consecutive ({} then {})", w[0], w[1])));
        }
    }
    Ok(())
}

/// Deaths and exposures rectangles for one population.
#[derive(Debug, Clone)]
pub struct PopulationTables {
    pub name: String,
    pub deaths: AgeYearGrid,
    pub exposures: AgeYearGrid,
}

/// Long-format observations for one or two populations.
///
/// Dense indices are 1-based. `cohort_idx` is relative to the first retained
/// cohort, so `cohort_idx = year_idx - age_idx + (first_year - first_age - first_cohort) + 1`
/// and the calendar identity `cohort = year - age` holds for every row.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MortalityFrame {
    pub populations: Vec<String>,
    pub first_age: i32,
    pub n_ages: usize,
    pub first_year: i32,
    pub n_years: usize,
    pub first_cohort: i32,
    pub n_cohorts: usize,
    pub deaths: Vec<u64>,
    pub exposures: Vec<f64>,
    pub age_idx: Vec<usize>,
    pub year_idx: Vec<usize>,
    pub cohort_idx: Vec<usize>,
    pub pop_idx: Vec<usize>,
}

/// Flattens per-population rectangles into a long frame (no cohort trimming).
pub fn load_rectangles(tables: &[PopulationTables]) -> Result<MortalityFrame> {
    if tables.is_empty() || tables.len() > 2 {
        return Err(Error::Data(format!("expected 1 or 2 populations, got {}", tables.len())));
    }
    let first = &tables[0].deaths;
    let (n_ages, n_years) = (first.n_ages(), first.n_years());
    let mut names = HashSet::new();
    for t in tables {
        if !names.insert(t.name.clone()) {
            return Err(Error::Data(format!("duplicate population name `{}`", t.name)));
        }
        for g in [&t.deaths, &t.exposures] {
            if g.n_ages() != n_ages
                || g.n_years() != n_years
                || g.first_age != first.first_age
                || g.first_year != first.first_year
            {
                return Err(Error::Dimension(format!(
                    "population `{}`: grids must all cover ages {}..{} and years {}..{}",
                    t.name,
                    first.first_age,
                    first.first_age + n_ages as i32 - 1,
                    first.first_year,
                    first.first_year + n_years as i32 - 1
                )));
            }
        }
    }

    let n = tables.len() * n_ages * n_years;
    let mut frame = MortalityFrame {
        populations: tables.iter().map(|t| t.name.clone()).collect(),
        first_age: first.first_age,
        n_ages,
        first_year: first.first_year,
        n_years,
        first_cohort: first.first_year - (first.first_age + n_ages as i32 - 1),
        n_cohorts: n_ages + n_years - 1,
        deaths: Vec::with_capacity(n),
        exposures: Vec::with_capacity(n),
        age_idx: Vec::with_capacity(n),
        year_idx: Vec::with_capacity(n),
        cohort_idx: Vec::with_capacity(n),
        pop_idx: Vec::with_capacity(n),
    };
    for (p, t) in tables.iter().enumerate() {
        for y in 0..n_years {
            for a in 0..n_ages {
                let d = t.deaths.values[a][y];
                let e = t.exposures.values[a][y];
                let age = frame.first_age + a as i32;
                let year = frame.first_year + y as i32;
                if !(d.is_finite() && d >= 0.0 && d.fract() == 0.0) {
                    return Err(Error::Data(format!(
                        "population `{}` age {age} year {year}: deaths must be a non-negative integer, got {d}",
                        t.name
                    )));
                }
                if !(e.is_finite() && e > 0.0) {
                    return Err(Error::Data(format!(
                        "population `{}` age {age} year {year}: exposure must be positive, got {e}",
                        t.name
                    )));
                }
                frame.deaths.push(d as u64);
                frame.exposures.push(e);
                frame.age_idx.push(a + 1);
                frame.year_idx.push(y + 1);
                frame.cohort_idx.push((year - age - frame.first_cohort) as usize + 1);
                frame.pop_idx.push(p);
            }
        }
    }
    Ok(frame)
}

/// Number of distinct cohorts per population (`a + b - 1` before trimming).
pub fn cohort_count(frame: &MortalityFrame) -> usize {
    frame.n_cohorts
}

impl MortalityFrame {
    pub fn len(&self) -> usize {
        self.deaths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deaths.is_empty()
    }

    pub fn n_populations(&self) -> usize {
        self.populations.len()
    }

    pub fn age(&self, j: usize) -> i32 {
        self.first_age + self.age_idx[j] as i32 - 1
    }

    pub fn year(&self, j: usize) -> i32 {
        self.first_year + self.year_idx[j] as i32 - 1
    }

    pub fn cohort(&self, j: usize) -> i32 {
        self.first_cohort + self.cohort_idx[j] as i32 - 1
    }

    pub fn last_cohort(&self) -> i32 {
        self.first_cohort + self.n_cohorts as i32 - 1
    }

    pub fn log_exposures(&self) -> Vec<f64> {
        self.exposures.iter().map(|e| e.ln()).collect()
    }

    pub fn deaths_f64(&self) -> Vec<f64> {
        self.deaths.iter().map(|&d| d as f64).collect()
    }

    /// Row indices belonging to population `p`, in frame order.
    pub fn block(&self, p: usize) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.pop_idx[j] == p).collect()
    }

    /// Cells per cohort (calendar cohort -> count) for one population.
    pub fn cohort_sizes(&self, p: usize) -> BTreeMap<i32, usize> {
        let mut m = BTreeMap::new();
        for j in self.block(p) {
            *m.entry(self.cohort(j)).or_insert(0) += 1;
        }
        m
    }

    /// Keeps only rows whose cohort lies in `[lo, hi]`; the first retained
    /// cohort becomes dense index 1.
    pub fn restrict_cohorts(&self, lo: i32, hi: i32) -> Result<Self> {
        let lo = lo.max(self.first_cohort);
        let hi = hi.min(self.last_cohort());
        if lo > hi {
            return Err(Error::Data(format!("cohort window {lo}..{hi} is empty")));
        }
        let keep: Vec<usize> = (0..self.len())
            .filter(|&j| (lo..=hi).contains(&self.cohort(j)))
            .collect();
        let mut out = self.select_rows(&keep);
        out.first_cohort = lo;
        out.n_cohorts = (hi - lo + 1) as usize;
        out.cohort_idx = keep
            .iter()
            .map(|&j| (self.cohort(j) - lo) as usize + 1)
            .collect();
        Ok(out)
    }

    /// Drops edge cohorts with fewer than `min_cells` cells in a population.
    /// Only leading and trailing cohorts are removed so the retained cohorts
    /// stay contiguous.
    pub fn trim_cohorts(&self, min_cells: usize) -> Result<Self> {
        let sizes = self.cohort_sizes(0);
        let ok: Vec<i32> = sizes
            .iter()
            .filter(|(_, &n)| n >= min_cells)
            .map(|(&c, _)| c)
            .collect();
        match (ok.first(), ok.last()) {
            (Some(&lo), Some(&hi)) => self.restrict_cohorts(lo, hi),
            _ => Err(Error::Data(format!("no cohort has at least {min_cells} cells"))),
        }
    }

    fn select_rows(&self, rows: &[usize]) -> Self {
        let pick_u = |v: &Vec<usize>| rows.iter().map(|&j| v[j]).collect::<Vec<_>>();
        Self {
            populations: self.populations.clone(),
            first_age: self.first_age,
            n_ages: self.n_ages,
            first_year: self.first_year,
            n_years: self.n_years,
            first_cohort: self.first_cohort,
            n_cohorts: self.n_cohorts,
            deaths: rows.iter().map(|&j| self.deaths[j]).collect(),
            exposures: rows.iter().map(|&j| self.exposures[j]).collect(),
            age_idx: pick_u(&self.age_idx),
            year_idx: pick_u(&self.year_idx),
            cohort_idx: pick_u(&self.cohort_idx),
            pop_idx: pick_u(&self.pop_idx),
        }
    }

    /// Replaces the death counts (same row order), e.g. for simulated data.
    pub fn with_deaths(&self, deaths: Vec<u64>) -> Result<Self> {
        if deaths.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} deaths for a frame of {} rows",
                deaths.len(),
                self.len()
            )));
        }
        let mut out = self.clone();
        out.deaths = deaths;
        Ok(out)
    }

    /// Re-pivots one population's deaths into an age-by-year grid. Cells
    /// missing after trimming are NaN.
    pub fn deaths_grid(&self, p: usize) -> AgeYearGrid {
        self.pivot(p, |j| self.deaths[j] as f64)
    }

    pub fn exposures_grid(&self, p: usize) -> AgeYearGrid {
        self.pivot(p, |j| self.exposures[j])
    }

    fn pivot(&self, p: usize, value: impl Fn(usize) -> f64) -> AgeYearGrid {
        let mut g = AgeYearGrid::filled(self.first_age, self.first_year, self.n_ages, self.n_years, f64::NAN);
        for j in self.block(p) {
            g.values[self.age_idx[j] - 1][self.year_idx[j] - 1] = value(j);
        }
        g
    }

    /// Checks the structural invariants; used by tests and after loading.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for v in [&self.age_idx, &self.year_idx, &self.cohort_idx, &self.pop_idx] {
            if v.len() != n {
                return Err(Error::Dimension("parallel vectors differ in length".into()));
            }
        }
        if self.exposures.len() != n {
            return Err(Error::Dimension("exposures length differs".into()));
        }
        let mut seen = HashSet::new();
        for j in 0..n {
            if self.cohort(j) != self.year(j) - self.age(j) {
                return Err(Error::Data(format!("row {j}: cohort != year - age")));
            }
            if self.exposures[j] <= 0.0 {
                return Err(Error::Data(format!("row {j}: non-positive exposure")));
            }
            if !seen.insert((self.pop_idx[j], self.age_idx[j], self.year_idx[j])) {
                return Err(Error::Data(format!("row {j}: duplicate cell")));
            }
        }
        if self.n_populations() == 2 {
            let b0 = self.block(0);
            let b1 = self.block(1);
            if b0.len() != b1.len() || b0.last() >= b1.first() {
                return Err(Error::Data("population blocks are not stacked".into()));
            }
            for (&i, &j) in b0.iter().zip(&b1) {
                if self.age_idx[i] != self.age_idx[j] || self.year_idx[i] != self.year_idx[j] {
                    return Err(Error::Data("population blocks differ in row order".into()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tables(n_pop: usize, n_ages: usize, n_years: usize, d: f64, e: f64) -> Vec<PopulationTables> {
        (0..n_pop)
            .map(|p| PopulationTables {
                name: format!("P{p}"),
                deaths: AgeYearGrid::filled(50, 1970, n_ages, n_years, d),
                exposures: AgeYearGrid::filled(50, 1970, n_ages, n_years, e),
            })
            .collect()
    }

    #[test]
    fn paper_sized_grid_has_96_cohorts() {
        let f = load_rectangles(&tables(1, 50, 47, 3.0, 100.0)).unwrap();
        assert_eq!(f.len(), 2350);
        assert_eq!(cohort_count(&f), 96);
        assert_eq!(f.first_cohort, 1871);
        assert_eq!(f.last_cohort(), 1966);
        f.validate().unwrap();
    }

    #[test]
    fn single_cell_frame() {
        let f = load_rectangles(&tables(1, 1, 1, 0.0, 1.0)).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(cohort_count(&f), 1);
    }

    #[test]
    fn two_population_degenerate_grid() {
        let f = load_rectangles(&tables(2, 3, 2, 0.0, 1.0)).unwrap();
        assert_eq!(f.len(), 12);
        assert_eq!(cohort_count(&f), 4);
        assert!(f.pop_idx[..6].iter().all(|&p| p == 0));
        assert!(f.pop_idx[6..].iter().all(|&p| p == 1));
        f.validate().unwrap();
    }

    #[test]
    fn year_major_age_ascending_order() {
        let f = load_rectangles(&tables(1, 3, 2, 0.0, 1.0)).unwrap();
        let cells: Vec<(i32, i32)> = (0..f.len()).map(|j| (f.year(j), f.age(j))).collect();
        assert_eq!(
            cells,
            vec![(1970, 50), (1970, 51), (1970, 52), (1971, 50), (1971, 51), (1971, 52)]
        );
    }

    #[test]
    fn cohort_buckets_match_enumeration() {
        // 5 ages x 3 years: 15 cells bucketed by year - age
        let f = load_rectangles(&tables(1, 5, 3, 1.0, 1.0)).unwrap();
        assert_eq!(cohort_count(&f), 7);
        let mut brute = BTreeMap::new();
        for a in 0..5 {
            for y in 0..3 {
                *brute.entry((1970 + y) - (50 + a)).or_insert(0usize) += 1;
            }
        }
        assert_eq!(f.cohort_sizes(0), brute);
        assert_eq!(brute.values().copied().collect::<Vec<_>>(), vec![1, 2, 3, 3, 3, 2, 1]);
        assert!(brute.values().all(|&n| (1..=3).contains(&n)));
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut t = tables(1, 2, 2, 1.0, 1.0);
        t[0].exposures.values[1][1] = 0.0;
        assert!(matches!(load_rectangles(&t), Err(Error::Data(_))));

        let mut t = tables(1, 2, 2, 1.0, 1.0);
        t[0].deaths.values[0][0] = -1.0;
        assert!(matches!(load_rectangles(&t), Err(Error::Data(_))));

        let mut t = tables(1, 2, 2, 1.0, 1.0);
        t[0].deaths.values[0][0] = 1.5;
        assert!(matches!(load_rectangles(&t), Err(Error::Data(_))));

        let mut t = tables(1, 2, 2, 1.0, 1.0);
        t[0].exposures = AgeYearGrid::filled(50, 1970, 3, 2, 1.0);
        assert!(matches!(load_rectangles(&t), Err(Error::Dimension(_))));
    }

    #[test]
    fn trimming_keeps_contiguous_cohorts() {
        let f = load_rectangles(&tables(2, 5, 3, 1.0, 1.0)).unwrap();
        let t = f.trim_cohorts(3).unwrap();
        assert_eq!(t.n_cohorts, 3);
        assert_eq!(t.len(), 18);
        t.validate().unwrap();
        assert_eq!(t.cohort_idx.iter().copied().min(), Some(1));
        assert_eq!(t.cohort_idx.iter().copied().max(), Some(3));
    }

    #[test]
    fn paper_cohort_window() {
        let f = load_rectangles(&tables(2, 50, 47, 1.0, 1.0)).unwrap();
        let t = f.restrict_cohorts(1883, 1953).unwrap();
        assert_eq!(t.n_cohorts, 71);
        t.validate().unwrap();
    }

    #[test]
    fn parses_wide_csv_and_hmd() {
        let g = AgeYearGrid::parse_wide_csv("age,2000,2001\n60,1,2\n61,3,4\n").unwrap();
        assert_eq!(g.get(61, 2000), Some(3.0));

        let hmd = "Sweden, Deaths (period 1x1)\n\n  Year  Age  Female  Male  Total\n  2000  60  1.0  2.0  3.0\n  2000  61  1.0  5.0  6.0\n  2001  60  1.0  7.0  8.0\n  2001  61  1.0  9.0  10.0\n  2001  110+  0.0  0.0  0.0\n";
        let g = AgeYearGrid::parse_hmd(hmd, "Male", (60, 61), (2000, 2001)).unwrap();
        assert_eq!(g.values, vec![vec![2.0, 7.0], vec![5.0, 9.0]]);
        assert!(AgeYearGrid::parse_hmd(hmd, "Male", (60, 62), (2000, 2001)).is_err());
    }
}
