use mortspline::design::{build_frame_design, level_equivalence_check, VariableKind};
use mortspline::frame::{load_rectangles, AgeYearGrid, MortalityFrame, PopulationTables};
use proptest::prelude::*;

const APC: [VariableKind; 3] = [VariableKind::Age, VariableKind::Period, VariableKind::Cohort];

fn frame(pops: usize, ages: usize, years: usize) -> MortalityFrame {
    let tables: Vec<PopulationTables> = (0..pops)
        .map(|p| PopulationTables {
            name: format!("P{p}"),
            deaths: AgeYearGrid::filled(40, 1990, ages, years, 2.0),
            exposures: AgeYearGrid::filled(40, 1990, ages, years, 100.0),
        })
        .collect();
    load_rectangles(&tables).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entries_are_clipped_ramps(pops in 1usize..=2, ages in 2usize..9, years in 2usize..7) {
        let f = frame(pops, ages, years);
        let x = build_frame_design(&f, &APC, pops == 2).unwrap();
        for c in 0..x.n_cols() {
            let col = &x.columns[c];
            for r in 0..x.n_rows() {
                prop_assert_eq!(x.get(r, c), x.entry_formula(r, c));
                if col.kind != VariableKind::DiffConstant {
                    let row = r % (ages * years);
                    let j = f.block(0)[row];
                    let k = match col.kind {
                        VariableKind::Age => f.age_idx[j],
                        VariableKind::Period => f.year_idx[j],
                        _ => f.cohort_idx[j],
                    };
                    let in_scope = col.scope.is_none_or(|s| f.pop_idx[r] == s);
                    let ramp = (k + 1).saturating_sub(col.index) as f64;
                    prop_assert_eq!(x.get(r, c), if in_scope { ramp } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn slope_and_level_fits_agree(
        pops in 1usize..=2,
        ages in 2usize..9,
        years in 2usize..7,
        seed in proptest::collection::vec(-2.0f64..2.0, 64),
    ) {
        let f = frame(pops, ages, years);
        let x = build_frame_design(&f, &APC, pops == 2).unwrap();
        let beta: Vec<f64> = (0..x.n_cols()).map(|i| seed[i % seed.len()] * (1.0 + i as f64).sqrt().recip()).collect();
        prop_assert!(level_equivalence_check(&x, &beta, 1e-10).is_ok());
    }

    #[test]
    fn transpose_product_is_adjoint(
        ages in 2usize..9,
        years in 2usize..7,
        b in proptest::collection::vec(-1.0f64..1.0, 64),
        g in proptest::collection::vec(-1.0f64..1.0, 128),
    ) {
        let f = frame(2, ages, years);
        let x = build_frame_design(&f, &APC, true).unwrap();
        let beta: Vec<f64> = (0..x.n_cols()).map(|i| b[i % b.len()]).collect();
        let gv: Vec<f64> = (0..x.n_rows()).map(|i| g[i % g.len()]).collect();
        let lhs: f64 = x.mul_vec(&beta).iter().zip(&gv).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.tmul_vec(&gv).iter().zip(&beta).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn trimming_keeps_well_populated_cohorts(ages in 2usize..12, years in 2usize..12, min_cells in 1usize..5) {
        let f = frame(1, ages, years);
        match f.trim_cohorts(min_cells) {
            Ok(t) => {
                t.validate().unwrap();
                let sizes = t.cohort_sizes(0);
                prop_assert!(sizes.values().all(|&n| n >= min_cells));
                for j in 0..t.len() {
                    prop_assert_eq!(t.cohort(j), t.year(j) - t.age(j));
                }
            }
            Err(_) => prop_assert!(ages.min(years) < min_cells),
        }
    }
}
