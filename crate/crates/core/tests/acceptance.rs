use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use mortspline::config::{LadderStage, RunConfig};
use mortspline::design::{build_frame_design, build_index_design, build_single_population, column_name, level_equivalence_check, VariableKind};
use mortspline::frame::{load_rectangles, AgeYearGrid, PopulationTables};
use mortspline::lasso::{lambda_grid, screen, solve_path, LassoConfig, LassoFamily, LassoProblem};
use mortspline::likelihood::MeanStructure;
use mortspline::loo::{exact_loo_oracle, se_of_difference};
use mortspline::mcmc::{effective_sample_size, sample, PosteriorSample, SamplerConfig, Target};
use mortspline::model::{ConstantPrior, Model};
use mortspline::pipeline::{build_model, fit_ladder, run_pipeline, ActiveSet, PreparedData};
use mortspline::prior::{prior_by_name, t2_cdf, t2_pdf, t6_laplace_match_check, Hyper, PriorSpec};
use mortspline::projection::{compound_factor, trend_factor};
use mortspline::synthetic::{simulate_frame, SyntheticSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal, StudentT};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// cohort, year, age, age ramps 2..4, cohort ramps 2..4 (Sweden, 1970-71)
const EXCERPT: [(i32, i32, i32, [u64; 3], [u64; 3]); 42] = [
    (1920, 1970, 50, [0, 0, 0], [37, 36, 35]),
    (1919, 1970, 51, [1, 0, 0], [36, 35, 34]),
    (1918, 1970, 52, [2, 1, 0], [35, 34, 33]),
    (1917, 1970, 53, [3, 2, 1], [34, 33, 32]),
    (1916, 1970, 54, [4, 3, 2], [33, 32, 31]),
    (1915, 1970, 55, [5, 4, 3], [32, 31, 30]),
    (1914, 1970, 56, [6, 5, 4], [31, 30, 29]),
    (1913, 1970, 57, [7, 6, 5], [30, 29, 28]),
    (1912, 1970, 58, [8, 7, 6], [29, 28, 27]),
    (1911, 1970, 59, [9, 8, 7], [28, 27, 26]),
    (1910, 1970, 60, [10, 9, 8], [27, 26, 25]),
    (1909, 1970, 61, [11, 10, 9], [26, 25, 24]),
    (1908, 1970, 62, [12, 11, 10], [25, 24, 23]),
    (1907, 1970, 63, [13, 12, 11], [24, 23, 22]),
    (1906, 1970, 64, [14, 13, 12], [23, 22, 21]),
    (1905, 1970, 65, [15, 14, 13], [22, 21, 20]),
    (1904, 1970, 66, [16, 15, 14], [21, 20, 19]),
    (1903, 1970, 67, [17, 16, 15], [20, 19, 18]),
    (1902, 1970, 68, [18, 17, 16], [19, 18, 17]),
    (1901, 1970, 69, [19, 18, 17], [18, 17, 16]),
    (1900, 1970, 70, [20, 19, 18], [17, 16, 15]),
    (1899, 1970, 71, [21, 20, 19], [16, 15, 14]),
    (1898, 1970, 72, [22, 21, 20], [15, 14, 13]),
    (1897, 1970, 73, [23, 22, 21], [14, 13, 12]),
    (1896, 1970, 74, [24, 23, 22], [13, 12, 11]),
    (1895, 1970, 75, [25, 24, 23], [12, 11, 10]),
    (1894, 1970, 76, [26, 25, 24], [11, 10, 9]),
    (1893, 1970, 77, [27, 26, 25], [10, 9, 8]),
    (1892, 1970, 78, [28, 27, 26], [9, 8, 7]),
    (1891, 1970, 79, [29, 28, 27], [8, 7, 6]),
    (1890, 1970, 80, [30, 29, 28], [7, 6, 5]),
    (1889, 1970, 81, [31, 30, 29], [6, 5, 4]),
    (1888, 1970, 82, [32, 31, 30], [5, 4, 3]),
    (1887, 1970, 83, [33, 32, 31], [4, 3, 2]),
    (1886, 1970, 84, [34, 33, 32], [3, 2, 1]),
    (1885, 1970, 85, [35, 34, 33], [2, 1, 0]),
    (1884, 1970, 86, [36, 35, 34], [1, 0, 0]),
    (1883, 1970, 87, [37, 36, 35], [0, 0, 0]),
    (1921, 1971, 50, [0, 0, 0], [38, 37, 36]),
    (1920, 1971, 51, [1, 0, 0], [37, 36, 35]),
    (1919, 1971, 52, [2, 1, 0], [36, 35, 34]),
    (1918, 1971, 53, [3, 2, 1], [35, 34, 33]),
];

fn grid_tables(names: &[&str], first_age: i32, n_ages: usize, first_year: i32, n_years: usize) -> Vec<PopulationTables> {
    names
        .iter()
        .map(|n| PopulationTables {
            name: n.to_string(),
            deaths: AgeYearGrid::filled(first_age, first_year, n_ages, n_years, 1.0),
            exposures: AgeYearGrid::filled(first_age, first_year, n_ages, n_years, 1000.0),
        })
        .collect()
}

fn design_excerpt() -> Outcome {
    let frame = load_rectangles(&grid_tables(&["SWE"], 50, 50, 1970, 47)).unwrap().restrict_cohorts(1883, 1953).unwrap();
    let x = build_single_population(&frame, 0, &[VariableKind::Age, VariableKind::Period, VariableKind::Cohort]).unwrap();
    let mut mismatches = 0;
    for &(cohort, year, age, r, q) in &EXCERPT {
        let j = (0..frame.len()).find(|&j| frame.age(j) == age && frame.year(j) == year).unwrap();
        if frame.cohort(j) != cohort {
            mismatches += 1;
        }
        for i in 0..3 {
            let a = x.position_of(&column_name("SWE", VariableKind::Age, 51 + i as i32)).unwrap();
            let c = x.position_of(&column_name("SWE", VariableKind::Cohort, 1884 + i as i32)).unwrap();
            if x.get(j, a) != r[i] as f64 || x.get(j, c) != q[i] as f64 {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{} rows, {mismatches} mismatches, {} columns", EXCERPT.len(), x.n_cols()))
}

/// Fitted values of least squares on the columns of `m`.
fn ls_fitted(m: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let svd = m.clone().svd(true, true);
    m * svd.solve(y, 1e-9).unwrap()
}

fn level_dummies(frame: &mortspline::frame::MortalityFrame) -> DMatrix<f64> {
    let n = frame.len();
    let per_pop = (frame.n_ages - 1) + (frame.n_years - 1) + (frame.n_cohorts - 1);
    let cols = 1 + frame.n_populations() * per_pop + (frame.n_populations() - 1);
    let mut m = DMatrix::zeros(n, cols);
    for j in 0..n {
        m[(j, 0)] = 1.0;
        let p = frame.pop_idx[j];
        let base = 1 + p * per_pop;
        let (a, y, c) = (frame.age_idx[j], frame.year_idx[j], frame.cohort_idx[j]);
        if a > 1 {
            m[(j, base + a - 2)] = 1.0;
        }
        if y > 1 {
            m[(j, base + frame.n_ages - 1 + y - 2)] = 1.0;
        }
        if c > 1 {
            m[(j, base + frame.n_ages - 1 + frame.n_years - 1 + c - 2)] = 1.0;
        }
        if p == 1 {
            m[(j, cols - 1)] = 1.0;
        }
    }
    m
}

fn level_slope_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: &[&str] = if seed % 2 == 0 { &["A"] } else { &["A", "B"] };
        let frame = load_rectangles(&grid_tables(names, 60, 8, 2000, 6)).unwrap();
        let x = build_frame_design(&frame, &[VariableKind::Age, VariableKind::Period, VariableKind::Cohort], names.len() == 2).unwrap();
        let beta: Vec<f64> = (0..x.n_cols()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        if level_equivalence_check(&x, &beta, 1e-10).is_err() {
            failures += 1;
        }
        let n = frame.len();
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let slope = DMatrix::from_fn(n, x.n_cols() + 1, |r, c| if c == 0 { 1.0 } else { x.get(r, c - 1) });
        let d = (ls_fitted(&slope, &y) - ls_fitted(&level_dummies(&frame), &y)).amax();
        worst = worst.max(d);
        if d > 1e-10 {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("100 seeds, max fitted-value gap {worst:.1e}, {failures} failures"))
}

/// Integral of `f` over the real line by Simpson's rule after `b = tan(t)`.
fn integrate_line(f: impl Fn(f64) -> f64) -> f64 {
    let n = 200_000;
    let lo = -std::f64::consts::FRAC_PI_2;
    let h = std::f64::consts::PI / n as f64;
    let g = |t: f64| {
        let c = t.cos();
        if c <= 0.0 {
            0.0
        } else {
            f(t.tan()) / (c * c)
        }
    };
    let mut s = g(lo) + g(-lo);
    for i in 1..n {
        s += g(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

struct Moments {
    var: f64,
    var_se: f64,
    kurt: f64,
    kurt_se: f64,
}

fn moments(x: &[f64]) -> Moments {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m = |k: i32| x.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    let (m2, m4, m6, m8) = (m(2), m(4), m(6), m(8));
    let kurt = m4 / (m2 * m2);
    let kvar = ((m8 - m4 * m4) / m2.powi(4) - 4.0 * m4 * (m6 - m4 * m2) / m2.powi(5) + 4.0 * m4 * m4 * (m4 - m2 * m2) / m2.powi(6)) / n;
    Moments {
        var: m2,
        var_se: ((m4 - m2 * m2) / n).sqrt(),
        kurt,
        kurt_se: kvar.max(0.0).sqrt(),
    }
}

fn prior_analytics() -> Outcome {
    let h = 1e-5;
    let mut cdf_gap: f64 = 0.0;
    let mut b = -10.0;
    while b <= 10.0 + 1e-12 {
        cdf_gap = cdf_gap.max(((t2_cdf(b + h) - t2_cdf(b - h)) / (2.0 * h) - t2_pdf(b)).abs());
        b += 0.005;
    }
    let mut mass_gap: f64 = 0.0;
    for (name, nu) in [("laplace", 0.0), ("double_exponential", 0.0), ("student_t", 6.0), ("student_t", 1.5), ("cauchy", 0.0), ("t2", 0.0), ("normal", 0.0)] {
        let prior = prior_by_name(name).unwrap();
        for scale in [0.3, 1.0, 2.5] {
            mass_gap = mass_gap.max((integrate_line(|b| prior.log_density(b, scale, nu).exp()) - 1.0).abs());
        }
    }
    let r = t6_laplace_match_check();
    let formula_ok = (r.t6_variance - 1.5).abs() < 1e-12
        && (r.laplace_variance - 1.5).abs() < 1e-12
        && (r.t6_kurtosis - 6.0).abs() < 1e-12
        && (r.laplace_kurtosis - 6.0).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let t6 = StudentT::new(6.0).unwrap();
    let t_draws: Vec<f64> = (0..1_000_000).map(|_| t6.sample(&mut rng)).collect();
    let l_draws: Vec<f64> = (0..1_000_000)
        .map(|_| r.laplace_scale * (rng.sample::<f64, _>(Exp1) - rng.sample::<f64, _>(Exp1)))
        .collect();
    let mut z_max: f64 = 0.0;
    let mut sim = Vec::new();
    for (label, draws) in [("t6", &t_draws), ("laplace", &l_draws)] {
        let m = moments(draws);
        let zv = (m.var - 1.5) / m.var_se;
        let zk = (m.kurt - 6.0) / m.kurt_se;
        z_max = z_max.max(zv.abs()).max(zk.abs());
        sim.push(format!("{label} var {:.4} (z {zv:+.2}) kurt {:.3} (z {zk:+.2})", m.var, m.kurt));
    }
    let pass = cdf_gap < 1e-6 && mass_gap < 1e-6 && formula_ok && z_max < 3.0;
    outcome(
        pass,
        format!("max |F'-f| {cdf_gap:.1e}, max |mass-1| {mass_gap:.1e}, formulas {}, {}", if formula_ok { "exact" } else { "off" }, sim.join(", ")),
    )
}

fn constant_only_model(k: f64, prior: ConstantPrior) -> Model {
    let rows = mortspline::design::RowIndex::for_positions("x", 0, &[1]);
    let x = mortspline::design::SlopeChangeDesign::empty(rows);
    let spec = PriorSpec {
        scale: Hyper::Fixed(1.0),
        log_c_range: (-12.0, 8.0),
        ..Default::default()
    };
    Model::new(vec![k], vec![0.0], "poisson", spec, MeanStructure::apc(x), prior).unwrap()
}

fn gamma_oracles() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (i, k) in [1.0, 3.0, 10.0].into_iter().enumerate() {
        for (prior, target, label) in [(ConstantPrior::LogUniform, k, "log-uniform"), (ConstantPrior::Flat, k + 1.0, "flat")] {
            let model = constant_only_model(k, prior);
            let post = sample(&model, &model.default_init(), &SamplerConfig::default(), 40 + i as u64).unwrap();
            let rate: Vec<f64> = post.column_by_name("c").unwrap().iter().map(|c| c.exp()).collect();
            let n = rate.len() as f64;
            let mean = rate.iter().sum::<f64>() / n;
            let sd = (rate.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let ess = effective_sample_size(&PosteriorSample::chains_of(&rate, post.n_chains));
            let tol = 3.0 * sd / ess.sqrt();
            pass &= (mean - target).abs() < tol;
            parts.push(format!("k={k} {label}: {mean:.3} vs {target} (tol {tol:.3})"));
        }
    }
    outcome(pass, parts.join("; "))
}

fn psis_vs_exact() -> Outcome {
    let spec = SyntheticSpec {
        n_ages: 5,
        n_years: 8,
        exposure: 2000.0,
        ..Default::default()
    };
    let (frame, _) = simulate_frame(&spec, 5).unwrap();
    let mut cfg = RunConfig::default();
    cfg.sampler.metric = "diag".into();
    let data = PreparedData::new(frame, &cfg).unwrap();
    let model = build_model(&data, &cfg, &ActiveSet::all(&data)).unwrap();
    let crude = (data.y.iter().sum::<f64>() / data.offset.iter().map(|o| o.exp()).sum::<f64>()).ln();
    let init = model.init_from_named(&BTreeMap::from([("c".to_string(), crude)])).unwrap();
    let post = sample(&model, &init, &cfg.sampler, 11).unwrap();
    let loo = mortspline::loo::psis_loo(post.loglik.as_ref().unwrap()).unwrap();
    let exact = exact_loo_oracle(&model, &init, &cfg.sampler, 12).unwrap();
    let total: f64 = loo.pointwise_elpd.iter().sum::<f64>() - exact.pointwise_elpd.iter().sum::<f64>();
    let per_point = loo
        .pointwise_elpd
        .iter()
        .zip(&exact.pointwise_elpd)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let identity = (loo.loo - (loo.nll + loo.penalty)).abs() <= 1e-9 * loo.loo.abs();
    let max_k = loo.pareto_k.iter().copied().fold(f64::MIN, f64::max);
    let pass = exact.failures.is_empty() && total.abs() <= 1.0 && per_point <= 0.15 && loo.penalty >= 0.0 && identity;
    outcome(
        pass,
        format!(
            "N={}, S={}, total |d elpd| {:.3}, max per-point {per_point:.3}, penalty {:.2}, identity {}, max k {max_k:.2}, {} refit failures",
            model.n_obs(),
            post.n_draws(),
            total.abs(),
            loo.penalty,
            identity,
            exact.failures.len()
        ),
    )
}

fn lasso_checks() -> Outcome {
    // orthonormal Gaussian design: coefficients are soft-thresholded X'y
    let (n, p) = (40, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64).sqrt(); n]];
    for _ in 0..p {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(b).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
    }
    let cols = &basis[1..];
    let y: Vec<f64> = (0..n).map(|i| 3.0 * cols[0][i] - 0.5 * cols[2][i] + 2.0 + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let gaussian = LassoConfig {
        family: LassoFamily::Gaussian,
        ..Default::default()
    };
    let prob = LassoProblem::new(cols.iter().map(|c| c.as_slice()).collect(), y.clone(), vec![0.0; n], LassoFamily::Gaussian).unwrap();
    let mut soft_gap: f64 = 0.0;
    for lambda in [0.01, 0.05, 0.4, 1.0, 2.5, 5.0] {
        let fit = prob.fit(lambda, &prob.null_fit(), &gaussian);
        for (j, col) in cols.iter().enumerate() {
            let z: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
            let st = z.signum() * (z.abs() - lambda).max(0.0);
            soft_gap = soft_gap.max((fit.beta[j] - st).abs());
        }
    }

    // KKT conditions along Poisson and Gaussian paths on a slope-change design
    let mut kkt: f64 = 0.0;
    let positions: Vec<usize> = (0..150).map(|i| i % 25 + 1).collect();
    let x = build_index_design("t", 0, &positions);
    let xcols: Vec<&[f64]> = (0..x.n_cols()).map(|j| x.column(j)).collect();
    let counts: Vec<f64> = positions
        .iter()
        .map(|&k| Poisson::new((2.0 + 0.08 * k as f64 - 0.15 * (k as f64 - 12.0).max(0.0)).exp()).unwrap().sample(&mut rng))
        .collect();
    let gauss_y: Vec<f64> = positions.iter().map(|&k| (k as f64 * 0.3).sin() + 0.2 * rng.sample::<f64, _>(StandardNormal)).collect();
    for (family, yv) in [(LassoFamily::Poisson, counts), (LassoFamily::Gaussian, gauss_y)] {
        let cfg = LassoConfig { family, ..Default::default() };
        let prob = LassoProblem::new(xcols.clone(), yv, vec![0.0; positions.len()], family).unwrap();
        let grid = lambda_grid(prob.lambda_max(), 100, 1e-4);
        for (fit, &lambda) in solve_path(&prob, &grid, &cfg).iter().zip(&grid) {
            kkt = kkt.max(prob.kkt_violation(fit, lambda));
        }
    }

    // 3 strong true slope changes among 20 candidates, N = 500, through the screen
    let positions: Vec<usize> = (0..500).map(|i| i % 21 + 1).collect();
    let x = build_index_design("t", 0, &positions);
    let names = x.names();
    let mut recovered = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut truth = Vec::new();
        while truth.len() < 3 {
            let j = rng.random_range(0..x.n_cols());
            if !truth.contains(&j) {
                truth.push(j);
            }
        }
        let mut beta = vec![0.0; x.n_cols()];
        for &j in &truth {
            beta[j] = rng.random_range(1.0..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        let mean = x.mul_vec(&beta);
        let yv: Vec<f64> = mean.iter().map(|m| 2.0 + m + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let survivors = screen(&x, &yv, &vec![0.0; yv.len()], &gaussian, seed).unwrap().survivors();
        if truth.iter().all(|&j| survivors.contains(&names[j])) {
            recovered += 1;
        }
    }
    let pass = soft_gap < 1e-6 && kkt < 1e-4 && recovered >= 95;
    outcome(pass, format!("soft-threshold gap {soft_gap:.1e}, max KKT violation {kkt:.1e}, support recovered in {recovered}/100 seeds"))
}

fn rh_gradient() -> Outcome {
    let spec = SyntheticSpec {
        n_ages: 5,
        n_years: 4,
        populations: vec!["A".into(), "B".into()],
        identical: false,
        trend_weights: true,
        exposure: 5000.0,
        family: "negative_binomial".into(),
        ..Default::default()
    };
    let (frame, _) = simulate_frame(&spec, 9).unwrap();
    let mut cfg = RunConfig::default();
    cfg.model.kind = "rh".into();
    cfg.model.family = "negative_binomial".into();
    cfg.prior.family = "student_t".into();
    let data = PreparedData::new(frame, &cfg).unwrap();
    let model = build_model(&data, &cfg, &ActiveSet::all(&data)).unwrap();
    let layout = model.layout().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let mut scratch = vec![0.0; layout.dim];
    for _ in 0..20 {
        let mut theta: Vec<f64> = (0..layout.dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        for i in layout.beta.clone().chain(layout.psi.clone()) {
            theta[i] *= 0.05;
        }
        let mut g = vec![0.0; layout.dim];
        model.target_grad(&theta, &mut g);
        let h = 1e-6;
        for i in 0..layout.dim {
            let mut up = theta.clone();
            up[i] += h;
            let mut dn = theta.clone();
            dn[i] -= h;
            let num = (model.log_density_grad(&up, &mut scratch) - model.log_density_grad(&dn, &mut scratch)) / (2.0 * h);
            worst = worst.max((g[i] - num).abs() / num.abs().max(1.0));
        }
    }
    outcome(
        worst < 1e-5,
        format!("20 points x {} coordinates ({} weight, {} period), max relative error {worst:.1e}", layout.dim, layout.eta.len(), layout.psi.len()),
    )
}

fn joint_shrinkage() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.pruning.max_rounds = 0;
    cfg.sampler.chains = 2;
    cfg.sampler.iterations = 1000;
    let spec = SyntheticSpec {
        populations: vec!["A".into(), "B".into()],
        identical: true,
        ..Default::default()
    };
    let mut wins = 0;
    let mut ratios = Vec::new();
    let mut failures = 0;
    for seed in 0..100u64 {
        let (frame, _) = simulate_frame(&spec, 500 + seed).unwrap();
        let data = PreparedData::new(frame.trim_cohorts(3).unwrap(), &cfg).unwrap();
        let mut run_cfg = cfg.clone();
        run_cfg.seed = 9000 + seed;
        let Ok(run) = run_pipeline(&run_cfg, &data) else {
            failures += 1;
            continue;
        };
        let means = run.fit.posterior_means();
        let sum = |prefix: &str| means.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, v)| v.abs()).sum::<f64>();
        let (first, diff) = (sum("A:"), sum("B:"));
        ratios.push(diff / first);
        if diff < first {
            wins += 1;
        }
    }
    ratios.sort_by(|a, b| a.total_cmp(b));
    let median = ratios.get(ratios.len() / 2).copied().unwrap_or(f64::NAN);
    outcome(wins >= 90, format!("difference sum below first-population sum in {wins}/100 seeds (median ratio {median:.3}, {failures} sampler failures)"))
}

fn ladder_ordering() -> Outcome {
    let spec = SyntheticSpec {
        n_years: 25,
        exposure: 300_000.0,
        family: "negative_binomial".into(),
        phi: 3000.0,
        trend_weights: true,
        ..Default::default()
    };
    let (frame, _) = simulate_frame(&spec, 31).unwrap();
    let mut cfg = RunConfig::default();
    cfg.seed = 31;
    cfg.ladder = vec![
        LadderStage {
            name: "apc".into(),
            kind: Some("apc".into()),
            family: Some("poisson".into()),
            prior_family: None,
            nu: None,
        },
        LadderStage {
            name: "rh".into(),
            kind: Some("rh".into()),
            family: Some("poisson".into()),
            prior_family: None,
            nu: None,
        },
        LadderStage {
            name: "rh_nb".into(),
            kind: Some("rh".into()),
            family: Some("negative_binomial".into()),
            prior_family: None,
            nu: None,
        },
    ];
    let data = PreparedData::new(frame.trim_cohorts(3).unwrap(), &cfg).unwrap();
    let runs = match fit_ladder(&cfg, &data) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("ladder failed: {e}")),
    };
    let (apc, rh, nb) = (&runs[0].fit.loo, &runs[1].fit.loo, &runs[2].fit.loo);
    let gap_rh = apc.loo - rh.loo;
    let gap_nb = rh.loo - nb.loo;
    let se_rh = se_of_difference(apc, rh);
    let se_nb = se_of_difference(rh, nb);
    let pass = gap_rh > 4.0 * se_rh && gap_nb > 4.0 * se_nb;
    outcome(
        pass,
        format!(
            "loo apc {:.1}, rh {:.1}, rh-nb {:.1}; gaps {gap_rh:.1} ({:.1} SE), {gap_nb:.1} ({:.1} SE)",
            apc.loo,
            rh.loo,
            nb.loo,
            gap_rh / se_rh,
            gap_nb / se_nb
        ),
    )
}

/// Returns the gated outcome and whether the stated 0.6365 value matched.
fn projection_arithmetic() -> (Outcome, bool) {
    let f991 = compound_factor(0.991, 50);
    let f987 = compound_factor(0.987, 50);
    let stated = (f991 - 0.6365).abs() <= 1e-4;
    let identity = [0.0, 1.0, 10.0, 50.0].iter().all(|&t| trend_factor(0.0, 0.6, t) == 1.0 && compound_factor(1.0, t as u32) == 1.0);
    let consistent = (trend_factor(0.991f64.ln(), 1.0, 50.0) - f991).abs() < 1e-12;
    let pass = (f987 - 0.5198).abs() <= 1e-4 && identity && consistent;
    (
        outcome(pass, format!("0.991^50 = {f991:.6} (stated 0.6365, within 1e-4: {stated}), 0.987^50 = {f987:.6}, zero-slope identity {identity}")),
        stated,
    )
}

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "design excerpt", design_excerpt),
        (2, "level/slope-change equivalence", level_slope_equivalence),
        (3, "prior analytics", prior_analytics),
        (4, "gamma posterior oracles", gamma_oracles),
        (5, "psis-loo vs exact loo", psis_vs_exact),
        (6, "lasso correctness", lasso_checks),
        (7, "renshaw-haberman gradient", rh_gradient),
        (8, "joint shrinkage", joint_shrinkage),
        (9, "model ladder ordering", ladder_ordering),
    ];
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        println!("criterion {id} ({name}): {} [{:.1}s] {}", if o.pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64(), o.detail);
        if !o.pass {
            failed.push(id);
        }
    }
    if only.is_empty() || only.contains(&10) {
        let start = Instant::now();
        let (o, stated) = projection_arithmetic();
        // the stated 0.6365 is reported, not gated
        println!(
            "criterion 10 (projection arithmetic): {} [{:.1}s] {}",
            if o.pass && stated { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass {
            failed.push(10);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
