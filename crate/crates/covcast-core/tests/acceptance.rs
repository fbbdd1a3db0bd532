//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (run with `cargo test --test acceptance -- --nocapture` to
//! see them). Tolerances are pinned here, not configurable.

use std::time::Instant;

use covcast_core::backtest::{
    run_experiment, simulate_generative, ExperimentConfig, PortfolioConfig, PredictorSpec,
};
use covcast_core::combiner::{
    combine_factors, precision_cholesky, solve_weights, window_objective, CmIewmaConfig,
    CombinerState, PrecisionFactor, WeightVector, WindowDay,
};
use covcast_core::convex_kit::{
    build_box_l1_problem, build_nonneg_eq_problem, kkt_residual, project_simplex,
    risk_parity_gradient, solve_box_l1_general, solve_mean_variance, solve_nonneg_qp_eq_full,
    solve_qp_box_l1, solve_risk_parity, BoxL1Constraints,
};
use covcast_core::estimators::{EwmaState, IewmaState, RollingWindowState};
use covcast_core::market_data::{load_returns_csv, synth_regime_returns, Regime, ReturnsMatrix};
use covcast_core::portfolios::{
    cash_overlay, equal_weight, max_diversification, min_variance, risk_parity,
    TRADING_DAYS_PER_YEAR,
};
use covcast_core::CovEstimate;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

fn random_spd(n: usize, scale: f64, rng: &mut StdRng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&m * m.transpose() + DMatrix::identity(n, n) * 0.4) * scale
}

fn random_returns(n: usize, rng: &mut StdRng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

// ---------------------------------------------------------------------------
// Criterion 1: recursive estimators match direct summation
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_estimator_recursions_match_direct_sums() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xC0FFEE);
    for stream in 0..200 {
        let n = 1 + rng.random_range(0..5);
        let t_max = 20 + rng.random_range(0..181);
        let memory = 1 + rng.random_range(0..12);
        let beta: f64 = rng.random_range(0.5..0.99);
        let mut rw = RollingWindowState::new(n, memory).unwrap();
        let mut ew = EwmaState::new(n, beta).unwrap();
        let mut history: Vec<DVector<f64>> = Vec::new();
        for _ in 0..t_max {
            let r = random_returns(n, &mut rng);
            history.push(r.clone());
            let rw_est = rw.step(&r).unwrap();
            let ew_est = ew.step(&r).unwrap();

            // Direct summation oracles.
            let m = history.len().min(memory);
            let mut rw_direct = DMatrix::zeros(n, n);
            for r in &history[history.len() - m..] {
                rw_direct += r * r.transpose();
            }
            rw_direct /= m as f64;
            let mut ew_direct = DMatrix::zeros(n, n);
            for (tau, r) in history.iter().enumerate() {
                ew_direct += beta.powi((history.len() - 1 - tau) as i32) * (r * r.transpose());
            }
            ew_direct *= (1.0 - beta) / (1.0 - beta.powi(history.len() as i32));

            if let Some(est) = rw_est {
                let scale = rw_direct.amax();
                assert!(
                    (est.matrix() - &rw_direct).amax() <= 1e-10 * scale,
                    "stream {stream}: rolling-window mismatch"
                );
            }
            if let Some(est) = ew_est {
                let scale = ew_direct.amax();
                assert!(
                    (est.matrix() - &ew_direct).amax() <= 1e-10 * scale,
                    "stream {stream}: EWMA mismatch"
                );
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "criterion 1 runtime {elapsed:?}");
    println!(
        "[criterion 1] PASS: recursive RW/EWMA match direct sums to 1e-10 on 200 streams ({elapsed:?})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: weight solver against grid oracle, concavity, vertices
// ---------------------------------------------------------------------------

fn random_factor(n: usize, day: usize, comp: usize, rng: &mut StdRng) -> PrecisionFactor {
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        l[(i, i)] = 0.4 + rng.random_range(0.0..2.0);
        for j in 0..i {
            l[(i, j)] = rng.sample::<f64, _>(StandardNormal) * 0.4;
        }
    }
    PrecisionFactor::new(l, day, Some(comp)).unwrap()
}

fn random_window(n: usize, k: usize, days: usize, rng: &mut StdRng) -> Vec<WindowDay> {
    (0..days)
        .map(|d| {
            let factors: Vec<PrecisionFactor> =
                (0..k).map(|c| random_factor(n, d, c, rng)).collect();
            WindowDay::new(&factors, &random_returns(n, rng)).unwrap()
        })
        .collect()
}

fn assert_vertex_dominance(window: &[WindowDay], w: &WeightVector, k: usize, tag: &str) {
    let solved = window_objective(window, w.as_vector());
    for c in 0..k {
        let mut e = DVector::zeros(k);
        e[c] = 1.0;
        let vertex = window_objective(window, &e);
        assert!(
            solved >= vertex - 1e-9,
            "{tag}: vertex {c} beats the solution ({vertex} > {solved})"
        );
    }
}

#[test]
fn criterion_2_weight_solver_grid_concavity_vertices() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xBEEF);

    // (a) grid oracle on 50 random two-expert instances
    for instance in 0..50 {
        let window = random_window(3, 2, 10, &mut rng);
        let w = solve_weights(&window).unwrap();
        let solved = window_objective(&window, w.as_vector());
        let mut grid_best = f64::NEG_INFINITY;
        for i in 0..=2000 {
            let w1 = i as f64 * 0.0005;
            let obj = window_objective(&window, &DVector::from_column_slice(&[w1, 1.0 - w1]));
            grid_best = grid_best.max(obj);
        }
        let per_day_gap = (grid_best - solved) / window.len() as f64;
        assert!(
            per_day_gap <= 1e-6,
            "instance {instance}: grid beats solver by {per_day_gap} nats/day"
        );
        assert_vertex_dominance(&window, &w, 2, "criterion 2a");
    }

    // (b) concavity certificate on 10^4 random triples
    let mut checked = 0usize;
    for _ in 0..10 {
        let k = 2 + rng.random_range(0..4);
        let window = random_window(3, k, 8, &mut rng);
        for _ in 0..1000 {
            let a = project_simplex(&DVector::from_fn(k, |_, _| rng.random_range(0.0..1.0)));
            let b = project_simplex(&DVector::from_fn(k, |_, _| rng.random_range(0.0..1.0)));
            let lam: f64 = rng.random_range(0.0..1.0);
            let mid = lam * &a + (1.0 - lam) * &b;
            let lhs = window_objective(&window, &mid);
            let rhs =
                lam * window_objective(&window, &a) + (1.0 - lam) * window_objective(&window, &b);
            assert!(lhs >= rhs - 1e-9, "concavity violated: {lhs} < {rhs}");
            checked += 1;
        }
    }
    assert_eq!(checked, 10_000);

    // (c) vertex dominance on every solve across a mixed batch
    for _ in 0..30 {
        let k = 2 + rng.random_range(0..5);
        let window = random_window(4, k, 10, &mut rng);
        let w = solve_weights(&window).unwrap();
        assert_vertex_dominance(&window, &w, k, "criterion 2c");
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "criterion 2 runtime {elapsed:?}");
    println!(
        "[criterion 2] PASS: grid oracle to 1e-6/day on 50 instances, concavity on 10^4 triples, \
         vertex dominance on every solve ({elapsed:?})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: KKT residuals and closed forms for all four solvers
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_solver_kkt_suite() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xFACADE);
    let kkt_tol = 1e-6;

    // Closed forms first.
    {
        let n = 5;
        let cons = BoxL1Constraints::uniform(n, 4.0, -2.0, 2.0);
        let w = solve_qp_box_l1(&DMatrix::identity(n, n), &DVector::zeros(n), &cons).unwrap();
        for i in 0..n {
            assert!((w[i] - 0.2).abs() < 1e-6, "identity min variance");
        }
        let diag = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]);
        let w = solve_qp_box_l1(&diag, &DVector::zeros(2), &cons_for(2)).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-6 && (w[1] - 0.2).abs() < 1e-6, "Sigma^-1 1 scaling");

        let x = solve_risk_parity(&DMatrix::identity(4, 4)).unwrap();
        let w: DVector<f64> = &x / x.sum();
        for i in 0..4 {
            assert!((w[i] - 0.25).abs() < 1e-9, "identity risk parity");
        }
        let x = solve_risk_parity(&diag).unwrap();
        let w: DVector<f64> = &x / x.sum();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-8, "1/sigma risk parity weighting");

        let sol = solve_nonneg_qp_eq_full(&diag, &DVector::from_column_slice(&[1.0, 2.0])).unwrap();
        let w: DVector<f64> = &sol.x / sol.x.sum();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-6, "1/sigma max-diversification weighting");
    }

    fn cons_for(n: usize) -> BoxL1Constraints {
        BoxL1Constraints::uniform(n, 4.0, -2.0, 2.0)
    }

    // 100 random instances per solver.
    for i in 0..100 {
        let n = 2 + (i % 4);

        // box + leverage QP
        let sigma = random_spd(n, 1.0, &mut rng);
        let c = random_returns(n, &mut rng) * 0.3;
        let cons = BoxL1Constraints::uniform(n, 1.2 + rng.random_range(0.0..1.0), -0.6, 1.1);
        let (_, sol) = solve_box_l1_general(&sigma, &c, &cons, None).unwrap();
        let problem = build_box_l1_problem(&sigma, &c, &cons, None);
        let res = kkt_residual(&problem, &sol.x, &sol.y, &sol.z);
        assert!(res <= kkt_tol, "instance {i}: box-l1 KKT residual {res}");

        // nonnegative QP with one equality
        let sigma = random_spd(n, 1.0, &mut rng);
        let a = DVector::from_fn(n, |_, _| 0.2 + rng.random_range(0.0..2.0));
        let sol = solve_nonneg_qp_eq_full(&sigma, &a).unwrap();
        let problem = build_nonneg_eq_problem(&sigma, &a);
        let res = kkt_residual(&problem, &sol.x, &sol.y, &sol.z);
        assert!(res <= kkt_tol, "instance {i}: nonneg-eq KKT residual {res}");

        // risk parity: the gradient is the KKT system
        let sigma = random_spd(n, 1.0, &mut rng);
        let x = solve_risk_parity(&sigma).unwrap();
        let res = risk_parity_gradient(&sigma, &x).amax();
        assert!(res <= 1e-10, "instance {i}: risk parity gradient {res}");

        // mean-variance: inner split KKT + risk-cap complementarity
        let nn = n + 1; // risky block plus cash
        let mut sigma_aug = DMatrix::zeros(nn, nn);
        sigma_aug
            .view_mut((0, 0), (n, n))
            .copy_from(&random_spd(n, 1e-4, &mut rng));
        let mut r_hat = DVector::zeros(nn);
        for j in 0..n {
            r_hat[j] = rng.random_range(-0.001..0.003);
        }
        r_hat[n] = 0.0001;
        let mut w_min = DVector::from_element(nn, -0.6);
        let mut w_max = DVector::from_element(nn, 1.2);
        w_min[n] = f64::NEG_INFINITY;
        w_max[n] = f64::INFINITY;
        let cons = BoxL1Constraints {
            leverage_max: 1.6,
            w_min,
            w_max,
            budget: 1.0,
        };
        let mut subset = vec![true; nn];
        subset[n] = false;
        let cap = 0.05 / TRADING_DAYS_PER_YEAR.sqrt();
        let sol = solve_mean_variance(&sigma_aug, &r_hat, cap, &cons, Some(&subset)).unwrap();
        let risk = (&sigma_aug * &sol.weights).dot(&sol.weights);
        assert!(risk <= cap * cap + 1e-9, "instance {i}: risk cap violated");
        // complementarity: either the cap binds or the multiplier is tiny
        let slack = cap * cap - risk;
        assert!(
            slack <= 1e-9 || sol.risk_multiplier <= 1e-6,
            "instance {i}: slack {slack} with multiplier {}",
            sol.risk_multiplier
        );
        // stationarity via the inner problem at the returned multiplier
        let inner = build_box_l1_problem(
            &(sol.risk_multiplier * &sigma_aug),
            &(-&r_hat),
            &cons,
            Some(&subset),
        );
        let res = kkt_residual(&inner, &sol.split.x, &sol.split.y, &sol.split.z);
        assert!(res <= kkt_tol, "instance {i}: mean-variance split KKT {res}");
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "criterion 3 runtime {elapsed:?}");
    println!(
        "[criterion 3] PASS: four solvers meet closed forms and KKT residuals <= 1e-6 on 100 \
         random instances each ({elapsed:?})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: regret identities
// ---------------------------------------------------------------------------

fn synthetic_panel(seed: u64) -> ReturnsMatrix {
    let n = 4;
    let mut calm = DMatrix::identity(n, n) * 1e-4;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                calm[(i, j)] = 2.5e-5;
            }
        }
    }
    synth_regime_returns(
        n,
        900,
        &[Regime {
            length: 900,
            covariance: calm,
        }],
        seed,
    )
    .unwrap()
}

#[test]
fn criterion_4_regret_identities() {
    let returns = synthetic_panel(41);
    let n = returns.assets_count();

    let mut predictors = vec![PredictorSpec::Prescient {
        name: "PRESCIENT".into(),
    }];
    let mut rng = StdRng::seed_from_u64(77);
    for k in 0..3 {
        predictors.push(PredictorSpec::Constant {
            name: format!("CONST{k}"),
            matrix: random_spd(n, 1e-4, &mut rng),
        });
    }
    let config = ExperimentConfig {
        dataset: None,
        rf_column: None,
        burn_in: 30,
        predictors,
        portfolios: None,
        seed: 0,
    };
    let report = run_experiment(&config, &returns).unwrap();

    for p in &report.predictors {
        if p.name == "PRESCIENT" {
            for (q, v) in &p.regret.per_quarter {
                assert!(
                    v.abs() <= 1e-8,
                    "prescient regret in {q} is {v}, expected exact zero"
                );
            }
        } else {
            for (q, v) in &p.regret.per_quarter {
                assert!(
                    *v >= -1e-10,
                    "{}: negative regret {v} in {q} for a constant predictor",
                    p.name
                );
            }
        }
    }

    // Same identities on real data when present (criterion 6 inputs).
    if let Some((returns, _)) = load_optional_panel("COVCAST_FF5_CSV", "ff5_daily.csv", Some("rf"))
    {
        let config = ExperimentConfig {
            dataset: None,
            rf_column: None,
            burn_in: 500,
            predictors: vec![PredictorSpec::Prescient {
                name: "PRESCIENT".into(),
            }],
            portfolios: None,
            seed: 0,
        };
        let report = run_experiment(&config, &returns).unwrap();
        for (q, v) in &report.predictors[0].regret.per_quarter {
            assert!(v.abs() <= 1e-8, "prescient regret in {q} is {v} on real data");
        }
        println!("[criterion 4] prescient verified on the factor panel as well");
    }

    println!(
        "[criterion 4] PASS: prescient regret exactly zero (<= 1e-8 numerically), constant \
         predictors nonnegative in every quarter"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: regime-switch adaptivity
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_regime_switch_adaptivity() {
    let started = Instant::now();
    let n = 10;
    let calm = DMatrix::identity(n, n) * 0.5;
    let mut turbulent = DMatrix::from_element(n, n, 2.0 * 0.6);
    for i in 0..n {
        turbulent[(i, i)] = 2.0;
    }
    let returns = synth_regime_returns(
        n,
        4000,
        &[
            Regime {
                length: 2000,
                covariance: calm,
            },
            Regime {
                length: 2000,
                covariance: turbulent,
            },
        ],
        4242,
    )
    .unwrap();

    let pairs = vec![
        (21.0, 63.0),
        (63.0, 125.0),
        (125.0, 250.0),
        (250.0, 500.0),
        (500.0, 1000.0),
    ];
    let mut predictors = vec![PredictorSpec::CmIewma {
        name: "CM-IEWMA".into(),
        config: CmIewmaConfig::standard(pairs.clone()),
    }];
    for (i, &(hv, hc)) in pairs.iter().enumerate() {
        predictors.push(PredictorSpec::Iewma {
            name: format!("C{}_{hv:.0}_{hc:.0}", i + 1),
            h_vol: hv,
            h_cor: hc,
            inflate: if i == 0 { 0.05 } else { 0.0 },
        });
    }
    let burn_in = 500;
    let config = ExperimentConfig {
        dataset: None,
        rf_column: None,
        burn_in,
        predictors,
        portfolios: None,
        seed: 0,
    };
    let report = run_experiment(&config, &returns).unwrap();

    // Effective half-life drops across the regime change.
    let traj = &report.combined_weights[0].1;
    let switch = 2000 - burn_in; // trajectory index of the first turbulent day
    assert_eq!(traj.dates[switch], returns.dates()[2000]);
    let before: f64 =
        traj.effective_half_life[switch - 60..switch].iter().sum::<f64>() / 60.0;
    let after: f64 =
        traj.effective_half_life[switch..switch + 60].iter().sum::<f64>() / 60.0;
    assert!(
        after < before,
        "effective half-life should drop after the regime change: {before} -> {after}"
    );

    // Combined regret within 1.1x of the best single component.
    let cm_avg = report.predictors[0].regret.summary.average;
    let best_component = report.predictors[1..]
        .iter()
        .map(|p| p.regret.summary.average)
        .fold(f64::INFINITY, f64::min);
    assert!(
        cm_avg <= 1.1 * best_component,
        "combined average regret {cm_avg} exceeds 1.1 x best component {best_component}"
    );

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "criterion 5 runtime {elapsed:?}");
    println!(
        "[criterion 5] PASS: effective half-life {before:.0} -> {after:.0} days across the \
         switch; combined regret {cm_avg:.3} <= 1.1 x best component {best_component:.3} \
         ({elapsed:?})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 6 (optional, data-dependent): full-scale reference reproduction
// ---------------------------------------------------------------------------

/// Looks for a canonical-format CSV (decimal fractions, ISO dates) under
/// the env var, then under `data/` at the workspace root.
fn load_optional_panel(
    env: &str,
    file: &str,
    rf: Option<&str>,
) -> Option<(ReturnsMatrix, std::path::PathBuf)> {
    let candidates: Vec<std::path::PathBuf> = match std::env::var(env) {
        Ok(p) => vec![p.into()],
        Err(_) => {
            let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
                .join("../..")
                .join("data")
                .join(file);
            vec![root]
        }
    };
    for path in candidates {
        if path.exists() {
            match load_returns_csv(&path, rf) {
                Ok(m) => return Some((m, path)),
                Err(e) => panic!("{} exists but fails to load: {e}", path.display()),
            }
        }
    }
    None
}

fn regret_of<'a>(
    report: &'a covcast_core::backtest::BacktestReport,
    name: &str,
) -> &'a covcast_core::evaluation::RegretSummary {
    &report
        .predictors
        .iter()
        .find(|p| p.name == name)
        .unwrap_or_else(|| panic!("predictor {name} missing from report"))
        .regret
        .summary
}

#[test]
fn criterion_6_reference_scale_reproduction_when_data_present() {
    let mut ran_any = false;

    if let Some((returns, path)) =
        load_optional_panel("COVCAST_FF5_CSV", "ff5_daily.csv", Some("rf"))
    {
        ran_any = true;
        let config = ExperimentConfig {
            dataset: Some(path),
            rf_column: Some("rf".into()),
            burn_in: 500,
            predictors: vec![
                PredictorSpec::Iewma {
                    name: "IEWMA".into(),
                    h_vol: 21.0,
                    h_cor: 63.0,
                    inflate: 0.0,
                },
                PredictorSpec::CmIewma {
                    name: "CM-IEWMA".into(),
                    config: CmIewmaConfig::standard(vec![
                        (5.0, 10.0),
                        (10.0, 21.0),
                        (21.0, 63.0),
                        (63.0, 125.0),
                        (125.0, 250.0),
                    ]),
                },
            ],
            portfolios: None,
            seed: 0,
        };
        let report = run_experiment(&config, &returns).unwrap();
        let iewma = regret_of(&report, "IEWMA");
        let cm = regret_of(&report, "CM-IEWMA");
        // Reference values 0.4 (average) with maxima 4.1 / 2.9; +-50%.
        assert!(
            (0.2..=0.6).contains(&iewma.average),
            "factor IEWMA average regret {} outside 0.4 +- 50%",
            iewma.average
        );
        assert!(
            (0.2..=0.6).contains(&cm.average),
            "factor CM-IEWMA average regret {} outside 0.4 +- 50%",
            cm.average
        );
        assert!(iewma.max <= 4.1 * 1.5, "factor IEWMA max regret {}", iewma.max);
        assert!(cm.max <= 2.9 * 1.5, "factor CM-IEWMA max regret {}", cm.max);
        println!(
            "[criterion 6] factor panel: IEWMA avg {:.2} max {:.2}; CM-IEWMA avg {:.2} max {:.2}",
            iewma.average, iewma.max, cm.average, cm.max
        );
    }

    if let Some((returns, path)) =
        load_optional_panel("COVCAST_IND49_CSV", "industry49_daily.csv", None)
    {
        ran_any = true;
        let started = Instant::now();
        let config = ExperimentConfig {
            dataset: Some(path),
            rf_column: None,
            burn_in: 500,
            predictors: vec![
                PredictorSpec::RollingWindow {
                    name: "RW".into(),
                    window: 500,
                },
                PredictorSpec::Ewma {
                    name: "EWMA".into(),
                    half_life: 250.0,
                },
                PredictorSpec::Iewma {
                    name: "IEWMA".into(),
                    h_vol: 125.0,
                    h_cor: 250.0,
                    inflate: 0.0,
                },
                PredictorSpec::CmIewma {
                    name: "CM-IEWMA".into(),
                    config: CmIewmaConfig::standard(vec![
                        (21.0, 63.0),
                        (63.0, 125.0),
                        (125.0, 250.0),
                        (250.0, 500.0),
                        (500.0, 1000.0),
                    ]),
                },
                PredictorSpec::Prescient {
                    name: "PRESCIENT".into(),
                },
            ],
            portfolios: None,
            seed: 0,
        };
        let report = run_experiment(&config, &returns).unwrap();
        let elapsed = started.elapsed();
        let cm = regret_of(&report, "CM-IEWMA");
        let ewma = regret_of(&report, "EWMA");
        let rw = regret_of(&report, "RW");
        // Reference 16.9 / 2.4 / 28.4 within +-15%.
        assert!(
            (16.9 * 0.85..=16.9 * 1.15).contains(&cm.average),
            "industry CM-IEWMA average {} outside 16.9 +- 15%",
            cm.average
        );
        assert!(
            (2.4 * 0.85..=2.4 * 1.15).contains(&cm.std_dev),
            "industry CM-IEWMA std {} outside 2.4 +- 15%",
            cm.std_dev
        );
        assert!(
            (28.4 * 0.85..=28.4 * 1.15).contains(&cm.max),
            "industry CM-IEWMA max {} outside 28.4 +- 15%",
            cm.max
        );
        assert!(cm.average < ewma.average, "CM should beat EWMA's 19.4-level average");
        assert!(cm.average < rw.average, "CM should beat RW's 20.4-level average");
        assert!(
            elapsed.as_secs_f64() < 600.0,
            "industry run took {elapsed:?}, budget is 10 minutes"
        );
        println!(
            "[criterion 6] industry panel: CM-IEWMA avg {:.1} std {:.1} max {:.1}; EWMA avg \
             {:.1}; RW avg {:.1} ({elapsed:?})",
            cm.average, cm.std_dev, cm.max, ewma.average, rw.average
        );
    }

    if ran_any {
        println!("[criterion 6] PASS: reference-scale regret statistics reproduced");
    } else {
        println!(
            "[criterion 6] SKIP: reference data not present (set COVCAST_FF5_CSV / \
             COVCAST_IND49_CSV or place canonical CSVs under data/); criteria 1-5 and 7-9 \
             carry acceptance"
        );
    }
}

// ---------------------------------------------------------------------------
// Criterion 7: cash-overlay exactness across a backtest
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_overlay_exactness_every_predictor_every_day() {
    let returns = synthetic_panel(7);
    let n = returns.assets_count();
    let burn_in = 60;
    let target_annual = 0.08;
    let daily_target = target_annual / TRADING_DAYS_PER_YEAR.sqrt();
    let cons = BoxL1Constraints::uniform(n, 1.6, -0.3, 0.9);

    let mut rw = RollingWindowState::new(n, 50).unwrap();
    let mut ew = EwmaState::with_half_life(n, 21.0).unwrap();
    let mut ie = IewmaState::new(n, 10.0, 21.0).unwrap();
    let mut cm = CombinerState::new(
        n,
        CmIewmaConfig::standard(vec![(5.0, 10.0), (21.0, 63.0)]),
    )
    .unwrap();

    let mut current: Vec<Option<CovEstimate>> = vec![None; 4];
    let mut days_checked = 0usize;
    for t in 0..returns.days() {
        if t >= burn_in {
            for est in current.iter().flatten() {
                for w in [
                    equal_weight(n, t),
                    min_variance(est, &cons).unwrap(),
                    risk_parity(est).unwrap(),
                    max_diversification(est).unwrap(),
                ] {
                    let overlaid = cash_overlay(&w, est, target_annual).unwrap();
                    let vol = overlaid.exante_variance(est).sqrt();
                    let rel = (vol - daily_target).abs() / daily_target;
                    assert!(
                        rel <= 1e-12,
                        "day {t}: overlay volatility off by {rel:e} (relative)"
                    );
                    days_checked += 1;
                }
            }
        }
        let r = returns.row(t);
        current[0] = rw.step(&r).unwrap();
        current[1] = ew.step(&r).unwrap();
        current[2] = ie.step(&r).unwrap();
        current[3] = cm.step(&r).unwrap().estimate;
    }
    assert!(days_checked > 3000, "only {days_checked} overlay checks ran");
    println!(
        "[criterion 7] PASS: {days_checked} overlays hit the daily volatility target to 1e-12 \
         relative"
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: generative-mode second-moment calibration
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_generative_second_moment_within_three_standard_errors() {
    let seed_panel = synthetic_panel(8);
    let n = seed_panel.assets_count();
    let mut sigma = DMatrix::identity(n, n) * 2e-4;
    sigma[(0, 1)] = 8e-5;
    sigma[(1, 0)] = 8e-5;
    sigma[(2, 3)] = -5e-5;
    sigma[(3, 2)] = -5e-5;
    let spec = PredictorSpec::Constant {
        name: "CONST".into(),
        matrix: sigma.clone(),
    };
    let horizon = 63;
    let n_paths = 100;
    let paths = simulate_generative(&seed_panel, &spec, horizon, n_paths, 2024).unwrap();
    assert_eq!(paths.len(), n_paths);

    let total = (horizon * n_paths) as f64;
    let mut pooled = DMatrix::zeros(n, n);
    for path in &paths {
        let v = path.values();
        pooled += v.transpose() * v;
    }
    pooled /= total;

    for i in 0..n {
        for j in 0..n {
            // var(r_i r_j) = S_ii S_jj + S_ij^2 under the Gaussian
            let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)] * sigma[(i, j)]) / total)
                .sqrt();
            let dev = (pooled[(i, j)] - sigma[(i, j)]).abs();
            assert!(
                dev <= 3.0 * se,
                "entry ({i},{j}): deviation {dev:e} exceeds 3 SE = {:e}",
                3.0 * se
            );
        }
    }
    println!(
        "[criterion 8] PASS: pooled second moment of {n_paths} quarter-length paths within 3 \
         standard errors entrywise"
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: determinism and causality
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_determinism_and_truncation_audit() {
    let returns = synthetic_panel(9);
    let config = ExperimentConfig {
        dataset: None,
        rf_column: None,
        burn_in: 40,
        predictors: vec![
            PredictorSpec::Ewma {
                name: "EWMA".into(),
                half_life: 21.0,
            },
            PredictorSpec::CmIewma {
                name: "CM-IEWMA".into(),
                config: CmIewmaConfig::standard(vec![(5.0, 10.0), (21.0, 63.0)]),
            },
            PredictorSpec::Prescient {
                name: "PRESCIENT".into(),
            },
        ],
        portfolios: Some(PortfolioConfig {
            leverage_max: 1.6,
            w_min: -0.3,
            w_max: 0.9,
            sigma_target_annual: 0.1,
            mean_half_life: 63.0,
        }),
        seed: 0,
    };

    // Byte-identical report files across repeated runs.
    let a = run_experiment(&config, &returns).unwrap();
    let b = run_experiment(&config, &returns).unwrap();
    let dir_a = std::env::temp_dir().join("covcast_acc_det_a");
    let dir_b = std::env::temp_dir().join("covcast_acc_det_b");
    a.write_files(&dir_a).unwrap();
    b.write_files(&dir_b).unwrap();
    for file in [
        "metrics.csv",
        "metrics.json",
        "regret_quarterly.csv",
        "weights_daily.csv",
        "cdf_ewma.csv",
        "cdf_cm_iewma.csv",
        "cdf_prescient.csv",
    ] {
        let x = std::fs::read(dir_a.join(file)).unwrap();
        let y = std::fs::read(dir_b.join(file)).unwrap();
        assert_eq!(x, y, "report file {file} is not byte-identical");
    }

    // Truncation audit: removing the last k days reproduces every
    // retained estimate and weight bit for bit.
    let n = returns.assets_count();
    let cm_config = CmIewmaConfig::standard(vec![(5.0, 10.0), (21.0, 63.0)]);
    let mut full = CombinerState::new(n, cm_config.clone()).unwrap();
    let mut cut = CombinerState::new(n, cm_config).unwrap();
    let keep = returns.days() - 25;
    let mut full_estimates = Vec::new();
    for t in 0..returns.days() {
        let out = full.step(&returns.row(t)).unwrap();
        if t < keep {
            full_estimates.push(out);
        }
    }
    for (t, reference) in full_estimates.iter().enumerate() {
        let out = cut.step(&returns.row(t)).unwrap();
        assert_eq!(
            out.weights.as_vector(),
            reference.weights.as_vector(),
            "weights diverge at day {t}"
        );
        match (&out.estimate, &reference.estimate) {
            (Some(x), Some(y)) => {
                assert_eq!(x.matrix(), y.matrix(), "estimate diverges at day {t}")
            }
            (None, None) => {}
            _ => panic!("availability diverges at day {t}"),
        }
    }

    // Combination identities hold on the emitted stream as well.
    let est = full_estimates
        .iter()
        .rev()
        .find_map(|o| o.estimate.clone())
        .expect("an available estimate");
    let factor = precision_cholesky(&est).unwrap();
    let w = WeightVector::uniform(1);
    let same = combine_factors(std::slice::from_ref(&factor), &w).unwrap();
    assert_eq!(same.matrix(), factor.matrix());

    println!(
        "[criterion 9] PASS: byte-identical reports across runs; truncation audit reproduces \
         all retained estimates and weights bit for bit"
    );
}
