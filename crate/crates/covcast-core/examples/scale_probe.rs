//! Times a full industry-scale regret run on synthetic data.

use covcast_core::backtest::{run_experiment, ExperimentConfig, PredictorSpec};
use covcast_core::combiner::CmIewmaConfig;
use covcast_core::market_data::{synth_regime_returns, Regime};
use nalgebra::DMatrix;
use std::time::Instant;

fn main() {
    let n = 49;
    let days = 13_496;
    let mut cov = DMatrix::from_element(n, n, 2.5e-5);
    for i in 0..n {
        cov[(i, i)] = 1e-4;
    }
    let t0 = Instant::now();
    let returns = synth_regime_returns(
        n,
        days,
        &[Regime { length: days, covariance: cov }],
        7,
    )
    .unwrap();
    eprintln!("synth: {:?}", t0.elapsed());

    let config = ExperimentConfig {
        dataset: None,
        rf_column: None,
        burn_in: 500,
        predictors: vec![
            PredictorSpec::RollingWindow { name: "RW".into(), window: 500 },
            PredictorSpec::Ewma { name: "EWMA".into(), half_life: 250.0 },
            PredictorSpec::Iewma { name: "IEWMA".into(), h_vol: 125.0, h_cor: 250.0, inflate: 0.0 },
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
            PredictorSpec::Prescient { name: "PRESCIENT".into() },
        ],
        portfolios: None,
        seed: 0,
    };
    let t1 = Instant::now();
    let report = run_experiment(&config, &returns).unwrap();
    eprintln!("experiment: {:?}", t1.elapsed());
    for p in &report.predictors {
        eprintln!(
            "{:>10}: avg {:.3} std {:.3} max {:.3}",
            p.name, p.regret.summary.average, p.regret.summary.std_dev, p.regret.summary.max
        );
    }
}
