//! Experiment driver: runs a suite of predictors over a return panel in
//! one chronological pass, scores them on the common post-burn-in day
//! set, builds the daily portfolios, and assembles plot-ready reports.
//! Also hosts the generative simulation mode.

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::combiner::{
    precision_cholesky, CmIewmaConfig, CombinerState, PrecisionFactor, WeightVector,
};
use crate::estimators::{
    empirical_second_moment, inflate_diagonal, ridge_if_singular, CovEstimate, EwmaState,
    IewmaState, RollingWindowState, VectorEwma,
};
use crate::evaluation::{
    log_likelihood, metrics_from_series, quarterly_regret_from_loglik, regret_cdf,
    PortfolioMetrics, RegretSeries,
};
use crate::linalg;
use crate::market_data::{quarter_partition, MarketDataError, ReturnsMatrix};
use crate::portfolios::{
    cash_overlay, equal_weight, max_diversification, mean_variance, min_variance, risk_parity,
    PortfolioWeights,
};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] MarketDataError),
    #[error(transparent)]
    Estimator(#[from] crate::estimators::EstimatorError),
    #[error(transparent)]
    Combiner(#[from] crate::combiner::CombinerError),
    #[error(transparent)]
    Portfolio(#[from] crate::portfolios::PortfolioError),
    #[error(transparent)]
    Evaluation(#[from] crate::evaluation::EvaluationError),
    #[error("predictor {0} cannot run in generative mode")]
    NotStreamable(String),
    #[error("predictor {0} is unavailable at the end of the seed returns")]
    SeedTooShort(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// One predictor in the experiment suite.
#[derive(Debug, Clone)]
pub enum PredictorSpec {
    RollingWindow {
        name: String,
        window: usize,
    },
    Ewma {
        name: String,
        half_life: f64,
    },
    Iewma {
        name: String,
        h_vol: f64,
        h_cor: f64,
        /// Diagonal inflation fraction (0 disables it).
        inflate: f64,
    },
    CmIewma {
        name: String,
        config: CmIewmaConfig,
    },
    /// Per-quarter empirical covariance oracle; zero regret by
    /// construction and not implementable in real time.
    Prescient {
        name: String,
    },
    /// A fixed covariance for every day.
    Constant {
        name: String,
        matrix: DMatrix<f64>,
    },
    /// Externally computed per-day covariances (e.g. an MGARCH run),
    /// loaded from the long-form exchange CSV.
    External {
        name: String,
        path: PathBuf,
    },
}

impl PredictorSpec {
    pub fn name(&self) -> &str {
        match self {
            PredictorSpec::RollingWindow { name, .. }
            | PredictorSpec::Ewma { name, .. }
            | PredictorSpec::Iewma { name, .. }
            | PredictorSpec::CmIewma { name, .. }
            | PredictorSpec::Prescient { name }
            | PredictorSpec::Constant { name, .. }
            | PredictorSpec::External { name, .. } => name,
        }
    }
}

/// Portfolio construction parameters shared by the whole suite.
#[derive(Debug, Clone)]
pub struct PortfolioConfig {
    pub leverage_max: f64,
    pub w_min: f64,
    pub w_max: f64,
    /// Annualized ex-ante volatility target for the cash overlay and the
    /// mean-variance risk cap.
    pub sigma_target_annual: f64,
    /// Half-life of the EWMA return forecast.
    pub mean_half_life: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Dataset path, recorded for provenance (data is passed separately).
    pub dataset: Option<PathBuf>,
    pub rf_column: Option<String>,
    /// Days used only to initialize predictors, excluded from evaluation.
    pub burn_in: usize,
    pub predictors: Vec<PredictorSpec>,
    /// Portfolio backtests run only when set.
    pub portfolios: Option<PortfolioConfig>,
    pub seed: u64,
}

impl ExperimentConfig {
    fn validate(&self, returns: &ReturnsMatrix) -> Result<(), BacktestError> {
        let n = returns.assets_count();
        if self.predictors.is_empty() {
            return Err(BacktestError::Config("no predictors configured".into()));
        }
        if self.burn_in < n + 1 {
            return Err(BacktestError::Config(format!(
                "burn_in {} must be at least n + 1 = {}",
                self.burn_in,
                n + 1
            )));
        }
        if self.burn_in >= returns.days() {
            return Err(BacktestError::Config(format!(
                "burn_in {} consumes the whole panel of {} days",
                self.burn_in,
                returns.days()
            )));
        }
        for spec in &self.predictors {
            match spec {
                PredictorSpec::RollingWindow { name, window } => {
                    if *window < n {
                        return Err(BacktestError::Config(format!(
                            "rolling window {window} of predictor {name} is below n = {n}; \
                             its estimate can never reach full rank"
                        )));
                    }
                }
                PredictorSpec::Ewma { name, half_life } => {
                    if *half_life < 1.0 {
                        return Err(BacktestError::Config(format!(
                            "half-life {half_life} of predictor {name} must be >= 1"
                        )));
                    }
                }
                PredictorSpec::Iewma {
                    name, h_vol, h_cor, ..
                } => {
                    if *h_vol < 1.0 || *h_cor < 1.0 {
                        return Err(BacktestError::Config(format!(
                            "half-lives of predictor {name} must be >= 1"
                        )));
                    }
                }
                PredictorSpec::CmIewma { name, config }
                    if config.half_lives.iter().any(|&(v, c)| v < 1.0 || c < 1.0) => {
                        return Err(BacktestError::Config(format!(
                            "half-lives of predictor {name} must be >= 1"
                        )));
                    }
                _ => {}
            }
        }
        Ok(())
    }

    /// FNV-1a hash over the configuration and a fingerprint of the data,
    /// embedded in every report for traceability.
    pub fn fingerprint(&self, returns: &ReturnsMatrix) -> String {
        let mut h = Fnv::new();
        h.write(format!("{:?}", self).as_bytes());
        h.write(format!("{}x{}", returns.days(), returns.assets_count()).as_bytes());
        for d in [returns.dates()[0], *returns.dates().last().unwrap()] {
            h.write(d.format("%Y-%m-%d").to_string().as_bytes());
        }
        for v in returns.values().iter() {
            h.write(&v.to_bits().to_le_bytes());
        }
        if let Some(rf) = returns.risk_free() {
            for v in rf {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        format!("{:016x}", h.finish())
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

// ---------------------------------------------------------------------------
// Covariance exchange format
// ---------------------------------------------------------------------------

/// Loads a per-day covariance series from the long-form exchange CSV
/// `date,i,j,value` with `i <= j`; the lower triangle is completed by
/// symmetry. Used to plug externally computed predictors into a backtest.
pub fn load_covariance_series_csv(
    path: impl AsRef<Path>,
    n: usize,
) -> Result<BTreeMap<NaiveDate, DMatrix<f64>>, BacktestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| BacktestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out: BTreeMap<NaiveDate, DMatrix<f64>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |what: &str| {
            BacktestError::Config(format!(
                "{}: line {}: {what}",
                path.display(),
                lineno + 1
            ))
        };
        if fields.len() != 4 {
            return Err(bad("expected date,i,j,value"));
        }
        let date = NaiveDate::parse_from_str(fields[0], "%Y-%m-%d")
            .map_err(|_| bad("unparsable date"))?;
        let i: usize = fields[1].parse().map_err(|_| bad("bad row index"))?;
        let j: usize = fields[2].parse().map_err(|_| bad("bad column index"))?;
        let value: f64 = fields[3].parse().map_err(|_| bad("bad value"))?;
        if i > j || j >= n {
            return Err(bad("indices must satisfy i <= j < n"));
        }
        let m = out
            .entry(date)
            .or_insert_with(|| DMatrix::zeros(n, n));
        m[(i, j)] = value;
        m[(j, i)] = value;
    }
    Ok(out)
}

/// Writes a covariance series in the exchange format (upper triangle).
pub fn write_covariance_series_csv(
    path: impl AsRef<Path>,
    series: &BTreeMap<NaiveDate, DMatrix<f64>>,
) -> Result<(), BacktestError> {
    let path = path.as_ref();
    let mut out = String::from("date,i,j,value\n");
    for (date, m) in series {
        for i in 0..m.nrows() {
            for j in i..m.ncols() {
                out.push_str(&format!("{},{},{},{}\n", date.format("%Y-%m-%d"), i, j, m[(i, j)]));
            }
        }
    }
    std::fs::write(path, out).map_err(|source| BacktestError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Streaming predictor wrapper
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct DayPrediction {
    cov: CovEstimate,
    factor: PrecisionFactor,
}

fn day_prediction(est: CovEstimate) -> Option<DayPrediction> {
    let factor = precision_cholesky(&est).ok()?;
    Some(DayPrediction { cov: est, factor })
}

enum PredictorState {
    RollingWindow(RollingWindowState),
    Ewma(EwmaState),
    Iewma { state: IewmaState, inflate: f64 },
    CmIewma(CombinerState),
    Constant(DMatrix<f64>),
    External(BTreeMap<NaiveDate, DMatrix<f64>>),
}

/// One predictor in flight plus everything it accumulates over the run.
struct Runner {
    name: String,
    state: PredictorState,
    /// Prediction for the next incoming day.
    current: Option<DayPrediction>,
    /// Weights for the current prediction (combined predictors only).
    current_weights: Option<(WeightVector, f64)>,
    loglik: Vec<f64>,
    weights_track: Vec<(NaiveDate, Vec<f64>, f64)>,
    portfolios: Vec<PortfolioAccumulator>,
}

/// Per-portfolio running series of daily return, ex-ante variance, and
/// the matching risk-free rate, plus excluded-day bookkeeping.
struct PortfolioAccumulator {
    kind: PortfolioKind,
    daily: Vec<f64>,
    exante: Vec<f64>,
    risk_free: Vec<f64>,
    skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PortfolioKind {
    EqualWeight,
    MinVariance,
    RiskParity,
    MaxDiversification,
    MeanVariance,
}

impl PortfolioKind {
    pub const ALL: [PortfolioKind; 5] = [
        PortfolioKind::EqualWeight,
        PortfolioKind::MinVariance,
        PortfolioKind::RiskParity,
        PortfolioKind::MaxDiversification,
        PortfolioKind::MeanVariance,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            PortfolioKind::EqualWeight => "equal_weight",
            PortfolioKind::MinVariance => "min_variance",
            PortfolioKind::RiskParity => "risk_parity",
            PortfolioKind::MaxDiversification => "max_diversification",
            PortfolioKind::MeanVariance => "mean_variance",
        }
    }
}

impl Runner {
    fn new(spec: &PredictorSpec, n: usize, with_portfolios: bool) -> Result<Self, BacktestError> {
        let state = match spec {
            PredictorSpec::RollingWindow { window, .. } => {
                PredictorState::RollingWindow(RollingWindowState::new(n, *window)?)
            }
            PredictorSpec::Ewma { half_life, .. } => {
                PredictorState::Ewma(EwmaState::with_half_life(n, *half_life)?)
            }
            PredictorSpec::Iewma {
                h_vol,
                h_cor,
                inflate,
                ..
            } => PredictorState::Iewma {
                state: IewmaState::new(n, *h_vol, *h_cor)?,
                inflate: *inflate,
            },
            PredictorSpec::CmIewma { config, .. } => {
                PredictorState::CmIewma(CombinerState::new(n, config.clone())?)
            }
            PredictorSpec::Constant { name, matrix } => {
                if matrix.nrows() != n || matrix.ncols() != n {
                    return Err(BacktestError::Config(format!(
                        "constant covariance is {}x{}, panel has {n} assets",
                        matrix.nrows(),
                        matrix.ncols()
                    )));
                }
                let scale = matrix.amax().max(1e-300);
                if (matrix - matrix.transpose()).amax() > 1e-12 * scale {
                    return Err(BacktestError::Config(format!(
                        "constant covariance of predictor {name} is not symmetric"
                    )));
                }
                PredictorState::Constant(matrix.clone())
            }
            PredictorSpec::External { path, .. } => {
                PredictorState::External(load_covariance_series_csv(path, n)?)
            }
            PredictorSpec::Prescient { name } => {
                return Err(BacktestError::Config(format!(
                    "predictor {name}: the prescient oracle is built after the pass"
                )))
            }
        };
        let portfolios = if with_portfolios {
            PortfolioKind::ALL
                .iter()
                .map(|&kind| PortfolioAccumulator {
                    kind,
                    daily: Vec::new(),
                    exante: Vec::new(),
                    risk_free: Vec::new(),
                    skipped: 0,
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            name: spec.name().to_string(),
            state,
            current: None,
            current_weights: None,
            loglik: Vec::new(),
            weights_track: Vec::new(),
            portfolios,
        })
    }

    /// Makes sure `current` holds the prediction for the given day; the
    /// lookup-style predictors materialize it here.
    fn refresh(&mut self, date: NaiveDate, day: usize) {
        match &self.state {
            PredictorState::Constant(m) => {
                if self.current.is_none() {
                    self.current = day_prediction(CovEstimate::new(m.clone(), day));
                }
            }
            PredictorState::External(series) => {
                self.current = series
                    .get(&date)
                    .cloned()
                    .and_then(|m| day_prediction(CovEstimate::new(m, day)));
            }
            _ => {}
        }
    }

    fn available(&self) -> bool {
        self.current.is_some()
    }
}

/// Everything one day of the pass hands to each runner.
struct DayContext<'a> {
    day: usize,
    date: NaiveDate,
    r: &'a DVector<f64>,
    risk_free: f64,
    eval: bool,
    forecast: Option<&'a DVector<f64>>,
    portfolio_config: Option<&'a PortfolioConfig>,
}

impl Runner {

    /// Scores the current prediction against the realized return, runs
    /// the portfolio constructions, then advances the streaming state.
    fn process_day(&mut self, ctx: &DayContext<'_>) -> Result<(), BacktestError> {
        let (day, date, r) = (ctx.day, ctx.date, ctx.r);
        if ctx.eval {
            let pred = self.current.as_ref().expect("evaluation day availability");
            self.loglik.push(log_likelihood(&pred.factor, r)?);
            if let Some((w, eff)) = &self.current_weights {
                self.weights_track
                    .push((date, w.as_vector().iter().copied().collect(), *eff));
            }
            if let (Some(cfg), Some(r_hat)) = (ctx.portfolio_config, ctx.forecast) {
                let cov = pred.cov.clone();
                run_portfolios(
                    &mut self.portfolios,
                    &cov,
                    r,
                    ctx.risk_free,
                    r_hat,
                    cfg,
                    &self.name,
                    date,
                )?;
            }
        }

        match &mut self.state {
            PredictorState::RollingWindow(state) => {
                self.current = state.step(r)?.and_then(day_prediction);
            }
            PredictorState::Ewma(state) => {
                self.current = state.step(r)?.and_then(day_prediction);
            }
            PredictorState::Iewma { state, inflate } => {
                let est = state.step(r)?;
                let est = match est {
                    Some(e) if *inflate > 0.0 => Some(inflate_diagonal(&e, *inflate)?),
                    other => other,
                };
                self.current = est.and_then(day_prediction);
            }
            PredictorState::CmIewma(state) => {
                let out = state.step(r)?;
                let eff = state.effective_half_life();
                self.current_weights = Some((out.weights.clone(), eff));
                self.current = match (out.estimate, state.last_combined_factor()) {
                    (Some(cov), Some(factor)) => Some(DayPrediction {
                        cov,
                        factor: factor.clone(),
                    }),
                    _ => None,
                };
            }
            PredictorState::Constant(m) => {
                self.current = day_prediction(CovEstimate::new(m.clone(), day + 1));
            }
            PredictorState::External(_) => {
                // next day's entry is looked up in refresh()
                self.current = None;
            }
        }
        Ok(())
    }
}

/// Builds the five portfolios for one day under one predictor and pushes
/// their realized/ex-ante series. Infeasible constructions are counted
/// and excluded rather than aborting the run.
#[allow(clippy::too_many_arguments)]
fn run_portfolios(
    accs: &mut [PortfolioAccumulator],
    cov: &CovEstimate,
    r: &DVector<f64>,
    risk_free: f64,
    r_hat: &DVector<f64>,
    cfg: &PortfolioConfig,
    predictor: &str,
    date: NaiveDate,
) -> Result<(), BacktestError> {
    let n = cov.dim();
    let cons = crate::convex_kit::BoxL1Constraints::uniform(
        n,
        cfg.leverage_max,
        cfg.w_min,
        cfg.w_max,
    );
    for acc in accs.iter_mut() {
        let built: Result<PortfolioWeights, crate::portfolios::PortfolioError> = match acc.kind {
            PortfolioKind::EqualWeight => {
                cash_overlay(&equal_weight(n, cov.day_index()), cov, cfg.sigma_target_annual)
            }
            PortfolioKind::MinVariance => min_variance(cov, &cons)
                .and_then(|w| cash_overlay(&w, cov, cfg.sigma_target_annual)),
            PortfolioKind::RiskParity => {
                risk_parity(cov).and_then(|w| cash_overlay(&w, cov, cfg.sigma_target_annual))
            }
            PortfolioKind::MaxDiversification => max_diversification(cov)
                .and_then(|w| cash_overlay(&w, cov, cfg.sigma_target_annual)),
            PortfolioKind::MeanVariance => {
                mean_variance(cov, r_hat, &cons, cfg.sigma_target_annual)
            }
        };
        match built {
            Ok(w) => {
                acc.daily.push(w.daily_return(r, risk_free));
                acc.exante.push(w.exante_variance(cov));
                acc.risk_free.push(risk_free);
            }
            Err(err) => {
                acc.skipped += 1;
                eprintln!(
                    "note: {predictor}/{} infeasible on {date}: {err}",
                    acc.kind.label()
                );
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PortfolioReport {
    pub portfolio: String,
    pub metrics: PortfolioMetrics,
    pub skipped_days: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictorReport {
    pub name: String,
    pub regret: RegretSeries,
    /// Average log-likelihood per evaluation day, in nats.
    pub loglik_mean: f64,
    pub portfolios: Vec<PortfolioReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightTrajectory {
    pub component_labels: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// One weight row per date, ordered as `component_labels`.
    pub weights: Vec<Vec<f64>>,
    /// Weight-averaged correlation half-life per date, in days.
    pub effective_half_life: Vec<f64>,
    pub yearly_average: Vec<(i32, Vec<f64>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BacktestReport {
    pub config_hash: String,
    pub eval_start: NaiveDate,
    pub eval_end: NaiveDate,
    pub evaluation_days: usize,
    /// Post-burn-in days dropped because some predictor was unavailable.
    pub skipped_days: usize,
    pub predictors: Vec<PredictorReport>,
    pub combined_weights: Vec<(String, WeightTrajectory)>,
}

// ---------------------------------------------------------------------------
// The experiment
// ---------------------------------------------------------------------------

/// Runs the configured predictor suite over the panel in one
/// chronological pass. Day-`t` estimates are built strictly from returns
/// through `t - 1`; evaluation is restricted to the post-burn-in days on
/// which every predictor is available; the prescient oracle and the
/// per-quarter optimum are computed on exactly that day set.
pub fn run_experiment(
    config: &ExperimentConfig,
    returns: &ReturnsMatrix,
) -> Result<BacktestReport, BacktestError> {
    config.validate(returns)?;
    let n = returns.assets_count();
    let t_total = returns.days();
    let with_portfolios = config.portfolios.is_some();

    let mut runners: Vec<Runner> = Vec::new();
    for spec in &config.predictors {
        match spec {
            PredictorSpec::Prescient { .. } => {} // materialized after the pass
            other => runners.push(Runner::new(other, n, with_portfolios)?),
        }
    }

    let mean_half_life = config
        .portfolios
        .as_ref()
        .map(|p| p.mean_half_life)
        .unwrap_or(63.0);
    let mut mean_forecast = VectorEwma::with_half_life(n, mean_half_life)?;

    let mut eval_days: Vec<usize> = Vec::new();
    let mut skipped_days = 0usize;

    for t in 0..t_total {
        let date = returns.dates()[t];
        let r = returns.row(t);
        let risk_free = returns.risk_free_at(t);

        for runner in runners.iter_mut() {
            runner.refresh(date, t);
        }
        let eval = t >= config.burn_in && runners.iter().all(Runner::available);
        if t >= config.burn_in && !eval {
            skipped_days += 1;
        }
        if eval {
            eval_days.push(t);
        }

        // Return forecast for day t (built from days before t) plus cash.
        let forecast = if with_portfolios && eval {
            let mut f = DVector::zeros(n + 1);
            f.rows_mut(0, n)
                .copy_from(&mean_forecast.estimate().expect("post burn-in forecast"));
            f[n] = risk_free;
            Some(f)
        } else {
            None
        };

        let ctx = DayContext {
            day: t,
            date,
            r: &r,
            risk_free,
            eval,
            forecast: forecast.as_ref(),
            portfolio_config: config.portfolios.as_ref(),
        };
        runners
            .par_iter_mut()
            .map(|runner| runner.process_day(&ctx))
            .collect::<Result<Vec<()>, BacktestError>>()?;

        mean_forecast.update(&r);
    }

    if eval_days.is_empty() {
        return Err(BacktestError::Config(
            "no evaluation days: every post-burn-in day lacked a predictor".into(),
        ));
    }
    if skipped_days > 0 {
        eprintln!("note: {skipped_days} post-burn-in days skipped for unavailability");
    }

    // Evaluation-day panel and its calendar-quarter partition.
    let eval_returns = returns.select_days(&eval_days);
    let partition = quarter_partition(&eval_returns);

    // Reports in the configured predictor order; the prescient oracle
    // is materialized here, on the evaluation day set.
    let mut predictors: Vec<PredictorReport> = Vec::new();
    let mut combined_weights: Vec<(String, WeightTrajectory)> = Vec::new();
    let mut runner_iter = runners.iter();
    for spec in &config.predictors {
        if let PredictorSpec::Prescient { name } = spec {
            predictors.push(prescient_report(
                name,
                &eval_returns,
                &partition,
                config.portfolios.as_ref(),
                returns,
                &eval_days,
            )?);
            continue;
        }
        let runner = runner_iter.next().expect("runners follow config order");
        let regret = quarterly_regret_from_loglik(&runner.loglik, &eval_returns, &partition)?;
        let loglik_mean = runner.loglik.iter().sum::<f64>() / runner.loglik.len() as f64;
        let portfolios = runner
            .portfolios
            .iter()
            .map(|acc| PortfolioReport {
                portfolio: acc.kind.label().to_string(),
                metrics: metrics_from_series(&acc.daily, &acc.exante, &acc.risk_free),
                skipped_days: acc.skipped,
            })
            .collect();
        predictors.push(PredictorReport {
            name: runner.name.clone(),
            regret,
            loglik_mean,
            portfolios,
        });
        if let PredictorState::CmIewma(state) = &runner.state {
            combined_weights.push((
                runner.name.clone(),
                weight_trajectory(state.config(), &runner.weights_track),
            ));
        }
    }

    Ok(BacktestReport {
        config_hash: config.fingerprint(returns),
        eval_start: eval_returns.dates()[0],
        eval_end: *eval_returns.dates().last().unwrap(),
        evaluation_days: eval_days.len(),
        skipped_days,
        predictors,
        combined_weights,
    })
}

fn weight_trajectory(
    config: &CmIewmaConfig,
    track: &[(NaiveDate, Vec<f64>, f64)],
) -> WeightTrajectory {
    let mut labels: Vec<String> = config
        .half_lives
        .iter()
        .map(|(v, c)| format!("{v:.0}/{c:.0}"))
        .collect();
    if config.diagonal_expert {
        labels.push("diagonal".to_string());
    }
    let dates: Vec<NaiveDate> = track.iter().map(|(d, _, _)| *d).collect();
    let weights: Vec<Vec<f64>> = track.iter().map(|(_, w, _)| w.clone()).collect();
    let effective: Vec<f64> = track.iter().map(|(_, _, e)| *e).collect();

    let mut by_year: BTreeMap<i32, (Vec<f64>, usize)> = BTreeMap::new();
    for (date, w, _) in track {
        let entry = by_year
            .entry(date.year())
            .or_insert_with(|| (vec![0.0; labels.len()], 0));
        for (i, x) in w.iter().enumerate() {
            entry.0[i] += x;
        }
        entry.1 += 1;
    }
    let yearly_average = by_year
        .into_iter()
        .map(|(y, (sum, count))| (y, sum.iter().map(|s| s / count as f64).collect()))
        .collect();

    WeightTrajectory {
        component_labels: labels,
        dates,
        weights,
        effective_half_life: effective,
        yearly_average,
    }
}

fn prescient_report(
    name: &str,
    eval_returns: &ReturnsMatrix,
    partition: &crate::market_data::QuarterPartition,
    portfolio_config: Option<&PortfolioConfig>,
    full_returns: &ReturnsMatrix,
    eval_days: &[usize],
) -> Result<PredictorReport, BacktestError> {
    let n = eval_returns.assets_count();
    let mut loglik = vec![0.0f64; eval_returns.days()];
    let mut accs: Vec<PortfolioAccumulator> = if portfolio_config.is_some() {
        PortfolioKind::ALL
            .iter()
            .map(|&kind| PortfolioAccumulator {
                kind,
                daily: Vec::new(),
                exante: Vec::new(),
                risk_free: Vec::new(),
                skipped: 0,
            })
            .collect()
    } else {
        Vec::new()
    };

    // Return forecast stream over the full panel, sampled on eval days.
    let mean_half_life = portfolio_config.map(|p| p.mean_half_life).unwrap_or(63.0);
    let mut mean_forecast = VectorEwma::with_half_life(n, mean_half_life)?;
    let mut forecasts: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    if portfolio_config.is_some() {
        let eval_set: std::collections::BTreeSet<usize> = eval_days.iter().copied().collect();
        for t in 0..full_returns.days() {
            if eval_set.contains(&t) {
                forecasts.insert(t, mean_forecast.estimate().expect("post burn-in"));
            }
            mean_forecast.update(&full_returns.row(t));
        }
    }

    for (q, range) in partition.ranges() {
        let (sigma, ridged) =
            ridge_if_singular(empirical_second_moment(eval_returns, range.clone()));
        if ridged {
            eprintln!("note: prescient covariance for {q} required a diagonal ridge");
        }
        let factor = precision_cholesky(&CovEstimate::new(sigma.clone(), range.start))?;
        for local_t in range.clone() {
            let r = eval_returns.row(local_t);
            loglik[local_t] = log_likelihood(&factor, &r)?;
            if let Some(cfg) = portfolio_config {
                let day = eval_days[local_t];
                let risk_free = full_returns.risk_free_at(day);
                let mut r_hat = DVector::zeros(n + 1);
                r_hat.rows_mut(0, n).copy_from(&forecasts[&day]);
                r_hat[n] = risk_free;
                let cov = CovEstimate::new(sigma.clone(), day);
                run_portfolios(
                    &mut accs,
                    &cov,
                    &r,
                    risk_free,
                    &r_hat,
                    cfg,
                    name,
                    full_returns.dates()[day],
                )?;
            }
        }
    }

    let regret = quarterly_regret_from_loglik(&loglik, eval_returns, partition)?;
    let loglik_mean = loglik.iter().sum::<f64>() / loglik.len() as f64;
    Ok(PredictorReport {
        name: name.to_string(),
        regret,
        loglik_mean,
        portfolios: accs
            .iter()
            .map(|acc| PortfolioReport {
                portfolio: acc.kind.label().to_string(),
                metrics: metrics_from_series(&acc.daily, &acc.exante, &acc.risk_free),
                skipped_days: acc.skipped,
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

impl BacktestReport {
    /// Writes `metrics.csv`, `metrics.json`, `regret_quarterly.csv`,
    /// `weights_daily.csv`, and one `cdf_<predictor>.csv` per predictor
    /// into the directory.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<(), BacktestError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| BacktestError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let io_err = |path: &Path, source: std::io::Error| BacktestError::Io {
            path: path.display().to_string(),
            source,
        };

        // metrics.csv: one row per predictor x portfolio (regret columns
        // repeat per row; a lone placeholder row when portfolios are off).
        let path = dir.join("metrics.csv");
        let mut f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        writeln!(
            f,
            "predictor,portfolio,ann_return,ann_risk,sharpe,max_drawdown,max_drawdown_peak,\
             exante_vol,realized_vol,regret_avg,regret_std,regret_max,config_hash"
        )
        .map_err(|e| io_err(&path, e))?;
        for p in &self.predictors {
            let s = &p.regret.summary;
            if p.portfolios.is_empty() {
                writeln!(
                    f,
                    "{},-,,,,,,,,{},{},{},{}",
                    p.name, s.average, s.std_dev, s.max, self.config_hash
                )
                .map_err(|e| io_err(&path, e))?;
            }
            for port in &p.portfolios {
                let m = &port.metrics;
                writeln!(
                    f,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    p.name,
                    port.portfolio,
                    m.ann_return,
                    m.ann_risk,
                    m.sharpe,
                    m.max_drawdown,
                    m.max_drawdown_peak,
                    m.exante_vol,
                    m.realized_vol,
                    s.average,
                    s.std_dev,
                    s.max,
                    self.config_hash
                )
                .map_err(|e| io_err(&path, e))?;
            }
        }

        let path = dir.join("metrics.json");
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&path, json).map_err(|e| io_err(&path, e))?;

        let path = dir.join("regret_quarterly.csv");
        let mut f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        writeln!(f, "predictor,year,quarter,regret").map_err(|e| io_err(&path, e))?;
        for p in &self.predictors {
            for (q, v) in &p.regret.per_quarter {
                writeln!(f, "{},{},{},{}", p.name, q.year, q.quarter, v)
                    .map_err(|e| io_err(&path, e))?;
            }
        }

        let path = dir.join("weights_daily.csv");
        let mut f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        writeln!(f, "predictor,date,component,value").map_err(|e| io_err(&path, e))?;
        for (name, traj) in &self.combined_weights {
            for (i, date) in traj.dates.iter().enumerate() {
                for (k, label) in traj.component_labels.iter().enumerate() {
                    writeln!(
                        f,
                        "{},{},{},{}",
                        name,
                        date.format("%Y-%m-%d"),
                        label,
                        traj.weights[i][k]
                    )
                    .map_err(|e| io_err(&path, e))?;
                }
                writeln!(
                    f,
                    "{},{},effective_half_life,{}",
                    name,
                    date.format("%Y-%m-%d"),
                    traj.effective_half_life[i]
                )
                .map_err(|e| io_err(&path, e))?;
            }
        }

        for p in &self.predictors {
            let path = dir.join(format!("cdf_{}.csv", sanitize(&p.name)));
            let mut f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
            writeln!(f, "value,cum_fraction").map_err(|e| io_err(&path, e))?;
            for (v, frac) in regret_cdf(&p.regret) {
                writeln!(f, "{v},{frac}").map_err(|e| io_err(&path, e))?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Generative mode
// ---------------------------------------------------------------------------

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Simulates future return paths by alternating draws from the current
/// prediction with predictor updates on the simulated returns. Paths are
/// independent given distinct sub-seeds and deterministic given the seed.
pub fn simulate_generative(
    seed_returns: &ReturnsMatrix,
    spec: &PredictorSpec,
    horizon: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ReturnsMatrix>, BacktestError> {
    let n = seed_returns.assets_count();
    let mut runner = match spec {
        PredictorSpec::Prescient { name } | PredictorSpec::External { name, .. } => {
            return Err(BacktestError::NotStreamable(name.clone()))
        }
        other => Runner::new(other, n, false)?,
    };
    for t in 0..seed_returns.days() {
        let date = seed_returns.dates()[t];
        runner.refresh(date, t);
        let r = seed_returns.row(t);
        runner.process_day(&DayContext {
            day: t,
            date,
            r: &r,
            risk_free: 0.0,
            eval: false,
            forecast: None,
            portfolio_config: None,
        })?;
    }
    // Constant predictors materialize on refresh; give them one.
    let last_date = *seed_returns.dates().last().unwrap();
    runner.refresh(last_date + chrono::Duration::days(1), seed_returns.days());
    if !runner.available() {
        return Err(BacktestError::SeedTooShort(spec.name().to_string()));
    }

    let template = runner;
    let mut paths = Vec::with_capacity(n_paths);
    for p in 0..n_paths {
        let mut rng = StdRng::seed_from_u64(splitmix64(seed ^ (p as u64 + 1)));
        let mut state = PathRunner::clone_from(&template)?;
        let mut values = DMatrix::zeros(horizon, n);
        let mut dates = Vec::with_capacity(horizon);
        let mut date = last_date;
        for h in 0..horizon {
            date += chrono::Duration::days(1);
            dates.push(date);
            let chol = state.current_chol.as_ref().expect("available by induction");
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let r = chol * z;
            values.row_mut(h).copy_from(&r.transpose());
            state.step(&r, seed_returns.days() + h)?;
            if state.current_chol.is_none() {
                return Err(BacktestError::SeedTooShort(spec.name().to_string()));
            }
        }
        let assets = seed_returns.asset_names().to_vec();
        paths.push(ReturnsMatrix::new(dates, assets, values, None)?);
    }
    Ok(paths)
}

/// Lightweight clone of a runner for one simulated path: the streaming
/// state plus the Cholesky factor of the current prediction.
struct PathRunner {
    state: PredictorState,
    current_chol: Option<DMatrix<f64>>,
}

impl PathRunner {
    fn clone_from(runner: &Runner) -> Result<Self, BacktestError> {
        let state = match &runner.state {
            PredictorState::RollingWindow(s) => PredictorState::RollingWindow(s.clone()),
            PredictorState::Ewma(s) => PredictorState::Ewma(s.clone()),
            PredictorState::Iewma { state, inflate } => PredictorState::Iewma {
                state: state.clone(),
                inflate: *inflate,
            },
            PredictorState::CmIewma(s) => PredictorState::CmIewma(s.clone()),
            PredictorState::Constant(m) => PredictorState::Constant(m.clone()),
            PredictorState::External(_) => unreachable!("rejected in simulate_generative"),
        };
        let current_chol = runner
            .current
            .as_ref()
            .map(|p| linalg::chol_lower(p.cov.matrix()).expect("prediction is PD"));
        Ok(Self {
            state,
            current_chol,
        })
    }

    fn step(&mut self, r: &DVector<f64>, day: usize) -> Result<(), BacktestError> {
        let est = match &mut self.state {
            PredictorState::RollingWindow(s) => s.step(r)?,
            PredictorState::Ewma(s) => s.step(r)?,
            PredictorState::Iewma { state, inflate } => match state.step(r)? {
                Some(e) if *inflate > 0.0 => Some(inflate_diagonal(&e, *inflate)?),
                other => other,
            },
            PredictorState::CmIewma(s) => s.step(r)?.estimate,
            PredictorState::Constant(m) => Some(CovEstimate::new(m.clone(), day + 1)),
            PredictorState::External(_) => unreachable!(),
        };
        self.current_chol = est.and_then(|e| linalg::chol_lower(e.matrix()));
        Ok(())
    }
}
