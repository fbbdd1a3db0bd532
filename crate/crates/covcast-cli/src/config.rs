//! Flat INI-style experiment configuration with full CLI override
//! support: every key can be set from the command line as
//! `--set section.key=value`, applied after the file parse.

use std::collections::BTreeMap;
use std::path::PathBuf;

use covcast_core::backtest::{ExperimentConfig, PortfolioConfig, PredictorSpec};
use covcast_core::combiner::{fastest_component, CmIewmaConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    BadLine { line: usize },
    #[error("unknown key {key:?}; valid keys: {valid}")]
    UnknownKey { key: String, valid: String },
    #[error("key {key}: {message}")]
    BadValue { key: String, message: String },
    #[error("missing required key {0}")]
    Missing(String),
    #[error("override {0:?} is not of the form section.key=value")]
    BadOverride(String),
}

const VALID_KEYS: &[&str] = &[
    "data.csv",
    "data.rf_column",
    "data.burn_in",
    "data.seed",
    "predictors.rw_window",
    "predictors.ewma_half_life",
    "predictors.iewma",
    "predictors.iewma_inflate",
    "predictors.cm_iewma",
    "predictors.cm_lookback",
    "predictors.cm_inflate_fraction",
    "predictors.cm_inflate_set",
    "predictors.cm_diagonal_expert",
    "predictors.cm_smooth_penalty",
    "predictors.prescient",
    "predictors.external",
    "portfolios.enabled",
    "portfolios.leverage_max",
    "portfolios.w_min",
    "portfolios.w_max",
    "portfolios.sigma_target",
    "portfolios.mean_half_life",
    "simulate.predictor",
    "simulate.horizon",
    "simulate.paths",
    "output.dir",
];

/// Raw key/value view of the config file plus overrides.
#[derive(Debug, Default)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn from_file(path: &str) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = raw_line.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::BadLine { line: i + 1 })?;
            let full = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{section}.{}", key.trim())
            };
            Self::check_key(&full)?;
            values.insert(full, value.trim().to_string());
        }
        Ok(Self { values })
    }

    fn check_key(key: &str) -> Result<(), ConfigError> {
        if !VALID_KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                key: key.to_string(),
                valid: VALID_KEYS.join(", "),
            });
        }
        Ok(())
    }

    /// Applies `section.key=value` overrides on top of the file values.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| ConfigError::BadOverride(item.clone()))?;
            let key = key.trim();
            Self::check_key(key)?;
            self.values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(text) => text.parse::<T>().map(Some).map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                message: format!("cannot parse {text:?}"),
            }),
        }
    }

    fn parse_bool(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some("true") | Some("1") | Some("yes") => Ok(Some(true)),
            Some("false") | Some("0") | Some("no") => Ok(Some(false)),
            Some(other) => Err(ConfigError::BadValue {
                key: key.to_string(),
                message: format!("expected true/false, got {other:?}"),
            }),
        }
    }

    fn parse_pair(&self, key: &str, text: &str) -> Result<(f64, f64), ConfigError> {
        let (a, b) = text.split_once('/').ok_or_else(|| ConfigError::BadValue {
            key: key.to_string(),
            message: format!("expected H_vol/H_cor, got {text:?}"),
        })?;
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                message: format!("cannot parse half-life {s:?}"),
            })
        };
        Ok((parse(a)?, parse(b)?))
    }
}

/// Everything a CLI invocation needs, resolved from file + overrides.
#[derive(Debug)]
pub struct Resolved {
    pub experiment: ExperimentConfig,
    pub csv_path: PathBuf,
    pub rf_column: Option<String>,
    pub output_dir: PathBuf,
    pub simulate: SimulateConfig,
}

#[derive(Debug)]
pub struct SimulateConfig {
    /// Name of the configured predictor driving the simulation.
    pub predictor: String,
    pub horizon: usize,
    pub paths: usize,
}

/// Builds the experiment configuration. `force_portfolios_off` drops the
/// portfolio legs regardless of the file (used by the `regret` and
/// `weights` subcommands).
pub fn resolve(raw: &RawConfig, force_portfolios_off: bool) -> Result<Resolved, ConfigError> {
    let csv_path: String = raw
        .parse_value("data.csv")?
        .ok_or_else(|| ConfigError::Missing("data.csv".into()))?;
    let rf_column: Option<String> = raw.parse_value("data.rf_column")?;
    let burn_in: usize = raw.parse_value("data.burn_in")?.unwrap_or(500);
    let seed: u64 = raw.parse_value("data.seed")?.unwrap_or(0);

    let mut predictors: Vec<PredictorSpec> = Vec::new();
    if let Some(window) = raw.parse_value::<usize>("predictors.rw_window")? {
        predictors.push(PredictorSpec::RollingWindow {
            name: "RW".into(),
            window,
        });
    }
    if let Some(half_life) = raw.parse_value::<f64>("predictors.ewma_half_life")? {
        predictors.push(PredictorSpec::Ewma {
            name: "EWMA".into(),
            half_life,
        });
    }
    if let Some(text) = raw.get("predictors.iewma") {
        let (h_vol, h_cor) = raw.parse_pair("predictors.iewma", text)?;
        let inflate = raw
            .parse_value::<f64>("predictors.iewma_inflate")?
            .unwrap_or(0.0);
        predictors.push(PredictorSpec::Iewma {
            name: "IEWMA".into(),
            h_vol,
            h_cor,
            inflate,
        });
    }
    if let Some(text) = raw.get("predictors.cm_iewma") {
        let mut half_lives = Vec::new();
        for part in text.split(',') {
            half_lives.push(raw.parse_pair("predictors.cm_iewma", part)?);
        }
        let lookback = raw.parse_value::<usize>("predictors.cm_lookback")?.unwrap_or(10);
        let inflate_fraction = raw
            .parse_value::<f64>("predictors.cm_inflate_fraction")?
            .unwrap_or(0.05);
        let inflate_set = match raw.get("predictors.cm_inflate_set") {
            Some(text) => {
                let mut set = Vec::new();
                for part in text.split(',') {
                    set.push(part.trim().parse::<usize>().map_err(|_| {
                        ConfigError::BadValue {
                            key: "predictors.cm_inflate_set".into(),
                            message: format!("bad component index {part:?}"),
                        }
                    })?);
                }
                set
            }
            None => vec![fastest_component(&half_lives)],
        };
        let diagonal_expert = raw.parse_bool("predictors.cm_diagonal_expert")?.unwrap_or(false);
        let smooth_weight_penalty = raw
            .parse_value::<f64>("predictors.cm_smooth_penalty")?
            .unwrap_or(0.0);
        predictors.push(PredictorSpec::CmIewma {
            name: "CM-IEWMA".into(),
            config: CmIewmaConfig {
                half_lives,
                lookback,
                inflate_fraction,
                inflate_set,
                diagonal_expert,
                smooth_weight_penalty,
            },
        });
    }
    if raw.parse_bool("predictors.prescient")?.unwrap_or(false) {
        predictors.push(PredictorSpec::Prescient {
            name: "PRESCIENT".into(),
        });
    }
    if let Some(text) = raw.get("predictors.external") {
        let (name, path) = text.split_once(':').ok_or_else(|| ConfigError::BadValue {
            key: "predictors.external".into(),
            message: format!("expected NAME:path.csv, got {text:?}"),
        })?;
        predictors.push(PredictorSpec::External {
            name: name.trim().to_string(),
            path: PathBuf::from(path.trim()),
        });
    }

    let portfolios = if !force_portfolios_off
        && raw.parse_bool("portfolios.enabled")?.unwrap_or(false)
    {
        Some(PortfolioConfig {
            leverage_max: raw.parse_value("portfolios.leverage_max")?.unwrap_or(1.6),
            w_min: raw.parse_value("portfolios.w_min")?.unwrap_or(-0.1),
            w_max: raw.parse_value("portfolios.w_max")?.unwrap_or(0.15),
            sigma_target_annual: raw.parse_value("portfolios.sigma_target")?.unwrap_or(0.05),
            mean_half_life: raw.parse_value("portfolios.mean_half_life")?.unwrap_or(63.0),
        })
    } else {
        None
    };

    let simulate = SimulateConfig {
        predictor: raw
            .parse_value::<String>("simulate.predictor")?
            .unwrap_or_else(|| "CM-IEWMA".into()),
        horizon: raw.parse_value("simulate.horizon")?.unwrap_or(63),
        paths: raw.parse_value("simulate.paths")?.unwrap_or(100),
    };

    let output_dir: String = raw
        .parse_value::<String>("output.dir")?
        .unwrap_or_else(|| "out".into());

    Ok(Resolved {
        experiment: ExperimentConfig {
            dataset: Some(PathBuf::from(&csv_path)),
            rf_column: rf_column.clone(),
            burn_in,
            predictors,
            portfolios,
            seed,
        },
        csv_path: PathBuf::from(csv_path),
        rf_column,
        output_dir: PathBuf::from(output_dir),
        simulate,
    })
}
