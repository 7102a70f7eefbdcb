//! Run configuration: an optional TOML file overlaid by command-line flags,
//! validated in full before any data is read.

use std::path::{Path, PathBuf};

use gbll::backtest::{BacktestPlan, MONTH_END_WEEKS};
use gbll::boost::GbllConfig;
use gbll::cluster::{ClusteringConfig, FeatureMethod, KMeansConfig};
use gbll::data::IngestConfig;
use gbll::diagnostics::LjungBoxConfig;
use gbll::model::{ForecastConfig, ModelSpec, DEFAULT_HBY_ORDER};
use gbll::tsmodels::ArimaGrid;
use gbll::{Error, Result};
use serde::Deserialize;

/// Model hyperparameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub max_iterations: usize,
    pub gamma_cap: Option<f64>,
    pub hby_order: (usize, usize),
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            max_iterations: GbllConfig::default().max_iterations,
            gamma_cap: None,
            hby_order: DEFAULT_HBY_ORDER,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LjungBoxSection {
    pub lags: usize,
    pub alpha: f64,
    pub fitted_df: usize,
}

impl Default for LjungBoxSection {
    fn default() -> Self {
        let d = LjungBoxConfig::default();
        Self {
            lags: d.lags,
            alpha: d.alpha,
            fitted_df: d.fitted_df,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSection {
    pub k: Option<usize>,
    pub k_max: usize,
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        let d = KMeansConfig::default();
        Self {
            k: None,
            k_max: 10,
            restarts: d.restarts,
            seed: d.seed,
            max_iter: d.max_iter,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestSection {
    pub month_ends: Vec<usize>,
    pub base_train_weeks: usize,
    pub folds: usize,
}

impl Default for BacktestSection {
    fn default() -> Self {
        let d = BacktestPlan::default();
        Self {
            month_ends: MONTH_END_WEEKS.to_vec(),
            base_train_weeks: d.base_train_weeks,
            folds: d.folds,
        }
    }
}

/// Contents of the `--config` TOML file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data_path: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub data: Option<IngestConfig>,
    pub model: ModelSection,
    pub ljung_box: LjungBoxSection,
    pub arima: ArimaGrid,
    pub cluster: ClusterSection,
    pub backtest: BacktestSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn ingest(&self) -> IngestConfig {
        self.data.clone().unwrap_or_default()
    }

    pub fn ljung_box(&self) -> LjungBoxConfig {
        LjungBoxConfig {
            lags: self.ljung_box.lags,
            alpha: self.ljung_box.alpha,
            fitted_df: self.ljung_box.fitted_df,
        }
    }

    pub fn gbll(&self) -> GbllConfig {
        GbllConfig {
            max_iterations: self.model.max_iterations,
            ljung_box: self.ljung_box(),
            gamma_cap: self.model.gamma_cap,
            ..GbllConfig::default()
        }
    }

    /// Resolves a model name against the configured hyperparameters.
    pub fn model_spec(&self, name: &str) -> Result<ModelSpec> {
        Ok(match ModelSpec::parse(name)? {
            ModelSpec::LiLee => ModelSpec::LiLee,
            ModelSpec::Hby { .. } => ModelSpec::Hby {
                order: self.model.hby_order,
            },
            ModelSpec::Gbll(_) => ModelSpec::Gbll(self.gbll()),
        })
    }

    pub fn forecast(&self) -> ForecastConfig {
        ForecastConfig { arima_grid: self.arima }
    }

    pub fn plan(&self) -> BacktestPlan {
        BacktestPlan {
            month_ends: self.backtest.month_ends.clone(),
            base_train_weeks: self.backtest.base_train_weeks,
            folds: self.backtest.folds,
            horizon_weeks: self.backtest.month_ends.last().copied().unwrap_or(0),
        }
    }

    pub fn clustering(&self, method: FeatureMethod) -> ClusteringConfig {
        ClusteringConfig {
            k: self.cluster.k,
            k_max: self.cluster.k_max,
            kmeans: KMeansConfig {
                restarts: self.cluster.restarts,
                seed: self.cluster.seed,
                max_iter: self.cluster.max_iter,
            },
            ..ClusteringConfig::new(method)
        }
    }

    /// Checks every section that a command may use.
    pub fn validate(&self) -> Result<()> {
        self.ingest().validate()?;
        self.gbll().validate()?;
        self.arima.validate()?;
        self.plan().validate()?;
        let (r, u) = self.model.hby_order;
        if r == 0 || u == 0 {
            return Err(Error::Config("HBY order must be positive".into()));
        }
        if self.cluster.restarts == 0 || self.cluster.max_iter == 0 {
            return Err(Error::Config("k-means restarts and iterations must be positive".into()));
        }
        if self.cluster.k == Some(0) {
            return Err(Error::Config("number of clusters must be positive".into()));
        }
        if self.cluster.k_max < 3 && self.cluster.k.is_none() {
            return Err(Error::Config("the elbow rule needs k_max of at least 3".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        Ok(())
    }
}

/// Parses `6` or `6,4` into an HBY order.
pub fn parse_order(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let parse = |p: &str| {
        p.parse::<usize>()
            .map_err(|_| Error::Config(format!("invalid HBY order {s:?}")))
    };
    match parts.as_slice() {
        [r] => {
            let r = parse(r)?;
            Ok((r, r))
        }
        [r, u] => Ok((parse(r)?, parse(u)?)),
        _ => Err(Error::Config(format!("invalid HBY order {s:?}"))),
    }
}

/// Parses a comma-separated list of clustering methods.
pub fn parse_methods(s: &str) -> Result<Vec<FeatureMethod>> {
    let mut out = Vec::new();
    for p in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: u8 = p
            .parse()
            .map_err(|_| Error::Config(format!("invalid clustering method {p:?}")))?;
        let m = FeatureMethod::from_number(m)?;
        if out.contains(&m) {
            return Err(Error::Config(format!("clustering method {} listed twice", m.number())));
        }
        out.push(m);
    }
    if out.is_empty() {
        return Err(Error::Config("no clustering method given".into()));
    }
    Ok(out)
}
