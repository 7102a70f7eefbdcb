//! Expanding-window backtests with monthly MAPE aggregation.
//!
//! Fold `r` trains on weeks `1..=base + H_(r)` (with `H_(0) = 0`) and
//! forecasts the next `horizon` weeks. `MAPE_h` averages the absolute
//! percentage error on the original rate scale over ages, the first
//! `H_(h)` forecast weeks, countries and folds.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::MortalityTensor;
use crate::error::{Error, Result};
use crate::model::{train, ForecastConfig, ModelSpec};

/// Cumulative week count at the end of each month.
pub const MONTH_END_WEEKS: [usize; 12] = [4, 9, 13, 17, 22, 26, 30, 35, 39, 43, 48, 52];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BacktestPlan {
    /// Strictly increasing cumulative week counts `H_(1) .. H_(M)`.
    pub month_ends: Vec<usize>,
    pub base_train_weeks: usize,
    pub folds: usize,
    pub horizon_weeks: usize,
}

impl Default for BacktestPlan {
    fn default() -> Self {
        Self {
            month_ends: MONTH_END_WEEKS.to_vec(),
            base_train_weeks: 169,
            folds: 10,
            horizon_weeks: 52,
        }
    }
}

impl BacktestPlan {
    pub fn validate(&self) -> Result<()> {
        if self.month_ends.is_empty() || self.month_ends.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("month ends must be strictly increasing".into()));
        }
        if self.month_ends[0] == 0 {
            return Err(Error::Config("month ends must be positive".into()));
        }
        if *self.month_ends.last().unwrap() != self.horizon_weeks {
            return Err(Error::Config(format!(
                "last month end {} differs from the horizon {}",
                self.month_ends.last().unwrap(),
                self.horizon_weeks
            )));
        }
        if self.folds == 0 || self.folds > self.month_ends.len() + 1 {
            return Err(Error::Config(format!(
                "fold count {} must lie in 1..={}",
                self.folds,
                self.month_ends.len() + 1
            )));
        }
        if self.base_train_weeks == 0 {
            return Err(Error::Config("base training window is empty".into()));
        }
        Ok(())
    }

    /// Number of training weeks of fold `r` (`0`-based).
    pub fn train_weeks(&self, r: usize) -> usize {
        if r == 0 {
            self.base_train_weeks
        } else {
            self.base_train_weeks + self.month_ends[r - 1]
        }
    }

    /// Weeks of data the plan needs.
    pub fn required_weeks(&self) -> usize {
        self.train_weeks(self.folds - 1) + self.horizon_weeks
    }

    pub fn n_months(&self) -> usize {
        self.month_ends.len()
    }
}

/// Produces forecasts from a training panel.
pub trait Forecaster: Sync {
    fn label(&self) -> String;

    /// Rate forecasts on the original (untransformed) scale, `horizon x N`
    /// per country, in the tensor's country order.
    fn forecast(&self, train: &MortalityTensor, horizon: usize) -> Result<Vec<DMatrix<f64>>>;
}

/// Forecaster backed by one of the crate's models.
#[derive(Debug, Clone, Copy)]
pub struct ModelForecaster {
    pub spec: ModelSpec,
    pub config: ForecastConfig,
}

impl Forecaster for ModelForecaster {
    fn label(&self) -> String {
        self.spec.label().to_string()
    }

    fn forecast(&self, train_panel: &MortalityTensor, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
        train(train_panel, &self.spec, &self.config)?.forecast_rates(horizon, false)
    }
}

/// Absolute percentage errors of one backtest, indexed
/// `[fold][country][age][week]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub label: String,
    pub countries: Vec<String>,
    pub age_groups: Vec<String>,
    pub plan: BacktestPlan,
    ape: Vec<f64>,
}

impl BacktestResult {
    fn index(&self, r: usize, j: usize, x: usize, u: usize) -> usize {
        ((r * self.countries.len() + j) * self.age_groups.len() + x) * self.plan.horizon_weeks + u
    }

    /// `|m̂ - m| / m` for fold `r`, country `j`, age `x`, forecast week `u`
    /// (`0`-based).
    pub fn ape(&self, r: usize, j: usize, x: usize, u: usize) -> f64 {
        self.ape[self.index(r, j, x, u)]
    }

    fn mean_over(&self, month: usize, ages: std::ops::Range<usize>, countries: &[usize]) -> f64 {
        let weeks = self.plan.month_ends[month];
        let mut sum = 0.0;
        let mut count = 0usize;
        for r in 0..self.plan.folds {
            for &j in countries {
                for x in ages.clone() {
                    for u in 0..weeks {
                        sum += self.ape(r, j, x, u);
                        count += 1;
                    }
                }
            }
        }
        sum / count as f64
    }

    /// Number of scored cells at month `h` (`0`-based).
    pub fn cell_count(&self, month: usize) -> usize {
        self.age_groups.len() * self.plan.month_ends[month] * self.countries.len() * self.plan.folds
    }

    /// `MAPE_h` for every month (fractions, not percentages).
    pub fn mape_by_horizon(&self) -> Vec<f64> {
        let all: Vec<usize> = (0..self.countries.len()).collect();
        (0..self.plan.n_months())
            .map(|h| self.mean_over(h, 0..self.age_groups.len(), &all))
            .collect()
    }

    /// `months x N` matrix of per-age `MAPE_h`.
    pub fn mape_by_age(&self) -> DMatrix<f64> {
        let all: Vec<usize> = (0..self.countries.len()).collect();
        DMatrix::from_fn(self.plan.n_months(), self.age_groups.len(), |h, x| {
            self.mean_over(h, x..x + 1, &all)
        })
    }

    /// `months x J` matrix of per-country `MAPE_h`.
    pub fn mape_by_country(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.plan.n_months(), self.countries.len(), |h, j| {
            self.mean_over(h, 0..self.age_groups.len(), &[j])
        })
    }

    /// Per (fold, country, age, month) mean APE over the month's weeks, in
    /// deterministic key order.
    pub fn tidy(&self) -> Vec<TidyRow> {
        let mut out = Vec::new();
        for r in 0..self.plan.folds {
            for (j, c) in self.countries.iter().enumerate() {
                for (x, a) in self.age_groups.iter().enumerate() {
                    for (h, &weeks) in self.plan.month_ends.iter().enumerate() {
                        let sum: f64 = (0..weeks).map(|u| self.ape(r, j, x, u)).sum();
                        out.push(TidyRow {
                            fold: r,
                            country: c.clone(),
                            age: a.clone(),
                            month: h + 1,
                            mape: sum / weeks as f64,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TidyRow {
    pub fold: usize,
    pub country: String,
    pub age: String,
    pub month: usize,
    pub mape: f64,
}

fn check_grouping(groups: &[Vec<usize>], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for g in groups {
        if g.is_empty() {
            return Err(Error::Config("empty cluster in grouping".into()));
        }
        for &j in g {
            if j >= n || seen[j] {
                return Err(Error::Config(format!("grouping does not partition the {n} countries")));
            }
            seen[j] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Config(format!("grouping does not cover all {n} countries")));
    }
    Ok(())
}

/// Runs the expanding-window backtest of `model` on the
/// (hemisphere-transformed) tensor. With `grouping`, the model is fitted
/// separately inside each group and the forecasts are pooled.
pub fn run_backtest(
    tensor: &MortalityTensor,
    model: &dyn Forecaster,
    plan: &BacktestPlan,
    grouping: Option<&[Vec<usize>]>,
) -> Result<BacktestResult> {
    plan.validate()?;
    let (nj, nx) = (tensor.n_countries(), tensor.n_ages());
    if tensor.n_weeks() < plan.required_weeks() {
        return Err(Error::InsufficientData(format!(
            "the plan needs {} weeks, the panel has {}",
            plan.required_weeks(),
            tensor.n_weeks()
        )));
    }
    let whole: Vec<Vec<usize>> = vec![(0..nj).collect()];
    let groups = grouping.unwrap_or(&whole);
    check_grouping(groups, nj)?;
    let hw = plan.horizon_weeks;

    let per_fold: Vec<Vec<f64>> = (0..plan.folds)
        .into_par_iter()
        .map(|r| {
            let end = plan.train_weeks(r);
            let train_panel = tensor.slice_weeks(0..end);
            let mut fold_ape = vec![0.0; nj * nx * hw];
            let group_forecasts: Vec<Vec<DMatrix<f64>>> = groups
                .par_iter()
                .enumerate()
                .map(|(g, members)| {
                    let sub = train_panel.select_countries(members);
                    let f = model.forecast(&sub, hw).map_err(|e| Error::Fold {
                        fold: r,
                        group: g,
                        source: Box::new(e),
                    })?;
                    if f.len() != members.len() || f.iter().any(|m| m.shape() != (hw, nx)) {
                        return Err(Error::Fold {
                            fold: r,
                            group: g,
                            source: Box::new(Error::ShapeMismatch {
                                expected: (hw, nx),
                                found: f.first().map_or((0, 0), |m| m.shape()),
                            }),
                        });
                    }
                    Ok(f)
                })
                .collect::<Result<_>>()?;
            for (members, forecasts) in groups.iter().zip(group_forecasts) {
                for (&j, rates) in members.iter().zip(forecasts) {
                    for x in 0..nx {
                        for u in 0..hw {
                            let truth = tensor.raw_rate(j, x, end + u);
                            fold_ape[(j * nx + x) * hw + u] = (rates[(u, x)] - truth).abs() / truth;
                        }
                    }
                }
            }
            Ok(fold_ape)
        })
        .collect::<Result<_>>()?;

    Ok(BacktestResult {
        label: model.label(),
        countries: tensor.countries().to_vec(),
        age_groups: tensor.age_groups().to_vec(),
        plan: plan.clone(),
        ape: per_fold.concat(),
    })
}

/// MAPE tables of several models under one clustering method.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredComparison {
    pub method: u8,
    pub results: Vec<BacktestResult>,
}

/// Runs each model with and without `grouping`-style partitions: one
/// comparison per `(method, groups)` entry.
pub fn run_clustered_comparison(
    tensor: &MortalityTensor,
    methods: &[(u8, Vec<Vec<usize>>)],
    models: &[&dyn Forecaster],
    plan: &BacktestPlan,
) -> Result<Vec<ClusteredComparison>> {
    methods
        .iter()
        .map(|(method, groups)| {
            let results = models
                .iter()
                .map(|m| run_backtest(tensor, *m, plan, Some(groups)))
                .collect::<Result<_>>()?;
            Ok(ClusteredComparison {
                method: *method,
                results,
            })
        })
        .collect()
}
