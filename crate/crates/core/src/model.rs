//! Trained forecasting models: a Li–Lee, HBY or GBLL fit together with a
//! harmonic-plus-ARIMA model for every fitted index series.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::boost::{fit_gbll, GbllConfig, GbllEnsemble};
use crate::data::{MortalityTensor, WeekLabel, YearFraction};
use crate::error::{Error, Result};
use crate::multipop::{fit_hby, fit_li_lee, predict_hby, predict_li_lee, HbyFit, HbyPaths, LiLeeFit, LiLeePaths};
use crate::tsmodels::{fit_kappa_model, ArimaGrid, KappaModel};

/// HBY order used when none is given.
pub const DEFAULT_HBY_ORDER: (usize, usize) = (6, 6);

/// Which model to fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSpec {
    LiLee,
    Hby { order: (usize, usize) },
    Gbll(GbllConfig),
}

impl ModelSpec {
    pub fn label(&self) -> &'static str {
        match self {
            ModelSpec::LiLee => "LL",
            ModelSpec::Hby { .. } => "HBY",
            ModelSpec::Gbll(_) => "GBLL",
        }
    }

    pub fn file_extension(&self) -> &'static str {
        match self {
            ModelSpec::LiLee => "ll",
            ModelSpec::Hby { .. } => "hby",
            ModelSpec::Gbll(_) => "gbll",
        }
    }

    /// Parses `ll`, `hby` or `gbll` with default hyperparameters.
    pub fn parse(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "ll" | "lilee" | "li-lee" => Ok(ModelSpec::LiLee),
            "hby" => Ok(ModelSpec::Hby {
                order: DEFAULT_HBY_ORDER,
            }),
            "gbll" => Ok(ModelSpec::Gbll(GbllConfig::default())),
            other => Err(Error::Config(format!("unknown model '{other}' (expected ll, hby or gbll)"))),
        }
    }
}

/// Li–Lee fit with index models for `κ^p` and every `κ^j`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LiLeeModel {
    pub fit: LiLeeFit,
    pub common: KappaModel,
    pub country: Vec<KappaModel>,
}

impl LiLeeModel {
    fn paths(&self, h: usize, frozen: bool) -> LiLeePaths {
        LiLeePaths {
            common: DVector::from_vec(kappa_path(&self.common, h, frozen)),
            country: self
                .country
                .iter()
                .map(|m| DVector::from_vec(kappa_path(m, h, frozen)))
                .collect(),
        }
    }

    pub fn forecast_log(&self, h: usize, frozen: bool) -> Result<Vec<DMatrix<f64>>> {
        predict_li_lee(&self.fit, &self.paths(h, frozen))
    }
}

/// HBY fit with index models for every principal-component score series.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HbyModel {
    pub fit: HbyFit,
    pub common: Vec<KappaModel>,
    pub country: Vec<Vec<KappaModel>>,
}

impl HbyModel {
    pub fn forecast_log(&self, h: usize, frozen: bool) -> Result<Vec<DMatrix<f64>>> {
        let paths = HbyPaths {
            common: self
                .common
                .iter()
                .map(|m| DVector::from_vec(kappa_path(m, h, frozen)))
                .collect(),
            country: self
                .country
                .iter()
                .map(|ms| ms.iter().map(|m| DVector::from_vec(kappa_path(m, h, frozen))).collect())
                .collect(),
        };
        predict_hby(&self.fit, &paths)
    }
}

/// Boosted ensemble with one Li–Lee index model per stage.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GbllModel {
    pub ensemble: GbllEnsemble,
    pub stages: Vec<LiLeeModel>,
}

impl GbllModel {
    /// `Σ_g γ_g (Â^j_g + b̂^p_g κ̂^p_g + b̂^j_g κ̂^j_g)` at horizons `1..=h`.
    pub fn forecast_log(&self, h: usize, frozen: bool) -> Result<Vec<DMatrix<f64>>> {
        let mut out: Vec<DMatrix<f64>> = Vec::new();
        for (stage, &gamma) in self.stages.iter().zip(&self.ensemble.gammas) {
            let f = stage.forecast_log(h, frozen)?;
            if out.is_empty() {
                out = f.into_iter().map(|m| m * gamma).collect();
            } else {
                for (acc, m) in out.iter_mut().zip(f) {
                    *acc += m * gamma;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ModelBody {
    LiLee(LiLeeModel),
    Hby(HbyModel),
    Gbll(GbllModel),
}

/// A fitted model with the metadata needed to forecast on the original
/// rate scale without the training data.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainedModel {
    pub countries: Vec<String>,
    pub age_groups: Vec<String>,
    /// Whether each country was modelled on reciprocal rates.
    pub reciprocal: Vec<bool>,
    pub last_week: WeekLabel,
    pub n_train_weeks: usize,
    pub body: ModelBody,
}

/// Options shared by every model's index forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForecastConfig {
    pub arima_grid: ArimaGrid,
}

fn format_order(o: (usize, usize)) -> String {
    if o.0 == o.1 {
        o.0.to_string()
    } else {
        format!("({}, {})", o.0, o.1)
    }
}

fn kappa_path(m: &KappaModel, h: usize, frozen: bool) -> Vec<f64> {
    if frozen {
        m.forecast_frozen(h)
    } else {
        m.forecast(h)
    }
}

fn fit_index(series: &DVector<f64>, fracs: &[YearFraction], grid: &ArimaGrid, what: &str) -> Result<KappaModel> {
    fit_kappa_model(series.as_slice(), fracs, grid).map_err(|e| e.in_subfit(what))
}

fn li_lee_model(fit: LiLeeFit, fracs: &[YearFraction], grid: &ArimaGrid) -> Result<LiLeeModel> {
    let common = fit_index(&fit.product.kappa, fracs, grid, "common index")?;
    let country = fit
        .ratios
        .par_iter()
        .enumerate()
        .map(|(j, r)| fit_index(&r.kappa, fracs, grid, &format!("country index {j}")))
        .collect::<Result<_>>()?;
    Ok(LiLeeModel { fit, common, country })
}

/// Fits `spec` to the (already hemisphere-transformed) tensor and the
/// index models used for forecasting.
pub fn train(tensor: &MortalityTensor, spec: &ModelSpec, cfg: &ForecastConfig) -> Result<TrainedModel> {
    let panels = tensor.log_panels();
    let fracs = tensor.week_fractions();
    let grid = &cfg.arima_grid;
    let body = match spec {
        ModelSpec::LiLee => ModelBody::LiLee(li_lee_model(fit_li_lee(&panels)?, &fracs, grid)?),
        ModelSpec::Hby { order } => {
            let fit = fit_hby(&panels, *order)?;
            if fit.truncated() {
                log::warn!(
                    "HBY order truncated to {} (requested {})",
                    format_order(fit.order),
                    format_order(*order)
                );
            }
            let common = fit
                .common
                .par_iter()
                .enumerate()
                .map(|(r, c)| fit_index(&c.scores, &fracs, grid, &format!("common component {}", r + 1)))
                .collect::<Result<_>>()?;
            let country = fit
                .country
                .par_iter()
                .enumerate()
                .map(|(j, comps)| {
                    comps
                        .iter()
                        .enumerate()
                        .map(|(u, c)| {
                            fit_index(&c.scores, &fracs, grid, &format!("country {j} component {}", u + 1))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            ModelBody::Hby(HbyModel { fit, common, country })
        }
        ModelSpec::Gbll(gcfg) => {
            let ensemble = fit_gbll(&panels, gcfg)?;
            let stages = ensemble
                .stages
                .iter()
                .enumerate()
                .map(|(g, fit)| li_lee_model(fit.clone(), &fracs, grid).map_err(|e| e.at_stage(g + 1)))
                .collect::<Result<_>>()?;
            ModelBody::Gbll(GbllModel { ensemble, stages })
        }
    };
    Ok(TrainedModel {
        countries: tensor.countries().to_vec(),
        age_groups: tensor.age_groups().to_vec(),
        reciprocal: tensor.reciprocal_flags().to_vec(),
        last_week: *tensor
            .weeks()
            .last()
            .ok_or_else(|| Error::InsufficientData("empty tensor".into()))?,
        n_train_weeks: tensor.n_weeks(),
        body,
    })
}

impl TrainedModel {
    pub fn label(&self) -> &'static str {
        match self.body {
            ModelBody::LiLee(_) => "LL",
            ModelBody::Hby(_) => "HBY",
            ModelBody::Gbll(_) => "GBLL",
        }
    }

    /// Forecast log-rates on the modelling scale, `h x N` per country.
    /// With `frozen`, every index keeps its harmonic part and holds its
    /// disturbance at the last in-sample value.
    pub fn forecast_log(&self, h: usize, frozen: bool) -> Result<Vec<DMatrix<f64>>> {
        match &self.body {
            ModelBody::LiLee(m) => m.forecast_log(h, frozen),
            ModelBody::Hby(m) => m.forecast_log(h, frozen),
            ModelBody::Gbll(m) => m.forecast_log(h, frozen),
        }
    }

    /// Forecast rates on the original scale (reciprocal countries
    /// transformed back).
    pub fn forecast_rates(&self, h: usize, frozen: bool) -> Result<Vec<DMatrix<f64>>> {
        Ok(self
            .forecast_log(h, frozen)?
            .into_iter()
            .zip(&self.reciprocal)
            .map(|(m, &recip)| to_rates(&m, recip))
            .collect())
    }

    /// Labels of the `h` weeks following the training sample.
    pub fn future_weeks(&self, h: usize) -> Vec<WeekLabel> {
        WeekLabel::sequence(self.last_week, h + 1).split_off(1)
    }

    /// In-sample residuals of the fit, if they were kept.
    pub fn residuals(&self) -> Option<&[DMatrix<f64>]> {
        let r = match &self.body {
            ModelBody::LiLee(m) => &m.fit.residuals,
            ModelBody::Hby(m) => &m.fit.residuals,
            ModelBody::Gbll(m) => &m.ensemble.residuals,
        };
        if r.is_empty() {
            None
        } else {
            Some(r)
        }
    }
}

/// Converts modelling-scale log-rates to original-scale rates.
pub fn to_rates(log_rates: &DMatrix<f64>, reciprocal: bool) -> DMatrix<f64> {
    if reciprocal {
        log_rates.map(|v| (-v).exp())
    } else {
        log_rates.map(f64::exp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Hemisphere;
    use std::f64::consts::PI;

    fn tensor(nj: usize, nt: usize) -> MortalityTensor {
        let nx = 4;
        let mut rates = Vec::new();
        for j in 0..nj {
            for x in 0..nx {
                for t in 0..nt {
                    let season = (2.0 * PI * t as f64 / 52.0).cos();
                    let l = -8.0 + 1.2 * x as f64 - 0.0005 * t as f64
                        + 0.1 * (1.0 + 0.2 * x as f64) * season
                        + 0.02 * j as f64
                        + 0.01 * ((t * (j + 2) + x) as f64).sin();
                    rates.push(l.exp());
                }
            }
        }
        let countries = (0..nj).map(|j| format!("C{j}")).collect();
        let ages = (0..nx).map(|x| format!("A{x}")).collect();
        let mut hemis = vec![Hemisphere::North; nj];
        hemis[nj - 1] = Hemisphere::South;
        MortalityTensor::from_rates(
            countries,
            ages,
            WeekLabel::sequence(WeekLabel::new(2015, 1), nt),
            hemis,
            rates,
        )
        .unwrap()
        .apply_hemisphere_transform()
    }

    #[test]
    fn every_model_forecasts_positive_rates() {
        let t = tensor(3, 156);
        for spec in [
            ModelSpec::LiLee,
            ModelSpec::Hby { order: (6, 6) },
            ModelSpec::Gbll(GbllConfig {
                max_iterations: 3,
                ..Default::default()
            }),
        ] {
            let m = train(&t, &spec, &ForecastConfig::default()).unwrap();
            let f = m.forecast_rates(52, false).unwrap();
            assert_eq!(f.len(), 3);
            for (j, panel) in f.iter().enumerate() {
                assert_eq!(panel.shape(), (52, 4));
                let last = t.raw_rate(j, 0, 155);
                for v in panel.column(0).iter() {
                    assert!(v.is_finite() && *v > 0.0);
                    assert!((v / last).ln().abs() < 1.0, "{} {v} vs {last}", spec.label());
                }
            }
            assert_eq!(m.future_weeks(52)[0], WeekLabel::new(2018, 1));
        }
    }

    #[test]
    fn frozen_forecast_repeats() {
        let t = tensor(2, 156);
        let m = train(&t, &ModelSpec::LiLee, &ForecastConfig::default()).unwrap();
        let f = m.forecast_log(104, true).unwrap();
        for panel in f {
            for u in 0..52 {
                for x in 0..4 {
                    assert!((panel[(u, x)] - panel[(u + 52, x)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!(ModelSpec::parse("LL").unwrap(), ModelSpec::LiLee);
        assert!(matches!(ModelSpec::parse("hby").unwrap(), ModelSpec::Hby { order: (6, 6) }));
        assert!(ModelSpec::parse("tree").is_err());
    }
}
