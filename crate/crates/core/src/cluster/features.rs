//! Country-level clustering features built from single-population
//! Lee–Carter period indices.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::stl::{seasonal_strength, stl, trend_slope, StlConfig};
use crate::data::MortalityTensor;
use crate::error::{Error, Result};
use crate::lee_carter::fit_lc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureMethod {
    /// Method 1: the κ series itself.
    RawSeries,
    /// Method 2: slope of the STL trend.
    Slope,
    /// Method 3: trend slope and seasonal strength, min-max scaled.
    SlopeAndStrength,
}

impl FeatureMethod {
    pub fn from_number(m: u8) -> Result<Self> {
        match m {
            1 => Ok(Self::RawSeries),
            2 => Ok(Self::Slope),
            3 => Ok(Self::SlopeAndStrength),
            other => Err(Error::Config(format!("unknown clustering method {other} (expected 1, 2 or 3)"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Self::RawSeries => 1,
            Self::Slope => 2,
            Self::SlopeAndStrength => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFeatures {
    pub method: FeatureMethod,
    /// `J x d`.
    pub matrix: DMatrix<f64>,
}

/// Single-population Lee–Carter κ for every country of the tensor, on the
/// tensor's current scale.
pub fn lc_kappas(tensor: &MortalityTensor) -> Result<Vec<Vec<f64>>> {
    (0..tensor.n_countries())
        .into_par_iter()
        .map(|j| {
            fit_lc(&tensor.log_panel(j))
                .map(|f| f.kappa.iter().copied().collect())
                .map_err(|e| Error::SubFit {
                    which: format!("Lee–Carter for {}", tensor.countries()[j]),
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Scales a column to `[0, 1]`; a constant column maps to zeros.
pub fn min_max_scale(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|v| if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 })
        .collect()
}

/// Builds the feature matrix for one method from per-country κ series.
pub fn build_features(
    kappas: &[Vec<f64>],
    method: FeatureMethod,
    stl_cfg: &StlConfig,
) -> Result<ClusterFeatures> {
    let nj = kappas.len();
    if nj == 0 {
        return Err(Error::InvalidInput("no κ series to cluster".into()));
    }
    let nt = kappas[0].len();
    if kappas.iter().any(|k| k.len() != nt) {
        return Err(Error::InvalidInput("κ series differ in length".into()));
    }
    let matrix = match method {
        FeatureMethod::RawSeries => DMatrix::from_fn(nj, nt, |j, t| kappas[j][t]),
        FeatureMethod::Slope | FeatureMethod::SlopeAndStrength => {
            let stats: Vec<(f64, f64)> = kappas
                .par_iter()
                .map(|k| {
                    let d = stl(k, stl_cfg)?;
                    let strength = if method == FeatureMethod::SlopeAndStrength {
                        seasonal_strength(&d)?
                    } else {
                        0.0
                    };
                    Ok((trend_slope(&d), strength))
                })
                .collect::<Result<_>>()?;
            if method == FeatureMethod::Slope {
                DMatrix::from_fn(nj, 1, |j, _| stats[j].0)
            } else {
                let slope = min_max_scale(&stats.iter().map(|s| s.0).collect::<Vec<_>>());
                let strength = min_max_scale(&stats.iter().map(|s| s.1).collect::<Vec<_>>());
                DMatrix::from_fn(nj, 2, |j, c| if c == 0 { slope[j] } else { strength[j] })
            }
        }
    };
    Ok(ClusterFeatures { method, matrix })
}
