//! Residual diagnostics: sample autocorrelation, the Ljung–Box portmanteau
//! test and per-age counts of white-noise residual series.

use nalgebra::DMatrix;
use rayon::prelude::*;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

/// Ljung–Box test settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LjungBoxConfig {
    /// Number of autocorrelation lags pooled in the statistic.
    pub lags: usize,
    /// Significance level; a series is white noise when `p >= alpha`.
    pub alpha: f64,
    /// Degrees of freedom subtracted for fitted parameters.
    pub fitted_df: usize,
}

impl Default for LjungBoxConfig {
    fn default() -> Self {
        Self {
            lags: 10,
            alpha: 0.05,
            fitted_df: 0,
        }
    }
}

impl LjungBoxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lags == 0 {
            return Err(Error::Config("Ljung–Box lags must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.fitted_df >= self.lags {
            return Err(Error::Config("fitted_df must be smaller than lags".into()));
        }
        Ok(())
    }
}

/// Sample autocorrelations `ρ̂_1 .. ρ̂_max_lag`.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 2 || max_lag >= n {
        return Err(Error::InsufficientLength {
            len: n,
            needed: max_lag.max(1),
        });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|y| y - mean).collect();
    let denom: f64 = dev.iter().map(|d| d * d).sum();
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::ZeroVariance);
    }
    Ok((1..=max_lag)
        .map(|k| dev[k..].iter().zip(&dev[..n - k]).map(|(a, b)| a * b).sum::<f64>() / denom)
        .collect())
}

/// Upper tail of the χ² distribution, `P(X > q)` with `df` degrees of
/// freedom, via the regularized upper incomplete gamma function.
pub fn chi2_sf(q: f64, df: f64) -> f64 {
    if q <= 0.0 {
        return 1.0;
    }
    gamma_ur(df / 2.0, q / 2.0).clamp(0.0, 1.0)
}

/// `P(X <= q)` for `X ~ χ²(df)`.
pub fn chi2_cdf(q: f64, df: f64) -> f64 {
    1.0 - chi2_sf(q, df)
}

/// Ljung–Box statistic `Q = n(n+2) Σ ρ̂_k² / (n-k)`.
pub fn ljung_box_q(series: &[f64], lags: usize) -> Result<f64> {
    let n = series.len();
    let rho = acf(series, lags)?;
    let nf = n as f64;
    let q = nf * (nf + 2.0)
        * rho
            .iter()
            .enumerate()
            .map(|(i, r)| r * r / (nf - (i + 1) as f64))
            .sum::<f64>();
    Ok(q)
}

/// Ljung–Box p-value.
pub fn ljung_box_p(series: &[f64], cfg: &LjungBoxConfig) -> Result<f64> {
    let n = series.len();
    if n <= cfg.lags + cfg.fitted_df {
        return Err(Error::InsufficientLength {
            len: n,
            needed: cfg.lags + cfg.fitted_df,
        });
    }
    let q = ljung_box_q(series, cfg.lags)?;
    let df = (cfg.lags - cfg.fitted_df).max(1) as f64;
    Ok(chi2_sf(q, df))
}

/// Ljung–Box p-value of a residual series, with series whose standard
/// deviation is at most `zero_tol` reported as white (`p = 1`).
pub fn residual_p_value(series: &[f64], cfg: &LjungBoxConfig, zero_tol: f64) -> Result<f64> {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    if var.sqrt() <= zero_tol {
        return Ok(1.0);
    }
    match ljung_box_p(series, cfg) {
        Err(Error::ZeroVariance) => Ok(1.0),
        other => other,
    }
}

/// p-values for every (country, age) residual column, `J x N`.
pub fn residual_p_values(
    residuals: &[DMatrix<f64>],
    cfg: &LjungBoxConfig,
    zero_tol: f64,
) -> Result<DMatrix<f64>> {
    let nj = residuals.len();
    let nx = residuals.first().map_or(0, |r| r.ncols());
    let cells: Vec<f64> = (0..nj * nx)
        .into_par_iter()
        .map(|i| {
            let (j, x) = (i / nx, i % nx);
            let col: Vec<f64> = residuals[j].column(x).iter().copied().collect();
            residual_p_value(&col, cfg, zero_tol)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_row_slice(nj, nx, &cells))
}

/// Count of countries whose residuals pass the Ljung–Box test, per age.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteNoiseReport {
    pub model_label: String,
    /// `J x N` p-values.
    pub pvalues: DMatrix<f64>,
    /// Per age: number of countries with `p >= alpha`.
    pub counts: Vec<usize>,
    pub alpha: f64,
}

impl WhiteNoiseReport {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Builds the white-noise count table for one model's residuals. Columns
/// with zero variance count as white noise.
pub fn white_noise_counts(
    residuals: &[DMatrix<f64>],
    cfg: &LjungBoxConfig,
    model_label: &str,
) -> Result<WhiteNoiseReport> {
    if let Some(first) = residuals.first() {
        if let Some(bad) = residuals.iter().find(|r| r.shape() != first.shape()) {
            return Err(Error::ShapeMismatch {
                expected: first.shape(),
                found: bad.shape(),
            });
        }
    }
    let pvalues = residual_p_values(residuals, cfg, 0.0)?;
    let counts = (0..pvalues.ncols())
        .map(|x| pvalues.column(x).iter().filter(|&&p| p >= cfg.alpha).count())
        .collect();
    Ok(WhiteNoiseReport {
        model_label: model_label.to_string(),
        pvalues,
        counts,
        alpha: cfg.alpha,
    })
}
