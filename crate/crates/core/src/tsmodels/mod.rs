//! Forecasting of the period indices `κ_t`: Fourier harmonics at the annual
//! and biannual frequencies plus an ARIMA disturbance.

pub mod arima;
pub mod harmonics;
pub mod optim;

pub use arima::{fit_arima, ArimaFit, ArimaGrid, ArimaOrder};
pub use harmonics::{fit_harmonics, HarmonicFit};

use crate::data::YearFraction;
use crate::error::{Error, Result};

/// Harmonic regression plus ARIMA model of one index series.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KappaModel {
    pub harmonics: HarmonicFit,
    pub arima: ArimaFit,
    /// Week fraction of the last in-sample observation.
    pub last_frac: YearFraction,
    /// Last in-sample value of the harmonic residual.
    pub last_residual: f64,
}

impl KappaModel {
    /// Point forecasts `κ̂_{T+1} .. κ̂_{T+h}`.
    pub fn forecast(&self, h: usize) -> Vec<f64> {
        forecast_kappa(h, &self.harmonics, &self.arima, self.last_frac)
    }

    /// Harmonic part continued forward with the disturbance held at its
    /// last in-sample value; exactly periodic with period 52.
    pub fn forecast_frozen(&self, h: usize) -> Vec<f64> {
        (1..=h)
            .map(|u| self.harmonics.evaluate(self.last_frac.advance(u)) + self.last_residual)
            .collect()
    }
}

/// Fits the harmonic regression and then the ARIMA disturbance.
pub fn fit_kappa_model(
    kappa: &[f64],
    fracs: &[YearFraction],
    grid: &ArimaGrid,
) -> Result<KappaModel> {
    let (harmonics, residual) = fit_harmonics(kappa, fracs)?;
    let arima = fit_arima(&residual, grid)?;
    Ok(KappaModel {
        harmonics,
        arima,
        last_frac: *fracs.last().ok_or(Error::SeriesTooShort { len: 0, needed: 1 })?,
        last_residual: *residual.last().expect("non-empty residual"),
    })
}

/// `κ̂_{T+u} = Σ β_i s_i(w(T+u)) + ARIMA forecast at horizon u`.
pub fn forecast_kappa(
    h: usize,
    harm: &HarmonicFit,
    arima: &ArimaFit,
    last_week_frac: YearFraction,
) -> Vec<f64> {
    arima
        .forecast(h)
        .into_iter()
        .enumerate()
        .map(|(i, a)| harm.evaluate(last_week_frac.advance(i + 1)) + a)
        .collect()
}
