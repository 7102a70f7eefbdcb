//! Annual and biannual Fourier regression of a weekly index.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::YearFraction;
use crate::error::{Error, Result};

/// Minimum series length for the harmonic regression.
pub const MIN_HARMONIC_LEN: usize = 12;

/// Two-sided significance level of the per-coefficient t-tests.
pub const HARMONIC_ALPHA: f64 = 0.05;

/// `[sin 2πw, cos 2πw, sin 4πw, cos 4πw]`.
pub fn harmonic_regressors(w: YearFraction) -> [f64; 4] {
    let a = 2.0 * PI * w.value();
    [a.sin(), a.cos(), (2.0 * a).sin(), (2.0 * a).cos()]
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HarmonicFit {
    /// Coefficients of the four harmonics; all zero when none is significant.
    pub betas: [f64; 4],
    /// OLS coefficients before the significance gate.
    pub ols_betas: [f64; 4],
    pub tstats: [f64; 4],
    pub pvalues: [f64; 4],
    /// OLS intercept (carried by the ARIMA mean downstream, not by `evaluate`).
    pub ols_intercept: f64,
    pub any_significant: bool,
}

impl HarmonicFit {
    /// A fit that contributes nothing.
    pub fn zero() -> Self {
        Self {
            betas: [0.0; 4],
            ols_betas: [0.0; 4],
            tstats: [0.0; 4],
            pvalues: [1.0; 4],
            ols_intercept: 0.0,
            any_significant: false,
        }
    }

    /// Harmonic part `Σ β_i s_i(w)` at one week fraction.
    pub fn evaluate(&self, w: YearFraction) -> f64 {
        let s = harmonic_regressors(w);
        self.betas.iter().zip(s).map(|(b, s)| b * s).sum()
    }
}

/// OLS of `κ` on `[1, sin 2πw, cos 2πw, sin 4πw, cos 4πw]` with per-coefficient
/// t-tests. Returns the fit and `κ - harmonic part`; the harmonic part is
/// dropped when no coefficient is significant at 5%.
pub fn fit_harmonics(kappa: &[f64], fracs: &[YearFraction]) -> Result<(HarmonicFit, Vec<f64>)> {
    let n = kappa.len();
    if fracs.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} week fractions for a series of length {n}",
            fracs.len()
        )));
    }
    if n < MIN_HARMONIC_LEN {
        return Err(Error::SeriesTooShort {
            len: n,
            needed: MIN_HARMONIC_LEN,
        });
    }
    let mut distinct: Vec<usize> = fracs.iter().map(|f| f.index()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 5 {
        return Err(Error::RankDeficient {
            distinct: distinct.len(),
        });
    }

    let x = DMatrix::from_fn(n, 5, |t, c| {
        if c == 0 {
            1.0
        } else {
            harmonic_regressors(fracs[t])[c - 1]
        }
    });
    let y = DVector::from_column_slice(kappa);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let chol = xtx.clone().cholesky().ok_or(Error::RankDeficient {
        distinct: distinct.len(),
    })?;
    let beta = chol.solve(&xty);
    let resid = &y - &x * &beta;
    let df = (n - 5) as f64;
    let sigma2 = resid.norm_squared() / df;
    let xtx_inv = chol.inverse();
    let tdist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");

    let mut fit = HarmonicFit::zero();
    fit.ols_intercept = beta[0];
    for i in 0..4 {
        let b = beta[i + 1];
        let se = (sigma2 * xtx_inv[(i + 1, i + 1)]).max(0.0).sqrt();
        let t = if se > 0.0 {
            b / se
        } else if b == 0.0 {
            0.0
        } else {
            b.signum() * f64::INFINITY
        };
        let p = if t.is_infinite() {
            0.0
        } else {
            (2.0 * tdist.sf(t.abs())).min(1.0)
        };
        fit.ols_betas[i] = b;
        fit.tstats[i] = t;
        fit.pvalues[i] = p;
    }
    fit.any_significant = fit.pvalues.iter().any(|&p| p < HARMONIC_ALPHA);
    if fit.any_significant {
        fit.betas = fit.ols_betas;
    }
    let residual = kappa
        .iter()
        .zip(fracs)
        .map(|(k, &w)| k - fit.evaluate(w))
        .collect();
    Ok((fit, residual))
}
