//! Gradient boosting with Li–Lee weak learners.
//!
//! Stage 1 fits Li–Lee to the log panels; every later stage fits Li–Lee to
//! the current residuals. Each stage's contribution is scaled by the
//! learning rate `γ_g` that minimises `Σ_j ‖E^j_{g-1} - γ Ŷ^j_g‖²_F`, which
//! has the closed form `⟨E, Ŷ⟩ / ‖Ŷ‖²`. Boosting stops once every residual
//! column passes the Ljung–Box test or after `max_iterations` stages.

use nalgebra::DMatrix;

use crate::diagnostics::{residual_p_values, LjungBoxConfig};
use crate::error::{Error, Result};
use crate::multipop::{fit_li_lee, LiLeeFit};

/// Denominator below which the stage predictor counts as zero.
pub const ZERO_PREDICTOR_TOL: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum StopReason {
    AllWhiteNoise,
    MaxIterations,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::AllWhiteNoise => "all_white_noise",
            StopReason::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GbllConfig {
    /// Maximum number of boosting stages `G`.
    pub max_iterations: usize,
    pub ljung_box: LjungBoxConfig,
    /// Optional bound on `|γ_g|`.
    pub gamma_cap: Option<f64>,
    /// Residual columns whose standard deviation is at most this multiple
    /// of the input RMS count as exactly fitted (white noise).
    pub zero_variance_tol: f64,
}

impl Default for GbllConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            ljung_box: LjungBoxConfig::default(),
            gamma_cap: None,
            zero_variance_tol: 1e-10,
        }
    }
}

impl GbllConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max iterations must be at least 1".into()));
        }
        if let Some(c) = self.gamma_cap {
            if !(c > 0.0) {
                return Err(Error::Config("gamma cap must be positive".into()));
            }
        }
        self.ljung_box.validate()
    }
}

/// Fitted boosting ensemble.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GbllEnsemble {
    pub stages: Vec<LiLeeFit>,
    pub gammas: Vec<f64>,
    pub stop_reason: StopReason,
    /// `Σ_j ‖E^j_g‖²_F` after each stage.
    pub per_stage_loss: Vec<f64>,
    pub max_iterations: usize,
    /// Final residuals `E^j_l`; not persisted in model files.
    #[serde(skip)]
    pub residuals: Vec<DMatrix<f64>>,
    /// Ljung–Box p-values of the final residuals, `J x N`.
    #[serde(with = "crate::serde_na::matrix")]
    pub final_pvalues: DMatrix<f64>,
}

impl GbllEnsemble {
    pub fn iterations_used(&self) -> usize {
        self.stages.len()
    }

    pub fn n_countries(&self) -> usize {
        self.residuals.len()
    }
}

fn frobenius_inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn total_energy(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|m| m.norm_squared()).sum()
}

/// Closed-form minimiser of `Σ_j ‖E^j - γ Ŷ^j‖²_F`.
pub fn line_search_gamma(residuals: &[DMatrix<f64>], fitted: &[DMatrix<f64>]) -> Result<f64> {
    if residuals.len() != fitted.len() {
        return Err(Error::InvalidInput(format!(
            "{} residual panels vs {} fitted panels",
            residuals.len(),
            fitted.len()
        )));
    }
    for (e, y) in residuals.iter().zip(fitted) {
        if e.shape() != y.shape() {
            return Err(Error::ShapeMismatch {
                expected: e.shape(),
                found: y.shape(),
            });
        }
    }
    let denom = total_energy(fitted);
    if denom <= ZERO_PREDICTOR_TOL {
        return Err(Error::ZeroPredictor);
    }
    Ok(frobenius_inner(residuals, fitted) / denom)
}

/// Runs the boosting loop on per-country log panels.
pub fn fit_gbll(panels: &[DMatrix<f64>], cfg: &GbllConfig) -> Result<GbllEnsemble> {
    cfg.validate()?;
    let n_cells: usize = panels.iter().map(|p| p.len()).sum();
    let rms = (total_energy(panels) / n_cells.max(1) as f64).sqrt();
    let zero_tol = cfg.zero_variance_tol * rms.max(f64::MIN_POSITIVE);

    let mut stages = Vec::new();
    let mut gammas = Vec::new();
    let mut losses = Vec::new();
    let mut residuals: Vec<DMatrix<f64>> = panels.to_vec();

    loop {
        let stage = stages.len() + 1;
        let fit = fit_li_lee(&residuals).map_err(|e| e.at_stage(stage))?;
        let fitted = fit.fitted();
        let mut gamma = line_search_gamma(&residuals, &fitted).map_err(|e| e.at_stage(stage))?;
        if let Some(cap) = cfg.gamma_cap {
            gamma = gamma.clamp(-cap, cap);
        }
        for (e, y) in residuals.iter_mut().zip(&fitted) {
            *e -= y * gamma;
        }
        let loss = total_energy(&residuals);
        log::info!("stage {stage}: gamma = {gamma:.6}, loss = {loss:.6e}");
        stages.push(fit);
        gammas.push(gamma);
        losses.push(loss);

        let pvalues = residual_p_values(&residuals, &cfg.ljung_box, zero_tol)
            .map_err(|e| e.at_stage(stage))?;
        let min_p = pvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let white = min_p >= cfg.ljung_box.alpha;
        if white || stage >= cfg.max_iterations {
            let stop_reason = if white {
                StopReason::AllWhiteNoise
            } else {
                StopReason::MaxIterations
            };
            log::info!("stopped after {stage} stage(s): {}", stop_reason.as_str());
            return Ok(GbllEnsemble {
                stages,
                gammas,
                stop_reason,
                per_stage_loss: losses,
                max_iterations: cfg.max_iterations,
                residuals,
                final_pvalues: pvalues,
            });
        }
    }
}

/// `Σ_g γ_g Ŷ^j_g` for every country.
pub fn ensemble_fitted(ens: &GbllEnsemble) -> Vec<DMatrix<f64>> {
    let mut out: Vec<DMatrix<f64>> = Vec::new();
    for (fit, &gamma) in ens.stages.iter().zip(&ens.gammas) {
        let fitted = fit.fitted();
        if out.is_empty() {
            out = fitted.into_iter().map(|y| y * gamma).collect();
        } else {
            for (acc, y) in out.iter_mut().zip(fitted) {
                *acc += y * gamma;
            }
        }
    }
    out
}
