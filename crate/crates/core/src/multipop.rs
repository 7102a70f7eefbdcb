//! Multi-population models: Li–Lee by the product-ratio method and a
//! discrete principal-component variant of the coherent product-ratio model
//! (HBY) with several common and country-specific components.
//!
//! All inputs are log-scale `T x N` matrices, one per country. In log space
//! the product term (geometric mean across countries) is the arithmetic mean
//! of the panels and each ratio term is the panel minus that mean.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lee_carter::{column_means, demean, fit_lc, leading_triples, LeeCarterFit};

/// Li–Lee fit: a common Lee–Carter fit on the product matrix and one
/// Lee–Carter fit per country on its ratio matrix.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LiLeeFit {
    pub product: LeeCarterFit,
    pub ratios: Vec<LeeCarterFit>,
    /// `A^j = a^p + a^j` per country.
    #[serde(with = "crate::serde_na::vectors")]
    pub intercepts: Vec<DVector<f64>>,
    /// Input minus fitted values, per country.
    #[serde(skip)]
    pub residuals: Vec<DMatrix<f64>>,
}

impl LiLeeFit {
    pub fn n_countries(&self) -> usize {
        self.ratios.len()
    }

    /// `A^j_x + b^p_x κ^p_t + b^j_x κ^j_t` for country `j`.
    pub fn fitted_country(&self, j: usize) -> DMatrix<f64> {
        self.reconstruct(j, &self.product.kappa, &self.ratios[j].kappa)
    }

    pub fn fitted(&self) -> Vec<DMatrix<f64>> {
        (0..self.n_countries()).map(|j| self.fitted_country(j)).collect()
    }

    fn reconstruct(&self, j: usize, kp: &DVector<f64>, kj: &DVector<f64>) -> DMatrix<f64> {
        let (bp, bj, a) = (&self.product.b, &self.ratios[j].b, &self.intercepts[j]);
        DMatrix::from_fn(kp.len(), a.len(), |t, x| a[x] + bp[x] * kp[t] + bj[x] * kj[t])
    }
}

/// Forecast index paths for a [`LiLeeFit`].
#[derive(Debug, Clone, PartialEq)]
pub struct LiLeePaths {
    pub common: DVector<f64>,
    pub country: Vec<DVector<f64>>,
}

/// Forecast index paths for an [`HbyFit`]: one path per component.
#[derive(Debug, Clone, PartialEq)]
pub struct HbyPaths {
    pub common: Vec<DVector<f64>>,
    pub country: Vec<Vec<DVector<f64>>>,
}

/// One principal component: loading over ages (unit norm) and scores over
/// time.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Component {
    #[serde(with = "crate::serde_na::vector")]
    pub basis: DVector<f64>,
    #[serde(with = "crate::serde_na::vector")]
    pub scores: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HbyFit {
    /// Per-country mean log rate `μ_j(x)`.
    #[serde(with = "crate::serde_na::vectors")]
    pub mu: Vec<DVector<f64>>,
    /// Common components from the product matrix.
    pub common: Vec<Component>,
    /// Country components from each ratio matrix.
    pub country: Vec<Vec<Component>>,
    /// Order actually fitted, `(R, U)`.
    pub order: (usize, usize),
    /// Order requested before truncation to the number of ages.
    pub requested_order: (usize, usize),
    #[serde(skip)]
    pub residuals: Vec<DMatrix<f64>>,
}

impl HbyFit {
    pub fn n_countries(&self) -> usize {
        self.mu.len()
    }

    pub fn truncated(&self) -> bool {
        self.order != self.requested_order
    }

    pub fn fitted_country(&self, j: usize) -> DMatrix<f64> {
        let common: Vec<&DVector<f64>> = self.common.iter().map(|c| &c.scores).collect();
        let own: Vec<&DVector<f64>> = self.country[j].iter().map(|c| &c.scores).collect();
        self.reconstruct(j, &common, &own)
    }

    pub fn fitted(&self) -> Vec<DMatrix<f64>> {
        (0..self.n_countries()).map(|j| self.fitted_country(j)).collect()
    }

    fn reconstruct(&self, j: usize, common: &[&DVector<f64>], own: &[&DVector<f64>]) -> DMatrix<f64> {
        let h = common
            .first()
            .or(own.first())
            .map(|p| p.len())
            .unwrap_or(0);
        let mu = &self.mu[j];
        let mut out = DMatrix::from_fn(h, mu.len(), |_, x| mu[x]);
        for (c, path) in self.common.iter().zip(common) {
            out += *path * c.basis.transpose();
        }
        for (c, path) in self.country[j].iter().zip(own) {
            out += *path * c.basis.transpose();
        }
        out
    }
}

fn check_shapes(panels: &[DMatrix<f64>]) -> Result<(usize, usize)> {
    let first = panels
        .first()
        .ok_or_else(|| Error::InvalidInput("no country panels".into()))?;
    let shape = first.shape();
    for p in panels {
        if p.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: p.shape(),
            });
        }
    }
    Ok(shape)
}

/// Log product matrix: elementwise mean of the log panels.
pub fn log_product(panels: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (nt, nx) = panels[0].shape();
    let mut sum = DMatrix::zeros(nt, nx);
    for p in panels {
        sum += p;
    }
    sum / panels.len() as f64
}

/// Fits the Li–Lee model to per-country log panels by the product-ratio
/// method.
pub fn fit_li_lee(panels: &[DMatrix<f64>]) -> Result<LiLeeFit> {
    check_shapes(panels)?;
    let p = log_product(panels);
    let product = fit_lc(&p).map_err(|e| e.in_subfit("product"))?;
    let ratios: Vec<LeeCarterFit> = panels
        .par_iter()
        .enumerate()
        .map(|(j, y)| fit_lc(&(y - &p)).map_err(|e| e.in_subfit(format!("ratio {j}"))))
        .collect::<Result<_>>()?;
    let intercepts: Vec<DVector<f64>> = ratios.iter().map(|r| &product.a + &r.a).collect();
    let mut fit = LiLeeFit {
        product,
        ratios,
        intercepts,
        residuals: Vec::new(),
    };
    fit.residuals = panels
        .iter()
        .enumerate()
        .map(|(j, y)| y - fit.fitted_country(j))
        .collect();
    Ok(fit)
}

fn principal_components(m: &DMatrix<f64>, rank: usize) -> Vec<Component> {
    if rank == 0 {
        return Vec::new();
    }
    leading_triples(m, rank)
        .into_iter()
        .map(|(d, mut u, mut v)| {
            // Fix the sign so the largest-magnitude loading is positive.
            let imax = v.iamax();
            if v[imax] < 0.0 {
                u.neg_mut();
                v.neg_mut();
            }
            Component {
                basis: v,
                scores: u * d,
            }
        })
        .collect()
}

/// Fits the discrete HBY model with `order = (R, U)` common and
/// country-specific components. Orders above the number of ages are
/// truncated with a warning.
pub fn fit_hby(panels: &[DMatrix<f64>], order: (usize, usize)) -> Result<HbyFit> {
    let (nt, nx) = check_shapes(panels)?;
    let cap = nx.min(nt);
    let eff = (order.0.min(cap), order.1.min(cap));
    if eff != order {
        log::warn!(
            "HBY order ({}, {}) truncated to ({}, {}): order truncated to {}",
            order.0,
            order.1,
            eff.0,
            eff.1,
            cap
        );
    }
    let p = log_product(panels);
    let p_mean = column_means(&p);
    let common = principal_components(&demean(&p, &p_mean), eff.0);
    let per_country: Vec<(DVector<f64>, Vec<Component>)> = panels
        .par_iter()
        .map(|y| {
            let r = y - &p;
            let r_mean = column_means(&r);
            let comps = principal_components(&demean(&r, &r_mean), eff.1);
            (&p_mean + r_mean, comps)
        })
        .collect();
    let (mu, country): (Vec<_>, Vec<_>) = per_country.into_iter().unzip();
    let mut fit = HbyFit {
        mu,
        common,
        country,
        order: eff,
        requested_order: order,
        residuals: Vec::new(),
    };
    fit.residuals = panels
        .iter()
        .enumerate()
        .map(|(j, y)| y - fit.fitted_country(j))
        .collect();
    Ok(fit)
}

/// Log-rate forecasts from a Li–Lee fit and forecast index paths.
pub fn predict_li_lee(fit: &LiLeeFit, paths: &LiLeePaths) -> Result<Vec<DMatrix<f64>>> {
    if paths.country.len() != fit.n_countries() {
        return Err(Error::PathLengthMismatch(format!(
            "{} country paths for {} countries",
            paths.country.len(),
            fit.n_countries()
        )));
    }
    let h = paths.common.len();
    if let Some(bad) = paths.country.iter().find(|k| k.len() != h) {
        return Err(Error::PathLengthMismatch(format!(
            "country path of length {} with common path of length {h}",
            bad.len()
        )));
    }
    Ok((0..fit.n_countries())
        .map(|j| fit.reconstruct(j, &paths.common, &paths.country[j]))
        .collect())
}

/// Log-rate forecasts from an HBY fit and per-component paths.
pub fn predict_hby(fit: &HbyFit, paths: &HbyPaths) -> Result<Vec<DMatrix<f64>>> {
    if paths.common.len() != fit.common.len() || paths.country.len() != fit.n_countries() {
        return Err(Error::PathLengthMismatch("component count differs from the fit".into()));
    }
    let h = paths
        .common
        .first()
        .or_else(|| paths.country.iter().flatten().next())
        .map(|p| p.len())
        .unwrap_or(0);
    for (j, own) in paths.country.iter().enumerate() {
        if own.len() != fit.country[j].len() {
            return Err(Error::PathLengthMismatch(format!("country {j} component count")));
        }
    }
    if paths
        .common
        .iter()
        .chain(paths.country.iter().flatten())
        .any(|p| p.len() != h)
    {
        return Err(Error::PathLengthMismatch("paths of unequal length".into()));
    }
    Ok((0..fit.n_countries())
        .map(|j| {
            let common: Vec<&DVector<f64>> = paths.common.iter().collect();
            let own: Vec<&DVector<f64>> = paths.country[j].iter().collect();
            if h == 0 {
                DMatrix::zeros(0, fit.mu[j].len())
            } else if common.is_empty() && own.is_empty() {
                DMatrix::from_fn(h, fit.mu[j].len(), |_, x| fit.mu[j][x])
            } else {
                fit.reconstruct(j, &common, &own)
            }
        })
        .collect())
}
