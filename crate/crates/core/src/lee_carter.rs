//! Single-population Lee–Carter fit by singular value decomposition.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sum of the leading right singular vector below which the `Σb = 1`
/// normalisation is considered undefined.
pub const LOADING_SUM_TOL: f64 = 1e-12;

/// Fitted `log m_t(x) = a_x + b_x κ_t + ε_{t,x}` with `Σb = 1`, `Σκ = 0`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LeeCarterFit {
    /// Age intercepts (column means of the input).
    #[serde(with = "crate::serde_na::vector")]
    pub a: DVector<f64>,
    /// Age loadings, summing to one.
    #[serde(with = "crate::serde_na::vector")]
    pub b: DVector<f64>,
    /// Period index, summing to zero.
    #[serde(with = "crate::serde_na::vector")]
    pub kappa: DVector<f64>,
    /// Share of the demeaned sum of squares captured by the rank-one term.
    pub singular_value_share: f64,
    /// `Y - (1 aᵀ + κ bᵀ)`.
    #[serde(skip)]
    pub residuals: DMatrix<f64>,
}

impl LeeCarterFit {
    pub fn n_ages(&self) -> usize {
        self.a.len()
    }

    pub fn n_periods(&self) -> usize {
        self.kappa.len()
    }

    /// `a_x + b_x κ_t` for every `t, x`.
    pub fn fitted(&self) -> DMatrix<f64> {
        self.reconstruct(&self.kappa)
    }

    /// `a_x + b_x k_t` for an arbitrary index path `k`.
    pub fn reconstruct(&self, kappa: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(kappa.len(), self.a.len(), |t, x| self.a[x] + self.b[x] * kappa[t])
    }
}

/// Column means of a matrix.
pub(crate) fn column_means(y: &DMatrix<f64>) -> DVector<f64> {
    let t = y.nrows() as f64;
    DVector::from_iterator(y.ncols(), y.column_iter().map(|c| c.sum() / t))
}

/// Subtracts `means[x]` from column `x`.
pub(crate) fn demean(y: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(y.nrows(), y.ncols(), |t, x| y[(t, x)] - means[x])
}

/// Leading singular triples of `m`, ordered by decreasing singular value.
pub(crate) fn leading_triples(
    m: &DMatrix<f64>,
    rank: usize,
) -> Vec<(f64, DVector<f64>, DVector<f64>)> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]).then(i.cmp(&j)));
    order
        .into_iter()
        .take(rank)
        .map(|i| {
            (
                svd.singular_values[i],
                u.column(i).into_owned(),
                v_t.row(i).transpose(),
            )
        })
        .collect()
}

/// Fits the Lee–Carter model to a `T x N` log-rate matrix.
///
/// `a` is the column mean; with `(d, u, v)` the leading singular triple of
/// the demeaned matrix, `κ = d u Σv` and `b = v / Σv`. The signs of `u` and
/// `v` are chosen so that `Σv > 0`. A demeaned matrix that is exactly zero
/// has no leading direction; it gets `κ ≡ 0` and uniform loadings.
pub fn fit_lc(y: &DMatrix<f64>) -> Result<LeeCarterFit> {
    let (nt, nx) = y.shape();
    if nt < 2 || nx < 2 {
        return Err(Error::InvalidInput(format!(
            "Lee–Carter needs at least a 2 x 2 matrix, got {nt} x {nx}"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite entry in log-rate matrix".into()));
    }
    let a = column_means(y);
    let centred = demean(y, &a);
    let total_ss = centred.norm_squared();

    let (b, kappa, share) = if total_ss == 0.0 {
        (
            DVector::from_element(nx, 1.0 / nx as f64),
            DVector::zeros(nt),
            0.0,
        )
    } else {
        let (d, mut u, mut v) = leading_triples(&centred, 1).remove(0);
        let mut sum_v = v.sum();
        if sum_v.abs() < LOADING_SUM_TOL {
            return Err(Error::DegenerateLoading { sum: sum_v });
        }
        if sum_v < 0.0 {
            u.neg_mut();
            v.neg_mut();
            sum_v = -sum_v;
        }
        let kappa = u * (d * sum_v);
        let b = v / sum_v;
        (b, kappa, (d * d / total_ss).min(1.0))
    };

    let mut fit = LeeCarterFit {
        a,
        b,
        kappa,
        singular_value_share: share,
        residuals: DMatrix::zeros(0, 0),
    };
    fit.residuals = y - fit.fitted();
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_matrix() {
        let y = DMatrix::from_element(30, 4, -3.5);
        let fit = fit_lc(&y).unwrap();
        assert!(fit.a.iter().all(|&v| v == -3.5));
        assert!(fit.kappa.iter().all(|&v| v == 0.0));
        assert!(fit.residuals.iter().all(|&v| v == 0.0));
        assert!((fit.b.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rank_one_recovery() {
        let nt = 52;
        let a = DVector::from_vec(vec![-6.0, -4.5, -3.2, -2.0]);
        let b = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let mut kappa = DVector::from_fn(nt, |t, _| (t as f64 * 0.37).sin() + 0.01 * t as f64);
        let m = kappa.mean();
        kappa.add_scalar_mut(-m);
        let y = DMatrix::from_fn(nt, 4, |t, x| a[x] + b[x] * kappa[t]);
        let fit = fit_lc(&y).unwrap();
        assert!((fit.a - &a).amax() < 1e-10);
        assert!((fit.b - &b).amax() < 1e-10);
        assert!((fit.kappa - &kappa).amax() < 1e-10);
        assert!(fit.residuals.amax() < 1e-10);
    }

    #[test]
    fn negative_loading_sum_flips_sign() {
        // Loadings summing to -1 in the generator; the fit reports Σb = +1
        // with κ negated, leaving b κᵀ unchanged.
        let nt = 20;
        let b = [-0.2, -0.3, -0.5];
        let y = DMatrix::from_fn(nt, 3, |t, x| b[x] * ((t as f64) - 9.5));
        let fit = fit_lc(&y).unwrap();
        assert!((fit.b.sum() - 1.0).abs() < 1e-12);
        let prod = &fit.kappa * fit.b.transpose();
        let want = DMatrix::from_fn(nt, 3, |t, x| b[x] * ((t as f64) - 9.5));
        assert!((prod - want).amax() < 1e-12);
    }

    #[test]
    fn degenerate_loading() {
        // Demeaned matrix is rank one with a contrast loading (Σv = 0).
        let y = DMatrix::from_fn(10, 2, |t, x| if x == 0 { t as f64 } else { -(t as f64) });
        assert!(matches!(fit_lc(&y), Err(Error::DegenerateLoading { .. })));
    }

    #[test]
    fn too_small() {
        assert!(fit_lc(&DMatrix::zeros(1, 4)).is_err());
        assert!(fit_lc(&DMatrix::zeros(5, 1)).is_err());
    }
}
