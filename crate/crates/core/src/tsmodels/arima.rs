//! ARIMA(p, d, q) with a constant, estimated by conditional sum of squares
//! and selected by AICc over a small order grid.
//!
//! The differenced series `w` follows
//! `w_t - μ = Σ φ_i (w_{t-i} - μ) + e_t + Σ θ_j e_{t-j}`, where `μ` is the
//! mean (`d = 0`) or the drift (`d = 1`). Innovations before the first
//! modelled observation are set to zero.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::optim::{minimize, BfgsOptions};
use crate::error::{Error, Result};

/// Minimum series length accepted by [`fit_arima`].
pub const MIN_ARIMA_LEN: usize = 20;

/// Largest admissible modulus of an AR or MA characteristic root, as an
/// inverse root.
pub const ROOT_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaOrder {
    pub fn new(p: usize, d: usize, q: usize) -> Self {
        Self { p, d, q }
    }

    /// Number of estimated parameters including the constant and `σ²`.
    pub fn n_params(self) -> usize {
        self.p + self.q + 2
    }
}

impl std::fmt::Display for ArimaOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.p, self.d, self.q)
    }
}

/// Candidate orders: `p ≤ max_p`, `d ≤ max_d`, `q ≤ max_q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArimaGrid {
    pub max_p: usize,
    pub max_d: usize,
    pub max_q: usize,
}

impl Default for ArimaGrid {
    fn default() -> Self {
        Self {
            max_p: 3,
            max_d: 1,
            max_q: 3,
        }
    }
}

impl ArimaGrid {
    pub fn validate(&self) -> Result<()> {
        if self.max_d > 1 {
            return Err(Error::Config("differencing order above 1 is not supported".into()));
        }
        if self.max_p > 3 || self.max_q > 3 {
            return Err(Error::Config("AR and MA orders are limited to 3".into()));
        }
        Ok(())
    }

    /// Orders in lexicographic `(p, d, q)` order.
    pub fn orders(&self) -> Vec<ArimaOrder> {
        let mut out = Vec::new();
        for p in 0..=self.max_p {
            for d in 0..=self.max_d {
                for q in 0..=self.max_q {
                    out.push(ArimaOrder::new(p, d, q));
                }
            }
        }
        out
    }
}

/// Fitted model together with the state needed for point forecasts.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArimaFit {
    pub order: ArimaOrder,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    /// Mean of the (differenced) series; the drift when `d = 1`.
    pub intercept: f64,
    pub sigma2: f64,
    /// Conditional sum of squares at the estimate.
    pub css: f64,
    /// Conditional sum of squares at the Hannan–Rissanen start.
    pub start_css: f64,
    pub aicc: f64,
    /// Number of innovations in the CSS.
    pub n_used: usize,
    /// Last observed level of the undifferenced series.
    pub last_level: f64,
    /// Last `p` values of the differenced series, oldest first.
    pub tail_w: Vec<f64>,
    /// Last `q` in-sample innovations, oldest first.
    pub tail_e: Vec<f64>,
}

impl ArimaFit {
    /// Point forecasts for horizons `1..=h` of the undifferenced series.
    pub fn forecast(&self, h: usize) -> Vec<f64> {
        let (p, q) = (self.order.p, self.order.q);
        let mu = self.intercept;
        let mut w = self.tail_w.clone();
        let mut e = self.tail_e.clone();
        let mut out = Vec::with_capacity(h);
        let mut level = self.last_level;
        for _ in 0..h {
            let mut next = mu;
            for i in 0..p {
                next += self.ar[i] * (w[w.len() - 1 - i] - mu);
            }
            for j in 0..q {
                next += self.ma[j] * e[e.len() - 1 - j];
            }
            w.push(next);
            e.push(0.0);
            if self.order.d == 1 {
                level += next;
                out.push(level);
            } else {
                out.push(next);
            }
        }
        out
    }
}

/// Step-down (Schur–Cohn) check that `1 - Σ c_i z^i` has every root
/// strictly outside the circle of radius `1 / (1 - ROOT_MARGIN)`.
pub fn roots_outside_unit_circle(coefs: &[f64]) -> bool {
    if coefs.iter().any(|c| !c.is_finite()) {
        return false;
    }
    let shrink = 1.0 / (1.0 - ROOT_MARGIN);
    let mut a: Vec<f64> = coefs
        .iter()
        .enumerate()
        .map(|(i, c)| c * shrink.powi(i as i32 + 1))
        .collect();
    while let Some(&r) = a.last() {
        if r.abs() >= 1.0 {
            return false;
        }
        let k = a.len();
        let denom = 1.0 - r * r;
        a = (0..k - 1).map(|i| (a[i] + r * a[k - 2 - i]) / denom).collect();
    }
    true
}

fn admissible(ar: &[f64], ma: &[f64]) -> bool {
    let neg_ma: Vec<f64> = ma.iter().map(|t| -t).collect();
    roots_outside_unit_circle(ar) && roots_outside_unit_circle(&neg_ma)
}

/// Innovations and, optionally, their gradient with respect to
/// `[μ, φ_1..φ_p, θ_1..θ_q]`. Returns `(e, de)` with `de` stored row-major
/// per time step.
fn innovations(
    w: &[f64],
    p: usize,
    q: usize,
    start: usize,
    params: &[f64],
    with_grad: bool,
) -> (Vec<f64>, Vec<f64>) {
    let n = w.len();
    let k = 1 + p + q;
    let mu = params[0];
    let phi = &params[1..1 + p];
    let theta = &params[1 + p..];
    let phi_sum: f64 = phi.iter().sum();
    let mut e = vec![0.0; n];
    let mut de = if with_grad { vec![0.0; n * k] } else { Vec::new() };
    for t in start..n {
        let mut et = w[t] - mu;
        for i in 0..p {
            et -= phi[i] * (w[t - 1 - i] - mu);
        }
        for j in 0..q {
            if t > j {
                et -= theta[j] * e[t - 1 - j];
            }
        }
        e[t] = et;
        if with_grad {
            let (head, tail) = de.split_at_mut(t * k);
            let row = &mut tail[..k];
            row[0] = -1.0 + phi_sum;
            for i in 0..p {
                row[1 + i] = -(w[t - 1 - i] - mu);
            }
            for m in 0..q {
                row[1 + p + m] = if t > m { -e[t - 1 - m] } else { 0.0 };
            }
            for j in 0..q {
                if t > j {
                    let prev = &head[(t - 1 - j) * k..(t - j) * k];
                    for c in 0..k {
                        row[c] -= theta[j] * prev[c];
                    }
                }
            }
        }
    }
    (e, de)
}

fn css(w: &[f64], p: usize, q: usize, start: usize, params: &[f64]) -> f64 {
    if !admissible(&params[1..1 + p], &params[1 + p..]) {
        return f64::INFINITY;
    }
    let (e, _) = innovations(w, p, q, start, params, false);
    e[start..].iter().map(|v| v * v).sum()
}

fn css_grad(
    w: &[f64],
    p: usize,
    q: usize,
    start: usize,
    params: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let k = params.len();
    if !admissible(&params.as_slice()[1..1 + p], &params.as_slice()[1 + p..]) {
        return (f64::INFINITY, DVector::zeros(k));
    }
    let (e, de) = innovations(w, p, q, start, params.as_slice(), true);
    let mut f = 0.0;
    let mut g = DVector::zeros(k);
    for t in start..w.len() {
        f += e[t] * e[t];
        for c in 0..k {
            g[c] += 2.0 * e[t] * de[t * k + c];
        }
    }
    (f, g)
}

/// Least squares `argmin ‖X b - y‖`, or `None` if the design is singular.
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    if x.ncols() == 0 {
        return Some(DVector::zeros(0));
    }
    if x.nrows() <= x.ncols() {
        return None;
    }
    x.clone().svd(true, true).solve(y, 1e-12).ok()
}

/// Hannan–Rissanen starting values for a standardised, zero-mean series.
fn hannan_rissanen(z: &[f64], p: usize, q: usize) -> (Vec<f64>, Vec<f64>) {
    let n = z.len();
    let m = if q > 0 { (p + q + 2).max(10).min(n / 4).max(1) } else { 0 };
    let innov: Vec<f64> = if q > 0 {
        let rows = n - m;
        let x = DMatrix::from_fn(rows, m, |r, c| z[m + r - 1 - c]);
        let y = DVector::from_fn(rows, |r, _| z[m + r]);
        match least_squares(&x, &y) {
            Some(a) => {
                let mut e = vec![0.0; n];
                for t in m..n {
                    e[t] = z[t] - (0..m).map(|c| a[c] * z[t - 1 - c]).sum::<f64>();
                }
                e
            }
            None => vec![0.0; n],
        }
    } else {
        Vec::new()
    };
    let start = (m + q).max(p);
    if start >= n {
        return (vec![0.0; p], vec![0.0; q]);
    }
    let rows = n - start;
    let x = DMatrix::from_fn(rows, p + q, |r, c| {
        let t = start + r;
        if c < p {
            z[t - 1 - c]
        } else {
            innov[t - 1 - (c - p)]
        }
    });
    let y = DVector::from_fn(rows, |r, _| z[start + r]);
    let coef = least_squares(&x, &y).unwrap_or_else(|| DVector::zeros(p + q));
    let mut ar: Vec<f64> = coef.as_slice()[..p].to_vec();
    let mut ma: Vec<f64> = coef.as_slice()[p..].to_vec();
    for _ in 0..30 {
        if roots_outside_unit_circle(&ar) {
            break;
        }
        ar.iter_mut().for_each(|c| *c *= 0.5);
    }
    if !roots_outside_unit_circle(&ar) {
        ar.fill(0.0);
    }
    for _ in 0..30 {
        if admissible(&[], &ma) {
            break;
        }
        ma.iter_mut().for_each(|c| *c *= 0.5);
    }
    if !admissible(&[], &ma) {
        ma.fill(0.0);
    }
    (ar, ma)
}

fn difference(series: &[f64], d: usize) -> Vec<f64> {
    let mut w = series.to_vec();
    for _ in 0..d {
        w = w.windows(2).map(|p| p[1] - p[0]).collect();
    }
    w
}

fn aicc(css: f64, n: usize, k: usize) -> f64 {
    let nf = n as f64;
    let kf = k as f64;
    nf * (css / nf).ln() + 2.0 * kf * nf / (nf - kf - 1.0)
}

/// Fits one order, scoring innovations from the first point at which the
/// order has a full lag history. Returns `None` when the order cannot be
/// estimated.
pub fn fit_arima_order(series: &[f64], order: ArimaOrder) -> Option<ArimaFit> {
    fit_order_from(series, order, order.p + order.d)
}

/// Fits one order with the CSS summed over original-series indices
/// `skip..`, so that candidates of different orders score the same points.
fn fit_order_from(series: &[f64], order: ArimaOrder, skip: usize) -> Option<ArimaFit> {
    let ArimaOrder { p, d, q } = order;
    if skip < p + d {
        return None;
    }
    let w = difference(series, d);
    let n = w.len();
    let start = skip - d;
    let n_used = n.checked_sub(start)?;
    let k = order.n_params();
    if n_used < k + 2 {
        return None;
    }
    let centre = w.iter().sum::<f64>() / n as f64;
    let spread = (w.iter().map(|v| (v - centre).powi(2)).sum::<f64>() / n as f64).sqrt();
    let scale = if spread > 0.0 && spread.is_finite() { spread } else { 1.0 };
    let z: Vec<f64> = w.iter().map(|v| (v - centre) / scale).collect();

    let (ar0, ma0) = hannan_rissanen(&z, p, q);
    let mut x0 = DVector::zeros(1 + p + q);
    x0.as_mut_slice()[1..1 + p].copy_from_slice(&ar0);
    x0.as_mut_slice()[1 + p..].copy_from_slice(&ma0);
    let start_z = css(&z, p, q, start, x0.as_slice());

    let norm = n_used as f64;
    let r = minimize(
        |x| {
            let (f, g) = css_grad(&z, p, q, start, x);
            (f / norm, g / norm)
        },
        x0.clone(),
        &BfgsOptions::default(),
    );
    let res_f = r.f * norm;
    if !res_f.is_finite() {
        return None;
    }
    let (params, css_z) = if res_f <= start_z { (r.x, res_f) } else { (x0, start_z) };

    let mu = centre + scale * params[0];
    let ar = params.as_slice()[1..1 + p].to_vec();
    let ma = params.as_slice()[1 + p..].to_vec();
    let mut full = vec![mu];
    full.extend_from_slice(&ar);
    full.extend_from_slice(&ma);
    let (e, _) = innovations(&w, p, q, start, &full, false);
    let css_w = css_z * scale * scale;
    let tail_w = w[n - p..].to_vec();
    let tail_e: Vec<f64> = (0..q).map(|j| e[n - q + j]).collect();

    Some(ArimaFit {
        order,
        ar,
        ma,
        intercept: mu,
        sigma2: css_w / n_used as f64,
        css: css_w,
        start_css: start_z * scale * scale,
        aicc: aicc(css_w, n_used, k),
        n_used,
        last_level: *series.last().expect("non-empty series"),
        tail_w,
        tail_e,
    })
}

/// Random walk with drift, the fallback model.
fn random_walk_with_drift(series: &[f64]) -> ArimaFit {
    let w = difference(series, 1);
    let n = w.len();
    let mu = w.iter().sum::<f64>() / n as f64;
    let css: f64 = w.iter().map(|v| (v - mu).powi(2)).sum();
    let order = ArimaOrder::new(0, 1, 0);
    ArimaFit {
        order,
        ar: Vec::new(),
        ma: Vec::new(),
        intercept: mu,
        sigma2: css / n as f64,
        css,
        start_css: css,
        aicc: aicc(css, n, order.n_params()),
        n_used: n,
        last_level: *series.last().expect("non-empty series"),
        tail_w: Vec::new(),
        tail_e: Vec::new(),
    }
}

/// Selects and fits the AICc-best order over `grid`; ties go to the
/// lexicographically smallest `(p, d, q)`.
pub fn fit_arima(series: &[f64], grid: &ArimaGrid) -> Result<ArimaFit> {
    grid.validate()?;
    if series.len() < MIN_ARIMA_LEN {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            needed: MIN_ARIMA_LEN,
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in series".into()));
    }
    let skip = grid.max_p + grid.max_d;
    let candidates: Vec<Option<ArimaFit>> = grid
        .orders()
        .into_par_iter()
        .map(|o| fit_order_from(series, o, skip))
        .collect();
    let mut best: Option<ArimaFit> = None;
    for fit in candidates.into_iter().flatten() {
        if fit.aicc.is_nan() || fit.aicc == f64::INFINITY {
            continue;
        }
        if best.as_ref().is_none_or(|b| fit.aicc < b.aicc) {
            best = Some(fit);
        }
    }
    Ok(best.unwrap_or_else(|| random_walk_with_drift(series)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut y = vec![0.0; n + 100];
        for t in 1..y.len() {
            y[t] = phi * y[t - 1] + noise.sample(&mut rng);
        }
        y.split_off(100)
    }

    #[test]
    fn schur_cohn() {
        assert!(roots_outside_unit_circle(&[]));
        assert!(roots_outside_unit_circle(&[0.5]));
        assert!(!roots_outside_unit_circle(&[1.0]));
        assert!(!roots_outside_unit_circle(&[-1.2]));
        // 1 - 1.2z + 0.35z² = (1-0.5z)(1-0.7z)
        assert!(roots_outside_unit_circle(&[1.2, -0.35]));
        // 1 - 1.5z + 0.5z² has a unit root.
        assert!(!roots_outside_unit_circle(&[1.5, -0.5]));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let y = ar1(0.5, 120, 4);
        let params = DVector::from_vec(vec![0.1, 0.3, -0.2, 0.25]);
        let (_, g) = css_grad(&y, 2, 1, 2, &params);
        for c in 0..4 {
            let h = 1e-6;
            let mut up = params.clone();
            up[c] += h;
            let mut dn = params.clone();
            dn[c] -= h;
            let fd = (css(&y, 2, 1, 2, up.as_slice()) - css(&y, 2, 1, 2, dn.as_slice())) / (2.0 * h);
            assert!((fd - g[c]).abs() < 1e-4 * (1.0 + g[c].abs()), "{c}: {fd} vs {}", g[c]);
        }
    }

    #[test]
    fn recovers_ar1() {
        let y = ar1(0.7, 2000, 1);
        let fit = fit_arima(&y, &ArimaGrid::default()).unwrap();
        assert!(fit.order.p >= 1);
        assert!((0.65..=0.75).contains(&fit.ar[0]), "{:?}", fit);
        assert!(fit.css <= fit.start_css);
    }

    #[test]
    fn white_noise_selects_mean_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = (0..300).map(|_| noise.sample(&mut rng)).collect();
        let fit = fit_arima(&y, &ArimaGrid::default()).unwrap();
        assert_eq!(fit.order, ArimaOrder::new(0, 0, 0));
        assert!(fit.intercept.abs() <= 3.0 / (300f64).sqrt());
    }

    #[test]
    fn ramp_selects_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let y: Vec<f64> = (0..208).map(|t| 0.1 * t as f64 + noise.sample(&mut rng)).collect();
        let fit = fit_arima(&y, &ArimaGrid::default()).unwrap();
        assert_eq!(fit.order.d, 1);
        assert!((fit.intercept - 0.1).abs() <= 0.02, "{:?}", fit);
    }

    #[test]
    fn random_walk_forecast() {
        let y: Vec<f64> = (0..40).map(|t| 2.0 + 0.5 * t as f64).collect();
        let fit = random_walk_with_drift(&y);
        let f = fit.forecast(5);
        for (u, v) in f.iter().enumerate() {
            assert!((v - (y[39] + 0.5 * (u + 1) as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn ar1_forecast_decays() {
        let fit = ArimaFit {
            order: ArimaOrder::new(1, 0, 0),
            ar: vec![0.7],
            ma: vec![],
            intercept: 1.0,
            sigma2: 1.0,
            css: 0.0,
            start_css: 0.0,
            aicc: 0.0,
            n_used: 10,
            last_level: 3.0,
            tail_w: vec![3.0],
            tail_e: vec![],
        };
        for (u, v) in fit.forecast(6).iter().enumerate() {
            assert!((v - (1.0 + 0.7f64.powi(u as i32 + 1) * 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_series() {
        let fit = fit_arima(&[0.0; 40], &ArimaGrid::default()).unwrap();
        assert!(fit.forecast(3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            fit_arima(&[1.0; 10], &ArimaGrid::default()),
            Err(Error::SeriesTooShort { .. })
        ));
    }
}
