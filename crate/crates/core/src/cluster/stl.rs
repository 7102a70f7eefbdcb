//! Seasonal-trend decomposition by LOESS with a periodic seasonal
//! component.
//!
//! Each inner pass detrends the series, fits every cycle-subseries with a
//! locally linear LOESS of very wide span, removes the low-pass component,
//! projects the result onto a periodic profile (averaged per cycle position
//! and smoothed circularly) and re-estimates the trend by LOESS of the
//! deseasonalised series. Optional outer passes add bisquare robustness
//! weights.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StlConfig {
    pub period: usize,
    /// Trend LOESS span (odd).
    pub trend_window: usize,
    /// Low-pass LOESS span (odd).
    pub lowpass_window: usize,
    /// Circular smoothing span applied to the periodic seasonal profile
    /// (odd; 1 disables it).
    pub profile_window: usize,
    pub inner: usize,
    pub outer: usize,
    pub robust: bool,
}

impl Default for StlConfig {
    fn default() -> Self {
        Self {
            period: 52,
            trend_window: 105,
            lowpass_window: 53,
            profile_window: 7,
            inner: 2,
            outer: 0,
            robust: false,
        }
    }
}

impl StlConfig {
    /// Robust variant: one inner pass inside fifteen robustness passes.
    pub fn robust() -> Self {
        Self {
            inner: 1,
            outer: 15,
            robust: true,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.period < 2 {
            return Err(Error::Config("STL period must be at least 2".into()));
        }
        for (name, w) in [
            ("trend", self.trend_window),
            ("low-pass", self.lowpass_window),
            ("profile", self.profile_window),
        ] {
            if w == 0 || w % 2 == 0 {
                return Err(Error::Config(format!("STL {name} window must be odd, got {w}")));
            }
        }
        if self.inner == 0 {
            return Err(Error::Config("STL needs at least one inner pass".into()));
        }
        Ok(())
    }
}

/// `series = trend + seasonal + remainder`.
#[derive(Debug, Clone, PartialEq)]
pub struct StlDecomposition {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub remainder: Vec<f64>,
}

fn tricube(r: f64) -> f64 {
    let c = 1.0 - r * r * r;
    c * c * c
}

/// Local LOESS estimate at abscissa `xs` from `y` observed at `0..n`, using
/// the `q` nearest points, tricube weights scaled by the optional
/// robustness weights, and local degree 0 or 1.
fn loess_at(y: &[f64], rw: Option<&[f64]>, q: usize, degree: usize, xs: f64) -> Option<f64> {
    let n = y.len();
    let (lo, hi) = if q >= n {
        (0, n - 1)
    } else {
        let centre = xs.round().clamp(0.0, (n - 1) as f64) as usize;
        let mut lo = centre.saturating_sub(q / 2);
        if lo + q > n {
            lo = n - q;
        }
        let mut hi = lo + q - 1;
        // Slide the window towards `xs` while that keeps it nearer.
        while hi + 1 < n && (xs - lo as f64) > ((hi + 1) as f64 - xs) {
            lo += 1;
            hi += 1;
        }
        while lo > 0 && ((hi as f64) - xs) > (xs - (lo - 1) as f64) {
            lo -= 1;
            hi -= 1;
        }
        (lo, hi)
    };
    let mut h = (xs - lo as f64).max(hi as f64 - xs);
    if q > n {
        h += ((q - n) / 2) as f64;
    }
    let (h9, h1) = (0.999 * h, 0.001 * h);
    let mut w = vec![0.0; hi - lo + 1];
    let mut sum_w = 0.0;
    for (i, wi) in w.iter_mut().enumerate() {
        let r = ((lo + i) as f64 - xs).abs();
        let base = if r <= h1 {
            1.0
        } else if r <= h9 {
            tricube(r / h)
        } else {
            0.0
        };
        *wi = base * rw.map_or(1.0, |rw| rw[lo + i]);
        sum_w += *wi;
    }
    if sum_w <= 0.0 {
        return None;
    }
    w.iter_mut().for_each(|v| *v /= sum_w);
    if degree > 0 && h > 0.0 {
        let a: f64 = w.iter().enumerate().map(|(i, wi)| wi * (lo + i) as f64).sum();
        let c: f64 = w
            .iter()
            .enumerate()
            .map(|(i, wi)| wi * ((lo + i) as f64 - a).powi(2))
            .sum();
        let range = (n - 1) as f64;
        if c.sqrt() > 0.001 * range {
            let b = (xs - a) / c;
            for (i, wi) in w.iter_mut().enumerate() {
                *wi *= b * ((lo + i) as f64 - a) + 1.0;
            }
        }
    }
    Some(w.iter().zip(&y[lo..=hi]).map(|(wi, yi)| wi * yi).sum())
}

/// LOESS smooth evaluated at every index of `y`.
fn loess_smooth(y: &[f64], rw: Option<&[f64]>, q: usize, degree: usize) -> Vec<f64> {
    (0..y.len())
        .map(|t| loess_at(y, rw, q, degree, t as f64).unwrap_or(y[t]))
        .collect()
}

fn moving_average(y: &[f64], len: usize) -> Vec<f64> {
    let n = y.len();
    let mut out = Vec::with_capacity(n + 1 - len);
    let mut acc: f64 = y[..len].iter().sum();
    out.push(acc / len as f64);
    for t in len..n {
        acc += y[t] - y[t - len];
        out.push(acc / len as f64);
    }
    out
}

/// Smooths each cycle-subseries and extends it by one cycle at both ends;
/// the result has length `n + 2·period`.
fn cycle_subseries(d: &[f64], rw: &[f64], period: usize) -> Vec<f64> {
    let n = d.len();
    let mut out = vec![0.0; n + 2 * period];
    for c in 0..period {
        let sub: Vec<f64> = d.iter().skip(c).step_by(period).copied().collect();
        let sub_w: Vec<f64> = rw.iter().skip(c).step_by(period).copied().collect();
        let k = sub.len();
        let span = 10 * k + 1;
        let rw_opt = Some(sub_w.as_slice());
        for i in 0..k + 2 {
            let xs = i as f64 - 1.0;
            let v = loess_at(&sub, rw_opt, span, 1, xs).unwrap_or(if i == 0 {
                sub[0]
            } else {
                sub[(i - 1).min(k - 1)]
            });
            out[i * period + c] = v;
        }
    }
    out
}

/// Periodic profile: per-position mean of `s`, then circular tricube
/// smoothing with span `window`.
fn periodic_profile(s: &[f64], period: usize, window: usize) -> Vec<f64> {
    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for (t, v) in s.iter().enumerate() {
        sums[t % period] += v;
        counts[t % period] += 1;
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    if window <= 1 {
        return means;
    }
    let half = (window / 2) as isize;
    let h = half as f64;
    (0..period as isize)
        .map(|c| {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for k in -half..=half {
                let r = (k as f64).abs();
                let w = if r <= 0.001 * h {
                    1.0
                } else if r <= 0.999 * h {
                    tricube(r / h)
                } else {
                    0.0
                };
                acc += w * means[(c + k).rem_euclid(period as isize) as usize];
                wsum += w;
            }
            acc / wsum
        })
        .collect()
}

fn robustness_weights(remainder: &[f64]) -> Vec<f64> {
    let mut abs: Vec<f64> = remainder.iter().map(|r| r.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len();
    let median = if n % 2 == 1 {
        abs[n / 2]
    } else {
        0.5 * (abs[n / 2 - 1] + abs[n / 2])
    };
    let h = 6.0 * median;
    remainder
        .iter()
        .map(|r| {
            let u = r.abs();
            if h == 0.0 {
                1.0
            } else if u <= 0.001 * h {
                1.0
            } else if u <= 0.999 * h {
                let v = 1.0 - (u / h).powi(2);
                v * v
            } else {
                0.0
            }
        })
        .collect()
}

/// Decomposes `series` into trend, periodic seasonal and remainder.
pub fn stl(series: &[f64], cfg: &StlConfig) -> Result<StlDecomposition> {
    cfg.validate()?;
    let n = series.len();
    let np = cfg.period;
    if n < 2 * np {
        return Err(Error::SeriesTooShort {
            len: n,
            needed: 2 * np,
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in STL input".into()));
    }
    let mut trend = vec![0.0; n];
    let mut seasonal = vec![0.0; n];
    let mut rw = vec![1.0; n];
    let passes = if cfg.robust { cfg.outer + 1 } else { 1 };
    for pass in 0..passes {
        for _ in 0..cfg.inner {
            let detrended: Vec<f64> = series.iter().zip(&trend).map(|(y, t)| y - t).collect();
            let c = cycle_subseries(&detrended, &rw, np);
            let low = moving_average(&moving_average(&moving_average(&c, np), np), 3);
            let low = loess_smooth(&low, None, cfg.lowpass_window, 1);
            let raw: Vec<f64> = (0..n).map(|t| c[np + t] - low[t]).collect();
            let profile = periodic_profile(&raw, np, cfg.profile_window);
            for (t, s) in seasonal.iter_mut().enumerate() {
                *s = profile[t % np];
            }
            let deseason: Vec<f64> = series.iter().zip(&seasonal).map(|(y, s)| y - s).collect();
            trend = loess_smooth(&deseason, Some(&rw), cfg.trend_window, 1);
        }
        if cfg.robust && pass + 1 < passes {
            let rem: Vec<f64> = (0..n).map(|t| series[t] - (trend[t] + seasonal[t])).collect();
            rw = robustness_weights(&rem);
        }
    }
    let remainder = (0..n).map(|t| series[t] - (trend[t] + seasonal[t])).collect();
    Ok(StlDecomposition {
        trend,
        seasonal,
        remainder,
    })
}

/// OLS slope of the trend against `t = 1..T`.
pub fn trend_slope(decomp: &StlDecomposition) -> f64 {
    ols_slope(&decomp.trend)
}

pub(crate) fn ols_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let t_mean = (n + 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dt = (i + 1) as f64 - t_mean;
        sxy += dt * (v - y_mean);
        sxx += dt * dt;
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

/// `max(0, 1 - Var(R) / Var(S + R))`.
pub fn seasonal_strength(decomp: &StlDecomposition) -> Result<f64> {
    let sr: Vec<f64> = decomp
        .seasonal
        .iter()
        .zip(&decomp.remainder)
        .map(|(s, r)| s + r)
        .collect();
    let denom = variance(&sr);
    if !(denom > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((1.0 - variance(&decomp.remainder) / denom).max(0.0))
}
