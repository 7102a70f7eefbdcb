//! Tabular reports and line plots: white-noise counts, fitted components,
//! forecasts, MAPE tables and cluster assignments.
//!
//! MAPE tables are reported in percent (×100); the tidy MAPE export keeps
//! fractions.

use std::fmt::Write as _;
use std::path::Path;

use crate::backtest::{BacktestResult, ClusteredComparison};
use crate::cluster::Clustering;
use crate::data::WeekLabel;
use crate::diagnostics::WhiteNoiseReport;
use crate::error::{Error, Result};
use crate::lee_carter::LeeCarterFit;
use crate::model::{LiLeeModel, ModelBody, TrainedModel};

/// A header plus string rows, written as CSV.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidData(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn pct(v: f64) -> String {
    format!("{:.4}", 100.0 * v)
}

/// One row per model: white-noise counts per age group and the total.
pub fn white_noise_table(reports: &[WhiteNoiseReport], age_groups: &[String]) -> Table {
    let mut t = Table::new(
        std::iter::once("model".to_string())
            .chain(age_groups.iter().cloned())
            .chain(std::iter::once("total".to_string())),
    );
    for r in reports {
        let mut row = vec![r.model_label.clone()];
        row.extend(r.counts.iter().map(|c| c.to_string()));
        row.push(r.total().to_string());
        t.push(row);
    }
    t
}

/// Ljung–Box p-values in long form: `model, country, age, pvalue`.
pub fn white_noise_pvalues(reports: &[WhiteNoiseReport], countries: &[String], age_groups: &[String]) -> Table {
    let mut t = Table::new(["model", "country", "age", "pvalue"]);
    for r in reports {
        for (j, c) in countries.iter().enumerate() {
            for (x, a) in age_groups.iter().enumerate() {
                t.push(vec![r.model_label.clone(), c.clone(), a.clone(), num(r.pvalues[(j, x)])]);
            }
        }
    }
    t
}

/// Weeks covered by the training sample of `model`.
pub fn training_weeks(model: &TrainedModel) -> Vec<WeekLabel> {
    let mut start = model.last_week;
    for _ in 1..model.n_train_weeks {
        start = start.previous();
    }
    WeekLabel::sequence(start, model.n_train_weeks)
}

struct ComponentRows<'a> {
    table: Table,
    model: &'a TrainedModel,
    weeks: Vec<WeekLabel>,
}

impl ComponentRows<'_> {
    fn row(&mut self, stage: usize, gamma: f64, population: &str, component: &str, key: String, value: f64) {
        self.table.push(vec![
            self.model.label().to_string(),
            stage.to_string(),
            num(gamma),
            population.to_string(),
            component.to_string(),
            key,
            format!("{value:.10e}"),
        ]);
    }

    fn by_age(&mut self, stage: usize, gamma: f64, population: &str, component: &str, v: &[f64]) {
        let ages = self.model.age_groups.clone();
        for (a, &val) in ages.iter().zip(v) {
            self.row(stage, gamma, population, component, a.clone(), val);
        }
    }

    fn by_week(&mut self, stage: usize, gamma: f64, population: &str, component: &str, v: &[f64]) {
        let weeks = self.weeks.clone();
        for (w, &val) in weeks.iter().zip(v) {
            self.row(stage, gamma, population, component, w.to_string(), val);
        }
    }

    fn lc(&mut self, stage: usize, gamma: f64, population: &str, fit: &LeeCarterFit) {
        self.by_age(stage, gamma, population, "a", fit.a.as_slice());
        self.by_age(stage, gamma, population, "b", fit.b.as_slice());
        self.by_week(stage, gamma, population, "kappa", fit.kappa.as_slice());
    }

    fn li_lee(&mut self, stage: usize, gamma: f64, m: &LiLeeModel) {
        self.lc(stage, gamma, "common", &m.fit.product);
        for (j, c) in self.model.countries.clone().iter().enumerate() {
            self.lc(stage, gamma, c, &m.fit.ratios[j]);
            self.by_age(stage, gamma, c, "A", m.fit.intercepts[j].as_slice());
        }
    }
}

/// Long-form dump of every fitted component: age effects keyed by age
/// group and period indices keyed by week. GBLL rows carry their stage and
/// learning rate; single fits use stage 1 and rate 1.
pub fn components_table(model: &TrainedModel) -> Table {
    let mut rows = ComponentRows {
        table: Table::new(["model", "stage", "gamma", "population", "component", "key", "value"]),
        model,
        weeks: training_weeks(model),
    };
    match &model.body {
        ModelBody::LiLee(m) => rows.li_lee(1, 1.0, m),
        ModelBody::Gbll(g) => {
            for (i, (m, &gamma)) in g.stages.iter().zip(&g.ensemble.gammas).enumerate() {
                rows.li_lee(i + 1, gamma, m);
            }
        }
        ModelBody::Hby(h) => {
            for (r, c) in h.fit.common.iter().enumerate() {
                rows.by_age(1, 1.0, "common", &format!("phi{}", r + 1), c.basis.as_slice());
                rows.by_week(1, 1.0, "common", &format!("beta{}", r + 1), c.scores.as_slice());
            }
            for (j, country) in model.countries.iter().enumerate() {
                rows.by_age(1, 1.0, country, "mu", h.fit.mu[j].as_slice());
                for (u, c) in h.fit.country[j].iter().enumerate() {
                    rows.by_age(1, 1.0, country, &format!("psi{}", u + 1), c.basis.as_slice());
                    rows.by_week(1, 1.0, country, &format!("gamma{}", u + 1), c.scores.as_slice());
                }
            }
        }
    }
    rows.table
}

/// Forecast rates on the original scale: `country, age, week, horizon, rate`.
pub fn forecast_table(model: &TrainedModel, h: usize, frozen: bool) -> Result<Table> {
    let rates = model.forecast_rates(h, frozen)?;
    let weeks = model.future_weeks(h);
    let mut t = Table::new(["country", "age", "week", "horizon", "rate"]);
    for (j, c) in model.countries.iter().enumerate() {
        for (x, a) in model.age_groups.iter().enumerate() {
            for (u, w) in weeks.iter().enumerate() {
                t.push(vec![
                    c.clone(),
                    a.clone(),
                    w.to_string(),
                    (u + 1).to_string(),
                    format!("{:.10e}", rates[j][(u, x)]),
                ]);
            }
        }
    }
    Ok(t)
}

fn check_same_plan(results: &[&BacktestResult]) -> Result<()> {
    if let Some(first) = results.first() {
        if results
            .iter()
            .any(|r| r.plan != first.plan || r.age_groups != first.age_groups)
        {
            return Err(Error::InvalidInput("backtest results use different plans or ages".into()));
        }
    }
    Ok(())
}

/// Mean MAPE (percent) by horizon month, one column per model.
pub fn mape_table(results: &[BacktestResult]) -> Result<Table> {
    check_same_plan(&results.iter().collect::<Vec<_>>())?;
    let mut t = Table::new(std::iter::once("h".to_string()).chain(results.iter().map(|r| r.label.clone())));
    let cols: Vec<Vec<f64>> = results.iter().map(|r| r.mape_by_horizon()).collect();
    let months = results.first().map_or(0, |r| r.plan.n_months());
    for h in 0..months {
        let mut row = vec![(h + 1).to_string()];
        row.extend(cols.iter().map(|c| pct(c[h])));
        t.push(row);
    }
    Ok(t)
}

/// Mean MAPE (percent) by age group and horizon month.
pub fn mape_by_age_table(results: &[BacktestResult]) -> Result<Table> {
    check_same_plan(&results.iter().collect::<Vec<_>>())?;
    let mut t = Table::new(
        ["age".to_string(), "h".to_string()]
            .into_iter()
            .chain(results.iter().map(|r| r.label.clone())),
    );
    let Some(first) = results.first() else {
        return Ok(t);
    };
    let mats: Vec<_> = results.iter().map(|r| r.mape_by_age()).collect();
    for (x, age) in first.age_groups.iter().enumerate() {
        for h in 0..first.plan.n_months() {
            let mut row = vec![age.clone(), (h + 1).to_string()];
            row.extend(mats.iter().map(|m| pct(m[(h, x)])));
            t.push(row);
        }
    }
    Ok(t)
}

/// Clustered MAPE (percent): one column per (method, model) plus the
/// unclustered reference run.
pub fn clustered_table(comparisons: &[ClusteredComparison], reference: &BacktestResult) -> Result<Table> {
    let mut all: Vec<&BacktestResult> = comparisons.iter().flat_map(|c| &c.results).collect();
    all.push(reference);
    check_same_plan(&all)?;
    let mut header = vec!["h".to_string()];
    let mut cols = Vec::new();
    for c in comparisons {
        for r in &c.results {
            header.push(format!("method{} {}", c.method, r.label));
            cols.push(r.mape_by_horizon());
        }
    }
    header.push(format!("{} unclustered", reference.label));
    cols.push(reference.mape_by_horizon());
    let mut t = Table::new(header);
    for h in 0..reference.plan.n_months() {
        let mut row = vec![(h + 1).to_string()];
        row.extend(cols.iter().map(|c| pct(c[h])));
        t.push(row);
    }
    Ok(t)
}

/// Tidy MAPE rows (fractions): `model, method, fold, country, age, h, mape`.
/// `method` is empty for unclustered runs.
pub fn tidy_table(runs: &[(Option<u8>, &BacktestResult)]) -> Table {
    let mut t = Table::new(["model", "method", "fold", "country", "age", "h", "mape"]);
    for (method, r) in runs {
        let m = method.map(|m| m.to_string()).unwrap_or_default();
        for row in r.tidy() {
            t.push(vec![
                r.label.clone(),
                m.clone(),
                row.fold.to_string(),
                row.country,
                row.age,
                row.month.to_string(),
                format!("{:.10e}", row.mape),
            ]);
        }
    }
    t
}

/// Cluster assignments: `country, method, cluster_id`.
pub fn clusters_table(clusterings: &[Clustering]) -> Table {
    let mut t = Table::new(["country", "method", "cluster_id"]);
    for c in clusterings {
        for (country, id) in c.countries.iter().zip(&c.result.assignments) {
            t.push(vec![country.clone(), c.features.method.number().to_string(), id.to_string()]);
        }
    }
    t
}

/// Elbow curves: `method, k, inertia`.
pub fn inertia_table(clusterings: &[Clustering]) -> Table {
    let mut t = Table::new(["method", "k", "inertia"]);
    for c in clusterings {
        for (i, v) in c.result.k_curve.iter().enumerate() {
            t.push(vec![c.features.method.number().to_string(), (i + 1).to_string(), format!("{v:.10e}")]);
        }
    }
    t
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A static SVG line chart with one polyline per series over the shared
/// `x` values.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, x: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 50.0);
    let finite = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (mut ymin, mut ymax) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !ymin.is_finite() {
        (ymin, ymax) = (0.0, 1.0);
    }
    if ymax - ymin < 1e-12 {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let pad = 0.05 * (ymax - ymin);
    let (ymin, ymax) = (ymin - pad, ymax + pad);
    let xmin = x.iter().copied().fold(f64::INFINITY, f64::min);
    let mut xmax = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !xmin.is_finite() || xmax <= xmin {
        xmax = xmin + 1.0;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |v: f64| left + (v - xmin) / (xmax - xmin) * pw;
    let sy = |v: f64| top + (ymax - v) / (ymax - ymin) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<path d="M{left} {top} V{} H{}" fill="none" stroke="#333"/>"##,
        top + ph,
        left + pw
    );
    for i in 0..=4 {
        let v = ymin + (ymax - ymin) * i as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
    }
    for &xv in x {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            sx(xv),
            top + ph + 18.0,
            xv
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = x
            .iter()
            .zip(ys)
            .filter(|(_, y)| y.is_finite())
            .map(|(&xv, &yv)| format!("{:.2},{:.2}", sx(xv), sy(yv)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
        let ly = top + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            left + pw + 12.0,
            left + pw + 32.0,
            left + pw + 38.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Line plot of a MAPE table: horizon month on the x axis, one series per
/// value column.
pub fn mape_plot_svg(title: &str, table: &Table) -> String {
    let x: Vec<f64> = table
        .rows
        .iter()
        .map(|r| r[0].parse().unwrap_or(f64::NAN))
        .collect();
    let series: Vec<(String, Vec<f64>)> = (1..table.header.len())
        .map(|c| {
            (
                table.header[c].clone(),
                table.rows.iter().map(|r| r[c].parse().unwrap_or(f64::NAN)).collect(),
            )
        })
        .collect();
    line_plot_svg(title, "horizon (months)", "MAPE (%)", &x, &series)
}
