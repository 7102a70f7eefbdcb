//! `gbll`: fit, forecast, backtest and cluster weekly mortality models.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gbll::artifact;
use gbll::backtest::{run_backtest, run_clustered_comparison, BacktestResult, Forecaster, ModelForecaster};
use gbll::cluster::{cluster_countries, Clustering, FeatureMethod};
use gbll::data::{load_csv, MortalityTensor};
use gbll::diagnostics::white_noise_counts;
use gbll::model::{train, ModelSpec};
use gbll::report::{self, Table};
use gbll::{Error, ErrorKind, Result};

use config::{parse_methods, parse_order, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "gbll", version)]
#[command(about = "Gradient-boosted multi-population models for weekly mortality")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model and write the model file, white-noise counts and components.
    Fit(FitArgs),
    /// Forecast rates from a saved model file.
    Forecast(ForecastArgs),
    /// Run the expanding-window backtest and write the MAPE tables.
    Backtest(BacktestArgs),
    /// Cluster countries and write the assignments.
    Cluster(ClusterArgs),
}

/// Options shared by every command that reads data.
#[derive(Args, Debug)]
struct Common {
    /// Weekly mortality CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated southern-hemisphere country codes.
    #[arg(long, value_delimiter = ',')]
    southern: Option<Vec<String>>,
}

/// Model hyperparameter overrides.
#[derive(Args, Debug)]
struct ModelOpts {
    /// HBY order, `R` or `R,U`.
    #[arg(long)]
    order: Option<String>,
    /// Maximum number of boosting stages.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Ljung–Box lags.
    #[arg(long)]
    lb_lags: Option<usize>,
    /// Ljung–Box significance level.
    #[arg(long)]
    lb_alpha: Option<f64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model_opts: ModelOpts,
    /// `ll`, `hby` or `gbll`.
    #[arg(long, default_value = "gbll")]
    model: String,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    /// Model file written by `fit`.
    #[arg(long)]
    artifact: PathBuf,
    /// Horizon in weeks.
    #[arg(long, default_value_t = 52)]
    h: usize,
    /// Hold every index at its harmonic profile plus the last residual.
    #[arg(long)]
    frozen_kappa: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BacktestArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model_opts: ModelOpts,
    /// Comma-separated models.
    #[arg(long, default_value = "ll,hby,gbll")]
    models: String,
    /// Comma-separated clustering methods for the clustered comparison.
    #[arg(long)]
    clustering: Option<String>,
    /// Number of clusters; the elbow rule is used when absent.
    #[arg(long)]
    k: Option<usize>,
    /// K-means seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated clustering methods.
    #[arg(long, alias = "clustering", default_value = "1,2,3")]
    method: String,
    /// Number of clusters; the elbow rule is used when absent.
    #[arg(long)]
    k: Option<usize>,
    /// K-means seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Backtest(a) => cmd_backtest(a),
        Command::Cluster(a) => cmd_cluster(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}

/// Everything a data-driven command needs after validation.
struct Prepared {
    cfg: RunConfig,
    data: PathBuf,
    out: PathBuf,
}

fn prepare(
    common: &Common,
    model_opts: Option<&ModelOpts>,
    k: Option<usize>,
    seed: Option<u64>,
) -> Result<Prepared> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(j) = common.jobs {
        cfg.jobs = Some(j);
    }
    if let Some(s) = &common.southern {
        let mut ingest = cfg.ingest();
        ingest.southern = s.clone();
        cfg.data = Some(ingest);
    }
    if let Some(m) = model_opts {
        if let Some(o) = &m.order {
            cfg.model.hby_order = parse_order(o)?;
        }
        if let Some(g) = m.max_iter {
            cfg.model.max_iterations = g;
        }
        if let Some(l) = m.lb_lags {
            cfg.ljung_box.lags = l;
        }
        if let Some(a) = m.lb_alpha {
            cfg.ljung_box.alpha = a;
        }
    }
    if k.is_some() {
        cfg.cluster.k = k;
    }
    if let Some(s) = seed {
        cfg.cluster.seed = s;
    }
    cfg.validate()?;
    let data = common
        .data
        .clone()
        .or_else(|| cfg.data_path.clone())
        .ok_or_else(|| Error::Config("no data file given (use --data or data_path)".into()))?;
    let out = common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    if let Some(j) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {j} worker threads: {e}")))?;
    }
    Ok(Prepared { cfg, data, out })
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write(table: &Table, dir: &Path, name: &str) -> Result<()> {
    let path = dir.join(name);
    table.write_csv(&path)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_svg(svg: &str, dir: &Path, name: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, svg)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn load_raw(p: &Prepared) -> Result<MortalityTensor> {
    let t = load_csv(&p.data, &p.cfg.ingest())?;
    log::info!(
        "loaded {} countries, {} ages, {} weeks ({} to {})",
        t.n_countries(),
        t.n_ages(),
        t.n_weeks(),
        t.weeks().first().map(ToString::to_string).unwrap_or_default(),
        t.weeks().last().map(ToString::to_string).unwrap_or_default()
    );
    Ok(t)
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let p = prepare(&a.common, Some(&a.model_opts), None, None)?;
    let spec = p.cfg.model_spec(&a.model)?;
    let tensor = load_raw(&p)?.apply_hemisphere_transform();
    create_out(&p.out)?;
    let model = train(&tensor, &spec, &p.cfg.forecast())?;
    if let gbll::model::ModelBody::Gbll(g) = &model.body {
        log::info!(
            "GBLL stopped after {} stages ({})",
            g.ensemble.iterations_used(),
            g.ensemble.stop_reason.as_str()
        );
    }
    let path = p.out.join(format!("model.{}", spec.file_extension()));
    artifact::save(&model, &path)?;
    log::info!("wrote {}", path.display());

    let residuals = model
        .residuals()
        .ok_or_else(|| Error::InvalidData("fitted model has no residuals".into()))?;
    let wn = white_noise_counts(residuals, &p.cfg.ljung_box(), model.label())?;
    log::info!("{}: {} of {} series pass the Ljung–Box test", wn.model_label, wn.total(), wn.pvalues.len());
    write(&report::white_noise_table(std::slice::from_ref(&wn), &model.age_groups), &p.out, "whitenoise.csv")?;
    write(
        &report::white_noise_pvalues(std::slice::from_ref(&wn), &model.countries, &model.age_groups),
        &p.out,
        "whitenoise_pvalues.csv",
    )?;
    write(&report::components_table(&model), &p.out, "components.csv")
}

fn cmd_forecast(a: ForecastArgs) -> Result<()> {
    if a.h == 0 {
        return Err(Error::Config("forecast horizon must be positive".into()));
    }
    let model = artifact::load(&a.artifact)?;
    let out = a.out.unwrap_or_else(|| PathBuf::from("."));
    create_out(&out)?;
    let table = report::forecast_table(&model, a.h, a.frozen_kappa)?;
    write(&table, &out, "forecast.csv")
}

fn run_clusterings(raw: &MortalityTensor, cfg: &RunConfig, methods: &[FeatureMethod]) -> Result<Vec<Clustering>> {
    methods
        .iter()
        .map(|&m| cluster_countries(raw, &cfg.clustering(m)))
        .collect()
}

fn write_clusterings(clusterings: &[Clustering], out: &Path) -> Result<()> {
    write(&report::clusters_table(clusterings), out, "clusters.csv")?;
    write(&report::inertia_table(clusterings), out, "inertia.csv")?;
    let curves: Vec<(String, Vec<f64>)> = clusterings
        .iter()
        .filter(|c| !c.result.k_curve.is_empty())
        .map(|c| (format!("method {}", c.features.method.number()), c.result.k_curve.clone()))
        .collect();
    if let Some(len) = curves.iter().map(|c| c.1.len()).max() {
        let x: Vec<f64> = (1..=len).map(|k| k as f64).collect();
        let padded: Vec<(String, Vec<f64>)> = curves
            .into_iter()
            .map(|(n, mut v)| {
                v.resize(len, f64::NAN);
                (n, v)
            })
            .collect();
        write_svg(&report::line_plot_svg("Elbow curves", "K", "inertia", &x, &padded), out, "elbow.svg")?;
    }
    Ok(())
}

fn cmd_cluster(a: ClusterArgs) -> Result<()> {
    let methods = parse_methods(&a.method)?;
    let p = prepare(&a.common, None, a.k, a.seed)?;
    let raw = load_raw(&p)?;
    create_out(&p.out)?;
    let clusterings = run_clusterings(&raw, &p.cfg, &methods)?;
    for c in &clusterings {
        for (i, members) in c.groups().iter().enumerate() {
            let names: Vec<&str> = members.iter().map(|&j| c.countries[j].as_str()).collect();
            log::info!("method {} cluster {}: {}", c.features.method.number(), i + 1, names.join(" "));
        }
    }
    write_clusterings(&clusterings, &p.out)
}

fn cmd_backtest(a: BacktestArgs) -> Result<()> {
    let methods = a.clustering.as_deref().map(parse_methods).transpose()?;
    let p = prepare(&a.common, Some(&a.model_opts), a.k, a.seed)?;
    let mut specs: Vec<ModelSpec> = Vec::new();
    for name in a.models.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let spec = p.cfg.model_spec(name)?;
        if specs.iter().any(|s| s.label() == spec.label()) {
            return Err(Error::Config(format!("model {name} listed twice")));
        }
        specs.push(spec);
    }
    if specs.is_empty() {
        return Err(Error::Config("no models given".into()));
    }
    let plan = p.cfg.plan();
    let raw = load_raw(&p)?;
    if raw.n_weeks() < plan.required_weeks() {
        return Err(Error::InsufficientData(format!(
            "the backtest needs {} weeks, the data has {}",
            plan.required_weeks(),
            raw.n_weeks()
        )));
    }
    let tensor = raw.clone().apply_hemisphere_transform();
    create_out(&p.out)?;

    let forecasters: Vec<ModelForecaster> = specs
        .iter()
        .map(|&spec| ModelForecaster {
            spec,
            config: p.cfg.forecast(),
        })
        .collect();
    let mut results: Vec<BacktestResult> = Vec::new();
    for f in &forecasters {
        log::info!("backtesting {}", f.label());
        results.push(run_backtest(&tensor, f, &plan, None)?);
    }
    let table2 = report::mape_table(&results)?;
    write(&table2, &p.out, "table2.csv")?;
    write_svg(&report::mape_plot_svg("Mean MAPE by horizon", &table2), &p.out, "table2.svg")?;
    let table3 = report::mape_by_age_table(&results)?;
    write(&table3, &p.out, "table3.csv")?;
    for (x, age) in tensor.age_groups().iter().enumerate() {
        let mut t = Table::new(table2.header.clone());
        for row in table3.rows.iter().skip(x * plan.n_months()).take(plan.n_months()) {
            t.push(row[1..].to_vec());
        }
        let name = format!("table3_age{}.svg", x + 1);
        write_svg(&report::mape_plot_svg(&format!("Mean MAPE, age {age}"), &t), &p.out, &name)?;
    }

    let mut tidy_runs: Vec<(Option<u8>, &BacktestResult)> = results.iter().map(|r| (None, r)).collect();
    let comparisons;
    let reference;
    if let Some(methods) = methods {
        let clusterings = run_clusterings(&raw, &p.cfg, &methods)?;
        write_clusterings(&clusterings, &p.out)?;
        let groups: Vec<(u8, Vec<Vec<usize>>)> = clusterings
            .iter()
            .map(|c| (c.features.method.number(), c.groups()))
            .collect();
        let dyn_models: Vec<&dyn Forecaster> = forecasters.iter().map(|f| f as &dyn Forecaster).collect();
        comparisons = run_clustered_comparison(&tensor, &groups, &dyn_models, &plan)?;
        reference = match results.iter().find(|r| r.label == "GBLL") {
            Some(r) => r.clone(),
            None => {
                let gbll = ModelForecaster {
                    spec: ModelSpec::Gbll(p.cfg.gbll()),
                    config: p.cfg.forecast(),
                };
                run_backtest(&tensor, &gbll, &plan, None)?
            }
        };
        let table8 = report::clustered_table(&comparisons, &reference)?;
        write(&table8, &p.out, "table8.csv")?;
        write_svg(&report::mape_plot_svg("Mean MAPE with clustering", &table8), &p.out, "table8.svg")?;
        for c in &comparisons {
            tidy_runs.extend(c.results.iter().map(|r| (Some(c.method), r)));
        }
    }
    write(&report::tidy_table(&tidy_runs), &p.out, "mape_tidy.csv")
}
