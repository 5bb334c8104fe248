//! `zresid` command-line interface.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 model fit did
//! not converge, 4 internal or I/O error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use zresid::config::ExperimentConfig;
use zresid::crossval::{cv_predict, plan_for};
use zresid::diagnostics::{replicated_sw, DiagnosticsReport, OUTLIER_THRESHOLD};
use zresid::manifest::RunManifest;
use zresid::residuals::predict_nocv;
use zresid::simulate::{conditions, run_experiment, ExperimentTable};
use zresid::survdata::{kidney_csv, kidney_dataset, load_csv, ColumnMap};
use zresid::svg::{self, Mark, Plot};
use zresid::{fit, rng, CovariateSchema, Error, FitOptions, FrailtyFit, Regime, SurvivalDataset, ThetaMode};

#[derive(Parser)]
#[command(
    name = "zresid",
    version,
    about = "Shared gamma frailty Cox models with cross-validatory Z-residual diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the shared gamma frailty model and print a coefficient table.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// profile, none, or fixed:THETA
        #[arg(long, default_value = "profile")]
        theta: String,
        /// Directory for fit.json and the run manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute Z-residuals, diagnostics and plots.
    Zresid {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "profile")]
        theta: String,
        /// none, kfold:K or loocv
        #[arg(long, default_value = "none")]
        cv: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of residual randomizations for the replicated
        /// Shapiro-Wilk p-values.
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        #[arg(long, default_value_t = OUTLIER_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a Monte Carlo experiment described by a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's replicate count.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Export the embedded kidney infection dataset as CSV.
    Dataset {
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build and write a cross-validation fold plan.
    Folds {
        #[command(flatten)]
        data: DataArgs,
        /// kfold:K or loocv
        #[arg(long)]
        cv: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Use the embedded kidney infection dataset.
    #[arg(long, conflicts_with = "data")]
    kidney: bool,
    /// CSV file with one row per observation.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "time")]
    time: String,
    #[arg(long, default_value = "status")]
    status: String,
    #[arg(long, default_value = "cluster")]
    cluster: String,
    /// Column holding row ids; rows are numbered from 1 otherwise.
    #[arg(long)]
    row_id: Option<String>,
    /// Numeric covariate column (repeatable).
    #[arg(long = "numeric", value_delimiter = ',')]
    numeric: Vec<String>,
    /// Categorical covariate as NAME=REF,LEVEL,... with the reference level
    /// first (repeatable).
    #[arg(long = "categorical")]
    categorical: Vec<String>,
    /// Row ids to drop before fitting, e.g. 20,42.
    #[arg(long, value_delimiter = ',')]
    exclude_rows: Vec<usize>,
}

impl DataArgs {
    fn load(&self, manifest: &mut RunManifest) -> zresid::Result<SurvivalDataset> {
        let data = if self.kidney {
            manifest.input_bytes("kidney (embedded)", kidney_csv().as_bytes());
            kidney_dataset()
        } else {
            let path =
                self.data.as_ref().ok_or_else(|| Error::InvalidArgument("pass --kidney or --data PATH".into()))?;
            let mut schema = CovariateSchema::new();
            for name in &self.numeric {
                schema = schema.numeric(name.trim());
            }
            for spec in &self.categorical {
                let (name, levels) = spec
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidArgument(format!("categorical '{spec}' is not NAME=REF,LEVEL,...")))?;
                let levels: Vec<&str> = levels.split(',').map(str::trim).collect();
                let reference = levels[0].to_owned();
                schema = schema.categorical(name.trim(), levels, Some(&reference));
            }
            let mut map = ColumnMap::new(&self.time, &self.status, &self.cluster);
            map.row_id = self.row_id.clone();
            manifest.input(path)?;
            load_csv(path, &schema, &map)?
        };
        if self.exclude_rows.is_empty() {
            Ok(data)
        } else {
            data.without_rows(&self.exclude_rows)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NotConverged { .. } => 3,
        Error::Io { .. } => 4,
        _ => 2,
    }
}

fn command_line() -> Vec<String> {
    std::env::args().collect()
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> zresid::Result<()> {
    fs::write(path, body).map_err(|e| Error::Io { path: path.to_owned(), source: e })
}

fn create_dir(dir: &Path) -> zresid::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_owned(), source: e })
}

fn file_writer(path: &Path) -> zresid::Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::Io { path: path.to_owned(), source: e })
}

fn print_fit(f: &FrailtyFit) {
    println!("{:<14} {:>10} {:>10} {:>10} {:>8} {:>10}", "covariate", "coef", "exp(coef)", "se", "z", "p");
    for (i, (z, p)) in f.wald().into_iter().enumerate() {
        println!(
            "{:<14} {:>10.4} {:>10.4} {:>10.4} {:>8.3} {:>10.4}",
            f.covariate_names[i],
            f.beta[i],
            f.beta[i].exp(),
            f.se[i],
            z,
            p
        );
    }
    println!("theta = {:.6}  n = {}  events = {}  clusters = {}", f.theta, f.n, f.events, f.cluster_labels.len());
    println!("penalized loglik = {:.4}  iterations = {}  converged = {}", f.loglik, f.iterations, f.converged);
}

fn cmd_fit(data: DataArgs, theta: String, out: Option<PathBuf>) -> zresid::Result<()> {
    let mut manifest = RunManifest::start(command_line(), format!("theta = {theta:?}"));
    let mode: ThetaMode = theta.parse()?;
    let data = data.load(&mut manifest)?;
    let f = fit(&data, mode)?;
    print_fit(&f);
    if let Some(dir) = out {
        create_dir(&dir)?;
        write(&dir.join("fit.json"), serde_json::to_string_pretty(&f).expect("fit serializes"))?;
        manifest.finish(&dir)?;
    }
    if !f.converged {
        return Err(Error::NotConverged { iterations: f.iterations });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_zresid(
    data: DataArgs,
    theta: String,
    cv: String,
    seed: u64,
    replicates: usize,
    threshold: f64,
    out: PathBuf,
) -> zresid::Result<()> {
    let config = format!("theta = {theta:?}\ncv = {cv:?}\nreplicates = {replicates}\nthreshold = {threshold}");
    let mut manifest = RunManifest::start(command_line(), config);
    let mode: ThetaMode = theta.parse()?;
    let regime: Regime = cv.parse()?;
    if replicates == 0 {
        return Err(Error::InvalidArgument("--replicates must be at least 1".into()));
    }
    let data = data.load(&mut manifest)?;
    let fold_seed = rng::derive(seed, 1, 0);
    let residual_seed = rng::derive(seed, 2, 0);
    manifest.seed("seed", seed).seed("fold", fold_seed).seed("residual", residual_seed);

    let plan = plan_for(&data, regime, fold_seed)?;
    let pred = match &plan {
        None => {
            let f = fit(&data, mode)?;
            if !f.converged {
                return Err(Error::NotConverged { iterations: f.iterations });
            }
            predict_nocv(&f, &data)?
        }
        Some(p) => cv_predict(&data, p, mode, &FitOptions::default())?,
    };
    let set = pred.randomize(residual_seed);
    let mut report = DiagnosticsReport::new(&set, threshold);
    let seeds: Vec<u64> = (0..replicates as u64).map(|r| rng::derive(residual_seed, 3, r)).collect();
    if replicates > 1 {
        report.replicated_sw = replicated_sw(&pred, &seeds);
    }

    create_dir(&out)?;
    set.write_csv(file_writer(&out.join("residuals.csv"))?)?;
    if let Some(p) = &plan {
        p.write_csv(file_writer(&out.join("folds.csv"))?)?;
    }
    write(&out.join("diagnostics.json"), report.to_json())?;
    let tag = regime.to_string();
    svg::residual_scatter(&format!("Z-residuals ({tag})"), &set.z, &set.status).write(&out, "zresid_scatter")?;
    svg::qq_plot(&format!("Normal QQ plot ({tag})"), report.qq.clone()).write(&out, "zresid_qq")?;
    svg::cs_chf_plot(&format!("Cox-Snell residual CHF ({tag})"), report.cs_chf.clone()).write(&out, "cs_chf")?;
    if replicates > 1 {
        let ps: Vec<f64> = report.replicated_sw.iter().flatten().copied().collect();
        svg::histogram(&format!("Shapiro-Wilk p-values over {replicates} seeds ({tag})"), "p-value", &ps, 20, 0.0, 1.0)
            .write(&out, "sw_pvalues")?;
    }
    manifest.finish(&out)?;

    println!(
        "regime {tag}: {} residuals, {} NA, {} failed folds",
        set.n_used(),
        set.len() - set.n_used(),
        set.failed_folds
    );
    match (report.sw_stat, report.sw_p) {
        (Some(w), Some(p)) => println!("Shapiro-Wilk W = {w:.4}, p = {p:.4}"),
        _ => println!("Shapiro-Wilk test not available"),
    }
    println!("rows with |z| > {threshold}: {:?}", report.outlier_rows);
    if replicates > 1 {
        let ps: Vec<f64> = report.replicated_sw.iter().flatten().copied().collect();
        let below = ps.iter().filter(|&&p| p < 0.05).count();
        println!("replicated Shapiro-Wilk: {below}/{} p-values below 0.05", ps.len());
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &s in &seeds {
            for r in pred.randomize(s).outlier_rows(threshold) {
                *counts.entry(r).or_default() += 1;
            }
        }
        for (row, c) in counts {
            println!("  row {row}: |z| > {threshold} in {c}/{replicates} seeds");
        }
    }
    Ok(())
}

const CURVE_METRICS: [&str; 7] = ["rejection_rate", "mean_p", "mean_r2", "auc", "mean_tail_prob", "sensitivity", "fpr"];

fn curve_plots(table: &ExperimentTable) -> Vec<(String, Plot)> {
    let mut out = Vec::new();
    let mut scenarios: Vec<&str> = table.rows.iter().map(|r| r.scenario.as_str()).collect();
    scenarios.dedup();
    scenarios.sort_unstable();
    scenarios.dedup();
    for scenario in scenarios {
        for metric in CURVE_METRICS {
            let mut series: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
            for r in table.rows.iter().filter(|r| r.scenario == scenario && r.metric == metric) {
                if let Some(v) = r.value {
                    series.entry((r.regime.clone(), r.model.clone())).or_default().push((r.n as f64, v));
                }
            }
            if series.is_empty() {
                continue;
            }
            let mut plot = Plot::new(&format!("{scenario}: {metric}"), "n", metric);
            for (i, ((regime, model), mut pts)) in series.into_iter().enumerate() {
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                plot = plot.add(&format!("{regime} {model}"), svg::palette(i), Mark::Line, pts);
            }
            if metric == "rejection_rate" {
                plot.hlines = vec![0.05];
            } else if metric == "mean_tail_prob" {
                plot.hlines = vec![zresid::diagnostics::normal_tail(OUTLIER_THRESHOLD)];
            }
            out.push((format!("{scenario}_{metric}"), plot));
        }
    }
    out
}

fn cmd_simulate(config: PathBuf, out: PathBuf, seed: Option<u64>, replicates: Option<usize>) -> zresid::Result<()> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = replicates {
        cfg.replicates = r;
        for s in &mut cfg.scenarios {
            s.replicates = None;
        }
    }
    cfg.validate()?;
    let mut manifest = RunManifest::start(command_line(), cfg.to_toml());
    manifest.input(&config)?;
    manifest.seed("seed", cfg.seed);
    let regimes = cfg.regimes()?;
    let mode = cfg.theta_mode()?;
    let mut table = ExperimentTable::default();
    for cell in cfg.cells()? {
        eprintln!(
            "running {} g={} m={} ({} replicates, {})",
            cell.scenario,
            cell.g,
            cell.m,
            cell.replicates,
            conditions(cell.scenario).join("/")
        );
        manifest.seed(&format!("{}_g{}_m{}", cell.scenario, cell.g, cell.m), cell.seed);
        table.extend(run_experiment(&cell, &regimes, mode)?);
    }
    create_dir(&out)?;
    table.write_csv(file_writer(&out.join("experiment.csv"))?)?;
    for (stem, plot) in curve_plots(&table) {
        plot.write(&out, &stem)?;
    }
    manifest.finish(&out)?;
    println!("wrote {} rows to {}", table.rows.len(), out.join("experiment.csv").display());
    Ok(())
}

fn cmd_dataset(out: Option<PathBuf>) -> zresid::Result<()> {
    match out {
        Some(path) => write(&path, kidney_csv()),
        None => {
            print!("{}", kidney_csv());
            Ok(())
        }
    }
}

fn cmd_folds(data: DataArgs, cv: String, seed: u64, out: Option<PathBuf>) -> zresid::Result<()> {
    let mut manifest = RunManifest::start(command_line(), format!("cv = {cv:?}"));
    let regime: Regime = cv.parse()?;
    let data = data.load(&mut manifest)?;
    let plan = plan_for(&data, regime, seed)?
        .ok_or_else(|| Error::InvalidArgument("fold plans need --cv kfold:K or loocv".into()))?;
    match out {
        Some(path) => plan.write_csv(file_writer(&path)?)?,
        None => plan.write_csv(std::io::stdout().lock())?,
    }
    eprintln!("{} folds, sizes {:?}, {} NA", plan.k, plan.fold_sizes(), plan.n_na());
    Ok(())
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("ZRESID_THREADS") else { return Ok(()) };
    let n: usize = v.parse().map_err(|_| format!("ZRESID_THREADS must be a positive integer, got '{v}'"))?;
    if n == 0 {
        return Err("ZRESID_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Fit { data, theta, out } => cmd_fit(data, theta, out),
        Command::Zresid { data, theta, cv, seed, replicates, threshold, out } => {
            cmd_zresid(data, theta, cv, seed, replicates, threshold, out)
        }
        Command::Simulate { config, out, seed, replicates } => cmd_simulate(config, out, seed, replicates),
        Command::Dataset { out } => cmd_dataset(out),
        Command::Folds { data, cv, seed, out } => cmd_folds(data, cv, seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
