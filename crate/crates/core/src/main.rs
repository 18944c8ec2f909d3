use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::json;

use matfactor::estimator::{Decomposition, FactorFit, FitOptions};
use matfactor::io::{fmt_num, load_panel_with, read_ordering, read_transforms, save_panel, transform_series, Orderings, Panel};
use matfactor::report::{write_normality, write_report, RunConfig};
use matfactor::simulation::{run_monte_carlo, McReport};
use matfactor::spectra::{eigen_ratios, KMaxRule};
use matfactor::varimax::{varimax_with, VarimaxOptions};
use matfactor::{impute, Error, MaskedSeries, Method, Result};

/// Factor models for matrix time series with missing entries.
#[derive(Parser)]
#[command(name = "matfactor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit loadings and factors to a panel file.
    Estimate {
        #[command(flatten)]
        input: PanelArgs,
        #[command(flatten)]
        fit: FitArgs,
        /// Also write VARIMAX-rotated loadings.
        #[arg(long)]
        varimax: bool,
        /// Kaiser row normalization for VARIMAX.
        #[arg(long, requires = "varimax")]
        kaiser: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Fill the missing cells of a panel with the estimated signal.
    Impute {
        #[command(flatten)]
        input: PanelArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a Monte-Carlo campaign described by a JSON config.
    #[command(group(ArgGroup::new("source").required(true).args(["config"])))]
    Simulate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print both covariance spectra, the eigen-ratio trace and the selected ranks.
    Ranks {
        #[command(flatten)]
        input: PanelArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Write QQ and moment tables of the first-row loading errors.
    #[command(group(ArgGroup::new("source").required(true).args(["config", "report"])))]
    Qqdata {
        #[command(flatten)]
        run: RunArgs,
        /// Read an existing report.json instead of running the campaign.
        #[arg(long, conflicts_with = "config")]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PanelArgs {
    /// Long-format CSV with header t,row_id,col_id,value.
    panel: PathBuf,
    /// CSV with header col_id,transform applied before estimation.
    #[arg(long)]
    transforms: Option<PathBuf>,
    /// File with one row id per line fixing the row order.
    #[arg(long)]
    row_order: Option<PathBuf>,
    /// File with one column id per line fixing the column order.
    #[arg(long)]
    col_order: Option<PathBuf>,
    /// Whether centring happens on the transformed panel or on the raw levels.
    #[arg(long, value_enum, default_value = "after-transform")]
    demean_stage: DemeanStage,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DemeanStage {
    AfterTransform,
    BeforeTransform,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Fix the ranks as K,R instead of selecting them.
    #[arg(long, value_parser = parse_ranks)]
    ranks: Option<(usize, usize)>,
    #[arg(long, default_value = "reweighted")]
    method: Method,
    #[arg(long, value_enum, default_value = "on")]
    demean: Switch,
    /// Search bound for rank selection: half, third or a number.
    #[arg(long, default_value = "half")]
    k_max: KMaxRule,
}

impl FitArgs {
    fn options_for(&self, input: &PanelArgs) -> FitOptions {
        let mut opts = self.options();
        if input.demean_stage == DemeanStage::BeforeTransform {
            // centring already happened in load_input
            opts.demean = false;
        }
        opts
    }

    fn options(&self) -> FitOptions {
        FitOptions {
            demean: self.demean.on(),
            method: self.method,
            k_max: self.k_max,
            ..FitOptions::default()
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to one method.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long, value_enum)]
    demean: Option<Switch>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("--config is required".into()))?;
        let mut cfg = RunConfig::load(path)?;
        if let Some(seed) = self.seed {
            cfg.simulation.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(m) = self.method {
            cfg.methods = vec![m];
        }
        if let Some(d) = self.demean {
            cfg.fit.demean = d.on();
        }
        Ok(cfg)
    }
}

fn parse_ranks(s: &str) -> std::result::Result<(usize, usize), String> {
    let (k, r) = s.split_once(',').ok_or("expected K,R")?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((parse(k)?, parse(r)?))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            eprintln!("{}", json!({"error": "Usage", "message": message.trim()}));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Estimate {
            input,
            fit,
            varimax,
            kaiser,
            out,
        } => {
            let (panel, lag) = load_input(&input, &fit)?;
            let decomposition = Decomposition::new(&panel.series, &fit.options_for(&input))?;
            let est = decomposition.fit(fit.ranks)?;
            fs::create_dir_all(&out)?;
            write_loadings(&out.join("row_loadings.csv"), "row_id", &panel.row_ids, &est.r_hat)?;
            write_loadings(&out.join("col_loadings.csv"), "col_id", &panel.col_ids, &est.c_hat)?;
            write_factors(&out.join("factors.csv"), &est)?;
            let mut meta = metadata(&panel, &decomposition, &est, lag);
            if varimax {
                let opts = VarimaxOptions {
                    kaiser_normalize: kaiser,
                    ..VarimaxOptions::default()
                };
                let vr = varimax_with(&est.r_hat, &opts);
                let vc = varimax_with(&est.c_hat, &opts);
                write_loadings(&out.join("row_loadings_varimax.csv"), "row_id", &panel.row_ids, &vr.rotated)?;
                write_loadings(&out.join("col_loadings_varimax.csv"), "col_id", &panel.col_ids, &vc.rotated)?;
                meta["varimax"] = json!({
                    "kaiser_normalize": kaiser,
                    "row_rotation": rows_of(&vr.rotation),
                    "col_rotation": rows_of(&vc.rotation),
                });
            }
            fs::write(out.join("metadata.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
            println!("wrote estimates with (k, r) = ({}, {}) to {}", est.k, est.r, out.display());
        }
        Command::Impute { input, fit, out } => {
            let (panel, _) = load_input(&input, &fit)?;
            let est = Decomposition::new(&panel.series, &fit.options_for(&input))?.fit(fit.ranks)?;
            let completed = Panel {
                series: MaskedSeries::fully_observed(impute(&est, &panel.series)?)?,
                row_ids: panel.row_ids,
                col_ids: panel.col_ids,
            };
            fs::create_dir_all(&out)?;
            save_panel(out.join("imputed.csv"), &completed)?;
            println!("wrote {}", out.join("imputed.csv").display());
        }
        Command::Simulate { run } => {
            let cfg = run.load()?;
            let report = campaign(&cfg)?;
            for path in write_report(&report, &cfg.output)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Ranks { input, fit } => {
            let (panel, _) = load_input(&input, &fit)?;
            let options = fit.options_for(&input);
            let d = Decomposition::new(&panel.series, &options)?;
            println!("axis,j,eigenvalue,ratio");
            for (axis, eig) in [("row", d.row_eigenvalues()), ("column", d.col_eigenvalues())] {
                let ratios = eigen_ratios(eig, options.k_max.bound(eig.len()), options.floor_ratio);
                for (j, &v) in eig.iter().enumerate() {
                    let ratio = ratios.get(j).copied().flatten().map(fmt_num).unwrap_or_default();
                    println!("{axis},{},{},{ratio}", j + 1, fmt_num(v));
                }
            }
            let (k, r) = d.select_ranks()?;
            println!("selected k_hat={k} r_hat={r}");
        }
        Command::Qqdata { run, report } => {
            let (report, dir) = match report {
                Some(path) => {
                    let report: McReport = serde_json::from_str(&fs::read_to_string(&path)?)?;
                    let dir = run.out.clone().unwrap_or_else(|| PathBuf::from("out"));
                    (report, dir)
                }
                None => {
                    let cfg = run.load()?;
                    (campaign(&cfg)?, cfg.output.dir.clone())
                }
            };
            if report.summaries.iter().all(|s| s.normality.is_none()) {
                return Err(Error::TooFewReplications {
                    got: report.records.len(),
                    min: matfactor::evaluation::MIN_NORMALITY_REPS,
                });
            }
            for path in write_normality(&report, &dir)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn campaign(cfg: &RunConfig) -> Result<McReport> {
    run_monte_carlo(&cfg.simulation, &cfg.methods, &cfg.fit)
}

/// Loads the panel and applies the optional transforms; returns the number
/// of leading periods the transforms consumed. With `--demean-stage
/// before-transform` the raw levels are centred here, before transforming.
fn load_input(args: &PanelArgs, fit: &FitArgs) -> Result<(Panel, usize)> {
    let orderings = Orderings {
        rows: args.row_order.as_ref().map(read_ordering).transpose()?,
        cols: args.col_order.as_ref().map(read_ordering).transpose()?,
    };
    let mut panel = load_panel_with(&args.panel, &orderings)?;
    if args.demean_stage == DemeanStage::BeforeTransform && fit.demean.on() {
        panel.series = matfactor::panel::demean(&panel.series)?.0;
    }
    let mut lag = 0;
    if let Some(path) = &args.transforms {
        let spec = read_transforms(path, &panel.col_ids)?;
        lag = spec.iter().map(|t| t.order()).max().unwrap_or(0);
        panel.series = transform_series(&panel.series, &spec)?;
    }
    Ok((panel, lag))
}

fn write_loadings(path: &Path, id_header: &str, ids: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::from(id_header);
    for j in 0..m.ncols() {
        out += &format!(",f{}", j + 1);
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out += id;
        for j in 0..m.ncols() {
            out += &format!(",{}", fmt_num(m[(i, j)]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_factors(path: &Path, est: &FactorFit) -> Result<()> {
    let mut out = String::from("t,i,j,value\n");
    for (t, f) in est.f_hat.iter().enumerate() {
        for i in 0..f.nrows() {
            for j in 0..f.ncols() {
                out += &format!("{},{},{},{}\n", t + 1, i + 1, j + 1, fmt_num(f[(i, j)]));
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn metadata(panel: &Panel, d: &Decomposition, est: &FactorFit, lag: usize) -> serde_json::Value {
    let s = &panel.series;
    json!({
        "rows": s.rows(),
        "cols": s.cols(),
        "periods": s.len(),
        "periods_dropped_by_transforms": lag,
        "observed_fraction": matfactor::panel::observed_fraction(s),
        "options": d.options(),
        "k": est.k,
        "r": est.r,
        "row_eigenvalues": d.row_eigenvalues(),
        "col_eigenvalues": d.col_eigenvalues(),
    })
}
