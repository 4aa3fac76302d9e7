//! The `denseleaf` command line.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
//! failures while running.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{
    append_results, calibrate, emit_plot_data, resolve_threads, run_experiment, ExperimentConfig,
    PlotKind, ResultRow,
};
use crate::error::Error;
use crate::kernels::build_order_kernel;
use crate::network::{architecture_from_n, entropy_bound, rate_phi, CompositionDescriptor};
use crate::theorycheck::{default_battery, write_json_lines};
use crate::twostage::{evaluate, EstimatorHandle};

#[derive(Debug, Parser)]
#[command(
    name = "denseleaf",
    version,
    about = "Two-stage KDE + sparse ReLU network density estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in profile used when no config is given.
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long = "n-test")]
    n_test: Option<usize>,
    /// Worker threads; falls back to DENSELEAF_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cross-validate the bandwidth constants c1, c2, c3.
    Calibrate(Common),
    /// Run the full experiment and write results.csv and summary.json.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write boxplot and scatter plot data next to the results.
        #[arg(long)]
        plot_data: bool,
    },
    /// Evaluate a saved network handle and append a row to results.csv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        handle: PathBuf,
        /// Training sample size recorded in the row.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        replicate: usize,
    },
    /// Run the Monte-Carlo and quadrature checks; prints JSON lines.
    TheoryCheck {
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the reports to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the rate φ_n and the entropy bound for a composition.
    Rates {
        #[arg(long)]
        q: usize,
        /// Comma-separated smoothness indices, one per layer.
        #[arg(long, value_delimiter = ',', required = true)]
        alpha: Vec<f64>,
        /// Comma-separated active input counts, one per layer.
        #[arg(long, value_delimiter = ',', required = true)]
        t: Vec<usize>,
        #[arg(long)]
        n: u64,
        /// Input dimension of the network; defaults to t_0.
        #[arg(long)]
        d: Option<usize>,
        /// Entropy radius; defaults to 1/n.
        #[arg(long)]
        delta: Option<f64>,
        /// Sparsity; defaults to the full parameter count.
        #[arg(long)]
        s: Option<usize>,
    },
    /// Write plot data for an existing results.csv.
    Plot {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_parser = ["boxplot", "scatter"])]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Json(_) => Failure::Config(e.to_string()),
            Error::Io { ref path, .. } if path.extension().is_some_and(|x| x == "json") => {
                Failure::Config(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(Failure::Config(m)) => {
            let _ = writeln!(err, "error: {m}");
            1
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(err, "error: {m}");
            2
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => load_config_file(p)?,
        None => match c.profile {
            Profile::Desk => ExperimentConfig::desk_scale(),
            Profile::Paper => ExperimentConfig::paper_scale(),
        },
    };
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if let Some(r) = c.replicates {
        cfg.replicates = r;
    }
    if let Some(n) = c.n_test {
        cfg.n_test = n;
    }
    if c.threads.is_some() {
        cfg.threads = c.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_config_file(p: &Path) -> Result<ExperimentConfig, Failure> {
    if !p.is_file() {
        return Err(Failure::Config(format!(
            "config file not found: {}",
            p.display()
        )));
    }
    ExperimentConfig::from_json_file(p).map_err(|e| Failure::Config(e.to_string()))
}

fn io_fail(e: std::io::Error) -> Failure {
    Failure::Runtime(e.to_string())
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::Calibrate(common) => {
            let cfg = load_config(&common)?;
            let model = cfg.model.build()?;
            let kernel = build_order_kernel(cfg.kernel_order)?;
            let pool = pool(cfg.threads)?;
            let consts = pool.install(|| calibrate(&cfg, &model, &kernel))?;
            writeln!(
                out,
                "{}",
                serde_json::to_string(&consts).map_err(Error::from)?
            )
            .map_err(io_fail)?;
        }
        Command::Run { common, plot_data } => {
            let cfg = load_config(&common)?;
            let rows = run_experiment(&cfg)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            let results = cfg.output_dir.join("results.csv");
            if plot_data {
                emit_plot_data(&results, PlotKind::Boxplot, &cfg.output_dir)?;
                emit_plot_data(&results, PlotKind::Scatter, &cfg.output_dir)?;
            }
            writeln!(
                out,
                "wrote {} rows ({failed} failed) to {}",
                rows.len(),
                results.display()
            )
            .map_err(io_fail)?;
        }
        Command::Evaluate {
            common,
            handle,
            n,
            replicate,
        } => {
            let cfg = load_config(&common)?;
            let text = std::fs::read_to_string(&handle).map_err(|e| {
                Failure::Config(format!("cannot read handle {}: {e}", handle.display()))
            })?;
            let h = EstimatorHandle::network_from_json(&text)?;
            let model = cfg.model.build()?;
            let seed = crate::rng::derive_seed(cfg.master_seed, "evaluate");
            let report = pool(cfg.threads)?.install(|| evaluate(&h, &model, cfg.n_test, seed))?;
            let row = ResultRow {
                model: model.tag().to_string(),
                d: model.dim(),
                n: n.unwrap_or(h.provenance().rule_sample_size),
                method: h.method(),
                replicate,
                seed: h.provenance().seed,
                train_error: report.train_error,
                test_error: report.test_error,
                zero_baseline: report.zero_baseline,
                optimization_gap_proxy: f64::NAN,
                wall_time_seconds: None,
                error: None,
            };
            std::fs::create_dir_all(&cfg.output_dir).map_err(io_fail)?;
            append_results(&cfg.output_dir.join("results.csv"), &[row])?;
            writeln!(
                out,
                "{}",
                serde_json::to_string(&report).map_err(Error::from)?
            )
            .map_err(io_fail)?;
        }
        Command::TheoryCheck {
            trials,
            seed,
            out: file,
        } => {
            let reports = default_battery(trials, seed)?;
            write_json_lines(&mut *out, &reports)?;
            if let Some(p) = file {
                let f = std::fs::File::create(&p).map_err(io_fail)?;
                write_json_lines(std::io::BufWriter::new(f), &reports)?;
            }
            if reports.iter().any(|r| !r.pass) {
                return Err(Failure::Runtime("at least one check failed".into()));
            }
        }
        Command::Rates {
            q,
            alpha,
            t,
            n,
            d,
            delta,
            s,
        } => {
            let desc = CompositionDescriptor::new(q, t.clone(), alpha)
                .map_err(|e| Failure::Config(e.to_string()))?;
            let (phi, alpha_star) = rate_phi(&desc, n)?;
            writeln!(out, "phi_n {}", fmt_value(phi)).map_err(io_fail)?;
            let stars: Vec<String> = alpha_star.iter().map(|a| fmt_value(*a)).collect();
            writeln!(out, "alpha_star {}", stars.join(",")).map_err(io_fail)?;
            let d = d.unwrap_or(t[0]);
            let arch = architecture_from_n(n as usize, d, 1.0)?;
            let s = s.unwrap_or_else(|| arch.total_params());
            let delta = delta.unwrap_or(1.0 / n as f64);
            let e = entropy_bound(arch.depth(), d, 1, s, delta)?;
            writeln!(
                out,
                "entropy_bound {} (L={}, p0={d}, p_out=1, s={s}, delta={})",
                fmt_value(e),
                arch.depth(),
                fmt_value(delta)
            )
            .map_err(io_fail)?;
        }
        Command::Plot {
            results,
            kind,
            out: dir,
        } => {
            let kind: PlotKind = kind.parse()?;
            for p in emit_plot_data(&results, kind, &dir)? {
                writeln!(out, "{}", p.display()).map_err(io_fail)?;
            }
        }
    }
    Ok(())
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = resolve_threads(threads) {
        b = b.num_threads(t);
    }
    b.build().map_err(|e| Failure::Runtime(e.to_string()))
}

/// Twelve significant digits with trailing zeros dropped.
fn fmt_value(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return v.to_string();
    }
    let digits = (11 - v.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{v:.digits$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
