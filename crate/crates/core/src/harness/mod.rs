//! Config-driven experiment runner.
//!
//! [`run_experiment`] calibrates the three bandwidth constants, draws one
//! training sample per sample size (shared across replicates unless
//! `fresh_sample_per_replicate` is set) and one shared test sample, fits
//! every requested method per replicate on a rayon pool, and writes
//! `results.csv`, `summary.json` and `calibration.json` to the output
//! directory.

pub mod cli;
mod summary;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::densities::{DensityModel, ModelDescriptor};
use crate::error::{Error, Result};
use crate::kde::{cv_calibrate, BandwidthShape, CvGrid};
use crate::kernels::{build_order_kernel, KernelSpec};
use crate::network::TrainSchedule;
use crate::rng::derive_seed;
use crate::twostage::{
    evaluate_on, fit_fd, fit_kde_reference, fit_sd, EstimatorHandle, Method, NetworkFitConfig,
    TestSet,
};

pub use summary::{
    emit_plot_data, least_squares, nearest_rank_quantiles, read_results, summarize, PlotKind,
    Summary, SummaryEntry,
};

/// Environment variable consulted when no thread count is given.
pub const THREADS_ENV: &str = "DENSELEAF_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_step: f64,
    pub folds: usize,
    pub n_cal: usize,
    pub n_datasets: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            grid_lo: 0.05,
            grid_hi: 1.1,
            grid_step: 0.005,
            folds: 50,
            n_cal: 200,
            n_datasets: 5,
        }
    }
}

/// Declarative description of one simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelDescriptor,
    /// Total training sample sizes; each must be even.
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub calibration: CalibrationSettings,
    pub n_test: usize,
    pub schedule: TrainSchedule,
    /// Kernel order used by every method.
    pub kernel_order: usize,
    /// Network output clamp; the model's sup bound when absent.
    pub sup_cap: Option<f64>,
    pub phi_exponent: f64,
    pub fd_self_inclusion: bool,
    /// Draw a new training sample for every replicate instead of sharing one.
    pub fresh_sample_per_replicate: bool,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Wall-clock times make `results.csv` differ between runs, so they are
    /// recorded only on request.
    pub record_wall_time: bool,
    /// Write every fitted handle's JSON manifest under `handles/`.
    pub save_handles: bool,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk_scale()
    }
}

impl ExperimentConfig {
    /// NBm, d = 4, sample sizes 200 and 1000, 10 replicates, 10^5 test points.
    pub fn desk_scale() -> Self {
        Self {
            model: ModelDescriptor::new(crate::densities::Family::NBm, 4, 0),
            sample_sizes: vec![200, 1000],
            replicates: 10,
            methods: vec![Method::SD, Method::FD, Method::KDE],
            calibration: CalibrationSettings::default(),
            n_test: 100_000,
            schedule: TrainSchedule::default(),
            kernel_order: 0,
            sup_cap: None,
            phi_exponent: 0.5,
            fd_self_inclusion: true,
            fresh_sample_per_replicate: false,
            master_seed: 0,
            output_dir: PathBuf::from("denseleaf-out"),
            record_wall_time: false,
            save_handles: false,
            threads: None,
        }
    }

    /// d = 12, sample sizes 200 to 25000, 50 replicates, 10^6 test points.
    pub fn paper_scale() -> Self {
        Self {
            model: ModelDescriptor::new(crate::densities::Family::NBm, 12, 0),
            sample_sizes: vec![200, 1000, 5000, 25_000],
            replicates: 50,
            n_test: 1_000_000,
            ..Self::desk_scale()
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.sample_sizes.is_empty() {
            return bad("sample_sizes must not be empty".into());
        }
        if let Some(n) = self.sample_sizes.iter().find(|&&n| n < 4 || n % 2 != 0) {
            return bad(format!("sample size {n} must be even and at least 4"));
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return bad("methods contain duplicates".into());
        }
        let c = &self.calibration;
        if !(c.grid_lo < c.grid_hi) {
            return bad(format!(
                "grid_lo {} must be below grid_hi {}",
                c.grid_lo, c.grid_hi
            ));
        }
        if c.n_datasets == 0 || c.n_cal < 4 || c.folds < 2 || c.folds > c.n_cal / 2 {
            return bad("calibration needs n_datasets >= 1 and 2 <= folds <= n_cal/2".into());
        }
        if self.n_test == 0 {
            return bad("n_test must be at least 1".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        if let Some(f) = self.sup_cap {
            if !(f >= 1.0 && f.is_finite()) {
                return bad(format!("sup_cap {f} must be finite and at least 1"));
            }
        }
        self.schedule
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// One fitted and evaluated replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub d: usize,
    pub n: usize,
    pub method: Method,
    pub replicate: usize,
    pub seed: u64,
    pub train_error: f64,
    pub test_error: f64,
    pub zero_baseline: f64,
    pub optimization_gap_proxy: f64,
    pub wall_time_seconds: Option<f64>,
    pub error: Option<String>,
}

/// Bandwidth constants for the SD, FD and KDE methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// Seed of the replicate `(model, d, n, method, replicate)`.
pub fn row_seed(
    master: u64,
    model: &str,
    d: usize,
    n: usize,
    method: Method,
    replicate: usize,
) -> u64 {
    derive_seed(master, &format!("{model}|{d}|{n}|{method}|{replicate}"))
}

/// Runs the cross-validation calibration on `n_datasets` fresh samples of
/// size `n_cal`. `c1` uses the first half of each sample, the size the SD
/// kernel stage sees; `c2` and `c3` use the whole sample.
pub fn calibrate(
    cfg: &ExperimentConfig,
    model: &DensityModel,
    kernel: &KernelSpec,
) -> Result<CalibratedConstants> {
    let c = &cfg.calibration;
    let tag = model.tag();
    let sets = (0..c.n_datasets)
        .map(|i| {
            model.sample(
                c.n_cal,
                derive_seed(
                    cfg.master_seed,
                    &format!("calibration|{tag}|{}|{i}", model.dim()),
                ),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let halves = sets
        .iter()
        .map(|s| s.slice(0..c.n_cal / 2))
        .collect::<Result<Vec<_>>>()?;
    let grid = CvGrid {
        grid_lo: c.grid_lo,
        grid_hi: c.grid_hi,
        grid_step: c.grid_step,
        folds: c.folds,
        seed: derive_seed(cfg.master_seed, "cv-folds"),
    };
    let beta = model.declared_beta();
    Ok(CalibratedConstants {
        c1: cv_calibrate(&halves, kernel, &grid, BandwidthShape::Theory)?,
        c2: cv_calibrate(&sets, kernel, &grid, BandwidthShape::Theory)?,
        c3: cv_calibrate(&sets, kernel, &grid, BandwidthShape::KdeReference { beta })?,
    })
}

/// Thread count from the flag, then [`THREADS_ENV`], then rayon's default.
pub fn resolve_threads(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()?
            .trim()
            .parse()
            .ok()
            .filter(|&t| t > 0)
    })
}

struct Job {
    n: usize,
    method: Method,
    replicate: usize,
}

/// Runs the full study and persists its outputs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = resolve_threads(cfg.threads) {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::invalid(e.to_string()))?;
    pool.install(|| run_in_pool(cfg))
}

fn run_in_pool(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let model = cfg.model.build()?;
    let kernel = build_order_kernel(cfg.kernel_order)?;
    let tag = model.tag().to_string();
    let d = model.dim();
    let consts = calibrate(cfg, &model, &kernel)?;
    let test = TestSet::draw(
        &model,
        cfg.n_test,
        derive_seed(cfg.master_seed, &format!("test|{tag}|{d}")),
    )?;
    let fit_cfg = NetworkFitConfig {
        schedule: cfg.schedule.clone(),
        sup_cap: cfg.sup_cap.unwrap_or_else(|| model.sup_bound()),
        phi_exponent: cfg.phi_exponent,
        fd_self_inclusion: cfg.fd_self_inclusion,
    };

    let sample_for = |n: usize, rep: Option<usize>| -> Result<Dataset> {
        let label = match rep {
            Some(r) => format!("sample|{tag}|{d}|{n}|{r}"),
            None => format!("sample|{tag}|{d}|{n}"),
        };
        model.sample(n, derive_seed(cfg.master_seed, &label))
    };
    let shared: BTreeMap<usize, Dataset> = if cfg.fresh_sample_per_replicate {
        BTreeMap::new()
    } else {
        cfg.sample_sizes
            .iter()
            .map(|&n| Ok((n, sample_for(n, None)?)))
            .collect::<Result<_>>()?
    };

    let mut jobs = Vec::new();
    for &n in &cfg.sample_sizes {
        for &method in &cfg.methods {
            let reps = if method.is_network() {
                cfg.replicates
            } else {
                1
            };
            jobs.extend((0..reps).map(|replicate| Job {
                n,
                method,
                replicate,
            }));
        }
    }

    let handle_dir = cfg.output_dir.join("handles");
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    if cfg.save_handles {
        fs::create_dir_all(&handle_dir).map_err(|e| Error::io(&handle_dir, e))?;
    }

    let mut rows: Vec<ResultRow> = jobs
        .par_iter()
        .map(|job| {
            let seed = row_seed(cfg.master_seed, &tag, d, job.n, job.method, job.replicate);
            let start = Instant::now();
            let outcome = (|| -> Result<(EstimatorHandle, crate::twostage::RiskReport)> {
                let fresh;
                let data = match shared.get(&job.n) {
                    Some(s) => s,
                    None => {
                        fresh = sample_for(job.n, Some(job.replicate))?;
                        &fresh
                    }
                };
                let handle = match job.method {
                    Method::SD => fit_sd(data, &kernel, consts.c1, &fit_cfg, seed)?,
                    Method::FD => fit_fd(data, &kernel, consts.c2, &fit_cfg, seed)?,
                    Method::KDE => {
                        fit_kde_reference(data, &kernel, consts.c3, model.declared_beta())?
                    }
                };
                let report = evaluate_on(&handle, &test)?;
                Ok((handle, report))
            })();
            let elapsed = cfg.record_wall_time.then(|| start.elapsed().as_secs_f64());
            let mut row = ResultRow {
                model: tag.clone(),
                d,
                n: job.n,
                method: job.method,
                replicate: job.replicate,
                seed,
                train_error: f64::NAN,
                test_error: f64::NAN,
                zero_baseline: f64::NAN,
                optimization_gap_proxy: f64::NAN,
                wall_time_seconds: elapsed,
                error: None,
            };
            match outcome {
                Ok((handle, report)) => {
                    row.train_error = report.train_error;
                    row.test_error = report.test_error;
                    row.zero_baseline = report.zero_baseline;
                    if cfg.save_handles {
                        let name = format!(
                            "{tag}_d{d}_n{}_{}_r{}.json",
                            job.n, job.method, job.replicate
                        );
                        if let Err(e) = handle.to_json().and_then(|j| {
                            let p = handle_dir.join(&name);
                            fs::write(&p, j).map_err(|e| Error::io(p, e))
                        }) {
                            row.error = Some(e.to_string());
                        }
                    }
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect();

    fill_gap_proxy(&mut rows);
    write_results(&cfg.output_dir.join("results.csv"), &rows)?;
    let summary = summarize(&rows);
    let path = cfg.output_dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    let path = cfg.output_dir.join("calibration.json");
    fs::write(&path, serde_json::to_string_pretty(&consts)?).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

/// Final training loss minus the smallest final training loss among the
/// successful replicates of the same `(model, d, n, method)`.
pub fn fill_gap_proxy(rows: &mut [ResultRow]) {
    let mut best: BTreeMap<(String, usize, usize, Method), f64> = BTreeMap::new();
    for r in rows
        .iter()
        .filter(|r| r.error.is_none() && r.train_error.is_finite())
    {
        let e = best
            .entry((r.model.clone(), r.d, r.n, r.method))
            .or_insert(f64::INFINITY);
        *e = e.min(r.train_error);
    }
    for r in rows.iter_mut() {
        r.optimization_gap_proxy = match best.get(&(r.model.clone(), r.d, r.n, r.method)) {
            Some(m) if r.error.is_none() && r.train_error.is_finite() => r.train_error - m,
            _ => f64::NAN,
        };
    }
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends rows to `path`, writing the header first if the file is new.
pub fn append_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let exists = path.exists() && fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(!exists)
        .from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::Family;

    fn row(method: Method, rep: usize, train: f64) -> ResultRow {
        ResultRow {
            model: "NBm".into(),
            d: 2,
            n: 200,
            method,
            replicate: rep,
            seed: 0,
            train_error: train,
            test_error: 1.0,
            zero_baseline: 2.0,
            optimization_gap_proxy: f64::NAN,
            wall_time_seconds: None,
            error: None,
        }
    }

    #[test]
    fn default_profile_is_valid() {
        ExperimentConfig::desk_scale().validate().unwrap();
        ExperimentConfig::paper_scale().validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let mut c = ExperimentConfig::desk_scale();
        c.replicates = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::desk_scale();
        c.sample_sizes = vec![201];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk_scale();
        c.calibration.grid_lo = 2.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk_scale();
        c.methods = vec![Method::SD, Method::SD];
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"replicates": 3, "methods": ["KDE"]}"#).unwrap();
        assert_eq!(c.replicates, 3);
        assert_eq!(c.sample_sizes, vec![200, 1000]);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn seeds_depend_on_every_key() {
        let base = row_seed(1, "NBm", 4, 200, Method::SD, 0);
        assert_eq!(base, row_seed(1, "NBm", 4, 200, Method::SD, 0));
        assert_ne!(base, row_seed(2, "NBm", 4, 200, Method::SD, 0));
        assert_ne!(base, row_seed(1, "NBs", 4, 200, Method::SD, 0));
        assert_ne!(base, row_seed(1, "NBm", 3, 200, Method::SD, 0));
        assert_ne!(base, row_seed(1, "NBm", 4, 1000, Method::SD, 0));
        assert_ne!(base, row_seed(1, "NBm", 4, 200, Method::FD, 0));
        assert_ne!(base, row_seed(1, "NBm", 4, 200, Method::SD, 1));
    }

    #[test]
    fn gap_proxy() {
        let mut rows = vec![
            row(Method::SD, 0, 0.3),
            row(Method::SD, 1, 0.1),
            row(Method::KDE, 0, f64::NAN),
        ];
        fill_gap_proxy(&mut rows);
        assert!((rows[0].optimization_gap_proxy - 0.2).abs() < 1e-15);
        assert_eq!(rows[1].optimization_gap_proxy, 0.0);
        assert!(rows[2].optimization_gap_proxy.is_nan());
    }

    #[test]
    fn append_writes_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        append_results(&p, &[row(Method::SD, 0, 0.1)]).unwrap();
        append_results(&p, &[row(Method::SD, 1, 0.2)]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(read_results(&p).unwrap().len(), 2);
    }

    #[test]
    fn kde_only_run_has_one_row_per_size() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            model: ModelDescriptor::new(Family::Linear, 1, 0),
            sample_sizes: vec![40, 60],
            replicates: 1,
            methods: vec![Method::KDE],
            calibration: CalibrationSettings {
                n_cal: 40,
                n_datasets: 1,
                folds: 5,
                ..Default::default()
            },
            n_test: 500,
            output_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::desk_scale()
        };
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows
            .iter()
            .all(|r| r.error.is_none() && r.test_error >= 0.0));
        assert!(dir.path().join("summary.json").exists());
    }
}
