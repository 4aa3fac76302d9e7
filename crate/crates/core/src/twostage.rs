//! The split-data (SD) and full-data (FD) two-stage estimators, the plain
//! kernel density reference, and Monte-Carlo risk evaluation.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::densities::DensityModel;
use crate::error::{Error, Result};
use crate::kde::{generate_responses, resolve_bandwidth, BandwidthRule, ProductKde};
use crate::kernels::KernelSpec;
use crate::network::{
    architecture_from_n, init_glorot, prune_fraction_rule, train, NetworkArchitecture,
    NetworkParams, NetworkRecord, TrainSchedule,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    SD,
    FD,
    KDE,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::SD => "SD",
            Method::FD => "FD",
            Method::KDE => "KDE",
        }
    }

    pub fn is_network(self) -> bool {
        !matches!(self, Method::KDE)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SD" => Ok(Method::SD),
            "FD" => Ok(Method::FD),
            "KDE" => Ok(Method::KDE),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Settings shared by the two network estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkFitConfig {
    pub schedule: TrainSchedule,
    /// Output clamp `F`.
    pub sup_cap: f64,
    /// The pruning rule uses `φ_m = m^{-phi_exponent}`.
    pub phi_exponent: f64,
    /// Whether an FD response includes the point's own kernel term.
    pub fd_self_inclusion: bool,
}

impl Default for NetworkFitConfig {
    fn default() -> Self {
        Self {
            schedule: TrainSchedule::default(),
            sup_cap: 1.0,
            phi_exponent: 0.5,
            fd_self_inclusion: true,
        }
    }
}

/// Where a handle came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub bandwidth_constant: f64,
    pub bandwidth: f64,
    pub kernel_order: usize,
    /// Sample size `m` that drives the architecture and pruning rules.
    pub rule_sample_size: usize,
    pub prune_fraction: f64,
    /// Final full-data training MSE; `None` for kernel estimates.
    pub final_train_loss: Option<f64>,
    pub trace_len: usize,
    pub trace_min: Option<f64>,
    pub nonzero_fraction: Option<f64>,
    pub fraction_exceeding_one: Option<f64>,
    /// Pseudo-responses the network was fitted to.
    pub responses: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Payload {
    Network {
        arch: NetworkArchitecture,
        params: NetworkParams,
    },
    Kde(ProductKde),
}

/// A frozen estimator.
#[derive(Debug, Clone)]
pub struct EstimatorHandle {
    method: Method,
    payload: Payload,
    provenance: Provenance,
}

const EVAL_CHUNK: usize = 2048;

impl EstimatorHandle {
    pub fn method(&self) -> Method {
        self.method
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn dim(&self) -> usize {
        match &self.payload {
            Payload::Network { arch, .. } => arch.input_dim(),
            Payload::Kde(k) => k.dim(),
        }
    }

    pub fn network(&self) -> Option<(&NetworkArchitecture, &NetworkParams)> {
        match &self.payload {
            Payload::Network { arch, params } => Some((arch, params)),
            Payload::Kde(_) => None,
        }
    }

    pub fn kde(&self) -> Option<&ProductKde> {
        match &self.payload {
            Payload::Kde(k) => Some(k),
            Payload::Network { .. } => None,
        }
    }

    pub fn eval_point(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(match &self.payload {
            Payload::Network { arch, params } => params.forward_unchecked(arch, x),
            Payload::Kde(k) => k.eval_point(x),
        })
    }

    /// Estimates at row-major query points, in parallel over chunks.
    pub fn eval_flat(&self, queries: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if !queries.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: queries.len() % d,
            });
        }
        match &self.payload {
            Payload::Kde(k) => k.eval_flat(queries),
            Payload::Network { arch, params } => {
                let parts: Vec<Vec<f64>> = queries
                    .par_chunks(EVAL_CHUNK * d)
                    .map(|chunk| {
                        let view = ArrayView2::from_shape((chunk.len() / d, d), chunk)
                            .map_err(|e| Error::invalid(e.to_string()))?;
                        Ok(params.forward_batch(arch, view)?.to_vec())
                    })
                    .collect::<Result<_>>()?;
                Ok(parts.concat())
            }
        }
    }

    /// JSON manifest; networks embed their full parameter record.
    pub fn to_json(&self) -> Result<String> {
        let network = match &self.payload {
            Payload::Network { arch, params } => Some(params.to_record(arch, self.provenance.seed)),
            Payload::Kde(_) => None,
        };
        let manifest = HandleManifest {
            method: self.method,
            provenance: self.provenance.clone(),
            network,
        };
        Ok(serde_json::to_string(&manifest)?)
    }

    /// Rebuilds a network handle from [`to_json`](Self::to_json) output.
    /// Kernel handles carry no training rows in their manifest and cannot be
    /// restored this way.
    pub fn network_from_json(json: &str) -> Result<Self> {
        let m: HandleManifest = serde_json::from_str(json)?;
        let rec = m
            .network
            .ok_or_else(|| Error::invalid("manifest holds no network record"))?;
        let (arch, params, _) = rec.into_params()?;
        Ok(Self {
            method: m.method,
            payload: Payload::Network { arch, params },
            provenance: m.provenance,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HandleManifest {
    method: Method,
    provenance: Provenance,
    network: Option<NetworkRecord>,
}

fn check_pair_sample(data: &Dataset) -> Result<usize> {
    let total = data.len();
    if !total.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "sample size {total} is odd, expected 2n"
        )));
    }
    let n = total / 2;
    if n < 2 {
        return Err(Error::invalid(format!("need 2n >= 4 points, got {total}")));
    }
    Ok(n)
}

#[allow(clippy::too_many_arguments)]
fn fit_network(
    method: Method,
    x: &Dataset,
    responses: Vec<f64>,
    m: usize,
    kernel: &KernelSpec,
    c: f64,
    h: f64,
    cfg: &NetworkFitConfig,
    seed: u64,
) -> Result<EstimatorHandle> {
    let d = x.dim();
    let arch = architecture_from_n(m, d, cfg.sup_cap)?;
    let total = arch.total_params();
    let phi = (m as f64).powf(-cfg.phi_exponent);
    let prune_fraction = prune_fraction_rule(m, phi, total)?;
    let keep = total - (prune_fraction * total as f64).round() as usize;
    let arch = arch.with_target_nonzero(keep.max(1))?;
    let init = init_glorot(&arch, derive_seed(seed, "init"));
    let xv = ArrayView2::from_shape((x.len(), d), x.as_flat())
        .map_err(|e| Error::invalid(e.to_string()))?;
    let yv = ndarray::ArrayView1::from(&responses[..]);
    let out = train(
        init,
        &arch,
        xv,
        yv,
        &cfg.schedule,
        prune_fraction,
        derive_seed(seed, "batches"),
    )?;
    let trace_min = out.trace.iter().copied().fold(f64::INFINITY, f64::min);
    let provenance = Provenance {
        seed,
        bandwidth_constant: c,
        bandwidth: h,
        kernel_order: kernel.order(),
        rule_sample_size: m,
        prune_fraction,
        final_train_loss: Some(out.final_loss),
        trace_len: out.trace.len(),
        trace_min: Some(trace_min),
        nonzero_fraction: Some(out.nonzero_fraction),
        fraction_exceeding_one: Some(out.fraction_exceeding_one),
        responses,
    };
    Ok(EstimatorHandle {
        method,
        payload: Payload::Network {
            arch,
            params: out.params,
        },
        provenance,
    })
}

/// Split-data estimator: the first half of the sample is the regression
/// design, the second half builds the kernel estimate with bandwidth
/// `c1 (ln n/n)^{1/d}`.
pub fn fit_sd(
    data_2n: &Dataset,
    kernel: &KernelSpec,
    c1: f64,
    cfg: &NetworkFitConfig,
    seed: u64,
) -> Result<EstimatorHandle> {
    let n = check_pair_sample(data_2n)?;
    let d = data_2n.dim();
    let regression = data_2n.slice(0..n)?;
    let kernel_part = data_2n.slice(n..2 * n)?;
    let h = resolve_bandwidth(BandwidthRule::ScaledTheory { c: c1 }, n, d)?;
    let y = generate_responses(&kernel_part, &regression, kernel, h)?;
    fit_network(Method::SD, &regression, y, n, kernel, c1, h, cfg, seed)
}

/// Full-data responses: the estimate on all points evaluated at every point,
/// optionally leaving each point's own kernel term out.
pub fn full_data_responses(
    data: &Dataset,
    kernel: &KernelSpec,
    h: f64,
    self_inclusion: bool,
) -> Result<Vec<f64>> {
    let mut y = generate_responses(data, data, kernel, h)?;
    if !self_inclusion {
        let n = data.len() as f64;
        if data.len() < 2 {
            return Err(Error::invalid(
                "leave-one-out responses need at least two points",
            ));
        }
        let own = kernel.eval(0.0).powi(data.dim() as i32) / (n * h.powi(data.dim() as i32));
        for v in &mut y {
            *v = (*v - own) * n / (n - 1.0);
        }
    }
    Ok(y)
}

/// Full-data estimator: all `2n` points serve both steps, with bandwidth
/// `c2 (ln 2n/2n)^{1/d}` and `m = 2n` in the architecture and pruning rules.
pub fn fit_fd(
    data_2n: &Dataset,
    kernel: &KernelSpec,
    c2: f64,
    cfg: &NetworkFitConfig,
    seed: u64,
) -> Result<EstimatorHandle> {
    let n = check_pair_sample(data_2n)?;
    let m = 2 * n;
    let h = resolve_bandwidth(BandwidthRule::ScaledTheory { c: c2 }, m, data_2n.dim())?;
    let y = full_data_responses(data_2n, kernel, h, cfg.fd_self_inclusion)?;
    fit_network(Method::FD, data_2n, y, m, kernel, c2, h, cfg, seed)
}

/// Plain kernel estimate on all points with bandwidth `c3 N^{-1/(2β+d)}`,
/// `N` the number of points.
pub fn fit_kde_reference(
    data: &Dataset,
    kernel: &KernelSpec,
    c3: f64,
    beta: f64,
) -> Result<EstimatorHandle> {
    let h = resolve_bandwidth(
        BandwidthRule::KdeReference { c: c3, beta },
        data.len(),
        data.dim(),
    )?;
    let kde = ProductKde::new(data, kernel.clone(), h)?;
    Ok(EstimatorHandle {
        method: Method::KDE,
        payload: Payload::Kde(kde),
        provenance: Provenance {
            seed: data.seed,
            bandwidth_constant: c3,
            bandwidth: h,
            kernel_order: kernel.order(),
            rule_sample_size: data.len(),
            prune_fraction: 0.0,
            final_train_loss: None,
            trace_len: 0,
            trace_min: None,
            nonzero_fraction: None,
            fraction_exceeding_one: None,
            responses: Vec::new(),
        },
    })
}

/// Monte-Carlo risk estimate of one handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    /// Mean of `(f̂(T_i) - f_0(T_i))²` over the test draws.
    pub test_error: f64,
    /// Standard error of `test_error`.
    pub test_error_se: f64,
    /// Mean of `f_0(T_i)²`, the test error of the zero function.
    pub zero_baseline: f64,
    /// Final training MSE; NaN for kernel estimates.
    pub train_error: f64,
    /// Filled in by the harness once all replicates are known; NaN here.
    pub optimization_gap_proxy: f64,
    pub n_test: usize,
}

/// Test points drawn from the true density with the density cached at each.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub points: Dataset,
    pub truth: Vec<f64>,
}

impl TestSet {
    pub fn draw(truth: &DensityModel, n_test: usize, seed: u64) -> Result<Self> {
        if n_test == 0 {
            return Err(Error::invalid("n_test must be at least 1"));
        }
        let points = truth.sample(n_test, seed)?;
        let d = truth.dim();
        let values = points
            .as_flat()
            .par_chunks_exact(d)
            .map(|x| truth.eval_unchecked(x))
            .collect();
        Ok(Self {
            points,
            truth: values,
        })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }
}

/// Risk on a freshly drawn test sample of size `n_test`.
pub fn evaluate(
    handle: &EstimatorHandle,
    truth: &DensityModel,
    n_test: usize,
    seed: u64,
) -> Result<RiskReport> {
    let test = TestSet::draw(truth, n_test, seed)?;
    evaluate_on(handle, &test)
}

/// Risk on a prepared test sample.
pub fn evaluate_on(handle: &EstimatorHandle, test: &TestSet) -> Result<RiskReport> {
    if test.points.dim() != handle.dim() {
        return Err(Error::DimensionMismatch {
            expected: handle.dim(),
            found: test.points.dim(),
        });
    }
    let est = handle.eval_flat(test.points.as_flat())?;
    Ok(risk_from_values(
        &est,
        &test.truth,
        handle.provenance.final_train_loss,
    ))
}

fn risk_from_values(est: &[f64], truth: &[f64], train: Option<f64>) -> RiskReport {
    let n = truth.len() as f64;
    let sq: Vec<f64> = est
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t) * (e - t))
        .collect();
    let mean = sq.iter().sum::<f64>() / n;
    let var = if truth.len() > 1 {
        sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    RiskReport {
        test_error: mean,
        test_error_se: (var / n).sqrt(),
        zero_baseline: truth.iter().map(|t| t * t).sum::<f64>() / n,
        train_error: train.unwrap_or(f64::NAN),
        optimization_gap_proxy: f64::NAN,
        n_test: truth.len(),
    }
}
