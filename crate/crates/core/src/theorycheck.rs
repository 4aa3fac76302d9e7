//! Quadrature and Monte-Carlo checks of the probabilistic bounds behind the
//! two-stage estimator.
//!
//! Every check produces a [`CheckReport`] with `pass = lhs <= rhs + slack`.
//! Monte-Carlo slack is three combined standard errors.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities::{DensityModel, Family, ModelDescriptor};
use crate::error::{Error, Result};
use crate::kde::ProductKde;
use crate::kernels::KernelSpec;
use crate::quadrature::GaussLegendre;
use crate::rng::{self, derive_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub trials: usize,
    pub pass: bool,
    /// Set when the estimate cannot decide the inequality, e.g. an empirical
    /// right-hand side of exactly zero facing a positive left-hand side.
    pub inconclusive: bool,
}

impl CheckReport {
    fn new(name: impl Into<String>, lhs: f64, rhs: f64, slack: f64, trials: usize) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            slack,
            trials,
            pass: lhs <= rhs + slack,
            inconclusive: false,
        }
    }
}

/// Writes one JSON object per report and line.
pub fn write_json_lines<W: Write>(mut out: W, reports: &[CheckReport]) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<report stream>", e))?;
    }
    Ok(())
}

/// A bounded per-point statistic `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Statistic {
    /// Indicator of the closed box `[lo, hi]`.
    BoxIndicator { lo: Vec<f64>, hi: Vec<f64> },
    /// The first coordinate.
    FirstCoordinate,
}

impl Statistic {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Statistic::BoxIndicator { lo, hi } => {
                let inside = x
                    .iter()
                    .zip(lo)
                    .zip(hi)
                    .all(|((v, l), h)| *v >= *l && *v <= *h);
                f64::from(u8::from(inside))
            }
            Statistic::FirstCoordinate => x[0],
        }
    }
}

/// The event `Σ h(X_i) ∈ A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdSet {
    All,
    AtLeast { t: f64 },
    AtMost { t: f64 },
    Interval { lo: f64, hi: f64 },
}

impl ThresholdSet {
    fn contains(&self, v: f64) -> bool {
        match *self {
            ThresholdSet::All => true,
            ThresholdSet::AtLeast { t } => v >= t,
            ThresholdSet::AtMost { t } => v <= t,
            ThresholdSet::Interval { lo, hi } => v >= lo && v <= hi,
        }
    }
}

const CHUNK: usize = 1024;

/// Runs `trials` independent Bernoulli experiments in fixed-size chunks with
/// their own streams, so the result does not depend on the thread count.
fn count_hits(
    trials: usize,
    seed: u64,
    label: &str,
    f: impl Fn(&mut rng::StreamRng) -> bool + Sync,
) -> usize {
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(derive_seed(seed, &format!("{label}|{c}")));
            let len = CHUNK.min(trials - c * CHUNK);
            (0..len).filter(|_| f(&mut r)).count()
        })
        .sum()
}

/// Compares `P(Σ_{i≤n} h(X_i) ∈ A)` with `√(2eπn) P(Σ_{i≤M} h(X_i) ∈ A)`,
/// `M ~ Poisson(n)`, both estimated from `trials` draws.
pub fn check_poissonization(
    model: &DensityModel,
    n: usize,
    statistic: &Statistic,
    set: &ThresholdSet,
    trials: usize,
    seed: u64,
) -> Result<CheckReport> {
    if trials < 10_000 {
        return Err(Error::invalid(format!(
            "need at least 10^4 trials, got {trials}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    if let Statistic::BoxIndicator { lo, hi } = statistic {
        if lo.len() != model.dim() || hi.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: lo.len().min(hi.len()),
            });
        }
    }
    let d = model.dim();
    let poisson = Poisson::new(n as f64).map_err(|e| Error::invalid(e.to_string()))?;
    let sum_of = |r: &mut rng::StreamRng, count: usize| {
        let mut x = vec![0.0; d];
        let mut s = 0.0;
        for _ in 0..count {
            model.sample_into(r, &mut x);
            s += statistic.eval(&x);
        }
        s
    };
    let fixed = count_hits(trials, seed, "fixed", |r| set.contains(sum_of(r, n)));
    let poissonized = count_hits(trials, seed, "poisson", |r| {
        let m = poisson.sample(r) as usize;
        set.contains(sum_of(r, m))
    });
    let t = trials as f64;
    let p1 = fixed as f64 / t;
    let p2 = poissonized as f64 / t;
    let factor = (2.0 * std::f64::consts::E * std::f64::consts::PI * n as f64).sqrt();
    let se1 = (p1 * (1.0 - p1) / t).sqrt();
    let se2 = factor * (p2 * (1.0 - p2) / t).sqrt();
    let mut report = CheckReport::new(
        "poissonization",
        p1,
        factor * p2,
        3.0 * (se1 * se1 + se2 * se2).sqrt(),
        trials,
    );
    report.inconclusive = poissonized == 0 && fixed > 0;
    Ok(report)
}

/// `h^β d^β ‖K‖_∞^d F`.
pub fn bias_bound_value(h: f64, beta: f64, d: usize, kernel: &KernelSpec, f: f64) -> f64 {
    h.powf(beta) * (d as f64).powf(beta) * kernel.sup_norm().powi(d as i32) * f
}

/// `65 F² 2^{2d} ‖K‖_∞^{2d}`.
pub fn noise_variance_bound_value(d: usize, kernel: &KernelSpec, f: f64) -> f64 {
    65.0 * f * f * 4f64.powi(d as i32) * kernel.sup_norm().powi(2 * d as i32)
}

/// Tensor Gauss–Legendre rule on the kernel window `[x - h, x + h]`.
struct WindowRule {
    nodes: Vec<(f64, f64)>,
}

impl WindowRule {
    fn new(panels: usize) -> Self {
        let nodes = GaussLegendre::new(8).composite_points(-1.0, 1.0, panels);
        Self { nodes }
    }

    /// `∫ h^{-d} Π K((u - x)/h) f_0(u) du = ∫_{[-1,1]^d} Π K(t) f_0(x + h t) dt`.
    fn smoothed(&self, truth: &DensityModel, kernel: &KernelSpec, h: f64, x: &[f64]) -> f64 {
        let d = x.len();
        let m = self.nodes.len();
        let kv: Vec<f64> = self
            .nodes
            .iter()
            .map(|(t, w)| w * kernel.eval(*t))
            .collect();
        let mut idx = vec![0usize; d];
        let mut u = vec![0.0; d];
        let mut total = 0.0;
        loop {
            let mut weight = 1.0;
            for r in 0..d {
                weight *= kv[idx[r]];
                u[r] = x[r] + h * self.nodes[idx[r]].0;
            }
            if weight != 0.0 {
                total += weight * truth.eval_unchecked(&u);
            }
            let mut r = 0;
            loop {
                if r == d {
                    return total;
                }
                idx[r] += 1;
                if idx[r] < m {
                    break;
                }
                idx[r] = 0;
                r += 1;
            }
        }
    }
}

fn kernel_matches_beta(kernel: &KernelSpec, beta: f64) -> bool {
    // orders 0 and 1 share the box kernel; accept both floor(β) and the
    // largest integer strictly below β
    let floor = beta.floor() as usize;
    let below = (beta.ceil() as usize).saturating_sub(1);
    let order = kernel.order();
    order == floor || order == below || (order <= 1 && floor <= 1)
}

/// Largest `|E[ε | X = x]|` over the probes, against `h^β d^β ‖K‖_∞^d F`
/// with `β` and `F` declared by the model.
pub fn check_bias_bound(
    truth: &DensityModel,
    kernel: &KernelSpec,
    h: f64,
    probes: &[Vec<f64>],
) -> Result<CheckReport> {
    let d = truth.dim();
    if d > 3 {
        return Err(Error::invalid(format!(
            "bias quadrature is limited to d <= 3, got {d}"
        )));
    }
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::invalid(format!("bandwidth {h} not in (0, 1)")));
    }
    let beta = truth.declared_beta();
    if !kernel_matches_beta(kernel, beta) {
        return Err(Error::invalid(format!(
            "kernel order {} does not match smoothness {beta}",
            kernel.order()
        )));
    }
    if probes.is_empty() {
        return Err(Error::invalid("need at least one probe point"));
    }
    if let Some(p) = probes.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: p.len(),
        });
    }
    let rule = WindowRule::new(if d == 3 { 4 } else { 16 });
    let worst = probes
        .par_iter()
        .map(|x| (rule.smoothed(truth, kernel, h, x) - truth.eval_unchecked(x)).abs())
        .reduce(|| 0.0, f64::max);
    let bound = bias_bound_value(h, beta, d, kernel, truth.sup_bound());
    // quadrature is deterministic; allow only rounding-level slack
    Ok(CheckReport::new(
        "bias_bound",
        worst,
        bound,
        1e-12 * bound.max(1.0),
        probes.len(),
    ))
}

/// Monte-Carlo estimate of `E|ε - E[ε | X]|²` for the response built from a
/// kernel sample of size `n`, against `65 F² 2^{2d} ‖K‖_∞^{2d}`.
pub fn check_noise_variance(
    truth: &DensityModel,
    kernel: &KernelSpec,
    h: f64,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<CheckReport> {
    let d = truth.dim();
    if d > 3 {
        return Err(Error::invalid(format!(
            "noise quadrature is limited to d <= 3, got {d}"
        )));
    }
    if trials < 10_000 {
        return Err(Error::invalid(format!(
            "need at least 10^4 trials, got {trials}"
        )));
    }
    if n == 0 || !(h > 0.0) {
        return Err(Error::invalid("need n >= 1 and h > 0"));
    }
    let rule = WindowRule::new(if d == 3 { 2 } else { 8 });
    let chunks = trials.div_ceil(CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<(f64, f64)> {
            let mut r = rng::stream(derive_seed(seed, &format!("noise|{c}")));
            let len = CHUNK.min(trials - c * CHUNK);
            let mut x = vec![0.0; d];
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..len {
                truth.sample_into(&mut r, &mut x);
                let sample_seed: u64 = r.random();
                let ks = truth.sample(n, sample_seed)?;
                let y = ProductKde::new(&ks, kernel.clone(), h)?.eval_point(&x);
                let centered = y - rule.smoothed(truth, kernel, h, &x);
                let v = centered * centered;
                s1 += v;
                s2 += v * v;
            }
            Ok((s1, s2))
        })
        .collect::<Result<_>>()?;
    let t = trials as f64;
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let mean = s1 / t;
    let var = ((s2 / t) - mean * mean).max(0.0) * t / (t - 1.0);
    let se = (var / t).sqrt();
    let bound = noise_variance_bound_value(d, kernel, truth.sup_bound());
    Ok(CheckReport::new(
        "noise_variance",
        mean,
        bound,
        3.0 * se,
        trials,
    ))
}

/// The standard battery: the n = 5 Poissonization instance on the uniform
/// density, the bias bound on the linear product density (d = 1, 2, β = 1,
/// h = 2^-2 .. 2^-6, interior probes) and the noise variance of a box-kernel
/// estimate in d = 1.
pub fn default_battery(trials: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let uniform = ModelDescriptor::new(Family::Uniform, 1, 0).build()?;
    let half = Statistic::BoxIndicator {
        lo: vec![0.0],
        hi: vec![0.5],
    };
    out.push(check_poissonization(
        &uniform,
        5,
        &half,
        &ThresholdSet::AtLeast { t: 5.0 },
        trials,
        derive_seed(seed, "poissonization"),
    )?);
    let order_one = crate::kernels::build_order_kernel(1)?;
    for d in 1..=2 {
        let linear = ModelDescriptor::new(Family::Linear, d, 0).build()?;
        for k in 2..=6 {
            let h = 0.5f64.powi(k);
            out.push(check_bias_bound(
                &linear,
                &order_one,
                h,
                &interior_probes(d, h, 5),
            )?);
        }
    }
    let linear = ModelDescriptor::new(Family::Linear, 1, 0).build()?;
    let n = 200;
    let h = crate::kde::theory_bandwidth(n, 1)?;
    out.push(check_noise_variance(
        &linear,
        &KernelSpec::box_kernel(),
        h,
        n,
        trials,
        derive_seed(seed, "noise"),
    )?);
    Ok(out)
}

/// A `per_axis^d` grid of points in `[h, 1 - h]^d`.
pub fn interior_probes(d: usize, h: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..per_axis)
        .map(|i| h + (1.0 - 2.0 * h) * (i as f64 + 0.5) / per_axis as f64)
        .collect();
    let mut out = vec![Vec::new()];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}
