//! Product-kernel density estimation and bandwidth selection.
//!
//! The estimator is `f(x) = 1/(n h^d) Σ_l Π_r K((X_lr - x_r)/h)` with a single
//! scalar bandwidth shared by all coordinates. Training rows are kept sorted
//! by their first coordinate so a query only visits rows inside its window.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{AutoConvolution, KernelSpec};
use crate::rng;

/// How a bandwidth is derived from the sample size and dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum BandwidthRule {
    /// The power of two in `[(ln n/n)^{1/d}, 2 (ln n/n)^{1/d}]`.
    TheoryPowerOfTwo,
    /// `c (ln n/n)^{1/d}`.
    ScaledTheory {
        c: f64,
    },
    /// `c n^{-1/(2β+d)}`.
    KdeReference {
        c: f64,
        beta: f64,
    },
    Fixed {
        h: f64,
    },
}

/// The bandwidth shape that calibration constants multiply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape")]
pub enum BandwidthShape {
    /// `(ln m/m)^{1/d}`
    Theory,
    /// `m^{-1/(2β+d)}`
    KdeReference { beta: f64 },
}

impl BandwidthShape {
    pub fn base(&self, n: usize, d: usize) -> Result<f64> {
        check_n_d(n, d)?;
        let nf = n as f64;
        Ok(match *self {
            BandwidthShape::Theory => (nf.ln() / nf).powf(1.0 / d as f64),
            BandwidthShape::KdeReference { beta } => {
                if !(beta > 0.0) {
                    return Err(Error::invalid("smoothness beta must be positive"));
                }
                nf.powf(-1.0 / (2.0 * beta + d as f64))
            }
        })
    }

    pub fn with_constant(&self, c: f64) -> BandwidthRule {
        match *self {
            BandwidthShape::Theory => BandwidthRule::ScaledTheory { c },
            BandwidthShape::KdeReference { beta } => BandwidthRule::KdeReference { c, beta },
        }
    }
}

fn check_n_d(n: usize, d: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "bandwidth rules need n >= 2, got {n}"
        )));
    }
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    Ok(())
}

/// The largest power of two not exceeding `u = 2 (ln n/n)^{1/d}`.
///
/// Such an `h` satisfies `u/2 <= h <= u` and `1/h` is a positive integer. If
/// rounding pushes `h` below `u/2` the exponent is bumped by one.
pub fn theory_bandwidth(n: usize, d: usize) -> Result<f64> {
    check_n_d(n, d)?;
    let lower = BandwidthShape::Theory.base(n, d)?;
    let upper = 2.0 * lower;
    let mut s = upper.log2().floor() as i32;
    if 2f64.powi(s) > upper {
        s -= 1;
    }
    if 2f64.powi(s) < lower {
        s += 1;
    }
    Ok(2f64.powi(s.min(0)))
}

pub fn resolve_bandwidth(rule: BandwidthRule, n: usize, d: usize) -> Result<f64> {
    let h = match rule {
        BandwidthRule::TheoryPowerOfTwo => theory_bandwidth(n, d)?,
        BandwidthRule::ScaledTheory { c } => c * BandwidthShape::Theory.base(n, d)?,
        BandwidthRule::KdeReference { c, beta } => {
            c * BandwidthShape::KdeReference { beta }.base(n, d)?
        }
        BandwidthRule::Fixed { h } => {
            if d == 0 {
                return Err(Error::invalid("dimension must be positive"));
            }
            h
        }
    };
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::OutOfDomain {
            value: h,
            domain: "bandwidth (0, 1]",
        });
    }
    Ok(h)
}

/// A frozen product-kernel density estimate.
#[derive(Debug, Clone)]
pub struct ProductKde {
    dim: usize,
    n: usize,
    /// Training rows sorted by first coordinate.
    sorted: Vec<f64>,
    first: Vec<f64>,
    kernel: KernelSpec,
    h: f64,
    norm: f64,
}

impl ProductKde {
    pub fn new(train: &Dataset, kernel: KernelSpec, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!(
                "bandwidth must be positive, got {h}"
            )));
        }
        let dim = train.dim();
        let n = train.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            train
                .row(a)
                .partial_cmp(train.row(b))
                .expect("dataset coordinates are finite")
        });
        let mut sorted = Vec::with_capacity(n * dim);
        for &i in &order {
            sorted.extend_from_slice(train.row(i));
        }
        let first = sorted.iter().step_by(dim).copied().collect();
        Ok(Self {
            dim,
            n,
            sorted,
            first,
            kernel,
            h,
            norm: 1.0 / (n as f64 * h.powi(dim as i32)),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn sample_size(&self) -> usize {
        self.n
    }

    /// Training rows in internal (sorted) order.
    pub fn training_rows(&self) -> &[f64] {
        &self.sorted
    }

    /// Estimate at one point; the caller guarantees `x.len() == dim`.
    pub fn eval_point(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let inv_h = 1.0 / self.h;
        let lo = self.first.partition_point(|&v| v < x[0] - self.h);
        let hi = self.first.partition_point(|&v| v <= x[0] + self.h);
        let mut acc = 0.0;
        for row in self.sorted[lo * self.dim..hi * self.dim].chunks_exact(self.dim) {
            let mut prod = 1.0;
            for (xr, qr) in row.iter().zip(x) {
                let u = (xr - qr) * inv_h;
                if !(-1.0..=1.0).contains(&u) {
                    prod = 0.0;
                    break;
                }
                prod *= self.kernel.eval(u);
            }
            acc += prod;
        }
        acc * self.norm
    }

    /// Estimates at row-major query points.
    pub fn eval_flat(&self, queries: &[f64]) -> Result<Vec<f64>> {
        if !queries.len().is_multiple_of(self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: queries.len() % self.dim,
            });
        }
        Ok(queries
            .par_chunks_exact(self.dim)
            .map(|q| self.eval_point(q))
            .collect())
    }
}

/// Evaluates the product-kernel estimate built on `train` at each query.
pub fn kde_eval(train: &Dataset, k: &KernelSpec, h: f64, queries: &[Vec<f64>]) -> Result<Vec<f64>> {
    if let Some(q) = queries.iter().find(|q| q.len() != train.dim()) {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            found: q.len(),
        });
    }
    let kde = ProductKde::new(train, k.clone(), h)?;
    Ok(queries.par_iter().map(|q| kde.eval_point(q)).collect())
}

/// Pseudo-responses: the estimate built on `kernel_data` evaluated at every
/// row of `regression_data`.
pub fn generate_responses(
    kernel_data: &Dataset,
    regression_data: &Dataset,
    k: &KernelSpec,
    h: f64,
) -> Result<Vec<f64>> {
    if kernel_data.dim() != regression_data.dim() {
        return Err(Error::DimensionMismatch {
            expected: kernel_data.dim(),
            found: regression_data.dim(),
        });
    }
    let kde = ProductKde::new(kernel_data, k.clone(), h)?;
    kde.eval_flat(regression_data.as_flat())
}

/// Cross-validation search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_step: f64,
    pub folds: usize,
    /// Seed of the fold shuffle.
    pub seed: u64,
}

impl CvGrid {
    pub fn candidates(&self) -> Result<Vec<f64>> {
        if !(self.grid_lo <= self.grid_hi && self.grid_step > 0.0 && self.grid_lo > 0.0) {
            return Err(Error::invalid(format!(
                "invalid CV grid [{}, {}] step {}",
                self.grid_lo, self.grid_hi, self.grid_step
            )));
        }
        let steps = ((self.grid_hi - self.grid_lo) / self.grid_step + 1e-9).floor() as usize;
        Ok((0..=steps)
            .map(|i| self.grid_lo + i as f64 * self.grid_step)
            .collect())
    }
}

/// Outcome of a calibration over several datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Mean of the per-dataset optima.
    pub constant: f64,
    pub per_dataset: Vec<f64>,
}

/// Indices `0..n` shuffled with `seed` and cut into `folds` contiguous blocks
/// whose sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(Error::invalid(format!(
            "need 2 <= folds <= n, got folds={folds}, n={n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed));
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

/// Selects a bandwidth constant per dataset by least-squares cross-validation
/// and returns the average.
pub fn cv_calibrate(
    datasets: &[Dataset],
    k: &KernelSpec,
    grid: &CvGrid,
    shape: BandwidthShape,
) -> Result<f64> {
    cv_calibrate_detailed(datasets, k, grid, shape).map(|c| c.constant)
}

pub fn cv_calibrate_detailed(
    datasets: &[Dataset],
    k: &KernelSpec,
    grid: &CvGrid,
    shape: BandwidthShape,
) -> Result<Calibration> {
    if datasets.is_empty() {
        return Err(Error::invalid("calibration needs at least one dataset"));
    }
    let candidates = grid.candidates()?;
    let conv = k.autoconvolution();
    let per_dataset = datasets
        .iter()
        .enumerate()
        .map(|(i, ds)| {
            let folds = fold_assignment(
                ds.len(),
                grid.folds,
                rng::derive_seed(grid.seed, &format!("cv-fold|{i}")),
            )?;
            let base = shape.base(ds.len(), ds.dim())?;
            let mut best = (f64::INFINITY, candidates[0]);
            for &c in &candidates {
                let h = c * base;
                if !(h > 0.0 && h <= 1.0) {
                    continue;
                }
                let score = lscv_score(ds, k, &conv, h, &folds);
                // strict comparison: ties keep the smaller constant
                if score < best.0 {
                    best = (score, c);
                }
            }
            Ok(best.1)
        })
        .collect::<Result<Vec<f64>>>()?;
    let constant = per_dataset.iter().sum::<f64>() / per_dataset.len() as f64;
    Ok(Calibration {
        constant,
        per_dataset,
    })
}

/// Fold-averaged `∫ f_T² - 2 mean_{i∈H} f_T(X_i)` where `f_T` is the estimate
/// on the training folds and `H` the held-out fold. The squared integral over
/// all of `R^d` is exact through the kernel autoconvolution.
pub fn lscv_score(
    ds: &Dataset,
    k: &KernelSpec,
    conv: &AutoConvolution,
    h: f64,
    folds: &[Vec<usize>],
) -> f64 {
    let n = ds.len();
    let d = ds.dim();
    let inv_h = 1.0 / h;
    // pairwise products of the autoconvolution and of the kernel
    let mut conv_pair = vec![0.0; n * n];
    let mut kern_pair = vec![0.0; n * n];
    for a in 0..n {
        let ra = ds.row(a);
        for b in a..n {
            let rb = ds.row(b);
            let mut pc = 1.0;
            let mut pk = 1.0;
            for r in 0..d {
                let t = (ra[r] - rb[r]) * inv_h;
                pc *= conv.eval(t);
                pk *= k.eval(t);
                if pc == 0.0 && pk == 0.0 {
                    break;
                }
            }
            conv_pair[a * n + b] = pc;
            conv_pair[b * n + a] = pc;
            kern_pair[a * n + b] = pk;
            kern_pair[b * n + a] = pk;
        }
    }
    let conv_row: Vec<f64> = conv_pair.chunks_exact(n).map(|r| r.iter().sum()).collect();
    let kern_row: Vec<f64> = kern_pair.chunks_exact(n).map(|r| r.iter().sum()).collect();
    let conv_total: f64 = conv_row.iter().sum();
    let hd = h.powi(d as i32);

    let mut score = 0.0;
    for fold in folds {
        let n_train = (n - fold.len()) as f64;
        let mut held_block = 0.0;
        let mut cross = 0.0;
        let mut held_sum = 0.0;
        for &i in fold {
            cross += conv_row[i];
            let mut k_in = 0.0;
            for &j in fold {
                held_block += conv_pair[i * n + j];
                k_in += kern_pair[i * n + j];
            }
            held_sum += kern_row[i] - k_in;
        }
        let train_train = conv_total - 2.0 * cross + held_block;
        let sq_integral = train_train / (n_train * n_train * hd);
        let held_mean = held_sum / (fold.len() as f64 * n_train * hd);
        score += sq_integral - 2.0 * held_mean;
    }
    score / folds.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::build_order_kernel;

    fn ds(dim: usize, pts: Vec<f64>) -> Dataset {
        Dataset::new(dim, pts, 0, "test").unwrap()
    }

    #[test]
    fn theory_bandwidth_examples() {
        assert_eq!(theory_bandwidth(100, 2).unwrap(), 0.25);
        assert_eq!(theory_bandwidth(3, 1).unwrap(), 0.5);
        assert!(theory_bandwidth(1, 1).is_err());
        assert!(theory_bandwidth(10, 0).is_err());
    }

    #[test]
    fn resolve_rules() {
        let h = resolve_bandwidth(BandwidthRule::ScaledTheory { c: 1.0 }, 100, 2).unwrap();
        assert!((h - (100f64.ln() / 100.0).sqrt()).abs() < 1e-15);
        assert!((h - 0.21459).abs() < 1e-5);
        let h =
            resolve_bandwidth(BandwidthRule::KdeReference { c: 1.0, beta: 0.5 }, 100, 1).unwrap();
        assert!((h - 0.1).abs() < 1e-15);
        assert_eq!(
            resolve_bandwidth(BandwidthRule::Fixed { h: 0.2 }, 100, 1).unwrap(),
            0.2
        );
        assert!(resolve_bandwidth(BandwidthRule::Fixed { h: 0.0 }, 100, 1).is_err());
        assert!(resolve_bandwidth(BandwidthRule::Fixed { h: -1.0 }, 100, 1).is_err());
        assert!(resolve_bandwidth(BandwidthRule::ScaledTheory { c: -1.0 }, 100, 1).is_err());
    }

    #[test]
    fn single_point_box_kernel() {
        let train = ds(1, vec![0.4]);
        let k = KernelSpec::box_kernel();
        let v = kde_eval(&train, &k, 0.5, &[vec![0.4], vec![0.95]]).unwrap();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], 0.0);
        let y = generate_responses(&train, &train, &k, 0.5).unwrap();
        assert_eq!(y, vec![1.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let train = ds(2, vec![0.1, 0.2]);
        let k = KernelSpec::box_kernel();
        assert!(kde_eval(&train, &k, 0.5, &[vec![0.1]]).is_err());
        let other = ds(1, vec![0.3]);
        assert!(generate_responses(&train, &other, &k, 0.5).is_err());
    }

    #[test]
    fn duplicating_data_leaves_estimate_unchanged() {
        let train = ds(2, vec![0.1, 0.2, 0.5, 0.5, 0.45, 0.6]);
        let doubled = train.concat(&train).unwrap();
        let k = build_order_kernel(3).unwrap();
        let q = vec![vec![0.5, 0.55], vec![0.2, 0.3]];
        let a = kde_eval(&train, &k, 0.3, &q).unwrap();
        let b = kde_eval(&doubled, &k, 0.3, &q).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn permuting_kernel_rows_leaves_responses_unchanged() {
        let kd = ds(1, vec![0.1, 0.5, 0.52, 0.9, 0.33]);
        let perm = kd.select(&[3, 0, 4, 2, 1]).unwrap();
        let reg = ds(1, vec![0.5, 0.3, 0.05]);
        let k = build_order_kernel(2).unwrap();
        assert_eq!(
            generate_responses(&kd, &reg, &k, 0.2).unwrap(),
            generate_responses(&perm, &reg, &k, 0.2).unwrap()
        );
    }

    #[test]
    fn fold_assignment_partitions() {
        let folds = fold_assignment(23, 5, 1).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 4 || f.len() == 5));
        assert!(fold_assignment(3, 4, 1).is_err());
        assert!(fold_assignment(3, 1, 1).is_err());
    }

    #[test]
    fn single_candidate_grid() {
        let d1 = ds(1, (0..20).map(|i| i as f64 / 20.0).collect());
        let grid = CvGrid {
            grid_lo: 0.3,
            grid_hi: 0.3,
            grid_step: 0.005,
            folds: 5,
            seed: 1,
        };
        let c = cv_calibrate(
            &[d1],
            &KernelSpec::box_kernel(),
            &grid,
            BandwidthShape::Theory,
        )
        .unwrap();
        assert_eq!(c, 0.3);
    }

    #[test]
    fn calibration_errors() {
        let grid = CvGrid {
            grid_lo: 0.05,
            grid_hi: 1.1,
            grid_step: 0.005,
            folds: 50,
            seed: 1,
        };
        let k = KernelSpec::box_kernel();
        assert!(cv_calibrate(&[], &k, &grid, BandwidthShape::Theory).is_err());
        let small = ds(1, vec![0.1, 0.2, 0.3]);
        assert!(cv_calibrate(&[small], &k, &grid, BandwidthShape::Theory).is_err());
        assert_eq!(grid.candidates().unwrap().len(), 211);
    }
}
