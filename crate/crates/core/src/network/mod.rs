//! Sparse ReLU multilayer perceptrons.
//!
//! A network of depth `L` with widths `p = (p_0, ..., p_{L+1})` computes
//!
//! ```text
//! f(x) = W_L σ_{v_L} W_{L-1} σ_{v_{L-1}} ... W_1 σ_{v_1} W_0 x,
//! ```
//!
//! where `σ_v(y) = max(y - v, 0)` componentwise, then clamps the scalar output
//! to `[-F, F]`. There is no bias on the input or the output layer; the shift
//! vector `v_0` exists only as an all-zero placeholder so that `shifts[j]`
//! lines up with the layer it belongs to.

mod rates;
mod train;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use rates::{entropy_bound, prune_fraction_rule, rate_phi, CompositionDescriptor};
pub use train::{loss_and_gradient, train, Gradient, TrainOutcome, TrainSchedule};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkArchitecture {
    depth: usize,
    widths: Vec<usize>,
    target_nonzero: usize,
    sup_cap: f64,
}

impl NetworkArchitecture {
    /// `widths` has `depth + 2` entries and must end in 1. The sparsity
    /// target defaults to the full parameter count.
    pub fn new(widths: Vec<usize>, sup_cap: f64) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::invalid("need at least one hidden layer"));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("widths must be positive"));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::invalid("output width must be 1"));
        }
        if !(sup_cap >= 1.0) || !sup_cap.is_finite() {
            return Err(Error::invalid(format!(
                "sup cap {sup_cap} must be finite and >= 1"
            )));
        }
        let mut arch = Self {
            depth: widths.len() - 2,
            widths,
            target_nonzero: 0,
            sup_cap,
        };
        arch.target_nonzero = arch.total_params();
        Ok(arch)
    }

    pub fn with_target_nonzero(mut self, s: usize) -> Result<Self> {
        if s == 0 || s > self.total_params() {
            return Err(Error::invalid(format!(
                "sparsity target {s} outside 1..={}",
                self.total_params()
            )));
        }
        self.target_nonzero = s;
        Ok(self)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn target_nonzero(&self) -> usize {
        self.target_nonzero
    }

    pub fn sup_cap(&self) -> f64 {
        self.sup_cap
    }

    pub fn weight_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1]).sum()
    }

    /// Number of free shift entries: the hidden widths `p_1, ..., p_L`.
    pub fn shift_count(&self) -> usize {
        self.widths[1..=self.depth].iter().sum()
    }

    /// Number of free parameters, weights plus hidden shifts.
    pub fn total_params(&self) -> usize {
        self.weight_count() + self.shift_count()
    }
}

fn ceil_sqrt(x: usize) -> usize {
    let mut r = (x as f64).sqrt() as usize;
    while r * r < x {
        r += 1;
    }
    while r > 0 && (r - 1) * (r - 1) >= x {
        r -= 1;
    }
    r
}

fn ceil_log2(x: usize) -> usize {
    let mut l = 0;
    while (1usize << l) < x {
        l += 1;
    }
    l
}

/// Hidden width `⌈√(2n)⌉` and depth `⌈log₂(2n)⌉`, at least one layer.
pub fn architecture_from_n(n: usize, d: usize, sup_cap: f64) -> Result<NetworkArchitecture> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    if d == 0 {
        return Err(Error::invalid("input dimension must be positive"));
    }
    let width = ceil_sqrt(2 * n);
    let depth = ceil_log2(2 * n).max(1);
    let mut widths = vec![d];
    widths.extend(std::iter::repeat_n(width, depth));
    widths.push(1);
    NetworkArchitecture::new(widths, sup_cap)
}

/// Weights, shifts and their pruning masks. Masks hold 1.0 for active and
/// 0.0 for pruned entries.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub(crate) weights: Vec<Array2<f64>>,
    pub(crate) shifts: Vec<Array1<f64>>,
    pub(crate) weight_masks: Vec<Array2<f64>>,
    pub(crate) shift_masks: Vec<Array1<f64>>,
}

impl NetworkParams {
    pub fn zeros(arch: &NetworkArchitecture) -> Self {
        let p = arch.widths();
        let weights: Vec<_> = p.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect();
        let shifts: Vec<_> = p[..=arch.depth()]
            .iter()
            .map(|&k| Array1::zeros(k))
            .collect();
        let weight_masks = weights.iter().map(|w| Array2::ones(w.raw_dim())).collect();
        let mut shift_masks: Vec<Array1<f64>> =
            shifts.iter().map(|s| Array1::ones(s.len())).collect();
        shift_masks[0].fill(0.0);
        Self {
            weights,
            shifts,
            weight_masks,
            shift_masks,
        }
    }

    /// `W_j` has shape `p_{j+1} × p_j`.
    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    /// `shifts()[j]` is `v_j`; `v_0` is identically zero.
    pub fn shifts(&self) -> &[Array1<f64>] {
        &self.shifts
    }

    pub fn weight_masks(&self) -> &[Array2<f64>] {
        &self.weight_masks
    }

    pub fn shift_masks(&self) -> &[Array1<f64>] {
        &self.shift_masks
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        &mut self.weights[layer]
    }

    /// Mutable access to a hidden shift vector (`layer >= 1`).
    pub fn shift_mut(&mut self, layer: usize) -> &mut Array1<f64> {
        assert!(layer >= 1, "v_0 is fixed at zero");
        &mut self.shifts[layer]
    }

    pub fn check_shapes(&self, arch: &NetworkArchitecture) -> Result<()> {
        let p = arch.widths();
        let ok = self.weights.len() == arch.depth() + 1
            && self.shifts.len() == arch.depth() + 1
            && self
                .weights
                .iter()
                .enumerate()
                .all(|(j, w)| w.dim() == (p[j + 1], p[j]))
            && self.shifts.iter().enumerate().all(|(j, v)| v.len() == p[j])
            && self
                .weight_masks
                .iter()
                .zip(&self.weights)
                .all(|(m, w)| m.dim() == w.dim())
            && self
                .shift_masks
                .iter()
                .zip(&self.shifts)
                .all(|(m, v)| m.len() == v.len());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "parameter shapes do not match the architecture",
            ))
        }
    }

    pub fn nonzero_count(&self) -> usize {
        let w: usize = self
            .weights
            .iter()
            .map(|w| w.iter().filter(|v| **v != 0.0).count())
            .sum();
        let s: usize = self.shifts[1..]
            .iter()
            .map(|v| v.iter().filter(|x| **x != 0.0).count())
            .sum();
        w + s
    }

    pub fn active_count(&self) -> usize {
        let w: usize = self
            .weight_masks
            .iter()
            .map(|m| m.iter().filter(|v| **v != 0.0).count())
            .sum();
        let s: usize = self.shift_masks[1..]
            .iter()
            .map(|m| m.iter().filter(|v| **v != 0.0).count())
            .sum();
        w + s
    }

    /// Fraction of free parameters whose absolute value exceeds one.
    pub fn fraction_exceeding_one(&self, arch: &NetworkArchitecture) -> f64 {
        let big = self.flatten().iter().filter(|v| v.abs() > 1.0).count();
        big as f64 / arch.total_params() as f64
    }

    /// Free parameters in a fixed order: every `W_j` row-major, then `v_1..v_L`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .weights
            .iter()
            .flat_map(|w| w.iter().copied())
            .collect();
        out.extend(self.shifts[1..].iter().flat_map(|v| v.iter().copied()));
        out
    }

    /// Inverse of [`flatten`](Self::flatten); masks are left untouched.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.shifts[1..].iter().map(|v| v.len()).sum::<usize>();
        if flat.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                found: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for w in &mut self.weights {
            w.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        for v in &mut self.shifts[1..] {
            v.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        Ok(())
    }

    /// Zeroes every masked entry.
    pub(crate) fn apply_masks(&mut self) {
        for (w, m) in self.weights.iter_mut().zip(&self.weight_masks) {
            *w *= m;
        }
        for (v, m) in self.shifts.iter_mut().zip(&self.shift_masks) {
            *v *= m;
        }
    }

    /// Clamped network output at one input.
    pub fn forward(&self, arch: &NetworkArchitecture, x: &[f64]) -> Result<f64> {
        if x.len() != arch.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: arch.input_dim(),
                found: x.len(),
            });
        }
        self.check_shapes(arch)?;
        Ok(self.forward_unchecked(arch, x))
    }

    pub(crate) fn forward_unchecked(&self, arch: &NetworkArchitecture, x: &[f64]) -> f64 {
        let mut a: Vec<f64> = x.to_vec();
        let mut next = Vec::new();
        for j in 0..arch.depth() {
            let w = &self.weights[j];
            let v = &self.shifts[j + 1];
            next.clear();
            for (r, row) in w.rows().into_iter().enumerate() {
                let z: f64 = row.iter().zip(&a).map(|(p, q)| p * q).sum();
                next.push((z - v[r]).max(0.0));
            }
            std::mem::swap(&mut a, &mut next);
        }
        let out: f64 = self.weights[arch.depth()]
            .row(0)
            .iter()
            .zip(&a)
            .map(|(p, q)| p * q)
            .sum();
        out.clamp(-arch.sup_cap(), arch.sup_cap())
    }

    /// Clamped outputs for every row of `x` (`n × p_0`).
    pub fn forward_batch(
        &self,
        arch: &NetworkArchitecture,
        x: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        if x.ncols() != arch.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: arch.input_dim(),
                found: x.ncols(),
            });
        }
        self.check_shapes(arch)?;
        let raw = self.forward_raw(arch, x).0;
        let f = arch.sup_cap();
        Ok(raw.mapv(|v| v.clamp(-f, f)))
    }

    /// Unclamped outputs plus the hidden activations `A_0..A_L`.
    pub(crate) fn forward_raw(
        &self,
        arch: &NetworkArchitecture,
        x: ArrayView2<f64>,
    ) -> (Array1<f64>, Vec<Array2<f64>>) {
        let mut acts = Vec::with_capacity(arch.depth() + 1);
        acts.push(x.to_owned());
        for j in 0..arch.depth() {
            let mut z = acts[j].dot(&self.weights[j].t());
            let v = &self.shifts[j + 1];
            for mut row in z.axis_iter_mut(Axis(0)) {
                row.zip_mut_with(v, |zi, vi| *zi = (*zi - vi).max(0.0));
            }
            acts.push(z);
        }
        let out = acts[arch.depth()].dot(&self.weights[arch.depth()].row(0));
        (out, acts)
    }

    /// Which hidden units fire and whether the output is clamped, per input
    /// row; used to locate kinks of the piecewise-linear map.
    pub fn activation_pattern(&self, arch: &NetworkArchitecture, x: ArrayView2<f64>) -> Vec<bool> {
        let (out, acts) = self.forward_raw(arch, x);
        let f = arch.sup_cap();
        let mut pattern: Vec<bool> = acts[1..]
            .iter()
            .flat_map(|a| a.iter().map(|v| *v > 0.0))
            .collect();
        pattern.extend(out.iter().map(|o| *o > -f && *o < f));
        pattern
    }

    pub fn to_record(&self, arch: &NetworkArchitecture, seed: u64) -> NetworkRecord {
        let mat = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.to_vec()).collect();
        NetworkRecord {
            arch: arch.clone(),
            weights: self.weights.iter().map(mat).collect(),
            shifts: self.shifts.iter().map(|v| v.to_vec()).collect(),
            weight_masks: self
                .weight_masks
                .iter()
                .map(|m| {
                    m.rows()
                        .into_iter()
                        .map(|r| r.iter().map(|v| u8::from(*v != 0.0)).collect())
                        .collect()
                })
                .collect(),
            shift_masks: self
                .shift_masks
                .iter()
                .map(|m| m.iter().map(|v| u8::from(*v != 0.0)).collect())
                .collect(),
            sup_cap: arch.sup_cap(),
            seed,
        }
    }
}

/// Glorot-uniform weights on `±√(6/(p_j + p_{j+1}))`, zero shifts, all
/// entries active.
pub fn init_glorot(arch: &NetworkArchitecture, seed: u64) -> NetworkParams {
    let mut params = NetworkParams::zeros(arch);
    let mut r = rng::stream(seed);
    let p = arch.widths();
    for (j, w) in params.weights.iter_mut().enumerate() {
        let bound = (6.0 / (p[j] + p[j + 1]) as f64).sqrt();
        for x in w.iter_mut() {
            *x = r.random_range(-bound..=bound);
        }
    }
    params
}

/// Self-describing JSON form of a trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub arch: NetworkArchitecture,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub shifts: Vec<Vec<f64>>,
    pub weight_masks: Vec<Vec<Vec<u8>>>,
    pub shift_masks: Vec<Vec<u8>>,
    #[serde(rename = "F")]
    pub sup_cap: f64,
    pub seed: u64,
}

impl NetworkRecord {
    pub fn into_params(self) -> Result<(NetworkArchitecture, NetworkParams, u64)> {
        let to_mat = |rows: &Vec<Vec<f64>>| -> Result<Array2<f64>> {
            let r = rows.len();
            let c = rows.first().map_or(0, |x| x.len());
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            Array2::from_shape_vec((r, c), flat)
                .map_err(|e| Error::invalid(format!("ragged matrix: {e}")))
        };
        let weights = self
            .weights
            .iter()
            .map(to_mat)
            .collect::<Result<Vec<_>>>()?;
        let weight_masks = self
            .weight_masks
            .iter()
            .map(|m| {
                to_mat(
                    &m.iter()
                        .map(|r| r.iter().map(|v| f64::from(*v)).collect())
                        .collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let shifts = self.shifts.into_iter().map(Array1::from).collect();
        let shift_masks = self
            .shift_masks
            .iter()
            .map(|m| m.iter().map(|v| f64::from(*v)).collect::<Array1<f64>>())
            .collect();
        let params = NetworkParams {
            weights,
            shifts,
            weight_masks,
            shift_masks,
        };
        if self.arch.sup_cap() != self.sup_cap {
            return Err(Error::invalid(
                "record sup cap disagrees with its architecture",
            ));
        }
        params.check_shapes(&self.arch)?;
        Ok((self.arch, params, self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(f: f64) -> (NetworkArchitecture, NetworkParams) {
        let arch = NetworkArchitecture::new(vec![1, 1, 1], f).unwrap();
        let mut p = NetworkParams::zeros(&arch);
        p.weights[0][[0, 0]] = 1.0;
        p.weights[1][[0, 0]] = 1.0;
        (arch, p)
    }

    #[test]
    fn single_relu() {
        let (arch, p) = tiny(5.0);
        assert_eq!(p.forward(&arch, &[-2.0]).unwrap(), 0.0);
        assert_eq!(p.forward(&arch, &[3.0]).unwrap(), 3.0);
        let (arch, p) = tiny(2.0);
        assert_eq!(p.forward(&arch, &[3.0]).unwrap(), 2.0);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let arch = architecture_from_n(50, 3, 4.0).unwrap();
        let p = NetworkParams::zeros(&arch);
        assert_eq!(p.forward(&arch, &[0.1, 0.5, 0.9]).unwrap(), 0.0);
        assert_eq!(p.nonzero_count(), 0);
    }

    #[test]
    fn architecture_examples() {
        let a = architecture_from_n(200, 4, 1.0).unwrap();
        assert_eq!(a.depth(), 9);
        assert!(a.widths()[1..=9].iter().all(|&w| w == 20));
        let b = architecture_from_n(1000, 2, 1.0).unwrap();
        assert_eq!(b.depth(), 11);
        assert_eq!(b.widths()[1], 45);
        assert_eq!(b.widths()[0], 2);
        assert_eq!(*b.widths().last().unwrap(), 1);
        assert_eq!(architecture_from_n(1, 1, 1.0).unwrap().depth(), 1);
    }

    #[test]
    fn integer_roots() {
        for x in 1..5000 {
            let r = ceil_sqrt(x);
            assert!(r * r >= x && (r - 1) * (r - 1) < x);
            let l = ceil_log2(x);
            assert!((1usize << l) >= x && (l == 0 || (1usize << (l - 1)) < x));
        }
    }

    #[test]
    fn batch_matches_pointwise() {
        let arch = NetworkArchitecture::new(vec![3, 7, 5, 1], 1.5).unwrap();
        let mut p = init_glorot(&arch, 3);
        p.shift_mut(1).fill(-0.1);
        p.shift_mut(2)[2] = 0.2;
        let x = Array2::from_shape_fn((20, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        let batch = p.forward_batch(&arch, x.view()).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            let single = p.forward(&arch, row.as_slice().unwrap()).unwrap();
            assert!((single - batch[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn glorot_range_and_determinism() {
        let arch = architecture_from_n(100, 4, 1.0).unwrap();
        let a = init_glorot(&arch, 1);
        let b = init_glorot(&arch, 1);
        let c = init_glorot(&arch, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let p = arch.widths();
        for (j, w) in a.weights().iter().enumerate() {
            let bound = (6.0 / (p[j] + p[j + 1]) as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() <= bound));
        }
        assert!(a.shifts().iter().all(|v| v.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn record_round_trip_is_exact() {
        let arch = architecture_from_n(30, 2, 3.0).unwrap();
        let mut p = init_glorot(&arch, 8);
        p.shift_mut(2).fill(1.0 / 3.0);
        p.weight_masks[1][[0, 0]] = 0.0;
        p.apply_masks();
        let json = serde_json::to_string(&p.to_record(&arch, 8)).unwrap();
        let rec: NetworkRecord = serde_json::from_str(&json).unwrap();
        let (arch2, p2, seed) = rec.into_params().unwrap();
        assert_eq!(arch2, arch);
        assert_eq!(seed, 8);
        assert_eq!(p2, p);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (arch, p) = tiny(1.0);
        assert!(p.forward(&arch, &[1.0, 2.0]).is_err());
        let other = NetworkArchitecture::new(vec![2, 1, 1], 1.0).unwrap();
        assert!(p.forward(&other, &[1.0, 2.0]).is_err());
    }
}
