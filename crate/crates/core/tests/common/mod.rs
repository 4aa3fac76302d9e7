#![allow(dead_code)]

use denseleaf::densities::DensityModel;
use denseleaf::network::{init_glorot, loss_and_gradient, NetworkArchitecture, NetworkParams};
use denseleaf::quadrature::GaussLegendre;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest relative difference between the analytic gradient and central
/// differences, over coordinates whose perturbation does not cross a kink.
/// Returns `(max_rel_err, coordinates_checked)`.
pub fn gradient_check(
    arch: &NetworkArchitecture,
    params: &NetworkParams,
    x: &Array2<f64>,
    y: &Array1<f64>,
    l2: f64,
) -> (f64, usize) {
    let step = 1e-6;
    let (_, grad) = loss_and_gradient(params, arch, x.view(), y.view(), l2).unwrap();
    let g = grad.flatten();
    let base = params.flatten();
    let pattern = params.activation_pattern(arch, x.view());
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut probe = params.clone();
    for i in 0..base.len() {
        let mut eval = |delta: f64| {
            let mut flat = base.clone();
            flat[i] += delta;
            probe.set_flat(&flat).unwrap();
            let same = probe.activation_pattern(arch, x.view()) == pattern;
            let loss = loss_and_gradient(&probe, arch, x.view(), y.view(), l2)
                .unwrap()
                .0;
            (loss, same)
        };
        let (lp, sp) = eval(step);
        let (lm, sm) = eval(-step);
        if !(sp && sm) {
            continue;
        }
        let fd = (lp - lm) / (2.0 * step);
        let denom = g[i].abs().max(fd.abs()).max(1e-4);
        worst = worst.max((g[i] - fd).abs() / denom);
        checked += 1;
    }
    (worst, checked)
}

/// Cell masses of the density on a `bins^d` grid, by Gauss-Legendre with
/// `nodes` points per axis in each cell. Cells are ordered with the first
/// coordinate varying slowest.
pub fn cell_masses(model: &DensityModel, bins: usize, nodes: usize) -> Vec<f64> {
    let d = model.dim();
    let gl = GaussLegendre::new(nodes);
    let unit = gl.mapped(0.0, 1.0 / bins as f64);
    let cells = bins.pow(d as u32);
    let mut out = vec![0.0; cells];
    let mut point = vec![0.0; d];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut idx = vec![0usize; d];
        let mut rem = c;
        for r in (0..d).rev() {
            idx[r] = rem % bins;
            rem /= bins;
        }
        let combos = nodes.pow(d as u32);
        let mut acc = 0.0;
        for k in 0..combos {
            let mut w = 1.0;
            let mut kr = k;
            for r in 0..d {
                let (t, wt) = unit[kr % nodes];
                kr /= nodes;
                point[r] = idx[r] as f64 / bins as f64 + t;
                w *= wt;
            }
            acc += w * model.eval_unchecked(&point);
        }
        *slot = acc;
    }
    out
}

/// Histogram of row-major points on the same grid as [`cell_masses`],
/// normalized to probabilities.
pub fn histogram(points: &[f64], d: usize, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins.pow(d as u32)];
    let n = points.len() / d;
    for row in points.chunks_exact(d) {
        let mut cell = 0;
        for &v in row {
            let b = ((v * bins as f64) as usize).min(bins - 1);
            cell = cell * bins + b;
        }
        counts[cell] += 1.0;
    }
    counts.iter_mut().for_each(|c| *c /= n as f64);
    counts
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Expected total variation between a histogram of `n` draws and its cell
/// probabilities, with each count treated as Poisson(`n p`):
/// `E|X - λ| = 2 e^{-λ} λ^{k+1} / k!` where `k = ⌊λ⌋`.
pub fn sampling_tv_floor(p: &[f64], n: usize) -> f64 {
    let nf = n as f64;
    let mad = |lambda: f64| {
        if lambda <= 0.0 {
            return 0.0;
        }
        let k = lambda.floor() as u64;
        let log_fact: f64 = (1..=k).map(|j| (j as f64).ln()).sum();
        2.0 * (-lambda + (k as f64 + 1.0) * lambda.ln() - log_fact).exp()
    };
    0.5 * p.iter().map(|&pi| mad(pi * nf)).sum::<f64>() / nf
}

/// A random architecture with at most `max_params` parameters, Glorot
/// weights, small random shifts and a random regression batch.
pub fn random_net(
    seed: u64,
    max_params: usize,
) -> (NetworkArchitecture, NetworkParams, Array2<f64>, Array1<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let d = rng.random_range(1..=3);
        let depth = rng.random_range(1..=3);
        let mut widths = vec![d];
        widths.extend((0..depth).map(|_| rng.random_range(2..=8)));
        widths.push(1);
        let arch = NetworkArchitecture::new(widths, 50.0).unwrap();
        if arch.total_params() > max_params {
            continue;
        }
        let mut params = init_glorot(&arch, rng.random());
        for j in 1..=depth {
            params
                .shift_mut(j)
                .mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
        let n = rng.random_range(3..=12);
        let x = Array2::from_shape_fn((n, d), |_| rng.random::<f64>());
        let y = Array1::from_shape_fn(n, |_| rng.random_range(0.0..3.0));
        return (arch, params, x, y);
    }
}
