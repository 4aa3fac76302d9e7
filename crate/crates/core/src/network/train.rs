//! Penalized least-squares training with Adam and gradual magnitude pruning.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{NetworkArchitecture, NetworkParams};
use crate::error::{Error, Result};
use crate::rng;

/// Optimizer and pruning-ramp settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Penalty on the sum of squared weights; shifts are not penalized.
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Fraction of the epochs after which pruning starts.
    pub prune_start: f64,
    /// Masks are recomputed every this many epochs during the ramp.
    pub prune_every: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 64,
            learning_rate: 1e-3,
            l2: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            prune_start: 0.25,
            prune_every: 10,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.prune_every == 0 {
            return Err(Error::invalid(
                "epochs, batch size and prune interval must be positive",
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::invalid(
                "learning rate and epsilon must be positive, l2 nonnegative",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("moment decays must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.prune_start) {
            return Err(Error::invalid("prune start must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Pruned fraction targeted after `epoch` completed epochs: zero before
    /// the ramp, then `f (1 - (1 - τ)^3)` with `τ` the ramp progress.
    pub fn sparsity_at(&self, epoch: usize, final_fraction: f64) -> f64 {
        let start = (self.prune_start * self.epochs as f64).round() as usize;
        if epoch < start || final_fraction == 0.0 {
            return 0.0;
        }
        let span = (self.epochs - start).max(1) as f64;
        let tau = ((epoch - start) as f64 / span).min(1.0);
        final_fraction * (1.0 - (1.0 - tau).powi(3))
    }

    fn is_prune_epoch(&self, epoch: usize) -> bool {
        let start = (self.prune_start * self.epochs as f64).round() as usize;
        epoch == self.epochs || (epoch >= start && (epoch - start).is_multiple_of(self.prune_every))
    }
}

/// Gradient with the same layout as [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Array2<f64>>,
    pub shifts: Vec<Array1<f64>>,
}

impl Gradient {
    /// Same order as [`NetworkParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .weights
            .iter()
            .flat_map(|w| w.iter().copied())
            .collect();
        out.extend(self.shifts[1..].iter().flat_map(|v| v.iter().copied()));
        out
    }
}

fn check_data(arch: &NetworkArchitecture, x: &ArrayView2<f64>, y: &ArrayView1<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::invalid("training data is empty"));
    }
    if x.ncols() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim(),
            found: x.ncols(),
        });
    }
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    Ok(())
}

/// Mean squared error of the clamped output plus `l2 Σ W²`, and its gradient.
///
/// The clamp counts as the identity strictly inside `(-F, F)` and as constant
/// outside. Gradients of masked entries are zero.
pub fn loss_and_gradient(
    params: &NetworkParams,
    arch: &NetworkArchitecture,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    l2: f64,
) -> Result<(f64, Gradient)> {
    check_data(arch, &x, &y)?;
    params.check_shapes(arch)?;
    Ok(loss_and_gradient_unchecked(params, arch, x, y, l2))
}

fn loss_and_gradient_unchecked(
    params: &NetworkParams,
    arch: &NetworkArchitecture,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    l2: f64,
) -> (f64, Gradient) {
    let depth = arch.depth();
    let f = arch.sup_cap();
    let b = x.nrows() as f64;
    let (raw, acts) = params.forward_raw(arch, x);

    let mut mse = 0.0;
    let mut delta = Array2::<f64>::zeros((x.nrows(), 1));
    for (i, (&o, &t)) in raw.iter().zip(y.iter()).enumerate() {
        let r = o.clamp(-f, f) - t;
        mse += r * r;
        if o > -f && o < f {
            delta[[i, 0]] = 2.0 * r / b;
        }
    }
    mse /= b;
    let penalty: f64 = params
        .weights
        .iter()
        .map(|w| w.iter().map(|v| v * v).sum::<f64>())
        .sum();

    let mut gw: Vec<Array2<f64>> = Vec::with_capacity(depth + 1);
    let mut gv: Vec<Array1<f64>> = Vec::with_capacity(depth + 1);
    for j in (0..=depth).rev() {
        // delta: gradient with respect to the pre-shift output of layer j + 1
        gw.push(delta.t().dot(&acts[j]));
        if j == 0 {
            gv.push(Array1::zeros(params.shifts[0].len()));
            break;
        }
        let mut back = delta.dot(&params.weights[j]);
        back.zip_mut_with(&acts[j], |g, a| {
            if *a <= 0.0 {
                *g = 0.0;
            }
        });
        gv.push(back.sum_axis(Axis(0)).mapv(|v| -v));
        delta = back;
    }
    gw.reverse();
    gv.reverse();
    for ((g, w), m) in gw.iter_mut().zip(&params.weights).zip(&params.weight_masks) {
        if l2 > 0.0 {
            g.scaled_add(2.0 * l2, w);
        }
        *g *= m;
    }
    for (g, m) in gv.iter_mut().zip(&params.shift_masks) {
        *g *= m;
    }
    (
        mse + l2 * penalty,
        Gradient {
            weights: gw,
            shifts: gv,
        },
    )
}

fn mse(
    params: &NetworkParams,
    arch: &NetworkArchitecture,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> f64 {
    let f = arch.sup_cap();
    let (raw, _) = params.forward_raw(arch, x);
    raw.iter()
        .zip(y.iter())
        .map(|(o, t)| (o.clamp(-f, f) - t).powi(2))
        .sum::<f64>()
        / y.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// Full-data mean squared error after the last epoch.
    pub final_loss: f64,
    /// Full-data mean squared error after every epoch.
    pub trace: Vec<f64>,
    pub nonzero_fraction: f64,
    pub fraction_exceeding_one: f64,
}

struct Adam {
    mw: Vec<Array2<f64>>,
    vw: Vec<Array2<f64>>,
    ms: Vec<Array1<f64>>,
    vs: Vec<Array1<f64>>,
    step: i32,
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn adam_update<'a>(
    p: impl Iterator<Item = &'a mut f64>,
    g: impl Iterator<Item = &'a f64>,
    m: impl Iterator<Item = &'a mut f64>,
    v: impl Iterator<Item = &'a mut f64>,
    mask: impl Iterator<Item = &'a f64>,
    s: &TrainSchedule,
    lr_t: f64,
) {
    for ((((p, g), m), v), k) in p.zip(g).zip(m).zip(v).zip(mask) {
        if *k == 0.0 {
            continue;
        }
        *m = s.beta1 * *m + (1.0 - s.beta1) * g;
        *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
        *p -= lr_t * *m / (v.sqrt() + s.epsilon);
    }
}

impl Adam {
    fn new(params: &NetworkParams) -> Self {
        Self {
            mw: params
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            vw: params
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            ms: params
                .shifts
                .iter()
                .map(|v| Array1::zeros(v.len()))
                .collect(),
            vs: params
                .shifts
                .iter()
                .map(|v| Array1::zeros(v.len()))
                .collect(),
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut NetworkParams, grad: &Gradient, s: &TrainSchedule) {
        self.step += 1;
        // bias correction folded into the step size
        let lr_t = s.learning_rate * (1.0 - s.beta2.powi(self.step)).sqrt()
            / (1.0 - s.beta1.powi(self.step));
        for j in 0..params.weights.len() {
            adam_update(
                params.weights[j].iter_mut(),
                grad.weights[j].iter(),
                self.mw[j].iter_mut(),
                self.vw[j].iter_mut(),
                params.weight_masks[j].iter(),
                s,
                lr_t,
            );
            adam_update(
                params.shifts[j].iter_mut(),
                grad.shifts[j].iter(),
                self.ms[j].iter_mut(),
                self.vs[j].iter_mut(),
                params.shift_masks[j].iter(),
                s,
                lr_t,
            );
        }
    }
}

/// Splits `keep` surviving entries over groups in proportion to their sizes
/// (largest remainder), with at least one per group and never more than a
/// group currently has active.
fn allocate(keep: usize, sizes: &[usize], active: &[usize]) -> Vec<usize> {
    let groups = sizes.len();
    let mut quota = vec![1usize; groups];
    let spread = keep.saturating_sub(groups);
    let total: usize = sizes.iter().map(|s| s - 1).sum();
    let mut rema: Vec<(f64, usize)> = Vec::with_capacity(groups);
    if total > 0 {
        for (g, &sz) in sizes.iter().enumerate() {
            let exact = spread as f64 * (sz - 1) as f64 / total as f64;
            quota[g] += exact.floor() as usize;
            rema.push((exact - exact.floor(), g));
        }
    }
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = keep.saturating_sub(quota.iter().sum());
    for &(_, g) in &rema {
        if left == 0 {
            break;
        }
        quota[g] += 1;
        left -= 1;
    }
    for (q, &a) in quota.iter_mut().zip(active) {
        *q = (*q).min(a);
    }
    // hand any shortfall from capped groups to groups with spare capacity
    let mut short = keep.saturating_sub(quota.iter().sum());
    for &(_, g) in &rema {
        if short == 0 {
            break;
        }
        let add = (active[g] - quota[g]).min(short);
        quota[g] += add;
        short -= add;
    }
    quota
}

/// Magnitude pruning to `fraction` of all free parameters. Group `j` holds
/// `W_j` and the shifts `v_{j+1}` of the units those weights feed.
fn prune_to(params: &mut NetworkParams, arch: &NetworkArchitecture, fraction: f64) {
    let total = arch.total_params();
    let keep = (total - (fraction * total as f64).round() as usize).max(1);
    let depth = arch.depth();
    let mut sizes = Vec::with_capacity(depth + 1);
    let mut active = Vec::with_capacity(depth + 1);
    for j in 0..=depth {
        let mut sz = params.weights[j].len();
        let mut act = params.weight_masks[j].iter().filter(|m| **m != 0.0).count();
        if j < depth {
            sz += params.shifts[j + 1].len();
            act += params.shift_masks[j + 1]
                .iter()
                .filter(|m| **m != 0.0)
                .count();
        }
        sizes.push(sz);
        active.push(act);
    }
    let quota = allocate(keep, &sizes, &active);
    for j in 0..=depth {
        if quota[j] >= active[j] {
            continue;
        }
        let nw = params.weights[j].len();
        let mut cand: Vec<(f64, usize)> = params.weights[j]
            .iter()
            .zip(params.weight_masks[j].iter())
            .enumerate()
            .filter(|(_, (_, m))| **m != 0.0)
            .map(|(i, (w, _))| (w.abs(), i))
            .collect();
        if j < depth {
            cand.extend(
                params.shifts[j + 1]
                    .iter()
                    .zip(params.shift_masks[j + 1].iter())
                    .enumerate()
                    .filter(|(_, (_, m))| **m != 0.0)
                    .map(|(i, (v, _))| (v.abs(), nw + i)),
            );
        }
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, idx) in &cand[quota[j]..] {
            if idx < nw {
                let cols = params.weights[j].ncols();
                params.weight_masks[j][[idx / cols, idx % cols]] = 0.0;
            } else {
                params.shift_masks[j + 1][idx - nw] = 0.0;
            }
        }
    }
    params.apply_masks();
}

/// Minibatch Adam on the penalized least-squares loss with gradual magnitude
/// pruning to `prune_fraction` of the free parameters.
pub fn train(
    params: NetworkParams,
    arch: &NetworkArchitecture,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    schedule: &TrainSchedule,
    prune_fraction: f64,
    seed: u64,
) -> Result<TrainOutcome> {
    check_data(arch, &x, &y)?;
    params.check_shapes(arch)?;
    schedule.validate()?;
    let total = arch.total_params();
    if !(0.0..1.0).contains(&prune_fraction) {
        return Err(Error::invalid(format!(
            "prune fraction {prune_fraction} not in [0, 1)"
        )));
    }
    if total - (prune_fraction * total as f64).round() as usize == 0 {
        return Err(Error::invalid("prune fraction leaves no parameters"));
    }

    let mut params = params;
    let mut adam = Adam::new(&params);
    let mut r = rng::stream(seed);
    let n = x.nrows();
    let batch = schedule.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(schedule.epochs);
    let mut xb = Array2::<f64>::zeros((batch, x.ncols()));
    let mut yb = Array1::<f64>::zeros(batch);

    for epoch in 0..schedule.epochs {
        order.shuffle(&mut r);
        for chunk in order.chunks(batch) {
            if xb.nrows() != chunk.len() {
                xb = Array2::zeros((chunk.len(), x.ncols()));
                yb = Array1::zeros(chunk.len());
            }
            for (k, &i) in chunk.iter().enumerate() {
                xb.row_mut(k).assign(&x.row(i));
                yb[k] = y[i];
            }
            let (loss, grad) =
                loss_and_gradient_unchecked(&params, arch, xb.view(), yb.view(), schedule.l2);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            adam.apply(&mut params, &grad, schedule);
        }
        let done = epoch + 1;
        if prune_fraction > 0.0 && schedule.is_prune_epoch(done) {
            let target = if done == schedule.epochs {
                prune_fraction
            } else {
                schedule.sparsity_at(done, prune_fraction)
            };
            if target > 0.0 {
                prune_to(&mut params, arch, target);
            }
        }
        let loss = mse(&params, arch, x, y);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        trace.push(loss);
    }

    let final_loss = *trace.last().expect("at least one epoch");
    let nonzero_fraction = params.nonzero_count() as f64 / total as f64;
    let fraction_exceeding_one = params.fraction_exceeding_one(arch);
    Ok(TrainOutcome {
        params,
        final_loss,
        trace,
        nonzero_fraction,
        fraction_exceeding_one,
    })
}
