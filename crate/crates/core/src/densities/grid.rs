//! One-dimensional base densities: grid-backed exponential Brownian paths and
//! the closed-form linear density.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, BoxMuller};

/// `ρ(x) = max(0, (4x/3)(1 - 4x/3))`, vanishing at 0 and beyond 3/4.
pub fn rho(x: f64) -> f64 {
    let y = 4.0 * x / 3.0;
    (y * (1.0 - y)).max(0.0)
}

/// A density on `[0, support_hi]`, piecewise linear between `m + 1` uniform
/// knots and zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity1D {
    support_hi: f64,
    values: Vec<f64>,
    cdf: Vec<f64>,
    max_value: f64,
}

impl GridDensity1D {
    /// Normalizes nonnegative knot values so the interpolant has unit mass.
    pub fn from_values(support_hi: f64, mut values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("grid density needs at least two knots"));
        }
        if !(support_hi > 0.0 && support_hi <= 1.0) {
            return Err(Error::invalid(format!(
                "support end {support_hi} not in (0, 1]"
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "grid density values must be finite and nonnegative",
            ));
        }
        let m = values.len() - 1;
        let step = support_hi / m as f64;
        let mass: f64 = values.windows(2).map(|w| 0.5 * (w[0] + w[1]) * step).sum();
        if !(mass > 0.0) {
            return Err(Error::invalid("grid density has zero mass"));
        }
        for v in &mut values {
            *v /= mass;
        }
        let mut cdf = Vec::with_capacity(m + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in values.windows(2) {
            acc += 0.5 * (w[0] + w[1]) * step;
            cdf.push(acc);
        }
        // pin the endpoint against accumulated rounding
        let total = acc;
        for c in &mut cdf {
            *c /= total;
        }
        cdf[m] = 1.0;
        let max_value = values.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            support_hi,
            values,
            cdf,
            max_value,
        })
    }

    pub fn support_hi(&self) -> f64 {
        self.support_hi
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cdf_knots(&self) -> &[f64] {
        &self.cdf
    }

    pub fn resolution(&self) -> usize {
        self.values.len() - 1
    }

    fn step(&self) -> f64 {
        self.support_hi / self.resolution() as f64
    }

    pub fn max_value(&self) -> f64 {
        self.max_value
    }

    /// Trapezoid integral of the knot values.
    pub fn trapezoid_mass(&self) -> f64 {
        let step = self.step();
        self.values
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]) * step)
            .sum()
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if !(0.0..=self.support_hi).contains(&x) {
            return 0.0;
        }
        let pos = x / self.step();
        let i = (pos.floor() as usize).min(self.resolution() - 1);
        let t = pos - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= self.support_hi {
            return 1.0;
        }
        let step = self.step();
        let pos = x / step;
        let i = (pos.floor() as usize).min(self.resolution() - 1);
        let t = pos - i as f64;
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        self.cdf[i] + step * (v0 * t + 0.5 * (v1 - v0) * t * t)
    }

    /// Exact inverse of the piecewise-quadratic cdf.
    pub fn inv_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let m = self.resolution();
        let i = self.cdf.partition_point(|&c| c <= u).clamp(1, m) - 1;
        let step = self.step();
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        let r = (u - self.cdf[i]) / step;
        // solve 0.5 (v1 - v0) t^2 + v0 t - r = 0 for t in [0, 1]
        let a = 0.5 * (v1 - v0);
        let t = if a.abs() < 1e-14 * (v0.abs() + v1.abs()).max(1e-300) {
            if v0 > 0.0 {
                r / v0
            } else {
                0.5
            }
        } else {
            let disc = (v0 * v0 + 4.0 * a * r).max(0.0);
            if v0 >= 0.0 {
                2.0 * r / (v0 + disc.sqrt())
            } else {
                (-v0 + disc.sqrt()) / (2.0 * a)
            }
        };
        (step * (i as f64 + t.clamp(0.0, 1.0))).min(self.support_hi)
    }

    /// Writes `x,value,cdf` rows for inspection.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "value", "cdf"])?;
        let step = self.step();
        for (i, (v, c)) in self.values.iter().zip(&self.cdf).enumerate() {
            w.write_record([
                format!("{:.16e}", step * i as f64),
                format!("{v:.16e}"),
                format!("{c:.16e}"),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Normalized exponential of a standard Brownian path.
///
/// Without `rho` the path lives on `[0, 1]`. With `rho` the path is multiplied
/// by [`rho`], which vanishes beyond 3/4, and the grid covers `[0, 3/4]` only;
/// the value at zero is then exactly zero.
pub fn make_expbm_density(seed: u64, resolution: usize, with_rho: bool) -> Result<GridDensity1D> {
    if resolution < 64 {
        return Err(Error::invalid(format!(
            "resolution {resolution} below the minimum 64"
        )));
    }
    let support_hi = if with_rho { 0.75 } else { 1.0 };
    let step = support_hi / resolution as f64;
    let sd = step.sqrt();
    let mut rng = rng::stream(seed);
    let mut normal = BoxMuller::new();
    let mut w = 0.0;
    let mut values = Vec::with_capacity(resolution + 1);
    for k in 0..=resolution {
        if k > 0 {
            w += sd * normal.sample(&mut rng);
        }
        let x = step * k as f64;
        let mut v = w.exp();
        if with_rho {
            v *= rho(x);
        }
        values.push(v);
    }
    if with_rho {
        values[0] = 0.0;
        values[resolution] = 0.0;
    }
    GridDensity1D::from_values(support_hi, values)
}

/// The smooth density `ρ(x) · (1 - (8x/3 - 1)/d)` on `[0, 3/4]`: the linear
/// density stretched onto the shifting support and tapered to zero at both
/// ends.
pub fn make_smooth_shift_base(d: usize, resolution: usize) -> Result<GridDensity1D> {
    if d == 0 || resolution < 2 {
        return Err(Error::invalid("need d >= 1 and resolution >= 2"));
    }
    let step = 0.75 / resolution as f64;
    let values = (0..=resolution)
        .map(|k| {
            let x = step * k as f64;
            rho(x) * LinearDensity { d }.eval(x / 0.75)
        })
        .collect();
    GridDensity1D::from_values(0.75, values)
}

/// `h(x) = 1 - (2x - 1)/d` on `[0, 1]`, with values in `[1 - 1/d, 1 + 1/d]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDensity {
    pub d: usize,
}

pub fn make_linear_hj(d: usize) -> Result<LinearDensity> {
    if d == 0 {
        return Err(Error::invalid("linear density needs d >= 1"));
    }
    Ok(LinearDensity { d })
}

impl LinearDensity {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        1.0 - (2.0 * x - 1.0) / self.d as f64
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        x - (x * x - x) / self.d as f64
    }

    pub fn inv_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let d = self.d as f64;
        // x^2 - (d+1) x + d u = 0, smaller root
        let b = d + 1.0;
        (2.0 * d * u / (b + (b * b - 4.0 * d * u).max(0.0).sqrt())).clamp(0.0, 1.0)
    }

    pub fn max_value(&self) -> f64 {
        1.0 + 1.0 / self.d as f64
    }
}

/// A univariate density usable as a conditional base or product factor.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseDensity {
    Uniform,
    Linear(LinearDensity),
    Grid(GridDensity1D),
}

impl BaseDensity {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            BaseDensity::Uniform => {
                if (0.0..=1.0).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            BaseDensity::Linear(l) => l.eval(x),
            BaseDensity::Grid(g) => g.eval(x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            BaseDensity::Uniform => x.clamp(0.0, 1.0),
            BaseDensity::Linear(l) => l.cdf(x),
            BaseDensity::Grid(g) => g.cdf(x),
        }
    }

    pub fn inv_cdf(&self, u: f64) -> f64 {
        match self {
            BaseDensity::Uniform => u.clamp(0.0, 1.0),
            BaseDensity::Linear(l) => l.inv_cdf(u),
            BaseDensity::Grid(g) => g.inv_cdf(u),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.inv_cdf(rng.random::<f64>())
    }

    pub fn support_hi(&self) -> f64 {
        match self {
            BaseDensity::Grid(g) => g.support_hi(),
            _ => 1.0,
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            BaseDensity::Uniform => 1.0,
            BaseDensity::Linear(l) => l.max_value(),
            BaseDensity::Grid(g) => g.max_value(),
        }
    }
}
