//! D-vine copula density with Farlie–Gumbel–Morgenstern pair copulas and a
//! closed-form square-root marginal.
//!
//! Only the first tree carries dependence, so in copula coordinates the
//! model is a Markov chain `u_1 → u_2 → … → u_d`.

use rand::Rng;

use crate::error::{Error, Result};

/// `1 + θ(1 - 2u)(1 - 2v)`.
pub fn fgm_pair_density(u: f64, v: f64, theta: f64) -> Result<f64> {
    if theta.abs() > 1.0 {
        return Err(Error::OutOfDomain {
            value: theta,
            domain: "FGM parameter [-1, 1]",
        });
    }
    for x in [u, v] {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfDomain {
                value: x,
                domain: "[0, 1]",
            });
        }
    }
    Ok(fgm_unchecked(u, v, theta))
}

#[inline]
fn fgm_unchecked(u: f64, v: f64, theta: f64) -> f64 {
    1.0 + theta * (1.0 - 2.0 * u) * (1.0 - 2.0 * v)
}

/// Parameter of edge `i` (1-based) in a `d`-variable chain: `-1 + 2(i-1)/(d-2)`,
/// replaced by `1/100` where that ratio is exactly one half.
pub fn theta_for_edge(i: usize, d: usize) -> Result<f64> {
    if d < 3 {
        return Err(Error::invalid(format!(
            "copula model needs d >= 3, got {d}"
        )));
    }
    if i == 0 || i > d - 1 {
        return Err(Error::invalid(format!(
            "edge index {i} outside 1..={}",
            d - 1
        )));
    }
    // (i-1)/(d-2) == 1/2  ⇔  2(i-1) == d-2, decided in integers
    if 2 * (i - 1) == d - 2 {
        return Ok(0.01);
    }
    Ok(-1.0 + 2.0 * (i - 1) as f64 / (d - 2) as f64)
}

/// Inverse of the FGM h-function: the `v` with `v + a v (1 - v) = w`,
/// `a = θ(1 - 2u)`.
pub fn fgm_h_inverse(w: f64, u: f64, theta: f64) -> f64 {
    let a = theta * (1.0 - 2.0 * u);
    if a.abs() < 1e-12 {
        return w;
    }
    // root in [0, 1] of a v^2 - (1 + a) v + w = 0, cancellation-free form
    let b = 1.0 + a;
    let denom = b + (b * b - 4.0 * a * w).max(0.0).sqrt();
    if denom == 0.0 {
        // a = -1 and w = 0
        return 0.0;
    }
    (2.0 * w / denom).clamp(0.0, 1.0)
}

fn check_unit(x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::OutOfDomain {
            value: x,
            domain: "[0, 1]",
        });
    }
    Ok(())
}

/// Piece boundaries of the marginal.
const KNOTS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[inline]
fn fk(x: f64, d: f64) -> f64 {
    let a = 1.0 + 0.5 / d;
    let b = 1.0 - 0.5 / d;
    if x < 0.25 {
        a - (0.25 - x).sqrt() / d
    } else if x < 0.5 {
        a - (x - 0.25).sqrt() / d
    } else if x < 0.75 {
        b + (0.75 - x).sqrt() / d
    } else {
        b + (x - 0.75).sqrt() / d
    }
}

#[inline]
fn cdf_fk(x: f64, d: f64) -> f64 {
    let a = 1.0 + 0.5 / d;
    let b = 1.0 - 0.5 / d;
    let c = 2.0 / (3.0 * d);
    if x <= 0.0 {
        0.0
    } else if x < 0.25 {
        a * x - c * (0.125 - (0.25 - x).powf(1.5))
    } else if x < 0.5 {
        0.25 + 1.0 / (24.0 * d) + a * (x - 0.25) - c * (x - 0.25).powf(1.5)
    } else if x < 0.75 {
        0.5 + 1.0 / (12.0 * d) + b * (x - 0.5) + c * (0.125 - (0.75 - x).powf(1.5))
    } else if x < 1.0 {
        0.75 + 1.0 / (24.0 * d) + b * (x - 0.75) + c * (x - 0.75).powf(1.5)
    } else {
        1.0
    }
}

/// The marginal density `f_k` on `[0, 1]`, taking values in `[1 - 1/(2d), 1 + 1/(2d)]`.
pub fn marginal_fk(x: f64, d: usize) -> Result<f64> {
    check_unit(x)?;
    check_d(d)?;
    Ok(fk(x, d as f64))
}

pub fn cdf_fk_checked(x: f64, d: usize) -> Result<f64> {
    check_unit(x)?;
    check_d(d)?;
    Ok(cdf_fk(x, d as f64))
}

/// Inverse marginal cdf: bisection inside the bracketing piece to
/// `|F(x) - u| < 1e-12`, then two Newton steps.
pub fn inv_cdf_fk(u: f64, d: usize) -> Result<f64> {
    check_unit(u)?;
    check_d(d)?;
    Ok(inv_cdf_unchecked(u, d as f64))
}

fn check_d(d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::invalid("marginal needs d >= 1"));
    }
    Ok(())
}

fn inv_cdf_unchecked(u: f64, d: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let piece = (1..4).take_while(|&k| cdf_fk(KNOTS[k], d) <= u).count();
    let (mut lo, mut hi) = (KNOTS[piece], KNOTS[piece + 1]);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        x = 0.5 * (lo + hi);
        let fx = cdf_fk(x, d) - u;
        if fx.abs() < 1e-12 {
            break;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
    }
    let (plo, phi) = (KNOTS[piece], KNOTS[piece + 1]);
    for _ in 0..2 {
        let step = (cdf_fk(x, d) - u) / fk(x, d);
        x = (x - step).clamp(plo, phi);
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct VineCopulaDensity {
    dim: usize,
    thetas: Vec<f64>,
}

impl VineCopulaDensity {
    pub fn new(dim: usize) -> Result<Self> {
        let thetas = (1..dim.max(1))
            .map(|i| theta_for_edge(i, dim))
            .collect::<Result<Vec<_>>>()?;
        if dim < 3 {
            return Err(Error::invalid(format!(
                "copula model needs d >= 3, got {dim}"
            )));
        }
        Ok(Self { dim, thetas })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.dim as f64;
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return 0.0;
        }
        let mut out: f64 = x.iter().map(|&v| fk(v, d)).product();
        let u: Vec<f64> = x.iter().map(|&v| cdf_fk(v, d)).collect();
        for (i, theta) in self.thetas.iter().enumerate() {
            out *= fgm_unchecked(u[i], u[i + 1], *theta);
        }
        out
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim as f64;
        let mut u = rng.random::<f64>();
        out[0] = inv_cdf_unchecked(u, d);
        for (i, theta) in self.thetas.iter().enumerate() {
            let w = rng.random::<f64>();
            u = fgm_h_inverse(w, u, *theta);
            out[i + 1] = inv_cdf_unchecked(u, d);
        }
    }

    pub fn sup_bound(&self) -> f64 {
        let d = self.dim as f64;
        let marg = (1.0 + 0.5 / d).powi(self.dim as i32);
        let cop: f64 = self.thetas.iter().map(|t| 1.0 + t.abs()).product();
        marg * cop
    }
}
