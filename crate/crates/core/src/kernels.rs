//! Compactly supported polynomial kernels of a prescribed order.
//!
//! A kernel of order `s` integrates to one on `[-1, 1]` and has vanishing
//! moments `∫ u^l K(u) du = 0` for `l = 1..=s`. Kernels here are built from
//! the orthonormal Legendre basis: `K(u) = Σ_{m<=s} φ_m(0) φ_m(u)`, which is
//! the polynomial reproducing kernel of degree `s` evaluated at the origin.
//! Odd terms vanish at zero, so kernels are even and orders `2k` and `2k+1`
//! coincide.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_64;

/// Largest order accepted by [`build_order_kernel`]. Beyond this the monomial
/// coefficients lose too much precision to meet the moment tolerances.
pub const MAX_ORDER: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    order: usize,
    /// Monomial coefficients, ascending degree, valid on `[-1, 1]`.
    coeffs: Vec<f64>,
    sup_norm: f64,
}

/// Moment diagnostics of a kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    /// `∫ K`.
    pub integral: f64,
    /// `∫ u^l K` for `l = 1..=order`.
    pub moments: Vec<f64>,
    /// `∫ |u|^{order+1} |K|`; reported only, no threshold attached.
    pub abs_tail_moment: f64,
    pub pass: bool,
}

/// Builds the Legendre-expansion kernel of order `s`.
pub fn build_order_kernel(s: usize) -> Result<KernelSpec> {
    if s > MAX_ORDER {
        return Err(Error::invalid(format!(
            "kernel order {s} exceeds the supported maximum {MAX_ORDER}"
        )));
    }
    let legendre = legendre_coefficients(s);
    let mut coeffs = vec![0.0; s + 1];
    for (m, p) in legendre.iter().enumerate() {
        // φ_m(0) φ_m(u) = (2m+1)/2 · P_m(0) · P_m(u)
        let scale = (2 * m + 1) as f64 / 2.0 * p[0];
        if scale == 0.0 {
            continue;
        }
        for (c, &pc) in coeffs.iter_mut().zip(p) {
            *c += scale * pc;
        }
    }
    while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
        coeffs.pop();
    }
    KernelSpec::from_coeffs(s, coeffs)
}

impl KernelSpec {
    /// Wraps arbitrary polynomial coefficients; the order is taken on trust
    /// and can be checked with [`verify_moments`].
    pub fn from_coeffs(order: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(
                "kernel coefficients must be finite and nonempty",
            ));
        }
        let sup_norm = polynomial_sup_on_unit(&coeffs);
        if sup_norm <= 0.0 {
            return Err(Error::invalid("kernel is identically zero"));
        }
        Ok(Self {
            order,
            coeffs,
            sup_norm,
        })
    }

    /// The box kernel `1/2 · 1[-1,1]`.
    pub fn box_kernel() -> Self {
        build_order_kernel(0).expect("order 0 is always valid")
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `max |K(u)|` over `[-1, 1]`.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        if !(-1.0..=1.0).contains(&u) {
            return 0.0;
        }
        horner(&self.coeffs, u)
    }

    /// The autoconvolution `t ↦ ∫ K(u) K(u - t) du`, needed for closed-form
    /// integrals of squared product-kernel estimates.
    pub fn autoconvolution(&self) -> AutoConvolution {
        AutoConvolution::new(self)
    }
}

/// Convenience free function mirroring [`KernelSpec::eval`].
pub fn eval_kernel(k: &KernelSpec, u: f64) -> f64 {
    k.eval(u)
}

/// Integrates `K`, its moments up to the order, and the absolute tail moment
/// with the fixed 64-point Gauss–Legendre rule.
pub fn verify_moments(k: &KernelSpec, tol_unit: f64, tol_moment: f64) -> Result<MomentReport> {
    if !(tol_unit > 0.0 && tol_moment > 0.0) {
        return Err(Error::invalid("moment tolerances must be positive"));
    }
    let rule = gauss_legendre_64();
    let integral = rule.integrate(-1.0, 1.0, |u| k.eval(u));
    let moments: Vec<f64> = (1..=k.order)
        .map(|l| rule.integrate(-1.0, 1.0, |u| u.powi(l as i32) * k.eval(u)))
        .collect();
    let s1 = (k.order + 1) as i32;
    let abs_tail_moment = rule.integrate(-1.0, 1.0, |u| u.abs().powi(s1) * k.eval(u).abs());
    let pass = (integral - 1.0).abs() <= tol_unit && moments.iter().all(|m| m.abs() <= tol_moment);
    Ok(MomentReport {
        integral,
        moments,
        abs_tail_moment,
        pass,
    })
}

/// Chebyshev representation of a kernel's autoconvolution on `[0, 2]`.
#[derive(Debug, Clone)]
pub struct AutoConvolution {
    cheb: Vec<f64>,
}

impl AutoConvolution {
    fn new(k: &KernelSpec) -> Self {
        // degree of K(u)K(u-t) integrated over a t-dependent range is 2·deg + 1
        let deg = 2 * (k.coeffs.len() - 1) + 1;
        let n = deg + 1;
        let rule = gauss_legendre_64();
        let values: Vec<f64> = (0..n)
            .map(|j| {
                let x = (std::f64::consts::PI * (j as f64 + 0.5) / n as f64).cos();
                let t = 1.0 + x;
                rule.integrate(t - 1.0, 1.0, |u| {
                    horner(&k.coeffs, u) * horner(&k.coeffs, u - t)
                })
            })
            .collect();
        let cheb = (0..n)
            .map(|i| {
                2.0 / n as f64
                    * values
                        .iter()
                        .enumerate()
                        .map(|(j, v)| {
                            v * (std::f64::consts::PI * i as f64 * (j as f64 + 0.5) / n as f64)
                                .cos()
                        })
                        .sum::<f64>()
            })
            .collect();
        Self { cheb }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.abs();
        if t >= 2.0 {
            return 0.0;
        }
        // Clenshaw on x = t - 1 ∈ [-1, 1]
        let x = t - 1.0;
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        for &c in self.cheb[1..].iter().rev() {
            let b0 = 2.0 * x * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        x * b1 - b2 + 0.5 * self.cheb[0]
    }
}

#[inline]
pub(crate) fn horner(coeffs: &[f64], u: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c)
}

/// Monomial coefficients of `P_0..=P_s`.
fn legendre_coefficients(s: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(s + 1);
    out.push(vec![1.0]);
    if s >= 1 {
        out.push(vec![0.0, 1.0]);
    }
    for n in 1..s {
        let nf = n as f64;
        let mut next = vec![0.0; n + 2];
        for (i, &c) in out[n].iter().enumerate() {
            next[i + 1] += (2.0 * nf + 1.0) * c / (nf + 1.0);
        }
        for (i, &c) in out[n - 1].iter().enumerate() {
            next[i] -= nf * c / (nf + 1.0);
        }
        out.push(next);
    }
    out
}

/// Exact maximum of `|p|` on `[-1, 1]`: endpoints plus the critical points,
/// located by sign changes of `p'` on a fine grid and refined by bisection.
fn polynomial_sup_on_unit(coeffs: &[f64]) -> f64 {
    let deriv: Vec<f64> = coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &c)| i as f64 * c)
        .collect();
    let mut best = horner(coeffs, -1.0).abs().max(horner(coeffs, 1.0).abs());
    if deriv.is_empty() {
        return best;
    }
    let grid = 8192;
    let at = |i: usize| -1.0 + 2.0 * i as f64 / grid as f64;
    let mut prev = horner(&deriv, at(0));
    for i in 1..=grid {
        let x = at(i);
        let cur = horner(&deriv, x);
        if cur == 0.0 {
            best = best.max(horner(coeffs, x).abs());
        } else if prev != 0.0 && prev.signum() != cur.signum() {
            let (mut lo, mut hi) = (at(i - 1), x);
            let lo_sign = prev.signum();
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if horner(&deriv, mid).signum() == lo_sign {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            best = best.max(horner(coeffs, 0.5 * (lo + hi)).abs());
        }
        prev = cur;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent evaluation: explicit powers, no Horner.
    fn naive_poly(coeffs: &[f64], u: f64) -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * u.powi(i as i32))
            .sum()
    }

    #[test]
    fn box_kernel_orders_zero_and_one() {
        for s in [0, 1] {
            let k = build_order_kernel(s).unwrap();
            assert_eq!(k.coeffs(), &[0.5]);
            assert_eq!(k.sup_norm(), 0.5);
            assert_eq!(k.eval(0.0), 0.5);
        }
        let k1 = build_order_kernel(1).unwrap();
        let r = verify_moments(&k1, 1e-10, 1e-8).unwrap();
        assert!(r.pass);
        assert!(r.moments[0].abs() < 1e-15);
    }

    #[test]
    fn outside_support_is_zero() {
        for s in 0..=7 {
            let k = build_order_kernel(s).unwrap();
            assert_eq!(k.eval(1.5), 0.0);
            assert_eq!(k.eval(-1.0000001), 0.0);
        }
    }

    #[test]
    fn order_three_matches_naive_evaluation() {
        let k = build_order_kernel(3).unwrap();
        // Legendre construction: 9/8 - 15/8 u^2
        assert!((k.coeffs()[0] - 9.0 / 8.0).abs() < 1e-15);
        assert!((k.coeffs()[2] + 15.0 / 8.0).abs() < 1e-15);
        let v = k.eval(0.3);
        assert!((v - naive_poly(k.coeffs(), 0.3)).abs() < 1e-15);
        assert!((v - (9.0 / 8.0 - 15.0 / 8.0 * 0.09)).abs() < 1e-15);
    }

    #[test]
    fn all_low_orders_pass_moment_check() {
        for s in 0..=7 {
            let k = build_order_kernel(s).unwrap();
            let r = verify_moments(&k, 1e-10, 1e-8).unwrap();
            assert!(r.pass, "order {s}: {r:?}");
            assert_eq!(r.moments.len(), s);
            assert!(r.abs_tail_moment.is_finite());
        }
    }

    #[test]
    fn scaled_kernel_fails() {
        let k = KernelSpec::box_kernel();
        let doubled =
            KernelSpec::from_coeffs(0, k.coeffs().iter().map(|c| 2.0 * c).collect()).unwrap();
        let r = verify_moments(&doubled, 1e-10, 1e-8).unwrap();
        assert!((r.integral - 2.0).abs() < 1e-14);
        assert!(!r.pass);
    }

    #[test]
    fn rejects_bad_tolerances_and_orders() {
        let k = KernelSpec::box_kernel();
        assert!(verify_moments(&k, 0.0, 1e-8).is_err());
        assert!(build_order_kernel(MAX_ORDER + 1).is_err());
    }

    #[test]
    fn kernels_are_even_and_bounded_by_sup_norm() {
        for s in 0..=7 {
            let k = build_order_kernel(s).unwrap();
            for i in 0..=10_000 {
                let u = -1.0 + 2.0 * i as f64 / 10_000.0;
                assert!((k.eval(u) - k.eval(-u)).abs() < 1e-12);
                assert!(k.eval(u).abs() <= k.sup_norm() + 1e-15);
            }
        }
    }

    #[test]
    fn sup_norm_matches_dense_grid() {
        for s in 0..=7 {
            let k = build_order_kernel(s).unwrap();
            let n = 2_000_000;
            let grid_max = (0..=n)
                .map(|i| naive_poly(k.coeffs(), -1.0 + 2.0 * i as f64 / n as f64).abs())
                .fold(0.0_f64, f64::max);
            assert!(
                (k.sup_norm() - grid_max).abs() < 1e-9,
                "s={s}: {} vs {grid_max}",
                k.sup_norm()
            );
        }
    }

    #[test]
    fn autoconvolution_of_box_is_triangle() {
        let c = KernelSpec::box_kernel().autoconvolution();
        for t in [0.0_f64, 0.3, -0.7, 1.0, 1.9, 2.0, 2.5] {
            let expected = if t.abs() < 2.0 {
                (2.0 - t.abs()) / 4.0
            } else {
                0.0
            };
            assert!((c.eval(t) - expected).abs() < 1e-14, "t={t}");
        }
    }

    #[test]
    fn autoconvolution_matches_direct_quadrature() {
        let k = build_order_kernel(4).unwrap();
        let c = k.autoconvolution();
        let rule = crate::quadrature::GaussLegendre::new(40);
        for t in [0.0, 0.25, 0.8, 1.5, 1.99] {
            let direct = rule.integrate(t - 1.0, 1.0, |u| k.eval(u) * k.eval(u - t));
            assert!((c.eval(t) - direct).abs() < 1e-12, "t={t}");
        }
        // total mass of the autoconvolution is (∫K)^2 = 1
        let mass = rule.integrate_composite(-2.0, 2.0, 8, |t| c.eval(t));
        assert!((mass - 1.0).abs() < 1e-12);
    }
}
