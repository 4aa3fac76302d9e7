//! Closed-form rate, sparsity and entropy evaluators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A compositional structure `g_q ∘ ... ∘ g_0` in which each component of
/// layer `i` depends on `t[i]` variables and has smoothness `alpha[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionDescriptor {
    pub q: usize,
    pub t: Vec<usize>,
    pub alpha: Vec<f64>,
}

impl CompositionDescriptor {
    pub fn new(q: usize, t: Vec<usize>, alpha: Vec<f64>) -> Result<Self> {
        let c = Self { q, t, alpha };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t.len() != self.q + 1 || self.alpha.len() != self.q + 1 {
            return Err(Error::invalid(format!(
                "expected {} entries in t and alpha, got {} and {}",
                self.q + 1,
                self.t.len(),
                self.alpha.len()
            )));
        }
        if self.t.contains(&0) {
            return Err(Error::invalid("every t_i must be positive"));
        }
        if self.alpha.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::invalid("every alpha_i must be positive"));
        }
        Ok(())
    }

    /// `α*_i = α_i ∏_{ℓ > i} min(α_ℓ, 1)`.
    pub fn effective_smoothness(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.q + 1];
        let mut damp = 1.0;
        for i in (0..=self.q).rev() {
            out[i] = self.alpha[i] * damp;
            damp *= self.alpha[i].min(1.0);
        }
        out
    }
}

/// `φ_n = max_i n^{-2α*_i/(2α*_i + t_i)}` together with the `α*_i`.
pub fn rate_phi(c: &CompositionDescriptor, n: u64) -> Result<(f64, Vec<f64>)> {
    c.validate()?;
    if n < 2 {
        return Err(Error::invalid("rate needs n >= 2"));
    }
    let star = c.effective_smoothness();
    let ln_n = (n as f64).ln();
    let phi = star
        .iter()
        .zip(&c.t)
        .map(|(a, &t)| (-2.0 * a / (2.0 * a + t as f64) * ln_n).exp())
        .fold(0.0, f64::max);
    Ok((phi, star))
}

/// Fraction of parameters to prune: `1 - 2 m ln(m) φ_m / P`, clamped to
/// `[0, 1 - 1/P]` so at least one parameter survives.
pub fn prune_fraction_rule(m: usize, phi_m: f64, total_params: usize) -> Result<f64> {
    if total_params == 0 {
        return Err(Error::invalid("total parameter count must be positive"));
    }
    if !(phi_m > 0.0 && phi_m <= 1.0) {
        return Err(Error::invalid(format!("phi_m = {phi_m} not in (0, 1]")));
    }
    let p = total_params as f64;
    let m = m as f64;
    let raw = 1.0 - 2.0 * m * m.ln() * phi_m / p;
    Ok(raw.min(1.0 - 1.0 / p).max(0.0))
}

/// `(s + 1) ln(2^{2L+5} δ^{-1} (L + 1) p_0² p_{L+1}² s^{2L})`, evaluated in
/// log space.
pub fn entropy_bound(depth: usize, p0: usize, p_out: usize, s: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("delta = {delta} must be positive")));
    }
    if depth == 0 || p0 == 0 || p_out == 0 || s == 0 {
        return Err(Error::invalid("L, p0, p_{L+1} and s must be positive"));
    }
    let l = depth as f64;
    let log_arg = (2.0 * l + 5.0) * std::f64::consts::LN_2 - delta.ln()
        + (l + 1.0).ln()
        + 2.0 * (p0 as f64).ln()
        + 2.0 * (p_out as f64).ln()
        + 2.0 * l * (s as f64).ln();
    Ok((s as f64 + 1.0) * log_arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_examples() {
        let c = CompositionDescriptor::new(0, vec![1], vec![0.5]).unwrap();
        let (phi, star) = rate_phi(&c, 10_000).unwrap();
        assert!((phi - 0.01).abs() < 1e-15);
        assert_eq!(star, vec![0.5]);

        let c2 = CompositionDescriptor::new(1, vec![1, 3], vec![0.5, 10.0]).unwrap();
        let (phi2, star2) = rate_phi(&c2, 10_000).unwrap();
        assert_eq!(star2, vec![0.5, 10.0]);
        assert!((phi2 - 0.01).abs() < 1e-15);
    }

    #[test]
    fn damping_by_rough_outer_layers() {
        let c = CompositionDescriptor::new(2, vec![1, 1, 1], vec![2.0, 0.5, 3.0]).unwrap();
        assert_eq!(c.effective_smoothness(), vec![1.0, 0.5, 3.0]);
    }

    #[test]
    fn prune_example() {
        let f = prune_fraction_rule(400, 0.05, 10_000).unwrap();
        let expected = 1.0 - 2.0 * 400.0 * 400f64.ln() * 0.05 / 10_000.0;
        assert!((f - expected).abs() < 1e-15);
        assert!((f - 0.976034).abs() < 1e-6);
        assert_eq!(prune_fraction_rule(400, 1.0, 10).unwrap(), 0.0);
        assert!(prune_fraction_rule(400, 0.0, 10).is_err());
    }

    #[test]
    fn entropy_example() {
        let b = entropy_bound(1, 1, 1, 1, 1.0).unwrap();
        assert!((b - 2.0 * 256f64.ln()).abs() < 1e-12);
        let b2 = entropy_bound(1, 1, 1, 1, 2.0).unwrap();
        assert!((b - b2 - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(entropy_bound(1, 1, 1, 1, 0.0).is_err());
    }
}
