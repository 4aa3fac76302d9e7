//! Mixing and shifting conditional densities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::BaseDensity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionalKind {
    /// `x_p h(x) + (1 - x_p) h(1 - x)`
    Mixing,
    /// `h(max(x - x_p/4, 0))`
    Shifting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDensity {
    kind: ConditionalKind,
    base: BaseDensity,
}

impl ConditionalDensity {
    /// A shifting conditional needs a base on `[0, 3/4]` that vanishes at
    /// zero, otherwise `x ↦ h(max(x - x_p/4, 0))` does not integrate to one.
    pub fn new(kind: ConditionalKind, base: BaseDensity) -> Result<Self> {
        if kind == ConditionalKind::Shifting {
            if base.support_hi() != 0.75 {
                return Err(Error::invalid(format!(
                    "shifting base must be supported on [0, 3/4], got [0, {}]",
                    base.support_hi()
                )));
            }
            if base.eval(0.0) != 0.0 {
                return Err(Error::invalid("shifting base must vanish at zero"));
            }
        }
        Ok(Self { kind, base })
    }

    pub fn kind(&self) -> ConditionalKind {
        self.kind
    }

    pub fn base(&self) -> &BaseDensity {
        &self.base
    }

    /// Density of the child at `x_child` given the parent value; no domain checks.
    #[inline]
    pub fn eval_unchecked(&self, x_child: f64, x_parent: f64) -> f64 {
        match self.kind {
            ConditionalKind::Mixing => {
                x_parent * self.base.eval(x_child)
                    + (1.0 - x_parent) * self.base.eval(1.0 - x_child)
            }
            ConditionalKind::Shifting => self.base.eval((x_child - 0.25 * x_parent).max(0.0)),
        }
    }

    /// Draws the child given the parent value.
    pub fn sample_child<R: Rng + ?Sized>(&self, x_parent: f64, rng: &mut R) -> f64 {
        match self.kind {
            ConditionalKind::Mixing => {
                let pick_direct = rng.random::<f64>() < x_parent;
                let z = self.base.sample(rng);
                if pick_direct {
                    z
                } else {
                    1.0 - z
                }
            }
            ConditionalKind::Shifting => (self.base.sample(rng) + 0.25 * x_parent).min(1.0),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.base.max_value()
    }
}

pub fn eval_conditional(c: &ConditionalDensity, x_child: f64, x_parent: f64) -> Result<f64> {
    for v in [x_child, x_parent] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfDomain {
                value: v,
                domain: "[0, 1]",
            });
        }
    }
    Ok(c.eval_unchecked(x_child, x_parent))
}
