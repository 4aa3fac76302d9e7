//! Naive Bayes and binary-tree Bayesian-network densities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conditional::{ConditionalDensity, ConditionalKind};
use super::grid::{
    make_expbm_density, make_linear_hj, make_smooth_shift_base, BaseDensity, GridDensity1D,
};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DagKind {
    NaiveBayes,
    BinaryTree,
}

impl DagKind {
    /// Parent of node `j` (1-based, `j >= 2`).
    pub fn parent(self, j: usize) -> usize {
        match self {
            DagKind::NaiveBayes => 1,
            DagKind::BinaryTree => (j - 1).div_ceil(2),
        }
    }
}

/// Which conditional indices use the shifting form in the `s` families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftRule {
    /// Shifting exactly when `j` is divisible by 3.
    #[default]
    Literal,
    /// Shifting exactly when `j - 1` is divisible by 3, i.e. on the indices
    /// whose base density is the tapered Brownian path.
    RoughIndices,
}

impl ShiftRule {
    fn is_shifting(self, j: usize) -> bool {
        match self {
            ShiftRule::Literal => j.is_multiple_of(3),
            ShiftRule::RoughIndices => (j - 1).is_multiple_of(3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionalFamily {
    /// Every conditional mixes.
    Mixing,
    /// Some conditionals shift (see [`ShiftRule`]).
    Shifting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DagDensityModel {
    dim: usize,
    dag_kind: DagKind,
    root: GridDensity1D,
    conditionals: Vec<ConditionalDensity>,
}

impl DagDensityModel {
    pub fn new(
        dag_kind: DagKind,
        root: GridDensity1D,
        conditionals: Vec<ConditionalDensity>,
    ) -> Result<Self> {
        if root.support_hi() != 1.0 {
            return Err(Error::invalid("root density must live on [0, 1]"));
        }
        Ok(Self {
            dim: conditionals.len() + 1,
            dag_kind,
            root,
            conditionals,
        })
    }

    /// The simulation family: root and rough bases are exponential Brownian
    /// paths seeded from `seed`, smooth bases are the linear density.
    pub fn build(
        dag_kind: DagKind,
        family: ConditionalFamily,
        d: usize,
        seed: u64,
        resolution: usize,
        shift_rule: ShiftRule,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let root = make_expbm_density(derive_seed(seed, "expbm|1"), resolution, false)?;
        let mut conditionals = Vec::with_capacity(d - 1);
        for j in 2..=d {
            let shifting = family == ConditionalFamily::Shifting && shift_rule.is_shifting(j);
            let rough = (j - 1) % 3 == 0;
            let base = if rough {
                let with_rho = family == ConditionalFamily::Shifting;
                BaseDensity::Grid(make_expbm_density(
                    derive_seed(seed, &format!("expbm|{j}")),
                    resolution,
                    with_rho,
                )?)
            } else if shifting {
                BaseDensity::Grid(make_smooth_shift_base(d, resolution)?)
            } else {
                BaseDensity::Linear(make_linear_hj(d)?)
            };
            let kind = if shifting {
                ConditionalKind::Shifting
            } else {
                ConditionalKind::Mixing
            };
            conditionals.push(ConditionalDensity::new(kind, base)?);
        }
        Self::new(dag_kind, root, conditionals)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dag_kind(&self) -> DagKind {
        self.dag_kind
    }

    pub fn root(&self) -> &GridDensity1D {
        &self.root
    }

    /// Conditional of node `j` is `conditionals()[j - 2]`.
    pub fn conditionals(&self) -> &[ConditionalDensity] {
        &self.conditionals
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return 0.0;
        }
        let mut out = self.root.eval(x[0]);
        for (idx, c) in self.conditionals.iter().enumerate() {
            if out == 0.0 {
                break;
            }
            let j = idx + 2;
            let p = self.dag_kind.parent(j);
            out *= c.eval_unchecked(x[j - 1], x[p - 1]);
        }
        out
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        out[0] = self.root.inv_cdf(rng.random::<f64>());
        for (idx, c) in self.conditionals.iter().enumerate() {
            let j = idx + 2;
            let p = self.dag_kind.parent(j);
            out[j - 1] = c.sample_child(out[p - 1], rng);
        }
    }

    pub fn sup_bound(&self) -> f64 {
        self.root.max_value()
            * self
                .conditionals
                .iter()
                .map(|c| c.max_value())
                .product::<f64>()
    }
}
