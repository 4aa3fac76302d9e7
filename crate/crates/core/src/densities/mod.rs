//! The synthetic density suite.
//!
//! Every model is evaluable and sampleable on `[0, 1]^d`. Models are built
//! from a [`ModelDescriptor`], the JSON-serializable recipe used by configs.

pub mod conditional;
pub mod dag;
pub mod grid;
pub mod vine;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use conditional::{eval_conditional, ConditionalDensity, ConditionalKind};
pub use dag::{ConditionalFamily, DagDensityModel, DagKind, ShiftRule};
pub use grid::{
    make_expbm_density, make_linear_hj, make_smooth_shift_base, rho, BaseDensity, GridDensity1D,
    LinearDensity,
};
pub use vine::{
    cdf_fk_checked, fgm_h_inverse, fgm_pair_density, inv_cdf_fk, marginal_fk, theta_for_edge,
    VineCopulaDensity,
};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_RESOLUTION: usize = 4096;

/// Independent coordinates with the given univariate factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductDensity {
    factors: Vec<BaseDensity>,
}

impl ProductDensity {
    pub fn new(factors: Vec<BaseDensity>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::invalid("product density needs at least one factor"));
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[BaseDensity] {
        &self.factors
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.factors
            .iter()
            .zip(x)
            .map(|(f, &v)| f.eval(v))
            .product()
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (f, o) in self.factors.iter().zip(out.iter_mut()) {
            *o = f.sample(rng);
        }
    }

    fn sup_bound(&self) -> f64 {
        self.factors.iter().map(|f| f.max_value()).product()
    }
}

/// `Σ a_j f_j` with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDensity {
    weights: Vec<f64>,
    components: Vec<DensityModel>,
}

impl MixtureDensity {
    pub fn new(weights: Vec<f64>, components: Vec<DensityModel>) -> Result<Self> {
        if components.is_empty() || weights.len() != components.len() {
            return Err(Error::invalid(format!(
                "mixture needs one weight per component, got {} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: c.dim(),
            });
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[DensityModel] {
        &self.components
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        // rounding in the cumulative sum: fall back to the last positive weight
        self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Inner {
    Dag(DagDensityModel),
    Vine(VineCopulaDensity),
    Product(ProductDensity),
    Mixture(MixtureDensity),
}

/// A joint density on `[0, 1]^d` together with the smoothness index `β` and
/// sup bound `F` it declares.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    inner: Inner,
    dim: usize,
    tag: String,
    beta: f64,
}

impl DensityModel {
    pub fn from_dag(model: DagDensityModel, tag: impl Into<String>) -> Self {
        Self {
            dim: model.dim(),
            inner: Inner::Dag(model),
            tag: tag.into(),
            beta: 0.5,
        }
    }

    pub fn from_vine(model: VineCopulaDensity, tag: impl Into<String>) -> Self {
        Self {
            dim: model.dim(),
            inner: Inner::Vine(model),
            tag: tag.into(),
            beta: 0.5,
        }
    }

    pub fn from_product(model: ProductDensity, beta: f64, tag: impl Into<String>) -> Self {
        Self {
            dim: model.factors().len(),
            inner: Inner::Product(model),
            tag: tag.into(),
            beta,
        }
    }

    pub fn from_mixture(model: MixtureDensity, tag: impl Into<String>) -> Self {
        let beta = model
            .components()
            .iter()
            .map(|c| c.beta)
            .fold(f64::INFINITY, f64::min);
        Self {
            dim: model.components()[0].dim(),
            inner: Inner::Mixture(model),
            tag: tag.into(),
            beta,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Declared smoothness index.
    pub fn declared_beta(&self) -> f64 {
        self.beta
    }

    /// Declared sup-norm bound `F`, at least one.
    pub fn sup_bound(&self) -> f64 {
        let f = match &self.inner {
            Inner::Dag(m) => m.sup_bound(),
            Inner::Vine(m) => m.sup_bound(),
            Inner::Product(m) => m.sup_bound(),
            Inner::Mixture(m) => m
                .components
                .iter()
                .map(|c| c.sup_bound())
                .fold(0.0, f64::max),
        };
        f.max(1.0)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    /// Joint density at `x`; zero outside the unit cube. `x.len()` must equal `dim`.
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match &self.inner {
            Inner::Dag(m) => m.eval(x),
            Inner::Vine(m) => m.eval(x),
            Inner::Product(m) => {
                if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    0.0
                } else {
                    m.eval(x)
                }
            }
            Inner::Mixture(m) => m
                .weights
                .iter()
                .zip(&m.components)
                .map(|(w, c)| {
                    if *w == 0.0 {
                        0.0
                    } else {
                        w * c.eval_unchecked(x)
                    }
                })
                .sum(),
        }
    }

    /// Draws one point into `out` (length `dim`).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match &self.inner {
            Inner::Dag(m) => m.sample_into(rng, out),
            Inner::Vine(m) => m.sample_into(rng, out),
            Inner::Product(m) => m.sample_into(rng, out),
            Inner::Mixture(m) => {
                let i = m.pick(rng);
                m.components[i].sample_into(rng, out);
            }
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        let mut r = rng::stream(seed);
        let mut points = vec![0.0; n * self.dim];
        for row in points.chunks_exact_mut(self.dim) {
            self.sample_into(&mut r, row);
        }
        Dataset::new(self.dim, points, seed, self.tag.clone())
    }

    pub fn as_dag(&self) -> Option<&DagDensityModel> {
        match &self.inner {
            Inner::Dag(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_vine(&self) -> Option<&VineCopulaDensity> {
        match &self.inner {
            Inner::Vine(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_mixture(&self) -> Option<&MixtureDensity> {
        match &self.inner {
            Inner::Mixture(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    NBm,
    NBs,
    BTm,
    BTs,
    C,
    #[serde(rename = "mixture")]
    Mixture,
    /// Product of the linear densities `1 - (2x - 1)/d`.
    #[serde(rename = "linear")]
    Linear,
    /// The uniform density on the unit cube.
    #[serde(rename = "uniform")]
    Uniform,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::NBm => "NBm",
            Family::NBs => "NBs",
            Family::BTm => "BTm",
            Family::BTs => "BTs",
            Family::C => "C",
            Family::Mixture => "mixture",
            Family::Linear => "linear",
            Family::Uniform => "uniform",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

/// Serializable recipe for a [`DensityModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub family: Family,
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<ModelDescriptor>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_rule: Option<ShiftRule>,
}

impl ModelDescriptor {
    pub fn new(family: Family, d: usize, seed: u64) -> Self {
        Self {
            family,
            d,
            seed,
            resolution: DEFAULT_RESOLUTION,
            components: None,
            weights: None,
            shift_rule: None,
        }
    }

    pub fn build(&self) -> Result<DensityModel> {
        let tag = self.family.as_str().to_string();
        let rule = self.shift_rule.unwrap_or_default();
        let dag =
            |kind, fam| DagDensityModel::build(kind, fam, self.d, self.seed, self.resolution, rule);
        match self.family {
            Family::NBm => Ok(DensityModel::from_dag(
                dag(DagKind::NaiveBayes, ConditionalFamily::Mixing)?,
                tag,
            )),
            Family::NBs => Ok(DensityModel::from_dag(
                dag(DagKind::NaiveBayes, ConditionalFamily::Shifting)?,
                tag,
            )),
            Family::BTm => Ok(DensityModel::from_dag(
                dag(DagKind::BinaryTree, ConditionalFamily::Mixing)?,
                tag,
            )),
            Family::BTs => Ok(DensityModel::from_dag(
                dag(DagKind::BinaryTree, ConditionalFamily::Shifting)?,
                tag,
            )),
            Family::C => Ok(DensityModel::from_vine(
                VineCopulaDensity::new(self.d)?,
                tag,
            )),
            Family::Linear => {
                let h = make_linear_hj(self.d)?;
                let factors = vec![BaseDensity::Linear(h); self.d];
                Ok(DensityModel::from_product(
                    ProductDensity::new(factors)?,
                    1.0,
                    tag,
                ))
            }
            Family::Uniform => {
                if self.d == 0 {
                    return Err(Error::invalid("dimension must be positive"));
                }
                let factors = vec![BaseDensity::Uniform; self.d];
                Ok(DensityModel::from_product(
                    ProductDensity::new(factors)?,
                    1.0,
                    tag,
                ))
            }
            Family::Mixture => {
                let comps = self
                    .components
                    .as_ref()
                    .filter(|c| !c.is_empty())
                    .ok_or_else(|| Error::Config("mixture descriptor needs components".into()))?;
                let built = comps
                    .iter()
                    .map(|c| c.build())
                    .collect::<Result<Vec<_>>>()?;
                let weights = match &self.weights {
                    Some(w) => w.clone(),
                    None => vec![1.0 / built.len() as f64; built.len()],
                };
                Ok(DensityModel::from_mixture(
                    MixtureDensity::new(weights, built)?,
                    tag,
                ))
            }
        }
    }
}
