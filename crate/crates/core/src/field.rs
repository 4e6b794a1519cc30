//! Geometric and field primitives shared by every other module.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `d x d` matrix; row `i` holds the derivatives of component `i`.
pub type Mat = DMatrix<f64>;

pub fn mat_vec(m: &Mat, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|k| m[(i, k)] * v[k]).sum())
        .collect()
}

/// `m^T v`
pub fn mat_t_vec(m: &Mat, v: &[f64]) -> Vec<f64> {
    (0..m.ncols())
        .map(|k| (0..m.nrows()).map(|i| m[(i, k)] * v[i]).sum())
        .collect()
}

pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

pub fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Axis-aligned cube with center and side length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: Vec<f64>,
    pub side: f64,
}

impl Cube {
    pub fn new(center: Vec<f64>, side: f64) -> Result<Self> {
        if center.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "cube dimension {} < 2",
                center.len()
            )));
        }
        if !(side > 0.0) || !side.is_finite() || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad cube side {side}")));
        }
        Ok(Self { center, side })
    }

    /// `(lo, hi)^d`
    pub fn from_bounds(lo: f64, hi: f64, d: usize) -> Self {
        Self {
            center: vec![0.5 * (lo + hi); d],
            side: hi - lo,
        }
    }

    /// The unit cube `(0,1)^d`.
    pub fn unit(d: usize) -> Self {
        Self::from_bounds(0.0, 1.0, d)
    }

    /// The support box `(-3,4)^d` of the building block.
    pub fn block_support(d: usize) -> Self {
        Self::from_bounds(-3.0, 4.0, d)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn lo(&self, k: usize) -> f64 {
        self.center[k] - 0.5 * self.side
    }

    pub fn hi(&self, k: usize) -> f64 {
        self.center[k] + 0.5 * self.side
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim() as i32)
    }

    /// Closed containment.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|k| x[k] >= self.lo(k) && x[k] <= self.hi(k))
    }

    pub fn contains_open(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && (0..self.dim()).all(|k| x[k] > self.lo(k) && x[k] < self.hi(k))
    }

    pub fn contains_cube(&self, other: &Cube) -> bool {
        (0..self.dim()).all(|k| other.lo(k) >= self.lo(k) - 1e-12 && other.hi(k) <= self.hi(k) + 1e-12)
    }

    /// Same center, side multiplied by `k`.
    pub fn dilate(&self, k: f64) -> Cube {
        Cube {
            center: self.center.clone(),
            side: self.side * k,
        }
    }

    /// True when the open cubes do not intersect.
    pub fn disjoint(&self, other: &Cube) -> bool {
        (0..self.dim()).any(|k| self.hi(k) <= other.lo(k) || other.hi(k) <= self.lo(k))
    }

    /// Affine image of the unit cube: `lo + side * s` for `s in [0,1]^d`.
    pub fn from_unit(&self, s: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|k| self.lo(k) + self.side * s[k]).collect()
    }
}

impl fmt::Display for Cube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cube(center={:?}, side={})", self.center, self.side)
    }
}

/// Where a scalar field may be evaluated.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Whole(usize),
    Cube(Cube),
    /// Identifies parallel faces of `[0, period]^d`.
    Torus { dim: usize, period: f64 },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Whole(d) => *d,
            Domain::Cube(c) => c.dim(),
            Domain::Torus { dim, .. } => *dim,
        }
    }

    pub fn torus(dim: usize) -> Self {
        Domain::Torus { dim, period: 8.0 }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && match self {
                Domain::Whole(_) | Domain::Torus { .. } => x.iter().all(|v| v.is_finite()),
                Domain::Cube(c) => c.contains(x),
            }
    }

    pub fn contains_cube(&self, cube: &Cube) -> bool {
        match self {
            Domain::Whole(d) | Domain::Torus { dim: d, .. } => cube.dim() == *d,
            Domain::Cube(c) => c.contains_cube(cube),
        }
    }

    /// Wraps torus coordinates into `[0, period)`; identity otherwise.
    pub fn canonical(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Domain::Torus { period, .. } => x.iter().map(|v| v.rem_euclid(*period)).collect(),
            _ => x.to_vec(),
        }
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                point: x.to_vec(),
                domain: format!("{self:?}"),
            })
        }
    }
}

/// Evaluable scalar datum with pointwise value and gradient.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;
    fn domain(&self) -> Domain;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn value_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(x)?, self.gradient(x)?))
    }
}

pub type FieldRef = Arc<dyn ScalarField>;

type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Closed-form datum given by a value closure and its gradient closure.
#[derive(Clone)]
pub struct AnalyticField {
    pub label: String,
    domain: Domain,
    value: ValueFn,
    gradient: GradFn,
}

impl AnalyticField {
    pub fn new(
        label: impl Into<String>,
        domain: Domain,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            domain,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }
}

impl fmt::Debug for AnalyticField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AnalyticField({}, {:?})", self.label, self.domain)
    }
}

impl ScalarField for AnalyticField {
    fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn domain(&self) -> Domain {
        self.domain.clone()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.domain.check(x)?;
        Ok((self.value)(&self.domain.canonical(x)))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.domain.check(x)?;
        Ok((self.gradient)(&self.domain.canonical(x)))
    }
}

/// Invertible map with forward jacobian.
pub trait FlowMap: Send + Sync {
    fn dim(&self) -> usize;
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn inverse(&self, y: &[f64]) -> Result<Vec<f64>>;
    /// Jacobian of `forward` at `x`.
    fn jacobian(&self, x: &[f64]) -> Result<Mat>;

    /// Jacobian of `inverse` at `y`.
    fn inverse_jacobian(&self, y: &[f64]) -> Result<Mat> {
        let x = self.inverse(y)?;
        self.jacobian(&x)?
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("singular jacobian".into()))
    }

    /// `(inverse(y), D inverse(y))` in one call.
    fn pull_back(&self, y: &[f64]) -> Result<(Vec<f64>, Mat)> {
        Ok((self.inverse(y)?, self.inverse_jacobian(y)?))
    }
}

/// `datum ∘ map⁻¹`: the datum transported by an invertible map.
#[derive(Clone)]
pub struct ComposedField {
    pub datum: FieldRef,
    pub map: Arc<dyn FlowMap>,
}

impl ComposedField {
    pub fn new(datum: FieldRef, map: Arc<dyn FlowMap>) -> Self {
        Self { datum, map }
    }
}

impl ScalarField for ComposedField {
    fn dim(&self) -> usize {
        self.datum.dim()
    }

    fn domain(&self) -> Domain {
        self.datum.domain()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.datum.value(&self.map.inverse(x)?)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_gradient(x)?.1)
    }

    fn value_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (back, jac) = self.map.pull_back(x)?;
        let (v, g) = self.datum.value_gradient(&back)?;
        Ok((v, mat_t_vec(&jac, &g)))
    }
}
