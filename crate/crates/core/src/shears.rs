//! Trigonometric shears on the 8-periodic torus and the winning-shear selector.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComposedField, Cube, FieldRef, FlowMap, Mat};
use crate::quadrature::{midpoint_multi, richardson, Region};
use crate::velocity::StationaryVelocity;

/// Gradient mass below which a datum counts as flat.
pub const ZERO_GRADIENT: f64 = 1e-14;

/// `u(x) = (-1)^i f_{i'}(x_j) e_{j'}` with `f_1 = A sin(2πz)`, `f_2 = A cos(2πz)`.
///
/// Indices are 1-based: `sign_index` is `i`, `profile_index` is `i'`, `axis` is `j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShearSpec {
    pub sign_index: u8,
    pub profile_index: u8,
    pub axis: usize,
    pub amplitude: f64,
    pub dim: usize,
}

impl ShearSpec {
    pub fn new(sign_index: u8, profile_index: u8, axis: usize, amplitude: f64, dim: usize) -> Result<Self> {
        if !matches!(sign_index, 1 | 2) || !matches!(profile_index, 1 | 2) {
            return Err(Error::InvalidArgument(format!(
                "shear indices ({sign_index}, {profile_index}) must be 1 or 2"
            )));
        }
        if dim < 2 || axis == 0 || axis > dim {
            return Err(Error::InvalidArgument(format!("axis {axis} invalid for d = {dim}")));
        }
        if !(amplitude > 0.0) || !amplitude.is_finite() {
            return Err(Error::InvalidArgument(format!("amplitude {amplitude} must be positive")));
        }
        Ok(Self {
            sign_index,
            profile_index,
            axis,
            amplitude,
            dim,
        })
    }

    /// `j'`, 1-based.
    pub fn target(&self) -> usize {
        if self.axis < self.dim {
            self.axis + 1
        } else {
            1
        }
    }

    pub fn sign(&self) -> f64 {
        if self.sign_index % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        Self { amplitude, ..*self }
    }

    /// Signed profile `(-1)^i f_{i'}(z)`.
    pub fn profile(&self, z: f64) -> f64 {
        let w = 2.0 * PI * z;
        self.sign() * self.amplitude * if self.profile_index == 1 { w.sin() } else { w.cos() }
    }

    pub fn profile_prime(&self, z: f64) -> f64 {
        let w = 2.0 * PI * z;
        self.sign() * self.amplitude * 2.0 * PI * if self.profile_index == 1 { w.cos() } else { -w.sin() }
    }

    pub fn profile_second(&self, z: f64) -> f64 {
        -(2.0 * PI).powi(2) * self.profile(z)
    }

    /// `∫_0^z` of the signed profile.
    pub fn antiderivative(&self, z: f64) -> f64 {
        let w = 2.0 * PI * z;
        self.sign() * self.amplitude / (2.0 * PI) * if self.profile_index == 1 { 1.0 - w.cos() } else { w.sin() }
    }

    pub fn velocity(&self) -> ShearVelocity {
        ShearVelocity(*self)
    }

    pub fn flow(&self, t: f64) -> ShearFlow {
        ShearFlow { spec: *self, t }
    }
}

impl fmt::Display for ShearSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "shear(i={}, i'={}, j={}, A={})",
            self.sign_index, self.profile_index, self.axis, self.amplitude
        )
    }
}

/// All `4d` candidates in lexicographic `(j, i', i)` order.
pub fn candidates(dim: usize, amplitude: f64) -> Result<Vec<ShearSpec>> {
    let mut out = Vec::with_capacity(4 * dim);
    for j in 1..=dim {
        for ip in 1..=2 {
            for i in 1..=2 {
                out.push(ShearSpec::new(i, ip, j, amplitude, dim)?);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShearVelocity(pub ShearSpec);

impl StationaryVelocity for ShearVelocity {
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.0.dim];
        v[self.0.target() - 1] = self.0.profile(x[self.0.axis - 1]);
        Ok(v)
    }

    fn jacobian(&self, x: &[f64]) -> Result<Mat> {
        let d = self.0.dim;
        let mut m = Mat::zeros(d, d);
        m[(self.0.target() - 1, self.0.axis - 1)] = self.0.profile_prime(x[self.0.axis - 1]);
        Ok(m)
    }

    fn exact_flow(&self, x: &[f64], t: f64) -> Option<Result<(Vec<f64>, Mat)>> {
        let f = self.0.flow(t);
        Some(f.forward(x).and_then(|y| Ok((y, f.jacobian(x)?))))
    }

    fn label(&self) -> String {
        self.0.to_string()
    }
}

/// Time-`t` flow of a shear: `x + t (-1)^i f_{i'}(x_j) e_{j'}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShearFlow {
    pub spec: ShearSpec,
    pub t: f64,
}

impl ShearFlow {
    fn shifted(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut y = x.to_vec();
        y[self.spec.target() - 1] += t * self.spec.profile(x[self.spec.axis - 1]);
        y
    }
}

impl FlowMap for ShearFlow {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.shifted(x, self.t))
    }

    fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.shifted(y, -self.t))
    }

    fn jacobian(&self, x: &[f64]) -> Result<Mat> {
        let d = self.spec.dim;
        let mut m = Mat::identity(d, d);
        m[(self.spec.target() - 1, self.spec.axis - 1)] = self.t * self.spec.profile_prime(x[self.spec.axis - 1]);
        Ok(m)
    }

    fn inverse_jacobian(&self, y: &[f64]) -> Result<Mat> {
        let d = self.spec.dim;
        let mut m = Mat::identity(d, d);
        m[(self.spec.target() - 1, self.spec.axis - 1)] = -self.t * self.spec.profile_prime(y[self.spec.axis - 1]);
        Ok(m)
    }
}

/// The datum transported for time `t` by the shear.
pub fn advect_under_shear(datum: FieldRef, spec: ShearSpec, t: f64) -> ComposedField {
    ComposedField::new(datum, Arc::new(spec.flow(t)))
}

/// Sheared gradient `J^{-T} g` at a point with axis coordinate `z`: only component `j` changes.
fn sheared_norm_sq(spec: &ShearSpec, t: f64, z: f64, g: &[f64], base: f64) -> f64 {
    let j = spec.axis - 1;
    let jp = spec.target() - 1;
    let gj = g[j] - t * spec.profile_prime(z) * g[jp];
    base - g[j] * g[j] + gj * gj
}

/// `∫|∇φ(T)|²` over the image of `region` for every candidate, followed by `∫|∇φ̄|²`.
fn candidate_integrals(datum: &dyn crate::field::ScalarField, region: &Cube, specs: &[ShearSpec], t: f64, n: usize) -> Result<Vec<f64>> {
    let m = specs.len();
    midpoint_multi(&Region::from(region), n, m + 1, |x| {
        let g = datum.gradient(x)?;
        let base: f64 = g.iter().map(|a| a * a).sum();
        let mut out = Vec::with_capacity(m + 1);
        for s in specs {
            out.push(sheared_norm_sq(s, t, x[s.axis - 1], &g, base));
        }
        out.push(base);
        Ok(out)
    })
}

fn check_quad(n_quad: usize) -> Result<()> {
    if n_quad < 16 {
        return Err(Error::InvalidArgument(format!("n_quad = {n_quad} < 16")));
    }
    Ok(())
}

/// `‖∇φ(·,T)‖²_{L²(Ω_T)} / ‖∇φ̄‖²_{L²(Ω_0)}` where `Ω_0 = region`, by change of variables.
pub fn shear_growth_ratio(datum: &dyn crate::field::ScalarField, region: &Cube, spec: &ShearSpec, t: f64, n_quad: usize) -> Result<f64> {
    check_quad(n_quad)?;
    let v = candidate_integrals(datum, region, std::slice::from_ref(spec), t, n_quad)?;
    if v[1] < ZERO_GRADIENT {
        return Err(Error::ZeroGradient(v[1]));
    }
    Ok(v[0] / v[1])
}

/// Outcome of the winning-shear search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShearSelection {
    pub spec: ShearSpec,
    pub ratio: f64,
    /// Richardson estimate of the quadrature error in `ratio`.
    pub quad_error: f64,
    /// `1 + 2π²A²T²/d`.
    pub bound: f64,
    /// Every candidate in `(j, i', i)` order with its ratio.
    pub ratios: Vec<(ShearSpec, f64)>,
    /// `∫_region |∇φ̄|²`.
    pub base_mass: f64,
    /// Relative defect of the `4d`-candidate sum identity.
    pub sum_defect: f64,
}

impl ShearSelection {
    pub fn certified(&self) -> bool {
        self.ratio >= self.bound - self.quad_error
    }
}

/// Evaluates all `4d` candidates and returns the first maximiser.
pub fn select_shear(datum: &dyn crate::field::ScalarField, region: &Cube, amplitude: f64, t: f64, n_quad: usize) -> Result<ShearSelection> {
    check_quad(n_quad)?;
    let d = region.dim();
    let specs = candidates(d, amplitude)?;
    let fine = candidate_integrals(datum, region, &specs, t, n_quad)?;
    let coarse = candidate_integrals(datum, region, &specs, t, n_quad / 2)?;
    let m = specs.len();
    let base = fine[m];
    if base < ZERO_GRADIENT {
        return Err(Error::ZeroGradient(base));
    }
    let ratios: Vec<f64> = fine[..m].iter().map(|v| v / base).collect();
    let mut best = 0;
    for k in 1..m {
        if ratios[k] > ratios[best] {
            best = k;
        }
    }
    let coarse_ratio = coarse[best] / coarse[m].max(ZERO_GRADIENT);
    let sum: f64 = fine[..m].iter().sum();
    let expected = (4.0 * d as f64 + 8.0 * PI * PI * amplitude * amplitude * t * t) * base;
    Ok(ShearSelection {
        spec: specs[best],
        ratio: ratios[best],
        quad_error: richardson(ratios[best], coarse_ratio),
        bound: 1.0 + 2.0 * PI * PI * amplitude * amplitude * t * t / d as f64,
        ratios: specs.into_iter().zip(ratios).collect(),
        base_mass: base,
        sum_defect: (sum - expected).abs() / base,
    })
}

/// `|Σ ‖∇φ_{i,i',j}(T)‖² − (4d + 8π²A²T²)‖∇φ̄‖²| / ‖∇φ̄‖²`; zero in exact arithmetic.
pub fn sum_identity_defect(datum: &dyn crate::field::ScalarField, region: &Cube, amplitude: f64, t: f64, n_quad: usize) -> Result<f64> {
    check_quad(n_quad)?;
    let d = region.dim();
    let specs = candidates(d, amplitude)?;
    let v = candidate_integrals(datum, region, &specs, t, n_quad)?;
    let base = v[specs.len()];
    if base < ZERO_GRADIENT {
        return Err(Error::ZeroGradient(base));
    }
    let sum: f64 = v[..specs.len()].iter().sum();
    let expected = (4.0 * d as f64 + 8.0 * PI * PI * amplitude * amplitude * t * t) * base;
    Ok((sum - expected).abs() / base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{AnalyticField, Domain, ScalarField};

    fn plane_wave_x2() -> AnalyticField {
        AnalyticField::new(
            "sin(pi x2/4)",
            Domain::torus(2),
            |x| (PI * x[1] / 4.0).sin(),
            |x| vec![0.0, PI / 4.0 * (PI * x[1] / 4.0).cos()],
        )
    }

    #[test]
    fn defining_formula() {
        let s = ShearSpec::new(2, 1, 1, 1.0, 2).unwrap();
        let v = s.velocity().value(&[0.25, 0.0]).unwrap();
        assert!(v[0].abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
        let s = ShearSpec::new(1, 2, 2, 2.0, 2).unwrap();
        assert_eq!(s.target(), 1);
        assert_eq!(s.velocity().value(&[0.0, 0.0]).unwrap(), vec![-2.0, 0.0]);
    }

    #[test]
    fn flow_examples() {
        let s = ShearSpec::new(2, 1, 1, 1.0, 2).unwrap();
        let y = s.flow(1.0).forward(&[0.25, 0.0]).unwrap();
        assert!((y[0] - 0.25).abs() < 1e-15 && (y[1] - 1.0).abs() < 1e-15);
        let f0 = s.flow(0.0);
        assert_eq!(f0.forward(&[0.3, 0.7]).unwrap(), vec![0.3, 0.7]);
        assert_eq!(f0.jacobian(&[0.3, 0.7]).unwrap(), Mat::identity(2, 2));
    }

    #[test]
    fn candidate_order_is_lexicographic() {
        let c = candidates(2, 1.0).unwrap();
        let keys: Vec<_> = c.iter().map(|s| (s.axis, s.profile_index, s.sign_index)).collect();
        assert_eq!(keys, vec![(1, 1, 1), (1, 1, 2), (1, 2, 1), (1, 2, 2), (2, 1, 1), (2, 1, 2), (2, 2, 1), (2, 2, 2)]);
    }

    #[test]
    fn advected_plane_wave_matches_trajectory() {
        let datum: FieldRef = Arc::new(plane_wave_x2());
        let spec = ShearSpec::new(2, 1, 1, 1.0, 2).unwrap();
        for t in [0.0, 0.3, 1.7] {
            let adv = advect_under_shear(datum.clone(), spec, t);
            for x in [[0.1, 0.2], [3.3, 7.9], [5.5, 1.25]] {
                let expect = (PI * (x[1] - t * (2.0 * PI * x[0]).sin()) / 4.0).sin();
                assert!((adv.value(&x).unwrap() - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn plane_wave_ratio_closed_form() {
        let datum = plane_wave_x2();
        let spec = ShearSpec::new(2, 1, 1, 1.0, 2).unwrap();
        let torus = Cube::from_bounds(0.0, 8.0, 2);
        let r = shear_growth_ratio(&datum, &torus, &spec, 1.0, 256).unwrap();
        assert!((r - (1.0 + 2.0 * PI * PI)).abs() / (1.0 + 2.0 * PI * PI) < 1e-6, "{r}");
        assert_eq!(shear_growth_ratio(&datum, &torus, &spec, 0.0, 64).unwrap(), 1.0);
    }

    #[test]
    fn level_direction_shear_does_not_grow() {
        let datum = AnalyticField::new("g(x1)", Domain::torus(2), |x| (x[0]).sin(), |x| vec![x[0].cos(), 0.0]);
        let spec = ShearSpec::new(1, 2, 1, 3.0, 2).unwrap();
        let r = shear_growth_ratio(&datum, &Cube::unit(2), &spec, 2.0, 32).unwrap();
        assert!((r - 1.0).abs() < 1e-14);
    }

    #[test]
    fn selects_axis_seeing_the_gradient() {
        let sel = select_shear(&plane_wave_x2(), &Cube::from_bounds(0.0, 8.0, 2), 1.0, 1.0, 64).unwrap();
        assert_eq!(sel.spec.axis, 1);
        assert!(sel.certified());
        for (s, r) in &sel.ratios {
            if s.axis == 2 {
                assert!((r - 1.0).abs() < 1e-14);
            }
        }
        let x1 = AnalyticField::new("sin(pi x1/4)", Domain::torus(2), |x| (PI * x[0] / 4.0).sin(), |x| {
            vec![PI / 4.0 * (PI * x[0] / 4.0).cos(), 0.0]
        });
        let sel = select_shear(&x1, &Cube::from_bounds(0.0, 8.0, 2), 1.0, 1.0, 64).unwrap();
        assert_eq!(sel.spec.axis, 2);
    }

    #[test]
    fn zero_gradient_rejected() {
        let c = AnalyticField::new("7", Domain::torus(2), |_| 7.0, |_| vec![0.0, 0.0]);
        assert!(matches!(select_shear(&c, &Cube::unit(2), 1.0, 1.0, 16), Err(Error::ZeroGradient(_))));
        assert!(shear_growth_ratio(&c, &Cube::unit(2), &ShearSpec::new(1, 1, 1, 1.0, 2).unwrap(), 1.0, 8).is_err());
    }
}
