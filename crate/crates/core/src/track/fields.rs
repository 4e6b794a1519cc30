//! Strip fields pulled back to the track, and their divergence-free extension.
//!
//! Every field here is Hamiltonian in its plane: with `G = H(u(x))` the planar
//! velocity is `(-∂_b G, ∂_a G)`. On the strip this is `H'(u) e_v`, and since
//! the track map has unit jacobian the pullback keeps the same stream function.
//! Beyond the track `G` is replaced by its second-order boundary jet in the
//! continued strip coordinate `u`, cut off smoothly inside a collar. The
//! extension is still a function of `u` alone, so its flow is again a strip
//! shear conjugated by the track map and has a closed form everywhere.
//!
//! Inside the hole `u` only continues about 0.011 past 1 before its level
//! curves close up at a corner vertex, so the inner collar is thin. A jet in
//! the distance to the boundary would be wider, but its streamlines cannot
//! follow the boundary round the corners and the flow develops saddles.

use nalgebra::{Matrix2, SVector};
use num_dual::{hessian, second_derivative, Dual2SVec64, DualNum};
use serde::{Deserialize, Serialize};

use super::LiftedMap;
use crate::error::{Error, Result};
use crate::field::{Cube, Mat};
use crate::shears::ShearSpec;
use crate::velocity::StationaryVelocity;

pub const DEFAULT_COLLAR: f64 = 0.25;

/// A divergence-free field on the strip, `U = H'(u) e_v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StripProfile {
    /// The shear `(-1)^i f_{i'}(u) e_v`.
    Shear(ShearSpec),
    /// The unit shift `-e_v`.
    Shift,
}

impl StripProfile {
    /// Stream function `H` with `H(0) = 0`.
    pub fn h<D: DualNum<Primitive = f64> + Copy>(&self, u: D) -> D {
        match self {
            StripProfile::Shear(s) => {
                let w = u * (2.0 * std::f64::consts::PI);
                let c = s.sign() * s.amplitude / (2.0 * std::f64::consts::PI);
                if s.profile_index == 1 {
                    (-w.cos() + 1.0) * c
                } else {
                    w.sin() * c
                }
            }
            StripProfile::Shift => -u,
        }
    }

    /// `H'(u)`, the longitudinal strip velocity.
    pub fn h1(&self, u: f64) -> f64 {
        match self {
            StripProfile::Shear(s) => s.profile(u),
            StripProfile::Shift => -1.0,
        }
    }

    pub fn h2(&self, u: f64) -> f64 {
        match self {
            StripProfile::Shear(s) => s.profile_prime(u),
            StripProfile::Shift => 0.0,
        }
    }
}

/// Quintic smoothstep on `[0, 1]`, clamped outside.
pub fn smoothstep<D: DualNum<Primitive = f64> + Copy>(z: D) -> D {
    if z.re() <= 0.0 {
        return D::from(0.0);
    }
    if z.re() >= 1.0 {
        return D::from(1.0);
    }
    z * z * z * (z * (z * 6.0 - 15.0) + 10.0)
}

fn smoothstep_prime(z: f64) -> f64 {
    if z <= 0.0 || z >= 1.0 {
        0.0
    } else {
        30.0 * z * z * (z - 1.0) * (z - 1.0)
    }
}

/// 1 on `[0, 1]`, 0 outside `(-3, 4)`; value and derivative.
fn bump(s: f64) -> (f64, f64) {
    if (0.0..=1.0).contains(&s) {
        (1.0, 0.0)
    } else if s > -3.0 && s < 0.0 {
        let z = (s + 3.0) / 3.0;
        (smoothstep(z), smoothstep_prime(z) / 3.0)
    } else if s > 1.0 && s < 4.0 {
        let z = (4.0 - s) / 3.0;
        (smoothstep(z), -smoothstep_prime(z) / 3.0)
    } else {
        (0.0, 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Zone {
    /// On the closed track, in piece `k`.
    Track(usize),
    /// Outer collar `-c_out < u < 0`, Voronoi cell `k`.
    Outer(usize),
    /// Inner collar `1 < u < 1 + c_in`, Voronoi cell `k`.
    Hole(usize),
    /// `G` is locally constant: far outside or deep in the hole.
    Flat,
}

/// A strip field pulled back through a lifted track map, optionally extended.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackField {
    pub map: LiftedMap,
    pub profile: StripProfile,
    /// Multiplies the whole field; the flow for time `t` is the unit flow for `speed * t`.
    pub speed: f64,
    /// Outer collar width in `u` once extended; `None` means the field lives on the closed track only.
    pub collar: Option<f64>,
    /// Inner collar width in `u`, limited by how far `u` continues into the hole.
    pub hole_collar: f64,
}

/// The pullback `(Dφ⁻¹ U) ∘ φ` of a strip field, defined on the closed track.
pub fn pullback_velocity(profile: StripProfile, m: &LiftedMap) -> TrackField {
    TrackField {
        map: m.clone(),
        profile,
        speed: 1.0,
        collar: None,
        hole_collar: 0.0,
    }
}

/// Pullback of `-e_v`; its time-`i` flow carries piece `i` onto piece 0.
pub fn shift_field(m: &LiftedMap) -> TrackField {
    pullback_velocity(StripProfile::Shift, m)
}

/// Extends a pulled-back field to a `C¹` divergence-free field supported in `(-3,4)^d`.
pub fn extend_divfree(field: &TrackField, collar: f64) -> Result<TrackField> {
    if !(collar > 0.0 && collar <= 0.25) {
        return Err(Error::InvalidArgument(format!("collar {collar} outside (0, 1/4]")));
    }
    Ok(TrackField {
        collar: Some(collar),
        hole_collar: collar.min(0.75 * field.map.layout().hole_reach()),
        ..field.clone()
    })
}

impl TrackField {
    pub fn with_speed(&self, speed: f64) -> Self {
        Self { speed, ..self.clone() }
    }

    fn layout(&self) -> &super::TrackLayout {
        self.map.layout()
    }

    /// Outer and inner collar widths.
    pub fn collars(&self) -> Option<(f64, f64)> {
        self.collar.map(|c| (c, self.hole_collar))
    }

    /// Transverse cutoff over the rest coordinates and its gradient (indexed like `rest_axes`).
    fn cutoff(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let rest = self.map.rest(x);
        let parts: Vec<(f64, f64)> = rest.iter().map(|&s| bump(s)).collect();
        let g: f64 = parts.iter().map(|p| p.0).product();
        let grad = (0..parts.len())
            .map(|k| {
                parts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| if i == k { p.1 } else { p.0 })
                    .product()
            })
            .collect();
        (g, grad)
    }

    fn zone(&self, p: [f64; 2]) -> Result<Zone> {
        let lay = self.layout();
        let loc = lay.locate(p);
        let cell = loc.cell;
        let u = cell.map_or(f64::NAN, |k| lay.planar_uv(k, p)[0]);
        if let Some(k) = cell {
            if (0.0..=1.0).contains(&u) {
                return Ok(Zone::Track(k));
            }
        }
        let Some((c_out, c_in)) = self.collars() else {
            return Err(Error::PointOffTrack(p.to_vec()));
        };
        Ok(match cell {
            Some(k) if u < 0.0 && u > -c_out => Zone::Outer(k),
            Some(k) if u > 1.0 && u < 1.0 + c_in => Zone::Hole(k),
            _ => Zone::Flat,
        })
    }

    /// The stream function as a function of `u` in zone `z`.
    fn hat<D: DualNum<Primitive = f64> + Copy>(&self, z: Zone, u: D) -> D {
        let h = &self.profile;
        let jet = |b: f64, w: D, dist: D, c: f64| {
            let chi = -smoothstep(dist / c) + 1.0;
            (w * h.h1(b) + w * w * (0.5 * h.h2(b))) * chi + h.h(b)
        };
        match z {
            Zone::Track(_) => h.h(u),
            Zone::Outer(_) => jet(0.0, u, -u, self.collar.unwrap_or(1.0)),
            Zone::Hole(_) => jet(1.0, u - 1.0, u - 1.0, self.hole_collar),
            Zone::Flat => D::from(0.0),
        }
    }

    /// The planar stream function in zone `z`.
    fn stream<D: DualNum<Primitive = f64> + Copy>(&self, z: Zone, p: [D; 2]) -> D {
        match z {
            Zone::Track(k) | Zone::Outer(k) | Zone::Hole(k) => self.hat(z, self.layout().planar_uv(k, p)[0]),
            Zone::Flat => D::from(0.0),
        }
    }

    /// Gradient and hessian of the planar stream function at `p`.
    fn stream_derivatives(&self, p: [f64; 2]) -> Result<Option<([f64; 2], Matrix2<f64>)>> {
        let z = self.zone(p)?;
        if z == Zone::Flat {
            return Ok(None);
        }
        let (_, g, hmat) = hessian(
            |x: SVector<Dual2SVec64<2>, 2>| self.stream(z, [x[0], x[1]]),
            &SVector::from(p),
        );
        Ok(Some(([g[0], g[1]], hmat)))
    }

    /// Stream function value at a planar point; used by tests and plots.
    pub fn stream_value(&self, p: [f64; 2]) -> Result<f64> {
        let z = self.zone(p)?;
        Ok(match z {
            Zone::Flat => {
                let lay = self.layout();
                if lay.locate(p).rho < lay.r_in {
                    self.profile.h(1.0)
                } else {
                    self.profile.h(0.0)
                }
            }
            z => self.stream(z, p),
        })
    }

    fn conjugated_flow(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, Mat)> {
        let d = self.map.dim;
        let p = self.map.plane_point(x);
        let zone = self.zone(p)?;
        let (g, grad_g) = self.cutoff(x);
        let k = match zone {
            Zone::Track(k) | Zone::Outer(k) | Zone::Hole(k) if g != 0.0 || grad_g.iter().any(|&q| q != 0.0) => k,
            _ => return Ok((x.to_vec(), Mat::identity(d, d))),
        };
        let planar = &self.map.planar;
        let (uv, fwd) = planar.forward_jacobian_in(k, p);
        let u = match zone {
            Zone::Track(_) => uv[0].clamp(0.0, 1.0),
            _ => uv[0],
        };
        let (_, h1, h2) = second_derivative(|w| self.hat(zone, w), u);
        let rate = t * self.speed * h1;
        let shear = t * self.speed * g * h2;
        let v = (uv[1] + rate * g).rem_euclid(8.0);
        let k2 = (v.floor() as usize).min(7);
        let (q, inv) = planar.inverse_jacobian_in(k2, [u, v])?;
        let s = Matrix2::new(1.0, 0.0, shear, 1.0);
        let block = inv * s * fwd;
        let mut jac = self.map.embed(&block);
        let (a, b) = (self.map.a, self.map.b);
        for (r, &axis) in self.map.rest_axes().iter().enumerate() {
            jac[(a, axis)] = inv[(0, 1)] * rate * grad_g[r];
            jac[(b, axis)] = inv[(1, 1)] * rate * grad_g[r];
        }
        Ok((self.map.with_plane(x, q), jac))
    }

    fn evaluate(&self, x: &[f64], want_jac: bool) -> Result<(Vec<f64>, Option<Mat>)> {
        let d = self.map.dim;
        let (a, b) = (self.map.a, self.map.b);
        let mut v = vec![0.0; d];
        let mut jac = if want_jac { Some(Mat::zeros(d, d)) } else { None };
        let (g, grad_g) = self.cutoff(x);
        if g == 0.0 && grad_g.iter().all(|&q| q == 0.0) {
            return Ok((v, jac));
        }
        let Some((dg, hs)) = self.stream_derivatives(self.map.plane_point(x))? else {
            return Ok((v, jac));
        };
        let s = self.speed;
        v[a] = -dg[1] * g * s;
        v[b] = dg[0] * g * s;
        if let Some(m) = jac.as_mut() {
            m[(a, a)] = -hs[(1, 0)] * g * s;
            m[(a, b)] = -hs[(1, 1)] * g * s;
            m[(b, a)] = hs[(0, 0)] * g * s;
            m[(b, b)] = hs[(0, 1)] * g * s;
            for (r, &axis) in self.map.rest_axes().iter().enumerate() {
                m[(a, axis)] = -dg[1] * grad_g[r] * s;
                m[(b, axis)] = dg[0] * grad_g[r] * s;
            }
        }
        Ok((v, jac))
    }
}

impl StationaryVelocity for TrackField {
    fn dim(&self) -> usize {
        self.map.dim
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(x, false)?.0)
    }

    fn jacobian(&self, x: &[f64]) -> Result<Mat> {
        Ok(self.evaluate(x, true)?.1.expect("jacobian requested"))
    }

    fn value_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, Mat)> {
        let (v, j) = self.evaluate(x, true)?;
        Ok((v, j.expect("jacobian requested")))
    }

    fn support(&self) -> Option<Cube> {
        Some(Cube::block_support(self.map.dim))
    }

    /// Conjugated strip flow `φ⁻¹ ∘ (v += t·speed·g·Ĥ'(u)) ∘ φ`, where `Ĥ` is the stream
    /// function in `u`; the identity where the field vanishes identically.
    fn exact_flow(&self, x: &[f64], t: f64) -> Option<Result<(Vec<f64>, Mat)>> {
        Some(self.conjugated_flow(x, t))
    }

    fn label(&self) -> String {
        let kind = match self.profile {
            StripProfile::Shear(s) => s.to_string(),
            StripProfile::Shift => "shift".into(),
        };
        format!("track[{kind}, speed={}]", self.speed)
    }
}
