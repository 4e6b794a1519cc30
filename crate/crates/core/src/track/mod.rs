//! The rounded octagonal track and its area-preserving map onto the strip `(0,1) x (0,8)`.
//!
//! The loop runs clockwise: piece 0 is the unit square `(0,1)^2` travelled
//! upwards, odd pieces are quarter annuli around the corners of the core
//! rectangle `K = [c1, c1 + 1] x [0, 1]`, and even pieces are unit squares on
//! its sides. Every point of the plane is attached to the Voronoi cell of `K`
//! it lies in, and `rho = dist(x, K)`; the track is `r_in <= rho <= r_out`.
//!
//! Strip coordinates are `(u, v)`: `u` runs across the band (0 on the outer
//! boundary, 1 on the inner one) and `v` along the loop, with piece `k`
//! mapped onto `v in [k, k+1]`.
//!
//! On a corner with polar angle `phi` measured clockwise from its entry edge,
//! the map solves `R(u, phi)^2 = (r_out - u)^2 + kappa * beta(phi) * u (1 - u)`
//! for `u` and sets `v = k + F(u, phi)` with `F_phi = -1/2 d(R^2)/du`, which
//! makes the jacobian determinant exactly 1. `beta` vanishes to high order at
//! both ends, so the corners join the squares with matching first derivatives.

mod fields;

pub use fields::{extend_divfree, pullback_velocity, shift_field, smoothstep, StripProfile, TrackField, DEFAULT_COLLAR};

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix2, SVector};
use num_dual::DualNum;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FlowMap, Mat};

/// `kappa` in the corner radius law; forces `F(u, pi/2) = 1` for every `u`.
pub const KAPPA: f64 = FRAC_PI_2;
/// `∫_0^{pi/2} (1 - cos^8 2phi) dphi`.
const BETA_NORM: f64 = 93.0 * PI / 256.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PieceShape {
    /// `u = (x - origin)·e_trans`, `v = k + (x - origin)·e_long`.
    Square {
        origin: [f64; 2],
        e_long: [f64; 2],
        e_trans: [f64; 2],
    },
    /// Quarter annulus entered at polar angle `theta_start`, left at `theta_start - pi/2`.
    Corner { center: [f64; 2], theta_start: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub index: usize,
    pub shape: PieceShape,
}

/// Placement of the eight pieces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackLayout {
    pub r_in: f64,
    pub r_out: f64,
    pub pieces: Vec<Piece>,
}

/// Which cell of the plane a point belongs to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Locus {
    /// Voronoi cell of the core rectangle, `None` inside it.
    pub cell: Option<usize>,
    /// Distance to the core rectangle.
    pub rho: f64,
}

/// `r_in = 2/pi - 1/2`, `r_out = 2/pi + 1/2`.
pub fn build_track() -> TrackLayout {
    TrackLayout::with_radii(2.0 / PI - 0.5, 2.0 / PI + 0.5).expect("standard radii are valid")
}

impl TrackLayout {
    /// Places the loop for the given radii; squares have length 1 and width `r_out - r_in`.
    pub fn with_radii(r_in: f64, r_out: f64) -> Result<Self> {
        if !(r_in > 0.0 && r_out > r_in && r_out.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad track radii ({r_in}, {r_out})")));
        }
        let c1 = r_out;
        let c3 = c1 + 1.0;
        let sq = |index, origin, e_long, e_trans| Piece {
            index,
            shape: PieceShape::Square { origin, e_long, e_trans },
        };
        let co = |index, center, theta_start| Piece {
            index,
            shape: PieceShape::Corner { center, theta_start },
        };
        let pieces = vec![
            sq(0, [0.0, 0.0], [0.0, 1.0], [1.0, 0.0]),
            co(1, [c1, 1.0], PI),
            sq(2, [c1, 1.0 + r_out], [1.0, 0.0], [0.0, -1.0]),
            co(3, [c3, 1.0], FRAC_PI_2),
            sq(4, [c3 + r_out, 1.0], [0.0, -1.0], [-1.0, 0.0]),
            co(5, [c3, 0.0], 0.0),
            sq(6, [c3, -r_out], [-1.0, 0.0], [0.0, 1.0]),
            co(7, [c1, 0.0], -FRAC_PI_2),
        ];
        Ok(Self { r_in, r_out, pieces })
    }

    pub fn mean_radius(&self) -> f64 {
        0.5 * (self.r_in + self.r_out)
    }

    pub fn width(&self) -> f64 {
        self.r_out - self.r_in
    }

    /// Left and right edges of the core rectangle.
    pub fn core_x(&self) -> (f64, f64) {
        (self.r_out, self.r_out + 1.0)
    }

    /// Analytic area of piece `k`.
    pub fn piece_area(&self, k: usize) -> f64 {
        if k % 2 == 0 {
            self.width()
        } else {
            0.25 * PI * (self.r_out * self.r_out - self.r_in * self.r_in)
        }
    }

    /// Voronoi cell of the core rectangle and the distance to it.
    pub fn locate(&self, p: [f64; 2]) -> Locus {
        let (c1, c3) = self.core_x();
        let (x, y) = (p[0], p[1]);
        let corner = |cell: usize, cx: f64, cy: f64| Locus {
            cell: Some(cell),
            rho: (x - cx).hypot(y - cy),
        };
        if x < c1 {
            if y > 1.0 {
                corner(1, c1, 1.0)
            } else if y < 0.0 {
                corner(7, c1, 0.0)
            } else {
                Locus { cell: Some(0), rho: c1 - x }
            }
        } else if x > c3 {
            if y > 1.0 {
                corner(3, c3, 1.0)
            } else if y < 0.0 {
                corner(5, c3, 0.0)
            } else {
                Locus { cell: Some(4), rho: x - c3 }
            }
        } else if y > 1.0 {
            Locus { cell: Some(2), rho: y - 1.0 }
        } else if y < 0.0 {
            Locus { cell: Some(6), rho: -y }
        } else {
            Locus { cell: None, rho: 0.0 }
        }
    }

    /// Piece index when `p` lies on the closed track.
    pub fn piece_of(&self, p: [f64; 2]) -> Option<usize> {
        let l = self.locate(p);
        if l.rho >= self.r_in && l.rho <= self.r_out {
            l.cell
        } else {
            None
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.piece_of(p).is_some()
    }

    /// Strip coordinates of `p`, computed with the formula of piece `k`.
    pub fn planar_uv<D: DualNum<Primitive = f64> + Copy>(&self, k: usize, p: [D; 2]) -> [D; 2] {
        match self.pieces[k].shape {
            PieceShape::Square { origin, e_long, e_trans } => {
                let dx = p[0] - origin[0];
                let dy = p[1] - origin[1];
                [dx * e_trans[0] + dy * e_trans[1], dx * e_long[0] + dy * e_long[1] + k as f64]
            }
            PieceShape::Corner { center, theta_start } => {
                let (r2, phi) = polar(center, theta_start, p);
                let u = self.corner_u(r2, phi);
                [u, self.corner_f(u, phi) + k as f64]
            }
        }
    }

    /// Solves `R(u, phi)^2 = r2` for `u` on the stable branch of the quadratic.
    fn corner_u<D: DualNum<Primitive = f64> + Copy>(&self, r2: D, phi: D) -> D {
        let kb = beta(phi) * KAPPA;
        let a = -kb + 1.0;
        let b = kb - 2.0 * self.r_out;
        let c = -r2 + self.r_out * self.r_out;
        let disc = (b * b - a * c * 4.0).sqrt();
        c * 2.0 / (-b + disc)
    }

    /// `F(u, phi) = (r_out - u) phi - kappa/2 (1 - 2u) B(phi)`.
    fn corner_f<D: DualNum<Primitive = f64> + Copy>(&self, u: D, phi: D) -> D {
        (-u + self.r_out) * phi - (-u * 2.0 + 1.0) * beta_cum(phi) * (0.5 * KAPPA)
    }

    fn corner_f_phi(&self, u: f64, phi: f64) -> f64 {
        (self.r_out - u) - 0.5 * KAPPA * beta(phi) * (1.0 - 2.0 * u)
    }

    /// `R(u, phi)^2`.
    pub fn corner_radius_sq(&self, u: f64, phi: f64) -> f64 {
        (self.r_out - u).powi(2) + KAPPA * beta(phi) * u * (1.0 - u)
    }

    /// Planar point of piece `k` with strip coordinates `(u, v)`; `v` is taken inside `[k, k+1]`.
    pub fn planar_inverse(&self, k: usize, u: f64, v: f64) -> [f64; 2] {
        let s = v - k as f64;
        match self.pieces[k].shape {
            PieceShape::Square { origin, e_long, e_trans } => [
                origin[0] + u * e_trans[0] + s * e_long[0],
                origin[1] + u * e_trans[1] + s * e_long[1],
            ],
            PieceShape::Corner { center, theta_start } => {
                let phi = self.solve_phi(u, s);
                let r = self.corner_radius_sq(u, phi).sqrt();
                let theta = theta_start - phi;
                [center[0] + r * theta.cos(), center[1] + r * theta.sin()]
            }
        }
    }

    /// Newton on `F(u, phi) = s` safeguarded by bisection on `[0, pi/2]`.
    fn solve_phi(&self, u: f64, s: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, FRAC_PI_2);
        if s <= 0.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return FRAC_PI_2;
        }
        let mut phi = s * FRAC_PI_2;
        for _ in 0..100 {
            let g = self.corner_f(u, phi) - s;
            if g > 0.0 {
                hi = phi;
            } else {
                lo = phi;
            }
            let step = g / self.corner_f_phi(u, phi);
            let mut next = phi - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - phi).abs() <= 1e-16 * (1.0 + phi) || hi - lo < 1e-16 {
                return next;
            }
            phi = next;
        }
        phi
    }

    /// Smallest excess `u - 1` reached by the continued coordinate inside the hole.
    ///
    /// Inside the hole `u` grows past 1 only until the level curves close up at the
    /// corner vertex, which happens soonest mid-arc.
    pub fn hole_reach(&self) -> f64 {
        let n = 2000;
        (0..=n)
            .map(|i| {
                let s = KAPPA * beta(FRAC_PI_2 * i as f64 / n as f64);
                let (a, b, c) = (1.0 - s, s - 2.0 * self.r_out, self.r_out * self.r_out);
                let disc = b * b - 4.0 * a * c;
                let u = if disc >= 0.0 { 2.0 * c / (-b + disc.sqrt()) } else { -b / (2.0 * a) };
                u - 1.0
            })
            .fold(self.r_in, f64::min)
    }

    /// Outline polylines for plotting: per piece, its boundary as a closed polygon.
    pub fn outline(&self, samples_per_arc: usize) -> Vec<Vec<[f64; 2]>> {
        (0..8)
            .map(|k| {
                let n = if k % 2 == 0 { 1 } else { samples_per_arc.max(2) };
                let mut poly = Vec::new();
                for i in 0..=n {
                    poly.push(self.planar_inverse(k, 0.0, k as f64 + i as f64 / n as f64));
                }
                for i in (0..=n).rev() {
                    poly.push(self.planar_inverse(k, 1.0, k as f64 + i as f64 / n as f64));
                }
                poly
            })
            .collect()
    }
}

/// `(r^2, phi)` of `p` around `center`, with `phi = theta_start - theta`.
fn polar<D: DualNum<Primitive = f64> + Copy>(center: [f64; 2], theta_start: f64, p: [D; 2]) -> (D, D) {
    let wx = p[0] - center[0];
    let wy = p[1] - center[1];
    let (ax, ay) = (theta_start.cos(), theta_start.sin());
    let dot = wx * ax + wy * ay;
    let cross = wy * ax - wx * ay;
    (wx * wx + wy * wy, (-cross).atan2(dot))
}

/// Normalised corner profile `(1 - cos^8 2phi) / BETA_NORM`.
pub fn beta<D: DualNum<Primitive = f64> + Copy>(phi: D) -> D {
    let c = (phi * 2.0).cos();
    let c2 = c * c;
    let c4 = c2 * c2;
    (-(c4 * c4) + 1.0) / BETA_NORM
}

/// `∫_0^phi beta`; equals 1 at `pi/2`.
pub fn beta_cum<D: DualNum<Primitive = f64> + Copy>(phi: D) -> D {
    let s = (phi * 35.0 + (phi * 4.0).sin() * 14.0 + (phi * 8.0).sin() * 3.5 + (phi * 12.0).sin() * (2.0 / 3.0) + (phi * 16.0).sin() / 16.0) / 128.0;
    (phi - s) / BETA_NORM
}

/// The planar track map `x -> (u, v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackMap {
    pub layout: TrackLayout,
}

impl TrackMap {
    pub fn new(layout: TrackLayout) -> Self {
        Self { layout }
    }

    fn piece(&self, p: [f64; 2]) -> Result<usize> {
        self.layout.piece_of(p).ok_or_else(|| Error::PointOffTrack(p.to_vec()))
    }

    pub fn forward2(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let k = self.piece(p)?;
        Ok(self.layout.planar_uv(k, p))
    }

    /// Value and jacobian of the forward map.
    pub fn forward_jacobian2(&self, p: [f64; 2]) -> Result<([f64; 2], Matrix2<f64>)> {
        let k = self.piece(p)?;
        let (val, jac) = num_dual::jacobian(
            |x: SVector<_, 2>| {
                let uv = self.layout.planar_uv(k, [x[0], x[1]]);
                SVector::from([uv[0], uv[1]])
            },
            &SVector::from(p),
        );
        Ok(([val[0], val[1]], jac))
    }

    /// Wraps `v` into `[0, 8)` and returns the piece holding `(u, v)`.
    pub fn strip_piece(&self, uv: [f64; 2]) -> Result<(usize, f64)> {
        let [u, v] = uv;
        if !(-1e-12..=1.0 + 1e-12).contains(&u) || !v.is_finite() {
            return Err(Error::PointOffTrack(uv.to_vec()));
        }
        let v = v.rem_euclid(8.0);
        let k = (v.floor() as usize).min(7);
        Ok((k, v))
    }

    pub fn inverse2(&self, uv: [f64; 2]) -> Result<[f64; 2]> {
        let (k, v) = self.strip_piece(uv)?;
        Ok(self.layout.planar_inverse(k, uv[0].clamp(0.0, 1.0), v))
    }

    /// Point and jacobian of the inverse map at `(u, v)`.
    pub fn inverse_jacobian2(&self, uv: [f64; 2]) -> Result<([f64; 2], Matrix2<f64>)> {
        let (k, v) = self.strip_piece(uv)?;
        self.inverse_jacobian_in(k, [uv[0].clamp(0.0, 1.0), v])
    }

    /// Forward map and jacobian using the formula of cell `k`, also off the track.
    pub fn forward_jacobian_in(&self, k: usize, p: [f64; 2]) -> ([f64; 2], Matrix2<f64>) {
        let (val, jac) = num_dual::jacobian(
            |x: SVector<_, 2>| {
                let uv = self.layout.planar_uv(k, [x[0], x[1]]);
                SVector::from([uv[0], uv[1]])
            },
            &SVector::from(p),
        );
        ([val[0], val[1]], jac)
    }

    /// Inverse of the continued coordinates of cell `k`; `v` must lie in `[k, k+1]`.
    pub fn inverse_jacobian_in(&self, k: usize, uv: [f64; 2]) -> Result<([f64; 2], Matrix2<f64>)> {
        let p = self.layout.planar_inverse(k, uv[0], uv[1]);
        let (_, jac) = self.forward_jacobian_in(k, p);
        let inv = jac.try_inverse().ok_or_else(|| Error::PointOffTrack(uv.to_vec()))?;
        Ok((p, inv))
    }

    /// Largest spectral norms of the forward and inverse jacobians on an `n x n` lattice per piece.
    pub fn lipschitz_constants(&self, n: usize) -> Result<(f64, f64)> {
        let (mut lf, mut li) = (0.0f64, 0.0f64);
        for k in 0..8 {
            for a in 0..=n {
                for b in 0..=n {
                    let u = a as f64 / n as f64;
                    let v = k as f64 + b as f64 / n as f64;
                    let p = self.layout.planar_inverse(k, u, v);
                    let (_, jac) = num_dual::jacobian(
                        |x: SVector<_, 2>| {
                            let uv = self.layout.planar_uv(k, [x[0], x[1]]);
                            SVector::from([uv[0], uv[1]])
                        },
                        &SVector::from(p),
                    );
                    lf = lf.max(spectral(&jac));
                    if let Some(inv) = jac.try_inverse() {
                        li = li.max(spectral(&inv));
                    }
                }
            }
        }
        Ok((lf, li))
    }
}

fn spectral(m: &Matrix2<f64>) -> f64 {
    let s = m.transpose() * m;
    let tr = s.trace();
    let det = s.determinant();
    (0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt())).sqrt()
}

/// The planar map acting on coordinates `(a, b)` of `R^d`, identity on the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedMap {
    pub planar: TrackMap,
    pub dim: usize,
    /// 0-based plane axes.
    pub a: usize,
    pub b: usize,
}

/// Lifts the planar map to `R^d` on the plane `(a, b)` given with 1-based axes.
pub fn lift_map(m: TrackMap, d: usize, plane: (usize, usize)) -> Result<LiftedMap> {
    let (a, b) = plane;
    if d < 2 || a == b || a == 0 || b == 0 || a > d || b > d {
        return Err(Error::InvalidArgument(format!("plane ({a}, {b}) invalid for d = {d}")));
    }
    Ok(LiftedMap {
        planar: m,
        dim: d,
        a: a - 1,
        b: b - 1,
    })
}

pub fn track_map(layout: TrackLayout) -> TrackMap {
    TrackMap::new(layout)
}

impl LiftedMap {
    pub fn layout(&self) -> &TrackLayout {
        &self.planar.layout
    }

    pub fn plane_point(&self, x: &[f64]) -> [f64; 2] {
        [x[self.a], x[self.b]]
    }

    pub fn with_plane(&self, x: &[f64], p: [f64; 2]) -> Vec<f64> {
        let mut y = x.to_vec();
        y[self.a] = p[0];
        y[self.b] = p[1];
        y
    }

    /// Embeds a 2x2 block into the identity of size `d`.
    pub fn embed(&self, m: &Matrix2<f64>) -> Mat {
        let mut out = Mat::identity(self.dim, self.dim);
        let ix = [self.a, self.b];
        for r in 0..2 {
            for c in 0..2 {
                out[(ix[r], ix[c])] = m[(r, c)];
            }
        }
        out
    }

    /// Rest coordinates, in increasing axis order.
    pub fn rest(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim).filter(|&k| k != self.a && k != self.b).map(|k| x[k]).collect()
    }

    pub fn rest_axes(&self) -> Vec<usize> {
        (0..self.dim).filter(|&k| k != self.a && k != self.b).collect()
    }
}

impl FlowMap for LiftedMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.with_plane(x, self.planar.forward2(self.plane_point(x))?))
    }

    fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.with_plane(y, self.planar.inverse2(self.plane_point(y))?))
    }

    fn jacobian(&self, x: &[f64]) -> Result<Mat> {
        Ok(self.embed(&self.planar.forward_jacobian2(self.plane_point(x))?.1))
    }

    fn inverse_jacobian(&self, y: &[f64]) -> Result<Mat> {
        Ok(self.embed(&self.planar.inverse_jacobian2(self.plane_point(y))?.1))
    }

    fn pull_back(&self, y: &[f64]) -> Result<(Vec<f64>, Mat)> {
        let (p, j) = self.planar.inverse_jacobian2(self.plane_point(y))?;
        Ok((self.with_plane(y, p), self.embed(&j)))
    }
}

/// Piece containing `x`; a longitudinal coordinate on a piece boundary goes to the lower index.
pub fn region_index(x: &[f64], m: &LiftedMap) -> Result<usize> {
    let uv = m.planar.forward2(m.plane_point(x))?;
    Ok(strip_region(uv[1]))
}

/// Region of longitudinal coordinate `v` with the lower-index tie rule.
pub fn strip_region(v: f64) -> usize {
    let v = v.rem_euclid(8.0);
    let f = v.floor();
    let k = if v == f && v > 0.0 { f as usize - 1 } else { f as usize };
    k.min(7)
}
