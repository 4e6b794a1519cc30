//! Uniform-grid scalar fields with tensor-product Lagrange interpolation.
//!
//! Nodes include both faces of the sampled cube: node `i` along an axis sits
//! at `lo + i * side / (n - 1)`. Samples are stored row-major with the last
//! axis varying fastest. The gradient of the interpolant is obtained by
//! differentiating the interpolation polynomial itself.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Cube, Domain, ScalarField};

pub const GRID_MAGIC: &[u8; 4] = b"RGLF";
pub const GRID_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterpOrder {
    Linear,
    Cubic,
}

impl InterpOrder {
    fn stencil(self) -> usize {
        match self {
            InterpOrder::Linear => 2,
            InterpOrder::Cubic => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    cube: Cube,
    n: usize,
    order: InterpOrder,
    samples: Vec<f64>,
}

impl GridField {
    pub fn from_samples(cube: Cube, n: usize, order: InterpOrder, samples: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("n_per_axis = {n} < 2")));
        }
        let expected = n.pow(cube.dim() as u32);
        if samples.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "expected {expected} samples, got {}",
                samples.len()
            )));
        }
        Ok(Self {
            cube,
            n,
            order,
            samples,
        })
    }

    pub fn cube(&self) -> &Cube {
        &self.cube
    }

    pub fn n_per_axis(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> InterpOrder {
        self.order
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn with_order(mut self, order: InterpOrder) -> Self {
        self.order = order;
        self
    }

    pub fn spacing(&self) -> f64 {
        self.cube.side / (self.n - 1) as f64
    }

    pub fn node(&self, index: &[usize]) -> Vec<f64> {
        let h = self.spacing();
        index
            .iter()
            .enumerate()
            .map(|(k, &i)| self.cube.lo(k) + h * i as f64)
            .collect()
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        index.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    /// Value and gradient of the interpolant at `x`.
    pub fn interpolate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.cube.dim();
        if !self.cube.contains(x) {
            return Err(Error::Domain {
                point: x.to_vec(),
                domain: self.cube.to_string(),
            });
        }
        let h = self.spacing();
        let m = self.order.stencil().min(self.n);
        let mut starts = Vec::with_capacity(d);
        let mut weights = Vec::with_capacity(d);
        let mut dweights = Vec::with_capacity(d);
        for k in 0..d {
            let s = (x[k] - self.cube.lo(k)) / h;
            let cell = (s.floor() as isize).clamp(0, self.n as isize - 2) as usize;
            let start = (cell as isize - (m as isize / 2 - 1)).clamp(0, (self.n - m) as isize) as usize;
            let tau = s - start as f64;
            let (w, dw) = lagrange_weights(m, tau);
            starts.push(start);
            weights.push(w);
            dweights.push(dw.into_iter().map(|v| v / h).collect::<Vec<_>>());
        }
        let mut value = 0.0;
        let mut grad = vec![0.0; d];
        let mut idx = vec![0usize; d];
        let mut node = vec![0usize; d];
        loop {
            for k in 0..d {
                node[k] = starts[k] + idx[k];
            }
            let f = self.samples[self.flat_index(&node)];
            let w: f64 = (0..d).map(|k| weights[k][idx[k]]).product();
            value += w * f;
            for (g, kk) in grad.iter_mut().zip(0..d) {
                let mut p = dweights[kk][idx[kk]];
                for k in 0..d {
                    if k != kk {
                        p *= weights[k][idx[k]];
                    }
                }
                *g += p * f;
            }
            // odometer
            let mut k = d;
            loop {
                if k == 0 {
                    return Ok((value, grad));
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < m {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    /// Serializes to the `RGLF` little-endian layout.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(GRID_MAGIC)?;
        w.write_all(&GRID_VERSION.to_le_bytes())?;
        w.write_all(&(self.cube.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        for c in &self.cube.center {
            w.write_all(&c.to_le_bytes())?;
        }
        w.write_all(&self.cube.side.to_le_bytes())?;
        for s in &self.samples {
            w.write_all(&s.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads the `RGLF` layout; the interpolation order is not stored and defaults to cubic.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(Error::InvalidArgument("bad grid magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != GRID_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported grid version {version}")));
        }
        let d = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        if !(2..=8).contains(&d) {
            return Err(Error::InvalidArgument(format!("unsupported dimension {d}")));
        }
        let center = (0..d).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let side = read_f64(&mut r)?;
        let count = n
            .checked_pow(d as u32)
            .ok_or_else(|| Error::InvalidArgument("grid too large".into()))?;
        let samples = (0..count).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        Self::from_samples(Cube::new(center, side)?, n, InterpOrder::Cubic, samples)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Lagrange basis values and their derivatives for nodes `0..m` at `tau`.
fn lagrange_weights(m: usize, tau: f64) -> (Vec<f64>, Vec<f64>) {
    let mut w = vec![0.0; m];
    let mut dw = vec![0.0; m];
    for j in 0..m {
        let mut denom = 1.0;
        for k in 0..m {
            if k != j {
                denom *= j as f64 - k as f64;
            }
        }
        let mut prod = 1.0;
        for k in 0..m {
            if k != j {
                prod *= tau - k as f64;
            }
        }
        w[j] = prod / denom;
        let mut deriv = 0.0;
        for l in 0..m {
            if l == j {
                continue;
            }
            let mut p = 1.0;
            for k in 0..m {
                if k != j && k != l {
                    p *= tau - k as f64;
                }
            }
            deriv += p;
        }
        dw[j] = deriv / denom;
    }
    (w, dw)
}

impl ScalarField for GridField {
    fn dim(&self) -> usize {
        self.cube.dim()
    }

    fn domain(&self) -> Domain {
        Domain::Cube(self.cube.clone())
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.interpolate(x)?.0)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.interpolate(x)?.1)
    }

    fn value_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.interpolate(x)
    }
}

/// Samples `field` at the `n_per_axis^d` nodes of `cube`.
pub fn grid_sample(field: &dyn ScalarField, cube: &Cube, n_per_axis: usize, order: InterpOrder) -> Result<GridField> {
    if n_per_axis < 2 {
        return Err(Error::InvalidArgument(format!("n_per_axis = {n_per_axis} < 2")));
    }
    if !field.domain().contains_cube(cube) {
        return Err(Error::Domain {
            point: cube.center.clone(),
            domain: format!("{:?}", field.domain()),
        });
    }
    let d = cube.dim();
    let total = n_per_axis.pow(d as u32);
    let h = cube.side / (n_per_axis - 1) as f64;
    let mut samples = Vec::with_capacity(total);
    let mut x = vec![0.0; d];
    for flat in 0..total {
        let mut rem = flat;
        for k in (0..d).rev() {
            let i = rem % n_per_axis;
            rem /= n_per_axis;
            // pin the last node to the face exactly
            x[k] = if i == n_per_axis - 1 { cube.hi(k) } else { cube.lo(k) + h * i as f64 };
        }
        samples.push(field.value(&x)?);
    }
    GridField::from_samples(cube.clone(), n_per_axis, order, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::AnalyticField;
    use std::f64::consts::PI;

    fn analytic(d: usize, f: fn(&[f64]) -> f64, g: fn(&[f64]) -> Vec<f64>) -> AnalyticField {
        AnalyticField::new("t", Domain::Whole(d), f, g)
    }

    #[test]
    fn constant_samples() {
        let f = analytic(2, |_| 5.0, |_| vec![0.0, 0.0]);
        let g = grid_sample(&f, &Cube::unit(2), 8, InterpOrder::Cubic).unwrap();
        assert_eq!(g.samples().len(), 64);
        assert!(g.samples().iter().all(|&s| s == 5.0));
        let (_, grad) = g.interpolate(&[0.37, 0.81]).unwrap();
        assert!(grad.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn two_node_linear_axis() {
        let f = analytic(2, |x| x[0], |_| vec![1.0, 0.0]);
        let g = grid_sample(&f, &Cube::unit(2), 2, InterpOrder::Cubic).unwrap();
        // row-major, last axis fastest: (0,0),(0,1),(1,0),(1,1)
        assert_eq!(g.samples(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn linear_reproduction_both_orders() {
        let f = analytic(2, |x| x[0] + 2.0 * x[1], |_| vec![1.0, 2.0]);
        for order in [InterpOrder::Linear, InterpOrder::Cubic] {
            for n in [2, 3, 5, 17] {
                let g = grid_sample(&f, &Cube::new(vec![0.2, -0.4], 1.3).unwrap(), n, order).unwrap();
                for x in [[0.1, -0.5], [-0.44, 0.24], [0.7, 0.0]] {
                    let (v, grad) = g.interpolate(&x).unwrap();
                    assert!((v - (x[0] + 2.0 * x[1])).abs() < 1e-12, "{order:?} n={n}");
                    assert!((grad[0] - 1.0).abs() < 1e-11 && (grad[1] - 2.0).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn cubic_reproduces_cubics() {
        let f = analytic(
            2,
            |x| x[0].powi(3) - x[0] * x[1] * x[1] + 0.5 * x[1].powi(2),
            |x| vec![3.0 * x[0] * x[0] - x[1] * x[1], -2.0 * x[0] * x[1] + x[1]],
        );
        let g = grid_sample(&f, &Cube::unit(2), 9, InterpOrder::Cubic).unwrap();
        let x = [0.123, 0.987];
        let (v, grad) = g.interpolate(&x).unwrap();
        assert!((v - f.value(&x).unwrap()).abs() < 1e-12);
        let exact = f.gradient(&x).unwrap();
        assert!((grad[0] - exact[0]).abs() < 1e-11 && (grad[1] - exact[1]).abs() < 1e-11);
    }

    #[test]
    fn cubic_sine_value_accuracy() {
        let f = analytic(2, |x| (PI * x[0] / 4.0).sin(), |x| vec![PI / 4.0 * (PI * x[0] / 4.0).cos(), 0.0]);
        let g = grid_sample(&f, &Cube::from_bounds(0.0, 8.0, 2), 256, InterpOrder::Cubic).unwrap();
        let x = [1.37, 4.2];
        let (v, _) = g.interpolate(&x).unwrap();
        assert!((v - (PI * 1.37 / 4.0).sin()).abs() < 1e-8);
    }

    #[test]
    fn cubic_sine_gradient_accuracy() {
        let f = analytic(2, |x| (2.0 * PI * x[0]).sin(), |x| vec![2.0 * PI * (2.0 * PI * x[0]).cos(), 0.0]);
        let g = grid_sample(&f, &Cube::unit(2), 256, InterpOrder::Cubic).unwrap();
        let (_, grad) = g.interpolate(&[0.3, 0.5]).unwrap();
        assert!((grad[0] - 2.0 * PI * (0.6 * PI).cos()).abs() < 1e-6);
    }

    #[test]
    fn outside_is_domain_error() {
        let f = analytic(2, |_| 1.0, |_| vec![0.0, 0.0]);
        let g = grid_sample(&f, &Cube::unit(2), 4, InterpOrder::Linear).unwrap();
        assert!(matches!(g.interpolate(&[1.1, 0.5]), Err(Error::Domain { .. })));
        let bounded = AnalyticField::new("b", Domain::Cube(Cube::unit(2)), |_| 1.0, |_| vec![0.0, 0.0]);
        assert!(grid_sample(&bounded, &Cube::from_bounds(0.0, 2.0, 2), 4, InterpOrder::Linear).is_err());
    }

    #[test]
    fn binary_layout_header() {
        let f = analytic(3, |x| x[0] - x[2], |_| vec![1.0, 0.0, -1.0]);
        let g = grid_sample(&f, &Cube::new(vec![0.5, 1.0, -2.0], 2.0).unwrap(), 3, InterpOrder::Cubic).unwrap();
        let bytes = g.to_bytes();
        assert_eq!(&bytes[0..4], b"RGLF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), 0.5);
        assert_eq!(bytes.len(), 16 + 4 * 8 + 27 * 8);
        let back = GridField::read_from(&bytes[..]).unwrap();
        assert_eq!(back, g);
    }
}
