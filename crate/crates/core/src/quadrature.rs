//! Tensor midpoint quadrature over axis-aligned boxes.

use rayon::prelude::*;

use crate::error::Result;
use crate::field::Cube;

/// A quadrature value with its Richardson error estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub n: usize,
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }
}

impl From<&Cube> for Region {
    fn from(c: &Cube) -> Self {
        let d = c.dim();
        Region::new((0..d).map(|k| c.lo(k)).collect(), (0..d).map(|k| c.hi(k)).collect())
    }
}

/// Integrates `m` integrands at once with `n` midpoint nodes per axis.
///
/// Slabs along the first axis are evaluated in parallel and summed in index
/// order, so results do not depend on thread scheduling.
pub fn midpoint_multi<F>(region: &Region, n: usize, m: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let d = region.dim();
    let h: Vec<f64> = (0..d).map(|k| (region.hi[k] - region.lo[k]) / n as f64).collect();
    let cell: f64 = h.iter().product();
    let inner = n.pow(d as u32 - 1);
    let slabs: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i0| -> Result<Vec<f64>> {
            let mut acc = vec![0.0; m];
            let mut x = vec![0.0; d];
            x[0] = region.lo[0] + (i0 as f64 + 0.5) * h[0];
            for flat in 0..inner {
                let mut rem = flat;
                for k in (1..d).rev() {
                    let i = rem % n;
                    rem /= n;
                    x[k] = region.lo[k] + (i as f64 + 0.5) * h[k];
                }
                let vals = f(&x)?;
                for (a, v) in acc.iter_mut().zip(vals) {
                    *a += v;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; m];
    for s in slabs {
        for (t, v) in total.iter_mut().zip(s) {
            *t += v;
        }
    }
    Ok(total.into_iter().map(|t| t * cell).collect())
}

pub fn midpoint<F>(region: &Region, n: usize, f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    Ok(midpoint_multi(region, n, 1, |x| Ok(vec![f(x)?]))?[0])
}

/// Error estimate for a second-order rule from resolutions `n` and `n/2`.
pub fn richardson(fine: f64, coarse: f64) -> f64 {
    (fine - coarse).abs() / 3.0
}

/// Midpoint value at `n` with the Richardson estimate against `n/2`.
pub fn midpoint_with_error<F>(region: &Region, n: usize, f: F) -> Result<Estimate>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let fine = midpoint(region, n, &f)?;
    let coarse = midpoint(region, (n / 2).max(1), &f)?;
    Ok(Estimate {
        value: fine,
        error: richardson(fine, coarse),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomial() {
        let b = Region::new(vec![0.0, 0.0], vec![1.0, 2.0]);
        let v = midpoint(&b, 64, |x| Ok(x[0] + x[1])).unwrap();
        assert!((v - 3.0).abs() < 1e-12);
    }

    #[test]
    fn error_estimate_tracks_true_error() {
        let b = Region::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let e = midpoint_with_error(&b, 32, |x| Ok((x[0] * x[1]).exp())).unwrap();
        // ∫∫ e^{xy} = Σ 1/(k·k!)
        let exact: f64 = (1..20).map(|k| 1.0 / (k as f64 * (1..=k).map(|j| j as f64).product::<f64>())).sum();
        let true_err = (e.value - exact).abs();
        assert!(true_err < 2.0 * e.error && true_err > 0.5 * e.error);
    }

    #[test]
    fn three_dimensional_volume() {
        let b = Region::from(&Cube::from_bounds(-3.0, 4.0, 3));
        assert!((midpoint(&b, 8, |_| Ok(1.0)).unwrap() - 343.0).abs() < 1e-9);
    }
}
