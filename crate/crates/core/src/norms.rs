//! Sobolev meters: local `H¹` by quadrature, fractional `Ḣ^r` by FFT, integer `Ẇ^{k,p}`,
//! and the dilation identity that turns block norms into slot norms.
//!
//! Multi-index sums run over ordered index tuples, so `Σ_{|α|=k} |∂^α v|²` is the squared
//! Frobenius norm of `D^k v`. This is the convention under which `Ẇ^{k,2}` and `Ḣ^k` agree.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::advect::SolutionHandle;
use crate::error::{Error, Result};
use crate::field::{norm_sq, Cube, Mat, ScalarField};
use crate::plan::{gamma_of, log_add_exp, series_field, CubePlan, SlotVelocity};
use crate::quadrature::{midpoint, richardson, Region};
use crate::velocity::StationaryVelocity;

/// Finite-difference step for second derivatives, relative to the unit of length.
pub const FD_STEP: f64 = 1e-5;
/// Top-octave energy fraction above which a spectrum counts as under-resolved.
pub const ALIAS_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub label: String,
    pub value: f64,
    /// Nodes per axis.
    pub resolution: usize,
    /// Richardson estimate against half the resolution.
    pub error: f64,
    pub alias_warning: bool,
}

fn root_report(label: String, fine: f64, coarse: f64, p: f64, n: usize) -> NormReport {
    let (a, b) = (fine.max(0.0).powf(1.0 / p), coarse.max(0.0).powf(1.0 / p));
    NormReport {
        label,
        value: a,
        resolution: n,
        error: richardson(a, b),
        alias_warning: false,
    }
}

/// `(∫_cube |∇f|²)^{1/2}` by tensor midpoint quadrature.
pub fn l2_grad_norm(field: &dyn ScalarField, cube: &Cube, n_quad: usize) -> Result<NormReport> {
    if n_quad < 16 {
        return Err(Error::InvalidArgument(format!("n_quad = {n_quad} < 16")));
    }
    let region = Region::from(cube);
    let f = |x: &[f64]| Ok(norm_sq(&field.gradient(x)?));
    let fine = midpoint(&region, n_quad, f)?;
    let coarse = midpoint(&region, n_quad / 2, f)?;
    Ok(root_report(format!("H1 seminorm on {cube}"), fine, coarse, 2.0, n_quad))
}

/// `‖∇ρ(·,t)‖_{L²(cube)}` of the transported solution.
pub fn solution_grad_norm(handle: &SolutionHandle, cube: &Cube, t: f64, n_quad: usize) -> Result<NormReport> {
    let mut r = l2_grad_norm(&handle.at(t)?, cube, n_quad)?;
    r.label = format!("H1 seminorm at t = {t} on {cube}");
    Ok(r)
}

/// Samples at `x_j = origin + j·period/n` in every axis, row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicGrid {
    pub dim: usize,
    pub n: usize,
    pub period: f64,
    pub origin: Vec<f64>,
    pub samples: Vec<f64>,
}

impl PeriodicGrid {
    pub fn sample(dim: usize, n: usize, period: f64, origin: Vec<f64>, f: impl Fn(&[f64]) -> Result<f64>) -> Result<Self> {
        if n < 2 || origin.len() != dim || !(period > 0.0) {
            return Err(Error::InvalidArgument(format!("periodic grid n = {n}, period = {period}")));
        }
        let h = period / n as f64;
        let mut samples = Vec::with_capacity(n.pow(dim as u32));
        let mut x = vec![0.0; dim];
        for flat in 0..n.pow(dim as u32) {
            let mut rem = flat;
            for k in (0..dim).rev() {
                x[k] = origin[k] + (rem % n) as f64 * h;
                rem /= n;
            }
            samples.push(f(&x)?);
        }
        Ok(Self {
            dim,
            n,
            period,
            origin,
            samples,
        })
    }

    /// Every other sample along each axis.
    pub fn coarsen(&self) -> Option<Self> {
        if self.n % 2 != 0 || self.n < 4 {
            return None;
        }
        let m = self.n / 2;
        let samples = (0..m.pow(self.dim as u32))
            .map(|flat| {
                let (mut rem, mut idx, mut stride) = (flat, 0, 1);
                for _ in 0..self.dim {
                    idx += 2 * (rem % m) * stride;
                    rem /= m;
                    stride *= self.n;
                }
                self.samples[idx]
            })
            .collect();
        Some(Self {
            n: m,
            samples,
            ..self.clone()
        })
    }

    /// Discrete Fourier coefficients `ĉ_k = N^{-d} Σ_j f_j e^{-2πi k·j/N}`.
    pub fn coefficients(&self) -> Vec<Complex<f64>> {
        let (n, d) = (self.n, self.dim);
        let mut data: Vec<Complex<f64>> = self.samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        let mut line = vec![Complex::new(0.0, 0.0); n];
        for axis in 0..d {
            let stride = n.pow((d - 1 - axis) as u32);
            for start in 0..data.len() {
                if (start / stride) % n != 0 {
                    continue;
                }
                for (i, c) in line.iter_mut().enumerate() {
                    *c = data[start + i * stride];
                }
                fft.process(&mut line);
                for (i, c) in line.iter().enumerate() {
                    data[start + i * stride] = *c;
                }
            }
        }
        let scale = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|c| *c *= scale);
        data
    }
}

/// Signed wavenumber of FFT index `i`.
fn wavenumber(i: usize, n: usize) -> f64 {
    if 2 * i <= n {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

fn spectral_sum(grid: &PeriodicGrid, r: f64) -> (f64, bool) {
    let (n, d) = (grid.n, grid.dim);
    let coef = grid.coefficients();
    let w = 2.0 * std::f64::consts::PI / grid.period;
    let (mut acc, mut total, mut top) = (0.0, 0.0, 0.0);
    let mut k = vec![0.0; d];
    for (flat, c) in coef.iter().enumerate() {
        let mut rem = flat;
        for a in (0..d).rev() {
            k[a] = wavenumber(rem % n, n);
            rem /= n;
        }
        if k.iter().all(|&v| v == 0.0) {
            continue;
        }
        let e = c.norm_sqr();
        total += e;
        if k.iter().any(|v| v.abs() > n as f64 / 4.0) {
            top += e;
        }
        acc += (w * w * norm_sq(&k)).powf(r) * e;
    }
    let vol = grid.period.powi(d as i32);
    ((vol * acc).sqrt(), total > 0.0 && top > ALIAS_THRESHOLD * total)
}

/// Homogeneous `Ḣ^r` seminorm over one period cell, with an alias flag.
pub fn fractional_h_norm(grid: &PeriodicGrid, r: f64) -> Result<NormReport> {
    if !(r >= 0.0) {
        return Err(Error::InvalidArgument(format!("r = {r} < 0")));
    }
    let (value, alias) = spectral_sum(grid, r);
    let error = grid.coarsen().map(|c| richardson(value, spectral_sum(&c, r).0)).unwrap_or(f64::NAN);
    Ok(NormReport {
        label: format!("H^{r} seminorm"),
        value,
        resolution: grid.n,
        error,
        alias_warning: alias,
    })
}

/// Euclidean norms of every `∂^α v` with `|α| = k`, over ordered index tuples.
fn derivative_norms(v: &dyn StationaryVelocity, k: usize, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let d = x.len();
    match k {
        0 => Ok(vec![norm_sq(&v.value(x)?).sqrt()]),
        1 => {
            let j = v.jacobian(x)?;
            Ok((0..d).map(|i| j.column(i).norm()).collect())
        }
        2 => {
            let mut out = Vec::with_capacity(d * d);
            for i in 0..d {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                let dj: Mat = (v.jacobian(&p)? - v.jacobian(&m)?) / (2.0 * h);
                out.extend((0..d).map(|l| dj.column(l).norm()));
            }
            Ok(out)
        }
        _ => Err(Error::InvalidArgument(format!("derivative order {k} > 2"))),
    }
}

/// `(Σ_{|α|=k} ∫_cube |∂^α v|^p)^{1/p}`; second derivatives by central differences of the jacobian.
pub fn wkp_seminorm(v: &dyn StationaryVelocity, k: usize, p: f64, cube: &Cube, n_quad: usize) -> Result<NormReport> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("p = {p} must be finite and at least 1")));
    }
    if k > 2 {
        return Err(Error::InvalidArgument(format!("derivative order {k} > 2")));
    }
    if n_quad < 2 {
        return Err(Error::InvalidArgument(format!("n_quad = {n_quad}")));
    }
    let region = Region::from(cube);
    let h = FD_STEP * cube.side;
    let f = |x: &[f64]| Ok(derivative_norms(v, k, x, h)?.iter().map(|a| a.powf(p)).sum());
    let fine = midpoint(&region, n_quad, f)?;
    let coarse = midpoint(&region, n_quad / 2, f)?;
    Ok(root_report(format!("W^({k},{p}) seminorm on {cube}"), fine, coarse, p, n_quad))
}

/// A slot velocity frozen at time `t`.
pub struct SlotSnapshot<'a> {
    pub slot: &'a SlotVelocity,
    pub t: f64,
}

impl StationaryVelocity for SlotSnapshot<'_> {
    fn dim(&self) -> usize {
        self.slot.center.len()
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.slot.velocity(x, self.t)
    }

    fn jacobian(&self, x: &[f64]) -> Result<Mat> {
        self.slot.jacobian(x, self.t)
    }

    fn support(&self) -> Option<Cube> {
        Some(self.slot.support.clone())
    }
}

/// `Ẇ^{r,p}` of a block-frame field over `(-3,4)^d`: quadrature for integer `r`, FFT for `p = 2`.
pub fn reference_norm(u: &dyn StationaryVelocity, r: f64, p: f64, n_quad: usize) -> Result<NormReport> {
    let d = u.dim();
    if r.fract() == 0.0 && r <= 2.0 {
        return wkp_seminorm(u, r as usize, p, &Cube::block_support(d), n_quad);
    }
    if p != 2.0 {
        return Err(Error::InvalidArgument(format!("fractional order {r} is metered at p = 2 only, got p = {p}")));
    }
    // (-3,4)^d sits inside one period of the length-8 box, so the periodic embedding is exact
    let mut total = 0.0;
    let mut err = 0.0;
    let mut alias = false;
    for c in 0..d {
        let g = PeriodicGrid::sample(d, n_quad, 8.0, vec![-3.5; d], |x| Ok(u.value(x)?[c]))?;
        let rep = fractional_h_norm(&g, r)?;
        total += rep.value * rep.value;
        err += rep.error;
        alias |= rep.alias_warning;
    }
    Ok(NormReport {
        label: format!("H^{r} seminorm on (-3,4)^{d}"),
        value: total.sqrt(),
        resolution: n_quad,
        error: err,
        alias_warning: alias,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotNorm {
    pub n: usize,
    pub lambda: f64,
    pub tau: f64,
    /// `λ^γ / τ`.
    pub factor: f64,
    /// Largest reference norm over the block's segments.
    pub reference: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityNorms {
    pub r: f64,
    pub p: f64,
    pub gamma: f64,
    pub slots: Vec<SlotNorm>,
    /// Sum of the slot values, uniform in time.
    pub partial: f64,
    /// Tail of `Σ λₙ^γ/τₙ` beyond the plan times the largest reference norm, once past the threshold.
    pub tail: Option<f64>,
    pub alias_warning: bool,
}

/// Per-slot `sup_t ‖vₙ(·,t)‖_{Ẇ^{r,p}} = (λₙ^γ/τₙ) · max over segments of ‖u‖_{Ẇ^{r,p}}`.
pub fn velocity_norm_series(plan: &CubePlan, r: f64, p: f64, n_quad: usize) -> Result<VelocityNorms> {
    let d = plan.dim;
    let gamma = gamma_of(r, p, d);
    if !(gamma > 0.0) {
        return Err(Error::SuperCritical(gamma));
    }
    let mut slots = Vec::with_capacity(plan.slots.len());
    let mut alias = false;
    let mut max_ref = 0.0f64;
    // identical blocks (same steps) share their reference norms
    let mut cache: Vec<(&crate::block::Block, f64)> = Vec::new();
    for s in &plan.slots {
        let reference = match cache.iter().find(|(b, _)| b.steps == s.block.steps) {
            Some(&(_, v)) => v,
            None => {
                let mut best = 0.0f64;
                for seg in s.block.schedule()?.segments() {
                    let rep = reference_norm(&*seg.field, r, p, n_quad)?;
                    alias |= rep.alias_warning;
                    best = best.max(rep.value);
                }
                cache.push((&s.block, best));
                best
            }
        };
        max_ref = max_ref.max(reference);
        let factor = s.lambda.powf(gamma) / s.tau;
        slots.push(SlotNorm {
            n: s.n,
            lambda: s.lambda,
            tau: s.tau,
            factor,
            reference,
            value: factor * reference,
        });
    }
    let series = series_field(&plan.scales(), gamma)?;
    Ok(VelocityNorms {
        r,
        p,
        gamma,
        partial: slots.iter().map(|s| s.value).sum(),
        slots,
        tail: series.tail.map(|t| t * max_ref),
        alias_warning: alias,
    })
}

/// One row of the growth table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub t: f64,
    pub cube: usize,
    pub measured_h1: f64,
    /// `αt/τₙ − β̂ₙ + log Mₙ` for the slot owning the cube, inside its certified window.
    pub lower_bound_log: Option<f64>,
    /// Log of the sum of the per-slot bounds over slots whose window contains `t`.
    pub aggregate_log: f64,
}

/// Per-slot log lower bound, `None` outside `[0, n_steps·τₙ]` or without a measured `β̂`.
pub fn slot_lower_bound_log(plan: &CubePlan, slot: usize, t: f64) -> Option<f64> {
    let s = &plan.slots[slot];
    let beta = s.beta()?;
    let s_block = t / s.tau;
    (s_block <= s.block.n_steps() as f64 * (1.0 + 1e-12)).then(|| s.block.alpha * s_block - beta + s.mass.ln())
}

/// Log-sum of the per-slot bounds over the first `n` slots.
pub fn aggregate_lower_bound_log(plan: &CubePlan, t: f64, n: usize) -> f64 {
    (0..n.min(plan.slots.len()))
        .filter_map(|k| slot_lower_bound_log(plan, k, t))
        .fold(f64::NEG_INFINITY, log_add_exp)
}

/// Measured `‖∇ρ(·,t)‖_{L²(cube)}` against the certified bound of the slot whose support holds the cube's center.
pub fn growth_curve(handle: &SolutionHandle, plan: &CubePlan, cubes: &[Cube], times: &[f64], n_quad: usize) -> Result<Vec<GrowthRow>> {
    let mut rows = Vec::with_capacity(cubes.len() * times.len());
    for &t in times {
        let aggregate_log = aggregate_lower_bound_log(plan, t, plan.slots.len());
        for (i, cube) in cubes.iter().enumerate() {
            let measured = solution_grad_norm(handle, cube, t, n_quad)?.value;
            let owner = plan.slots.iter().position(|s| s.support().contains_open(&cube.center));
            rows.push(GrowthRow {
                t,
                cube: i,
                measured_h1: measured,
                lower_bound_log: owner.and_then(|k| slot_lower_bound_log(plan, k, t)),
                aggregate_log,
            });
        }
    }
    Ok(rows)
}
