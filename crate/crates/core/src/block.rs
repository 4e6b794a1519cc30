//! Unit growth steps and the blocks built from them.
//!
//! One step runs the best shear pulled back to the track, then shifts the
//! richest band back onto the unit cube. Both segments are sped up by `1 + i`
//! so the step lasts unit time.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{mat_t_vec, norm_sq, Cube, FieldRef, FlowMap, Mat, ScalarField};
use crate::quadrature::{midpoint_multi, richardson, Region};
use crate::shears::{select_shear, ShearSpec, ZERO_GRADIENT};
use crate::track::{extend_divfree, pullback_velocity, shift_field, StripProfile, TrackField, DEFAULT_COLLAR};
use crate::track::{build_track, lift_map, track_map, TrackLayout, TrackMap};
use crate::velocity::{
    schedule_flow, schedule_flow_between, schedule_inverse_flow, Integrator, Segment, StationaryVelocity, TimeSchedule,
};

/// Ladder probes start this many doublings below the closed-form amplitude.
pub const LADDER_SEED: i32 = -8;
/// Doublings allowed past the closed-form amplitude.
pub const MAX_DOUBLINGS: i32 = 20;
/// RK4 step for fields without a closed-form flow.
pub const DEFAULT_DT: f64 = 1e-3;

/// Numerical knobs shared by every step of a block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockOptions {
    /// Midpoint nodes per axis on the unit cube.
    pub n_quad: usize,
    pub collar: f64,
    /// RK4 step used wherever a field has no closed-form flow.
    pub dt: f64,
    /// Lattice points per axis for the `C¹` measurement over `(-3,4)^d`.
    pub c1_lattice: usize,
    pub r_in: f64,
    pub r_out: f64,
}

impl BlockOptions {
    pub fn for_dim(d: usize) -> Self {
        let lay = build_track();
        Self {
            n_quad: if d <= 2 { 128 } else { 32 },
            collar: DEFAULT_COLLAR,
            dt: DEFAULT_DT,
            c1_lattice: if d <= 2 { 128 } else { 64 },
            r_in: lay.r_in,
            r_out: lay.r_out,
        }
    }

    pub fn layout(&self) -> Result<TrackLayout> {
        TrackLayout::with_radii(self.r_in, self.r_out)
    }

    pub fn integrator(&self) -> Integrator {
        Integrator::Hybrid { dt: self.dt }
    }
}

/// One unit of time: shear for `1/(1+i)`, then shift for `i/(1+i)`, both at speed `1+i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthStep {
    pub dim: usize,
    pub shear: ShearSpec,
    pub shift: usize,
    pub amplitude: f64,
    /// `log2(amplitude / A₀)`.
    pub ladder: i32,
    /// Certified `‖∇θ(1)‖ / ‖∇θ(0)‖` on the unit cube.
    pub ratio: f64,
    pub quad_error: f64,
    /// `∫|∇θ̃|²` over each band solid after the shear, relative to the start mass.
    pub region_mass: Vec<f64>,
    pub l_fwd: f64,
    pub l_inv: f64,
    /// `sup|u| + sup|Du|` over both segments on the lattice.
    pub c1: f64,
    pub collar: f64,
    pub r_in: f64,
    pub r_out: f64,
}

impl GrowthStep {
    pub fn speed(&self) -> f64 {
        1.0 + self.shift as f64
    }

    /// Shear and shift durations.
    pub fn durations(&self) -> (f64, f64) {
        let s = self.speed();
        (1.0 / s, self.shift as f64 / s)
    }

    /// The plane `(j, j')`, 1-based, on which the track is laid.
    pub fn plane(&self) -> (usize, usize) {
        (self.shear.axis, self.shear.target())
    }

    /// Extended shear and shift fields at unit speed.
    pub fn fields(&self) -> Result<(TrackField, TrackField)> {
        let m = track_map(TrackLayout::with_radii(self.r_in, self.r_out)?);
        step_fields(&m, self.shear, self.dim, self.collar)
    }

    pub fn segments(&self) -> Result<Vec<Segment>> {
        let (shear, shift) = self.fields()?;
        let (a, b) = self.durations();
        let s = self.speed();
        Ok(vec![
            Segment {
                duration: a,
                field: Arc::new(shear.with_speed(s)),
            },
            Segment {
                duration: b,
                field: Arc::new(shift.with_speed(s)),
            },
        ])
    }

    pub fn schedule(&self) -> Result<TimeSchedule> {
        TimeSchedule::new(self.segments()?, false)
    }
}

fn step_fields(m: &TrackMap, spec: ShearSpec, d: usize, collar: f64) -> Result<(TrackField, TrackField)> {
    let lifted = lift_map(m.clone(), d, (spec.axis, spec.target()))?;
    let shear = extend_divfree(&pullback_velocity(StripProfile::Shear(spec), &lifted), collar)?;
    let shift = extend_divfree(&shift_field(&lifted), collar)?;
    Ok((shear, shift))
}

/// Lipschitz constants of the track map and its inverse, cached for the default layout.
pub fn lipschitz_constants(layout: &TrackLayout) -> Result<(f64, f64)> {
    static DEFAULT: OnceLock<(f64, f64)> = OnceLock::new();
    if *layout == build_track() {
        if let Some(v) = DEFAULT.get() {
            return Ok(*v);
        }
        let v = track_map(layout.clone()).lipschitz_constants(64)?;
        return Ok(*DEFAULT.get_or_init(|| v));
    }
    track_map(layout.clone()).lipschitz_constants(64)
}

/// The closed-form sufficient amplitude `α'·(8 L_f² L_i² d / (2π²))^{1/2}`.
pub fn closed_form_amplitude(alpha_prime: f64, l_fwd: f64, l_inv: f64, d: usize) -> f64 {
    alpha_prime * (8.0 * l_fwd * l_fwd * l_inv * l_inv * d as f64 / (2.0 * PI * PI)).sqrt()
}

fn grad_mass(datum: &dyn ScalarField, region: &Region, n: usize) -> Result<f64> {
    Ok(midpoint_multi(region, n, 1, |x| Ok(vec![norm_sq(&datum.gradient(x)?)]))?[0])
}

/// `∫|∇(θ ∘ X⁻¹)|²` over a region, pulling back through the inverse of `sched` at time `t`.
fn transported_mass(datum: &dyn ScalarField, sched: &TimeSchedule, t: f64, region: &Region, n: usize, integ: Integrator) -> Result<f64> {
    Ok(midpoint_multi(region, n, 1, |x| {
        let (y, j) = schedule_inverse_flow(sched, t, x, integ)?;
        Ok(vec![norm_sq(&mat_t_vec(&j, &datum.gradient(&y)?))])
    })?[0])
}

/// Gradient masses after the shear on the 8 band solids, integrated in strip coordinates.
fn band_masses(datum: &dyn ScalarField, shear: &TrackField, n: usize) -> Result<Vec<f64>> {
    let m = &shear.map;
    let d = m.dim;
    (0..8)
        .map(|i| {
            let mut lo = vec![0.0; d];
            let mut hi = vec![1.0; d];
            lo[m.b] = i as f64;
            hi[m.b] = i as f64 + 1.0;
            let region = Region::new(lo, hi);
            Ok(midpoint_multi(&region, n, 1, |z| {
                let x = m.inverse(z)?;
                let (y, j) = match shear.exact_flow(&x, -1.0) {
                    Some(r) => r?,
                    None => return Err(Error::NoClosedForm { segment: 0, point: x }),
                };
                Ok(vec![norm_sq(&mat_t_vec(&j, &datum.gradient(&y)?))])
            })?[0])
        })
        .collect()
}

/// `sup|u| + sup|Du|_F` of a stationary field on a lattice over `(-3,4)^d`.
pub fn lattice_c1(field: &dyn StationaryVelocity, n: usize) -> Result<f64> {
    let d = field.dim();
    let support = Cube::block_support(d);
    let region = Region::from(&support);
    // midpoint nodes; the maxima are smooth functionals so the offset is harmless
    let total = n.pow(d as u32);
    let mut sup_v = 0.0f64;
    let mut sup_j = 0.0f64;
    let h: Vec<f64> = (0..d).map(|k| (region.hi[k] - region.lo[k]) / n as f64).collect();
    let mut x = vec![0.0; d];
    for flat in 0..total {
        let mut rem = flat;
        for k in (0..d).rev() {
            x[k] = region.lo[k] + ((rem % n) as f64 + 0.5) * h[k];
            rem /= n;
        }
        let (v, j) = field.value_jacobian(&x)?;
        sup_v = sup_v.max(norm_sq(&v).sqrt());
        sup_j = sup_j.max(j.norm());
    }
    Ok(sup_v + sup_j)
}

/// One certified unit growth step for `datum` on the unit cube.
pub fn grow_unit_step(datum: &dyn ScalarField, alpha_prime: f64, d: usize, opts: &BlockOptions) -> Result<GrowthStep> {
    if !(alpha_prime > 1.0) || !alpha_prime.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha' = {alpha_prime} must exceed 1")));
    }
    if datum.dim() != d || d < 2 {
        return Err(Error::InvalidArgument(format!("datum dimension {} does not match d = {d}", datum.dim())));
    }
    let n = opts.n_quad;
    let layout = opts.layout()?;
    let (l_fwd, l_inv) = lipschitz_constants(&layout)?;
    let map = track_map(layout);
    let omega0 = Region::from(&Cube::unit(d));
    let q0 = grad_mass(datum, &omega0, n)?;
    if q0 < ZERO_GRADIENT {
        return Err(Error::ZeroGradient(q0));
    }
    let q0c = grad_mass(datum, &omega0, n / 2)?;
    let a0 = closed_form_amplitude(alpha_prime, l_fwd, l_inv, d);
    let integ = opts.integrator();
    let mut best_ratio = 0.0f64;
    let mut probes = 0;
    for ladder in LADDER_SEED..=MAX_DOUBLINGS {
        probes += 1;
        let amplitude = a0 * 2f64.powi(ladder);
        let sel = select_shear(datum, &Cube::unit(d), amplitude, 1.0, n)?;
        let (shear, _) = step_fields(&map, sel.spec, d, opts.collar)?;
        let masses = band_masses(datum, &shear, n)?;
        let mut shift = 0;
        for (k, &m) in masses.iter().enumerate() {
            if m > masses[shift] {
                shift = k;
            }
        }
        let mut step = GrowthStep {
            dim: d,
            shear: sel.spec,
            shift,
            amplitude,
            ladder,
            ratio: 0.0,
            quad_error: 0.0,
            region_mass: masses.iter().map(|m| m / q0).collect(),
            l_fwd,
            l_inv,
            c1: 0.0,
            collar: opts.collar,
            r_in: opts.r_in,
            r_out: opts.r_out,
        };
        let sched = step.schedule()?;
        let q1 = transported_mass(datum, &sched, 1.0, &omega0, n, integ)?;
        let q1c = transported_mass(datum, &sched, 1.0, &omega0, n / 2, integ)?;
        let ratio = (q1 / q0).sqrt();
        let err = richardson(ratio, (q1c / q0c).sqrt());
        best_ratio = best_ratio.max(ratio);
        if ratio - err >= alpha_prime {
            step.ratio = ratio;
            step.quad_error = err;
            step.c1 = sched
                .segments()
                .iter()
                .map(|s| lattice_c1(&*s.field, opts.c1_lattice))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            return Ok(step);
        }
    }
    Err(Error::AmplitudeSearchFailed { probes, best_ratio })
}

/// A sequence of unit steps with a certified rate `α` per unit time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub dim: usize,
    pub alpha: f64,
    pub steps: Vec<GrowthStep>,
    pub measured_c1: f64,
    /// Empirical offset of the continuous-time bound, once measured.
    pub measured_beta: Option<f64>,
}

impl Block {
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// All segments laid end to end over `[0, n_steps]`.
    pub fn schedule(&self) -> Result<TimeSchedule> {
        let mut segs = Vec::new();
        for s in &self.steps {
            segs.extend(s.segments()?);
        }
        TimeSchedule::new(segs, false)
    }
}

/// Builds `n_steps` unit steps, each certified against the exact solution at the previous integer time.
pub fn build_block(datum: FieldRef, alpha: f64, n_steps: usize, d: usize, opts: &BlockOptions) -> Result<Block> {
    if !(alpha > 0.0) || n_steps == 0 {
        return Err(Error::InvalidArgument(format!("alpha = {alpha}, n_steps = {n_steps}")));
    }
    let mut block = Block {
        dim: d,
        alpha,
        steps: Vec::with_capacity(n_steps),
        measured_c1: 0.0,
        measured_beta: None,
    };
    for k in 0..n_steps {
        let current: Arc<dyn ScalarField> = if k == 0 {
            datum.clone()
        } else {
            Arc::new(crate::field::ComposedField::new(
                datum.clone(),
                Arc::new(block_flow_map_with(&block, k as f64, opts.integrator())?),
            ))
        };
        let step = grow_unit_step(&*current, alpha.exp(), d, opts)?;
        block.measured_c1 = block.measured_c1.max(step.c1);
        block.steps.push(step);
    }
    Ok(block)
}

/// Time-`t` flow of a block as an invertible map, composed from the closed-form segment flows.
#[derive(Clone, Debug)]
pub struct BlockFlow {
    pub schedule: TimeSchedule,
    pub t: f64,
    pub integrator: Integrator,
    dim: usize,
}

pub fn block_flow_map(block: &Block, t: f64) -> Result<BlockFlow> {
    block_flow_map_with(block, t, Integrator::Hybrid { dt: DEFAULT_DT })
}

pub fn block_flow_map_with(block: &Block, t: f64, integrator: Integrator) -> Result<BlockFlow> {
    let max = block.n_steps() as f64;
    if !(t >= 0.0 && t <= max) {
        return Err(Error::TimeRange { t, max });
    }
    Ok(BlockFlow {
        schedule: block.schedule()?,
        t,
        integrator,
        dim: block.dim,
    })
}

impl FlowMap for BlockFlow {
    fn dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(schedule_flow(&self.schedule, self.t, x, self.integrator)?.0)
    }

    fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(schedule_inverse_flow(&self.schedule, self.t, y, self.integrator)?.0)
    }

    fn jacobian(&self, x: &[f64]) -> Result<Mat> {
        Ok(schedule_flow(&self.schedule, self.t, x, self.integrator)?.1)
    }

    fn inverse_jacobian(&self, y: &[f64]) -> Result<Mat> {
        Ok(schedule_inverse_flow(&self.schedule, self.t, y, self.integrator)?.1)
    }

    fn pull_back(&self, y: &[f64]) -> Result<(Vec<f64>, Mat)> {
        schedule_inverse_flow(&self.schedule, self.t, y, self.integrator)
    }
}

/// `β̂` together with the sampled curve `(t, log(‖∇θ(t)‖_{L²(Ω̃₀)} / ‖∇θ̄‖_{L²(Ω₀)}))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaReport {
    pub beta: f64,
    pub samples: Vec<(f64, f64)>,
}

/// Largest shortfall of the measured growth below `e^{αt}` over evenly spaced sample times.
///
/// The flow preserves volume and maps `(-3,4)^d` to itself, so the meter
/// integrates `|Dψ_t^{-T} ∇θ̄|²` at the start points and each trajectory is
/// advanced once through all sample times.
pub fn empirical_beta(block: &Block, datum: &dyn ScalarField, n_time_samples: usize, opts: &BlockOptions) -> Result<BetaReport> {
    if n_time_samples < 2 {
        return Err(Error::InvalidArgument("need at least two time samples".into()));
    }
    let d = block.dim;
    let n = opts.n_quad;
    let base = grad_mass(datum, &Region::from(&Cube::unit(d)), n)?;
    if base < ZERO_GRADIENT {
        return Err(Error::ZeroGradient(base));
    }
    let sched = block.schedule()?;
    let total = block.n_steps() as f64;
    let times: Vec<f64> = (0..n_time_samples).map(|k| total * k as f64 / (n_time_samples - 1) as f64).collect();
    let integ = opts.integrator();
    let wide = Region::from(&Cube::block_support(d));
    // 7 units per axis at the same node spacing as the unit cube would be costly; keep spacing within 4x
    let n_wide = (n * 7 / 4).max(16);
    let masses = midpoint_multi(&wide, n_wide, times.len(), |x| {
        let g = datum.gradient(x)?;
        let mut y = x.to_vec();
        let mut jac = Mat::identity(d, d);
        let mut out = Vec::with_capacity(times.len());
        let mut prev = 0.0;
        for &t in &times {
            if t > prev {
                let (ny, j) = schedule_flow_between(&sched, prev, t, &y, integ)?;
                y = ny;
                jac = j * jac;
                prev = t;
            }
            let inv_t = jac
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::InvalidArgument("singular flow jacobian".into()))?
                .transpose();
            out.push(norm_sq(&crate::field::mat_vec(&inv_t, &g)));
        }
        Ok(out)
    })?;
    let samples: Vec<(f64, f64)> = times.iter().zip(&masses).map(|(&t, &m)| (t, 0.5 * (m / base).ln())).collect();
    let beta = samples
        .iter()
        .map(|&(t, l)| block.alpha * t - l)
        .fold(0.0f64, f64::max);
    Ok(BetaReport { beta, samples })
}
