//! The transported scalar `ρ(x,t) = ρ̄(Φ_t⁻¹(x))` and an RK4 characteristics oracle.

use crate::error::{Error, Result};
use crate::field::{mat_t_vec, Domain, FieldRef, ScalarField};
use crate::plan::{assemble_velocity, CubePlan, GlobalVelocity};

/// Exact solution of the transport equation driven by an assembled plan.
#[derive(Clone)]
pub struct SolutionHandle {
    pub datum: FieldRef,
    pub velocity: GlobalVelocity,
}

impl SolutionHandle {
    pub fn new(plan: &CubePlan, datum: FieldRef) -> Result<Self> {
        if datum.dim() != plan.dim {
            return Err(Error::InvalidArgument(format!("datum dimension {} vs plan dimension {}", datum.dim(), plan.dim)));
        }
        Ok(Self {
            datum,
            velocity: assemble_velocity(plan)?,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.velocity.horizon
    }

    pub fn evaluate(&self, x: &[f64], t: f64) -> Result<f64> {
        let (y, _) = self.velocity.inverse_flow(x, t)?;
        self.datum.value(&y)
    }

    /// `DΦ_t⁻¹(x)ᵀ ∇ρ̄(Φ_t⁻¹(x))`.
    pub fn evaluate_gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self.evaluate_both(x, t)?.1)
    }

    pub fn evaluate_both(&self, x: &[f64], t: f64) -> Result<(f64, Vec<f64>)> {
        let (y, j) = self.velocity.inverse_flow(x, t)?;
        let (v, g) = self.datum.value_gradient(&y)?;
        Ok((v, mat_t_vec(&j, &g)))
    }

    /// The solution frozen at time `t`.
    pub fn at(&self, t: f64) -> Result<SolutionSlice<'_>> {
        self.velocity.check_time(t)?;
        Ok(SolutionSlice { handle: self, t })
    }
}

/// `ρ(·, t)` as a scalar field.
#[derive(Clone, Copy)]
pub struct SolutionSlice<'a> {
    handle: &'a SolutionHandle,
    pub t: f64,
}

impl ScalarField for SolutionSlice<'_> {
    fn dim(&self) -> usize {
        self.handle.datum.dim()
    }

    fn domain(&self) -> Domain {
        self.handle.datum.domain()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.handle.evaluate(x, self.t)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.handle.evaluate_gradient(x, self.t)
    }

    fn value_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.handle.evaluate_both(x, self.t)
    }
}

/// A velocity that is smooth in time between known switching times.
pub trait TimeVelocity {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;

    /// Times in `(t0, t1)` where the field seen from `x` may jump.
    fn switches(&self, _x: &[f64], _t0: f64, _t1: f64) -> Vec<f64> {
        Vec::new()
    }

    /// Velocity at `t` as seen from inside the switch-free window `(a, b)`.
    ///
    /// Stages that land on a window end must not pick up the neighbouring piece through rounding.
    fn velocity_in(&self, x: &[f64], t: f64, _window: (f64, f64)) -> Result<Vec<f64>> {
        self.velocity(x, t)
    }
}

impl TimeVelocity for GlobalVelocity {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        GlobalVelocity::velocity(self, x, t)
    }

    /// Trajectories never leave the slot they start in.
    fn switches(&self, x: &[f64], t0: f64, t1: f64) -> Vec<f64> {
        match self.slot_of(x) {
            Some(k) => self.slots[k].switches(t0, t1),
            None => Vec::new(),
        }
    }

    /// Slot fields are constant in time between switches, so the window midpoint picks the segment.
    fn velocity_in(&self, x: &[f64], _t: f64, (a, b): (f64, f64)) -> Result<Vec<f64>> {
        GlobalVelocity::velocity(self, x, 0.5 * (a + b))
    }
}

/// Classical RK4 for `ẋ = v(x,t)` from `t0` to `t1`, with steps of at most `dt` that end on every switch.
pub fn rk4_trajectory(v: &dyn TimeVelocity, x: &[f64], t0: f64, t1: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !(t1 >= t0) {
        return Err(Error::InvalidArgument(format!("dt = {dt}, interval [{t0}, {t1}]")));
    }
    let mut stops = v.switches(x, t0, t1);
    stops.push(t1);
    let mut y = x.to_vec();
    let mut t = t0;
    for stop in stops {
        let span = stop - t;
        if span <= 0.0 {
            continue;
        }
        let n = (span / dt).ceil().max(1.0) as usize;
        let h = span / n as f64;
        for i in 0..n {
            let s = t + i as f64 * h;
            y = rk4_step(v, &y, s, h, (t, stop))?;
        }
        t = stop;
    }
    Ok(y)
}

fn rk4_step(v: &dyn TimeVelocity, y: &[f64], s: f64, h: f64, window: (f64, f64)) -> Result<Vec<f64>> {
    let axpy = |a: &[f64], k: &[f64], c: f64| -> Vec<f64> { a.iter().zip(k).map(|(a, k)| a + c * k).collect() };
    let k1 = v.velocity_in(y, s, window)?;
    let k2 = v.velocity_in(&axpy(y, &k1, 0.5 * h), s + 0.5 * h, window)?;
    let k3 = v.velocity_in(&axpy(y, &k2, 0.5 * h), s + 0.5 * h, window)?;
    let k4 = v.velocity_in(&axpy(y, &k3, h), s + h, window)?;
    Ok((0..y.len()).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}
