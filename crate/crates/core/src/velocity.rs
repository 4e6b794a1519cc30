//! Stationary velocity fields, piecewise-constant-in-time schedules and their flows.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{Cube, Mat};

/// A time-independent velocity field with analytic jacobian.
pub trait StationaryVelocity: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// Row `i` holds the gradient of component `i`.
    fn jacobian(&self, x: &[f64]) -> Result<Mat>;

    fn value_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, Mat)> {
        Ok((self.value(x)?, self.jacobian(x)?))
    }

    /// Closed support cube, or `None` when the field is not compactly supported.
    fn support(&self) -> Option<Cube> {
        None
    }

    /// Time-`t` flow and its jacobian when a closed form exists at `x`.
    /// Negative `t` gives the inverse flow.
    fn exact_flow(&self, _x: &[f64], _t: f64) -> Option<Result<(Vec<f64>, Mat)>> {
        None
    }

    fn label(&self) -> String {
        "velocity".into()
    }
}

pub type VelocityRef = Arc<dyn StationaryVelocity>;

/// Spatially constant field.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantVelocity(pub Vec<f64>);

impl StationaryVelocity for ConstantVelocity {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn value(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }

    fn jacobian(&self, _x: &[f64]) -> Result<Mat> {
        Ok(Mat::zeros(self.dim(), self.dim()))
    }

    fn exact_flow(&self, x: &[f64], t: f64) -> Option<Result<(Vec<f64>, Mat)>> {
        let y = x.iter().zip(&self.0).map(|(a, v)| a + t * v).collect();
        Some(Ok((y, Mat::identity(self.dim(), self.dim()))))
    }

    fn label(&self) -> String {
        format!("constant{:?}", self.0)
    }
}

/// `speed * inner`; its flow is the inner flow run for `speed * t`.
#[derive(Clone)]
pub struct ScaledVelocity {
    pub inner: VelocityRef,
    pub speed: f64,
}

impl StationaryVelocity for ScaledVelocity {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.inner.value(x)?.into_iter().map(|v| v * self.speed).collect())
    }

    fn jacobian(&self, x: &[f64]) -> Result<Mat> {
        Ok(self.inner.jacobian(x)? * self.speed)
    }

    fn value_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, Mat)> {
        let (v, j) = self.inner.value_jacobian(x)?;
        Ok((v.into_iter().map(|a| a * self.speed).collect(), j * self.speed))
    }

    fn support(&self) -> Option<Cube> {
        self.inner.support()
    }

    fn exact_flow(&self, x: &[f64], t: f64) -> Option<Result<(Vec<f64>, Mat)>> {
        self.inner.exact_flow(x, self.speed * t)
    }

    fn label(&self) -> String {
        format!("{}x{}", self.speed, self.inner.label())
    }
}

#[derive(Clone)]
pub struct Segment {
    pub duration: f64,
    pub field: VelocityRef,
}

impl fmt::Debug for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Segment({}, {})", self.duration, self.field.label())
    }
}

/// Ordered segments applied one after another; optionally repeated forever.
#[derive(Clone, Debug)]
pub struct TimeSchedule {
    segments: Vec<Segment>,
    pub periodic: bool,
}

/// How a schedule flow is evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Integrator {
    /// Closed forms only; fails with `NoClosedForm` otherwise.
    Exact,
    /// Closed forms where available, RK4 with step `dt` elsewhere.
    Hybrid { dt: f64 },
    /// RK4 everywhere.
    Rk4 { dt: f64 },
}

impl TimeSchedule {
    /// Segments of zero duration are dropped.
    pub fn new(segments: Vec<Segment>, periodic: bool) -> Result<Self> {
        if segments.iter().any(|s| !(s.duration >= 0.0) || !s.duration.is_finite()) {
            return Err(Error::InvalidArgument("segment durations must be nonnegative".into()));
        }
        let segments: Vec<Segment> = segments.into_iter().filter(|s| s.duration > 0.0).collect();
        if periodic && segments.is_empty() {
            return Err(Error::InvalidArgument("periodic schedule without segments".into()));
        }
        Ok(Self { segments, periodic })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let total = self.total();
        if !(t >= 0.0) || (!self.periodic && t > total * (1.0 + 1e-12) + 1e-15) {
            return Err(Error::TimeRange {
                t,
                max: if self.periodic { f64::INFINITY } else { total },
            });
        }
        Ok(())
    }

    /// Index of the active segment at `t` and the local time inside it.
    pub fn active(&self, t: f64) -> Result<Option<(usize, f64)>> {
        self.check_time(t)?;
        if self.segments.is_empty() {
            return Ok(None);
        }
        let total = self.total();
        let mut s = if self.periodic { t.rem_euclid(total) } else { t.min(total) };
        for (k, seg) in self.segments.iter().enumerate() {
            if s < seg.duration || k + 1 == self.segments.len() {
                return Ok(Some((k, s.min(seg.duration))));
            }
            s -= seg.duration;
        }
        unreachable!()
    }

    /// Velocity at `(x, t)`; zero when the schedule is empty.
    pub fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        match self.active(t)? {
            Some((k, _)) => self.segments[k].field.value(x),
            None => Ok(vec![0.0; x.len()]),
        }
    }

    /// The `(segment, duration)` pieces covering `[0, t]` in time order.
    pub fn pieces(&self, t: f64) -> Result<Vec<(usize, f64)>> {
        self.check_time(t)?;
        let mut out = Vec::new();
        if self.segments.is_empty() {
            return Ok(out);
        }
        let total = self.total();
        let mut left = t;
        if self.periodic {
            let cycles = (t / total).floor();
            // guard against rem_euclid rounding just below a cycle boundary
            let cycles = if left - cycles * total >= total { cycles + 1.0 } else { cycles };
            for _ in 0..cycles as usize {
                out.extend(self.segments.iter().enumerate().map(|(k, s)| (k, s.duration)));
            }
            left = (t - cycles * total).max(0.0);
        }
        for (k, seg) in self.segments.iter().enumerate() {
            if left <= 0.0 {
                break;
            }
            let dt = left.min(seg.duration);
            out.push((k, dt));
            left -= dt;
        }
        Ok(out)
    }
}

/// Time-`t` flow of one stationary field with the chosen integrator.
pub fn field_flow(field: &dyn StationaryVelocity, x: &[f64], t: f64, integrator: Integrator) -> Result<(Vec<f64>, Mat)> {
    match integrator {
        Integrator::Exact => match field.exact_flow(x, t) {
            Some(r) => r,
            None => Err(Error::NoClosedForm {
                segment: 0,
                point: x.to_vec(),
            }),
        },
        Integrator::Hybrid { dt } => match field.exact_flow(x, t) {
            Some(r) => r,
            None => rk4_flow(field, x, t, dt),
        },
        Integrator::Rk4 { dt } => rk4_flow(field, x, t, dt),
    }
}

/// Classical RK4 for `x' = v(x)` together with the variational equation `J' = Dv(x) J`.
///
/// Takes `ceil(|t|/dt)` equal steps; negative `t` integrates backwards.
pub fn rk4_flow(field: &dyn StationaryVelocity, x: &[f64], t: f64, dt: f64) -> Result<(Vec<f64>, Mat)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("rk4 step {dt} must be positive")));
    }
    let d = x.len();
    let mut y = x.to_vec();
    let mut jac = Mat::identity(d, d);
    if t == 0.0 {
        return Ok((y, jac));
    }
    let steps = (t.abs() / dt).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + s * q).collect() };
    for _ in 0..steps {
        let (k1, a1) = field.value_jacobian(&y)?;
        let m1 = &a1 * &jac;
        let y2 = axpy(&y, 0.5 * h, &k1);
        let (k2, a2) = field.value_jacobian(&y2)?;
        let m2 = &a2 * (&jac + &m1 * (0.5 * h));
        let y3 = axpy(&y, 0.5 * h, &k2);
        let (k3, a3) = field.value_jacobian(&y3)?;
        let m3 = &a3 * (&jac + &m2 * (0.5 * h));
        let y4 = axpy(&y, h, &k3);
        let (k4, a4) = field.value_jacobian(&y4)?;
        let m4 = &a4 * (&jac + &m3 * h);
        for i in 0..d {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        jac += (m1 + m2 * 2.0 + m3 * 2.0 + m4) * (h / 6.0);
    }
    Ok((y, jac))
}

/// Forward flow map of a schedule from time 0 to `t`, with its jacobian.
pub fn schedule_flow(sched: &TimeSchedule, t: f64, x: &[f64], integrator: Integrator) -> Result<(Vec<f64>, Mat)> {
    let d = x.len();
    let mut y = x.to_vec();
    let mut jac = Mat::identity(d, d);
    for (k, dt) in sched.pieces(t)? {
        let (next, j) = field_flow(&*sched.segments[k].field, &y, dt, integrator).map_err(|e| tag_segment(e, k))?;
        y = next;
        jac = j * jac;
    }
    Ok((y, jac))
}

/// Inverse of the time-`t` flow map, with the jacobian of the inverse.
pub fn schedule_inverse_flow(sched: &TimeSchedule, t: f64, x: &[f64], integrator: Integrator) -> Result<(Vec<f64>, Mat)> {
    let d = x.len();
    let mut y = x.to_vec();
    let mut jac = Mat::identity(d, d);
    for (k, dt) in sched.pieces(t)?.into_iter().rev() {
        let (next, j) = field_flow(&*sched.segments[k].field, &y, -dt, integrator).map_err(|e| tag_segment(e, k))?;
        y = next;
        jac = j * jac;
    }
    Ok((y, jac))
}

/// Flow from time `t0` to `t1 >= t0`, stepping segment by segment so no step straddles a switch.
pub fn schedule_flow_between(sched: &TimeSchedule, t0: f64, t1: f64, x: &[f64], integrator: Integrator) -> Result<(Vec<f64>, Mat)> {
    if sched.periodic {
        return Err(Error::InvalidArgument("interval flow needs a finite schedule".into()));
    }
    sched.check_time(t1)?;
    if !(t0 >= 0.0 && t0 <= t1) {
        return Err(Error::TimeRange { t: t0, max: t1 });
    }
    let d = x.len();
    let mut y = x.to_vec();
    let mut jac = Mat::identity(d, d);
    let mut start = 0.0;
    for (k, seg) in sched.segments.iter().enumerate() {
        let end = start + seg.duration;
        let a = t0.max(start);
        let b = t1.min(end);
        if b > a {
            let (next, j) = field_flow(&*seg.field, &y, b - a, integrator).map_err(|e| tag_segment(e, k))?;
            y = next;
            jac = j * jac;
        }
        start = end;
    }
    Ok((y, jac))
}

/// Position after flowing `x` for time `t` along the schedule.
pub fn schedule_flow_map(sched: &TimeSchedule, t: f64, x: &[f64], integrator: Integrator) -> Result<Vec<f64>> {
    Ok(schedule_flow(sched, t, x, integrator)?.0)
}

fn tag_segment(e: Error, k: usize) -> Error {
    match e {
        Error::NoClosedForm { point, .. } => Error::NoClosedForm { segment: k, point },
        other => other,
    }
}

/// Central-difference divergence with step `h`.
pub fn fd_divergence(field: &dyn StationaryVelocity, x: &[f64], h: f64) -> Result<f64> {
    let mut div = 0.0;
    let mut p = x.to_vec();
    for k in 0..x.len() {
        p[k] = x[k] + h;
        let a = field.value(&p)?[k];
        p[k] = x[k] - h;
        let b = field.value(&p)?[k];
        p[k] = x[k];
        div += (a - b) / (2.0 * h);
    }
    Ok(div)
}

/// Central-difference jacobian with step `h`.
pub fn fd_jacobian(field: &dyn StationaryVelocity, x: &[f64], h: f64) -> Result<Mat> {
    let d = x.len();
    let mut m = Mat::zeros(d, d);
    let mut p = x.to_vec();
    for k in 0..d {
        p[k] = x[k] + h;
        let a = field.value(&p)?;
        p[k] = x[k] - h;
        let b = field.value(&p)?;
        p[k] = x[k];
        for i in 0..d {
            m[(i, k)] = (a[i] - b[i]) / (2.0 * h);
        }
    }
    Ok(m)
}
