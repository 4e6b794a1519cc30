//! Density point, the shrinking cube family, the assembled velocity and the two competing series.
//!
//! Slot `n` sits at `xₙ = x* + D₀ 2⁻ⁿ e₁` with side `λₙ = min(e⁻ⁿ, dₙ/100)`, so the
//! `7λ` cubes are disjoint by arithmetic alone. Each slot carries a block built
//! for the datum rescaled onto the unit cube, and its velocity is that block's
//! schedule dilated by `λₙ` in space and `τₙ` in time, repeated past the block length.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::{build_block, empirical_beta, Block, BlockOptions};
use crate::error::{Error, Result};
use crate::field::{norm_sq, Cube, Domain, FieldRef, Mat, ScalarField};
use crate::quadrature::{midpoint, Region};
use crate::velocity::{schedule_flow, schedule_inverse_flow, Integrator, TimeSchedule};

/// A maximal local average below this means the datum is constant.
pub const NO_GROWTH: f64 = 1e-12;
/// Side halvings tried before a slot is rejected.
pub const MAX_HALVINGS: usize = 30;

/// Prefix integrals of a cell-constant function on `n^d` equal cells.
///
/// The running integral is multilinear inside each cell, so interpolating the
/// node table gives the exact integral over any box, not just cell-aligned ones.
#[derive(Clone, Debug)]
pub struct SummedArea {
    cube: Cube,
    n: usize,
    table: Vec<f64>,
}

impl SummedArea {
    /// `cells` in row-major order, last axis fastest.
    pub fn from_cells(cube: Cube, n: usize, cells: &[f64]) -> Result<Self> {
        let d = cube.dim();
        if n == 0 || cells.len() != n.pow(d as u32) {
            return Err(Error::InvalidArgument(format!("{} cells for n = {n}, d = {d}", cells.len())));
        }
        let m = n + 1;
        let vol = (cube.side / n as f64).powi(d as i32);
        let mut table = vec![0.0; m.pow(d as u32)];
        for (flat, &v) in cells.iter().enumerate() {
            let (mut rem, mut idx, mut stride) = (flat, 0, 1);
            for _ in 0..d {
                idx += (rem % n + 1) * stride;
                rem /= n;
                stride *= m;
            }
            table[idx] = v * vol;
        }
        for axis in 0..d {
            let stride = m.pow((d - 1 - axis) as u32);
            for idx in 0..table.len() {
                if (idx / stride) % m > 0 {
                    table[idx] += table[idx - stride];
                }
            }
        }
        Ok(Self { cube, n, table })
    }

    /// Samples `f` at cell centers.
    pub fn sample<F>(cube: Cube, n: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let d = cube.dim();
        let h = cube.side / n as f64;
        let cells = (0..n.pow(d as u32))
            .into_par_iter()
            .map(|flat| {
                let mut x = vec![0.0; d];
                let mut rem = flat;
                for k in (0..d).rev() {
                    x[k] = cube.lo(k) + (rem % n) as f64 * h + 0.5 * h;
                    rem /= n;
                }
                f(&x)
            })
            .collect::<Result<Vec<f64>>>()?;
        Self::from_cells(cube, n, &cells)
    }

    /// Table of `|∇ρ|²`.
    pub fn gradient_density(rho: &dyn ScalarField, cube: Cube, n: usize) -> Result<Self> {
        Self::sample(cube, n, |x| Ok(norm_sq(&rho.gradient(x)?)))
    }

    pub fn cube(&self) -> &Cube {
        &self.cube
    }

    pub fn cells_per_axis(&self) -> usize {
        self.n
    }

    /// Cell centers, in table order.
    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        let d = self.cube.dim();
        let h = self.cube.side / self.n as f64;
        let mut x = vec![0.0; d];
        let mut rem = flat;
        for k in (0..d).rev() {
            x[k] = self.cube.lo(k) + (rem % self.n) as f64 * h + 0.5 * h;
            rem /= self.n;
        }
        x
    }

    /// Integral over `[lo(k), x_k]` in every axis.
    fn running(&self, x: &[f64]) -> f64 {
        let d = self.cube.dim();
        let m = self.n + 1;
        let h = self.cube.side / self.n as f64;
        let mut base = 0;
        let mut frac = vec![0.0; d];
        for k in 0..d {
            let s = ((x[k] - self.cube.lo(k)) / h).clamp(0.0, self.n as f64);
            let i = (s.floor() as usize).min(self.n - 1);
            frac[k] = s - i as f64;
            base += i * m.pow((d - 1 - k) as u32);
        }
        let mut acc = 0.0;
        for bits in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base;
            for k in 0..d {
                if bits >> k & 1 == 1 {
                    w *= frac[k];
                    idx += m.pow((d - 1 - k) as u32);
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                acc += w * self.table[idx];
            }
        }
        acc
    }

    /// Integral over the box `[lo, hi]`, clipped to the table.
    pub fn integral(&self, lo: &[f64], hi: &[f64]) -> f64 {
        let d = self.cube.dim();
        let mut corner = vec![0.0; d];
        let mut acc = 0.0;
        for bits in 0..(1usize << d) {
            let mut lows = 0;
            for k in 0..d {
                if bits >> k & 1 == 1 {
                    corner[k] = hi[k];
                } else {
                    corner[k] = lo[k];
                    lows += 1;
                }
            }
            let v = self.running(&corner);
            acc += if lows % 2 == 0 { v } else { -v };
        }
        acc
    }

    /// Mean over the side-`r` cube centered at `x`.
    pub fn local_average(&self, x: &[f64], r: f64) -> Result<f64> {
        let q = Cube::new(x.to_vec(), r)?;
        if !self.cube.contains_cube(&q) {
            return Err(Error::Domain {
                point: x.to_vec(),
                domain: format!("averaging table over {}", self.cube),
            });
        }
        let d = q.dim();
        let lo: Vec<f64> = (0..d).map(|k| q.lo(k)).collect();
        let hi: Vec<f64> = (0..d).map(|k| q.hi(k)).collect();
        Ok(self.integral(&lo, &hi) / q.volume())
    }
}

/// Where to look for the density point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityOptions {
    /// Search box; defaults to the datum's cube, one torus period, or `[-2,2]^d`.
    pub region: Option<Cube>,
    pub cells: usize,
}

impl DensityOptions {
    pub fn for_dim(d: usize) -> Self {
        Self {
            region: None,
            cells: if d <= 2 { 400 } else { 80 },
        }
    }
}

pub fn default_region(domain: &Domain) -> Cube {
    match domain {
        Domain::Cube(c) => c.clone(),
        Domain::Torus { dim, period } => Cube::from_bounds(0.0, *period, *dim),
        Domain::Whole(d) => Cube::from_bounds(-2.0, 2.0, *d),
    }
}

/// A point whose local averages of `|∇ρ̄|²` are large and stable across scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub x_star: Vec<f64>,
    pub delta_bar: f64,
    pub probe_r: f64,
    /// `(r, A_r(x*))` at `probe_r`, `probe_r/2`, `probe_r/4`.
    pub averages: Vec<(f64, f64)>,
}

/// Grid argmax of `A_{probe_r}` with `δ̄` half the maximum, checked at three scales.
///
/// Candidates keep a margin of `probe_r` to the region boundary so every slot cube stays inside.
pub fn find_density_point(rho: &dyn ScalarField, probe_r: f64, opts: &DensityOptions) -> Result<DensityPoint> {
    if !(probe_r > 0.0) || opts.cells < 2 {
        return Err(Error::InvalidArgument(format!("probe_r = {probe_r}, cells = {}", opts.cells)));
    }
    let region = opts.region.clone().unwrap_or_else(|| default_region(&rho.domain()));
    if region.dim() != rho.dim() {
        return Err(Error::InvalidArgument("search region dimension mismatch".into()));
    }
    let table = SummedArea::gradient_density(rho, region.clone(), opts.cells)?;
    let d = region.dim();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for flat in 0..opts.cells.pow(d as u32) {
        let x = table.cell_center(flat);
        if !region.contains_cube(&Cube::new(x.clone(), 2.0 * probe_r)?) {
            continue;
        }
        let a = table.local_average(&x, probe_r)?;
        if best.as_ref().is_none_or(|(b, _)| a > *b) {
            best = Some((a, x));
        }
    }
    let (max, x_star) = best.ok_or_else(|| Error::InvalidArgument(format!("probe_r = {probe_r} does not fit in {region}")))?;
    if !(max >= NO_GROWTH) {
        return Err(Error::NoGrowthData(max));
    }
    let delta_bar = 0.5 * max;
    let mut averages = Vec::with_capacity(3);
    for r in [probe_r, probe_r / 2.0, probe_r / 4.0] {
        let a = table.local_average(&x_star, r)?;
        averages.push((r, a));
        if a < 0.5 * delta_bar {
            return Err(Error::UnstableDensityPoint { point: x_star });
        }
    }
    Ok(DensityPoint {
        x_star,
        delta_bar,
        probe_r,
        averages,
    })
}

/// The datum near `xₙ` blown up onto the unit cube: `θ̄(y) = (ρ̄(xₙ + λ(y − ½)) − ρ̄(xₙ)) / λ`.
///
/// Its gradient is `∇ρ̄` at the physical point, so `‖∇θ̄‖_{L²(Ω₀)} = λ^{-d/2} Mₙ`.
#[derive(Clone)]
pub struct SlotDatum {
    pub rho: FieldRef,
    pub center: Vec<f64>,
    pub lambda: f64,
    base: f64,
}

impl SlotDatum {
    pub fn new(rho: FieldRef, center: Vec<f64>, lambda: f64) -> Result<Self> {
        let base = rho.value(&center)?;
        Ok(Self { rho, center, lambda, base })
    }

    pub fn physical(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.center).map(|(y, c)| c + self.lambda * (y - 0.5)).collect()
    }
}

impl ScalarField for SlotDatum {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn domain(&self) -> Domain {
        Domain::Whole(self.center.len())
    }

    fn value(&self, y: &[f64]) -> Result<f64> {
        Ok((self.rho.value(&self.physical(y))? - self.base) / self.lambda)
    }

    fn gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.rho.gradient(&self.physical(y))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub alpha: f64,
    pub n_steps: usize,
    /// Midpoint nodes per axis for the slot masses.
    pub mass_quad: usize,
    /// Time samples for the empirical `β̂`; zero skips the measurement.
    pub beta_samples: usize,
    pub block: BlockOptions,
}

impl PlanOptions {
    pub fn for_dim(d: usize) -> Self {
        Self {
            alpha: 0.3,
            n_steps: 3,
            mass_quad: if d <= 2 { 64 } else { 16 },
            beta_samples: 13,
            block: BlockOptions::for_dim(d),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeSlot {
    /// 1-based slot index.
    pub n: usize,
    pub center: Vec<f64>,
    pub lambda: f64,
    pub tau: f64,
    /// `‖∇ρ̄‖_{L²(Qₙ)}`.
    pub mass: f64,
    pub halvings: usize,
    pub block: Block,
}

impl CubeSlot {
    /// `Qₙ`.
    pub fn cube(&self) -> Cube {
        Cube {
            center: self.center.clone(),
            side: self.lambda,
        }
    }

    /// `Q̃ₙ`, the image of `(-3,4)^d`.
    pub fn support(&self) -> Cube {
        self.cube().dilate(7.0)
    }

    pub fn beta(&self) -> Option<f64> {
        self.block.measured_beta
    }
}

/// Outcome of each plan invariant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanChecks {
    pub lambda_cap: bool,
    pub tau_formula: bool,
    pub mass_bound: bool,
    pub disjoint: bool,
    pub inside_box: bool,
    pub centers_converge: bool,
}

impl PlanChecks {
    pub fn all(&self) -> bool {
        self.lambda_cap && self.tau_formula && self.mass_bound && self.disjoint && self.inside_box && self.centers_converge
    }

    pub fn rows(&self) -> [(&'static str, bool); 6] {
        [
            ("lambda_cap", self.lambda_cap),
            ("tau_formula", self.tau_formula),
            ("mass_bound", self.mass_bound),
            ("disjoint", self.disjoint),
            ("inside_box", self.inside_box),
            ("centers_converge", self.centers_converge),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubePlan {
    pub dim: usize,
    pub slots: Vec<CubeSlot>,
    pub x_star: Vec<f64>,
    pub delta_bar: f64,
    pub probe_r: f64,
    pub bounding: Cube,
    pub checks: PlanChecks,
}

pub fn tau_of(lambda: f64) -> f64 {
    (1.0 / lambda).ln().powi(-2)
}

fn slot_mass(rho: &dyn ScalarField, cube: &Cube, n_quad: usize) -> Result<f64> {
    Ok(midpoint(&Region::from(cube), n_quad, |x| Ok(norm_sq(&rho.gradient(x)?)))?.sqrt())
}

/// Center `x* + D₀2⁻ⁿe₁` and side `min(e⁻ⁿ, D₀2⁻ⁿ/100)` of slot `n` before any halving.
pub fn place_slot(x_star: &[f64], d0: f64, n: usize) -> (Vec<f64>, f64) {
    let dn = d0 * 0.5f64.powi(n as i32);
    let mut center = x_star.to_vec();
    center[0] += dn;
    (center, (-(n as f64)).exp().min(dn / 100.0))
}

/// Places `n_slots` cubes, certifies their masses and builds one block per slot.
pub fn plan_cubes(rho: FieldRef, n_slots: usize, density: &DensityPoint, opts: &PlanOptions) -> Result<CubePlan> {
    if n_slots == 0 {
        return Err(Error::InvalidArgument("a plan needs at least one slot".into()));
    }
    let d = rho.dim();
    let d0 = density.probe_r;
    let floor = (0.5 * density.delta_bar).sqrt();
    let mut placed = Vec::with_capacity(n_slots);
    for n in 1..=n_slots {
        let (center, mut lambda) = place_slot(&density.x_star, d0, n);
        let mut halvings = 0;
        loop {
            let cube = Cube::new(center.clone(), lambda)?;
            let mass = slot_mass(&*rho, &cube, opts.mass_quad)?;
            let bound = floor * lambda.powf(d as f64 / 2.0);
            if mass >= bound {
                placed.push((n, center, lambda, mass, halvings));
                break;
            }
            if halvings == MAX_HALVINGS {
                return Err(Error::SlotRejected {
                    slot: n,
                    mass,
                    bound,
                    halvings,
                });
            }
            lambda *= 0.5;
            halvings += 1;
        }
    }
    let slots = placed
        .into_par_iter()
        .map(|(n, center, lambda, mass, halvings)| {
            let datum = SlotDatum::new(rho.clone(), center.clone(), lambda)?;
            let mut block = build_block(std::sync::Arc::new(datum.clone()), opts.alpha, opts.n_steps, d, &opts.block)?;
            if opts.beta_samples >= 2 {
                block.measured_beta = Some(empirical_beta(&block, &datum, opts.beta_samples, &opts.block)?.beta);
            }
            Ok(CubeSlot {
                n,
                center,
                lambda,
                tau: tau_of(lambda),
                mass,
                halvings,
                block,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bounding = Cube::new(density.x_star.clone(), 2.0 * d0)?;
    let mut plan = CubePlan {
        dim: d,
        slots,
        x_star: density.x_star.clone(),
        delta_bar: density.delta_bar,
        probe_r: d0,
        bounding,
        checks: PlanChecks {
            lambda_cap: false,
            tau_formula: false,
            mass_bound: false,
            disjoint: false,
            inside_box: false,
            centers_converge: false,
        },
    };
    plan.checks = structural_checks(&plan, |s| Ok(s.mass))?;
    Ok(plan)
}

/// Re-derives every invariant from the stored centers and sides, recomputing the masses by quadrature.
pub fn verify_plan(plan: &CubePlan, rho: &dyn ScalarField, mass_quad: usize) -> Result<PlanChecks> {
    let mut checks = structural_checks(plan, |s| slot_mass(rho, &s.cube(), mass_quad))?;
    for s in &plan.slots {
        let again = slot_mass(rho, &s.cube(), mass_quad)?;
        checks.mass_bound &= (again - s.mass).abs() <= 1e-9 * s.mass.max(f64::MIN_POSITIVE);
    }
    Ok(checks)
}

fn structural_checks(plan: &CubePlan, mass: impl Fn(&CubeSlot) -> Result<f64>) -> Result<PlanChecks> {
    let d = plan.dim as f64;
    let floor = (0.5 * plan.delta_bar).sqrt();
    let mut c = PlanChecks {
        lambda_cap: true,
        tau_formula: true,
        mass_bound: true,
        disjoint: true,
        inside_box: true,
        centers_converge: true,
    };
    let mut prev = f64::INFINITY;
    for (i, s) in plan.slots.iter().enumerate() {
        c.lambda_cap &= s.lambda > 0.0 && s.lambda <= (-(s.n as f64)).exp();
        c.tau_formula &= (s.tau - tau_of(s.lambda)).abs() <= 1e-12 * s.tau;
        c.mass_bound &= mass(s)? >= floor * s.lambda.powf(d / 2.0);
        c.inside_box &= plan.bounding.contains_cube(&s.support());
        let dist = norm_sq(&s.center.iter().zip(&plan.x_star).map(|(a, b)| a - b).collect::<Vec<_>>()).sqrt();
        c.centers_converge &= dist < prev;
        prev = dist;
        for t in &plan.slots[i + 1..] {
            c.disjoint &= s.support().disjoint(&t.support());
        }
    }
    Ok(c)
}

/// One slot of the assembled velocity: `(λ/τ) u((x − xₙ)/λ + ½, t/τ)`, with `u` repeated past the block length.
#[derive(Clone, Debug)]
pub struct SlotVelocity {
    pub center: Vec<f64>,
    pub lambda: f64,
    pub tau: f64,
    pub schedule: TimeSchedule,
    pub support: Cube,
}

impl SlotVelocity {
    pub fn to_block(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.center).map(|(x, c)| (x - c) / self.lambda + 0.5).collect()
    }

    pub fn from_block(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.center).map(|(y, c)| c + self.lambda * (y - 0.5)).collect()
    }

    pub fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let u = self.schedule.velocity(&self.to_block(x), t / self.tau)?;
        Ok(u.into_iter().map(|v| v * self.lambda / self.tau).collect())
    }

    pub fn jacobian(&self, x: &[f64], t: f64) -> Result<Mat> {
        match self.schedule.active(t / self.tau)? {
            Some((k, _)) => Ok(self.schedule.segments()[k].field.jacobian(&self.to_block(x))? / self.tau),
            None => Ok(Mat::zeros(x.len(), x.len())),
        }
    }

    /// Time-`t` flow from time 0 and its jacobian; dilation conjugation leaves the jacobian unchanged.
    pub fn flow(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, Mat)> {
        let (y, j) = schedule_flow(&self.schedule, t / self.tau, &self.to_block(x), Integrator::Exact)?;
        Ok((self.from_block(&y), j))
    }

    pub fn inverse_flow(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, Mat)> {
        let (y, j) = schedule_inverse_flow(&self.schedule, t / self.tau, &self.to_block(x), Integrator::Exact)?;
        Ok((self.from_block(&y), j))
    }

    /// Physical times in `(t0, t1)` where the active segment switches.
    pub fn switches(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let period = self.schedule.total();
        if period <= 0.0 || t1 <= t0 {
            return out;
        }
        let mut cycle = (t0 / (self.tau * period)).floor();
        loop {
            let mut acc = cycle * period;
            for seg in self.schedule.segments() {
                acc += seg.duration;
                let t = acc * self.tau;
                if t >= t1 {
                    return out;
                }
                if t > t0 {
                    out.push(t);
                }
            }
            cycle += 1.0;
        }
    }
}

/// `v = Σ vₙ` over slots with pairwise disjoint supports.
#[derive(Clone, Debug)]
pub struct GlobalVelocity {
    pub dim: usize,
    pub slots: Vec<SlotVelocity>,
    /// Last admissible time: the block length of the slowest slot.
    pub horizon: f64,
}

pub fn assemble_velocity(plan: &CubePlan) -> Result<GlobalVelocity> {
    if plan.slots.is_empty() {
        return Err(Error::InvalidArgument("empty plan".into()));
    }
    let slots = plan
        .slots
        .iter()
        .map(|s| {
            let segs = s.block.schedule()?.segments().to_vec();
            Ok(SlotVelocity {
                center: s.center.clone(),
                lambda: s.lambda,
                tau: s.tau,
                schedule: TimeSchedule::new(segs, true)?,
                support: s.support(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let horizon = plan
        .slots
        .iter()
        .map(|s| s.tau * s.block.n_steps() as f64)
        .fold(0.0, f64::max);
    Ok(GlobalVelocity {
        dim: plan.dim,
        slots,
        horizon,
    })
}

impl GlobalVelocity {
    /// The slot whose open support contains `x`.
    pub fn slot_of(&self, x: &[f64]) -> Option<usize> {
        self.slots.iter().position(|s| s.support.contains_open(x))
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::TimeRange { t, max: self.horizon });
        }
        Ok(())
    }

    pub fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        match self.slot_of(x) {
            Some(k) => self.slots[k].velocity(x, t),
            None => Ok(vec![0.0; x.len()]),
        }
    }

    pub fn jacobian(&self, x: &[f64], t: f64) -> Result<Mat> {
        self.check_time(t)?;
        match self.slot_of(x) {
            Some(k) => self.slots[k].jacobian(x, t),
            None => Ok(Mat::zeros(x.len(), x.len())),
        }
    }

    pub fn flow(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, Mat)> {
        self.check_time(t)?;
        match self.slot_of(x) {
            Some(k) => self.slots[k].flow(x, t),
            None => Ok((x.to_vec(), Mat::identity(x.len(), x.len()))),
        }
    }

    pub fn inverse_flow(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, Mat)> {
        self.check_time(t)?;
        match self.slot_of(x) {
            Some(k) => self.slots[k].inverse_flow(x, t),
            None => Ok((x.to_vec(), Mat::identity(x.len(), x.len()))),
        }
    }
}

/// Scales of one slot as the series see them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotScale {
    pub lambda: f64,
    pub tau: f64,
    /// Measured `Mₙ`; `None` stands for `λ^{d/2}`.
    pub mass: Option<f64>,
}

/// `λₙ = e⁻ⁿ`, `τₙ = n⁻²`.
pub fn default_schedule(n: usize) -> Vec<SlotScale> {
    (1..=n)
        .map(|k| SlotScale {
            lambda: (-(k as f64)).exp(),
            tau: (k as f64).powi(-2),
            mass: None,
        })
        .collect()
}

impl CubePlan {
    pub fn scales(&self) -> Vec<SlotScale> {
        self.slots
            .iter()
            .map(|s| SlotScale {
                lambda: s.lambda,
                tau: s.tau,
                mass: Some(s.mass),
            })
            .collect()
    }
}

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log of each partial sum of `e^{t/τₙ} Mₙ`, for `N = 1, 2, ...`.
pub fn series_solution(sched: &[SlotScale], t: f64, d: usize) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::TimeRange { t, max: f64::INFINITY });
    }
    let mut acc = f64::NEG_INFINITY;
    Ok(sched
        .iter()
        .map(|s| {
            let log_m = match s.mass {
                Some(m) => m.ln(),
                None => 0.5 * d as f64 * s.lambda.ln(),
            };
            acc = log_add_exp(acc, t / s.tau + log_m);
            acc
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesField {
    pub gamma: f64,
    pub n: usize,
    /// `Σ_{n≤N} λₙ^γ / τₙ`.
    pub partial: f64,
    /// `e^{−γN/2} / (1 − e^{−γ/2})`, present once `N + 1 ≥ threshold`.
    pub tail: Option<f64>,
    pub threshold: usize,
}

impl SeriesField {
    pub fn total(&self) -> Option<f64> {
        self.tail.map(|t| self.partial + t)
    }
}

/// Smallest `N` with `(log 1/λ)² ≤ λ^{−γ/2}` for every `λ ≤ e^{−N}`.
///
/// `2 ln L − γL/2` is concave and negative at `L = 1`, so past its larger root it stays negative.
pub fn tail_threshold(gamma: f64) -> Result<usize> {
    if !(gamma > 0.0) {
        return Err(Error::SuperCritical(gamma));
    }
    let g = |l: f64| 2.0 * l.ln() - 0.5 * gamma * l;
    let peak = 4.0 / gamma;
    if g(peak) <= 0.0 {
        return Ok(1);
    }
    let (mut a, mut b) = (peak, 2.0 * peak);
    while g(b) > 0.0 {
        b *= 2.0;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if g(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(b.ceil().max(1.0) as usize)
}

/// Partial sum of `λₙ^γ / τₙ` and the geometric tail bound for schedules with `λₙ ≤ e⁻ⁿ`.
pub fn series_field(sched: &[SlotScale], gamma: f64) -> Result<SeriesField> {
    let threshold = tail_threshold(gamma)?;
    let partial = sched.iter().map(|s| s.lambda.powf(gamma) / s.tau).sum();
    let n = sched.len();
    let tail = (n + 1 >= threshold).then(|| (-0.5 * gamma * n as f64).exp() / (1.0 - (-0.5 * gamma).exp()));
    Ok(SeriesField {
        gamma,
        n,
        partial,
        tail,
        threshold,
    })
}

/// `γ = 1 − r + d/p`; the construction needs it positive.
pub fn gamma_of(r: f64, p: f64, d: usize) -> f64 {
    1.0 - r + d as f64 / p
}
