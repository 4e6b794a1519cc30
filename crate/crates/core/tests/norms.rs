use std::f64::consts::PI;
use std::sync::OnceLock;

use proptest::prelude::*;
use regloss_core::advect::SolutionHandle;
use regloss_core::data::DataSpec;
use regloss_core::error::{Error, Result};
use regloss_core::field::{Cube, FieldRef, Mat};
use regloss_core::norms::*;
use regloss_core::plan::*;
use regloss_core::shears::{advect_under_shear, ShearSpec};
use regloss_core::velocity::{ConstantVelocity, StationaryVelocity, TimeSchedule};

fn torus_box(d: usize) -> Cube {
    Cube::from_bounds(0.0, 8.0, d)
}

#[test]
fn h1_meter_examples() {
    let lin = DataSpec::LinearX1.build(2).unwrap();
    let r = l2_grad_norm(&*lin, &Cube::unit(2), 16).unwrap();
    assert!((r.value - 1.0).abs() < 1e-12 && r.error < 1e-12);
    let wave = DataSpec::PlaneWaveX2.build(2).unwrap();
    let r = l2_grad_norm(&*wave, &torus_box(2), 64).unwrap();
    assert!((r.value - (2.0 * PI * PI).sqrt()).abs() < 1e-10, "{}", r.value);
    assert!(l2_grad_norm(&*wave, &torus_box(2), 8).is_err());
}

#[test]
fn h1_meter_after_a_full_torus_shear() {
    let wave = DataSpec::PlaneWaveX2.build(2).unwrap();
    let a = 0.7;
    let spec = ShearSpec::new(2, 1, 1, a, 2).unwrap();
    let sheared = advect_under_shear(wave.clone(), spec, 1.0);
    let before = l2_grad_norm(&*wave, &torus_box(2), 256).unwrap().value;
    let after = l2_grad_norm(&sheared, &torus_box(2), 256).unwrap().value;
    let ratio = (after / before).powi(2);
    let expect = 1.0 + 2.0 * PI * PI * a * a;
    assert!((ratio - expect).abs() < 1e-6 * expect, "{ratio} {expect}");
}

#[test]
fn richardson_estimates_fall_at_second_order() {
    let g = DataSpec::gaussian_at(vec![0.3, 0.6], 0.5).build(2).unwrap();
    let errs: Vec<f64> = [32, 64, 128].iter().map(|&n| l2_grad_norm(&*g, &Cube::unit(2), n).unwrap().error).collect();
    for w in errs.windows(2) {
        assert!(w[0] / w[1] > 3.5, "{errs:?}");
    }
}

fn mode(m: f64, d: usize, n: usize) -> PeriodicGrid {
    PeriodicGrid::sample(d, n, 8.0, vec![0.0; d], |x| Ok((2.0 * PI * m * x[0] / 8.0).sin())).unwrap()
}

#[test]
fn single_mode_fractional_identity() {
    for d in [2, 3] {
        let l2 = (8.0f64.powi(d as i32) / 2.0).sqrt();
        for m in [1.0, 3.0] {
            let g = mode(m, d, 32);
            for r in [0.0, 0.5, 1.0, 1.7] {
                let rep = fractional_h_norm(&g, r).unwrap();
                let expect = (2.0 * PI * m / 8.0).powf(r) * l2;
                assert!((rep.value - expect).abs() < 1e-8 * expect, "d={d} m={m} r={r}: {} {expect}", rep.value);
                assert!(!rep.alias_warning);
            }
        }
    }
}

#[test]
fn order_zero_is_the_mean_free_l2_norm() {
    let g = PeriodicGrid::sample(2, 32, 8.0, vec![0.0; 2], |x| Ok(3.0 + (PI * x[0] / 4.0).cos() + 0.5 * (PI * x[1] / 2.0).sin())).unwrap();
    // ∫(cos)² + ∫(0.5 sin)² over the period box
    let expect = (32.0 + 0.25 * 32.0f64).sqrt();
    assert!((fractional_h_norm(&g, 0.0).unwrap().value - expect).abs() < 1e-10);
    let c = PeriodicGrid::sample(2, 16, 8.0, vec![0.0; 2], |_| Ok(7.0)).unwrap();
    for r in [0.0, 0.5, 1.0, 2.0] {
        assert!(fractional_h_norm(&c, r).unwrap().value < 1e-12);
    }
    assert!(fractional_h_norm(&c, -1.0).is_err());
}

#[test]
fn under_resolved_spectra_are_flagged() {
    assert!(!fractional_h_norm(&mode(2.0, 2, 64), 1.0).unwrap().alias_warning);
    assert!(fractional_h_norm(&mode(30.0, 2, 64), 1.0).unwrap().alias_warning);
    let kink = PeriodicGrid::sample(2, 64, 8.0, vec![0.0; 2], |x| Ok((x[0] - 4.0).abs())).unwrap();
    assert!(fractional_h_norm(&kink, 1.0).unwrap().alias_warning);
}

#[test]
fn wkp_examples() {
    let c = ConstantVelocity(vec![1.0, -2.0]);
    assert_eq!(wkp_seminorm(&c, 1, 2.0, &Cube::unit(2), 8).unwrap().value, 0.0);
    let k0 = wkp_seminorm(&c, 0, 2.0, &Cube::unit(2), 8).unwrap().value;
    assert!((k0 - 5.0f64.sqrt()).abs() < 1e-12);
    // A sin(2π x₁) e₂ is the (sign 2, profile 1, axis 1) candidate
    let a = 1.3;
    let shear = ShearSpec::new(2, 1, 1, a, 2).unwrap().velocity();
    let r = wkp_seminorm(&shear, 1, 2.0, &Cube::unit(2), 64).unwrap();
    let expect = (a * a * 4.0 * PI * PI * 0.5).sqrt();
    assert!((r.value - expect).abs() < 1e-10 * expect, "{} {expect}", r.value);
    assert!(matches!(wkp_seminorm(&shear, 0, f64::INFINITY, &Cube::unit(2), 8), Err(Error::InvalidArgument(_))));
    assert!(wkp_seminorm(&shear, 3, 2.0, &Cube::unit(2), 8).is_err());
    assert!(wkp_seminorm(&shear, 1, 0.5, &Cube::unit(2), 8).is_err());
}

#[test]
fn plancherel_agrees_with_quadrature_at_integer_order() {
    for spec in [ShearSpec::new(2, 1, 1, 0.8, 2).unwrap(), ShearSpec::new(1, 2, 2, 1.1, 2).unwrap()] {
        let v = spec.velocity();
        for k in [1usize, 2] {
            let quad = wkp_seminorm(&v, k, 2.0, &torus_box(2), 64).unwrap().value;
            let mut sq = 0.0;
            for c in 0..2 {
                let g = PeriodicGrid::sample(2, 64, 8.0, vec![0.0; 2], |x| Ok(v.value(x)?[c])).unwrap();
                sq += fractional_h_norm(&g, k as f64).unwrap().value.powi(2);
            }
            let fft = sq.sqrt();
            assert!((quad - fft).abs() < 1e-6 * fft, "k={k}: {quad} {fft}");
        }
    }
}

fn gaussian() -> FieldRef {
    DataSpec::Gaussian { center: None, width: 1.0 }.build(2).unwrap()
}

fn setup() -> &'static (CubePlan, SolutionHandle) {
    static S: OnceLock<(CubePlan, SolutionHandle)> = OnceLock::new();
    S.get_or_init(|| {
        let rho = gaussian();
        let dp = find_density_point(&*rho, 0.05, &DensityOptions::for_dim(2)).unwrap();
        let opts = PlanOptions {
            n_steps: 2,
            beta_samples: 9,
            ..PlanOptions::for_dim(2)
        };
        let plan = plan_cubes(rho.clone(), 2, &dp, &opts).unwrap();
        let h = SolutionHandle::new(&plan, rho).unwrap();
        (plan, h)
    })
}

#[test]
fn slot_norm_by_scaling_matches_direct_quadrature() {
    let (plan, h) = setup();
    let slot = &h.velocity.slots[0];
    let sched = plan.slots[0].block.schedule().unwrap();
    let n = 448;
    for (r, p) in [(0.0, 2.0), (1.0, 2.0), (1.0, 3.0)] {
        let gamma = gamma_of(r, p, 2);
        // a time inside the second segment of the first step
        let s = sched.segments()[0].duration + 0.1;
        let t = s * slot.tau;
        let seg = sched.active(s).unwrap().unwrap().0;
        let reference = reference_norm(&*sched.segments()[seg].field, r, p, n).unwrap();
        let direct = wkp_seminorm(&SlotSnapshot { slot, t }, r as usize, p, &slot.support, n).unwrap();
        let scaled = slot.lambda.powf(gamma) / slot.tau * reference.value;
        assert!((direct.value - scaled).abs() < 1e-2 * scaled, "(r,p)=({r},{p}): {} {scaled}", direct.value);
    }
}

#[test]
fn rescaling_identity_for_three_sides() {
    let (plan, _) = setup();
    let sched = plan.slots[0].block.schedule().unwrap();
    let seg = sched.segments()[0].field.clone();
    let n = 224;
    for (r, p) in [(0.0, 2.0), (1.0, 2.0), (1.0, 3.0)] {
        let gamma = gamma_of(r, p, 2);
        let reference = reference_norm(&*seg, r, p, n).unwrap().value;
        for lambda in [1e-1, 1e-2, 1e-3] {
            let slot = SlotVelocity {
                center: vec![0.2, -0.1],
                lambda,
                tau: tau_of(lambda),
                schedule: TimeSchedule::new(sched.segments().to_vec(), true).unwrap(),
                support: Cube::new(vec![0.2, -0.1], 7.0 * lambda).unwrap(),
            };
            let direct = wkp_seminorm(&SlotSnapshot { slot: &slot, t: 0.0 }, r as usize, p, &slot.support, n).unwrap().value;
            let ratio = direct / reference;
            let expect = lambda.powf(gamma) / tau_of(lambda);
            assert!((ratio - expect).abs() < 1e-2 * expect, "{lambda}: {ratio} {expect}");
        }
    }
}

#[test]
fn velocity_series_is_finite_below_the_critical_line() {
    let (plan, _) = setup();
    let rep = velocity_norm_series(plan, 0.0, 2.0, 112).unwrap();
    assert_eq!(rep.gamma, 2.0);
    assert_eq!(rep.slots.len(), 2);
    assert!(rep.partial.is_finite() && rep.partial > 0.0);
    for s in &rep.slots {
        assert!((s.factor - s.lambda.powi(2) / s.tau).abs() < 1e-15);
        assert!((s.value - s.factor * s.reference).abs() < 1e-15 * s.value.max(1.0));
    }
    assert!(matches!(velocity_norm_series(plan, 2.0, 2.0, 32), Err(Error::SuperCritical(_))));
    assert!(matches!(velocity_norm_series(plan, 3.0, 2.0, 32), Err(Error::SuperCritical(_))));
}

#[test]
fn growth_curve_respects_the_certified_bound() {
    let (plan, h) = setup();
    let tilde: Vec<Cube> = plan.slots.iter().map(|s| s.support()).collect();
    let t_max = plan.slots[1].tau * 2.0;
    let times: Vec<f64> = (0..=8).map(|k| t_max * k as f64 / 8.0).collect();
    let rows = growth_curve(h, plan, &tilde, &times, 224).unwrap();
    assert_eq!(rows.len(), times.len() * tilde.len());
    for row in &rows {
        let bound = row.lower_bound_log.expect("inside both windows");
        assert!(row.measured_h1.ln() >= bound - 1e-9, "{row:?}");
    }
    // t = 0 on Qₙ with the mass quadrature reproduces Mₙ
    let q: Vec<Cube> = plan.slots.iter().map(|s| s.cube()).collect();
    for row in growth_curve(h, plan, &q, &[0.0], 64).unwrap() {
        let m = plan.slots[row.cube].mass;
        assert!((row.measured_h1 - m).abs() < 1e-12 * m);
        assert!((row.lower_bound_log.unwrap() - (m.ln() - plan.slots[row.cube].beta().unwrap())).abs() < 1e-12);
    }
}

#[test]
fn aggregate_bound_grows_with_the_slot_count() {
    let (plan, _) = setup();
    for t in [0.001, 0.01, 0.02] {
        let one = aggregate_lower_bound_log(plan, t, 1);
        let two = aggregate_lower_bound_log(plan, t, 2);
        assert!(two > one, "{t}: {one} {two}");
    }
}

/// Shear of the unit cell as a plain velocity for the property test below.
struct Affine(Mat);
impl StationaryVelocity for Affine {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.0[(0, 0)] * x[0] + self.0[(0, 1)] * x[1], self.0[(1, 0)] * x[0] + self.0[(1, 1)] * x[1]])
    }
    fn jacobian(&self, _x: &[f64]) -> Result<Mat> {
        Ok(self.0.clone())
    }
}

proptest! {
    #[test]
    fn linear_fields_have_constant_first_derivatives(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, p in 1.0f64..4.0) {
        let v = Affine(Mat::from_row_slice(2, 2, &[a, b, c, -a]));
        let rep = wkp_seminorm(&v, 1, p, &Cube::unit(2), 16).unwrap();
        let expect = ((a * a + c * c).sqrt().powf(p) + (b * b + a * a).sqrt().powf(p)).powf(1.0 / p);
        prop_assert!((rep.value - expect).abs() < 1e-10 * (1.0 + expect));
        prop_assert!(rep.error >= 0.0 && rep.value >= 0.0);
        let k2 = wkp_seminorm(&v, 2, p, &Cube::unit(2), 16).unwrap();
        prop_assert!(k2.value < 1e-6);
    }

    #[test]
    fn fractional_norm_is_monotone_in_order_for_high_modes(m in 2u32..6, r in 0.0f64..2.0) {
        let g = mode(m as f64, 2, 32);
        let lo = fractional_h_norm(&g, r).unwrap().value;
        let hi = fractional_h_norm(&g, r + 0.5).unwrap().value;
        // 2πm/8 > 1 for m ≥ 2, so raising the order raises the norm
        prop_assert!(hi > lo);
    }
}

#[test]
fn shared_block_references_are_reused() {
    let (plan, _) = setup();
    let mut twin = plan.clone();
    twin.slots[1].block = twin.slots[0].block.clone();
    let rep = velocity_norm_series(&twin, 1.0, 2.0, 56).unwrap();
    assert_eq!(rep.slots[0].reference, rep.slots[1].reference);
}
