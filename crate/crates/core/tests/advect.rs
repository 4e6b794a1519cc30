use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regloss_core::advect::*;
use regloss_core::data::DataSpec;
use regloss_core::error::{Error, Result};
use regloss_core::field::{norm_sq, FieldRef, ScalarField};
use regloss_core::plan::*;
use regloss_core::quadrature::{midpoint_with_error, Region};

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
            beta_samples: 0,
            ..PlanOptions::for_dim(2)
        };
        let plan = plan_cubes(rho.clone(), 2, &dp, &opts).unwrap();
        let h = SolutionHandle::new(&plan, rho).unwrap();
        (plan, h)
    })
}

fn point_in(s: &CubeSlot, rng: &mut ChaCha8Rng, half: f64) -> [f64; 2] {
    [
        s.center[0] + s.lambda * rng.random_range(-half..half),
        s.center[1] + s.lambda * rng.random_range(-half..half),
    ]
}

#[test]
fn time_zero_and_outside_points_see_the_datum() {
    let (plan, h) = setup();
    let rho = gaussian();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let x = point_in(&plan.slots[0], &mut rng, 3.4);
        assert_eq!(h.evaluate(&x, 0.0).unwrap(), rho.value(&x).unwrap());
        assert_eq!(h.evaluate_gradient(&x, 0.0).unwrap(), rho.gradient(&x).unwrap());
        let far = [rng.random_range(-2.0..0.0), rng.random_range(-2.0..2.0)];
        let t = rng.random_range(0.0..h.horizon());
        assert_eq!(h.evaluate(&far, t).unwrap(), rho.value(&far).unwrap());
    }
    assert!(matches!(h.evaluate(&[0.0, 0.0], 2.0 * h.horizon()), Err(Error::TimeRange { .. })));
}

#[test]
fn values_stay_in_the_datum_range() {
    let (plan, h) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // the datum restricted to each support, bracketed on a fine lattice plus a margin for the lattice gap
    let rho = gaussian();
    let ranges: Vec<(f64, f64)> = plan
        .slots
        .iter()
        .map(|s| {
            let q = s.support();
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..=100 {
                for j in 0..=100 {
                    let v = rho.value(&q.from_unit(&[i as f64 / 100.0, j as f64 / 100.0])).unwrap();
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            let slack = 1e-3 * (hi - lo);
            (lo - slack, hi + slack)
        })
        .collect();
    for _ in 0..10_000 {
        let k = rng.random_range(0..plan.slots.len());
        let x = point_in(&plan.slots[k], &mut rng, 3.5);
        let t = rng.random_range(0.0..h.horizon());
        let v = h.evaluate(&x, t).unwrap();
        assert!((0.0..=1.0).contains(&v));
        assert!(v >= ranges[k].0 && v <= ranges[k].1, "{v} {:?}", ranges[k]);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let (plan, h) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let s = &plan.slots[rng.random_range(0..plan.slots.len())];
        let x = point_in(s, &mut rng, 3.4);
        let t = rng.random_range(0.0..h.horizon());
        let g = h.evaluate_gradient(&x, t).unwrap();
        // step 1e-6 in block units: a physical 1e-6 would span a good part of the thin collar
        let step = 1e-6 * s.lambda;
        let fd: Vec<f64> = (0..2)
            .map(|k| {
                let mut p = x;
                let mut m = x;
                p[k] += step;
                m[k] -= step;
                (h.evaluate(&p, t).unwrap() - h.evaluate(&m, t).unwrap()) / (2.0 * step)
            })
            .collect();
        let diff = norm_sq(&[g[0] - fd[0], g[1] - fd[1]]).sqrt();
        assert!(diff <= 1e-4 * norm_sq(&g).sqrt(), "{x:?} {t}: {g:?} {fd:?}");
    }
}

#[test]
fn inverse_then_forward_is_identity() {
    let (plan, h) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let s = &plan.slots[rng.random_range(0..plan.slots.len())];
        let x = point_in(s, &mut rng, 3.4);
        let t = rng.random_range(0.0..h.horizon());
        let (y, _) = h.velocity.inverse_flow(&x, t).unwrap();
        let (back, _) = h.velocity.flow(&y, t).unwrap();
        assert!((back[0] - x[0]).abs() < 1e-9 * s.lambda && (back[1] - x[1]).abs() < 1e-9 * s.lambda);
    }
}

struct Zero;
impl TimeVelocity for Zero {
    fn velocity(&self, x: &[f64], _t: f64) -> Result<Vec<f64>> {
        Ok(vec![0.0; x.len()])
    }
}

struct Drift;
impl TimeVelocity for Drift {
    fn velocity(&self, x: &[f64], _t: f64) -> Result<Vec<f64>> {
        let mut v = vec![0.0; x.len()];
        v[0] = 1.0;
        Ok(v)
    }
}

/// `ẋ = (1 on [0, 1), then 0) e₁`, with the switch declared.
struct Stop;
impl TimeVelocity for Stop {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(vec![if t < 1.0 { 1.0 } else { 0.0 }; x.len()])
    }

    fn switches(&self, _x: &[f64], t0: f64, t1: f64) -> Vec<f64> {
        if t0 < 1.0 && 1.0 < t1 {
            vec![1.0]
        } else {
            vec![]
        }
    }

    fn velocity_in(&self, x: &[f64], _t: f64, (a, b): (f64, f64)) -> Result<Vec<f64>> {
        self.velocity(x, 0.5 * (a + b))
    }
}

#[test]
fn rk4_on_trivial_fields() {
    assert_eq!(rk4_trajectory(&Zero, &[0.3, 0.4], 0.0, 2.0, 0.1).unwrap(), vec![0.3, 0.4]);
    let y = rk4_trajectory(&Drift, &[0.3, 0.4], 1.0, 2.0, 0.013).unwrap();
    assert!((y[0] - 1.3).abs() < 1e-14 && y[1] == 0.4);
    // a step of 0.3 would straddle the switch at 1; aligned steps land exactly
    let y = rk4_trajectory(&Stop, &[0.0, 0.0], 0.0, 2.0, 0.3).unwrap();
    assert!((y[0] - 1.0).abs() < 1e-14, "{y:?}");
    assert!(rk4_trajectory(&Zero, &[0.0, 0.0], 0.0, 1.0, 0.0).is_err());
}

#[test]
fn rk4_oracle_converges_on_the_assembled_field() {
    let (plan, h) = setup();
    let s1 = &plan.slots[0];
    let t = h.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seeds: Vec<[f64; 2]> = (0..100).map(|_| point_in(s1, &mut rng, 0.5)).collect();
    let worst = |dt: f64| {
        seeds
            .iter()
            .map(|x| {
                let (e, _) = h.velocity.flow(x, t).unwrap();
                let r = rk4_trajectory(&h.velocity, x, 0.0, t, dt).unwrap();
                norm_sq(&[e[0] - r[0], e[1] - r[1]]).sqrt()
            })
            .fold(0.0, f64::max)
    };
    let coarse = worst(1e-4);
    let fine = worst(1e-5);
    assert!(coarse < 1e-4, "{coarse:e}");
    // the junction kinks cost some order, but a tenfold step cut still gains close to two digits
    assert!(fine < coarse / 50.0, "{coarse:e} {fine:e}");
}

#[test]
fn l2_norm_is_conserved_on_each_support() {
    let (plan, h) = setup();
    let rho = gaussian();
    let t = h.horizon();
    let slice = h.at(t).unwrap();
    for s in &plan.slots {
        let region = Region::from(&s.support());
        let a = midpoint_with_error(&region, 256, |x| Ok(rho.value(x)?.powi(2))).unwrap();
        let b = midpoint_with_error(&region, 256, |x| Ok(slice.value(x)?.powi(2))).unwrap();
        let tol = 3.0 * (a.error + b.error) + 1e-9 * a.value;
        assert!((a.value - b.value).abs() <= tol, "{a:?} {b:?}");
        assert!((a.value - b.value).abs() < 1e-5 * a.value);
    }
}
