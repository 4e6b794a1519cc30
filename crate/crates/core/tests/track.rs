use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regloss_core::field::FlowMap;
use regloss_core::shears::ShearSpec;
use regloss_core::track::*;
use regloss_core::velocity::{fd_divergence, fd_jacobian, rk4_flow, StationaryVelocity};

fn planar() -> LiftedMap {
    lift_map(track_map(build_track()), 2, (1, 2)).unwrap()
}

fn all_profiles() -> Vec<StripProfile> {
    let mut out = vec![StripProfile::Shift];
    for i in 1..=2 {
        for ip in 1..=2 {
            out.push(StripProfile::Shear(ShearSpec::new(i, ip, 1, 0.8, 2).unwrap()));
        }
    }
    out
}

#[test]
fn unit_jacobian_and_round_trips() {
    let m = track_map(build_track());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..8 {
        for _ in 0..10_000 {
            let uv = [rng.random::<f64>(), k as f64 + rng.random::<f64>()];
            let p = m.inverse2(uv).unwrap();
            let (back, jac) = m.forward_jacobian2(p).unwrap();
            assert!((jac.determinant() - 1.0).abs() < 1e-8, "piece {k} det {}", jac.determinant());
            assert!((back[0] - uv[0]).abs() < 1e-10 && (back[1] - uv[1]).abs() < 1e-10, "piece {k}: {uv:?} -> {back:?}");
            let again = m.inverse2(back).unwrap();
            assert!((again[0] - p[0]).abs() < 1e-10 && (again[1] - p[1]).abs() < 1e-10);
        }
    }
}

#[test]
fn identity_on_unit_square_is_exact() {
    let m = track_map(build_track());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let p = [rng.random::<f64>(), rng.random::<f64>()];
        assert_eq!(m.forward2(p).unwrap(), p);
        let (_, j) = m.forward_jacobian2(p).unwrap();
        assert_eq!(j, nalgebra::Matrix2::identity());
    }
}

#[test]
fn pieces_share_edges_continuously() {
    let m = track_map(build_track());
    for k in 0..8 {
        for u in [0.0, 0.25, 0.5, 1.0] {
            let end = m.layout.planar_inverse(k, u, k as f64 + 1.0);
            let next = (k + 1) % 8;
            let start = m.layout.planar_inverse(next, u, next as f64);
            assert!((end[0] - start[0]).abs() < 1e-12 && (end[1] - start[1]).abs() < 1e-12, "{k} u={u}");
        }
    }
}

#[test]
fn jacobian_is_continuous_across_junctions() {
    let m = track_map(build_track());
    for k in 0..8 {
        for u in [0.1, 0.5, 0.9] {
            let v = ((k + 1) % 8) as f64;
            let a = m.inverse2([u, v - 1e-9]).unwrap();
            let b = m.inverse2([u, v + 1e-9]).unwrap();
            let (_, ja) = m.forward_jacobian2(a).unwrap();
            let (_, jb) = m.forward_jacobian2(b).unwrap();
            assert!((ja - jb).norm() < 1e-6, "junction after piece {k}");
        }
    }
}

#[test]
fn stratified_area_check() {
    let m = track_map(build_track());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in [1usize, 2, 5] {
        // bounding box of the piece
        let outline = m.layout.outline(64);
        let poly = &outline[k];
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for p in poly {
            for c in 0..2 {
                lo[c] = lo[c].min(p[c] - 0.02);
                hi[c] = hi[c].max(p[c] + 0.02);
            }
        }
        let n = 1000;
        let mut hits = 0usize;
        let target = |uv: [f64; 2]| (0.2..0.7).contains(&uv[0]) && (k as f64 + 0.1..k as f64 + 0.6).contains(&uv[1]);
        for i in 0..n {
            for j in 0..n {
                let p = [
                    lo[0] + (hi[0] - lo[0]) * (i as f64 + rng.random::<f64>()) / n as f64,
                    lo[1] + (hi[1] - lo[1]) * (j as f64 + rng.random::<f64>()) / n as f64,
                ];
                if let Ok(uv) = m.forward2(p) {
                    if target(uv) {
                        hits += 1;
                    }
                }
            }
        }
        let area = hits as f64 / (n * n) as f64 * (hi[0] - lo[0]) * (hi[1] - lo[1]);
        assert!((area - 0.25).abs() / 0.25 < 3e-3, "piece {k}: {area}");
    }
}

#[test]
fn lipschitz_constants_are_moderate() {
    let m = track_map(build_track());
    let (lf, li) = m.lipschitz_constants(40).unwrap();
    assert!(lf >= 1.0 && li >= 1.0);
    assert!(lf < 10.0 && li < 10.0, "{lf} {li}");
}

#[test]
fn pullbacks_are_divergence_free_on_track() {
    let m = planar();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for profile in all_profiles() {
        let f = pullback_velocity(profile, &m);
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let k = rng.random_range(0..8);
            let uv = [0.01 + 0.98 * rng.random::<f64>(), k as f64 + rng.random::<f64>()];
            let x = m.inverse(&uv).unwrap();
            let jac = f.jacobian(&x).unwrap();
            assert!(jac.trace().abs() < 1e-10);
            worst = worst.max(fd_divergence(&f, &x, 1e-5).unwrap().abs() / (1.0 + jac.abs().max()));
        }
        assert!(worst < 1e-6, "{profile:?}: {worst}");
    }
}

#[test]
fn pulled_back_shift_speed_is_unit_on_squares() {
    let m = planar();
    let f = shift_field(&m);
    let v = f.value(&[0.3, 0.6]).unwrap();
    assert!((v[0]).abs() < 1e-14 && (v[1] + 1.0).abs() < 1e-14);
    let x = m.inverse(&[0.4, 2.5]).unwrap();
    let v = f.value(&x).unwrap();
    assert!((v[0] + 1.0).abs() < 1e-14 && v[1].abs() < 1e-14, "{v:?}");
}

#[test]
fn extended_fields_divergence_free_everywhere() {
    let m = planar();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for profile in all_profiles() {
        let f = extend_divfree(&pullback_velocity(profile, &m), DEFAULT_COLLAR).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let x = [rng.random_range(-3.0..4.0), rng.random_range(-3.0..4.0)];
            let jac = f.jacobian(&x).unwrap();
            assert!(jac.trace().abs() < 1e-10);
            worst = worst.max(fd_divergence(&f, &x, 1e-6).unwrap().abs() / (1.0 + jac.abs().max()));
        }
        assert!(worst < 1e-6, "{profile:?}: {worst}");
    }
}

#[test]
fn extended_fields_vanish_outside_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for d in [2usize, 3] {
        let m = lift_map(track_map(build_track()), d, (1, 2)).unwrap();
        for profile in all_profiles() {
            let profile = match profile {
                StripProfile::Shear(s) => StripProfile::Shear(ShearSpec::new(s.sign_index, s.profile_index, 1, 0.8, d).unwrap()),
                p => p,
            };
            let f = extend_divfree(&pullback_velocity(profile, &m), DEFAULT_COLLAR).unwrap();
            for _ in 0..1000 {
                let mut x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..4.0)).collect();
                let k = rng.random_range(0..d);
                x[k] = if rng.random::<bool>() { rng.random_range(4.0..9.0) } else { rng.random_range(-8.0..-3.0) };
                assert!(f.value(&x).unwrap().iter().all(|&c| c == 0.0), "{x:?}");
            }
        }
    }
}

#[test]
fn extension_agrees_with_pullback_on_track() {
    let m = planar();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for profile in all_profiles() {
        let on = pullback_velocity(profile, &m);
        let ext = extend_divfree(&on, DEFAULT_COLLAR).unwrap();
        for _ in 0..500 {
            let k = rng.random_range(0..8);
            let x = m.inverse(&[rng.random::<f64>(), k as f64 + rng.random::<f64>()]).unwrap();
            assert_eq!(on.value(&x).unwrap(), ext.value(&x).unwrap());
        }
    }
}

#[test]
fn extension_is_c1_across_track_boundary() {
    let m = planar();
    let lay = build_track();
    for profile in all_profiles() {
        let f = extend_divfree(&pullback_velocity(profile, &m), DEFAULT_COLLAR).unwrap();
        for k in 0..8 {
            for s in [0.2, 0.5, 0.8] {
                for (u, outward) in [(0.0, 1.0), (1.0, -1.0)] {
                    let q = m.inverse(&[u, k as f64 + s]).unwrap();
                    // outward normal of the boundary curve is the gradient of rho
                    let loc = lay.locate([q[0], q[1]]);
                    let eps = 1e-6;
                    let grad_rho = {
                        let a = lay.locate([q[0] + eps, q[1]]).rho - lay.locate([q[0] - eps, q[1]]).rho;
                        let b = lay.locate([q[0], q[1] + eps]).rho - lay.locate([q[0], q[1] - eps]).rho;
                        let n = (a * a + b * b).sqrt();
                        [a / n, b / n]
                    };
                    assert!(loc.cell.is_some());
                    let off = 2e-7 * outward;
                    let pin = [q[0] - off * grad_rho[0], q[1] - off * grad_rho[1]];
                    let pout = [q[0] + off * grad_rho[0], q[1] + off * grad_rho[1]];
                    let ji = fd_jacobian(&f, &pin, 1e-7).unwrap();
                    let jo = fd_jacobian(&f, &pout, 1e-7).unwrap();
                    assert!((&ji - &jo).abs().max() < 1e-4, "{profile:?} piece {k} s={s} u={u}: {}", (&ji - &jo).abs().max());
                }
            }
        }
    }
}

#[test]
fn shift_flow_advances_regions() {
    let m = planar();
    let f = shift_field(&m);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..200 {
        let k = rng.random_range(0..8);
        let x = m.inverse(&[rng.random::<f64>(), k as f64 + 0.05 + 0.9 * rng.random::<f64>()]).unwrap();
        let r0 = region_index(&x, &m).unwrap();
        for t in 0..=8 {
            let (y, _) = f.exact_flow(&x, t as f64).unwrap().unwrap();
            assert_eq!(region_index(&y, &m).unwrap(), (r0 + 8 - t % 8) % 8);
        }
    }
}

#[test]
fn exact_flow_matches_rk4_and_has_unit_determinant() {
    let m = planar();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for profile in all_profiles() {
        let f = extend_divfree(&pullback_velocity(profile, &m), DEFAULT_COLLAR).unwrap().with_speed(2.0);
        for _ in 0..20 {
            let k = rng.random_range(0..8);
            let x = m.inverse(&[rng.random::<f64>(), k as f64 + rng.random::<f64>()]).unwrap();
            let t = 0.9;
            let (ye, je) = f.exact_flow(&x, t).unwrap().unwrap();
            let (yr, jr) = rk4_flow(&f, &x, t, 1e-3).unwrap();
            let err = (ye[0] - yr[0]).abs().max((ye[1] - yr[1]).abs());
            assert!(err < 1e-4, "{profile:?}: {err}");
            assert!((je.determinant() - 1.0).abs() < 1e-8);
            // the field jacobian jumps at junctions, so the variational rk4 jacobian is only first order there
            assert!((&je - &jr).abs().max() < 1e-1 * (1.0 + je.abs().max()), "{profile:?} x={x:?} {je} {jr}");
            let h = 1e-5;
            for c in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let (a, _) = f.exact_flow(&xp, t).unwrap().unwrap();
                let (b, _) = f.exact_flow(&xm, t).unwrap().unwrap();
                for r in 0..2 {
                    let fd = (a[r] - b[r]) / (2.0 * h);
                    assert!((fd - je[(r, c)]).abs() < 1e-5 * (1.0 + je.abs().max()), "{profile:?} {fd} {}", je[(r, c)]);
                }
            }
            let (back, _) = f.exact_flow(&ye, -t).unwrap().unwrap();
            assert!((back[0] - x[0]).abs() < 1e-10 && (back[1] - x[1]).abs() < 1e-10);
        }
    }
}

#[test]
fn lifted_field_in_three_dimensions() {
    let m = lift_map(track_map(build_track()), 3, (3, 1)).unwrap();
    let spec = ShearSpec::new(2, 2, 3, 0.5, 3).unwrap();
    let f = extend_divfree(&pullback_velocity(StripProfile::Shear(spec), &m), DEFAULT_COLLAR).unwrap();
    // piece-0 identity in the (x3, x1) plane: the field is the shear itself there
    let x = [0.4, 0.5, 0.3];
    let v = f.value(&x).unwrap();
    let w = spec.velocity().value(&x).unwrap();
    for c in 0..3 {
        assert!((v[c] - w[c]).abs() < 1e-12);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..2000 {
        let x = [rng.random_range(-3.0..4.0), rng.random_range(-3.0..4.0), rng.random_range(-3.0..4.0)];
        let j = f.jacobian(&x).unwrap();
        assert!(j.trace().abs() < 1e-10);
        assert!(fd_divergence(&f, &x, 1e-5).unwrap().abs() < 1e-6 * (1.0 + j.abs().max()));
    }
    let _ = PI;
}

#[test]
fn exact_flow_off_the_track_matches_rk4() {
    // on-track seeds are covered above; here only collar and flat points
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for d in [2usize, 3] {
        let m = lift_map(track_map(build_track()), d, (1, 2)).unwrap();
        for profile in all_profiles() {
            let profile = match profile {
                StripProfile::Shear(s) => StripProfile::Shear(ShearSpec::new(s.sign_index, s.profile_index, 1, 0.8, d).unwrap()),
                p => p,
            };
            let f = extend_divfree(&pullback_velocity(profile, &m), DEFAULT_COLLAR).unwrap().with_speed(3.0);
            let mut worst = 0.0f64;
            for _ in 0..200 {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..4.0)).collect();
                if m.layout().contains(m.plane_point(&x)) {
                    continue;
                }
                let t = 0.7;
                let (ye, je) = f.exact_flow(&x, t).unwrap().unwrap();
                let (yr, _) = rk4_flow(&f, &x, t, 1e-3).unwrap();
                for c in 0..d {
                    worst = worst.max((ye[c] - yr[c]).abs());
                }
                assert!((je.determinant() - 1.0).abs() < 1e-8, "{x:?} {je}");
                let (back, _) = f.exact_flow(&ye, -t).unwrap().unwrap();
                for c in 0..d {
                    assert!((back[c] - x[c]).abs() < 1e-10, "{x:?} {back:?}");
                }
            }
            assert!(worst < 1e-4, "d={d} {profile:?}: {worst}");
        }
    }
}

#[test]
fn exact_flow_in_the_outer_collar_matches_rk4() {
    let m = planar();
    let tm = track_map(build_track());
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    for profile in all_profiles() {
        let f = extend_divfree(&pullback_velocity(profile, &m), DEFAULT_COLLAR).unwrap().with_speed(4.0);
        let mut worst = 0.0f64;
        for _ in 0..40 {
            let k = rng.random_range(0..8);
            let (x, _) = tm.inverse_jacobian_in(k, [-0.25 * rng.random::<f64>(), k as f64 + rng.random::<f64>()]).unwrap();
            let x = x.to_vec();
            let (ye, je) = f.exact_flow(&x, 1.0).unwrap().unwrap();
            let (yr, _) = rk4_flow(&f, &x, 1.0, 1e-3).unwrap();
            worst = worst.max((ye[0] - yr[0]).abs().max((ye[1] - yr[1]).abs()));
            assert!((je.determinant() - 1.0).abs() < 1e-8);
        }
        assert!(worst < 1e-4, "{profile:?}: {worst}");
    }
}

#[test]
fn exact_flow_in_the_inner_collar_matches_fine_rk4() {
    // the inner collar is thin, so its shear is steep and rk4 needs a finer step there
    let m = planar();
    let tm = track_map(build_track());
    let reach = build_track().hole_reach();
    assert!(reach > 0.011 && reach < 0.0115, "{reach}");
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for profile in all_profiles() {
        let f = extend_divfree(&pullback_velocity(profile, &m), DEFAULT_COLLAR).unwrap().with_speed(2.0);
        assert!((f.hole_collar - 0.75 * reach).abs() < 1e-15);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let k = rng.random_range(0..8);
            let u = 1.0 + f.hole_collar * rng.random::<f64>();
            let (x, _) = tm.inverse_jacobian_in(k, [u, k as f64 + rng.random::<f64>()]).unwrap();
            let x = x.to_vec();
            let (ye, je) = f.exact_flow(&x, 0.5).unwrap().unwrap();
            let (yr, _) = rk4_flow(&f, &x, 0.5, 2e-5).unwrap();
            worst = worst.max((ye[0] - yr[0]).abs().max((ye[1] - yr[1]).abs()));
            assert!((je.determinant() - 1.0).abs() < 1e-8);
        }
        assert!(worst < 1e-5, "{profile:?}: {worst}");
    }
    // deep in the hole the field vanishes
    let f = extend_divfree(&shift_field(&m), DEFAULT_COLLAR).unwrap();
    let y = [1.0 + 0.05, 0.5];
    assert_eq!(f.value(&y).unwrap(), vec![0.0, 0.0]);
    assert_eq!(f.exact_flow(&y, 0.5).unwrap().unwrap().0, y.to_vec());
}
