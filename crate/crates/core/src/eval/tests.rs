use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::generator::{Category, GeneratorSpec};
use crate::geometry::{EulerPose, RotationMatrix};
use crate::policy::GdConfig;

fn spec(c: Category) -> GeneratorSpec {
    GeneratorSpec::new(c).with_resolution(32, 32)
}

fn quick_gd(starts: usize) -> Method {
    Method::Gd {
        starts,
        cfg: GdConfig {
            steps: 3,
            ..GdConfig::default()
        },
    }
}

#[test]
fn ap_examples() {
    assert_eq!(compute_ap(&[0.0; 5], 1e-9).unwrap(), 1.0);
    assert!((compute_ap(&[5.0, 15.0, 45.0], 30.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(compute_ap(&[10.0], 10.0).unwrap(), 0.0);
    assert!(compute_ap(&[], 10.0).is_err());
    assert!(compute_ap(&[1.0], 0.0).is_err());
}

proptest! {
    #[test]
    fn ap_monotone_in_threshold(errs in prop::collection::vec(0.0f64..180.0, 1..50), a in 0.01f64..200.0, b in 0.01f64..200.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p_lo = compute_ap(&errs, lo).unwrap();
        let p_hi = compute_ap(&errs, hi).unwrap();
        prop_assert!((0.0..=1.0).contains(&p_lo));
        prop_assert!(p_lo <= p_hi);
        prop_assert_eq!(compute_ap(&errs, 1e9).unwrap(), 1.0);
    }

    #[test]
    fn symmetric_error_ignores_spin_about_axis(seed in any::<u64>(), spin in -3.0f64..3.0) {
        let sp = spec(Category::Box);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let goal = sp.sample_state(&mut rng);
        let fin = sp.sample_state(&mut rng);
        let mut spun = goal;
        spun.theta = EulerPose::new(goal.theta.azimuth + spin, goal.theta.elevation, goal.theta.inplane);
        let base = episode_error(&fin, &goal, sp.symmetry_axis).0;
        let moved = episode_error(&fin, &spun, sp.symmetry_axis).0;
        prop_assert!((base - moved).abs() < 1e-9);
    }
}

#[test]
fn episode_error_examples() {
    let sp = spec(Category::Box);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = sp.sample_state(&mut rng);
    assert_eq!(episode_error(&g, &g, None), (0.0, 0.0));

    let mut spun = g;
    spun.theta = EulerPose::new(g.theta.azimuth + 1.3, g.theta.elevation, g.theta.inplane);
    assert!(episode_error(&spun, &g, sp.symmetry_axis).0 < 1e-7);
    assert!(episode_error(&spun, &g, None).0 > 1.0);

    // geodesic oracle: angle = acos((tr(AᵀB) − 1) / 2)
    for _ in 0..50 {
        let a = sp.sample_state(&mut rng);
        let b = sp.sample_state(&mut rng);
        let (ra, rb) = (euler_to_matrix(a.theta), euler_to_matrix(b.theta));
        let rel: RotationMatrix = ra.transpose().mul(&rb);
        let expected = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        let (rot, tr) = episode_error(&a, &b, None);
        assert!((rot - expected).abs() < 1e-6, "{rot} vs {expected}");
        let dt: f64 = a.t.to_array().iter().zip(b.t.to_array()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!((tr - dt).abs() < 1e-12);
    }
}

#[test]
fn median_and_stddev() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    assert!(median(&[]).is_nan());
    assert_eq!(stddev(&[5.0]), 0.0);
    assert!((stddev(&[1.0, 2.0, 3.0, 4.0]) - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
}

fn target() -> Image {
    let sp = spec(Category::Laptop);
    sp.render(&sp.sample_state(&mut ChaCha8Rng::seed_from_u64(2)))
}

#[test]
fn identity_disturbances() {
    let img = target();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (k, m) in [
        (DisturbanceKind::Brightness, 1.0),
        (DisturbanceKind::Occlusion, 0.0),
        (DisturbanceKind::Shift, 0.0),
    ] {
        let d = Disturbance::new(k, m).unwrap();
        assert!(d.is_identity());
        assert_eq!(apply_disturbance(&img, &d, &mut rng).unwrap(), img);
    }
}

#[test]
fn shift_is_circular() {
    let img = target();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = Disturbance::new(DisturbanceKind::Shift, 0.25).unwrap();
    let mut out = img.clone();
    for i in 0..4 {
        out = apply_disturbance(&out, &d, &mut rng).unwrap();
        assert_eq!(out == img, i == 3);
    }
    let once = apply_disturbance(&img, &d, &mut rng).unwrap();
    assert_eq!(once.get(1, 8, 8), img.get(1, 0, 0));
}

#[test]
fn brightness_scales_and_clamps() {
    let img = target();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = apply_disturbance(&img, &Disturbance::new(DisturbanceKind::Brightness, 3.0).unwrap(), &mut rng).unwrap();
    for (a, b) in img.data().iter().zip(out.data()) {
        assert_eq!(*b, (a * 3.0).min(1.0));
    }
}

#[test]
fn occlusion_covers_requested_area() {
    let img = target();
    let d = Disturbance::new(DisturbanceKind::Occlusion, 0.25).unwrap();
    let a = apply_disturbance(&img, &d, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = apply_disturbance(&img, &d, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);
    let (w, h) = (img.width(), img.height());
    let mut filled = 0;
    for y in 0..h {
        for x in 0..w {
            if (0..CHANNELS).all(|c| a.get(c, y, x) == BACKGROUND) {
                filled += 1;
            }
        }
    }
    // 16 × 16 square on a 32 × 32 image; pre-existing background may add more
    assert!(filled >= 256, "{filled}");
}

#[test]
fn disturbance_ranges() {
    assert!(Disturbance::new(DisturbanceKind::Brightness, 0.0).is_err());
    assert!(Disturbance::new(DisturbanceKind::Occlusion, 0.6).is_err());
    assert!(Disturbance::new(DisturbanceKind::Shift, 0.3).is_err());
    assert!(Disturbance::new(DisturbanceKind::Shift, -0.1).is_err());
    assert_eq!(Disturbance::new(DisturbanceKind::Occlusion, 0.1).unwrap().label(), "occlusion=0.1");
}

#[test]
fn thresholds_validate() {
    assert!(Thresholds::default().validate().is_ok());
    let bad = Thresholds {
        rotation: vec![30.0, 10.0],
        ..Thresholds::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn oracle_sweep_is_perfect() {
    let sp = spec(Category::Laptop);
    let bins = init_sweep(&Method::Oracle, &sp, 4, 3, 1).unwrap();
    assert_eq!(bins.len(), SWEEP_BINS);
    for (k, b) in bins.iter().enumerate() {
        assert_eq!(b.angle_deg, 10.0 * (k + 1) as f64);
        assert_eq!(b.ap30, 1.0);
        assert_eq!(b.ap10, 1.0);
    }
}

#[test]
fn sweep_inits_offset_only_azimuth() {
    let sp = spec(Category::Laptop);
    for (k, ep) in sweep_episodes(&sp, 40.0, 6, 9).iter().enumerate() {
        assert_eq!(ep.init.t, ep.goal.t);
        assert_eq!(ep.init.theta.elevation, ep.goal.theta.elevation);
        assert!(ep.init.z.0.iter().all(|&v| v == 0.0));
        let (rot, _) = episode_error(&ep.init, &ep.goal, None);
        assert!((rot.to_degrees() - 40.0).abs() < 1e-6, "episode {k}: {}", rot.to_degrees());
    }
}

#[test]
fn evaluation_is_deterministic_and_thread_independent() {
    let sp = spec(Category::Twin);
    let eps = make_episodes(&sp, 4, 21);
    assert_eq!(eps[0].target, make_episodes(&sp, 4, 21)[0].target);
    let m = quick_gd(2);
    let a = evaluate(&m, &sp, &eps, 1).unwrap();
    let b = evaluate(&m, &sp, &eps, 1).unwrap();
    let c = evaluate(&m, &sp, &eps, 2).unwrap();
    assert_eq!(a.rot_deg, b.rot_deg);
    assert_eq!(a.rot_deg, c.rot_deg);
    assert_eq!(a.trans, c.trans);
}

#[test]
fn zero_disturbance_matches_clean() {
    let sp = spec(Category::Laptop);
    let th = Thresholds::default();
    let m = quick_gd(1);
    let grid = [
        Disturbance::new(DisturbanceKind::Occlusion, 0.0).unwrap(),
        Disturbance::new(DisturbanceKind::Brightness, 1.5).unwrap(),
    ];
    let reports = robustness_suite(&[m.clone(), Method::Oracle], &sp, &grid, 5, 4, 1, &th).unwrap();
    assert_eq!(reports.len(), 4);
    let clean = evaluate(&m, &sp, &make_episodes(&sp, 5, 4), 1).unwrap();
    assert_eq!(reports[0].results.rot_deg, clean.rot_deg);
    assert_eq!(reports[0].condition, "occlusion=0");
    assert_eq!(reports[3].policy, "oracle");
    assert_eq!(reports[3].ap_rot_at(10.0), Some(1.0));
    for r in &reports {
        assert!(r.ap_rot.windows(2).all(|w| w[0].1 <= w[1].1));
    }
}

#[test]
fn reports_aggregate_over_seeds() {
    let th = Thresholds::default();
    let mk = |seed: u64, errs: Vec<f64>| {
        let n = errs.len();
        EvalReport::new(
            "gd",
            "clean",
            seed,
            EpisodeResults {
                rot_deg: errs,
                trans: vec![0.01; n],
                seconds: vec![0.0; n],
            },
            &th,
        )
        .unwrap()
    };
    let reps = [mk(0, vec![5.0, 50.0]), mk(1, vec![5.0, 5.0]), mk(2, vec![50.0, 50.0])];
    let rows = ReportRow::from_reports(&reps);
    let ap10 = rows.iter().find(|r| r.metric == "ap_rot@10").unwrap();
    assert_eq!(ap10.value, 0.5);
    assert_eq!(ap10.seed_count, 3);
    assert!((ap10.stddev - 0.5).abs() < 1e-12);
    assert_eq!(rows.len(), 3 + 3 + 2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    write_report(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("policy,condition,metric,value,seed_count,stddev"));
    assert_eq!(lines.count(), rows.len());
}

#[test]
fn timing_covers_every_method() {
    let sp = spec(Category::Laptop);
    let methods = [quick_gd(1), quick_gd(4), quick_gd(8)];
    assert!(timing_suite(&methods, &sp, 5, 0).is_err());
    let t = timing_suite(&methods, &sp, 10, 0).unwrap();
    let names: Vec<&str> = t.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["gd", "gd4", "gd8"]);
    assert!(t[2].1 >= t[1].1 && t[1].1 >= t[0].1, "{t:?}");
}

#[test]
fn random_errors_yield_ap_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let errs: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..180.0)).collect();
    let r = EvalReport::new(
        "x",
        "clean",
        0,
        EpisodeResults {
            trans: errs.iter().map(|e| e / 1000.0).collect(),
            seconds: vec![0.0; 100],
            rot_deg: errs,
        },
        &Thresholds::default(),
    )
    .unwrap();
    for (_, v) in r.ap_rot.iter().chain(&r.ap_trans) {
        assert!((0.0..=1.0).contains(v));
    }
}
