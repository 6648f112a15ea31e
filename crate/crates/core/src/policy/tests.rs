use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::Tape;
use crate::generator::Category;
use crate::geometry::{euler_to_matrix, euler_to_quaternion};

fn state(az: f64) -> PoseState {
    let mut s = GeneratorSpec::new(Category::Laptop).mean_pose();
    s.theta = EulerPose::new(az, s.theta.elevation, s.theta.inplane);
    s
}

#[test]
fn zero_action_is_identity() {
    let s = GeneratorSpec::new(Category::Twin).sample_state(&mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(apply_action(&s, &Action::zero()), s);
}

#[test]
fn azimuth_wraps_across_half_turn() {
    let eps = 0.01;
    let s = state(PI - eps);
    let mut a = Action::zero();
    a.dtheta[0] = 2.0 * eps;
    let out = apply_action(&s, &a);
    assert!((out.theta.azimuth - (-PI + eps)).abs() < 1e-12);
}

#[test]
fn clamped_respects_bounds() {
    let mut a = Action::zero();
    a.dtheta = [4.0, -4.0, 0.1];
    a.dt = [0.7, -0.2, -3.0];
    a.dz[3] = 5.0;
    let c = a.clamped();
    assert!(c.within_bounds());
    assert_eq!(c.dtheta, [PI, -PI, 0.1]);
    assert_eq!(c.dt, [0.5, -0.2, -0.5]);
    assert_eq!(c.dz[3], 2.0);
}

#[test]
fn residual_reaches_goal() {
    let sp = GeneratorSpec::new(Category::Laptop);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let s = sp.sample_state(&mut rng);
        let g = sp.sample_state(&mut rng);
        let reached = apply_action(&s, &Action::residual(&g, &s));
        let d: f64 = reached
            .to_vec()
            .iter()
            .zip(g.to_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(d < 1e-12);
    }
}

fn small_state() -> impl Strategy<Value = PoseState> {
    (
        -3.0..3.0f64,
        -1.0..1.0f64,
        -0.3..0.3f64,
        prop::array::uniform3(-0.2..0.2f64),
        prop::collection::vec(-1.0..1.0f64, LATENT_DIM),
    )
        .prop_map(|(az, el, ip, t, z)| PoseState {
            theta: EulerPose::new(az, el, ip),
            t: Translation::new(t[0], t[1], t[2]),
            z: LatentCode::from_slice(&z),
        })
}

fn small_action() -> impl Strategy<Value = Action> {
    prop::collection::vec(-0.1..0.1f64, STATE_DIM).prop_map(|v| Action::from_slice(&v).unwrap())
}

fn close(a: &PoseState, b: &PoseState) -> bool {
    let ra = euler_to_matrix(a.theta);
    let rb = euler_to_matrix(b.theta);
    let rest = a.to_vec()[3..]
        .iter()
        .zip(&b.to_vec()[3..])
        .all(|(x, y)| (x - y).abs() < 1e-12);
    ra.frobenius_distance(&rb) < 1e-12 && rest
}

proptest! {
    #[test]
    fn action_then_inverse_restores_state(s in small_state(), a in small_action()) {
        let back = apply_action(&apply_action(&s, &a), &a.neg());
        prop_assert!(close(&back, &s));
    }

    #[test]
    fn actions_compose_additively(s in small_state(), a in small_action(), b in small_action()) {
        let lhs = apply_action(&apply_action(&s, &a), &b);
        let rhs = apply_action(&s, &a.add(&b));
        prop_assert!(close(&lhs, &rhs));
    }
}

#[test]
fn quaternion_rows_match_scalar_conversion() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sp = GeneratorSpec::new(Category::Box);
    let poses: Vec<EulerPose> = (0..20).map(|_| sp.sample_state(&mut rng).theta).collect();
    let mut tape = Tape::new();
    let flat: Vec<f64> = poses.iter().flat_map(|p| p.to_array()).collect();
    let x = tape.constant(crate::autodiff::Array::new(vec![20, 3], flat).unwrap());
    let q = quaternion_rows(&mut tape, x).unwrap();
    for (k, p) in poses.iter().enumerate() {
        let row = &tape.value(q).data()[4 * k..4 * k + 4];
        let want = euler_to_quaternion(*p).to_array();
        let sign = if row[0] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..4 {
            assert!((sign * row[i] - want[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn encoding_layout() {
    let sp = GeneratorSpec::new(Category::Laptop);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = sp.render(&sp.sample_state(&mut rng));
    let b = sp.render(&sp.sample_state(&mut rng));
    let same = encode_observation(&Observation::new(a.clone(), a.clone()).unwrap()).unwrap();
    assert_eq!(same.len(), 768);
    assert_eq!(FEATURE_DIM, 768);
    assert!(same[512..].iter().all(|&v| v == 0.0));
    let ab = encode_observation(&Observation::new(a.clone(), b.clone()).unwrap()).unwrap();
    let ba = encode_observation(&Observation::new(b, a).unwrap()).unwrap();
    assert_ne!(ab, ba);
    let flat = crate::generator::Image::filled(32, 32, 0.45);
    let f = encode_observation(&Observation::new(flat.clone(), flat).unwrap()).unwrap();
    assert!(f[..512].iter().all(|&v| (v - 1.0).abs() < 1e-12));
    let odd = crate::generator::Image::filled(48, 40, 0.2);
    assert!(Observation::new(odd.clone(), odd.clone()).is_ok());
    assert!(encode_observation(&Observation::new(odd.clone(), odd).unwrap()).is_err());
}

#[test]
fn net_outputs_are_bounded_and_weights_round_trip() {
    let net = PolicyNet::new(&mut ChaCha8Rng::seed_from_u64(0));
    let feats: Vec<f64> = (0..2 * FEATURE_DIM).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
    for a in net.mean_actions(&feats).unwrap() {
        assert!(a.within_bounds());
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("actor.pnav");
    net.save(&p).unwrap();
    assert_eq!(PolicyNet::load(&p).unwrap(), net);
}

#[test]
fn log_std_is_clamped() {
    let mut net = PolicyNet::new(&mut ChaCha8Rng::seed_from_u64(0));
    net.params[7] = crate::autodiff::Array::full(&[STATE_DIM], 50.0);
    let mut tape = Tape::new();
    let p = net.leaves(&mut tape);
    let x = tape.constant(crate::autodiff::Array::zeros(&[1, FEATURE_DIM]));
    let (_, ls) = PolicyNet::forward(&mut tape, &p, x).unwrap();
    assert!(tape.value(ls).data().iter().all(|&v| v == LOG_STD_MAX));
}

#[test]
fn zero_policy_single_step_keeps_state() {
    let sp = GeneratorSpec::new(Category::Box);
    let s0 = sp.mean_pose();
    let target = sp.render(&sp.sample_state(&mut ChaCha8Rng::seed_from_u64(3)));
    let t = rollout(&ZeroPolicy, &sp, &s0, &target, &EpisodeConfig::new(1).unwrap()).unwrap();
    assert_eq!(*t.final_state(), s0);
    let t = rollout(&ZeroPolicy, &sp, &s0, &target, &EpisodeConfig::new(4).unwrap().recording()).unwrap();
    assert_eq!((t.states.len(), t.actions.len(), t.losses.len(), t.images.len()), (5, 4, 5, 5));
}

#[test]
fn gd_action_vanishes_at_generating_state() {
    let sp = GeneratorSpec::new(Category::Laptop);
    let s = sp.sample_state(&mut ChaCha8Rng::seed_from_u64(21));
    let target = sp.render(&s);
    let loss = PerceptualLoss::for_image(&target).unwrap();
    let cfg = GdConfig::default();
    let mut opt = cfg.new_state();
    let d = gd_policy_step(&sp, &s, &target, &loss, &mut opt).unwrap();
    assert!(d.action.norm() < 1e-6);
    assert_eq!(d.loss, 0.0);
}

#[test]
fn gd_rollout_is_reproducible_and_leaves_spec_untouched() {
    let sp = GeneratorSpec::new(Category::Twin);
    let before = format!("{sp:?}");
    let target = sp.render(&state(0.4));
    let cfg = EpisodeConfig::new(5).unwrap();
    let gd = GdPolicy::default();
    let a = rollout(&gd, &sp, &sp.mean_pose(), &target, &cfg).unwrap();
    let b = rollout(&gd, &sp, &sp.mean_pose(), &target, &cfg).unwrap();
    assert_eq!(a.states, b.states);
    assert_eq!(a.losses, b.losses);
    assert_eq!(before, format!("{sp:?}"));
}

#[test]
fn single_start_equals_plain_gd() {
    let sp = GeneratorSpec::new(Category::Laptop);
    let target = sp.render(&state(0.3));
    let cfg = GdConfig {
        steps: 6,
        ..GdConfig::default()
    };
    let (s, l) = multi_start_gd(&sp, &target, 1, &cfg).unwrap();
    let t = rollout(&GdPolicy::new(cfg.clone()), &sp, &sp.mean_pose(), &target, &EpisodeConfig::new(6).unwrap()).unwrap();
    assert_eq!(s, *t.final_state());
    assert_eq!(l, *t.losses.last().unwrap());
    assert!(multi_start_gd(&sp, &target, 0, &cfg).is_err());
}
