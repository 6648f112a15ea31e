use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::grad_check;
use crate::geometry::euler_to_matrix;

fn spec(cat: Category) -> GeneratorSpec {
    GeneratorSpec::new(cat)
}

fn with_azimuth(s: &PoseState, az: f64) -> PoseState {
    let mut out = *s;
    out.theta = EulerPose::new(az, s.theta.elevation, s.theta.inplane);
    out
}

/// No Lambertian kink and no face close to edge-on.
fn is_smooth(spec: &GeneratorSpec, s: &PoseState) -> bool {
    let r = euler_to_matrix(s.theta);
    let l = spec.light_dir;
    (0..3).all(|axis| {
        let mut n = [0.0; 3];
        n[axis] = 1.0;
        let c = r.apply(n);
        let ndotl = c[0] * l[0] + c[1] * l[1] + c[2] * l[2];
        ndotl.abs() > 0.02 && c[2].abs() > 0.05
    })
}

#[test]
fn azimuth_wrap_gives_identical_image() {
    let sp = spec(Category::Laptop);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let s = sp.sample_state(&mut rng);
        let wrapped = with_azimuth(&s, s.theta.azimuth + 2.0 * PI);
        let a = sp.render(&s);
        let b = sp.render(&wrapped);
        let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }
}

#[test]
fn mean_pose_render_is_deterministic() {
    for cat in Category::ALL {
        let sp = spec(cat);
        let m = sp.mean_pose();
        assert_eq!(sp.render(&m), sp.render(&m));
    }
}

#[test]
fn mean_pose_is_range_midpoint() {
    let m = spec(Category::Box).mean_pose();
    assert_eq!(m.theta.azimuth, 0.0);
    assert!((m.theta.elevation - PI / 12.0).abs() < 1e-15);
    assert_eq!(m.theta.inplane, 0.0);
    assert_eq!(m.t, Translation::zero());
    assert_eq!(m.z.0, [0.0; LATENT_DIM]);
}

#[test]
fn rendered_values_in_unit_interval() {
    let sp = spec(Category::Twin);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let img = sp.render(&sp.sample_state(&mut rng));
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!((img.width(), img.height()), (64, 64));
    }
}

#[test]
fn mean_pixel_azimuth_gradient_matches_finite_difference() {
    let sp = spec(Category::Laptop);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = sp.sample_state(&mut rng);
    while !is_smooth(&sp, &s) {
        s = sp.sample_state(&mut rng);
    }
    let mut tape = Tape::new();
    let vars = StateVars::params(&mut tape, &s);
    let img = sp.render_on_tape(&mut tape, &vars).unwrap();
    let m = tape.mean(img).unwrap();
    let g = tape.backward(m).unwrap().get(vars.theta).data()[0];

    let h = 1e-5;
    let fp = sp.render(&with_azimuth(&s, s.theta.azimuth + h)).mean();
    let fm = sp.render(&with_azimuth(&s, s.theta.azimuth - h)).mean();
    let numeric = (fp - fm) / (2.0 * h);
    let rel = (g - numeric).abs() / g.abs().max(numeric.abs());
    assert!(rel < 1e-3, "analytic {g} numeric {numeric}");
}

#[test]
fn loss_gradients_pass_grad_check_on_smooth_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 20 {
        let sp = spec(Category::ALL[checked % 3]);
        let s = sp.sample_state(&mut rng);
        let goal = sp.sample_state(&mut rng);
        if !is_smooth(&sp, &s) {
            continue;
        }
        let target = sp.render(&goal);
        let loss = PerceptualLoss::for_image(&target).unwrap();
        let point = [
            Array::from_slice(&s.theta.to_array()),
            Array::from_slice(&s.t.to_array()),
            Array::from_slice(&s.z.0),
        ];
        let report = grad_check(
            |tape, v| {
                let vars = StateVars {
                    theta: v[0],
                    t: v[1],
                    z: v[2],
                };
                let img = sp.render_on_tape(tape, &vars)?;
                loss.on_tape(tape, img, &target)
            },
            &point,
            1e-5,
            1e-3,
        )
        .unwrap();
        assert!(report.passed, "state {checked}: {report:?}");
        checked += 1;
    }
}

#[test]
fn sample_state_is_seed_deterministic() {
    let sp = spec(Category::Box);
    let a = sp.sample_state(&mut ChaCha8Rng::seed_from_u64(42));
    let b = sp.sample_state(&mut ChaCha8Rng::seed_from_u64(42));
    assert_eq!(a, b);
}

#[test]
fn sample_state_statistics_and_ranges() {
    let sp = spec(Category::Box);
    let r = sp.ranges;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 10_000;
    let mut sum = 0.0;
    for _ in 0..n {
        let s = sp.sample_state(&mut rng);
        sum += s.theta.azimuth;
        assert!(s.theta.azimuth > -PI && s.theta.azimuth <= PI);
        assert!(s.theta.elevation >= r.elevation.0 && s.theta.elevation < r.elevation.1);
        assert!(s.theta.inplane.abs() <= PI / 12.0);
        assert!(s.t.tx.abs() <= 0.15 && s.t.ty.abs() <= 0.15 && s.t.scale.abs() <= 0.3);
        assert!(s.z.0.iter().all(|v| v.abs() <= LATENT_LIMIT));
    }
    assert!((sum / n as f64).abs() < 0.05);
}

#[test]
fn loss_identity_symmetry_and_dimension_check() {
    let sp = spec(Category::Laptop);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = sp.render(&sp.sample_state(&mut rng));
    let b = sp.render(&sp.sample_state(&mut rng));
    assert_eq!(perceptual_proxy_loss(&a, &a).unwrap(), 0.0);
    let ab = perceptual_proxy_loss(&a, &b).unwrap();
    let ba = perceptual_proxy_loss(&b, &a).unwrap();
    assert!(ab > 0.0);
    assert!((ab - ba).abs() <= 1e-15 * ab);
    let small = Image::filled(32, 32, 0.5);
    assert!(perceptual_proxy_loss(&a, &small).is_err());
}

#[test]
fn pose_discriminative_for_large_azimuth_changes() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for k in 0..100 {
        let sp = spec(if k % 2 == 0 { Category::Laptop } else { Category::Twin });
        let s = sp.sample_state(&mut rng);
        let off = (30.0 + 150.0 * (k as f64 / 99.0)).to_radians();
        let a = sp.render(&s);
        let b = sp.render(&with_azimuth(&s, s.theta.azimuth + off));
        assert!(perceptual_proxy_loss(&a, &b).unwrap() > 0.0);
    }
}

#[test]
fn twin_loss_has_basin_near_half_turn() {
    let sp = spec(Category::Twin);
    let goal = sp.mean_pose();
    let target = sp.render(&goal);
    let loss = PerceptualLoss::for_image(&target).unwrap();
    let offsets: Vec<f64> = (0..72).map(|k| k as f64 * 5.0).collect();
    let values: Vec<f64> = offsets
        .iter()
        .map(|d| loss.value(&sp.render(&with_azimuth(&goal, d.to_radians())), &target).unwrap())
        .collect();
    let n = values.len();
    let local = (0..n).filter(|&i| {
        let (l, r) = (values[(i + n - 1) % n], values[(i + 1) % n]);
        values[i] < l && values[i] < r && (offsets[i] - 180.0).abs() <= 20.0
    });
    let local: Vec<usize> = local.collect();
    assert!(!local.is_empty(), "{values:?}");
    assert!(local.iter().all(|&i| values[i] > values[0]));
}

#[test]
fn most_latent_components_change_the_image() {
    let sp = spec(Category::Laptop);
    let base = sp.mean_pose();
    let img = sp.render(&base);
    let changed = (0..LATENT_DIM)
        .filter(|&k| {
            let mut s = base;
            s.z.0[k] += 1.0;
            perceptual_proxy_loss(&img, &sp.render(&s)).unwrap() > 0.0
        })
        .count();
    assert!(changed >= 12, "{changed}");
}

#[test]
fn ppm_dump_has_expected_size() {
    let sp = spec(Category::Box);
    let ppm = sp.render(&sp.mean_pose()).to_ppm();
    assert_eq!(ppm.len(), b"P6\n64 64\n255\n".len() + 3 * 64 * 64);
}
