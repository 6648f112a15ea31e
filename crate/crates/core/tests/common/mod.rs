#![allow(dead_code)]

use std::sync::Arc;

use posenav::autodiff::{grad_check, Array, Tape, Var};
use posenav::generator::{GeneratorSpec, PerceptualLoss, PoseState, StateVars};
use posenav::geometry::euler_to_matrix;
use posenav::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

fn rand_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.random_range(1..=3);
    (0..rank).map(|_| rng.random_range(1..=4)).collect()
}

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values with magnitude in `[gap, hi]` and random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64, hi: f64) -> Array {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(gap..hi);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Array::new(shape.to_vec(), data).unwrap()
}

/// Keep some axes of `shape`, set the rest to one.
fn squeezed(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<usize> {
    shape.iter().map(|&d| if rng.random_bool(0.5) { 1 } else { d }).collect()
}

/// Contract an arbitrary node to a scalar through fixed random weights so
/// that every output coordinate carries a distinct cotangent.
fn weighted_root(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(out).to_vec();
    let w = rand_array(&mut rng, &shape, -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

type Case = (Vec<Array>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

fn make_case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    let s = rand_shape(rng);
    let unary = |f: fn(&mut Tape, Var) -> Result<Var>| -> Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>> {
        Box::new(move |t, v| f(t, v[0]))
    };
    match name {
        "add" | "sub" | "mul" => {
            let bs = squeezed(rng, &s);
            let pts = vec![rand_array(rng, &s, -2.0, 2.0), rand_array(rng, &bs, -2.0, 2.0)];
            let f: Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>> = match name {
                "add" => Box::new(|t, v| t.add(v[0], v[1])),
                "sub" => Box::new(|t, v| t.sub(v[0], v[1])),
                _ => Box::new(|t, v| t.mul(v[0], v[1])),
            };
            (pts, f)
        }
        "div" => {
            let bs = squeezed(rng, &s);
            let pts = vec![rand_array(rng, &s, -2.0, 2.0), away_from_zero(rng, &bs, 0.5, 2.0)];
            (pts, Box::new(|t, v| t.div(v[0], v[1])))
        }
        "matmul" => {
            let (m, k, n) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
            let pts = vec![rand_array(rng, &[m, k], -1.0, 1.0), rand_array(rng, &[k, n], -1.0, 1.0)];
            (pts, Box::new(|t, v| t.matmul(v[0], v[1])))
        }
        "transpose" => {
            let sh = [rng.random_range(1..=4), rng.random_range(1..=4)];
            (vec![rand_array(rng, &sh, -1.0, 1.0)], unary(|t, x| t.transpose(x)))
        }
        "sum" => (vec![rand_array(rng, &s, -1.0, 1.0)], unary(|t, x| t.sum(x))),
        "sum_axis" => {
            let axis = rng.random_range(0..s.len());
            (vec![rand_array(rng, &s, -1.0, 1.0)], Box::new(move |t, v| t.sum_axis(v[0], axis)))
        }
        "mean" => (vec![rand_array(rng, &s, -1.0, 1.0)], unary(|t, x| t.mean(x))),
        "neg" => (vec![rand_array(rng, &s, -1.0, 1.0)], unary(|t, x| t.neg(x))),
        "scale" => {
            let k = rng.random_range(-3.0..3.0);
            (vec![rand_array(rng, &s, -1.0, 1.0)], Box::new(move |t, v| t.scale(v[0], k)))
        }
        "add_scalar" => {
            let k = rng.random_range(-3.0..3.0);
            (vec![rand_array(rng, &s, -1.0, 1.0)], Box::new(move |t, v| t.add_scalar(v[0], k)))
        }
        "relu" => (vec![away_from_zero(rng, &s, 1e-3, 2.0)], unary(|t, x| t.relu(x))),
        "tanh" => (vec![rand_array(rng, &s, -2.0, 2.0)], unary(|t, x| t.tanh(x))),
        "sigmoid" => (vec![rand_array(rng, &s, -4.0, 4.0)], unary(|t, x| t.sigmoid(x))),
        "log_sigmoid" => (vec![rand_array(rng, &s, -6.0, 6.0)], unary(|t, x| t.log_sigmoid(x))),
        "exp" => (vec![rand_array(rng, &s, -2.0, 2.0)], unary(|t, x| t.exp(x))),
        "log" => (vec![rand_array(rng, &s, 0.5, 3.0)], unary(|t, x| t.log(x))),
        "sqrt" => (vec![rand_array(rng, &s, 0.5, 3.0)], unary(|t, x| t.sqrt(x))),
        "sin" => (vec![rand_array(rng, &s, -3.0, 3.0)], unary(|t, x| t.sin(x))),
        "cos" => (vec![rand_array(rng, &s, -3.0, 3.0)], unary(|t, x| t.cos(x))),
        "square" => (vec![rand_array(rng, &s, -2.0, 2.0)], unary(|t, x| t.square(x))),
        "clamp" => {
            // keep every coordinate at least 1e-3 from the bounds
            let n: usize = s.iter().product();
            let data = (0..n)
                .map(|_| match rng.random_range(0..3) {
                    0 => rng.random_range(-2.0..-0.501),
                    1 => rng.random_range(-0.499..0.499),
                    _ => rng.random_range(0.501..2.0),
                })
                .collect();
            (vec![Array::new(s.clone(), data).unwrap()], unary(|t, x| t.clamp(x, -0.5, 0.5)))
        }
        "broadcast" => {
            let small = squeezed(rng, &s);
            let full = s.clone();
            (vec![rand_array(rng, &small, -1.0, 1.0)], Box::new(move |t, v| t.broadcast(v[0], &full)))
        }
        "reshape" => {
            let n: usize = s.iter().product();
            (vec![rand_array(rng, &s, -1.0, 1.0)], Box::new(move |t, v| t.reshape(v[0], &[n])))
        }
        "slice" => {
            let axis = rng.random_range(0..s.len());
            let start = rng.random_range(0..s[axis]);
            let end = rng.random_range(start + 1..=s[axis]);
            (vec![rand_array(rng, &s, -1.0, 1.0)], Box::new(move |t, v| t.slice(v[0], axis, start, end)))
        }
        "concat" => {
            let axis = rng.random_range(0..s.len());
            let mut s2 = s.clone();
            s2[axis] = rng.random_range(1..=3);
            let pts = vec![rand_array(rng, &s, -1.0, 1.0), rand_array(rng, &s2, -1.0, 1.0)];
            (pts, Box::new(move |t, v| t.concat(&[v[0], v[1]], axis)))
        }
        "avgpool2x2" => {
            let sh = [rng.random_range(1..=3), 2 * rng.random_range(1..=3), 2 * rng.random_range(1..=3)];
            (vec![rand_array(rng, &sh, -1.0, 1.0)], unary(|t, x| t.avgpool2x2(x)))
        }
        "gather" => {
            let n: usize = s.iter().product();
            let m = rng.random_range(1..=8);
            let idx: Arc<[usize]> = (0..m).map(|_| rng.random_range(0..n)).collect();
            (vec![rand_array(rng, &s, -1.0, 1.0)], Box::new(move |t, v| t.gather(v[0], idx.clone(), &[m])))
        }
        "softmax" => {
            let axis = rng.random_range(0..s.len());
            (vec![rand_array(rng, &s, -2.0, 2.0)], Box::new(move |t, v| t.softmax(v[0], axis)))
        }
        other => panic!("no case for {other}"),
    }
}

pub const PRIMITIVES: [&str; 30] = [
    "add", "sub", "mul", "div", "matmul", "transpose", "sum", "sum_axis", "mean", "neg", "scale",
    "add_scalar", "relu", "tanh", "sigmoid", "log_sigmoid", "exp", "log", "sqrt", "sin", "cos",
    "square", "clamp", "broadcast", "reshape", "slice", "concat", "avgpool2x2", "gather", "softmax",
];

/// Worst relative error of tape gradients against central differences for
/// every primitive over `cases` random shapes and values.
pub fn primitive_grad_errors(cases: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PRIMITIVES
        .into_iter()
        .map(|name| {
            let mut worst: f64 = 0.0;
            for c in 0..cases {
                let (pts, f) = make_case(name, &mut rng);
                let root_seed = seed ^ (c as u64 + 1);
                let rep = grad_check(
                    |t, v| {
                        let out = f(t, v)?;
                        weighted_root(t, out, root_seed)
                    },
                    &pts,
                    FD_STEP,
                    1e-4,
                )
                .unwrap();
                worst = worst.max(rep.max_rel_error);
            }
            (name, worst)
        })
        .collect()
}

/// No Lambertian kink and no face close to edge-on.
pub fn is_smooth(spec: &GeneratorSpec, s: &PoseState) -> bool {
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

/// Worst relative error of the image-loss gradient with respect to the full
/// state over `n` random smooth states.
pub fn generator_loss_grad_errors(specs: &[GeneratorSpec], n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let sp = &specs[out.len() % specs.len()];
        let s = sp.sample_state(&mut rng);
        let goal = sp.sample_state(&mut rng);
        if !is_smooth(sp, &s) {
            continue;
        }
        let target = sp.render(&goal);
        let loss = PerceptualLoss::for_image(&target).unwrap();
        let point = [
            Array::from_slice(&s.theta.to_array()),
            Array::from_slice(&s.t.to_array()),
            Array::from_slice(&s.z.0),
        ];
        let rep = grad_check(
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
            FD_STEP,
            1e-3,
        )
        .unwrap();
        out.push(rep.max_rel_error);
    }
    out
}
