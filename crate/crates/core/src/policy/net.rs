//! Observation encoder and the dense actor network shared by RL and IL.
//!
//! Each image is converted to grayscale (mean over RGB) and average-pooled to
//! 16×16; the encoder stacks `[current, target, current − target]`, giving
//! 768 features, rescaled as `4 · (g − 0.2)` for the image channels and
//! `4 · Δg` for the difference. The actor is `768 → 256 → 256` with tanh activations and two
//! 22-wide heads: the pre-squash action mean and the log standard deviation
//! (clamped to `[-5, 2]`). Actions are `tanh(u) · bounds`.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Action, Controller, Decision, Observation, Policy};
use crate::autodiff::{load_weights, save_weights, Array, NamedArray, Tape, Var};
use crate::error::{Error, Result};
use crate::generator::{GeneratorSpec, Image, PerceptualLoss, PoseState, STATE_DIM};

pub const POOLED: usize = 16;
pub const FEATURE_DIM: usize = 3 * POOLED * POOLED;
pub const HIDDEN: usize = 256;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const FEATURE_SHIFT: f64 = 0.2;
const FEATURE_SCALE: f64 = 4.0;

fn pooled_gray(img: &Image) -> Result<Vec<f64>> {
    let (w, h) = (img.width(), img.height());
    if w % POOLED != 0 || h % POOLED != 0 || w != h {
        return Err(Error::shape(
            "encode_observation",
            format!("{w}x{h} is not a square multiple of {POOLED}"),
        ));
    }
    let f = w / POOLED;
    let gray = img.grayscale();
    let mut out = vec![0.0; POOLED * POOLED];
    for y in 0..h {
        for x in 0..w {
            out[(y / f) * POOLED + x / f] += gray[y * w + x];
        }
    }
    let norm = 1.0 / (f * f) as f64;
    out.iter_mut().for_each(|v| *v *= norm);
    Ok(out)
}

/// `[gray(current), gray(target), gray(current) − gray(target)]`, each pooled
/// to 16×16, then rescaled.
pub fn encode_observation(o: &Observation) -> Result<Vec<f64>> {
    if !o.current.same_dims(&o.target) {
        return Err(Error::shape("encode_observation", "current and target differ in size"));
    }
    let c = pooled_gray(&o.current)?;
    let t = pooled_gray(&o.target)?;
    let mut out = Vec::with_capacity(FEATURE_DIM);
    let k = FEATURE_SCALE;
    out.extend(c.iter().map(|v| k * (v - FEATURE_SHIFT)));
    out.extend(t.iter().map(|v| k * (v - FEATURE_SHIFT)));
    out.extend(c.iter().zip(&t).map(|(a, b)| k * (a - b)));
    debug_assert_eq!(out.len(), FEATURE_DIM);
    Ok(out)
}

/// Quaternions `q = q_z(γ) · q_x(β) · q_y(α)` of the Euler rows `[B, 3]`
/// (azimuth α, elevation β, in-plane γ) as a `[B, 4]` node, without sign
/// canonicalization.
pub fn quaternion_rows(tape: &mut Tape, angles: Var) -> Result<Var> {
    let half = tape.scale(angles, 0.5)?;
    let s = tape.sin(half)?;
    let c = tape.cos(half)?;
    let col = |tape: &mut Tape, v: Var, k: usize| tape.slice(v, 1, k, k + 1);
    let (sy, sx, sz) = (col(tape, s, 0)?, col(tape, s, 1)?, col(tape, s, 2)?);
    let (cy, cx, cz) = (col(tape, c, 0)?, col(tape, c, 1)?, col(tape, c, 2)?);
    let prod3 = |tape: &mut Tape, a: Var, b: Var, d: Var| -> Result<Var> {
        let ab = tape.mul(a, b)?;
        tape.mul(ab, d)
    };
    let w1 = prod3(tape, cz, cx, cy)?;
    let w2 = prod3(tape, sz, sx, sy)?;
    let w = tape.sub(w1, w2)?;
    let x1 = prod3(tape, cz, sx, cy)?;
    let x2 = prod3(tape, sz, cx, sy)?;
    let x = tape.sub(x1, x2)?;
    let y1 = prod3(tape, cz, cx, sy)?;
    let y2 = prod3(tape, sz, sx, cy)?;
    let y = tape.add(y1, y2)?;
    let z1 = prod3(tape, cz, sx, sy)?;
    let z2 = prod3(tape, sz, cx, cy)?;
    let z = tape.add(z1, z2)?;
    tape.concat(&[w, x, y, z], 1)
}

const NAMES: [&str; 8] = ["w1", "b1", "w2", "b2", "w_mean", "b_mean", "w_logstd", "b_logstd"];
const LOG_STD_INIT: f64 = -1.0;

/// Actor network parameters, in the order of the weight-file records.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub params: Vec<Array>,
}

/// Dense layer init: weights `U(±gain/√fan_in)`, zero bias.
pub(crate) fn dense(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, gain: f64) -> (Array, Array) {
    let bound = gain / (fan_in as f64).sqrt();
    let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    (
        Array::new(vec![fan_in, fan_out], w).expect("dense shape"),
        Array::zeros(&[fan_out]),
    )
}

impl PolicyNet {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let (w1, b1) = dense(rng, FEATURE_DIM, HIDDEN, 1.0);
        let (w2, b2) = dense(rng, HIDDEN, HIDDEN, 1.0);
        let (wm, bm) = dense(rng, HIDDEN, STATE_DIM, 0.1);
        let (ws, _) = dense(rng, HIDDEN, STATE_DIM, 0.1);
        let bs = Array::full(&[STATE_DIM], LOG_STD_INIT);
        Self {
            params: vec![w1, b1, w2, b2, wm, bm, ws, bs],
        }
    }

    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Pre-squash mean `u` and clamped log-std for a feature batch `[B, 768]`.
    pub fn forward(tape: &mut Tape, p: &[Var], x: Var) -> Result<(Var, Var)> {
        let h = tape.matmul(x, p[0])?;
        let h = tape.add(h, p[1])?;
        let h = tape.tanh(h)?;
        let h = tape.matmul(h, p[2])?;
        let h = tape.add(h, p[3])?;
        let h = tape.tanh(h)?;
        let u = tape.matmul(h, p[4])?;
        let u = tape.add(u, p[5])?;
        let ls = tape.matmul(h, p[6])?;
        let ls = tape.add(ls, p[7])?;
        let ls = tape.clamp(ls, LOG_STD_MIN, LOG_STD_MAX)?;
        Ok((u, ls))
    }

    /// `tanh(u) · bounds`.
    pub fn squash(tape: &mut Tape, u: Var) -> Result<Var> {
        let t = tape.tanh(u)?;
        let b = tape.constant(Array::from_slice(&Action::bounds()));
        tape.mul(t, b)
    }

    /// Deterministic actions for a feature batch, row-major `[B, 768]`.
    pub fn mean_actions(&self, features: &[f64]) -> Result<Vec<Action>> {
        if !features.len().is_multiple_of(FEATURE_DIM) {
            return Err(Error::shape("PolicyNet", format!("{} features", features.len())));
        }
        let b = features.len() / FEATURE_DIM;
        let mut tape = Tape::new();
        let p: Vec<Var> = self.params.iter().map(|a| tape.constant(a.clone())).collect();
        let x = tape.constant(Array::new(vec![b, FEATURE_DIM], features.to_vec())?);
        let (u, _) = Self::forward(&mut tape, &p, x)?;
        let a = Self::squash(&mut tape, u)?;
        tape.value(a).data().chunks(STATE_DIM).map(Action::from_slice).collect()
    }

    pub fn mean_action(&self, features: &[f64]) -> Result<Action> {
        Ok(self.mean_actions(features)?.remove(0))
    }

    pub fn named(&self) -> Vec<NamedArray> {
        NAMES.iter().map(|n| n.to_string()).zip(self.params.iter().cloned()).collect()
    }

    pub fn from_named(named: Vec<NamedArray>) -> Result<Self> {
        let template = Self::new(&mut rand::SeedableRng::seed_from_u64(0));
        if named.len() != NAMES.len() {
            return Err(Error::Format(format!("expected {} tensors, got {}", NAMES.len(), named.len())));
        }
        let mut params = Vec::with_capacity(NAMES.len());
        for ((name, arr), (want, tmpl)) in named.into_iter().zip(NAMES.iter().zip(&template.params)) {
            if name != *want || arr.shape() != tmpl.shape() {
                return Err(Error::Format(format!(
                    "tensor {name} {:?} where {want} {:?} expected",
                    arr.shape(),
                    tmpl.shape()
                )));
            }
            params.push(arr);
        }
        Ok(Self { params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_weights(path, &self.named())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_named(load_weights(path)?)
    }
}

/// A trained actor run in deterministic (mean-action) mode.
#[derive(Clone, Debug)]
pub struct NetPolicy {
    pub net: PolicyNet,
    pub label: String,
}

impl NetPolicy {
    pub fn new(net: PolicyNet, label: impl Into<String>) -> Self {
        Self {
            net,
            label: label.into(),
        }
    }
}

struct NetController<'a> {
    spec: &'a GeneratorSpec,
    net: &'a PolicyNet,
}

impl Controller for NetController<'_> {
    fn decide(&mut self, s: &PoseState, target: &Image, loss: &PerceptualLoss) -> Result<Decision> {
        let current = self.spec.render(s);
        let l = loss.value(&current, target)?;
        let obs = Observation::new(current, target.clone())?;
        let action = self.net.mean_action(&encode_observation(&obs)?)?;
        Ok(Decision {
            action,
            current: obs.current,
            loss: l,
        })
    }
}

impl Policy for NetPolicy {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn controller<'a>(&'a self, spec: &'a GeneratorSpec) -> Box<dyn Controller + 'a> {
        Box::new(NetController { spec, net: &self.net })
    }
}
