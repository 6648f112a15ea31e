//! Gradient-descent policy: the Adam-preconditioned negative gradient of the
//! image loss with respect to the whole state.

use std::f64::consts::PI;

use super::{rollout, Action, Controller, Decision, EpisodeConfig, Policy};
use crate::autodiff::{AdamConfig, AdamState, Tape};
use crate::error::{Error, Result};
use crate::generator::{GeneratorSpec, Image, PerceptualLoss, PoseState, StateVars, LATENT_DIM};
use crate::geometry::EulerPose;

#[derive(Clone, Debug, PartialEq)]
pub struct GdConfig {
    pub lr: f64,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            steps: 50,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("gd lr must be > 0, got {}", self.lr)));
        }
        if self.steps == 0 {
            return Err(Error::Config("gd steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn new_state(&self) -> AdamState {
        AdamState::new(self.adam(), &[&[3], &[3], &[LATENT_DIM]])
    }
}

/// One GD decision at `s`; also returns the synthesis and its loss.
pub fn gd_policy_step(
    spec: &GeneratorSpec,
    s: &PoseState,
    target: &Image,
    loss: &PerceptualLoss,
    opt: &mut AdamState,
) -> Result<Decision> {
    let mut tape = Tape::new();
    let vars = StateVars::params(&mut tape, s);
    let img = spec.render_on_tape(&mut tape, &vars)?;
    let l = loss.on_tape(&mut tape, img, target)?;
    let value = tape.scalar(l);
    if !value.is_finite() {
        return Err(Error::NonFinite("gd loss"));
    }
    let mut g = tape.backward(l)?;
    let grads = [g.take(vars.theta), g.take(vars.t), g.take(vars.z)];
    let dir = opt.direction(&grads)?;
    let mut flat = Vec::with_capacity(super::STATE_DIM);
    for d in &dir {
        flat.extend_from_slice(d.data());
    }
    Ok(Decision {
        action: Action::from_slice(&flat)?,
        current: Image::from_array(tape.value(img))?,
        loss: value,
    })
}

/// Plain gradient descent; per-episode Adam moments start at zero.
#[derive(Clone, Debug, Default)]
pub struct GdPolicy {
    pub cfg: GdConfig,
}

impl GdPolicy {
    pub fn new(cfg: GdConfig) -> Self {
        Self { cfg }
    }
}

struct GdController<'a> {
    spec: &'a GeneratorSpec,
    opt: AdamState,
}

impl Controller for GdController<'_> {
    fn decide(&mut self, s: &PoseState, target: &Image, loss: &PerceptualLoss) -> Result<Decision> {
        gd_policy_step(self.spec, s, target, loss, &mut self.opt)
    }
}

impl Policy for GdPolicy {
    fn name(&self) -> String {
        "gd".into()
    }

    fn controller<'a>(&'a self, spec: &'a GeneratorSpec) -> Box<dyn Controller + 'a> {
        Box::new(GdController {
            spec,
            opt: self.cfg.new_state(),
        })
    }
}

/// Run GD from `n_starts` initial states (the mean pose with azimuth offsets
/// `2πk/n`) and keep the final state with the lowest loss.
pub fn multi_start_gd(
    spec: &GeneratorSpec,
    target: &Image,
    n_starts: usize,
    cfg: &GdConfig,
) -> Result<(PoseState, f64)> {
    multi_start_gd_from(spec, &spec.mean_pose(), target, n_starts, cfg)
}

/// [`multi_start_gd`] around an arbitrary base state.
pub fn multi_start_gd_from(
    spec: &GeneratorSpec,
    base: &PoseState,
    target: &Image,
    n_starts: usize,
    cfg: &GdConfig,
) -> Result<(PoseState, f64)> {
    if n_starts == 0 {
        return Err(Error::InvalidArgument("n_starts must be >= 1".into()));
    }
    let policy = GdPolicy::new(cfg.clone());
    let ep = EpisodeConfig::new(cfg.steps)?;
    let mut best: Option<(PoseState, f64)> = None;
    for k in 0..n_starts {
        let mut s0 = *base;
        let off = 2.0 * PI * k as f64 / n_starts as f64;
        s0.theta = EulerPose::new(base.theta.azimuth + off, base.theta.elevation, base.theta.inplane);
        let traj = rollout(&policy, spec, &s0, target, &ep)?;
        let l = *traj.losses.last().expect("non-empty");
        if best.as_ref().is_none_or(|b| l < b.1) {
            best = Some((*traj.final_state(), l));
        }
    }
    Ok(best.expect("n_starts >= 1"))
}
