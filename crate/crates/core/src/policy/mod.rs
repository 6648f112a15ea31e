//! Navigation loop: policies observe `(current synthesis, target)` and emit
//! additive state updates `s_{t+1} = s_t + a_t`.

mod gd;
mod net;

use crate::error::{Error, Result};
use crate::generator::{
    GeneratorSpec, Image, LatentCode, PerceptualLoss, PoseState, LATENT_DIM, STATE_DIM,
};
use crate::geometry::{EulerPose, Translation};

pub use gd::{gd_policy_step, multi_start_gd, multi_start_gd_from, GdConfig, GdPolicy};
pub(crate) use net::dense;
pub use net::{
    encode_observation, quaternion_rows, NetPolicy, PolicyNet, FEATURE_DIM, HIDDEN, LOG_STD_MAX,
    LOG_STD_MIN, POOLED,
};

/// Squashing bounds of learned actions.
pub const THETA_BOUND: f64 = std::f64::consts::PI;
pub const T_BOUND: f64 = 0.5;
pub const Z_BOUND: f64 = 2.0;

/// Additive update of a pose state. Learned policies stay within
/// [`Action::bounds`]; gradient descent does not.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action {
    pub dtheta: [f64; 3],
    pub dt: [f64; 3],
    pub dz: [f64; LATENT_DIM],
}

impl Action {
    pub fn zero() -> Self {
        Self {
            dtheta: [0.0; 3],
            dt: [0.0; 3],
            dz: [0.0; LATENT_DIM],
        }
    }

    /// Per-coordinate bound, in state order.
    pub fn bounds() -> [f64; STATE_DIM] {
        let mut b = [Z_BOUND; STATE_DIM];
        b[..3].fill(THETA_BOUND);
        b[3..6].fill(T_BOUND);
        b
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != STATE_DIM {
            return Err(Error::shape("Action", format!("{} values", v.len())));
        }
        let mut a = Self::zero();
        a.dtheta.copy_from_slice(&v[..3]);
        a.dt.copy_from_slice(&v[3..6]);
        a.dz.copy_from_slice(&v[6..]);
        Ok(a)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(STATE_DIM);
        v.extend_from_slice(&self.dtheta);
        v.extend_from_slice(&self.dt);
        v.extend_from_slice(&self.dz);
        v
    }

    pub fn clamped(&self) -> Self {
        let b = Self::bounds();
        let v: Vec<f64> = self.to_vec().iter().zip(b).map(|(x, b)| x.clamp(-b, b)).collect();
        Self::from_slice(&v).expect("state-sized")
    }

    pub fn within_bounds(&self) -> bool {
        self.to_vec().iter().zip(Self::bounds()).all(|(x, b)| x.abs() <= b)
    }

    pub fn neg(&self) -> Self {
        self.map(|x| -x)
    }

    pub fn add(&self, other: &Action) -> Self {
        let v: Vec<f64> = self.to_vec().iter().zip(other.to_vec()).map(|(a, b)| a + b).collect();
        Self::from_slice(&v).expect("state-sized")
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let v: Vec<f64> = self.to_vec().into_iter().map(f).collect();
        Self::from_slice(&v).expect("state-sized")
    }

    pub fn norm(&self) -> f64 {
        self.to_vec().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// The wrapped residual `goal − s` (angles wrapped, nothing clamped).
    pub fn residual(goal: &PoseState, s: &PoseState) -> Self {
        let d = goal.theta.wrapped_sub(s.theta);
        let mut a = Self::zero();
        a.dtheta = d.to_array();
        a.dt = [goal.t.tx - s.t.tx, goal.t.ty - s.t.ty, goal.t.scale - s.t.scale];
        for k in 0..LATENT_DIM {
            a.dz[k] = goal.z.0[k] - s.z.0[k];
        }
        a
    }
}

/// Linear transition: angles re-wrapped, translation and latent re-clamped.
pub fn apply_action(s: &PoseState, a: &Action) -> PoseState {
    let th = s.theta.to_array();
    let t = s.t.to_array();
    let mut z = s.z.0;
    for (zi, d) in z.iter_mut().zip(&a.dz) {
        *zi += d;
    }
    PoseState {
        theta: EulerPose::new(th[0] + a.dtheta[0], th[1] + a.dtheta[1], th[2] + a.dtheta[2]),
        t: Translation::new(t[0] + a.dt[0], t[1] + a.dt[1], t[2] + a.dt[2]),
        z: LatentCode::new(z),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub current: Image,
    pub target: Image,
}

impl Observation {
    pub fn new(current: Image, target: Image) -> Result<Self> {
        if !current.same_dims(&target) {
            return Err(Error::shape(
                "Observation",
                format!(
                    "{}x{} vs {}x{}",
                    current.width(),
                    current.height(),
                    target.width(),
                    target.height()
                ),
            ));
        }
        Ok(Self { current, target })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeConfig {
    pub steps: usize,
    pub record_trajectory: bool,
}

impl EpisodeConfig {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("episode needs at least one step".into()));
        }
        Ok(Self {
            steps,
            record_trajectory: false,
        })
    }

    pub fn recording(mut self) -> Self {
        self.record_trajectory = true;
        self
    }
}

/// What a policy returns for one step. `current` is the synthesis the
/// decision was based on and `loss` its image loss against the target.
pub struct Decision {
    pub action: Action,
    pub current: Image,
    pub loss: f64,
}

/// Per-episode controller; may carry state such as optimizer moments.
pub trait Controller {
    fn decide(&mut self, s: &PoseState, target: &Image, loss: &PerceptualLoss) -> Result<Decision>;
}

/// A navigation policy. Evaluation-time policies are deterministic.
pub trait Policy: Sync {
    fn name(&self) -> String;
    fn controller<'a>(&'a self, spec: &'a GeneratorSpec) -> Box<dyn Controller + 'a>;
}

/// Always returns the zero action.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn name(&self) -> String {
        "zero".into()
    }

    fn controller<'a>(&'a self, spec: &'a GeneratorSpec) -> Box<dyn Controller + 'a> {
        Box::new(ZeroController { spec })
    }
}

struct ZeroController<'a> {
    spec: &'a GeneratorSpec,
}

impl Controller for ZeroController<'_> {
    fn decide(&mut self, s: &PoseState, target: &Image, loss: &PerceptualLoss) -> Result<Decision> {
        let current = self.spec.render(s);
        let l = loss.value(&current, target)?;
        Ok(Decision {
            action: Action::zero(),
            current,
            loss: l,
        })
    }
}

/// States `s_0..s_T`, actions `a_0..a_{T-1}`, the loss of every state and,
/// when recorded, every synthesized image.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<PoseState>,
    pub actions: Vec<Action>,
    pub losses: Vec<f64>,
    pub images: Vec<Image>,
}

impl Trajectory {
    pub fn start(s0: PoseState) -> Self {
        Self {
            states: vec![s0],
            actions: Vec::new(),
            losses: Vec::new(),
            images: Vec::new(),
        }
    }

    pub fn final_state(&self) -> &PoseState {
        self.states.last().expect("trajectory has an initial state")
    }

    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    /// Append `other`, whose first state must be this trajectory's last.
    pub fn extend(&mut self, other: Trajectory) {
        let keep_images = !self.images.is_empty() && !other.images.is_empty();
        self.states.extend(other.states.into_iter().skip(1));
        self.actions.extend(other.actions);
        self.losses.pop();
        self.losses.extend(other.losses);
        if keep_images {
            self.images.pop();
            self.images.extend(other.images);
        } else {
            self.images.clear();
        }
    }
}

/// Run `policy` for `cfg.steps` steps from `s0` toward `target`.
pub fn rollout(
    policy: &dyn Policy,
    spec: &GeneratorSpec,
    s0: &PoseState,
    target: &Image,
    cfg: &EpisodeConfig,
) -> Result<Trajectory> {
    let loss = PerceptualLoss::for_image(target)?;
    let mut ctl = policy.controller(spec);
    let mut traj = Trajectory::start(*s0);
    let mut s = *s0;
    for _ in 0..cfg.steps {
        let d = ctl.decide(&s, target, &loss)?;
        if !d.loss.is_finite() {
            return Err(Error::NonFinite("rollout loss"));
        }
        traj.losses.push(d.loss);
        if cfg.record_trajectory {
            traj.images.push(d.current);
        }
        s = apply_action(&s, &d.action);
        traj.actions.push(d.action);
        traj.states.push(s);
    }
    let last = spec.render(&s);
    traj.losses.push(loss.value(&last, target)?);
    if cfg.record_trajectory {
        traj.images.push(last);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests;
