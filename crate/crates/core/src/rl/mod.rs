//! Soft actor-critic training of the navigation policy with a goal-residual
//! reward, a FIFO replay buffer, hindsight relabeling and expert injection.

mod sac;
mod train;

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generator::PoseState;
use crate::geometry::{euler_to_quaternion, EulerPose};
use crate::policy::Action;

pub use sac::{sac_update, soft_update, td_targets, CriticNet, SacDiagnostics, SacNets, CRITIC_HIDDEN};
pub use train::{
    hindsight_relabel, inject_expert, train_rl, write_training_log, LogRow, SacConfig,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 5.0,
            lambda3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda3].iter().all(|&l| l > 0.0 && l.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be > 0: {self:?}")))
        }
    }
}

/// The three weighted squared residuals between an action and the wrapped
/// goal residual `(θ* − θ, t* − t, z* − z)`:
/// `λ₁‖q(res_θ) − q(Δθ)‖²`, `λ₂‖res_t − Δt‖²`, `λ₃‖res_z − Δz‖²`.
///
/// This is the single definition behind both the RL reward and the IL loss.
pub fn objective_terms(residual: &Action, a: &Action, w: &LossWeights) -> [f64; 3] {
    let q_res = euler_to_quaternion(EulerPose::from_array(residual.dtheta));
    let q_act = euler_to_quaternion(EulerPose::from_array(a.dtheta));
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    [
        w.lambda1 * q_res.dist_sq(q_act),
        w.lambda2 * sq(&residual.dt, &a.dt),
        w.lambda3 * sq(&residual.dz, &a.dz),
    ]
}

/// `r = −λ₁‖q(θ*−θ) − q(Δθ)‖² − λ₂‖(t*−t) − Δt‖² − λ₃‖(z*−z) − Δz‖²`.
pub fn reward(goal: &PoseState, s: &PoseState, a: &Action, w: &LossWeights) -> f64 {
    let t = objective_terms(&Action::residual(goal, s), a, w);
    -(t[0] + t[1] + t[2])
}

/// One replay record. Features are stored in single precision and shared
/// between consecutive steps of an episode.
#[derive(Clone, Debug)]
pub struct Transition {
    pub obs: Arc<[f32]>,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Arc<[f32]>,
    pub done: bool,
    pub goal: PoseState,
    pub state: PoseState,
}

pub fn to_f32(v: &[f64]) -> Arc<[f32]> {
    v.iter().map(|&x| x as f32).collect()
}

/// Fixed-capacity ring; the oldest record is overwritten first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        for t in ts {
            self.push(t);
        }
    }

    /// Records from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform sample with replacement.
    pub fn sample<'a>(&'a self, rng: &mut ChaCha8Rng, batch: usize) -> Result<Vec<&'a Transition>> {
        if self.items.len() < batch || batch == 0 {
            return Err(Error::InsufficientBuffer {
                have: self.items.len(),
                need: batch.max(1),
            });
        }
        Ok((0..batch).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }
}
