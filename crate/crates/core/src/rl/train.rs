use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sac::{sac_update, sample_action, SacNets};
use super::{reward, to_f32, LossWeights, ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::eval::episode_error;
use crate::generator::{GeneratorSpec, Image};
use crate::policy::{
    apply_action, encode_observation, rollout, Action, EpisodeConfig, NetPolicy, Observation,
    PolicyNet, Trajectory,
};

#[derive(Clone, Debug, PartialEq)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub init_alpha: f64,
    pub target_entropy: f64,
    pub steps_per_episode: usize,
    pub episodes: usize,
    pub capacity: usize,
    pub relabel: bool,
    /// Rotation error above which an episode counts as failed, degrees.
    pub failure_deg: f64,
    pub expert_inject_every: usize,
    pub expert_inject_count: usize,
    pub updates_per_step: usize,
    /// Held-out evaluation cadence in episodes; 0 disables it.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub weights: LossWeights,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            tau: 0.005,
            batch: 256,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            init_alpha: 0.1,
            target_entropy: -22.0,
            steps_per_episode: 10,
            episodes: 20_000,
            capacity: 200_000,
            relabel: true,
            failure_deg: 30.0,
            expert_inject_every: 50,
            expert_inject_count: 64,
            updates_per_step: 1,
            eval_every: 500,
            eval_episodes: 20,
            weights: LossWeights::default(),
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sac: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch == 0 || self.steps_per_episode == 0 || self.capacity < self.batch {
            return bad("batch, steps and capacity must be positive with capacity >= batch");
        }
        if ![self.actor_lr, self.critic_lr, self.alpha_lr, self.init_alpha].iter().all(|&v| v > 0.0) {
            return bad("learning rates and init_alpha must be > 0");
        }
        self.weights.validate()
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub episode: usize,
    pub mean_reward: f64,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha: f64,
    pub eval_rot_err_median: Option<f64>,
}

fn features(current: &Image, target: &Image) -> Result<Vec<f64>> {
    encode_observation(&Observation::new(current.clone(), target.clone())?)
}

/// Rewrite a trajectory as if its final state had been the goal: the target
/// becomes the render of the final state and every reward is recomputed
/// from the stored states and actions.
pub fn hindsight_relabel(
    spec: &GeneratorSpec,
    traj: &Trajectory,
    weights: &LossWeights,
) -> Result<Vec<Transition>> {
    let t_len = traj.steps();
    if t_len == 0 {
        return Err(Error::InvalidArgument("relabeling needs at least one step".into()));
    }
    let goal = *traj.final_state();
    let target = spec.render(&goal);
    let images: Vec<Image> = if traj.images.len() == traj.states.len() {
        traj.images.clone()
    } else {
        traj.states.iter().map(|s| spec.render(s)).collect()
    };
    let feats: Vec<Arc<[f32]>> = images
        .iter()
        .map(|img| features(img, &target).map(|f| to_f32(&f)))
        .collect::<Result<_>>()?;
    Ok((0..t_len)
        .map(|t| Transition {
            obs: feats[t].clone(),
            action: traj.actions[t],
            reward: reward(&goal, &traj.states[t], &traj.actions[t], weights),
            next_obs: feats[t + 1].clone(),
            done: t + 1 == t_len,
            goal,
            state: traj.states[t],
        })
        .collect())
}

/// Push `n` one-step expert transitions: random state and goal, the clamped
/// residual as action.
pub fn inject_expert(
    buffer: &mut ReplayBuffer,
    spec: &GeneratorSpec,
    rng: &mut ChaCha8Rng,
    n: usize,
    weights: &LossWeights,
) -> Result<()> {
    for _ in 0..n {
        let s = spec.sample_state(rng);
        let goal = spec.sample_state(rng);
        let target = spec.render(&goal);
        let action = Action::residual(&goal, &s).clamped();
        let next = apply_action(&s, &action);
        buffer.push(Transition {
            obs: to_f32(&features(&spec.render(&s), &target)?),
            action,
            reward: reward(&goal, &s, &action, weights),
            next_obs: to_f32(&features(&spec.render(&next), &target)?),
            done: true,
            goal,
            state: s,
        });
    }
    Ok(())
}

/// Median final rotation error (degrees) of the deterministic actor on a
/// fixed held-out set.
fn held_out_median(spec: &GeneratorSpec, actor: &PolicyNet, cfg: &SacConfig, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00e7_a1u64);
    let policy = NetPolicy::new(actor.clone(), "rl");
    let ep = EpisodeConfig::new(cfg.steps_per_episode)?;
    let mut errs = Vec::with_capacity(cfg.eval_episodes);
    for _ in 0..cfg.eval_episodes {
        let goal = spec.sample_state(&mut rng);
        let traj = rollout(&policy, spec, &spec.mean_pose(), &spec.render(&goal), &ep)?;
        errs.push(episode_error(traj.final_state(), &goal, spec.symmetry_axis).0.to_degrees());
    }
    Ok(crate::eval::median(&errs))
}

/// Full SAC training loop. Every episode starts at the mean pose with a
/// freshly sampled goal; the actor explores stochastically.
pub fn train_rl(spec: &GeneratorSpec, cfg: &SacConfig, seed: u64) -> Result<(PolicyNet, Vec<LogRow>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nets = SacNets::new(&mut rng, cfg);
    let mut buffer = ReplayBuffer::new(cfg.capacity)?;
    let mut log = Vec::with_capacity(cfg.episodes);
    let t_len = cfg.steps_per_episode;
    for episode in 0..cfg.episodes {
        let goal = spec.sample_state(&mut rng);
        let target = spec.render(&goal);
        let mut s = spec.mean_pose();
        let mut img = spec.render(&s);
        let mut obs = to_f32(&features(&img, &target)?);
        let mut traj = Trajectory::start(s);
        traj.images.push(img.clone());
        let mut rewards = 0.0;
        let (mut closs, mut aloss, mut n_upd) = (0.0, 0.0, 0usize);
        for t in 0..t_len {
            let f64_obs: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
            let a = sample_action(&nets.actor, &f64_obs, &mut rng)?;
            let r = reward(&goal, &s, &a, &cfg.weights);
            let next = apply_action(&s, &a);
            img = spec.render(&next);
            let next_obs = to_f32(&features(&img, &target)?);
            buffer.push(Transition {
                obs: obs.clone(),
                action: a,
                reward: r,
                next_obs: next_obs.clone(),
                done: t + 1 == t_len,
                goal,
                state: s,
            });
            rewards += r;
            traj.actions.push(a);
            traj.states.push(next);
            traj.images.push(img.clone());
            s = next;
            obs = next_obs;
            if buffer.len() >= cfg.batch {
                for _ in 0..cfg.updates_per_step {
                    let d = sac_update(&mut nets, &buffer, cfg, &mut rng)?;
                    closs += d.critic_loss;
                    aloss += d.actor_loss;
                    n_upd += 1;
                }
            }
        }
        if cfg.relabel {
            let err = episode_error(&s, &goal, spec.symmetry_axis).0.to_degrees();
            if err > cfg.failure_deg {
                buffer.extend(hindsight_relabel(spec, &traj, &cfg.weights)?);
            }
        }
        if cfg.expert_inject_every > 0 && (episode + 1) % cfg.expert_inject_every == 0 {
            inject_expert(&mut buffer, spec, &mut rng, cfg.expert_inject_count, &cfg.weights)?;
        }
        let eval = if cfg.eval_every > 0 && (episode + 1) % cfg.eval_every == 0 {
            Some(held_out_median(spec, &nets.actor, cfg, seed)?)
        } else {
            None
        };
        let avg = |x: f64| (n_upd > 0).then(|| x / n_upd as f64);
        log.push(LogRow {
            episode,
            mean_reward: rewards / t_len as f64,
            critic_loss: avg(closs),
            actor_loss: avg(aloss),
            alpha: nets.alpha(),
            eval_rot_err_median: eval,
        });
    }
    Ok((nets.actor, log))
}

/// CSV with header `episode,mean_reward,critic_loss,actor_loss,alpha,eval_rot_err_median`;
/// missing values are empty fields.
pub fn write_training_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "mean_reward", "critic_loss", "actor_loss", "alpha", "eval_rot_err_median"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.episode.to_string(),
            r.mean_reward.to_string(),
            opt(r.critic_loss),
            opt(r.actor_loss),
            r.alpha.to_string(),
            opt(r.eval_rot_err_median),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
