//! Behavior cloning, DAgger and the learned-then-GD hybrid.
//!
//! Expert labels are wrapped goal residuals clamped to the action bounds, so
//! for far goals the expert shows the largest legal step toward the goal.
//! Demonstrations and DAgger rollouts start from the mean pose unless
//! `random_starts` is set, in which case the start is a sampled state.

mod demos;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamConfig, AdamState, Array, Tape, Var};
use crate::error::{Error, Result};
use crate::generator::{GeneratorSpec, Image, LatentCode, PerceptualLoss, PoseState};
use crate::geometry::{euler_to_quaternion, EulerPose};
use crate::policy::{
    apply_action, encode_observation, quaternion_rows, rollout, Action, EpisodeConfig, GdConfig,
    GdPolicy, Observation, Policy, PolicyNet, Trajectory, FEATURE_DIM,
};
use crate::rl::{objective_terms, LossWeights};

pub use demos::{read_demo_set, write_demo_set, DemoSet};

#[derive(Clone, Debug, PartialEq)]
pub struct IlConfig {
    pub weights: LossWeights,
    /// Size of the initial demonstration set.
    pub demos: usize,
    pub epochs: usize,
    /// Epochs per DAgger round after the initial fit.
    pub round_epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub dagger_rounds: usize,
    pub rollouts_per_round: usize,
    /// Steps per DAgger collection rollout.
    pub rollout_steps: usize,
    /// Evaluation steps: 1 (single-step) or T (multi-step).
    pub inference_steps: usize,
    pub use_latent_loss: bool,
    /// Re-initialize the network before each DAgger round instead of
    /// fine-tuning it.
    pub from_scratch: bool,
    /// Draw demonstration and rollout starts from `sample_state` (with
    /// `z = 0` for rollouts) instead of the mean pose.
    pub random_starts: bool,
}

impl Default for IlConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            demos: 50_000,
            epochs: 20,
            round_epochs: 5,
            batch: 256,
            lr: 1e-3,
            dagger_rounds: 5,
            rollouts_per_round: 200,
            rollout_steps: 10,
            inference_steps: 1,
            use_latent_loss: true,
            from_scratch: false,
            random_starts: false,
        }
    }
}

impl IlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.demos == 0 || self.batch == 0 || self.rollout_steps == 0 || self.inference_steps == 0 {
            return Err(Error::Config("il: demos, batch and step counts must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("il: lr must be > 0, got {}", self.lr)));
        }
        self.weights.validate()
    }
}

/// `λ₁‖q(res_θ) − q(Δθ)‖² + λ₂‖res_t − Δt‖² + λ₃‖res_z − Δz‖²`, the last
/// term dropped when `use_latent` is off. Equals the negated RL reward.
pub fn il_loss(pred: &Action, residual: &Action, w: &LossWeights, use_latent: bool) -> f64 {
    let t = objective_terms(residual, pred, w);
    t[0] + t[1] + if use_latent { t[2] } else { 0.0 }
}

/// Canonical-sign multipliers (`w ≥ 0`, else first nonzero positive) for
/// quaternion rows.
fn sign_rows(q: &[f64]) -> Vec<f64> {
    q.chunks(4)
        .flat_map(|r| {
            let first = r.iter().copied().find(|v| *v != 0.0).unwrap_or(0.0);
            let s = if first < 0.0 { -1.0 } else { 1.0 };
            [s; 4]
        })
        .collect()
}

/// Batched [`il_loss`] of the actor's mean action, averaged over rows.
pub fn il_loss_on_tape(
    tape: &mut Tape,
    actor: &[Var],
    x: Var,
    labels: &[Action],
    w: &LossWeights,
    use_latent: bool,
) -> Result<Var> {
    let b = labels.len();
    let (u, _) = PolicyNet::forward(tape, actor, x)?;
    let a = PolicyNet::squash(tape, u)?;

    let th = tape.slice(a, 1, 0, 3)?;
    let q = quaternion_rows(tape, th)?;
    let signs = tape.constant(Array::new(vec![b, 4], sign_rows(tape.value(q).data()))?);
    let q = tape.mul(q, signs)?;
    let q_tgt: Vec<f64> = labels
        .iter()
        .flat_map(|l| euler_to_quaternion(EulerPose::from_array(l.dtheta)).to_array())
        .collect();
    let q_tgt = tape.constant(Array::new(vec![b, 4], q_tgt)?);
    let mut total = weighted_sq(tape, q, q_tgt, w.lambda1)?;

    let t = tape.slice(a, 1, 3, 6)?;
    let t_tgt = tape.constant(Array::new(vec![b, 3], labels.iter().flat_map(|l| l.dt).collect())?);
    let tt = weighted_sq(tape, t, t_tgt, w.lambda2)?;
    total = tape.add(total, tt)?;

    if use_latent {
        let z = tape.slice(a, 1, 6, 22)?;
        let z_tgt = tape.constant(Array::new(vec![b, 16], labels.iter().flat_map(|l| l.dz).collect())?);
        let zz = weighted_sq(tape, z, z_tgt, w.lambda3)?;
        total = tape.add(total, zz)?;
    }
    tape.scale(total, 1.0 / b as f64)
}

fn weighted_sq(tape: &mut Tape, a: Var, b: Var, w: f64) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let d2 = tape.square(d)?;
    let s = tape.sum(d2)?;
    tape.scale(s, w)
}

fn features(current: &Image, target: &Image) -> Result<Vec<f64>> {
    encode_observation(&Observation::new(current.clone(), target.clone())?)
}

/// `n` demonstrations from the mean pose toward sampled goals.
pub fn make_bc_dataset(spec: &GeneratorSpec, rng: &mut ChaCha8Rng, n: usize) -> Result<DemoSet> {
    make_demos(spec, rng, n, false)
}

/// `n` demonstrations toward sampled goals; starts are sampled states when
/// `random_starts` is set and the mean pose otherwise.
pub fn make_demos(spec: &GeneratorSpec, rng: &mut ChaCha8Rng, n: usize, random_starts: bool) -> Result<DemoSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("demo set size must be >= 1".into()));
    }
    let mut set = DemoSet::new();
    for _ in 0..n {
        let s = if random_starts { spec.sample_state(rng) } else { spec.mean_pose() };
        let goal = spec.sample_state(rng);
        let f = features(&spec.render(&s), &spec.render(&goal))?;
        set.push(&f, Action::residual(&goal, &s).clamped())?;
    }
    Ok(set)
}

/// Minimize the batched IL loss over `data` for `cfg.epochs` epochs with a
/// fresh Adam state. Returns the mean loss of the last epoch.
pub fn fit(net: &mut PolicyNet, data: &DemoSet, cfg: &IlConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut opt = AdamState::for_params(AdamConfig::with_lr(cfg.lr), &net.params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut last = f64::NAN;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let mut x = Vec::with_capacity(chunk.len() * FEATURE_DIM);
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                x.extend(data.features(i).iter().map(|&v| v as f64));
                labels.push(data.actions()[i]);
            }
            let mut tape = Tape::new();
            let leaves = net.leaves(&mut tape);
            let xv = tape.constant(Array::new(vec![chunk.len(), FEATURE_DIM], x)?);
            let loss = il_loss_on_tape(&mut tape, &leaves, xv, &labels, &cfg.weights, cfg.use_latent_loss)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite("il loss"));
            }
            let mut g = tape.backward(loss)?;
            let grads: Vec<Array> = leaves.iter().map(|&v| g.take(v)).collect();
            opt.step(&mut net.params, &grads)?;
            sum += value * chunk.len() as f64;
            count += chunk.len();
        }
        last = sum / count.max(1) as f64;
    }
    Ok(last)
}

/// Behavior cloning on a fresh demonstration set; deterministic per seed.
pub fn train_bc(spec: &GeneratorSpec, cfg: &IlConfig, seed: u64) -> Result<PolicyNet> {
    let bc = IlConfig {
        dagger_rounds: 0,
        ..cfg.clone()
    };
    Ok(train_il(spec, &bc, seed)?.net)
}

/// Training summary after the initial fit (round 0) and each DAgger round.
#[derive(Clone, Debug, PartialEq)]
pub struct IlLogRow {
    pub round: usize,
    pub demos: usize,
    pub loss: f64,
}

pub fn write_il_log(path: &std::path::Path, rows: &[IlLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["round", "demos", "loss"])?;
    for r in rows {
        w.write_record([r.round.to_string(), r.demos.to_string(), r.loss.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct IlOutcome {
    pub net: PolicyNet,
    pub data: DemoSet,
    pub log: Vec<IlLogRow>,
}

const DAGGER_STREAM: u64 = 0xda99_e700;

fn collection_start(spec: &GeneratorSpec, rng: &mut ChaCha8Rng, random: bool) -> PoseState {
    if !random {
        return spec.mean_pose();
    }
    let mut s = spec.sample_state(rng);
    s.z = LatentCode::zero();
    s
}

/// Append the states visited by the current actor, labelled with the
/// simulator's expert residual.
pub fn collect_on_policy(
    spec: &GeneratorSpec,
    net: &PolicyNet,
    data: &mut DemoSet,
    rng: &mut ChaCha8Rng,
    rollouts: usize,
    steps: usize,
    random_starts: bool,
) -> Result<()> {
    for _ in 0..rollouts {
        let goal = spec.sample_state(rng);
        let target = spec.render(&goal);
        let mut s = collection_start(spec, rng, random_starts);
        for _ in 0..steps {
            let f = features(&spec.render(&s), &target)?;
            data.push(&f, Action::residual(&goal, &s).clamped())?;
            let a = net.mean_action(&f)?;
            s = apply_action(&s, &a);
        }
    }
    Ok(())
}

/// DAgger: BC on the initial set, then `dagger_rounds` rounds of on-policy
/// collection and retraining on the aggregate. Returns the final network
/// and the aggregated demonstrations.
pub fn train_dagger(spec: &GeneratorSpec, cfg: &IlConfig, seed: u64) -> Result<(PolicyNet, DemoSet)> {
    let out = train_il(spec, cfg, seed)?;
    Ok((out.net, out.data))
}

/// BC followed by `cfg.dagger_rounds` DAgger rounds (none for plain BC).
pub fn train_il(spec: &GeneratorSpec, cfg: &IlConfig, seed: u64) -> Result<IlOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = PolicyNet::new(&mut rng);
    let mut data = make_demos(spec, &mut rng, cfg.demos, cfg.random_starts)?;
    let loss = fit(&mut net, &data, cfg, &mut rng)?;
    let mut log = vec![IlLogRow {
        round: 0,
        demos: data.len(),
        loss,
    }];
    let mut roll_rng = ChaCha8Rng::seed_from_u64(seed ^ DAGGER_STREAM);
    for round in 1..=cfg.dagger_rounds {
        collect_on_policy(
            spec,
            &net,
            &mut data,
            &mut roll_rng,
            cfg.rollouts_per_round,
            cfg.rollout_steps,
            cfg.random_starts,
        )?;
        if cfg.from_scratch {
            net = PolicyNet::new(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        let round_cfg = IlConfig {
            epochs: if cfg.from_scratch { cfg.epochs } else { cfg.round_epochs },
            ..cfg.clone()
        };
        let loss = fit(&mut net, &data, &round_cfg, &mut rng)?;
        log.push(IlLogRow {
            round,
            demos: data.len(),
            loss,
        });
    }
    Ok(IlOutcome { net, data, log })
}

/// Run `policy` for `il_steps` steps, then gradient descent for `gd_steps`
/// steps from the reached state.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_rollout(
    policy: &dyn Policy,
    spec: &GeneratorSpec,
    s0: &PoseState,
    target: &Image,
    il_steps: usize,
    gd_steps: usize,
    gd_cfg: &GdConfig,
) -> Result<Trajectory> {
    let gd = GdPolicy::new(gd_cfg.clone());
    match (il_steps, gd_steps) {
        (0, 0) => {
            let mut t = Trajectory::start(*s0);
            t.losses.push(PerceptualLoss::for_image(target)?.value(&spec.render(s0), target)?);
            Ok(t)
        }
        (n, 0) => rollout(policy, spec, s0, target, &EpisodeConfig::new(n)?),
        (0, m) => rollout(&gd, spec, s0, target, &EpisodeConfig::new(m)?),
        (n, m) => {
            let mut t = rollout(policy, spec, s0, target, &EpisodeConfig::new(n)?)?;
            let tail = rollout(&gd, spec, t.final_state(), target, &EpisodeConfig::new(m)?)?;
            t.extend(tail);
            Ok(t)
        }
    }
}
