//! Twin-critic soft actor-critic with a tanh-squashed Gaussian actor.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ReplayBuffer, SacConfig, Transition};
use crate::autodiff::{AdamConfig, AdamState, Array, Tape, Var};
use crate::error::{Error, Result};
use crate::generator::STATE_DIM;
use crate::policy::{dense, Action, PolicyNet, FEATURE_DIM};

pub const CRITIC_HIDDEN: usize = 128;
const CRITIC_IN: usize = FEATURE_DIM + STATE_DIM;
const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Twin Q networks over `features ⊕ action / bounds` with target copies.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNet {
    pub q1: Vec<Array>,
    pub q2: Vec<Array>,
    pub target1: Vec<Array>,
    pub target2: Vec<Array>,
}

fn q_params(rng: &mut ChaCha8Rng) -> Vec<Array> {
    let (w1, b1) = dense(rng, CRITIC_IN, CRITIC_HIDDEN, 1.0);
    let (w2, b2) = dense(rng, CRITIC_HIDDEN, CRITIC_HIDDEN, 1.0);
    let (w3, b3) = dense(rng, CRITIC_HIDDEN, 1, 1.0);
    vec![w1, b1, w2, b2, w3, b3]
}

impl CriticNet {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let q1 = q_params(rng);
        let q2 = q_params(rng);
        Self {
            target1: q1.clone(),
            target2: q2.clone(),
            q1,
            q2,
        }
    }

    /// `Q(x)` for a `[B, 790]` input, returning `[B, 1]`.
    pub fn q_forward(tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let h = tape.matmul(x, p[0])?;
        let h = tape.add(h, p[1])?;
        let h = tape.relu(h)?;
        let h = tape.matmul(h, p[2])?;
        let h = tape.add(h, p[3])?;
        let h = tape.relu(h)?;
        let q = tape.matmul(h, p[4])?;
        tape.add(q, p[5])
    }
}

/// `target ← tau · online + (1 − tau) · target`.
pub fn soft_update(target: &mut [Array], online: &[Array], tau: f64) {
    for (t, o) in target.iter_mut().zip(online) {
        if tau == 1.0 {
            t.data_mut().copy_from_slice(o.data());
        } else {
            for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
                *tv = tau * ov + (1.0 - tau) * *tv;
            }
        }
    }
}

/// Actor, critics, temperature and their optimizer states.
#[derive(Clone, Debug)]
pub struct SacNets {
    pub actor: PolicyNet,
    pub critic: CriticNet,
    pub log_alpha: f64,
    actor_opt: AdamState,
    critic_opt: AdamState,
    alpha_opt: AdamState,
}

impl SacNets {
    pub fn new(rng: &mut ChaCha8Rng, cfg: &SacConfig) -> Self {
        let actor = PolicyNet::new(rng);
        let critic = CriticNet::new(rng);
        let critic_params: Vec<Array> = critic.q1.iter().chain(&critic.q2).cloned().collect();
        Self {
            actor_opt: AdamState::for_params(AdamConfig::with_lr(cfg.actor_lr), &actor.params),
            critic_opt: AdamState::for_params(AdamConfig::with_lr(cfg.critic_lr), &critic_params),
            alpha_opt: AdamState::new(AdamConfig::with_lr(cfg.alpha_lr), &[&[1]]),
            log_alpha: cfg.init_alpha.ln(),
            actor,
            critic,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SacDiagnostics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng, n: usize) -> Array {
    Array::from_vec((0..n).map(|_| StandardNormal.sample(rng)).collect())
}

/// Reparameterized sample `a = tanh(μ + σ ε) · bounds` and its log-density,
/// returned as `([B, 22], [B, 1])`.
pub(crate) fn sample_on_tape(tape: &mut Tape, actor: &[Var], x: Var, eps: Array) -> Result<(Var, Var)> {
    let b = tape.shape(x)[0];
    let (mu, log_std) = PolicyNet::forward(tape, actor, x)?;
    let eps = tape.constant(eps.reshaped(vec![b, STATE_DIM])?);
    let std = tape.exp(log_std)?;
    let noise = tape.mul(std, eps)?;
    let u = tape.add(mu, noise)?;
    let a = PolicyNet::squash(tape, u)?;
    // log N(ε) − log σ − log(1 − tanh²u) − log bound, per coordinate
    let e2 = tape.square(eps)?;
    let gauss = tape.scale(e2, -0.5)?;
    let gauss = tape.sub(gauss, log_std)?;
    let two_u = tape.scale(u, 2.0)?;
    let ls = tape.log_sigmoid(two_u)?;
    let jac = tape.sub(ls, u)?;
    let jac = tape.add_scalar(jac, std::f64::consts::LN_2)?;
    let jac = tape.scale(jac, 2.0)?;
    let per = tape.sub(gauss, jac)?;
    let log_bounds: f64 = Action::bounds().iter().map(|b| b.ln()).sum();
    let logp = tape.sum_axis(per, 1)?;
    let logp = tape.add_scalar(logp, -(0.5 * LOG_2PI * STATE_DIM as f64 + log_bounds))?;
    Ok((a, logp))
}

pub(crate) fn features_batch(rows: &[&[f32]]) -> Result<Array> {
    let mut data = Vec::with_capacity(rows.len() * FEATURE_DIM);
    for r in rows {
        data.extend(r.iter().map(|&v| v as f64));
    }
    Array::new(vec![rows.len(), FEATURE_DIM], data)
}

fn critic_input(tape: &mut Tape, x: Var, a: Var) -> Result<Var> {
    let inv: Vec<f64> = Action::bounds().iter().map(|b| 1.0 / b).collect();
    let inv = tape.constant(Array::from_vec(inv));
    let an = tape.mul(a, inv)?;
    tape.concat(&[x, an], 1)
}

fn constants(tape: &mut Tape, ps: &[Array]) -> Vec<Var> {
    ps.iter().map(|p| tape.constant(p.clone())).collect()
}

/// Critic regression targets `r + γ(1 − done)(min Q̄(s', a') − α log π(a'|s'))`
/// with `a'` drawn from the current actor.
pub fn td_targets(nets: &SacNets, batch: &[&Transition], gamma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let b = batch.len();
    let next = features_batch(&batch.iter().map(|t| &t.next_obs[..]).collect::<Vec<_>>())?;
    let alpha = nets.alpha();
    let mut tape = Tape::new();
    let ap = constants(&mut tape, &nets.actor.params);
    let t1 = constants(&mut tape, &nets.critic.target1);
    let t2 = constants(&mut tape, &nets.critic.target2);
    let x = tape.constant(next);
    let (a, logp) = sample_on_tape(&mut tape, &ap, x, standard_normal(rng, b * STATE_DIM))?;
    let xin = critic_input(&mut tape, x, a)?;
    let q1 = CriticNet::q_forward(&mut tape, &t1, xin)?;
    let q2 = CriticNet::q_forward(&mut tape, &t2, xin)?;
    let (q1, q2, lp) = (tape.value(q1).data(), tape.value(q2).data(), tape.value(logp).data());
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mask = if t.done { 0.0 } else { 1.0 };
            t.reward + gamma * mask * (q1[i].min(q2[i]) - alpha * lp[i])
        })
        .collect())
}

/// One SAC step on a uniformly sampled batch: twin critics, actor,
/// temperature, then a soft target update.
pub fn sac_update(
    nets: &mut SacNets,
    buffer: &ReplayBuffer,
    cfg: &SacConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SacDiagnostics> {
    let batch: Vec<&Transition> = buffer.sample(rng, cfg.batch)?;
    let b = batch.len();
    let obs = features_batch(&batch.iter().map(|t| &t.obs[..]).collect::<Vec<_>>())?;
    let acts: Vec<f64> = batch.iter().flat_map(|t| t.action.to_vec()).collect();
    let alpha = nets.alpha();
    let y = td_targets(nets, &batch, cfg.gamma, rng)?;

    // critics
    let critic_loss = {
        let mut tape = Tape::new();
        let p1: Vec<Var> = nets.critic.q1.iter().map(|p| tape.param(p.clone())).collect();
        let p2: Vec<Var> = nets.critic.q2.iter().map(|p| tape.param(p.clone())).collect();
        let x = tape.constant(obs.clone());
        let a = tape.constant(Array::new(vec![b, STATE_DIM], acts)?);
        let xin = critic_input(&mut tape, x, a)?;
        let yv = tape.constant(Array::new(vec![b, 1], y)?);
        let mut total = None;
        for p in [&p1, &p2] {
            let q = CriticNet::q_forward(&mut tape, p, xin)?;
            let d = tape.sub(q, yv)?;
            let d2 = tape.square(d)?;
            let m = tape.mean(d2)?;
            total = Some(match total {
                None => m,
                Some(t) => tape.add(t, m)?,
            });
        }
        let loss = total.expect("two critics");
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite("critic loss"));
        }
        let mut g = tape.backward(loss)?;
        let grads: Vec<Array> = p1.iter().chain(&p2).map(|&v| g.take(v)).collect();
        let mut params: Vec<Array> = nets.critic.q1.drain(..).chain(nets.critic.q2.drain(..)).collect();
        nets.critic_opt.step(&mut params, &grads)?;
        nets.critic.q2 = params.split_off(params.len() / 2);
        nets.critic.q1 = params;
        value
    };

    // actor
    let (actor_loss, mean_logp) = {
        let mut tape = Tape::new();
        let ap: Vec<Var> = nets.actor.leaves(&mut tape);
        let c1 = constants(&mut tape, &nets.critic.q1);
        let c2 = constants(&mut tape, &nets.critic.q2);
        let x = tape.constant(obs);
        let (a, logp) = sample_on_tape(&mut tape, &ap, x, standard_normal(rng, b * STATE_DIM))?;
        let xin = critic_input(&mut tape, x, a)?;
        let q1 = CriticNet::q_forward(&mut tape, &c1, xin)?;
        let q2 = CriticNet::q_forward(&mut tape, &c2, xin)?;
        let mask: Vec<f64> = tape
            .value(q1)
            .data()
            .iter()
            .zip(tape.value(q2).data())
            .map(|(a, b)| if a <= b { 1.0 } else { 0.0 })
            .collect();
        let m = tape.constant(Array::new(vec![b, 1], mask.clone())?);
        let inv = tape.constant(Array::new(vec![b, 1], mask.iter().map(|v| 1.0 - v).collect())?);
        let q1m = tape.mul(q1, m)?;
        let q2m = tape.mul(q2, inv)?;
        let qmin = tape.add(q1m, q2m)?;
        let ent = tape.scale(logp, alpha)?;
        let obj = tape.sub(ent, qmin)?;
        let loss = tape.mean(obj)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite("actor loss"));
        }
        let mean_logp = tape.value(logp).data().iter().sum::<f64>() / b as f64;
        let mut g = tape.backward(loss)?;
        let grads: Vec<Array> = ap.iter().map(|&v| g.take(v)).collect();
        nets.actor_opt.step(&mut nets.actor.params, &grads)?;
        (value, mean_logp)
    };

    // temperature: J(α) = −log α · (log π + H̄)
    let g_alpha = -(mean_logp + cfg.target_entropy);
    let mut la = [Array::from_slice(&[nets.log_alpha])];
    nets.alpha_opt.step(&mut la, &[Array::from_slice(&[g_alpha])])?;
    nets.log_alpha = la[0].data()[0];

    soft_update(&mut nets.critic.target1, &nets.critic.q1, cfg.tau);
    soft_update(&mut nets.critic.target2, &nets.critic.q2, cfg.tau);

    Ok(SacDiagnostics {
        critic_loss,
        actor_loss,
        alpha: nets.alpha(),
    })
}

/// Exploration action for one feature vector.
pub(crate) fn sample_action(actor: &PolicyNet, features: &[f64], rng: &mut ChaCha8Rng) -> Result<Action> {
    let mut tape = Tape::new();
    let ap = constants(&mut tape, &actor.params);
    let x = tape.constant(Array::new(vec![1, FEATURE_DIM], features.to_vec())?);
    let (a, _) = sample_on_tape(&mut tape, &ap, x, standard_normal(rng, STATE_DIM))?;
    Action::from_slice(tape.value(a).data())
}
