//! Soft Actor-Critic on top of the query encoder.
//!
//! Twin critics are regressed onto
//! `y = r + γ (1 - d) [min_i Q*_i(z', a') - α log π(a'|z')]`, where `Q*` are
//! EMA copies of the critics and `a'` is drawn fresh from the current actor.
//! The actor minimizes `α log π(a|z) - min_i Q_i(z, a)` on detached latents,
//! so only the critic (and the contrastive objective) shape the encoder.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Adam, AdamConfig, BoundParams, ParameterSet, Real, Tape, Tensor, Var};
use crate::encoders::EncoderNet;
use crate::error::{Error, Result};
use crate::nn::Mlp;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
/// Keeps `ln(1 - tanh²)` finite when the squashed action saturates.
const SQUASH_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SacConfig {
    pub hidden_dim: usize,
    pub discount: f64,
    pub critic_tau: f64,
    /// Actor, entropy and target-critic updates happen every this many
    /// critic updates.
    pub target_update_every: u64,
    pub init_alpha: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub alpha_beta1: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden_dim: 256,
            discount: 0.99,
            critic_tau: 0.01,
            target_update_every: 2,
            init_alpha: 0.1,
            log_std_min: -10.0,
            log_std_max: 2.0,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            alpha_lr: 1e-3,
            alpha_beta1: 0.9,
        }
    }
}

/// Squashed-Gaussian policy head.
#[derive(Clone, Debug, PartialEq)]
pub struct Actor<R> {
    mlp: Mlp,
    action_dim: usize,
    log_std_min: f64,
    log_std_max: f64,
    pub params: ParameterSet<R>,
}

impl<R: Real> Actor<R> {
    pub fn new(latent_dim: usize, action_dim: usize, cfg: &SacConfig, rng: &mut impl Rng) -> Result<Self> {
        let h = cfg.hidden_dim;
        let mlp = Mlp::new("", &[latent_dim, h, h, 2 * action_dim])?;
        let mut params = ParameterSet::new();
        mlp.init(&mut params, rng)?;
        Ok(Actor {
            mlp,
            action_dim,
            log_std_min: cfg.log_std_min,
            log_std_max: cfg.log_std_max,
            params,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Mean and log-std, the latter squashed smoothly into its bounds.
    pub fn forward(&self, tape: &mut Tape<R>, p: &BoundParams, latent: Var) -> Result<(Var, Var)> {
        let out = self.mlp.forward(tape, p, latent)?;
        let mean = tape.slice_last(out, 0, self.action_dim)?;
        let raw = tape.slice_last(out, self.action_dim, self.action_dim)?;
        let t = tape.tanh(raw);
        let half_range = 0.5 * (self.log_std_max - self.log_std_min);
        let scaled = tape.scale(t, R::lit(half_range));
        let log_std = tape.add_scalar(scaled, R::lit(self.log_std_min + half_range));
        Ok((mean, log_std))
    }

    /// Reparameterized sample `tanh(mean + std · noise)` and its log-density
    /// `[B, 1]` including the change-of-variables correction.
    pub fn sample(&self, tape: &mut Tape<R>, p: &BoundParams, latent: Var, noise: Var) -> Result<(Var, Var)> {
        let (mean, log_std) = self.forward(tape, p, latent)?;
        let std = tape.exp(log_std);
        let spread = tape.mul(std, noise)?;
        let pre = tape.add(mean, spread)?;
        let action = tape.tanh(pre);

        // Σ_j (-ε_j²/2 - log σ_j - ln(2π)/2)
        let eps_sq = tape.square(noise);
        let half_eps = tape.scale(eps_sq, R::lit(-0.5));
        let gauss = tape.sub(half_eps, log_std)?;
        let gauss = tape.add_scalar(gauss, R::lit(-HALF_LN_2PI));
        let gauss = tape.sum_last(gauss);

        // - Σ_j ln(1 - tanh(u_j)² + eps)
        let a_sq = tape.square(action);
        let one_minus = tape.neg(a_sq);
        let one_minus = tape.add_scalar(one_minus, R::lit(1.0 + SQUASH_EPS));
        let log_jac = tape.log(one_minus);
        let log_jac = tape.sum_last(log_jac);
        let log_prob = tape.sub(gauss, log_jac)?;
        Ok((action, log_prob))
    }

    /// Action for one latent. Deterministic mode returns `tanh(mean)` and a
    /// log-probability of 0.
    pub fn act(&self, latent: &[R], deterministic: bool, rng: &mut impl Rng) -> Result<(Vec<R>, R)> {
        let mut tape = Tape::new();
        let p = tape.bind_frozen(&self.params);
        let z = tape.constant(Tensor::new(vec![1, latent.len()], latent.to_vec())?);
        if deterministic {
            let (mean, _) = self.forward(&mut tape, &p, z)?;
            let a = tape.tanh(mean);
            return Ok((tape.value(a).data().to_vec(), R::zero()));
        }
        let noise = tape.constant(standard_normal(&[1, self.action_dim], rng));
        let (a, lp) = self.sample(&mut tape, &p, z, noise)?;
        Ok((tape.value(a).data().to_vec(), tape.value(lp).data()[0]))
    }
}

/// Twin Q heads over `(latent, action)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic<R> {
    q1: Mlp,
    q2: Mlp,
    pub params: ParameterSet<R>,
}

impl<R: Real> Critic<R> {
    pub fn new(latent_dim: usize, action_dim: usize, cfg: &SacConfig, rng: &mut impl Rng) -> Result<Self> {
        let h = cfg.hidden_dim;
        let sizes = [latent_dim + action_dim, h, h, 1];
        let q1 = Mlp::new("q1", &sizes)?;
        let q2 = Mlp::new("q2", &sizes)?;
        let mut params = ParameterSet::new();
        q1.init(&mut params, rng)?;
        q2.init(&mut params, rng)?;
        Ok(Critic { q1, q2, params })
    }

    /// `([B, 1], [B, 1])` value estimates.
    pub fn forward(&self, tape: &mut Tape<R>, p: &BoundParams, latent: Var, action: Var) -> Result<(Var, Var)> {
        let x = tape.concat_last(latent, action)?;
        Ok((self.q1.forward(tape, p, x)?, self.q2.forward(tape, p, x)?))
    }
}

/// Learnable `α = exp(log_alpha)` with target entropy `-dim(A)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyCoefficient<R> {
    pub params: ParameterSet<R>,
    pub target_entropy: f64,
}

const LOG_ALPHA: &str = "log_alpha";

impl<R: Real> EntropyCoefficient<R> {
    pub fn new(init_alpha: f64, action_dim: usize) -> Result<Self> {
        if init_alpha <= 0.0 {
            return Err(Error::config("initial entropy coefficient must be positive"));
        }
        let mut params = ParameterSet::new();
        params.insert(LOG_ALPHA, Tensor::scalar(R::lit(init_alpha.ln())))?;
        Ok(EntropyCoefficient {
            params,
            target_entropy: -(action_dim as f64),
        })
    }

    pub fn log_alpha(&self) -> R {
        self.params.get(LOG_ALPHA).expect("log_alpha present").data()[0]
    }

    pub fn alpha(&self) -> R {
        self.log_alpha().exp()
    }

    /// `-mean(log α · (log π + target_entropy))` with the bracket held
    /// constant. Gradients land in `self.params`.
    pub fn loss_and_grad(&mut self, log_probs: &[R]) -> Result<R> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let shifted = Tensor::new(
            vec![log_probs.len(), 1],
            log_probs.iter().map(|&l| l + R::lit(self.target_entropy)).collect(),
        )?;
        let c = tape.constant(shifted);
        let prod = tape.mul_scalar_var(c, p.get(LOG_ALPHA)?)?;
        let mean = tape.mean(prod);
        let loss = tape.neg(mean);
        let grads = tape.backward(loss)?;
        self.params.accumulate(&p, &grads)?;
        Ok(tape.value(loss).data()[0])
    }
}

/// Mean squared Bellman error summed over both critics.
pub fn critic_loss<R: Real>(tape: &mut Tape<R>, q1: Var, q2: Var, target: Var) -> Result<Var> {
    let target = tape.detach(target);
    let d1 = tape.sub(q1, target)?;
    let d2 = tape.sub(q2, target)?;
    let s1 = tape.square(d1);
    let s2 = tape.square(d2);
    let m1 = tape.mean(s1);
    let m2 = tape.mean(s2);
    tape.add(m1, m2)
}

/// `mean(α log π - min(Q1, Q2))`.
pub fn actor_loss<R: Real>(tape: &mut Tape<R>, log_prob: Var, q1: Var, q2: Var, alpha: R) -> Result<Var> {
    let q = tape.minimum(q1, q2)?;
    let ent = tape.scale(log_prob, alpha);
    let diff = tape.sub(ent, q)?;
    Ok(tape.mean(diff))
}

/// Bellman targets `r + γ (1 - d) T`, rejecting non-finite results.
pub fn bellman_targets<R: Real>(
    rewards: &[R],
    not_done: &[R],
    soft_values: &[R],
    discount: f64,
) -> Result<Tensor<R>> {
    let g = R::lit(discount);
    let y: Vec<R> = rewards
        .iter()
        .zip(not_done)
        .zip(soft_values)
        .map(|((&r, &nd), &t)| r + g * nd * t)
        .collect();
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::non_finite("critic target", format!("batch element {i}")));
    }
    Tensor::new(vec![y.len(), 1], y)
}

pub fn standard_normal<R: Real>(shape: &[usize], rng: &mut impl Rng) -> Tensor<R> {
    Tensor::from_fn(shape, |_| R::lit(rng.sample::<f64, _>(StandardNormal)))
}

/// Inputs of one SAC update.
#[derive(Clone, Debug, PartialEq)]
pub struct SacBatch<R> {
    /// `[B, C, H, W]` observations fed to the encoder.
    pub obs: Tensor<R>,
    pub actions: Tensor<R>,
    /// `[B, 1]` total (extrinsic plus intrinsic) rewards.
    pub rewards: Tensor<R>,
    /// `[B, 1]`, 0 for terminal transitions.
    pub not_done: Tensor<R>,
    /// `[B, d_z]` next-observation latents for the actor.
    pub next_latent_actor: Tensor<R>,
    /// `[B, d_z]` next-observation latents for the target critics.
    pub next_latent_target: Tensor<R>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SacStats {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub alpha: f64,
}

/// Actor, twin critics with targets, entropy coefficient and their optimizers.
#[derive(Clone, Debug, PartialEq)]
pub struct SacAgent<R> {
    pub cfg: SacConfig,
    pub actor: Actor<R>,
    pub critic: Critic<R>,
    pub critic_target: Critic<R>,
    pub alpha: EntropyCoefficient<R>,
    pub actor_opt: Adam<R>,
    pub critic_opt: Adam<R>,
    pub alpha_opt: Adam<R>,
    critic_updates: u64,
    target_updates: u64,
}

impl<R: Real> SacAgent<R> {
    /// Actor and critic draw their initial weights from separate streams.
    pub fn new(
        latent_dim: usize,
        action_dim: usize,
        cfg: SacConfig,
        actor_rng: &mut impl Rng,
        critic_rng: &mut impl Rng,
    ) -> Result<Self> {
        let actor = Actor::new(latent_dim, action_dim, &cfg, actor_rng)?;
        let critic = Critic::new(latent_dim, action_dim, &cfg, critic_rng)?;
        let critic_target = critic.clone();
        let alpha = EntropyCoefficient::new(cfg.init_alpha, action_dim)?;
        let actor_opt = Adam::new(AdamConfig::with_lr(cfg.actor_lr), &actor.params);
        let critic_opt = Adam::new(AdamConfig::with_lr(cfg.critic_lr), &critic.params);
        let alpha_opt = Adam::new(
            AdamConfig {
                beta1: cfg.alpha_beta1,
                ..AdamConfig::with_lr(cfg.alpha_lr)
            },
            &alpha.params,
        );
        Ok(SacAgent {
            cfg,
            actor,
            critic,
            critic_target,
            alpha,
            actor_opt,
            critic_opt,
            alpha_opt,
            critic_updates: 0,
            target_updates: 0,
        })
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn target_updates(&self) -> u64 {
        self.target_updates
    }

    pub(crate) fn set_counters(&mut self, critic_updates: u64, target_updates: u64) {
        self.critic_updates = critic_updates;
        self.target_updates = target_updates;
    }

    /// Soft state values `min_i Q*_i(z', a') - α log π(a'|z')` for fresh
    /// next actions, computed without gradients.
    pub fn soft_target_values(
        &self,
        next_latent_actor: &Tensor<R>,
        next_latent_target: &Tensor<R>,
        rng: &mut impl Rng,
    ) -> Result<Vec<R>> {
        let b = next_latent_actor.rows();
        let mut tape = Tape::new();
        let pa = tape.bind_frozen(&self.actor.params);
        let pc = tape.bind_frozen(&self.critic_target.params);
        let za = tape.constant(next_latent_actor.clone());
        let zt = tape.constant(next_latent_target.clone());
        let noise = tape.constant(standard_normal(&[b, self.actor.action_dim()], rng));
        let (a, logp) = self.actor.sample(&mut tape, &pa, za, noise)?;
        let (q1, q2) = self.critic_target.forward(&mut tape, &pc, zt, a)?;
        let q = tape.minimum(q1, q2)?;
        let ent = tape.scale(logp, self.alpha.alpha());
        let v = tape.sub(q, ent)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// One critic step (also training `encoder`), then on the configured
    /// cadence an actor step, an entropy step and a target-critic EMA.
    pub fn update(
        &mut self,
        encoder: &mut EncoderNet<R>,
        encoder_opt: &mut Adam<R>,
        batch: &SacBatch<R>,
        rng: &mut impl Rng,
    ) -> Result<SacStats> {
        let soft = self.soft_target_values(&batch.next_latent_actor, &batch.next_latent_target, rng)?;
        let y = bellman_targets(batch.rewards.data(), batch.not_done.data(), &soft, self.cfg.discount)?;

        let mut tape = Tape::new();
        let pe = tape.bind(&encoder.params);
        let pc = tape.bind(&self.critic.params);
        let obs = tape.constant(batch.obs.clone());
        let z = encoder.forward(&mut tape, &pe, obs)?;
        let act = tape.constant(batch.actions.clone());
        let (q1, q2) = self.critic.forward(&mut tape, &pc, z, act)?;
        let target = tape.constant(y);
        let loss = critic_loss(&mut tape, q1, q2, target)?;
        let critic_loss_value = tape.value(loss).data()[0];
        if !critic_loss_value.is_finite() {
            return Err(Error::non_finite("critic loss", format!("update {}", self.critic_updates + 1)));
        }
        let grads = tape.backward(loss)?;
        encoder.params.accumulate(&pe, &grads)?;
        self.critic.params.accumulate(&pc, &grads)?;
        encoder_opt.step(&mut encoder.params)?;
        self.critic_opt.step(&mut self.critic.params)?;
        self.critic_updates += 1;
        let latents = tape.value(z).clone();
        drop(tape);

        let mut stats = SacStats {
            critic_loss: critic_loss_value.to_f64(),
            alpha: self.alpha.alpha().to_f64(),
            ..SacStats::default()
        };
        if self.critic_updates % self.cfg.target_update_every == 0 {
            let (actor_loss, alpha_loss) = self.update_actor_and_alpha(&latents, rng)?;
            stats.actor_loss = Some(actor_loss);
            stats.alpha_loss = Some(alpha_loss);
            stats.alpha = self.alpha.alpha().to_f64();
            self.update_targets()?;
        }
        Ok(stats)
    }

    /// Actor and entropy step on (detached) latents.
    pub fn update_actor_and_alpha(&mut self, latents: &Tensor<R>, rng: &mut impl Rng) -> Result<(f64, f64)> {
        let b = latents.rows();
        let mut tape = Tape::new();
        let pa = tape.bind(&self.actor.params);
        let pc = tape.bind_frozen(&self.critic.params);
        let z = tape.constant(latents.clone());
        let noise = tape.constant(standard_normal(&[b, self.actor.action_dim()], rng));
        let (a, logp) = self.actor.sample(&mut tape, &pa, z, noise)?;
        let (q1, q2) = self.critic.forward(&mut tape, &pc, z, a)?;
        let loss = actor_loss(&mut tape, logp, q1, q2, self.alpha.alpha())?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::non_finite("actor loss", format!("update {}", self.critic_updates)));
        }
        let grads = tape.backward(loss)?;
        self.actor.params.accumulate(&pa, &grads)?;
        self.actor_opt.step(&mut self.actor.params)?;

        let log_probs = tape.value(logp).data().to_vec();
        let alpha_loss = self.alpha.loss_and_grad(&log_probs)?;
        self.alpha_opt.step(&mut self.alpha.params)?;
        Ok((value.to_f64(), alpha_loss.to_f64()))
    }

    /// `Q* <- τ Q + (1 - τ) Q*`.
    pub fn update_targets(&mut self) -> Result<()> {
        self.critic_target
            .params
            .ema_blend(&self.critic.params, self.cfg.critic_tau)?;
        self.target_updates += 1;
        Ok(())
    }
}
