//! The learner: encoders, SAC heads and, for the full method, the action
//! embedding, forward model, similarity and curiosity state.
//!
//! One call to [`Agent::update`] performs one gradient update:
//!
//! 1. sample a batch and crop it (query crop of `o`, key crop of `o'`);
//! 2. encode keys `k'` with the key encoder, which also serves as the
//!    target-critic encoder;
//! 3. predict `q' = g(f(o), h(a))`, turn `‖q' - k'‖²` into intrinsic
//!    rewards and take an InfoNCE step on the query encoder, action
//!    embedding, forward model and bilinear weights;
//! 4. take a SAC step on `r_e + r_i`;
//! 5. every `momentum_freq` updates, move the key encoder towards the
//!    query encoder.
//!
//! [`Algorithm::PixelSac`] runs steps 1, 2, 4 and 5 only, with center crops,
//! through its own code path.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::{Algorithm, TrainConfig};
use super::metrics::UpdateStats;
use crate::autodiff::{Adam, AdamConfig, ParameterSet, Tape, Tensor};
use crate::contrastive::{info_nce, Similarity};
use crate::curiosity::{prediction_error, CuriosityState};
use crate::encoders::{ActionEmbedding, EncoderArch, EncoderPair, ForwardDynamics};
use crate::error::{Error, Result};
use crate::replay::{center_crop, PixelBatch, ReplayBuffer};
use crate::rng::{Stream, Streams};
use crate::sac::{SacAgent, SacBatch};

/// Training precision.
pub type Scalar = f32;

/// Action embedding, forward model and similarity with their optimizers.
#[derive(Clone, Debug, PartialEq)]
pub struct Dynamics {
    pub action_embed: ActionEmbedding<Scalar>,
    pub forward_model: ForwardDynamics<Scalar>,
    pub similarity: Similarity<Scalar>,
    /// Contrastive optimizer of the query encoder, separate from the one
    /// driven by the critic.
    pub query_opt: Adam<Scalar>,
    pub embed_opt: Adam<Scalar>,
    pub model_opt: Adam<Scalar>,
    pub similarity_opt: Adam<Scalar>,
    pub curiosity: CuriosityState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub cfg: TrainConfig,
    pub encoders: EncoderPair<Scalar>,
    /// Critic-driven optimizer of the query encoder.
    pub encoder_opt: Adam<Scalar>,
    pub sac: SacAgent<Scalar>,
    pub dynamics: Option<Dynamics>,
    updates: u64,
    trace: Option<[u8; 32]>,
}

/// Inputs of one SAC update, as seen by the trace digest.
fn fold_trace(prev: &[u8; 32], batch: &SacBatch<Scalar>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(prev);
    for t in [
        &batch.obs,
        &batch.actions,
        &batch.rewards,
        &batch.not_done,
        &batch.next_latent_actor,
        &batch.next_latent_target,
    ] {
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

impl Agent {
    pub fn new(cfg: &TrainConfig, streams: &mut Streams) -> Result<Self> {
        cfg.validate()?;
        let env_cfg = cfg.env_config();
        let action_dim = cfg.env.action_dim();
        let arch = EncoderArch {
            in_channels: env_cfg.obs_shape().stacked_channels(),
            image_size: cfg.crop_size,
            filters: cfg.encoder_filters,
            conv_layers: 4,
            latent_dim: cfg.latent_dim,
        };
        let encoders = EncoderPair::new(arch, streams.get(Stream::InitEncoder))?;
        let encoder_opt = Adam::new(AdamConfig::with_lr(cfg.critic_lr), &encoders.query.params);
        let sac_cfg = cfg.sac_config();
        let sac = {
            let mut actor_rng = streams.get(Stream::InitActor).clone();
            let sac = SacAgent::new(cfg.latent_dim, action_dim, sac_cfg, &mut actor_rng, streams.get(Stream::InitCritic))?;
            *streams.get(Stream::InitActor) = actor_rng;
            sac
        };
        let dynamics = if cfg.algorithm == Algorithm::Ccfdm {
            let action_embed = ActionEmbedding::new(
                action_dim,
                cfg.aux_hidden_dim,
                cfg.latent_dim,
                streams.get(Stream::InitAction),
            )?;
            let forward_model = ForwardDynamics::new(
                cfg.latent_dim,
                cfg.latent_dim,
                cfg.aux_hidden_dim,
                streams.get(Stream::InitDynamics),
            )?;
            let similarity = Similarity::new(cfg.similarity, cfg.latent_dim)?;
            let opt = AdamConfig::with_lr(cfg.contrastive_lr);
            Some(Dynamics {
                query_opt: Adam::new(opt, &encoders.query.params),
                embed_opt: Adam::new(opt, &action_embed.params),
                model_opt: Adam::new(opt, &forward_model.params),
                similarity_opt: Adam::new(opt, &similarity.params),
                action_embed,
                forward_model,
                similarity,
                curiosity: CuriosityState::new(cfg.intrinsic_weight, cfg.intrinsic_decay),
            })
        } else {
            None
        };
        Ok(Agent {
            cfg: cfg.clone(),
            encoders,
            encoder_opt,
            sac,
            dynamics,
            updates: 0,
            trace: cfg.trace_updates.then_some([0u8; 32]),
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn curiosity(&self) -> Option<&CuriosityState> {
        self.dynamics.as_ref().map(|d| &d.curiosity)
    }

    /// Chained SHA-256 over every SAC update input so far, if tracing.
    pub fn trace_digest(&self) -> Option<String> {
        self.trace.map(|d| d.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Action for a raw observation stack, from a center crop.
    pub fn act(&self, obs: &[u8], deterministic: bool, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let shape = self.cfg.env_config().obs_shape();
        let c = self.cfg.crop_size;
        let pixels: Vec<Scalar> = center_crop(obs, shape, c, c)?;
        let x = Tensor::new(vec![1, shape.stacked_channels(), c, c], pixels)?;
        let z = self.encoders.query.encode(&x)?;
        let (a, _) = self.sac.actor.act(z.data(), deterministic, rng)?;
        Ok(a.into_iter().map(|v| v as f64).collect())
    }

    pub fn update(&mut self, buffer: &ReplayBuffer, streams: &mut Streams, env_step: u64) -> Result<UpdateStats> {
        let stats = match self.cfg.algorithm {
            Algorithm::Ccfdm => self.update_ccfdm(buffer, streams, env_step)?,
            Algorithm::PixelSac => self.update_pixel_sac(buffer, streams)?,
        };
        self.updates += 1;
        if self.updates % self.cfg.momentum_freq == 0 {
            self.encoders.momentum_sync(self.cfg.ema_tau)?;
        }
        Ok(stats)
    }

    fn sample(&self, buffer: &ReplayBuffer, streams: &mut Streams, augment: bool) -> Result<PixelBatch<Scalar>> {
        let idx = buffer.sample_indices(self.cfg.batch_size, streams.get(Stream::Replay))?;
        let mut key_rng = streams.get(Stream::CropKey).clone();
        let batch = buffer.assemble(&idx, self.cfg.crop_size, augment, streams.get(Stream::CropQuery), &mut key_rng)?;
        *streams.get(Stream::CropKey) = key_rng;
        Ok(batch)
    }

    fn sac_step(&mut self, batch: SacBatch<Scalar>, streams: &mut Streams) -> Result<crate::sac::SacStats> {
        if let Some(prev) = &self.trace {
            self.trace = Some(fold_trace(prev, &batch));
        }
        self.sac.update(
            &mut self.encoders.query,
            &mut self.encoder_opt,
            &batch,
            streams.get(Stream::Actor),
        )
    }

    fn update_pixel_sac(&mut self, buffer: &ReplayBuffer, streams: &mut Streams) -> Result<UpdateStats> {
        let batch = self.sample(buffer, streams, false)?;
        let next_latent_target = self.encoders.key.encode(&batch.next_obs)?;
        let next_latent_actor = self.encoders.query.encode(&batch.next_obs)?;
        let b = batch.rewards.len();
        let rewards = Tensor::new(vec![b, 1], batch.rewards.iter().map(|&r| r as Scalar).collect())?;
        let s = self.sac_step(
            SacBatch {
                obs: batch.obs,
                actions: batch.actions,
                rewards,
                not_done: batch.not_done,
                next_latent_actor,
                next_latent_target,
            },
            streams,
        )?;
        Ok(UpdateStats {
            critic_loss: s.critic_loss,
            actor_loss: s.actor_loss,
            alpha: s.alpha,
            ..UpdateStats::default()
        })
    }

    fn update_ccfdm(&mut self, buffer: &ReplayBuffer, streams: &mut Streams, env_step: u64) -> Result<UpdateStats> {
        let cfg = self.cfg.clone();
        let batch = self.sample(buffer, streams, !cfg.no_augment)?;
        let keys = self.encoders.key.encode(&batch.next_obs)?;
        let b = batch.rewards.len();
        let mut stats = UpdateStats::default();
        let mut intrinsic = vec![0.0f64; b];

        if cfg.uses_dynamics() {
            let dynamics = self.dynamics.as_mut().expect("dynamics present for the full method");
            let train = !cfg.no_contrastive;
            let mut tape = Tape::new();
            let (pq, pa, pf, ps) = if train {
                (
                    tape.bind(&self.encoders.query.params),
                    tape.bind(&dynamics.action_embed.params),
                    tape.bind(&dynamics.forward_model.params),
                    tape.bind(&dynamics.similarity.params),
                )
            } else {
                (
                    tape.bind_frozen(&self.encoders.query.params),
                    tape.bind_frozen(&dynamics.action_embed.params),
                    tape.bind_frozen(&dynamics.forward_model.params),
                    tape.bind_frozen(&dynamics.similarity.params),
                )
            };
            let obs = tape.constant(batch.obs.clone());
            let q = self.encoders.query.forward(&mut tape, &pq, obs)?;
            let act = tape.constant(batch.actions.clone());
            let feat = dynamics.action_embed.forward(&mut tape, &pa, act)?;
            let pred = dynamics.forward_model.forward(&mut tape, &pf, q, feat)?;

            if !cfg.no_curiosity {
                let p = tape.value(pred);
                let errors: Vec<f64> = (0..b).map(|j| prediction_error(p.row(j), keys.row(j))).collect();
                let cur = &mut dynamics.curiosity;
                cur.set_step(env_step);
                intrinsic = cur.batch_rewards(&batch.rewards, &errors);
                if let Some(j) = intrinsic.iter().position(|r| !r.is_finite()) {
                    return Err(Error::non_finite("intrinsic reward", format!("batch element {j}")));
                }
                stats.mean_intrinsic_reward = Some(intrinsic.iter().sum::<f64>() / b as f64);
            }

            if train {
                let k = tape.constant(keys.clone());
                let loss = info_nce(&mut tape, &dynamics.similarity, &ps, pred, k)?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::non_finite("contrastive loss", format!("update {}", self.updates + 1)));
                }
                let grads = tape.backward(loss)?;
                let q_params = &mut self.encoders.query.params;
                q_params.accumulate(&pq, &grads)?;
                dynamics.action_embed.params.accumulate(&pa, &grads)?;
                dynamics.forward_model.params.accumulate(&pf, &grads)?;
                dynamics.similarity.params.accumulate(&ps, &grads)?;
                dynamics.query_opt.step(q_params)?;
                dynamics.embed_opt.step(&mut dynamics.action_embed.params)?;
                dynamics.model_opt.step(&mut dynamics.forward_model.params)?;
                dynamics.similarity_opt.step(&mut dynamics.similarity.params)?;
                stats.contrastive_loss = Some(value as f64);
            }
        }

        let next_latent_actor = self.encoders.query.encode(&batch.next_obs)?;
        let rewards: Vec<Scalar> = if cfg.no_curiosity {
            batch.rewards.iter().map(|&r| r as Scalar).collect()
        } else {
            batch.rewards.iter().zip(&intrinsic).map(|(&e, &i)| (e + i) as Scalar).collect()
        };
        let s = self.sac_step(
            SacBatch {
                obs: batch.obs,
                actions: batch.actions,
                rewards: Tensor::new(vec![b, 1], rewards)?,
                not_done: batch.not_done,
                next_latent_actor,
                next_latent_target: keys,
            },
            streams,
        )?;
        stats.critic_loss = s.critic_loss;
        stats.actor_loss = s.actor_loss;
        stats.alpha = s.alpha;
        Ok(stats)
    }

    /// Named parameter sets, in checkpoint order.
    pub fn parameter_sets(&self) -> Vec<(&'static str, &ParameterSet<Scalar>)> {
        let mut v = vec![
            ("query", &self.encoders.query.params),
            ("key", &self.encoders.key.params),
            ("actor", &self.sac.actor.params),
            ("critic", &self.sac.critic.params),
            ("critic_target", &self.sac.critic_target.params),
            ("alpha", &self.sac.alpha.params),
        ];
        if let Some(d) = &self.dynamics {
            v.push(("action_embed", &d.action_embed.params));
            v.push(("forward_model", &d.forward_model.params));
            v.push(("similarity", &d.similarity.params));
        }
        v
    }

    pub fn parameter_sets_mut(&mut self) -> Vec<(&'static str, &mut ParameterSet<Scalar>)> {
        let mut v = vec![
            ("query", &mut self.encoders.query.params),
            ("key", &mut self.encoders.key.params),
            ("actor", &mut self.sac.actor.params),
            ("critic", &mut self.sac.critic.params),
            ("critic_target", &mut self.sac.critic_target.params),
            ("alpha", &mut self.sac.alpha.params),
        ];
        if let Some(d) = &mut self.dynamics {
            v.push(("action_embed", &mut d.action_embed.params));
            v.push(("forward_model", &mut d.forward_model.params));
            v.push(("similarity", &mut d.similarity.params));
        }
        v
    }

    pub fn optimizers(&self) -> Vec<(&'static str, &Adam<Scalar>)> {
        let mut v = vec![
            ("encoder", &self.encoder_opt),
            ("actor", &self.sac.actor_opt),
            ("critic", &self.sac.critic_opt),
            ("alpha", &self.sac.alpha_opt),
        ];
        if let Some(d) = &self.dynamics {
            v.push(("query_contrastive", &d.query_opt));
            v.push(("action_embed", &d.embed_opt));
            v.push(("forward_model", &d.model_opt));
            v.push(("similarity", &d.similarity_opt));
        }
        v
    }

    pub fn optimizers_mut(&mut self) -> Vec<(&'static str, &mut Adam<Scalar>)> {
        let mut v = vec![
            ("encoder", &mut self.encoder_opt),
            ("actor", &mut self.sac.actor_opt),
            ("critic", &mut self.sac.critic_opt),
            ("alpha", &mut self.sac.alpha_opt),
        ];
        if let Some(d) = &mut self.dynamics {
            v.push(("query_contrastive", &mut d.query_opt));
            v.push(("action_embed", &mut d.embed_opt));
            v.push(("forward_model", &mut d.model_opt));
            v.push(("similarity", &mut d.similarity_opt));
        }
        v
    }

    /// `[updates, critic updates, target updates, key syncs]`.
    pub fn counters(&self) -> [u64; 4] {
        [
            self.updates,
            self.sac.critic_updates(),
            self.sac.target_updates(),
            self.encoders.sync_count(),
        ]
    }

    pub(crate) fn restore_counters(&mut self, c: [u64; 4]) {
        self.updates = c[0];
        self.sac.set_counters(c[1], c[2]);
        self.encoders.set_sync_count(c[3]);
    }

    pub(crate) fn trace_state(&self) -> Option<[u8; 32]> {
        self.trace
    }

    pub(crate) fn restore_trace(&mut self, t: Option<[u8; 32]>) {
        self.trace = t;
    }

    pub(crate) fn curiosity_mut(&mut self) -> Option<&mut CuriosityState> {
        self.dynamics.as_mut().map(|d| &mut d.curiosity)
    }
}

/// Uniform random action in `[-1, 1]^d`.
pub fn random_action(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
}
