//! Training configuration and its `key=value` text form.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::contrastive::SimilarityKind;
use crate::envs::{EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::sac::SacConfig;

/// Which learner drives the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Algorithm {
    /// Contrastive forward dynamics with curiosity on top of SAC.
    #[default]
    Ccfdm,
    /// Plain SAC from pixels with a center-cropped, critic-trained encoder.
    PixelSac,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Ccfdm => "ccfdm",
            Algorithm::PixelSac => "sac",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ccfdm" => Ok(Algorithm::Ccfdm),
            "sac" => Ok(Algorithm::PixelSac),
            other => Err(Error::Parse(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub env: EnvKind,
    pub steps: u64,
    pub seed: u64,
    pub batch_size: usize,
    /// EMA factor for the key encoder.
    pub ema_tau: f64,
    /// EMA factor for the target critics.
    pub critic_tau: f64,
    /// Key-encoder sync every this many updates.
    pub momentum_freq: u64,
    pub intrinsic_weight: f64,
    pub intrinsic_decay: f64,
    pub discount: f64,
    pub contrastive_lr: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub init_alpha: f64,
    pub actor_update_freq: u64,
    pub warmup_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub replay_capacity: usize,
    pub image_size: usize,
    pub crop_size: usize,
    pub frame_stack: usize,
    pub action_repeat: usize,
    pub episode_length: u64,
    pub pendulum_damping: f64,
    pub latent_dim: usize,
    pub encoder_filters: usize,
    pub hidden_dim: usize,
    /// Width of the action-embedding and forward-model hidden layers.
    pub aux_hidden_dim: usize,
    pub similarity: SimilarityKind,
    pub no_contrastive: bool,
    pub no_curiosity: bool,
    pub no_augment: bool,
    /// Write a checkpoint every this many environment steps (0: only at
    /// the end of the run).
    pub checkpoint_interval: u64,
    /// Log `wall_time_s = 0` so that metrics files are byte-comparable.
    pub fixed_clock: bool,
    /// Fold every SAC update input into a running SHA-256 digest.
    pub trace_updates: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Ccfdm,
            env: EnvKind::Pendulum,
            steps: 40_000,
            seed: 0,
            batch_size: 128,
            ema_tau: 0.01,
            critic_tau: 0.01,
            momentum_freq: 1,
            intrinsic_weight: 0.2,
            intrinsic_decay: 2e-5,
            discount: 0.99,
            contrastive_lr: 1e-3,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            alpha_lr: 1e-3,
            init_alpha: 0.1,
            actor_update_freq: 2,
            warmup_steps: 1000,
            eval_interval: 10_000,
            eval_episodes: 10,
            replay_capacity: 100_000,
            image_size: 76,
            crop_size: 68,
            frame_stack: 3,
            action_repeat: 4,
            episode_length: 250,
            pendulum_damping: 0.1,
            latent_dim: 50,
            encoder_filters: 32,
            hidden_dim: 256,
            aux_hidden_dim: 50,
            similarity: SimilarityKind::Bilinear,
            no_contrastive: false,
            no_curiosity: false,
            no_augment: false,
            checkpoint_interval: 0,
            fixed_clock: false,
            trace_updates: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse(format!("invalid boolean {value:?} for {key}"))),
    }
}

macro_rules! fields {
    ($m:ident) => {
        $m! {
            algorithm: algorithm,
            env: env,
            steps: steps,
            seed: seed,
            batch_size: batch_size,
            ema_tau: ema_tau,
            critic_tau: critic_tau,
            momentum_freq: momentum_freq,
            intrinsic_weight: intrinsic_weight,
            intrinsic_decay: intrinsic_decay,
            discount: discount,
            contrastive_lr: contrastive_lr,
            actor_lr: actor_lr,
            critic_lr: critic_lr,
            alpha_lr: alpha_lr,
            init_alpha: init_alpha,
            actor_update_freq: actor_update_freq,
            warmup_steps: warmup_steps,
            eval_interval: eval_interval,
            eval_episodes: eval_episodes,
            replay_capacity: replay_capacity,
            image_size: image_size,
            crop_size: crop_size,
            frame_stack: frame_stack,
            action_repeat: action_repeat,
            episode_length: episode_length,
            pendulum_damping: pendulum_damping,
            latent_dim: latent_dim,
            encoder_filters: encoder_filters,
            hidden_dim: hidden_dim,
            aux_hidden_dim: aux_hidden_dim,
            similarity: similarity,
            checkpoint_interval: checkpoint_interval;
            no_contrastive: no_contrastive,
            no_curiosity: no_curiosity,
            no_augment: no_augment,
            fixed_clock: fixed_clock,
            trace_updates: trace_updates
        }
    };
}

macro_rules! impl_set {
    ($($k:ident: $f:ident),*; $($bk:ident: $bf:ident),*) => {
        /// Sets one field from its text form.
        pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
            match key {
                $(stringify!($k) => self.$f = parse(key, value)?,)*
                $(stringify!($bk) => self.$bf = parse_bool(key, value)?,)*
                other => return Err(Error::Parse(format!("unknown config key {other:?}"))),
            }
            Ok(())
        }

        /// All fields as `key=value` lines in a fixed order.
        pub fn to_text(&self) -> String {
            let mut s = String::new();
            $(let _ = writeln!(s, "{}={}", stringify!($k), self.$f);)*
            $(let _ = writeln!(s, "{}={}", stringify!($bk), self.$bf);)*
            s
        }
    };
}

impl TrainConfig {
    fields!(impl_set);

    /// Applies `key=value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("momentum_freq", self.momentum_freq as f64),
            ("actor_update_freq", self.actor_update_freq as f64),
            ("eval_interval", self.eval_interval as f64),
            ("eval_episodes", self.eval_episodes as f64),
            ("replay_capacity", self.replay_capacity as f64),
            ("image_size", self.image_size as f64),
            ("crop_size", self.crop_size as f64),
            ("frame_stack", self.frame_stack as f64),
            ("action_repeat", self.action_repeat as f64),
            ("episode_length", self.episode_length as f64),
            ("latent_dim", self.latent_dim as f64),
            ("encoder_filters", self.encoder_filters as f64),
            ("hidden_dim", self.hidden_dim as f64),
            ("aux_hidden_dim", self.aux_hidden_dim as f64),
            ("contrastive_lr", self.contrastive_lr),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("alpha_lr", self.alpha_lr),
            ("init_alpha", self.init_alpha),
        ];
        for (k, v) in positive {
            if !(v > 0.0) {
                return Err(Error::config(format!("{k} must be positive")));
            }
        }
        for (k, v) in [("ema_tau", self.ema_tau), ("critic_tau", self.critic_tau), ("discount", self.discount)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{k} must lie in [0, 1]")));
            }
        }
        for (k, v) in [
            ("intrinsic_weight", self.intrinsic_weight),
            ("intrinsic_decay", self.intrinsic_decay),
            ("pendulum_damping", self.pendulum_damping),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{k} must be finite and non-negative")));
            }
        }
        if self.crop_size > self.image_size {
            return Err(Error::config("crop_size cannot exceed image_size"));
        }
        if self.warmup_steps < self.batch_size as u64 {
            return Err(Error::config("warmup_steps must be at least batch_size"));
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        let mut e = EnvConfig::new(self.env);
        e.image_size = self.image_size;
        e.frame_stack = self.frame_stack;
        e.action_repeat = self.action_repeat;
        e.episode_length = self.episode_length;
        e.pendulum.damping = self.pendulum_damping;
        e
    }

    pub fn sac_config(&self) -> SacConfig {
        SacConfig {
            hidden_dim: self.hidden_dim,
            discount: self.discount,
            critic_tau: self.critic_tau,
            target_update_every: self.actor_update_freq,
            init_alpha: self.init_alpha,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            alpha_lr: self.alpha_lr,
            ..SacConfig::default()
        }
    }

    /// Whether the contrastive branch (query, action embedding and forward
    /// model) needs to run at all.
    pub fn uses_dynamics(&self) -> bool {
        self.algorithm == Algorithm::Ccfdm && !(self.no_contrastive && self.no_curiosity)
    }
}
