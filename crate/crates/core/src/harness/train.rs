//! The interaction and update loop.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use super::agent::{random_action, Agent};
use super::checkpoint::{self, Snapshot};
use super::config::TrainConfig;
use super::evaluate::evaluate;
use super::metrics::{MetricsLog, MetricsRow, UpdateAverages};
use crate::envs::PixelEnv;
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{Stream, Streams};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Loop bookkeeping that a checkpoint has to carry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Progress {
    pub env_step: u64,
    pub episodes: u64,
    pub evaluations: u64,
    pub episode_return: f64,
    pub averages: UpdateAverages,
    /// Wall time spent before the last resume.
    pub elapsed_s: f64,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub agent: Agent,
    pub env: PixelEnv,
    pub buffer: ReplayBuffer,
    pub streams: Streams,
    pub progress: Progress,
    out_dir: PathBuf,
    metrics: MetricsLog,
    started: Instant,
}

/// What a finished run reports.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub last_row: Option<MetricsRow>,
    pub env_steps: u64,
    pub updates: u64,
    pub episodes: u64,
    pub evaluations: u64,
    pub key_syncs: u64,
    pub update_digest: Option<String>,
}

impl Trainer {
    /// Fresh run writing into `out_dir`.
    pub fn new(cfg: TrainConfig, out_dir: &Path) -> Result<Self> {
        cfg.validate()?;
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join(CONFIG_FILE), cfg.to_text())?;
        let mut streams = Streams::new(cfg.seed);
        let agent = Agent::new(&cfg, &mut streams)?;
        let env_cfg = cfg.env_config();
        let mut env = PixelEnv::new(env_cfg.clone())?;
        env.reset(streams.get(Stream::Env).random());
        let buffer = ReplayBuffer::new(cfg.replay_capacity, env_cfg.obs_shape(), cfg.env.action_dim())?;
        let metrics = MetricsLog::create(&out_dir.join(METRICS_FILE))?;
        Ok(Trainer {
            cfg,
            agent,
            env,
            buffer,
            streams,
            progress: Progress::default(),
            out_dir: out_dir.to_owned(),
            metrics,
            started: Instant::now(),
        })
    }

    /// Continues a checkpointed run in `out_dir`, optionally with a new step
    /// budget.
    pub fn resume(snapshot: Snapshot, out_dir: &Path, steps: Option<u64>) -> Result<Self> {
        let Snapshot {
            mut cfg,
            agent,
            env,
            buffer,
            streams,
            progress,
            metrics_text,
        } = snapshot;
        if let Some(s) = steps {
            cfg.steps = s;
        }
        if progress.env_step > cfg.steps {
            return Err(Error::config(format!(
                "checkpoint is at step {} beyond the requested {} steps",
                progress.env_step, cfg.steps
            )));
        }
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join(CONFIG_FILE), cfg.to_text())?;
        let metrics = MetricsLog::with_contents(&out_dir.join(METRICS_FILE), &metrics_text)?;
        let mut agent = agent;
        agent.cfg.steps = cfg.steps;
        Ok(Trainer {
            cfg,
            agent,
            env,
            buffer,
            streams,
            progress,
            out_dir: out_dir.to_owned(),
            metrics,
            started: Instant::now(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn metrics_text(&self) -> &str {
        self.metrics.text()
    }

    fn wall_time(&self) -> f64 {
        if self.cfg.fixed_clock {
            0.0
        } else {
            self.progress.elapsed_s + self.started.elapsed().as_secs_f64()
        }
    }

    pub fn elapsed_for_checkpoint(&self) -> f64 {
        self.wall_time()
    }

    /// One environment step, at most one update, and any resulting row.
    pub fn step(&mut self) -> Result<()> {
        let env_step = self.progress.env_step;
        let obs = self.env.observation();
        let action = if env_step < self.cfg.warmup_steps {
            random_action(self.cfg.env.action_dim(), self.streams.get(Stream::Actor))
        } else {
            self.agent.act(&obs, false, self.streams.get(Stream::Actor))?
        };
        let out = self.env.step(&action)?;
        self.buffer.push(Transition {
            obs,
            action: action.iter().map(|&a| a as f32).collect(),
            reward: out.reward as f32,
            next_obs: out.obs,
            done: false,
        })?;
        self.progress.env_step += 1;
        self.progress.episode_return += out.reward;
        let env_step = self.progress.env_step;

        if env_step > self.cfg.warmup_steps {
            match self.agent.update(&self.buffer, &mut self.streams, env_step) {
                Ok(stats) => self.progress.averages.record(&stats),
                Err(e @ Error::NonFinite { .. }) => {
                    let path = self.out_dir.join("checkpoint_abort.bin");
                    log::error!("{e} at step {env_step}; saving state to {}", path.display());
                    checkpoint::save(&path, self)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }

        let mut row: Option<MetricsRow> = None;
        if out.truncated {
            row.get_or_insert_with(MetricsRow::default).episode_return = Some(self.progress.episode_return);
            self.progress.episodes += 1;
            self.progress.episode_return = 0.0;
            self.env.reset(self.streams.get(Stream::Env).random());
        }
        if env_step % self.cfg.eval_interval == 0 || env_step == self.cfg.steps {
            let seed = self.streams.get(Stream::Eval).random();
            let res = evaluate(&self.agent, &self.cfg.env_config(), self.cfg.eval_episodes, seed)?;
            let r = row.get_or_insert_with(MetricsRow::default);
            r.eval_return_mean = Some(res.mean);
            r.eval_return_std = Some(res.std);
            self.progress.evaluations += 1;
            log::info!("step {env_step}: eval return {:.2} ± {:.2}", res.mean, res.std);
        }
        if let Some(mut r) = row {
            r.env_step = env_step;
            self.progress.averages.drain_into(&mut r);
            if let Some(c) = self.agent.curiosity().filter(|_| !self.cfg.no_curiosity) {
                r.re_max = Some(c.re_max());
                r.ri_max = Some(c.ri_max());
            }
            r.wall_time_s = self.wall_time();
            self.metrics.append(&r)?;
        }

        if self.cfg.checkpoint_interval > 0 && env_step % self.cfg.checkpoint_interval == 0 {
            checkpoint::save(&self.out_dir.join(format!("checkpoint_{env_step}.bin")), self)?;
        }
        Ok(())
    }

    /// Steps until `env_step == min(limit, cfg.steps)`.
    pub fn run_until(&mut self, limit: u64) -> Result<()> {
        while self.progress.env_step < limit.min(self.cfg.steps) {
            self.step()?;
        }
        Ok(())
    }

    /// Runs to the configured budget, then writes the final checkpoint and
    /// a short summary.
    pub fn run(mut self) -> Result<TrainSummary> {
        self.run_until(self.cfg.steps)?;
        checkpoint::save(&self.out_dir.join(CHECKPOINT_FILE), &self)?;
        let summary = self.summary();
        let mut text = format!(
            "env_steps={}\nupdates={}\nepisodes={}\nevaluations={}\nkey_syncs={}\n",
            summary.env_steps, summary.updates, summary.episodes, summary.evaluations, summary.key_syncs
        );
        if let Some(d) = &summary.update_digest {
            text.push_str(&format!("update_digest={d}\n"));
        }
        std::fs::write(self.out_dir.join(SUMMARY_FILE), text)?;
        Ok(summary)
    }

    pub fn summary(&self) -> TrainSummary {
        TrainSummary {
            last_row: self
                .metrics
                .text()
                .lines()
                .skip(1)
                .last()
                .and_then(|l| MetricsRow::from_csv(l).ok()),
            env_steps: self.progress.env_step,
            updates: self.agent.updates(),
            episodes: self.progress.episodes,
            evaluations: self.progress.evaluations,
            key_syncs: self.agent.encoders.sync_count(),
            update_digest: self.agent.trace_digest(),
        }
    }
}

/// Trains `cfg` from scratch into `out_dir`.
pub fn train(cfg: TrainConfig, out_dir: &Path) -> Result<TrainSummary> {
    Trainer::new(cfg, out_dir)?.run()
}
