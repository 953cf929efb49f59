//! Pixel-rendered continuous-control tasks.
//!
//! [`PixelEnv`] wraps a physics core with action clamping, action repeat,
//! an episode cap and a frame stack. Rewards lie in `[0, 1]` per control
//! step, so returns over a 250-step episode lie in `[0, 250]`.

pub mod pendulum;
pub mod pointmass;
pub mod render;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::replay::ObsShape;
use pendulum::{Pendulum, PendulumParams};
use pointmass::{PointMass, PointMassParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Pendulum,
    PointMass,
}

impl EnvKind {
    pub fn action_dim(self) -> usize {
        match self {
            EnvKind::Pendulum => 1,
            EnvKind::PointMass => 2,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::PointMass => "pointmass",
        })
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "pointmass" => Ok(EnvKind::PointMass),
            other => Err(Error::Parse(format!("unknown environment {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Rendered image side in pixels.
    pub image_size: usize,
    pub frame_stack: usize,
    pub action_repeat: usize,
    /// Control steps per episode.
    pub episode_length: u64,
    /// Physics step per repeat.
    pub dt: f64,
    pub pendulum: PendulumParams,
    pub pointmass: PointMassParams,
}

impl EnvConfig {
    pub fn new(kind: EnvKind) -> Self {
        EnvConfig {
            kind,
            image_size: 76,
            frame_stack: 3,
            action_repeat: 4,
            episode_length: 250,
            dt: 0.05,
            pendulum: PendulumParams::default(),
            pointmass: PointMassParams::default(),
        }
    }

    pub fn obs_shape(&self) -> ObsShape {
        ObsShape {
            frames: self.frame_stack,
            channels: 1,
            height: self.image_size,
            width: self.image_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Sim {
    Pendulum(Pendulum),
    PointMass(PointMass),
}

impl Sim {
    fn reward(&self) -> f64 {
        match self {
            Sim::Pendulum(p) => p.reward(),
            Sim::PointMass(p) => p.reward(),
        }
    }

    fn render(&self, size: usize) -> Vec<u8> {
        match self {
            Sim::Pendulum(p) => p.render(size),
            Sim::PointMass(p) => p.render(size),
        }
    }
}

/// Result of one control step.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<u8>,
    pub reward: f64,
    /// The episode cap was reached. This is a time limit, not a terminal
    /// state, so learners should still bootstrap through it.
    pub truncated: bool,
}

/// Everything needed to resume an environment mid-episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSnapshot {
    pub physics: Vec<f64>,
    pub step: u64,
    pub clamp_warnings: u64,
    pub frames: Vec<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelEnv {
    cfg: EnvConfig,
    sim: Sim,
    frames: VecDeque<Vec<u8>>,
    step: u64,
    clamp_warnings: u64,
}

impl PixelEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        if cfg.frame_stack == 0 || cfg.action_repeat == 0 || cfg.image_size == 0 || !(cfg.dt > 0.0) {
            return Err(Error::config("frame stack, action repeat, image size and dt must be positive"));
        }
        let sim = match cfg.kind {
            EnvKind::Pendulum => Sim::Pendulum(Pendulum::new(cfg.pendulum.clone())),
            EnvKind::PointMass => Sim::PointMass(PointMass::new(cfg.pointmass.clone())),
        };
        Ok(PixelEnv {
            cfg,
            sim,
            frames: VecDeque::new(),
            step: 0,
            clamp_warnings: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn kind(&self) -> EnvKind {
        self.cfg.kind
    }

    pub fn action_dim(&self) -> usize {
        self.cfg.kind.action_dim()
    }

    pub fn obs_shape(&self) -> ObsShape {
        self.cfg.obs_shape()
    }

    pub fn clamp_warnings(&self) -> u64 {
        self.clamp_warnings
    }

    pub fn episode_step(&self) -> u64 {
        self.step
    }

    pub fn pendulum(&self) -> Option<&Pendulum> {
        match &self.sim {
            Sim::Pendulum(p) => Some(p),
            _ => None,
        }
    }

    pub fn pendulum_mut(&mut self) -> Option<&mut Pendulum> {
        match &mut self.sim {
            Sim::Pendulum(p) => Some(p),
            _ => None,
        }
    }

    pub fn pointmass(&self) -> Option<&PointMass> {
        match &self.sim {
            Sim::PointMass(p) => Some(p),
            _ => None,
        }
    }

    pub fn pointmass_mut(&mut self) -> Option<&mut PointMass> {
        match &mut self.sim {
            Sim::PointMass(p) => Some(p),
            _ => None,
        }
    }

    /// Randomizes the state from `seed` and returns the initial stack, the
    /// first frame repeated.
    pub fn reset(&mut self, seed: u64) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &mut self.sim {
            Sim::Pendulum(p) => p.reset(&mut rng),
            Sim::PointMass(p) => p.reset(&mut rng),
        }
        self.step = 0;
        self.restack();
        self.observation()
    }

    /// Re-renders the current state into every stack slot.
    pub fn restack(&mut self) {
        let frame = self.render();
        self.frames = std::iter::repeat(frame).take(self.cfg.frame_stack).collect();
    }

    pub fn render(&self) -> Vec<u8> {
        self.sim.render(self.cfg.image_size)
    }

    /// Stacked observation, oldest frame first.
    pub fn observation(&self) -> Vec<u8> {
        self.frames.iter().flatten().copied().collect()
    }

    /// Applies `action` for `action_repeat` physics steps. Out-of-range or
    /// non-finite components are clamped (NaN becomes 0) and counted.
    pub fn step(&mut self, action: &[f64]) -> Result<Step> {
        if action.len() != self.action_dim() {
            return Err(Error::config(format!(
                "{} expects {} action dimensions, got {}",
                self.cfg.kind,
                self.action_dim(),
                action.len()
            )));
        }
        let mut u = [0.0; 2];
        let mut clamped = false;
        for (slot, &a) in u.iter_mut().zip(action) {
            let c = if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) };
            clamped |= c != a;
            *slot = c;
        }
        if clamped {
            self.clamp_warnings += 1;
            log::warn!("action {action:?} clamped to [-1, 1] ({} so far)", self.clamp_warnings);
        }
        let mut reward = 0.0;
        for _ in 0..self.cfg.action_repeat {
            match &mut self.sim {
                Sim::Pendulum(p) => p.advance(u[0], self.cfg.dt),
                Sim::PointMass(p) => p.advance(u, self.cfg.dt),
            }
            reward += self.sim.reward();
        }
        reward /= self.cfg.action_repeat as f64;
        self.step += 1;
        self.frames.pop_front();
        self.frames.push_back(self.render());
        Ok(Step {
            obs: self.observation(),
            reward,
            truncated: self.step >= self.cfg.episode_length,
        })
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            physics: match &self.sim {
                Sim::Pendulum(p) => p.to_vec(),
                Sim::PointMass(p) => p.to_vec(),
            },
            step: self.step,
            clamp_warnings: self.clamp_warnings,
            frames: self.frames.iter().cloned().collect(),
        }
    }

    pub fn restore(&mut self, snap: &EnvSnapshot) -> Result<()> {
        let frame_len = self.cfg.image_size * self.cfg.image_size;
        if snap.frames.len() != self.cfg.frame_stack || snap.frames.iter().any(|f| f.len() != frame_len) {
            return Err(Error::Parse("environment frame stack does not match configuration".into()));
        }
        let ok = match &mut self.sim {
            Sim::Pendulum(p) => p.set_from(&snap.physics),
            Sim::PointMass(p) => p.set_from(&snap.physics),
        };
        if !ok {
            return Err(Error::Parse("environment physics state has the wrong length".into()));
        }
        self.step = snap.step;
        self.clamp_warnings = snap.clamp_warnings;
        self.frames = snap.frames.iter().cloned().collect();
        Ok(())
    }
}
