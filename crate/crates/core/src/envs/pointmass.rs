//! Sparse-reward point-mass reacher in the unit box.
//!
//! A unit mass is pushed by a 2-D force with linear friction; the reward is
//! 1 only while it sits within the goal radius.

use rand::Rng;

use super::render::Canvas;

#[derive(Clone, Debug, PartialEq)]
pub struct PointMassParams {
    /// Force at full action, per unit mass.
    pub gain: f64,
    pub friction: f64,
    pub goal_radius: f64,
    /// Start and goal are drawn at least this far apart.
    pub min_start_distance: f64,
}

impl Default for PointMassParams {
    fn default() -> Self {
        PointMassParams {
            gain: 1.0,
            friction: 1.0,
            goal_radius: 0.05,
            min_start_distance: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointMassState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub goal: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointMass {
    pub params: PointMassParams,
    pub state: PointMassState,
}

const MARGIN: f64 = 0.1;

impl PointMass {
    pub fn new(params: PointMassParams) -> Self {
        PointMass {
            params,
            state: PointMassState {
                pos: [0.5, 0.5],
                vel: [0.0, 0.0],
                goal: [0.5, 0.5],
            },
        }
    }

    pub fn reset(&mut self, rng: &mut impl Rng) {
        let mut draw = || [rng.random_range(MARGIN..1.0 - MARGIN), rng.random_range(MARGIN..1.0 - MARGIN)];
        let goal = draw();
        let pos = loop {
            let p = draw();
            if dist(p, goal) >= self.params.min_start_distance {
                break p;
            }
        };
        self.state = PointMassState {
            pos,
            vel: [0.0, 0.0],
            goal,
        };
    }

    /// Semi-implicit Euler step; walls stop the mass along their normal.
    pub fn advance(&mut self, u: [f64; 2], dt: f64) {
        let p = &self.params;
        let s = &mut self.state;
        for i in 0..2 {
            s.vel[i] += dt * (p.gain * u[i] - p.friction * s.vel[i]);
            s.pos[i] += dt * s.vel[i];
            if s.pos[i] < 0.0 || s.pos[i] > 1.0 {
                s.pos[i] = s.pos[i].clamp(0.0, 1.0);
                s.vel[i] = 0.0;
            }
        }
    }

    pub fn distance_to_goal(&self) -> f64 {
        dist(self.state.pos, self.state.goal)
    }

    pub fn reward(&self) -> f64 {
        if self.distance_to_goal() < self.params.goal_radius {
            1.0
        } else {
            0.0
        }
    }

    pub fn render(&self, size: usize) -> Vec<u8> {
        let mut c = Canvas::new(size, 24);
        let s = size as f64;
        // the box spans 90% of the image
        let span = 0.9 * s;
        let map = |p: [f64; 2]| ((p[0] - 0.5) * span, (p[1] - 0.5) * span);
        c.ring(map(self.state.goal), self.params.goal_radius * span, 0.6, 150);
        c.disc(map(self.state.pos), 0.035 * s, 255);
        c.into_pixels()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let s = &self.state;
        vec![s.pos[0], s.pos[1], s.vel[0], s.vel[1], s.goal[0], s.goal[1]]
    }

    pub fn set_from(&mut self, v: &[f64]) -> bool {
        if v.len() != 6 {
            return false;
        }
        self.state = PointMassState {
            pos: [v[0], v[1]],
            vel: [v[2], v[3]],
            goal: [v[4], v[5]],
        };
        true
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
