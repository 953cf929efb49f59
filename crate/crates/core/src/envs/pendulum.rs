//! Torque-limited pendulum swing-up.
//!
//! `θ = 0` is upright and angles grow clockwise on screen. The dynamics are
//!
//! ```text
//! θ̈ = (g / l) sin θ + u · τ_max / (m l²) - b ω
//! ```
//!
//! integrated with velocity Verlet (kick, drift, kick). With `b = 0` and
//! no torque this keeps the energy `½ m l² ω² + m g l cos θ` bounded over an
//! episode, where a plain semi-implicit Euler step drifts by several percent.

use std::f64::consts::PI;

use rand::Rng;

use super::render::Canvas;

#[derive(Clone, Debug, PartialEq)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    /// Viscous damping `b` in 1/s.
    pub damping: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            mass: 1.0,
            length: 1.0,
            gravity: 10.0,
            max_torque: 2.0,
            max_speed: 8.0,
            damping: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PendulumState {
    /// Wrapped to `(-π, π]`.
    pub theta: f64,
    pub omega: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pendulum {
    pub params: PendulumParams,
    pub state: PendulumState,
}

pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    if t == -PI {
        t = PI;
    }
    t
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Self {
        Pendulum {
            params,
            state: PendulumState { theta: PI, omega: 0.0 },
        }
    }

    pub fn reset(&mut self, rng: &mut impl Rng) {
        self.state = PendulumState {
            theta: wrap_angle(rng.random_range(-PI..PI)),
            omega: 0.0,
        };
    }

    fn accel(&self, theta: f64, omega: f64, u: f64) -> f64 {
        let p = &self.params;
        p.gravity / p.length * theta.sin() + u * p.max_torque / (p.mass * p.length * p.length) - p.damping * omega
    }

    /// One integration step with normalized torque `u ∈ [-1, 1]`.
    pub fn advance(&mut self, u: f64, dt: f64) {
        let PendulumState { theta, omega } = self.state;
        let half = omega + 0.5 * dt * self.accel(theta, omega, u);
        let theta = theta + dt * half;
        let omega = half + 0.5 * dt * self.accel(theta, half, u);
        let max = self.params.max_speed;
        self.state = PendulumState {
            theta: wrap_angle(theta),
            omega: omega.clamp(-max, max),
        };
    }

    /// `(cos θ + 1) / 2`: 1 upright, 0 hanging.
    pub fn reward(&self) -> f64 {
        0.5 * (self.state.theta.cos() + 1.0)
    }

    pub fn energy(&self) -> f64 {
        let p = &self.params;
        let s = &self.state;
        0.5 * p.mass * p.length * p.length * s.omega * s.omega + p.mass * p.gravity * p.length * s.theta.cos()
    }

    pub fn render(&self, size: usize) -> Vec<u8> {
        let mut c = Canvas::new(size, 24);
        let s = size as f64;
        let len = 0.4 * s;
        let tip = (len * self.state.theta.sin(), -len * self.state.theta.cos());
        c.segment((0.0, 0.0), tip, 0.025 * s, 170);
        c.disc(tip, 0.06 * s, 255);
        c.disc((0.0, 0.0), 0.025 * s, 110);
        c.into_pixels()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.state.theta, self.state.omega]
    }

    pub fn set_from(&mut self, v: &[f64]) -> bool {
        if v.len() != 2 {
            return false;
        }
        self.state = PendulumState { theta: v[0], omega: v[1] };
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(theta: f64, damping: f64) -> Pendulum {
        let mut p = Pendulum::new(PendulumParams {
            damping,
            ..PendulumParams::default()
        });
        p.state = PendulumState { theta, omega: 0.0 };
        p
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(-7.0) - (-7.0 + 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn hanging_rest_is_equilibrium() {
        let mut p = at(PI, 0.1);
        for _ in 0..4 {
            p.advance(0.0, 0.05);
        }
        assert!((p.state.theta.abs() - PI).abs() < 1e-9);
        assert!(p.state.omega.abs() < 1e-9);
    }

    #[test]
    fn speed_is_clamped() {
        let mut p = at(0.0, 0.0);
        p.state.omega = 50.0;
        p.advance(1.0, 0.05);
        assert_eq!(p.state.omega, 8.0);
    }

    #[test]
    fn mirror_render() {
        let a = at(0.7, 0.1).render(76);
        let b = at(-0.7, 0.1).render(76);
        for y in 0..76 {
            for x in 0..76 {
                assert_eq!(a[y * 76 + x], b[y * 76 + 75 - x]);
            }
        }
    }
}
