//! Intrinsic reward from forward-dynamics prediction error.
//!
//! ```text
//! r_i = C · exp(-γ t) · err · (r_e_max / r_i_max)
//! ```
//!
//! `err` is the squared distance between the predicted latent and the
//! positive key, `t` the global environment step at which the transition is
//! replayed, and the two maxima are running maxima over everything seen so
//! far (`|r_e|` and raw `err`). The ratio rescales errors into the range of
//! the task reward, so `r_i <= C · r_e_max` always holds.

/// Below this `r_i_max` the normalization is undefined and the reward is 0.
pub const MIN_ERROR_SCALE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct CuriosityState {
    /// Intrinsic weight `C`.
    pub weight: f64,
    /// Decay rate `γ` per environment step.
    pub decay: f64,
    re_max: f64,
    ri_max: f64,
    t: u64,
}

impl Default for CuriosityState {
    fn default() -> Self {
        CuriosityState::new(0.2, 2e-5)
    }
}

impl CuriosityState {
    pub fn new(weight: f64, decay: f64) -> Self {
        assert!(weight >= 0.0 && decay >= 0.0, "curiosity weight and decay must be non-negative");
        CuriosityState {
            weight,
            decay,
            re_max: 0.0,
            ri_max: 0.0,
            t: 0,
        }
    }

    pub fn re_max(&self) -> f64 {
        self.re_max
    }

    pub fn ri_max(&self) -> f64 {
        self.ri_max
    }

    pub fn step(&self) -> u64 {
        self.t
    }

    /// Moves the decay clock; it never runs backwards.
    pub fn set_step(&mut self, t: u64) {
        self.t = self.t.max(t);
    }

    pub fn update_maxima(&mut self, extrinsic: f64, raw_error: f64) {
        self.re_max = self.re_max.max(extrinsic.abs());
        self.ri_max = self.ri_max.max(raw_error);
    }

    /// `r_e_max / r_i_max`, or 0 while either is degenerate.
    pub fn scale(&self) -> f64 {
        if self.ri_max < MIN_ERROR_SCALE || self.re_max == 0.0 {
            0.0
        } else {
            self.re_max / self.ri_max
        }
    }

    pub fn decay_factor(&self) -> f64 {
        (-self.decay * self.t as f64).exp()
    }

    pub fn intrinsic_reward(&self, error: f64) -> f64 {
        let scale = self.scale();
        if scale == 0.0 {
            return 0.0;
        }
        self.weight * self.decay_factor() * error * scale
    }

    /// Updates the maxima with a whole batch, then rewards every element.
    pub fn batch_rewards(&mut self, extrinsic: &[f64], errors: &[f64]) -> Vec<f64> {
        for (&re, &err) in extrinsic.iter().zip(errors) {
            self.update_maxima(re, err);
        }
        errors.iter().map(|&e| self.intrinsic_reward(e)).collect()
    }

    pub(crate) fn restore(&mut self, re_max: f64, ri_max: f64, t: u64) {
        self.re_max = re_max;
        self.ri_max = ri_max;
        self.t = t;
    }
}

/// `‖q' - k'‖²`, computed off-tape.
pub fn prediction_error<R: crate::Real>(predicted: &[R], key: &[R]) -> f64 {
    predicted
        .iter()
        .zip(key)
        .map(|(&a, &b)| {
            let d = a.to_f64() - b.to_f64();
            d * d
        })
        .sum()
}

/// Steps until the decay factor halves.
pub fn half_life(decay: f64) -> f64 {
    std::f64::consts::LN_2 / decay
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prediction_error_examples() {
        assert_eq!(prediction_error(&[1.0f64, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(prediction_error(&[1.0f64, 0.0], &[0.0, 1.0]), 2.0);
        assert_eq!(
            prediction_error(&[0.3f64, -1.0], &[2.0, 0.5]),
            prediction_error(&[2.0f64, 0.5], &[0.3, -1.0])
        );
    }

    #[test]
    fn unit_normalization_at_time_zero() {
        let mut s = CuriosityState::new(0.2, 2e-5);
        s.update_maxima(1.0, 1.0);
        assert_eq!(s.intrinsic_reward(1.0), 0.2);
        assert_eq!(s.intrinsic_reward(0.0), 0.0);
    }

    #[test]
    fn maxima_track_absolute_extrinsic() {
        let mut s = CuriosityState::default();
        s.update_maxima(5.0, 0.1);
        s.update_maxima(3.0, 0.05);
        assert_eq!(s.re_max(), 5.0);
        s.update_maxima(-7.0, 0.0);
        assert_eq!(s.re_max(), 7.0);
        assert_eq!(s.ri_max(), 0.1);
    }

    #[test]
    fn fresh_state_scale_factor() {
        let mut s = CuriosityState::default();
        s.update_maxima(2.0, 4.0);
        assert_eq!((s.re_max(), s.ri_max(), s.scale()), (2.0, 4.0, 0.5));
    }

    #[test]
    fn degenerate_maxima_give_zero() {
        let mut s = CuriosityState::default();
        assert_eq!(s.intrinsic_reward(3.0), 0.0);
        s.update_maxima(0.0, 5.0);
        assert_eq!(s.intrinsic_reward(3.0), 0.0);
        let mut s = CuriosityState::default();
        s.update_maxima(1.0, 1e-9);
        assert_eq!(s.intrinsic_reward(1e-9), 0.0);
    }

    #[test]
    fn half_life_at_default_decay() {
        assert!((half_life(2e-5) - 34_657.36).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn maxima_never_decrease(seq in proptest::collection::vec((-10.0f64..10.0, 0.0f64..10.0), 1..40)) {
            let mut s = CuriosityState::default();
            let (mut re, mut ri) = (0.0, 0.0);
            for (r, e) in seq {
                s.update_maxima(r, e);
                prop_assert!(s.re_max() >= re && s.ri_max() >= ri);
                re = s.re_max();
                ri = s.ri_max();
            }
        }

        #[test]
        fn reward_bounded_and_decreasing(
            re in 0.01f64..5.0, errs in proptest::collection::vec(0.0f64..20.0, 1..10),
            t in 0u64..1_000_000, weight in 0.0f64..1.0,
        ) {
            let mut s = CuriosityState::new(weight, 2e-5);
            let rewards = s.batch_rewards(&vec![re; errs.len()], &errs);
            for r in &rewards {
                prop_assert!(*r <= weight * s.re_max() + 1e-12);
            }
            let e = errs[0];
            s.set_step(t);
            let early = s.intrinsic_reward(e);
            s.set_step(t + 1000);
            let late = s.intrinsic_reward(e);
            if e > 0.0 && weight > 0.0 && s.scale() > 0.0 {
                prop_assert!(late < early);
            }
        }
    }
}
