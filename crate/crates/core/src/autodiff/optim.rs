use indexmap::IndexMap;

use super::{ParameterSet, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam bound to the layout of one [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<R> {
    pub config: AdamConfig,
    step: u64,
    m: IndexMap<String, Tensor<R>>,
    v: IndexMap<String, Tensor<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(config: AdamConfig, params: &ParameterSet<R>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(k, t)| (k.to_owned(), Tensor::zeros(t.shape())))
                .collect::<IndexMap<_, _>>()
        };
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// `(name, first moment, second moment)` in parameter order.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor<R>, &Tensor<R>)> {
        self.m
            .iter()
            .zip(self.v.values())
            .map(|((k, m), v)| (k.as_str(), m, v))
    }

    /// Restores a saved state; every moment must match the current layout.
    pub fn restore(
        &mut self,
        step: u64,
        moments: impl IntoIterator<Item = (String, Tensor<R>, Tensor<R>)>,
    ) -> Result<()> {
        let mut seen = 0;
        for (name, m, v) in moments {
            let (Some(dm), Some(dv)) = (self.m.get_mut(&name), self.v.get_mut(&name)) else {
                return Err(Error::config(format!("optimizer has no moment {name:?}")));
            };
            if dm.shape() != m.shape() || dv.shape() != v.shape() {
                return Err(Error::config(format!("optimizer moment {name:?} shape mismatch")));
            }
            *dm = m;
            *dv = v;
            seen += 1;
        }
        if seen != self.m.len() {
            return Err(Error::config(format!(
                "optimizer restore covered {seen} of {} moments",
                self.m.len()
            )));
        }
        self.step = step;
        Ok(())
    }

    /// Applies one update from the gradients stored in `params`, then clears
    /// them. A non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, params: &mut ParameterSet<R>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::config("optimizer and parameter set layouts differ"));
        }
        for (name, _) in params.iter() {
            let g = params.grad(name)?;
            if !g.is_finite() {
                return Err(Error::non_finite(
                    "gradient",
                    format!("parameter {name:?} at optimizer step {}", self.step + 1),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (R::lit(c.beta1), R::lit(c.beta2));
        let (one_b1, one_b2) = (R::lit(1.0 - c.beta1), R::lit(1.0 - c.beta2));
        let step_size = R::lit(c.lr / bc1);
        let inv_sqrt_bc2 = R::lit(1.0 / bc2.sqrt());
        let eps = R::lit(c.eps);
        for ((name, value, grad), (m, v)) in params
            .iter_mut_with_grads()
            .zip(self.m.values_mut().zip(self.v.values_mut()))
        {
            debug_assert_eq!(value.shape(), m.shape(), "{name}");
            for (((p, g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data_mut().iter_mut())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gv = *g;
                *mi = b1 * *mi + one_b1 * gv;
                *vi = b2 * *vi + one_b2 * gv * gv;
                *p -= step_size * *mi / (vi.sqrt() * inv_sqrt_bc2 + eps);
                *g = R::zero();
            }
        }
        Ok(())
    }
}
