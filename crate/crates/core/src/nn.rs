//! Layer descriptions shared by the networks.
//!
//! A layer only knows its shape and the names of its parameters; the
//! weights themselves live in a [`ParameterSet`] owned by the network.

use rand::Rng;

use crate::autodiff::{fan_in_uniform, BoundParams, ParameterSet, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Fully connected layer, `y = x · wᵀ + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    weight: String,
    bias: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        Dense {
            weight: join(prefix, "weight"),
            bias: join(prefix, "bias"),
            in_dim,
            out_dim,
        }
    }

    pub fn init<R: Real>(&self, params: &mut ParameterSet<R>, rng: &mut impl Rng) -> Result<()> {
        params.insert(&self.weight, fan_in_uniform(&[self.out_dim, self.in_dim], self.in_dim, rng))?;
        params.insert(&self.bias, Tensor::zeros(&[self.out_dim]))
    }

    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, p: &BoundParams, x: Var) -> Result<Var> {
        let (w, b) = (p.get(&self.weight)?, p.get(&self.bias)?);
        tape.linear(x, w, b)
    }
}

/// Valid-padding convolution with a square kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    weight: String,
    bias: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Conv2d {
            weight: join(prefix, "weight"),
            bias: join(prefix, "bias"),
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }

    pub fn init<R: Real>(&self, params: &mut ParameterSet<R>, rng: &mut impl Rng) -> Result<()> {
        let fan_in = self.in_channels * self.kernel * self.kernel;
        let shape = [self.out_channels, self.in_channels, self.kernel, self.kernel];
        params.insert(&self.weight, fan_in_uniform(&shape, fan_in, rng))?;
        params.insert(&self.bias, Tensor::zeros(&[self.out_channels]))
    }

    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, p: &BoundParams, x: Var) -> Result<Var> {
        let (w, b) = (p.get(&self.weight)?, p.get(&self.bias)?);
        tape.conv2d(x, w, b, self.stride)
    }

    pub fn out_size(&self, input: usize) -> Option<usize> {
        (self.kernel <= input && self.stride > 0).then(|| (input - self.kernel) / self.stride + 1)
    }
}

/// Layer normalization over the last dimension with learnable gain and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    gamma: String,
    beta: String,
    pub dim: usize,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(prefix: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: join(prefix, "gamma"),
            beta: join(prefix, "beta"),
            dim,
        }
    }

    pub fn init<R: Real>(&self, params: &mut ParameterSet<R>) -> Result<()> {
        params.insert(&self.gamma, Tensor::full(&[self.dim], R::one()))?;
        params.insert(&self.beta, Tensor::zeros(&[self.dim]))
    }

    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, p: &BoundParams, x: Var) -> Result<Var> {
        let (g, b) = (p.get(&self.gamma)?, p.get(&self.beta)?);
        tape.layer_norm(x, g, b, Self::EPS)
    }
}

/// Multi-layer perceptron with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`.
    pub fn new(prefix: &str, sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::config(format!("invalid MLP sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(&join(prefix, &format!("l{i}")), w[0], w[1]))
            .collect();
        Ok(Mlp { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn init<R: Real>(&self, params: &mut ParameterSet<R>, rng: &mut impl Rng) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(params, rng))
    }

    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, p: &BoundParams, x: Var) -> Result<Var> {
        let in_dim = tape.value(x).last_dim();
        if in_dim != self.in_dim() {
            return Err(Error::config(format!(
                "MLP expects input dimension {}, got {in_dim}",
                self.in_dim()
            )));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, p, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_fan_in_bound_and_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParameterSet::<f64>::new();
        let conv = Conv2d::new("c", 3, 4, 3, 1);
        conv.init(&mut p, &mut rng).unwrap();
        let bound = (1.0f64 / 27.0).sqrt();
        assert!(p.get("c.weight").unwrap().data().iter().all(|w| w.abs() <= bound));
        assert!(p.get("c.bias").unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn mlp_rejects_wrong_input_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new("m", &[3, 5, 2]).unwrap();
        let mut p = ParameterSet::<f64>::new();
        mlp.init(&mut p, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&p);
        let x = tape.constant(Tensor::zeros(&[1, 4]));
        assert!(mlp.forward(&mut tape, &bound, x).is_err());
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let y = mlp.forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 2]);
    }
}
