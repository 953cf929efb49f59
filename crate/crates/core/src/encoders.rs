//! Query/key image encoders, action embedding and forward dynamics model.
//!
//! The key encoder has the query encoder's architecture and is only ever
//! moved toward it by [`EncoderPair::momentum_sync`]; its outputs are
//! computed off-tape so no loss can reach its weights.

use rand::Rng;

use crate::autodiff::{BoundParams, ParameterSet, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Dense, LayerNorm, Mlp};

/// Output of an image encoder for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVector<R>(pub Vec<R>);

/// Output of the action embedding for one action.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionFeature<R>(pub Vec<R>);

/// Shape of the convolutional image encoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderArch {
    /// Frame stack times color channels.
    pub in_channels: usize,
    /// Side length of the (square, cropped) input.
    pub image_size: usize,
    pub filters: usize,
    pub conv_layers: usize,
    pub latent_dim: usize,
}

impl EncoderArch {
    pub fn new(in_channels: usize, image_size: usize) -> Self {
        EncoderArch {
            in_channels,
            image_size,
            filters: 32,
            conv_layers: 4,
            latent_dim: 50,
        }
    }

    fn convs(&self) -> Vec<Conv2d> {
        (0..self.conv_layers)
            .map(|i| {
                let cin = if i == 0 { self.in_channels } else { self.filters };
                let stride = if i == 0 { 2 } else { 1 };
                Conv2d::new(&format!("conv{i}"), cin, self.filters, 3, stride)
            })
            .collect()
    }

    /// Side length of the last feature map.
    pub fn feature_size(&self) -> Result<usize> {
        self.convs().iter().try_fold(self.image_size, |s, c| {
            c.out_size(s).ok_or_else(|| {
                Error::config(format!(
                    "image size {} too small for {} conv layers",
                    self.image_size, self.conv_layers
                ))
            })
        })
    }
}

/// Convolutional stack, linear projection and layer normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderNet<R> {
    arch: EncoderArch,
    convs: Vec<Conv2d>,
    proj: Dense,
    norm: LayerNorm,
    pub params: ParameterSet<R>,
}

impl<R: Real> EncoderNet<R> {
    pub fn new(arch: EncoderArch, rng: &mut impl Rng) -> Result<Self> {
        if arch.conv_layers == 0 || arch.filters == 0 || arch.latent_dim == 0 || arch.in_channels == 0 {
            return Err(Error::config(format!("degenerate encoder {arch:?}")));
        }
        let fs = arch.feature_size()?;
        let convs = arch.convs();
        let proj = Dense::new("proj", arch.filters * fs * fs, arch.latent_dim);
        let norm = LayerNorm::new("norm", arch.latent_dim);
        let mut params = ParameterSet::new();
        for c in &convs {
            c.init(&mut params, rng)?;
        }
        proj.init(&mut params, rng)?;
        norm.init(&mut params)?;
        Ok(EncoderNet {
            arch,
            convs,
            proj,
            norm,
            params,
        })
    }

    pub fn arch(&self) -> &EncoderArch {
        &self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn check_input(&self, shape: &[usize]) -> Result<usize> {
        let a = &self.arch;
        match shape {
            &[b, c, h, w] if c == a.in_channels && h == a.image_size && w == a.image_size => Ok(b),
            _ => Err(Error::config(format!(
                "encoder expects [B, {}, {}, {}] observations, got {shape:?}",
                a.in_channels, a.image_size, a.image_size
            ))),
        }
    }

    /// `[B, C, H, W]` pixels in `[0, 1]` to `[B, latent_dim]`.
    pub fn forward(&self, tape: &mut Tape<R>, p: &BoundParams, obs: Var) -> Result<Var> {
        let batch = self.check_input(tape.value(obs).shape())?;
        let mut h = obs;
        for conv in &self.convs {
            h = conv.forward(tape, p, h)?;
            h = tape.relu(h);
        }
        let flat = tape.value(h).len() / batch.max(1);
        h = tape.reshape(h, &[batch, flat])?;
        h = self.proj.forward(tape, p, h)?;
        self.norm.forward(tape, p, h)
    }

    /// Batched encoding outside of any caller tape.
    pub fn encode(&self, obs: &Tensor<R>) -> Result<Tensor<R>> {
        let mut tape = Tape::new();
        let p = tape.bind_frozen(&self.params);
        let x = tape.constant(obs.clone());
        let z = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(z).clone())
    }

    /// Encodes one `[C, H, W]` observation.
    pub fn encode_one(&self, obs: &Tensor<R>) -> Result<LatentVector<R>> {
        let mut shape = vec![1];
        shape.extend_from_slice(obs.shape());
        let z = self.encode(&obs.clone().reshaped(&shape)?)?;
        Ok(LatentVector(z.into_data()))
    }
}

/// Query encoder plus its momentum-averaged key encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderPair<R> {
    pub query: EncoderNet<R>,
    pub key: EncoderNet<R>,
    syncs: u64,
}

impl<R: Real> EncoderPair<R> {
    /// The key encoder starts as an exact copy of the query encoder.
    pub fn new(arch: EncoderArch, rng: &mut impl Rng) -> Result<Self> {
        let query = EncoderNet::new(arch, rng)?;
        let key = query.clone();
        Ok(EncoderPair { query, key, syncs: 0 })
    }

    pub fn encode_query(&self, obs: &Tensor<R>) -> Result<LatentVector<R>> {
        self.query.encode_one(obs)
    }

    /// Key latents for a `[B, C, H, W]` batch. The result is a plain tensor,
    /// so callers can only put it on a tape as a constant.
    pub fn encode_keys(&self, obs: &Tensor<R>) -> Result<Tensor<R>> {
        self.key.encode(obs)
    }

    pub fn encode_key(&self, obs: &Tensor<R>) -> Result<LatentVector<R>> {
        self.key.encode_one(obs)
    }

    /// `key <- tau * query + (1 - tau) * key`.
    pub fn momentum_sync(&mut self, tau: f64) -> Result<()> {
        self.key.params.ema_blend(&self.query.params, tau)?;
        self.syncs += 1;
        Ok(())
    }

    pub fn sync_count(&self) -> u64 {
        self.syncs
    }

    pub(crate) fn set_sync_count(&mut self, n: u64) {
        self.syncs = n;
    }
}

/// Action embedding: action vector to a `feature_dim` feature.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionEmbedding<R> {
    mlp: Mlp,
    pub params: ParameterSet<R>,
}

impl<R: Real> ActionEmbedding<R> {
    pub fn new(action_dim: usize, hidden: usize, feature_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let mlp = Mlp::new("", &[action_dim, hidden, hidden, feature_dim])?;
        let mut params = ParameterSet::new();
        mlp.init(&mut params, rng)?;
        Ok(ActionEmbedding { mlp, params })
    }

    pub fn action_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    pub fn forward(&self, tape: &mut Tape<R>, p: &BoundParams, actions: Var) -> Result<Var> {
        self.mlp.forward(tape, p, actions)
    }

    pub fn embed_action(&self, action: &[R]) -> Result<ActionFeature<R>> {
        let mut tape = Tape::new();
        let p = tape.bind_frozen(&self.params);
        let a = tape.constant(Tensor::new(vec![1, action.len()], action.to_vec())?);
        let y = self.forward(&mut tape, &p, a)?;
        Ok(ActionFeature(tape.value(y).data().to_vec()))
    }
}

/// Predicts the next latent from the concatenation of latent and action feature.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardDynamics<R> {
    mlp: Mlp,
    latent_dim: usize,
    pub params: ParameterSet<R>,
}

impl<R: Real> ForwardDynamics<R> {
    pub fn new(latent_dim: usize, feature_dim: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let mlp = Mlp::new("", &[latent_dim + feature_dim, hidden, hidden, latent_dim])?;
        let mut params = ParameterSet::new();
        mlp.init(&mut params, rng)?;
        Ok(ForwardDynamics {
            mlp,
            latent_dim,
            params,
        })
    }

    /// `[B, d_z]` and `[B, d_a]` to a `[B, d_z]` prediction.
    pub fn forward(&self, tape: &mut Tape<R>, p: &BoundParams, latent: Var, feature: Var) -> Result<Var> {
        let dz = tape.value(latent).last_dim();
        if dz != self.latent_dim {
            return Err(Error::config(format!(
                "dynamics model expects latent dimension {}, got {dz}",
                self.latent_dim
            )));
        }
        let x = tape.concat_last(latent, feature)?;
        self.mlp.forward(tape, p, x)
    }

    pub fn fdm_predict(&self, q: &LatentVector<R>, a_e: &ActionFeature<R>) -> Result<LatentVector<R>> {
        let mut tape = Tape::new();
        let p = tape.bind_frozen(&self.params);
        let z = tape.constant(Tensor::new(vec![1, q.0.len()], q.0.clone())?);
        let f = tape.constant(Tensor::new(vec![1, a_e.0.len()], a_e.0.clone())?);
        let y = self.forward(&mut tape, &p, z, f)?;
        Ok(LatentVector(tape.value(y).data().to_vec()))
    }
}
