//! Transition storage, uniform sampling and random-crop augmentation.
//!
//! Pixels stay 8-bit in the buffer and become unit-interval reals only when a
//! batch is assembled. Within an episode the next stack shares all but its
//! newest frame with the current one, so only that frame is stored for it.

use rand::Rng;

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// Layout of a stacked pixel observation, `[frames · channels, height, width]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObsShape {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ObsShape {
    pub fn stacked_channels(&self) -> usize {
        self.frames * self.channels
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.frames * self.frame_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<u8>,
    pub action: Vec<f32>,
    /// Extrinsic reward.
    pub reward: f32,
    pub next_obs: Vec<u8>,
    /// True only for genuine terminal states, never for time limits.
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
enum NextObs {
    /// Newest frame only; the rest is `obs` shifted by one frame.
    Newest(Vec<u8>),
    Full(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
struct Slot {
    obs: Vec<u8>,
    action: Vec<f32>,
    reward: f32,
    next: NextObs,
    done: bool,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    shape: ObsShape,
    action_dim: usize,
    capacity: usize,
    slots: Vec<Slot>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, shape: ObsShape, action_dim: usize) -> Result<Self> {
        if capacity == 0 || shape.is_empty() || shape.frames == 0 {
            return Err(Error::config("replay buffer needs positive capacity and observation size"));
        }
        Ok(ReplayBuffer {
            shape,
            action_dim,
            capacity,
            slots: Vec::new(),
            cursor: 0,
        })
    }

    pub fn shape(&self) -> ObsShape {
        self.shape
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Slot the next push writes to.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        let n = self.shape.len();
        if t.obs.len() != n || t.next_obs.len() != n || t.action.len() != self.action_dim {
            return Err(Error::config(format!(
                "transition shapes (obs {}, next {}, action {}) do not match buffer (obs {n}, action {})",
                t.obs.len(),
                t.next_obs.len(),
                t.action.len(),
                self.action_dim
            )));
        }
        let f = self.shape.frame_len();
        let next = if t.next_obs[..n - f] == t.obs[f..] {
            NextObs::Newest(t.next_obs[n - f..].to_vec())
        } else {
            NextObs::Full(t.next_obs)
        };
        let slot = Slot {
            obs: t.obs,
            action: t.action,
            reward: t.reward,
            next,
            done: t.done,
        };
        if self.slots.len() < self.capacity {
            self.slots.push(slot);
        } else {
            self.slots[self.cursor] = slot;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Transition stored in slot `i`.
    pub fn get(&self, i: usize) -> Option<Transition> {
        let s = self.slots.get(i)?;
        Some(Transition {
            obs: s.obs.clone(),
            action: s.action.clone(),
            reward: s.reward,
            next_obs: self.next_obs(s),
            done: s.done,
        })
    }

    fn next_obs(&self, s: &Slot) -> Vec<u8> {
        match &s.next {
            NextObs::Full(v) => v.clone(),
            NextObs::Newest(frame) => {
                let mut v = Vec::with_capacity(self.shape.len());
                v.extend_from_slice(&s.obs[self.shape.frame_len()..]);
                v.extend_from_slice(frame);
                v
            }
        }
    }

    /// `k` slot indices drawn uniformly with replacement.
    pub fn sample_indices(&self, k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if k == 0 {
            return Ok(Vec::new());
        }
        if self.slots.len() < k {
            return Err(Error::NotReady {
                have: self.slots.len(),
                need: k,
            });
        }
        Ok((0..k).map(|_| rng.random_range(0..self.slots.len())).collect())
    }

    pub fn sample(&self, k: usize, rng: &mut impl Rng) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(k, rng)?
            .into_iter()
            .map(|i| self.get(i).expect("sampled index in range"))
            .collect())
    }

    /// Batch for slots `indices`, cropped to `out × out`. With `augment` the
    /// query (current) and key (next) crops draw their offsets from separate
    /// streams; without it both are center crops and no randomness is used.
    pub fn assemble<R: Real>(
        &self,
        indices: &[usize],
        out: usize,
        augment: bool,
        query_rng: &mut impl Rng,
        key_rng: &mut impl Rng,
    ) -> Result<PixelBatch<R>> {
        let c = self.shape.stacked_channels();
        let per = c * out * out;
        let b = indices.len();
        let mut obs = vec![R::zero(); b * per];
        let mut next = vec![R::zero(); b * per];
        let mut actions = Vec::with_capacity(b * self.action_dim);
        let mut rewards = Vec::with_capacity(b);
        let mut not_done = Vec::with_capacity(b);
        for (j, &i) in indices.iter().enumerate() {
            let s = self
                .slots
                .get(i)
                .ok_or_else(|| Error::Contract(format!("replay index {i} out of range")))?;
            let (qo, ko) = if augment {
                (
                    draw_offset(self.shape.height, self.shape.width, out, out, query_rng)?,
                    draw_offset(self.shape.height, self.shape.width, out, out, key_rng)?,
                )
            } else {
                let o = center_offset(self.shape.height, self.shape.width, out, out)?;
                (o, o)
            };
            crop_into(&s.obs, self.shape, qo, out, out, &mut obs[j * per..(j + 1) * per]);
            crop_into(&self.next_obs(s), self.shape, ko, out, out, &mut next[j * per..(j + 1) * per]);
            actions.extend(s.action.iter().map(|&a| R::lit(a as f64)));
            rewards.push(s.reward as f64);
            not_done.push(if s.done { R::zero() } else { R::one() });
        }
        Ok(PixelBatch {
            obs: Tensor::new(vec![b, c, out, out], obs)?,
            next_obs: Tensor::new(vec![b, c, out, out], next)?,
            actions: Tensor::new(vec![b, self.action_dim], actions)?,
            rewards,
            not_done: Tensor::new(vec![b, 1], not_done)?,
        })
    }

    /// Stored form of slot `i`: obs, action, reward, next data, done. The
    /// next data is either only the newest frame (`true`) or a full stack.
    pub fn raw_slot(&self, i: usize) -> Option<(&[u8], &[f32], f32, bool, &[u8], bool)> {
        let s = self.slots.get(i)?;
        let (newest, next) = match &s.next {
            NextObs::Newest(v) => (true, v.as_slice()),
            NextObs::Full(v) => (false, v.as_slice()),
        };
        Some((&s.obs, &s.action, s.reward, newest, next, s.done))
    }

    /// Full next stack from an obs stack and its stored next data.
    pub fn expand_next(&self, obs: &[u8], newest: bool, next: Vec<u8>) -> Result<Vec<u8>> {
        let f = self.shape.frame_len();
        if !newest {
            return Ok(next);
        }
        if obs.len() != self.shape.len() || next.len() != f {
            return Err(Error::Parse("stored frame has the wrong size".into()));
        }
        let mut v = obs[f..].to_vec();
        v.extend_from_slice(&next);
        Ok(v)
    }

    /// Slots in storage order.
    pub fn transitions(&self) -> impl Iterator<Item = Transition> + '_ {
        (0..self.slots.len()).map(|i| self.get(i).expect("index in range"))
    }

    /// Rebuilds a buffer from slots in storage order and the saved cursor.
    pub fn from_parts(
        capacity: usize,
        shape: ObsShape,
        action_dim: usize,
        transitions: Vec<Transition>,
        cursor: usize,
    ) -> Result<Self> {
        if transitions.len() > capacity || cursor >= capacity {
            return Err(Error::Parse("replay cursor or length exceeds capacity".into()));
        }
        let mut buf = ReplayBuffer::new(capacity, shape, action_dim)?;
        for t in transitions {
            buf.push(t)?;
        }
        buf.cursor = cursor;
        Ok(buf)
    }
}

/// Cropped, unit-scaled batch ready for the encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelBatch<R> {
    pub obs: Tensor<R>,
    pub next_obs: Tensor<R>,
    pub actions: Tensor<R>,
    /// Extrinsic rewards.
    pub rewards: Vec<f64>,
    pub not_done: Tensor<R>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CropOffset {
    pub top: usize,
    pub left: usize,
}

fn check_crop(h: usize, w: usize, oh: usize, ow: usize) -> Result<()> {
    if oh > h || ow > w || oh == 0 || ow == 0 {
        return Err(Error::config(format!("cannot crop {h}x{w} to {oh}x{ow}")));
    }
    Ok(())
}

/// Uniform offset over the valid range; a full-size crop draws nothing.
pub fn draw_offset(h: usize, w: usize, oh: usize, ow: usize, rng: &mut impl Rng) -> Result<CropOffset> {
    check_crop(h, w, oh, ow)?;
    if oh == h && ow == w {
        return Ok(CropOffset { top: 0, left: 0 });
    }
    Ok(CropOffset {
        top: rng.random_range(0..=h - oh),
        left: rng.random_range(0..=w - ow),
    })
}

pub fn center_offset(h: usize, w: usize, oh: usize, ow: usize) -> Result<CropOffset> {
    check_crop(h, w, oh, ow)?;
    Ok(CropOffset {
        top: (h - oh) / 2,
        left: (w - ow) / 2,
    })
}

/// Copies one window from every plane of `src` into `dst`, scaled to [0, 1].
pub fn crop_into<R: Real>(src: &[u8], shape: ObsShape, off: CropOffset, oh: usize, ow: usize, dst: &mut [R]) {
    let planes = shape.stacked_channels();
    let scale = R::lit(1.0 / 255.0);
    for p in 0..planes {
        for y in 0..oh {
            let row = (p * shape.height + off.top + y) * shape.width + off.left;
            let out = (p * oh + y) * ow;
            for x in 0..ow {
                dst[out + x] = R::lit(src[row + x] as f64) * scale;
            }
        }
    }
}

/// Random `oh × ow` window shared by every frame of the stack.
pub fn random_crop<R: Real>(
    src: &[u8],
    shape: ObsShape,
    oh: usize,
    ow: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<R>, CropOffset)> {
    if src.len() != shape.len() {
        return Err(Error::config("pixel stack does not match its shape"));
    }
    let off = draw_offset(shape.height, shape.width, oh, ow, rng)?;
    let mut dst = vec![R::zero(); shape.stacked_channels() * oh * ow];
    crop_into(src, shape, off, oh, ow, &mut dst);
    Ok((dst, off))
}

pub fn center_crop<R: Real>(src: &[u8], shape: ObsShape, oh: usize, ow: usize) -> Result<Vec<R>> {
    if src.len() != shape.len() {
        return Err(Error::config("pixel stack does not match its shape"));
    }
    let off = center_offset(shape.height, shape.width, oh, ow)?;
    let mut dst = vec![R::zero(); shape.stacked_channels() * oh * ow];
    crop_into(src, shape, off, oh, ow, &mut dst);
    Ok(dst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SHAPE: ObsShape = ObsShape {
        frames: 2,
        channels: 1,
        height: 4,
        width: 4,
    };

    fn tr(tag: u8) -> Transition {
        Transition {
            obs: vec![tag; 32],
            action: vec![tag as f32],
            reward: tag as f32,
            next_obs: vec![tag.wrapping_add(1); 32],
            done: false,
        }
    }

    #[test]
    fn single_item_is_sampled() {
        let mut b = ReplayBuffer::new(4, SHAPE, 1).unwrap();
        b.push(tr(7)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(b.sample(1, &mut rng).unwrap(), vec![tr(7)]);
    }

    #[test]
    fn fifo_eviction_and_saturation() {
        let mut b = ReplayBuffer::new(2, SHAPE, 1).unwrap();
        for i in 0..3 {
            b.push(tr(i)).unwrap();
        }
        assert_eq!(b.len(), 2);
        let all: Vec<_> = b.transitions().map(|t| t.reward).collect();
        assert!(!all.contains(&0.0));
    }

    #[test]
    fn not_ready_and_empty_batch() {
        let mut b = ReplayBuffer::new(8, SHAPE, 1).unwrap();
        b.push(tr(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(b.sample(2, &mut rng), Err(Error::NotReady { have: 1, need: 2 })));
        assert!(b.sample(0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut b = ReplayBuffer::new(8, SHAPE, 1).unwrap();
        let mut t = tr(1);
        t.obs.pop();
        assert!(matches!(b.push(t), Err(Error::Config(_))));
    }

    #[test]
    fn overlapping_stacks_round_trip() {
        let mut b = ReplayBuffer::new(4, SHAPE, 1).unwrap();
        let obs: Vec<u8> = (0..32).collect();
        let mut next: Vec<u8> = (16..32).collect();
        next.extend(100..116);
        let t = Transition {
            obs,
            action: vec![0.5],
            reward: 1.0,
            next_obs: next,
            done: true,
        };
        b.push(t.clone()).unwrap();
        assert!(matches!(b.slots[0].next, NextObs::Newest(_)));
        assert_eq!(b.get(0).unwrap(), t);
    }

    #[test]
    fn full_crop_is_identity_and_draws_nothing() {
        let src: Vec<u8> = (0..32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let before = rng.clone();
        let (out, off) = random_crop::<f64>(&src, SHAPE, 4, 4, &mut rng).unwrap();
        assert_eq!(off, CropOffset { top: 0, left: 0 });
        assert_eq!(rng, before);
        assert!(out.iter().zip(&src).all(|(&o, &s)| o == s as f64 / 255.0));
    }

    #[test]
    fn oversized_crop_rejected() {
        let src = vec![0u8; 32];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(random_crop::<f64>(&src, SHAPE, 5, 4, &mut rng).is_err());
    }

    #[test]
    fn center_offset_for_desk_sizes() {
        assert_eq!(center_offset(76, 76, 68, 68).unwrap(), CropOffset { top: 4, left: 4 });
    }
}
