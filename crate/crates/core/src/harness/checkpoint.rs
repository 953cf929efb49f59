//! Single-file binary checkpoints.
//!
//! All integers and floats are little-endian. A *string* is a `u32` byte
//! length followed by UTF-8 bytes; *bytes* are a `u64` length followed by
//! raw bytes. An *array* is a string name, a `u32` rank, one `u64` per
//! dimension and then the `f32` values in row-major order.
//!
//! ```text
//! magic            8 bytes  "CCFDMCKP"
//! version          u32      FORMAT_VERSION
//! "PARM"           u32 count, then `count` arrays named "<set>/<param>"
//! "OPTM"           u32 count, then per optimizer:
//!                    string name, u64 step, u32 moments,
//!                    then per moment: array m, array v
//! "CURI"           u8 present; if 1: f64 weight, f64 decay,
//!                    f64 re_max, f64 ri_max, u64 t
//! "RNGS"           u64 master seed, u32 count, then per stream:
//!                    string name, 32-byte key, u64 stream, u128 word_pos
//! "RUNS"           string config (key=value text), string metrics CSV,
//!                    u64 env_step, u64 episodes, u64 evaluations,
//!                    f64 episode_return, f64 elapsed_s,
//!                    u32 n + n f64 update averages,
//!                    4 × u64 agent counters, u8 trace present (+32 bytes),
//!                    env: u32 n + n f64 physics, u64 episode step,
//!                    u64 clamp warnings, u32 frames, each frame as bytes
//! "RPLY"           u64 capacity, u64 cursor, u64 length, then per
//!                    transition: bytes obs, u32 n + n f32 action,
//!                    f32 reward, u8 next kind, bytes next, u8 done
//!                    (kind 1: `next` is only the newest frame and the
//!                    rest of the next stack is `obs` minus its oldest
//!                    frame; kind 0: `next` is the full next stack)
//! "END!"
//! checksum         32 bytes, SHA-256 of everything above
//! ```
//!
//! Loading verifies magic, version, every tag and the checksum; a truncated
//! or altered file is always reported as an error.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::agent::{Agent, Scalar};
use super::config::TrainConfig;
use super::metrics::UpdateAverages;
use super::train::{Progress, Trainer};
use crate::autodiff::Tensor;
use crate::envs::{EnvSnapshot, PixelEnv};
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{RngState, Stream, Streams};

pub const MAGIC: &[u8; 8] = b"CCFDMCKP";
pub const FORMAT_VERSION: u32 = 1;

const MAX_STRING: usize = 1 << 30;
const MAX_ELEMENTS: u64 = 1 << 31;

struct HashWriter<W: Write> {
    inner: W,
    hash: Sha256,
}

impl<W: Write> HashWriter<W> {
    fn put(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.hash.update(b);
        self.inner.write_all(b)
    }
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.put(&[v])
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.put(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.put(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.put(&v.to_le_bytes())
    }
    fn str(&mut self, s: &str) -> std::io::Result<()> {
        self.u32(s.len() as u32)?;
        self.put(s.as_bytes())
    }
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.u64(b.len() as u64)?;
        self.put(b)
    }
    fn array(&mut self, name: &str, t: &Tensor<Scalar>) -> std::io::Result<()> {
        self.str(name)?;
        self.u32(t.shape().len() as u32)?;
        for &d in t.shape() {
            self.u64(d as u64)?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.put(&buf)
    }
}

struct HashReader<R: Read> {
    inner: R,
    hash: Sha256,
}

type Io<T> = std::result::Result<T, String>;

fn io_err(e: std::io::Error) -> String {
    if e.kind() == ErrorKind::UnexpectedEof {
        "file is truncated".into()
    } else {
        e.to_string()
    }
}

impl<R: Read> HashReader<R> {
    fn take(&mut self, n: usize) -> Io<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.inner.read_exact(&mut b).map_err(io_err)?;
        self.hash.update(&b);
        Ok(b)
    }
    fn fixed<const N: usize>(&mut self) -> Io<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(io_err)?;
        self.hash.update(b);
        Ok(b)
    }
    fn u8(&mut self) -> Io<u8> {
        Ok(self.fixed::<1>()?[0])
    }
    fn u32(&mut self) -> Io<u32> {
        Ok(u32::from_le_bytes(self.fixed()?))
    }
    fn u64(&mut self) -> Io<u64> {
        Ok(u64::from_le_bytes(self.fixed()?))
    }
    fn f32(&mut self) -> Io<f32> {
        Ok(f32::from_le_bytes(self.fixed()?))
    }
    fn f64(&mut self) -> Io<f64> {
        Ok(f64::from_le_bytes(self.fixed()?))
    }
    fn str(&mut self) -> Io<String> {
        let n = self.u32()? as usize;
        if n > MAX_STRING {
            return Err(format!("implausible string length {n}"));
        }
        String::from_utf8(self.take(n)?).map_err(|_| "invalid UTF-8 string".into())
    }
    fn bytes(&mut self) -> Io<Vec<u8>> {
        let n = self.u64()?;
        if n > MAX_ELEMENTS {
            return Err(format!("implausible byte length {n}"));
        }
        self.take(n as usize)
    }
    fn count(&mut self, what: &str) -> Io<usize> {
        let n = self.u32()? as usize;
        if n as u64 > MAX_ELEMENTS {
            return Err(format!("implausible {what} count {n}"));
        }
        Ok(n)
    }
    fn tag(&mut self, want: &[u8; 4]) -> Io<()> {
        let got = self.fixed::<4>()?;
        if &got != want {
            return Err(format!(
                "expected section {:?}, found {:?}",
                String::from_utf8_lossy(want),
                String::from_utf8_lossy(&got)
            ));
        }
        Ok(())
    }
    fn array(&mut self) -> Io<(String, Tensor<Scalar>)> {
        let name = self.str()?;
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(format!("array {name:?} has implausible rank {rank}"));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut n: u64 = 1;
        for _ in 0..rank {
            let d = self.u64()?;
            n = n.saturating_mul(d);
            shape.push(d as usize);
        }
        if n > MAX_ELEMENTS {
            return Err(format!("array {name:?} is implausibly large"));
        }
        let raw = self.take(n as usize * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| e.to_string())?;
        Ok((name, t))
    }
}

/// Everything a run needs to continue exactly where it stopped.
pub struct Snapshot {
    pub cfg: TrainConfig,
    pub agent: Agent,
    pub env: PixelEnv,
    pub buffer: ReplayBuffer,
    pub streams: Streams,
    pub progress: Progress,
    pub metrics_text: String,
}

pub fn save(path: &Path, t: &Trainer) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write_all(&tmp, t).map_err(|e| Error::Checkpoint {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_all(path: &Path, t: &Trainer) -> std::io::Result<()> {
    let mut w = HashWriter {
        inner: BufWriter::new(File::create(path)?),
        hash: Sha256::new(),
    };
    w.put(MAGIC)?;
    w.u32(FORMAT_VERSION)?;

    w.put(b"PARM")?;
    let sets = t.agent.parameter_sets();
    w.u32(sets.iter().map(|(_, s)| s.len() as u32).sum())?;
    for (set, params) in &sets {
        for (name, value) in params.iter() {
            w.array(&format!("{set}/{name}"), value)?;
        }
    }

    w.put(b"OPTM")?;
    let opts = t.agent.optimizers();
    w.u32(opts.len() as u32)?;
    for (name, opt) in &opts {
        w.str(name)?;
        w.u64(opt.step_count())?;
        let moments: Vec<_> = opt.moments().collect();
        w.u32(moments.len() as u32)?;
        for (p, m, v) in moments {
            w.array(p, m)?;
            w.array(p, v)?;
        }
    }

    w.put(b"CURI")?;
    match t.agent.curiosity() {
        Some(c) => {
            w.u8(1)?;
            w.f64(c.weight)?;
            w.f64(c.decay)?;
            w.f64(c.re_max())?;
            w.f64(c.ri_max())?;
            w.u64(c.step())?;
        }
        None => w.u8(0)?,
    }

    w.put(b"RNGS")?;
    w.u64(t.streams.seed)?;
    let states = t.streams.states();
    w.u32(states.len() as u32)?;
    for (s, st) in states {
        w.str(s.name())?;
        w.put(&st.seed)?;
        w.u64(st.stream)?;
        w.put(&st.word_pos.to_le_bytes())?;
    }

    w.put(b"RUNS")?;
    w.str(&t.cfg.to_text())?;
    w.str(t.metrics_text())?;
    let p = &t.progress;
    w.u64(p.env_step)?;
    w.u64(p.episodes)?;
    w.u64(p.evaluations)?;
    w.f64(p.episode_return)?;
    w.f64(t.elapsed_for_checkpoint())?;
    let avg = p.averages.to_vec();
    w.u32(avg.len() as u32)?;
    for v in avg {
        w.f64(v)?;
    }
    for c in t.agent.counters() {
        w.u64(c)?;
    }
    match t.agent.trace_state() {
        Some(d) => {
            w.u8(1)?;
            w.put(&d)?;
        }
        None => w.u8(0)?,
    }
    let snap = t.env.snapshot();
    w.u32(snap.physics.len() as u32)?;
    for v in &snap.physics {
        w.f64(*v)?;
    }
    w.u64(snap.step)?;
    w.u64(snap.clamp_warnings)?;
    w.u32(snap.frames.len() as u32)?;
    for f in &snap.frames {
        w.bytes(f)?;
    }

    w.put(b"RPLY")?;
    w.u64(t.buffer.capacity() as u64)?;
    w.u64(t.buffer.cursor() as u64)?;
    w.u64(t.buffer.len() as u64)?;
    for i in 0..t.buffer.len() {
        let (obs, action, reward, newest, next, done) = t.buffer.raw_slot(i).expect("slot in range");
        w.bytes(obs)?;
        w.u32(action.len() as u32)?;
        for a in action {
            w.put(&a.to_le_bytes())?;
        }
        w.put(&reward.to_le_bytes())?;
        w.u8(newest as u8)?;
        w.bytes(next)?;
        w.u8(done as u8)?;
    }
    w.put(b"END!")?;

    let digest = w.hash.finalize();
    w.inner.write_all(&digest)?;
    w.inner.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Snapshot> {
    let fail = |reason: String| Error::Checkpoint {
        path: PathBuf::from(path),
        reason,
    };
    let file = File::open(path).map_err(|e| fail(e.to_string()))?;
    let mut r = HashReader {
        inner: BufReader::new(file),
        hash: Sha256::new(),
    };
    let snap = read_all(&mut r).map_err(fail)?;
    let want: [u8; 32] = r.hash.finalize().into();
    let mut got = [0u8; 32];
    r.inner.read_exact(&mut got).map_err(|e| fail(io_err(e)))?;
    if got != want {
        return Err(fail("checksum mismatch, the file is corrupted".into()));
    }
    let mut extra = [0u8; 1];
    if r.inner.read(&mut extra).map_err(|e| fail(e.to_string()))? != 0 {
        return Err(fail("trailing bytes after checksum".into()));
    }
    Ok(snap)
}

fn read_all<R: Read>(r: &mut HashReader<R>) -> Io<Snapshot> {
    let magic = r.fixed::<8>()?;
    if &magic != MAGIC {
        return Err("not a checkpoint file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(format!("format version {version} is not supported (expected {FORMAT_VERSION})"));
    }

    r.tag(b"PARM")?;
    let n = r.count("array")?;
    let mut arrays = Vec::with_capacity(n);
    for _ in 0..n {
        arrays.push(r.array()?);
    }

    r.tag(b"OPTM")?;
    let n = r.count("optimizer")?;
    let mut opts = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.str()?;
        let step = r.u64()?;
        let m = r.count("moment")?;
        let mut moments = Vec::with_capacity(m);
        for _ in 0..m {
            let (p, first) = r.array()?;
            let (_, second) = r.array()?;
            moments.push((p, first, second));
        }
        opts.push((name, step, moments));
    }

    r.tag(b"CURI")?;
    let curiosity = match r.u8()? {
        0 => None,
        1 => Some((r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.u64()?)),
        x => return Err(format!("bad curiosity flag {x}")),
    };

    r.tag(b"RNGS")?;
    let seed = r.u64()?;
    let n = r.count("rng stream")?;
    let mut states = Vec::with_capacity(n);
    for (i, want) in (0..n).zip(Stream::ALL.iter().chain(std::iter::repeat(&Stream::Env))) {
        let name = r.str()?;
        if i >= Stream::ALL.len() || name != want.name() {
            return Err(format!("unexpected rng stream {name:?}"));
        }
        states.push(RngState {
            seed: r.fixed()?,
            stream: r.u64()?,
            word_pos: u128::from_le_bytes(r.fixed()?),
        });
    }
    let streams = Streams::restore(seed, &states).map_err(|e| e.to_string())?;

    r.tag(b"RUNS")?;
    let cfg = TrainConfig::from_text(&r.str()?).map_err(|e| e.to_string())?;
    let metrics_text = r.str()?;
    let env_step = r.u64()?;
    let episodes = r.u64()?;
    let evaluations = r.u64()?;
    let episode_return = r.f64()?;
    let elapsed_s = r.f64()?;
    let n = r.count("average")?;
    let avg: Vec<f64> = (0..n).map(|_| r.f64()).collect::<Io<_>>()?;
    let averages = UpdateAverages::from_vec(&avg).map_err(|e| e.to_string())?;
    let counters = [r.u64()?, r.u64()?, r.u64()?, r.u64()?];
    let trace = match r.u8()? {
        0 => None,
        1 => Some(r.fixed::<32>()?),
        x => return Err(format!("bad trace flag {x}")),
    };
    let n = r.count("physics value")?;
    let physics: Vec<f64> = (0..n).map(|_| r.f64()).collect::<Io<_>>()?;
    let ep_step = r.u64()?;
    let clamp_warnings = r.u64()?;
    let n = r.count("frame")?;
    let frames: Vec<Vec<u8>> = (0..n).map(|_| r.bytes()).collect::<Io<_>>()?;

    r.tag(b"RPLY")?;
    let capacity = r.u64()? as usize;
    let cursor = r.u64()? as usize;
    let len = r.u64()?;
    if len > capacity as u64 {
        return Err("replay length exceeds capacity".into());
    }
    let env_cfg = cfg.env_config();
    let shape = env_cfg.obs_shape();
    let layout = ReplayBuffer::new(capacity.max(1), shape, cfg.env.action_dim()).map_err(|e| e.to_string())?;
    let mut transitions = Vec::with_capacity(len as usize);
    for _ in 0..len {
        let obs = r.bytes()?;
        let na = r.count("action")?;
        let action = (0..na).map(|_| r.f32()).collect::<Io<_>>()?;
        let reward = r.f32()?;
        let newest = match r.u8()? {
            0 => false,
            1 => true,
            x => return Err(format!("bad next-observation kind {x}")),
        };
        let next = r.bytes()?;
        let next_obs = layout.expand_next(&obs, newest, next).map_err(|e| e.to_string())?;
        let done = r.u8()? != 0;
        transitions.push(Transition {
            obs,
            action,
            reward,
            next_obs,
            done,
        });
    }
    r.tag(b"END!")?;

    // rebuild the agent skeleton from the configuration, then overwrite
    let mut scratch = Streams::new(cfg.seed);
    let mut agent = Agent::new(&cfg, &mut scratch).map_err(|e| e.to_string())?;
    let expected: usize = agent.parameter_sets().iter().map(|(_, s)| s.len()).sum();
    if expected != arrays.len() {
        return Err(format!("checkpoint holds {} arrays, model has {expected}", arrays.len()));
    }
    for (full, value) in arrays {
        let (set, name) = full
            .split_once('/')
            .ok_or_else(|| format!("array name {full:?} lacks a set prefix"))?;
        let mut sets = agent.parameter_sets_mut();
        let target = sets
            .iter_mut()
            .find(|(s, _)| *s == set)
            .ok_or_else(|| format!("unknown parameter set {set:?}"))?;
        target.1.set(name, value).map_err(|e| e.to_string())?;
    }
    {
        let mut live = agent.optimizers_mut();
        if live.len() != opts.len() {
            return Err(format!("checkpoint holds {} optimizers, model has {}", opts.len(), live.len()));
        }
        for ((lname, lopt), (name, step, moments)) in live.iter_mut().zip(opts) {
            if *lname != name {
                return Err(format!("optimizer {name:?} found where {lname:?} was expected"));
            }
            lopt.restore(step, moments).map_err(|e| e.to_string())?;
        }
    }
    match (agent.curiosity_mut(), curiosity) {
        (Some(c), Some((weight, decay, re_max, ri_max, t))) => {
            c.weight = weight;
            c.decay = decay;
            c.restore(re_max, ri_max, t);
        }
        (None, None) => {}
        _ => return Err("curiosity section does not match the configured algorithm".into()),
    }
    agent.restore_counters(counters);
    agent.restore_trace(trace);

    let mut env = PixelEnv::new(env_cfg.clone()).map_err(|e| e.to_string())?;
    env.restore(&EnvSnapshot {
        physics,
        step: ep_step,
        clamp_warnings,
        frames,
    })
    .map_err(|e| e.to_string())?;
    let buffer = ReplayBuffer::from_parts(capacity, env_cfg.obs_shape(), cfg.env.action_dim(), transitions, cursor)
        .map_err(|e| e.to_string())?;

    Ok(Snapshot {
        cfg,
        agent,
        env,
        buffer,
        streams,
        progress: Progress {
            env_step,
            episodes,
            evaluations,
            episode_return,
            averages,
            elapsed_s,
        },
        metrics_text,
    })
}
