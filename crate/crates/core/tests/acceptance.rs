//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is always
//! printed. The two learning experiments (7 and 8) take many CPU hours and
//! only run when asked for:
//!
//! ```text
//! cargo test --release -p ccfdm-core --test acceptance -- --ignored
//! ```

use std::f64::consts::LN_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ccfdm_core::autodiff::gradcheck::{check_gradients, GradCheckConfig};
use ccfdm_core::autodiff::{BoundParams, ParameterSet};
use ccfdm_core::contrastive::{info_nce, Similarity, SimilarityKind};
use ccfdm_core::curiosity::{half_life, prediction_error, CuriosityState};
use ccfdm_core::encoders::{ActionEmbedding, EncoderArch, EncoderNet, EncoderPair, ForwardDynamics};
use ccfdm_core::envs::pendulum::PendulumState;
use ccfdm_core::envs::{EnvConfig, EnvKind, PixelEnv};
use ccfdm_core::harness::train::{Trainer, METRICS_FILE};
use ccfdm_core::harness::{checkpoint, random_policy_baseline, train, Algorithm, TrainConfig};
use ccfdm_core::replay::center_crop;
use ccfdm_core::sac::{actor_loss, critic_loss, standard_normal, Actor, Critic, SacConfig};
use ccfdm_core::{Adam, AdamConfig, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

/// Number, name, check, and whether it is a long learning run.
type Criterion = (u32, &'static str, fn() -> Check, bool);

const GRAD_TOL: f64 = 1e-4;
const GRAD_INSTANCES: usize = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(120);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- gradients

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    standard_normal(shape, rng)
}

/// Keeps samples away from kinks such as relu at 0.
fn away_from_zero(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|x| x.signum() * (x.abs() + 0.05))
}

/// Fixed pseudo-random weights so that any output reduces to a scalar with
/// a gradient in every direction.
fn project(tape: &mut Tape<f64>, y: Var) -> ccfdm_core::Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let w = Tensor::from_fn(&shape, |i| ((i as f64 + 1.0) * 0.754_877_666).fract() * 2.0 - 1.0);
    let c = tape.constant(w);
    let m = tape.mul(y, c)?;
    Ok(tape.sum(m))
}

fn small_sac(hidden: usize) -> SacConfig {
    SacConfig {
        hidden_dim: hidden,
        ..SacConfig::default()
    }
}

/// Overwrites every parameter with fresh normal noise scaled by `scale`.
fn randomize(params: &mut ParameterSet<f64>, scale: f64, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for n in names {
        let shape = params.get(&n).unwrap().shape().to_vec();
        params.set(&n, randn(&shape, rng).map(|x| x * scale)).unwrap();
    }
}

/// Largest relative error of parameter gradients, probing up to `samples`
/// random entries of every tensor with central differences.
fn check_params<F>(params: &ParameterSet<f64>, samples: usize, rng: &mut ChaCha8Rng, build: F) -> ccfdm_core::Result<f64>
where
    F: Fn(&mut Tape<f64>, &BoundParams) -> ccfdm_core::Result<Var>,
{
    let cfg = GradCheckConfig::default();
    let mut tape = Tape::new();
    let bound = tape.bind(params);
    let loss = build(&mut tape, &bound)?;
    let grads = tape.backward(loss)?;
    let eval = |p: &ParameterSet<f64>| -> ccfdm_core::Result<f64> {
        let mut t = Tape::new();
        let b = t.bind_frozen(p);
        let l = build(&mut t, &b)?;
        Ok(t.value(l).data()[0])
    };
    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    for (name, var) in bound.iter() {
        let analytic = grads.get_or_zeros(&tape, var);
        let orig = params.get(name)?.clone();
        for _ in 0..samples.min(orig.len()) {
            let j = rng.random_range(0..orig.len());
            let mut t = orig.clone();
            t.data_mut()[j] += cfg.step;
            work.set(name, t.clone())?;
            let plus = eval(&work)?;
            t.data_mut()[j] -= 2.0 * cfg.step;
            work.set(name, t)?;
            let minus = eval(&work)?;
            work.set(name, orig.clone())?;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor));
        }
    }
    Ok(worst)
}

fn inputs_err<F>(inputs: &[Tensor<f64>], f: F) -> ccfdm_core::Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> ccfdm_core::Result<Var>,
{
    Ok(check_gradients(inputs, GradCheckConfig::default(), f)?.max_rel_error)
}

type Family = (&'static str, fn(&mut ChaCha8Rng) -> ccfdm_core::Result<f64>);

fn families() -> Vec<Family> {
    vec![
        ("dense", |r| {
            let (b, i, o) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..5));
            let ins = [randn(&[b, i], r), randn(&[o, i], r), randn(&[o], r)];
            inputs_err(&ins, |t, v| {
                let y = t.linear(v[0], v[1], v[2])?;
                project(t, y)
            })
        }),
        ("conv", |r| {
            let (b, c, o) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
            let k = r.random_range(1..4);
            let h = r.random_range(k..k + 4);
            let stride = r.random_range(1..3);
            let ins = [randn(&[b, c, h, h], r), randn(&[o, c, k, k], r), randn(&[o], r)];
            inputs_err(&ins, |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], stride)?;
                project(t, y)
            })
        }),
        ("relu", |r| {
            let shape = [r.random_range(1..4), r.random_range(1..6)];
            inputs_err(&[away_from_zero(randn(&shape, r))], |t, v| {
                let y = t.relu(v[0]);
                project(t, y)
            })
        }),
        ("tanh", |r| {
            let shape = [r.random_range(1..4), r.random_range(1..6)];
            inputs_err(&[randn(&shape, r)], |t, v| {
                let y = t.tanh(v[0]);
                project(t, y)
            })
        }),
        ("exp", |r| {
            let shape = [r.random_range(1..4), r.random_range(1..6)];
            inputs_err(&[randn(&shape, r)], |t, v| {
                let y = t.exp(v[0]);
                project(t, y)
            })
        }),
        ("log", |r| {
            let shape = [r.random_range(1..4), r.random_range(1..6)];
            inputs_err(&[randn(&shape, r).map(|x| x.abs() + 0.2)], |t, v| {
                let y = t.log(v[0]);
                project(t, y)
            })
        }),
        ("square", |r| {
            let shape = [r.random_range(1..4), r.random_range(1..6)];
            inputs_err(&[randn(&shape, r)], |t, v| {
                let y = t.square(v[0]);
                project(t, y)
            })
        }),
        ("minimum", |r| {
            let shape = [r.random_range(1..4), r.random_range(1..6)];
            let a = randn(&shape, r);
            let gap = away_from_zero(randn(&shape, r));
            let b = Tensor::new(shape.to_vec(), a.data().iter().zip(gap.data()).map(|(x, g)| x + g).collect())?;
            inputs_err(&[a, b], |t, v| {
                let y = t.minimum(v[0], v[1])?;
                project(t, y)
            })
        }),
        ("layer_norm", |r| {
            let (b, d) = (r.random_range(1..4), r.random_range(2..7));
            let ins = [randn(&[b, d], r), randn(&[d], r), randn(&[d], r)];
            inputs_err(&ins, |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                project(t, y)
            })
        }),
        ("matmul", |r| {
            let (m, k, n) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..4));
            let ins = [randn(&[m, k], r), randn(&[k, n], r), randn(&[n, k], r)];
            inputs_err(&ins, |t, v| {
                let a = t.matmul(v[0], v[1])?;
                let b = t.matmul_nt(v[0], v[2])?;
                let s = t.add(a, b)?;
                project(t, s)
            })
        }),
        ("reshape_concat_slice", |r| {
            let (b, d1, d2) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..4));
            let ins = [randn(&[b, d1], r), randn(&[b, d2], r), randn(&[1, 1], r)];
            inputs_err(&ins, |t, v| {
                let c = t.concat_last(v[0], v[1])?;
                let s = t.slice_last(c, 1.min(d1 + d2 - 1), 1)?;
                let sl = t.sum_last(c);
                let scaled = t.mul_scalar_var(sl, v[2])?;
                let flat = t.reshape(c, &[b * (d1 + d2)])?;
                let m = t.mean(flat);
                let a = project(t, s)?;
                let z = project(t, scaled)?;
                let y = t.add(a, z)?;
                let y = t.add(y, m)?;
                let y = t.add_scalar(y, 0.5);
                Ok(t.neg(y))
            })
        }),
        ("cross_entropy", |r| {
            let (b, c) = (r.random_range(1..5), r.random_range(1..6));
            let targets: Vec<usize> = (0..b).map(|_| r.random_range(0..c)).collect();
            inputs_err(&[randn(&[b, c], r)], move |t, v| t.cross_entropy(v[0], &targets))
        }),
        ("info_nce_dot", |r| {
            let (k, d) = (r.random_range(1..6), r.random_range(1..5));
            let keys = randn(&[k, d], r);
            let sim = Similarity::<f64>::new(SimilarityKind::Dot, d)?;
            inputs_err(&[randn(&[k, d], r)], |t, v| {
                let p = t.bind_frozen(&sim.params);
                let kv = t.constant(keys.clone());
                info_nce(t, &sim, &p, v[0], kv)
            })
        }),
        ("info_nce_bilinear", |r| {
            let (k, d) = (r.random_range(1..6), r.random_range(1..5));
            let keys = randn(&[k, d], r);
            let queries = randn(&[k, d], r);
            let mut sim = Similarity::<f64>::new(SimilarityKind::Bilinear, d)?;
            randomize(&mut sim.params, 0.7, r);
            let e1 = inputs_err(std::slice::from_ref(&queries), |t, v| {
                let p = t.bind_frozen(&sim.params);
                let kv = t.constant(keys.clone());
                info_nce(t, &sim, &p, v[0], kv)
            })?;
            let e2 = check_params(&sim.params, 16, r, |t, p| {
                let q = t.constant(queries.clone());
                let kv = t.constant(keys.clone());
                info_nce(t, &sim, p, q, kv)
            })?;
            Ok(e1.max(e2))
        }),
        ("bilinear_similarity", |r| {
            let (k, d) = (r.random_range(1..5), r.random_range(1..5));
            let keys = randn(&[k, d], r);
            let queries = randn(&[k, d], r);
            let mut sim = Similarity::<f64>::new(SimilarityKind::Bilinear, d)?;
            randomize(&mut sim.params, 0.7, r);
            let e1 = inputs_err(std::slice::from_ref(&queries), |t, v| {
                let p = t.bind_frozen(&sim.params);
                let kv = t.constant(keys.clone());
                let l = sim.logits(t, &p, v[0], kv)?;
                project(t, l)
            })?;
            let e2 = check_params(&sim.params, 16, r, |t, p| {
                let q = t.constant(queries.clone());
                let kv = t.constant(keys.clone());
                let l = sim.logits(t, p, q, kv)?;
                project(t, l)
            })?;
            Ok(e1.max(e2))
        }),
        ("critic_loss", |r| {
            let b = r.random_range(1..6);
            let target = randn(&[b, 1], r);
            inputs_err(&[randn(&[b, 1], r), randn(&[b, 1], r)], |t, v| {
                let tv = t.constant(target.clone());
                critic_loss(t, v[0], v[1], tv)
            })
        }),
        ("actor_loss", |r| {
            let b = r.random_range(1..6);
            let alpha = r.random_range(0.01..1.0);
            let q1 = randn(&[b, 1], r);
            let gap = away_from_zero(randn(&[b, 1], r));
            let q2 = Tensor::new(vec![b, 1], q1.data().iter().zip(gap.data()).map(|(x, g)| x + g).collect())?;
            inputs_err(&[randn(&[b, 1], r), q1, q2], |t, v| actor_loss(t, v[0], v[1], v[2], alpha))
        }),
        ("actor_sample", |r| {
            let (b, dz, da) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..3));
            let actor = Actor::<f64>::new(dz, da, &small_sac(6), r)?;
            let noise = randn(&[b, da], r);
            let latent = randn(&[b, dz], r);
            let build = |t: &mut Tape<f64>, p: &BoundParams, z: Var| {
                let n = t.constant(noise.clone());
                let (a, logp) = actor.sample(t, p, z, n)?;
                let pa = project(t, a)?;
                let pl = t.sum(logp);
                let pl = t.scale(pl, 0.3);
                t.add(pa, pl)
            };
            let e1 = inputs_err(std::slice::from_ref(&latent), |t, v| {
                let p = t.bind_frozen(&actor.params);
                build(t, &p, v[0])
            })?;
            let e2 = check_params(&actor.params, 8, r, |t, p| {
                let z = t.constant(latent.clone());
                build(t, p, z)
            })?;
            Ok(e1.max(e2))
        }),
        ("critic_forward", |r| {
            let (b, dz, da) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..3));
            let mut critic = Critic::<f64>::new(dz, da, &small_sac(6), r)?;
            randomize(&mut critic.params, 0.5, r);
            let latent = randn(&[b, dz], r);
            let action = randn(&[b, da], r);
            let build = |t: &mut Tape<f64>, p: &BoundParams, z: Var, a: Var| {
                let (q1, q2) = critic.forward(t, p, z, a)?;
                let p1 = project(t, q1)?;
                let p2 = t.sum(q2);
                t.add(p1, p2)
            };
            let e1 = inputs_err(&[latent.clone(), action.clone()], |t, v| {
                let p = t.bind_frozen(&critic.params);
                build(t, &p, v[0], v[1])
            })?;
            let e2 = check_params(&critic.params, 8, r, |t, p| {
                let z = t.constant(latent.clone());
                let a = t.constant(action.clone());
                build(t, p, z, a)
            })?;
            Ok(e1.max(e2))
        }),
        ("forward_dynamics", |r| {
            let (b, dz, da) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..3));
            let embed = ActionEmbedding::<f64>::new(da, 5, dz, r)?;
            let mut fdm = ForwardDynamics::<f64>::new(dz, dz, 6, r)?;
            randomize(&mut fdm.params, 0.5, r);
            let latent = randn(&[b, dz], r);
            let action = randn(&[b, da], r);
            let keys = randn(&[b, dz], r);
            // squared prediction error, the quantity curiosity is built on
            let build = |t: &mut Tape<f64>, pe: &BoundParams, pf: &BoundParams, z: Var, a: Var| {
                let f = embed.forward(t, pe, a)?;
                let pred = fdm.forward(t, pf, z, f)?;
                let k = t.constant(keys.clone());
                let d = t.sub(pred, k)?;
                let s = t.square(d);
                let s = t.sum_last(s);
                let m = t.mean(s);
                let pp = project(t, pred)?;
                t.add(m, pp)
            };
            let e1 = inputs_err(&[latent.clone(), action.clone()], |t, v| {
                let pe = t.bind_frozen(&embed.params);
                let pf = t.bind_frozen(&fdm.params);
                build(t, &pe, &pf, v[0], v[1])
            })?;
            let e2 = check_params(&fdm.params, 8, r, |t, pf| {
                let pe = t.bind_frozen(&embed.params);
                let z = t.constant(latent.clone());
                let a = t.constant(action.clone());
                build(t, &pe, pf, z, a)
            })?;
            let e3 = check_params(&embed.params, 8, r, |t, pe| {
                let pf = t.bind_frozen(&fdm.params);
                let z = t.constant(latent.clone());
                let a = t.constant(action.clone());
                build(t, pe, &pf, z, a)
            })?;
            Ok(e1.max(e2).max(e3))
        }),
        ("encoder", |r| {
            let arch = EncoderArch {
                in_channels: r.random_range(1..3),
                image_size: r.random_range(7..10),
                filters: 2,
                conv_layers: 2,
                latent_dim: r.random_range(2..4),
            };
            let mut net = EncoderNet::<f64>::new(arch.clone(), r)?;
            randomize(&mut net.params, 0.5, r);
            let s = arch.image_size;
            let obs = randn(&[1, arch.in_channels, s, s], r).map(|x| x.abs());
            let e1 = inputs_err(std::slice::from_ref(&obs), |t, v| {
                let p = t.bind_frozen(&net.params);
                let z = net.forward(t, &p, v[0])?;
                project(t, z)
            })?;
            let e2 = check_params(&net.params, 6, r, |t, p| {
                let o = t.constant(obs.clone());
                let z = net.forward(t, p, o)?;
                project(t, z)
            })?;
            Ok(e1.max(e2))
        }),
    ]
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = (0.0f64, "");
    let mut failures = Vec::new();
    let fams = families();
    for (name, f) in &fams {
        let mut fam_worst: f64 = 0.0;
        for _ in 0..GRAD_INSTANCES {
            fam_worst = fam_worst.max(f(&mut rng).map_err(err)?);
        }
        if fam_worst > GRAD_TOL {
            failures.push(format!("{name} {fam_worst:.2e}"));
        }
        if fam_worst >= worst.0 {
            worst = (fam_worst, name);
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "{} op families x {GRAD_INSTANCES} instances, worst relative error {:.2e} ({}), {:.1}s",
        fams.len(),
        worst.0,
        worst.1,
        elapsed.as_secs_f64()
    );
    if !failures.is_empty() {
        return Err(format!("{detail}; over tolerance: {}", failures.join(", ")));
    }
    ensure(elapsed < GRAD_BUDGET, detail)
}

// ------------------------------------------------------------- contrastive

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for kind in [SimilarityKind::Dot, SimilarityKind::Bilinear] {
        for k in [1usize, 2, 8, 128] {
            let d = 16;
            let mut sim = Similarity::<f64>::new(kind, d).map_err(err)?;
            randomize(&mut sim.params, 0.3, &mut rng);
            let q_row = randn(&[1, d], &mut rng);
            let k_row = randn(&[1, d], &mut rng);
            let rep = |row: &Tensor<f64>| Tensor::from_fn(&[k, d], |i| row.data()[i % d]);
            let mut tape = Tape::new();
            let p = tape.bind(&sim.params);
            let q = tape.leaf(rep(&q_row));
            let keys = tape.leaf(rep(&k_row));
            let loss = info_nce(&mut tape, &sim, &p, q, keys).map_err(err)?;
            let value = tape.value(loss).data()[0];
            let expected = (k as f64).ln();
            worst = worst.max((value - expected).abs());
            if (value - expected).abs() > 1e-9 {
                return Err(format!("{kind:?} K={k}: loss {value} vs ln K {expected}"));
            }
            if k == 1 && value != 0.0 {
                return Err(format!("{kind:?} K=1 loss {value}"));
            }
            let g = tape.backward(loss).map_err(err)?;
            if g.get_or_zeros(&tape, keys).data().iter().any(|&x| x != 0.0) {
                return Err(format!("{kind:?} K={k}: gradient reached the keys"));
            }
        }
        // and for a generic batch
        let mut tape = Tape::new();
        let sim = Similarity::<f64>::new(kind, 5).map_err(err)?;
        let p = tape.bind(&sim.params);
        let q = tape.leaf(randn(&[6, 5], &mut rng));
        let keys = tape.leaf(randn(&[6, 5], &mut rng));
        let loss = info_nce(&mut tape, &sim, &p, q, keys).map_err(err)?;
        let g = tape.backward(loss).map_err(err)?;
        if g.get_or_zeros(&tape, keys).data().iter().any(|&x| x != 0.0) {
            return Err(format!("{kind:?}: gradient reached the keys of a random batch"));
        }
    }
    Ok(format!(
        "K in {{1,2,8,128}}, dot and bilinear: max |loss - ln K| = {worst:.1e}, key gradients identically 0"
    ))
}

// --------------------------------------------------------------------- EMA

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let arch = EncoderArch {
        in_channels: 3,
        image_size: 12,
        filters: 4,
        conv_layers: 2,
        latent_dim: 6,
    };
    let mut worst: f64 = 0.0;
    for tau in [0.01, 0.5, 1.0] {
        let mut pair = EncoderPair::<f64>::new(arch.clone(), &mut rng).map_err(err)?;
        randomize(&mut pair.query.params, 1.0, &mut rng);
        randomize(&mut pair.key.params, 1.0, &mut rng);
        let q = pair.query.params.clone();
        let k0 = pair.key.params.clone();
        for n in 1..=300i32 {
            pair.momentum_sync(tau).map_err(err)?;
            let decay = (1.0 - tau).powi(n);
            for (name, kv) in pair.key.params.iter() {
                let (qv, k0v) = (q.get(name).map_err(err)?, k0.get(name).map_err(err)?);
                for ((&k, &qq), &k0) in kv.data().iter().zip(qv.data()).zip(k0v.data()) {
                    let expected = qq + decay * (k0 - qq);
                    worst = worst.max((k - expected).abs());
                }
            }
        }
        if pair.query.params != q {
            return Err("momentum sync modified the query encoder".into());
        }
    }
    ensure(
        worst <= 1e-12,
        format!("tau in {{0.01,0.5,1}}, 300 syncs each: max deviation from geometric law {worst:.1e}"),
    )
}

// --------------------------------------------------------------- curiosity

fn tiny(env: EnvKind, steps: u64) -> TrainConfig {
    TrainConfig {
        env,
        steps,
        seed: 11,
        batch_size: 8,
        warmup_steps: 20,
        eval_interval: 40,
        eval_episodes: 2,
        episode_length: 25,
        image_size: 28,
        crop_size: 24,
        encoder_filters: 4,
        latent_dim: 8,
        hidden_dim: 16,
        aux_hidden_dim: 8,
        replay_capacity: 500,
        fixed_clock: true,
        ..TrainConfig::default()
    }
}

fn run(cfg: TrainConfig, dir: &Path) -> Result<(Option<String>, String), String> {
    let s = train(cfg, dir).map_err(err)?;
    let m = std::fs::read_to_string(dir.join(METRICS_FILE)).map_err(err)?;
    Ok((s.update_digest, m))
}

fn criterion_4() -> Check {
    let gamma = 2e-5;
    let mut c = CuriosityState::new(0.2, gamma);
    c.update_maxima(1.5, 4.0);
    let error = 2.5;
    c.set_step(0);
    let r0 = c.intrinsic_reward(error);
    let mut worst: f64 = 0.0;
    for t in [1u64, 7, 100, 1_000, 34_657, 40_000, 100_000, 500_000] {
        c.set_step(t);
        let ratio = c.intrinsic_reward(error) / r0;
        worst = worst.max((ratio - (-gamma * t as f64).exp()).abs());
    }
    if worst > 1e-12 {
        return Err(format!("decay ratio deviates by {worst:.1e}"));
    }
    let hl = half_life(gamma);
    // first whole step at which the bonus has halved; steps only move
    // forward, so scan with a fresh state
    let mut c = CuriosityState::new(0.2, gamma);
    let mut t = 0u64;
    loop {
        c.set_step(t);
        if c.decay_factor() <= 0.5 {
            break;
        }
        t += 1;
    }
    if (hl - 34_657.0).abs() > 1.0 || t.abs_diff(34_657) > 1 {
        return Err(format!("half-life {hl} (first halved step {t}), expected 34657 +- 1"));
    }
    if (hl - LN_2 / gamma).abs() > 1e-9 {
        return Err("half-life formula".into());
    }

    let mut zero = tiny(EnvKind::PointMass, 90);
    zero.intrinsic_weight = 0.0;
    zero.trace_updates = true;
    let mut off = zero.clone();
    off.intrinsic_weight = 0.2;
    off.no_curiosity = true;
    let (a, b) = (tempdir(), tempdir());
    let (da, _) = run(zero, a.path())?;
    let (db, _) = run(off, b.path())?;
    ensure(
        da.is_some() && da == db,
        format!(
            "ratio error {worst:.1e}, half-life {hl:.2} (first halved step {t}), C=0 update digest {} no-curiosity",
            if da == db { "==" } else { "!=" }
        ),
    )
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

// --------------------------------------------------------------- reduction

fn criterion_5() -> Check {
    let mut details = Vec::new();
    for env in [EnvKind::Pendulum, EnvKind::PointMass] {
        let mut ablated = tiny(env, 100);
        ablated.no_contrastive = true;
        ablated.no_curiosity = true;
        ablated.no_augment = true;
        ablated.trace_updates = true;
        let mut plain = ablated.clone();
        plain.algorithm = Algorithm::PixelSac;
        let (a, b) = (tempdir(), tempdir());
        let (da, ma) = run(ablated, a.path())?;
        let (db, mb) = run(plain, b.path())?;
        if da != db || ma != mb {
            return Err(format!("{env}: ablated run differs from pixel SAC"));
        }
        details.push(format!("{env}: {} metric lines equal", ma.lines().count()));
    }
    Ok(format!("{}; update digests equal", details.join(", ")))
}

// ------------------------------------------------------------- determinism

fn criterion_6() -> Check {
    let cfg = || {
        let mut c = tiny(EnvKind::Pendulum, 120);
        c.checkpoint_interval = 60;
        c
    };
    let (a, b) = (tempdir(), tempdir());
    let (_, ma) = run(cfg(), a.path())?;
    let (_, mb) = run(cfg(), b.path())?;
    if ma != mb {
        return Err("identical seeds gave different metrics".into());
    }
    let resumed = tempdir();
    let snap = checkpoint::load(&a.path().join("checkpoint_60.bin")).map_err(err)?;
    Trainer::resume(snap, resumed.path(), None)
        .and_then(Trainer::run)
        .map_err(err)?;
    let mr = std::fs::read_to_string(resumed.path().join(METRICS_FILE)).map_err(err)?;
    ensure(
        mr == ma,
        format!(
            "two runs bitwise equal ({} bytes); resume at step 60 of 120 {}",
            ma.len(),
            if mr == ma { "reproduces the run" } else { "diverges" }
        ),
    )
}

// ----------------------------------------------------------------- learning

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn runs_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-runs")
}

/// Final evaluation returns of one variant across the seeds.
fn final_returns(tag: &str, base: &TrainConfig) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for seed in SEEDS {
        let dir = runs_root().join(format!("{tag}-seed{seed}"));
        let _ = std::fs::remove_dir_all(&dir);
        let cfg = TrainConfig { seed, ..base.clone() };
        let started = Instant::now();
        let s = train(cfg, &dir).map_err(err)?;
        let r = s
            .last_row
            .and_then(|r| r.eval_return_mean)
            .ok_or_else(|| format!("{tag} seed {seed}: no final evaluation"))?;
        println!("    {tag} seed {seed}: final eval return {r:.2} ({:.0}s)", started.elapsed().as_secs_f64());
        out.push(r);
    }
    Ok(out)
}

fn criterion_7() -> Check {
    let base = TrainConfig {
        env: EnvKind::Pendulum,
        steps: 40_000,
        batch_size: 128,
        ..TrainConfig::default()
    };
    let baseline = random_policy_baseline(&base.env_config(), 30, 0).map_err(err)?.mean;
    let ours = median(final_returns("pendulum-ccfdm", &base)?);
    let sac = median(final_returns(
        "pendulum-pixel-sac",
        &TrainConfig {
            algorithm: Algorithm::PixelSac,
            ..base.clone()
        },
    )?);
    ensure(
        ours >= 3.0 * baseline && ours >= sac,
        format!("median {ours:.2} vs random {baseline:.2} (needs 3x) and pixel SAC {sac:.2}"),
    )
}

fn criterion_8() -> Check {
    let base = TrainConfig {
        env: EnvKind::PointMass,
        steps: 40_000,
        ..TrainConfig::default()
    };
    let ours = median(final_returns("pointmass-ccfdm", &base)?);
    let ablation = median(final_returns(
        "pointmass-no-curiosity",
        &TrainConfig {
            no_curiosity: true,
            ..base.clone()
        },
    )?);
    let margin = if ours > ablation { "exceeds" } else { "does not exceed" };
    ensure(
        ours >= 0.8 * ablation,
        format!("median {ours:.2} {margin} no-curiosity median {ablation:.2} (fails below 0.8x)"),
    )
}

// --------------------------------------------------------------------- FDM

/// A real batch: random-policy pendulum transitions encoded by a freshly
/// initialized encoder, which is also the key encoder at step 0.
fn fdm_batch(b: usize, rng: &mut ChaCha8Rng) -> ccfdm_core::Result<(Tensor<f64>, Tensor<f64>, Tensor<f64>)> {
    let env_cfg = EnvConfig::new(EnvKind::Pendulum);
    let shape = env_cfg.obs_shape();
    let mut env = PixelEnv::new(env_cfg)?;
    let mut obs = env.reset(5);
    let crop = 68;
    let (mut cur, mut next, mut acts) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..b {
        let a = rng.random_range(-1.0..1.0);
        let step = env.step(&[a])?;
        cur.extend(center_crop::<f64>(&obs, shape, crop, crop)?);
        next.extend(center_crop::<f64>(&step.obs, shape, crop, crop)?);
        acts.push(a);
        obs = step.obs;
    }
    let c = shape.stacked_channels();
    let encoder = EncoderNet::<f64>::new(EncoderArch::new(c, crop), rng)?;
    let q = encoder.encode(&Tensor::new(vec![b, c, crop, crop], cur)?)?;
    let k = encoder.encode(&Tensor::new(vec![b, c, crop, crop], next)?)?;
    Ok((q, Tensor::new(vec![b, 1], acts)?, k))
}

fn mean_error(pred: &Tensor<f64>, keys: &Tensor<f64>) -> f64 {
    let b = pred.rows();
    (0..b).map(|i| prediction_error(pred.row(i), keys.row(i))).sum::<f64>() / b as f64
}

fn criterion_9() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let cfg = TrainConfig::default();
    let (q, a, k) = fdm_batch(cfg.batch_size, &mut rng).map_err(err)?;
    let dz = cfg.latent_dim;
    let mut embed = ActionEmbedding::<f64>::new(1, cfg.aux_hidden_dim, dz, &mut rng).map_err(err)?;
    let mut fdm = ForwardDynamics::<f64>::new(dz, dz, cfg.aux_hidden_dim, &mut rng).map_err(err)?;
    let opt = AdamConfig::with_lr(cfg.contrastive_lr);
    let mut embed_opt = Adam::new(opt, &embed.params);
    let mut fdm_opt = Adam::new(opt, &fdm.params);
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..=500 {
        let mut tape = Tape::new();
        let pe = tape.bind(&embed.params);
        let pf = tape.bind(&fdm.params);
        let (qv, av, kv) = (tape.constant(q.clone()), tape.constant(a.clone()), tape.constant(k.clone()));
        let f = embed.forward(&mut tape, &pe, av).map_err(err)?;
        let pred = fdm.forward(&mut tape, &pf, qv, f).map_err(err)?;
        last = mean_error(tape.value(pred), &k);
        first.get_or_insert(last);
        let d = tape.sub(pred, kv).map_err(err)?;
        let s = tape.square(d);
        let s = tape.sum_last(s);
        let loss = tape.mean(s);
        let g = tape.backward(loss).map_err(err)?;
        embed.params.accumulate(&pe, &g).map_err(err)?;
        fdm.params.accumulate(&pf, &g).map_err(err)?;
        embed_opt.step(&mut embed.params).map_err(err)?;
        fdm_opt.step(&mut fdm.params).map_err(err)?;
    }
    // `last` was measured before the 501st step, i.e. after exactly 500 updates
    let first = first.unwrap_or(0.0);
    let ratio = first / last.max(f64::MIN_POSITIVE);
    ensure(
        ratio >= 10.0,
        format!("batch {}: mean error {first:.4} -> {last:.5} after 500 steps ({ratio:.1}x)", cfg.batch_size),
    )
}

// ----------------------------------------------------------------- physics

fn criterion_10() -> Check {
    let mut worst: f64 = 0.0;
    for theta in [0.05, 0.5, 1.0, 1.6, 2.2, 2.8, 3.1] {
        let mut cfg = EnvConfig::new(EnvKind::Pendulum);
        cfg.pendulum.damping = 0.0;
        let mgl = cfg.pendulum.mass * cfg.pendulum.gravity * cfg.pendulum.length;
        let episode = cfg.episode_length;
        let mut env = PixelEnv::new(cfg).map_err(err)?;
        env.reset(0);
        env.pendulum_mut()
            .ok_or("not a pendulum")?
            .state = PendulumState { theta, omega: 0.0 };
        let e0 = env.pendulum().ok_or("not a pendulum")?.energy();
        for _ in 0..episode {
            env.step(&[0.0]).map_err(err)?;
            let e = env.pendulum().ok_or("not a pendulum")?.energy();
            worst = worst.max((e - e0).abs() / mgl);
        }
    }
    if worst >= 0.01 {
        return Err(format!("energy drift {:.3}% of m g l", 100.0 * worst));
    }
    for kind in [EnvKind::Pendulum, EnvKind::PointMass] {
        let trace = || -> ccfdm_core::Result<Vec<Vec<u8>>> {
            let mut env = PixelEnv::new(EnvConfig::new(kind))?;
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let mut frames = vec![env.reset(42)];
            for _ in 0..60 {
                let a: Vec<f64> = (0..kind.action_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                frames.push(env.step(&a)?.obs);
                frames.push(env.render());
                frames.push(env.render());
            }
            Ok(frames)
        };
        if trace().map_err(err)? != trace().map_err(err)? {
            return Err(format!("{kind} renders differ between identical runs"));
        }
    }
    Ok(format!(
        "max energy drift {:.4}% of m g l over one undamped episode; renders bit-identical",
        100.0 * worst
    ))
}

// -------------------------------------------------------------------- main

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let long = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let criteria: [Criterion; 10] = [
        (1, "gradient suite", criterion_1, false),
        (2, "contrastive analytics", criterion_2, false),
        (3, "EMA law", criterion_3, false),
        (4, "curiosity law", criterion_4, false),
        (5, "reduction to pixel SAC", criterion_5, false),
        (6, "determinism and resume", criterion_6, false),
        (7, "learning, dense reward", criterion_7, true),
        (8, "learning, sparse reward", criterion_8, true),
        (9, "forward model overfit", criterion_9, false),
        (10, "environment physics", criterion_10, false),
    ];
    let mut failed = Vec::new();
    for (id, name, f, is_long) in criteria {
        if is_long && !long {
            println!(
                "FAIL criterion {id} ({name}): not run; 6 runs of 40k steps exceed the default test budget, \
                 pass --ignored to run"
            );
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {id} ({name}): {d} [{secs:.1}s]"),
            Err(d) => {
                println!("FAIL criterion {id} ({name}): {d} [{secs:.1}s]");
                failed.push(id);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
