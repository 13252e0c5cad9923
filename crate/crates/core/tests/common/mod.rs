//! Shared test helpers: random instances, an independent loop-based
//! reference implementation of the class distances, and finite differences.
#![allow(dead_code)]

use rand::Rng;
use trx::episodes::{Episode, Query, VideoFeatures};
use trx::model::{HeadKind, ModelConfig, TrxModel};
use trx::rng::{rng_from_seed, Rng as ChaCha};
use trx::tensor::{ParameterStore, Tape};

pub fn random_video(rng: &mut ChaCha, label: u32, frames: usize, dim: usize) -> VideoFeatures {
    let data = (0..frames * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    VideoFeatures::new(label, frames, dim, data).unwrap()
}

pub fn random_episode(seed: u64, way: usize, shot: usize, frames: usize, dim: usize, n_query: usize) -> Episode {
    let mut rng = rng_from_seed(seed);
    let support = (0..way)
        .map(|c| {
            (0..shot)
                .map(|_| random_video(&mut rng, c as u32, frames, dim))
                .collect()
        })
        .collect();
    let queries = (0..n_query)
        .map(|_| {
            let target = rng.random_range(0..way);
            Query {
                video: random_video(&mut rng, target as u32, frames, dim),
                target,
            }
        })
        .collect();
    Episode {
        classes: (0..way as u32).collect(),
        support,
        queries,
        seed,
    }
}

/// A small model with randomised switches, for property tests.
pub fn random_model(seed: u64, omegas: Vec<usize>, frames: usize, dim: usize) -> TrxModel<f64> {
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    let head = match rng.random_range(0..3) {
        0 => HeadKind::Identity,
        1 => HeadKind::Linear,
        _ => HeadKind::TwoLayer,
    };
    let config = ModelConfig {
        omegas,
        frames,
        input_dim: dim,
        embed_dim: dim,
        d_k: rng.random_range(2..6),
        d_v: rng.random_range(2..6),
        head,
        hidden_dim: 5,
        pe: rng.random_bool(0.7),
        share_qk: rng.random_bool(0.7),
        ln_affine: rng.random_bool(0.7),
        softmax_scaling: rng.random_bool(0.7),
        ..ModelConfig::default()
    };
    let mut model = TrxModel::<f64>::new(config, seed).unwrap();
    // move layer-norm terms off their identity initialisation
    let ids: Vec<_> = model.store().ids().collect();
    for id in ids {
        if model.store().name(id).contains(".norm.") {
            for v in model.store_mut().value_mut(id).data_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
    }
    model
}

fn matvec(store: &ParameterStore<f64>, prefix: &str, x: &[f64]) -> Vec<f64> {
    let w = store.get(&format!("{prefix}.weight")).unwrap();
    let b = store.get(&format!("{prefix}.bias")).unwrap();
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(cols, x.len());
    (0..rows)
        .map(|i| b.data()[i] + (0..cols).map(|j| w.data()[i * cols + j] * x[j]).sum::<f64>())
        .collect()
}

fn norm_layer(store: &ParameterStore<f64>, omega: usize, eps: f64, x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let gain = store.get(&format!("trx{omega}.norm.gain"));
    let bias = store.get(&format!("trx{omega}.norm.bias"));
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            let z = (v - mean) / (var + eps).sqrt();
            match (gain, bias) {
                (Some(g), Some(b)) => g.data()[i] * z + b.data()[i],
                _ => z,
            }
        })
        .collect()
}

fn all_tuples(frames: usize, omega: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, frames: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..frames {
            cur.push(i);
            rec(i + 1, frames, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, frames, omega, &mut Vec::new(), &mut out);
    out
}

fn embed(model: &TrxModel<f64>, video: &VideoFeatures) -> Vec<Vec<f64>> {
    let cfg = model.config();
    let store = model.store();
    (0..video.frames())
        .map(|t| {
            let x: Vec<f64> = video.frame(t).iter().map(|v| *v as f64).collect();
            let mut e = match cfg.head {
                HeadKind::Identity => x,
                HeadKind::Linear => matvec(store, "head.0", &x),
                HeadKind::TwoLayer => {
                    let h: Vec<f64> = matvec(store, "head.0", &x).iter().map(|v| v.tanh()).collect();
                    matvec(store, "head.1", &h)
                }
            };
            if cfg.pe {
                let d = e.len();
                for i in 0..d / 2 {
                    let angle = t as f64 / cfg.pe_base.powf(2.0 * i as f64 / d as f64);
                    e[2 * i] += angle.sin();
                    e[2 * i + 1] += angle.cos();
                }
            }
            e
        })
        .collect()
}

/// Distances `[query][class]` computed with explicit loops over query
/// tuples, support videos and support tuples, at full tuple retention.
pub fn reference_distances(model: &TrxModel<f64>, episode: &Episode) -> Vec<Vec<f64>> {
    let cfg = model.config();
    let store = model.store();
    let scale = if cfg.softmax_scaling {
        (cfg.d_k as f64).sqrt()
    } else {
        1.0
    };
    let support: Vec<Vec<Vec<Vec<f64>>>> = episode
        .support
        .iter()
        .map(|class| class.iter().map(|v| embed(model, v)).collect())
        .collect();
    let vec_of = |frames: &[Vec<f64>], p: &[usize]| -> Vec<f64> { p.iter().flat_map(|i| frames[*i].clone()).collect() };
    episode
        .queries
        .iter()
        .map(|q| {
            let qf = embed(model, &q.video);
            (0..episode.way())
                .map(|c| {
                    let mut total = 0.0;
                    for &w in &cfg.omegas {
                        let (qname, kname) = if cfg.share_qk {
                            (format!("trx{w}.qk"), format!("trx{w}.qk"))
                        } else {
                            (format!("trx{w}.query"), format!("trx{w}.key"))
                        };
                        let vname = format!("trx{w}.value");
                        let tuples = all_tuples(cfg.frames, w);
                        let mut sum = 0.0;
                        for p in &tuples {
                            let qvec = vec_of(&qf, p);
                            let qk = norm_layer(store, w, cfg.ln_eps, &matvec(store, &qname, &qvec));
                            let u = matvec(store, &vname, &qvec);
                            let mut scores = Vec::new();
                            let mut values = Vec::new();
                            for video in &support[c] {
                                for m in &tuples {
                                    let svec = vec_of(video, m);
                                    let sk = norm_layer(store, w, cfg.ln_eps, &matvec(store, &kname, &svec));
                                    scores.push(sk.iter().zip(&qk).map(|(a, b)| a * b).sum::<f64>() / scale);
                                    values.push(matvec(store, &vname, &svec));
                                }
                            }
                            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                            let z: f64 = exps.iter().sum();
                            let mut t = vec![0.0; u.len()];
                            for (e, v) in exps.iter().zip(&values) {
                                for (ti, vi) in t.iter_mut().zip(v) {
                                    *ti += e / z * vi;
                                }
                            }
                            sum += t.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                        }
                        total += sum / tuples.len() as f64;
                    }
                    total
                })
                .collect()
        })
        .collect()
}

fn loss_value(model: &TrxModel<f64>, episode: &Episode) -> f64 {
    let mut tape = Tape::new();
    let (loss, _) = model.episode_loss(&mut tape, episode, false).unwrap();
    tape.value(loss).data()[0]
}

/// Largest relative error between the analytic gradient of the episode loss
/// and central differences, per parameter tensor:
/// `max|analytic - numeric| / max(‖analytic‖∞, ‖numeric‖∞, 1e-6)`.
/// The floor keeps tensors with an exactly zero gradient (the value bias
/// cancels out of `t - u`) from turning round-off into a relative error.
pub fn episode_gradient_error(model: &mut TrxModel<f64>, episode: &Episode, step: f64) -> f64 {
    model.store_mut().zero_grad();
    {
        let mut tape = Tape::new();
        let (loss, _) = model.episode_loss(&mut tape, episode, true).unwrap();
        let grads = tape.gradients(loss).unwrap().params();
        model.store_mut().accumulate(&grads);
    }
    let ids: Vec<_> = model.store().ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let analytic = model.store().grad(id).to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (i, n) in numeric.iter_mut().enumerate() {
            let orig = model.store().value(id).data()[i];
            model.store_mut().value_mut(id).data_mut()[i] = orig + step;
            let up = loss_value(model, episode);
            model.store_mut().value_mut(id).data_mut()[i] = orig - step;
            let down = loss_value(model, episode);
            model.store_mut().value_mut(id).data_mut()[i] = orig;
            *n = (up - down) / (2.0 * step);
        }
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let diff = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        worst = worst.max(diff / inf(&analytic).max(inf(&numeric)).max(1e-6));
    }
    model.store_mut().zero_grad();
    worst
}
