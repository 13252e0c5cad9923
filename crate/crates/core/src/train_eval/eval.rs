use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::train::at_frames;
use crate::episodes::{reverse_query, sample_episode, Dataset, Episode, Split};
use crate::error::{Error, Result};
use crate::model::TrxModel;
use crate::rng::{derive_seed, episode_seed};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalOptions {
    pub split: Split,
    pub way: usize,
    pub shot: usize,
    pub n_query: usize,
    pub episodes: usize,
    pub seed: u64,
    /// Play every query backwards at inference time.
    pub reversed: bool,
    /// Evaluation threads; 0 lets the pool decide.
    pub workers: usize,
    /// Record wall-clock seconds in the report.
    pub timing: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            split: Split::Test,
            way: 5,
            shot: 5,
            n_query: 1,
            episodes: 1000,
            seed: 0,
            reversed: false,
            workers: 0,
            timing: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub queries: usize,
    pub accuracy: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    /// Accuracy over the queries whose true class is the key.
    pub per_class: BTreeMap<u32, f64>,
    pub seconds: Option<f64>,
    pub options: EvalOptions,
}

/// Runs `body` on a pool of `workers` threads (0 = rayon's default).
pub(crate) fn with_workers<R: Send>(workers: usize, body: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Argument(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(body))
}

/// Deterministic episode `index` of an evaluation stream.
pub(crate) fn eval_episode(dataset: &Dataset, opts: &EvalOptions, index: usize) -> Result<Episode> {
    let seed = episode_seed(derive_seed(opts.seed, "eval"), index as u64);
    let episode = sample_episode(dataset, opts.split, opts.way, opts.shot, opts.n_query, seed)?;
    Ok(if opts.reversed {
        reverse_query(&episode)
    } else {
        episode
    })
}

/// Classifies the queries of `opts.episodes` sampled episodes. Episodes run
/// in parallel; results are reduced in episode order.
pub fn evaluate<T: Real>(model: &TrxModel<T>, dataset: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    if opts.episodes < 1 {
        return Err(Error::Argument("evaluation needs at least one episode".into()));
    }
    let data = at_frames(dataset, model.config().frames)?;
    let start = Instant::now();
    let outcomes: Vec<Result<Vec<(u32, bool)>>> = with_workers(opts.workers, || {
        (0..opts.episodes)
            .into_par_iter()
            .map(|i| {
                let episode = eval_episode(&data, opts, i)?;
                let distances = model.episode_distances(&episode)?;
                Ok(episode
                    .queries
                    .iter()
                    .zip(distances)
                    .map(|(q, d)| (episode.classes[q.target], d.classify() == q.target))
                    .collect())
            })
            .collect()
    })?;
    let mut correct = 0usize;
    let mut queries = 0usize;
    let mut per_class: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for outcome in outcomes {
        for (label, ok) in outcome? {
            queries += 1;
            correct += ok as usize;
            let e = per_class.entry(label).or_default();
            e.0 += ok as usize;
            e.1 += 1;
        }
    }
    let accuracy = correct as f64 / queries as f64;
    let ci95 = 1.96 * (accuracy * (1.0 - accuracy) / queries as f64).sqrt();
    Ok(EvalReport {
        episodes: opts.episodes,
        queries,
        accuracy,
        ci95,
        per_class: per_class
            .into_iter()
            .map(|(c, (ok, n))| (c, ok as f64 / n as f64))
            .collect(),
        seconds: opts.timing.then(|| start.elapsed().as_secs_f64()),
        options: opts.clone(),
    })
}
