use std::borrow::Cow;
use std::time::Instant;

use crate::episodes::{sample_episode, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrxModel};
use crate::rng::{derive_seed, episode_seed};
use crate::tensor::{Precision, Real, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub way: usize,
    pub shot: usize,
    pub n_query: usize,
    pub learning_rate: f64,
    /// Episodes whose gradients are averaged into one update.
    pub accumulation: usize,
    pub episodes: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            way: 5,
            shot: 5,
            n_query: 1,
            learning_rate: 0.001,
            accumulation: 16,
            episodes: 2000,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for (key, v) in [
            ("way", self.way),
            ("shot", self.shot),
            ("n_query", self.n_query),
            ("accumulation", self.accumulation),
            ("train_episodes", self.episodes),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.way < 2 {
            return Err(Error::config("way", "need at least two classes per episode"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Loss of every training episode, in order.
    pub losses: Vec<f64>,
    pub steps: u64,
    pub seconds: f64,
}

impl TrainLog {
    /// Mean loss over episodes `start..end` (0-based, clamped).
    pub fn mean_loss(&self, start: usize, end: usize) -> f64 {
        let end = end.min(self.losses.len());
        let window = &self.losses[start.min(end)..end];
        window.iter().sum::<f64>() / window.len().max(1) as f64
    }
}

/// The dataset at the model's frame count, uniformly subsampling frames when
/// the videos are longer.
pub(crate) fn at_frames(dataset: &Dataset, frames: usize) -> Result<Cow<'_, Dataset>> {
    if dataset.frames() == frames {
        Ok(Cow::Borrowed(dataset))
    } else if dataset.frames() > frames {
        Ok(Cow::Owned(dataset.with_frames(frames)?))
    } else {
        Err(Error::config(
            "frames",
            format!("dataset has only {} frames, model needs {frames}", dataset.frames()),
        ))
    }
}

/// Trains a fresh model from `config.seed`.
pub fn train<T: Real>(config: &TrainConfig, dataset: &Dataset) -> Result<(TrxModel<T>, TrainLog)> {
    config.validate()?;
    let mut model = TrxModel::new(config.model.clone(), derive_seed(config.seed, "model"))?;
    let log = train_model(&mut model, config, dataset)?;
    Ok((model, log))
}

/// Runs `config.episodes` training episodes on an existing model. Gradients
/// of `accumulation` consecutive episodes are averaged into one SGD step; a
/// trailing partial window is applied at the end.
pub fn train_model<T: Real>(model: &mut TrxModel<T>, config: &TrainConfig, dataset: &Dataset) -> Result<TrainLog> {
    config.validate()?;
    let data = at_frames(dataset, model.config().frames)?;
    let master = derive_seed(config.seed, "train");
    let start = Instant::now();
    let mut log = TrainLog::default();
    for e in 0..config.episodes {
        let seed = episode_seed(master, e as u64);
        let episode = sample_episode(&data, Split::Train, config.way, config.shot, config.n_query, seed)?;
        let mut tape = Tape::new();
        let (loss, _) = model.episode_loss(&mut tape, &episode, true)?;
        let value = tape.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            let norms = model
                .store()
                .norms()
                .iter()
                .map(|(n, v)| format!("{n}={v:.4e}"))
                .collect::<Vec<_>>()
                .join(" ");
            return Err(Error::NonFiniteLoss {
                episode: e,
                seed,
                norms,
            });
        }
        tape.backward(loss, model.store_mut())?;
        log.losses.push(value);
        if (e + 1) % config.accumulation == 0 {
            model.store_mut().sgd_step(config.learning_rate);
        }
    }
    if model.store().pending() > 0 {
        model.store_mut().sgd_step(config.learning_rate);
    }
    log.steps = model.store().steps();
    log.seconds = start.elapsed().as_secs_f64();
    Ok(log)
}
