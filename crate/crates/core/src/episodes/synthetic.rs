//! Synthetic temporally-structured benchmark.
//!
//! Each class owns a short sequence of unit-norm motif vectors. A video plays
//! the sequence once, every motif held for a jittered number of frames and
//! the whole action shifted by a jittered offset; frames outside the action
//! are empty (zero before noise). With `order_pairs`, classes `2i` and
//! `2i + 1` share one motif set and the second is the time mirror of the
//! first, so only temporal order separates them.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{Dataset, SplitPolicy, VideoFeatures};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Motifs per class sequence.
    pub motifs: usize,
    /// Feature dimension of every frame.
    pub dim: usize,
    pub frames: usize,
    pub videos_per_class: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    /// Nominal number of frames each motif is held for.
    pub motif_duration: f64,
    /// Relative speed jitter: durations scale by `1 ± speed_jitter`.
    pub speed_jitter: f64,
    /// Onset jitter in frames, uniform in `±offset_jitter`.
    pub offset_jitter: f64,
    pub order_pairs: bool,
    /// Size of a shared pool of motif vectors that class sequences draw
    /// from; 0 gives every class (pair) its own fresh motifs.
    pub vocabulary: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 20,
            motifs: 2,
            dim: 32,
            frames: 8,
            videos_per_class: 20,
            noise: 0.1,
            motif_duration: 1.5,
            speed_jitter: 0.25,
            offset_jitter: 1.25,
            order_pairs: true,
            vocabulary: 6,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(key, msg))
            }
        };
        check(self.classes >= 1, "classes", "need at least one class".into())?;
        check(
            !self.order_pairs || self.classes.is_multiple_of(2),
            "classes",
            format!("order_pairs needs an even class count, got {}", self.classes),
        )?;
        check(self.dim >= 1, "input_dim", "must be positive".into())?;
        check(
            self.motifs >= 1 && self.motifs <= self.frames,
            "motifs",
            format!("{} motifs cannot fit in {} frames", self.motifs, self.frames),
        )?;
        check(
            self.videos_per_class >= 2,
            "videos_per_class",
            "need at least two videos per class".into(),
        )?;
        check(
            self.noise >= 0.0 && self.noise.is_finite(),
            "noise",
            format!("must be a finite value >= 0, got {}", self.noise),
        )?;
        check(
            (0.0..1.0).contains(&self.speed_jitter),
            "speed_jitter",
            format!("must be in [0, 1), got {}", self.speed_jitter),
        )?;
        check(
            self.offset_jitter >= 0.0,
            "offset_jitter",
            format!("must be >= 0, got {}", self.offset_jitter),
        )?;
        check(
            self.motif_duration * (1.0 - self.speed_jitter) >= 1.0,
            "motif_duration",
            "the fastest motif must still cover one frame".into(),
        )?;
        let groups = if self.order_pairs {
            self.classes / 2
        } else {
            self.classes
        };
        check(
            self.vocabulary == 0 || crate::tuples::binomial(self.vocabulary, self.motifs) >= groups,
            "vocabulary",
            format!(
                "{} motifs drawn from a pool of {} cannot give {groups} distinct motif sets",
                self.motifs, self.vocabulary
            ),
        )?;
        let longest = self.motifs as f64 * self.motif_duration * (1.0 + self.speed_jitter);
        check(
            longest + 2.0 * self.offset_jitter <= self.frames as f64 + 1e-9,
            "motif_duration",
            format!(
                "action of up to {longest:.2} frames with offset ±{} does not fit in {} frames",
                self.offset_jitter, self.frames
            ),
        )
    }

    /// Same benchmark at a different frame count; motif durations and
    /// offsets scale proportionally.
    pub fn with_frames(&self, frames: usize) -> Self {
        let r = frames as f64 / self.frames as f64;
        SyntheticSpec {
            frames,
            motif_duration: self.motif_duration * r,
            offset_jitter: self.offset_jitter * r,
            ..self.clone()
        }
    }

    /// Split policy that keeps order pairs together.
    pub fn split_policy(&self) -> SplitPolicy {
        SplitPolicy {
            group: if self.order_pairs { 2 } else { 1 },
            ..SplitPolicy::default()
        }
    }
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Generates the benchmark; identical for identical `(spec, seed)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);

    let pool: Vec<Vec<f64>> = (0..spec.vocabulary).map(|_| unit_vector(&mut rng, spec.dim)).collect();
    let mut used_sets: Vec<Vec<usize>> = Vec::new();
    // (motifs, played mirrored in time)
    let mut sequences: Vec<(Vec<Vec<f64>>, bool)> = Vec::with_capacity(spec.classes);
    while sequences.len() < spec.classes {
        let motifs: Vec<Vec<f64>> = if pool.is_empty() {
            (0..spec.motifs).map(|_| unit_vector(&mut rng, spec.dim)).collect()
        } else {
            let picked = rand::seq::index::sample(&mut rng, pool.len(), spec.motifs).into_vec();
            let mut set = picked.clone();
            set.sort_unstable();
            if used_sets.contains(&set) {
                continue;
            }
            used_sets.push(set);
            picked.iter().map(|i| pool[*i].clone()).collect()
        };
        if spec.order_pairs {
            sequences.push((motifs.clone(), false));
            sequences.push((motifs, true));
        } else {
            sequences.push((motifs, false));
        }
    }

    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::config("noise", e.to_string()))?;
    let mut videos = Vec::with_capacity(spec.classes * spec.videos_per_class);
    for (label, (seq, mirrored)) in sequences.iter().enumerate() {
        for _ in 0..spec.videos_per_class {
            let speed = if spec.speed_jitter > 0.0 {
                1.0 + rng.random_range(-spec.speed_jitter..spec.speed_jitter)
            } else {
                1.0
            };
            let offset = if spec.offset_jitter > 0.0 {
                rng.random_range(-spec.offset_jitter..spec.offset_jitter)
            } else {
                0.0
            };
            let duration = spec.motif_duration * speed;
            let onset = (spec.frames as f64 - duration * spec.motifs as f64) / 2.0 + offset;
            let mut data = Vec::with_capacity(spec.frames * spec.dim);
            for t in 0..spec.frames {
                let at = if *mirrored { spec.frames - 1 - t } else { t };
                let pos = (at as f64 + 0.5 - onset) / duration;
                let motif = (pos >= 0.0 && pos < spec.motifs as f64).then(|| &seq[pos as usize]);
                for j in 0..spec.dim {
                    let clean = motif.map_or(0.0, |m| m[j]);
                    let n = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    data.push((clean + n) as f32);
                }
            }
            videos.push(VideoFeatures::new(label as u32, spec.frames, spec.dim, data)?);
        }
    }
    Dataset::new(videos, spec.split_policy())
}
