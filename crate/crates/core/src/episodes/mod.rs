//! Datasets of per-frame feature sequences and C-way K-shot episode sampling.

mod io;
mod synthetic;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::{Real, Tensor};

pub(crate) use io::Cursor;
pub use io::{load_features, read_features, write_features, FeatureFormat};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// One video: `frames × dim` per-frame features and a class label.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures {
    pub label: u32,
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl VideoFeatures {
    pub fn new(label: u32, frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if frames == 0 || dim == 0 || data.len() != frames * dim {
            return Err(Error::Dimension {
                op: "video",
                left: vec![frames, dim],
                right: vec![data.len()],
            });
        }
        Ok(VideoFeatures {
            label,
            frames,
            dim,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|v| T::of(f64::from(*v))).collect();
        Tensor::matrix(self.frames, self.dim, data).expect("video shape")
    }

    /// Frame `i` moves to position `F - 1 - i`.
    pub fn reversed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for i in (0..self.frames).rev() {
            data.extend_from_slice(self.frame(i));
        }
        VideoFeatures { data, ..*self }
    }

    /// Keeps the frames at `indices`, in that order.
    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.frames {
                return Err(Error::Argument(format!("frame {i} of {}", self.frames)));
            }
            data.extend_from_slice(self.frame(i));
        }
        Self::new(self.label, indices.len(), self.dim, data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("expected train, val or test, got `{other}`")),
        }
    }
}

/// How classes are partitioned into train/val/test.
///
/// Classes are taken in ascending label order in groups of `group` (so that
/// paired classes stay in the same split); the first `round(train * n)`
/// groups go to train, the next `round(val * n)` to val, the rest to test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitPolicy {
    pub train: f64,
    pub val: f64,
    pub group: usize,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy {
            train: 0.64,
            val: 0.12,
            group: 1,
        }
    }
}

/// Videos with a class-disjoint train/val/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    videos: Vec<VideoFeatures>,
    by_class: BTreeMap<u32, Vec<usize>>,
    split_of: BTreeMap<u32, Split>,
    frames: usize,
    dim: usize,
}

impl Dataset {
    pub fn new(videos: Vec<VideoFeatures>, policy: SplitPolicy) -> Result<Self> {
        let first = videos
            .first()
            .ok_or_else(|| Error::Argument("dataset has no videos".into()))?;
        let (frames, dim) = (first.frames, first.dim);
        if let Some(v) = videos.iter().find(|v| v.frames != frames || v.dim != dim) {
            return Err(Error::Dimension {
                op: "dataset",
                left: vec![frames, dim],
                right: vec![v.frames, v.dim],
            });
        }
        let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, v) in videos.iter().enumerate() {
            by_class.entry(v.label).or_default().push(i);
        }
        let labels: Vec<u32> = by_class.keys().copied().collect();
        let split_of = assign_splits(&labels, policy)?;
        Ok(Dataset {
            videos,
            by_class,
            split_of,
            frames,
            dim,
        })
    }

    pub fn videos(&self) -> &[VideoFeatures] {
        &self.videos
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.by_class.keys().copied()
    }

    pub fn split_of(&self, label: u32) -> Option<Split> {
        self.split_of.get(&label).copied()
    }

    pub fn classes_in(&self, split: Split) -> Vec<u32> {
        self.split_of
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(c, _)| *c)
            .collect()
    }

    pub fn videos_of(&self, label: u32) -> &[usize] {
        self.by_class.get(&label).map_or(&[], Vec::as_slice)
    }

    /// Same videos and splits with every video resampled to `frames` frames
    /// at uniformly spaced indices.
    pub fn with_frames(&self, frames: usize) -> Result<Self> {
        if frames == 0 || frames > self.frames {
            return Err(Error::Argument(format!(
                "cannot resample {} frames to {frames}",
                self.frames
            )));
        }
        let idx = uniform_indices(self.frames, frames);
        let videos = self
            .videos
            .iter()
            .map(|v| v.select_frames(&idx))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            videos,
            by_class: self.by_class.clone(),
            split_of: self.split_of.clone(),
            frames,
            dim: self.dim,
        })
    }
}

/// `count` indices spread evenly over `0..total` (segment centres).
pub fn uniform_indices(total: usize, count: usize) -> Vec<usize> {
    (0..count)
        .map(|i| (((i as f64 + 0.5) * total as f64 / count as f64).floor() as usize).min(total - 1))
        .collect()
}

fn assign_splits(labels: &[u32], policy: SplitPolicy) -> Result<BTreeMap<u32, Split>> {
    if policy.group == 0 || !(0.0..=1.0).contains(&(policy.train + policy.val)) {
        return Err(Error::Argument(format!("invalid split policy {policy:?}")));
    }
    let groups: Vec<&[u32]> = labels.chunks(policy.group).collect();
    let n = groups.len() as f64;
    let n_train = (policy.train * n).round() as usize;
    let n_val = ((policy.val * n).round() as usize).min(groups.len() - n_train.min(groups.len()));
    let mut out = BTreeMap::new();
    for (g, members) in groups.iter().enumerate() {
        let split = if g < n_train {
            Split::Train
        } else if g < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        for c in *members {
            out.insert(*c, split);
        }
    }
    Ok(out)
}

/// One query of an episode with its episode-local class index.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub video: VideoFeatures,
    pub target: usize,
}

/// A sampled C-way K-shot task.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// Dataset labels of the episode classes; episode class `c` is `classes[c]`.
    pub classes: Vec<u32>,
    /// `support[c]` holds exactly `shot` videos of class `classes[c]`.
    pub support: Vec<Vec<VideoFeatures>>,
    pub queries: Vec<Query>,
    pub seed: u64,
}

impl Episode {
    pub fn way(&self) -> usize {
        self.classes.len()
    }

    pub fn shot(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }

    pub fn frames(&self) -> usize {
        self.support
            .first()
            .and_then(|s| s.first())
            .map_or(0, VideoFeatures::frames)
    }
}

/// Samples an episode: `way` distinct classes uniformly from `split`, then
/// for each of `n_query` queries a class uniformly among them, then the
/// support and query videos of every class without replacement.
///
/// Class and query-class draws happen before any video draw, so the same
/// seed selects the same classes whatever `shot` is.
pub fn sample_episode(
    dataset: &Dataset,
    split: Split,
    way: usize,
    shot: usize,
    n_query: usize,
    seed: u64,
) -> Result<Episode> {
    use rand::Rng;

    if way == 0 || shot == 0 || n_query == 0 {
        return Err(Error::Sampling(format!(
            "way, shot and n_query must be positive (got {way}, {shot}, {n_query})"
        )));
    }
    let eligible = dataset.classes_in(split);
    if eligible.len() < way {
        return Err(Error::Sampling(format!(
            "{} split has {} classes, need {way}",
            split.as_str(),
            eligible.len()
        )));
    }
    if let Some(c) = eligible.iter().find(|c| dataset.videos_of(**c).len() < shot + n_query) {
        return Err(Error::Sampling(format!(
            "class {c} has {} videos, need {}",
            dataset.videos_of(*c).len(),
            shot + n_query
        )));
    }

    let mut rng = rng_from_seed(seed);
    let classes: Vec<u32> = rand::seq::index::sample(&mut rng, eligible.len(), way)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    let targets: Vec<usize> = (0..n_query).map(|_| rng.random_range(0..way)).collect();

    let mut support = Vec::with_capacity(way);
    let mut pools = Vec::with_capacity(way);
    for (c, label) in classes.iter().enumerate() {
        let pool = dataset.videos_of(*label);
        let n_q = targets.iter().filter(|t| **t == c).count();
        let picked = rand::seq::index::sample(&mut rng, pool.len(), shot + n_q).into_vec();
        support.push(
            picked[..shot]
                .iter()
                .map(|i| dataset.videos[pool[*i]].clone())
                .collect(),
        );
        pools.push(picked[shot..].iter().map(|i| pool[*i]).collect::<Vec<_>>());
    }
    let mut next = vec![0usize; way];
    let queries = targets
        .iter()
        .map(|&c| {
            let v = pools[c][next[c]];
            next[c] += 1;
            Query {
                video: dataset.videos[v].clone(),
                target: c,
            }
        })
        .collect();
    Ok(Episode {
        classes,
        support,
        queries,
        seed,
    })
}

/// Reverses the frame order of every query video; the support set is kept.
pub fn reverse_query(episode: &Episode) -> Episode {
    Episode {
        queries: episode
            .queries
            .iter()
            .map(|q| Query {
                video: q.video.reversed(),
                target: q.target,
            })
            .collect(),
        ..episode.clone()
    }
}
