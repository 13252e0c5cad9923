use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::eval::{eval_episode, with_workers, EvalOptions};
use super::train::at_frames;
use crate::episodes::{Dataset, VideoFeatures};
use crate::error::{Error, Result};
use crate::model::{classify, TrxModel};
use crate::tensor::{Real, Tape};

/// Outcome of one (query, class) decision: the class is a positive when it
/// was predicted, and the decision is true when it agrees with the label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    TrueNegative,
    FalseNegative,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [
        Outcome::TruePositive,
        Outcome::FalsePositive,
        Outcome::TrueNegative,
        Outcome::FalseNegative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::TruePositive => "tp",
            Outcome::FalsePositive => "fp",
            Outcome::TrueNegative => "tn",
            Outcome::FalseNegative => "fn",
        }
    }

    fn of(predicted: bool, actual: bool) -> Self {
        match (predicted, actual) {
            (true, true) => Outcome::TruePositive,
            (true, false) => Outcome::FalsePositive,
            (false, false) => Outcome::TrueNegative,
            (false, true) => Outcome::FalseNegative,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Summed attention between query tuples (rows) and support tuples
/// (columns) of one cardinality.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub omega: usize,
    pub tuples: Vec<Vec<usize>>,
    pub sums: Vec<f64>,
}

impl Heatmap {
    /// Every row divided by its total.
    pub fn normalized(&self) -> Vec<f64> {
        let m = self.tuples.len();
        let mut out = self.sums.clone();
        for row in out.chunks_mut(m.max(1)) {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|v| *v /= total);
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let label = |t: &[usize]| t.iter().map(usize::to_string).collect::<Vec<_>>().join("-");
        let mut out = String::from("query\\support");
        for t in &self.tuples {
            write!(out, ",{}", label(t)).unwrap();
        }
        out.push('\n');
        let m = self.tuples.len();
        for (t, row) in self.tuples.iter().zip(self.normalized().chunks(m.max(1))) {
            out.push_str(&label(t));
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionStats {
    pub shot: usize,
    /// `counts[b][o]`: decisions of outcome `o` whose class had maximal
    /// matches in exactly `b + 1` support videos.
    pub counts: Vec<[u64; 4]>,
    /// One per cardinality, summed over the true class of every query.
    pub heatmaps: Vec<Heatmap>,
    pub queries: usize,
}

impl AttentionStats {
    /// Bucket percentages of one outcome; all zero when it never occurred.
    pub fn percentages(&self, outcome: Outcome) -> Vec<f64> {
        let total: u64 = self.counts.iter().map(|c| c[outcome.index()]).sum();
        self.counts
            .iter()
            .map(|c| {
                if total == 0 {
                    0.0
                } else {
                    100.0 * c[outcome.index()] as f64 / total as f64
                }
            })
            .collect()
    }

    /// Share of decisions whose maximal matches span at least two videos.
    pub fn multi_video_fraction(&self) -> f64 {
        let total: u64 = self.counts.iter().flatten().sum();
        let multi: u64 = self.counts.iter().skip(1).flatten().sum();
        multi as f64 / total.max(1) as f64
    }

    /// `bucket,tp,fp,tn,fn` with percentages per outcome column.
    pub fn histogram_csv(&self) -> String {
        let cols: Vec<Vec<f64>> = Outcome::ALL.iter().map(|o| self.percentages(*o)).collect();
        let mut out = String::from("bucket,tp,fp,tn,fn\n");
        for b in 0..self.counts.len() {
            write!(out, "{}", b + 1).unwrap();
            for col in &cols {
                write!(out, ",{}", col[b]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Writes `histogram.csv` and one `heatmap_omega{ω}.csv` per cardinality.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("histogram.csv");
        fs::write(&path, self.histogram_csv()).map_err(|e| Error::io(&path, e))?;
        for h in &self.heatmaps {
            let path = dir.join(format!("heatmap_omega{}.csv", h.omega));
            fs::write(&path, h.to_csv()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn empty<T: Real>(model: &TrxModel<T>, shot: usize) -> Self {
        AttentionStats {
            shot,
            counts: vec![[0; 4]; shot],
            heatmaps: model
                .tuple_sets()
                .iter()
                .map(|s| Heatmap {
                    omega: s.cardinality(),
                    tuples: s.tuples().map(<[usize]>::to_vec).collect(),
                    sums: vec![0.0; s.len() * s.len()],
                })
                .collect(),
            queries: 0,
        }
    }

    fn merge(&mut self, other: &AttentionStats) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.heatmaps.iter_mut().zip(&other.heatmaps) {
            for (x, y) in a.sums.iter_mut().zip(&b.sums) {
                *x += y;
            }
        }
        self.queries += other.queries;
    }
}

/// For every query tuple, finds the support tuple with maximal attention
/// (first in `(k, m)` order on ties) and counts, per class, how many
/// distinct support videos hold at least one such match across all
/// cardinalities. Attention towards the true class is also summed into one
/// tuple-by-tuple heatmap per cardinality.
pub fn attention_analytics<T: Real>(
    model: &TrxModel<T>,
    dataset: &Dataset,
    opts: &EvalOptions,
) -> Result<AttentionStats> {
    if opts.episodes < 1 {
        return Err(Error::Argument("analytics needs at least one episode".into()));
    }
    let data = at_frames(dataset, model.config().frames)?;
    let partials: Vec<Result<AttentionStats>> = with_workers(opts.workers, || {
        (0..opts.episodes)
            .into_par_iter()
            .map(|i| {
                let episode = eval_episode(&data, opts, i)?;
                let mut stats = AttentionStats::empty(model, opts.shot);
                let mut tape = Tape::new();
                let queries: Vec<&VideoFeatures> = episode.queries.iter().map(|q| &q.video).collect();
                let pass = model.forward(&mut tape, &episode.support, &queries, false)?;
                for (qi, q) in episode.queries.iter().enumerate() {
                    let d: Vec<f64> = tape
                        .value(pass.distances[qi])
                        .data()
                        .iter()
                        .map(|v| v.as_f64())
                        .collect();
                    let predicted = classify(&d);
                    for c in 0..episode.way() {
                        let shot = episode.support[c].len();
                        let mut hit = vec![false; shot];
                        for (wi, set) in model.tuple_sets().iter().enumerate() {
                            let m = set.len();
                            let a = tape.value(pass.attention[qi][wi][c]);
                            for p in 0..a.rows() {
                                let row = a.row(p);
                                let mut best = 0;
                                for (j, v) in row.iter().enumerate() {
                                    if *v > row[best] {
                                        best = j;
                                    }
                                }
                                hit[best / m] = true;
                            }
                            if c == q.target {
                                let sums = &mut stats.heatmaps[wi].sums;
                                for p in 0..a.rows() {
                                    let row = a.row(p);
                                    for k in 0..shot {
                                        for mm in 0..m {
                                            sums[p * m + mm] += row[k * m + mm].as_f64();
                                        }
                                    }
                                }
                            }
                        }
                        let videos = hit.iter().filter(|h| **h).count();
                        let outcome = Outcome::of(c == predicted, c == q.target);
                        stats.counts[videos - 1][outcome.index()] += 1;
                    }
                    stats.queries += 1;
                }
                Ok(stats)
            })
            .collect()
    })?;
    let mut total = AttentionStats::empty(model, opts.shot);
    for p in partials {
        total.merge(&p?);
    }
    Ok(total)
}
