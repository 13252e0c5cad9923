//! Ordered frame tuples and sinusoidal positional encoding.
//!
//! Indices are 0-based: a tuple over `F` frames satisfies
//! `0 <= n_1 < n_2 < ... < n_w <= F - 1`.

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::{Real, Tensor};

/// All (or a retained subset of) strictly increasing index tuples of one
/// cardinality, in lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct TupleIndexSet {
    cardinality: usize,
    frames: usize,
    // flat, `cardinality` indices per tuple
    indices: Vec<usize>,
    retention: f64,
}

/// `n choose k` without overflow for the sizes used here.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Every strictly increasing `cardinality`-tuple over `frames` frames.
pub fn enumerate_tuples(frames: usize, cardinality: usize) -> Result<TupleIndexSet> {
    if cardinality == 0 || cardinality > frames {
        return Err(Error::Argument(format!(
            "tuple cardinality {cardinality} must be in 1..={frames}"
        )));
    }
    let mut indices = Vec::with_capacity(binomial(frames, cardinality) * cardinality);
    let mut current: Vec<usize> = (0..cardinality).collect();
    loop {
        indices.extend_from_slice(&current);
        // advance the rightmost index that still has room
        let Some(i) = (0..cardinality).rev().find(|&i| current[i] < frames - cardinality + i) else {
            break;
        };
        current[i] += 1;
        for j in i + 1..cardinality {
            current[j] = current[j - 1] + 1;
        }
    }
    Ok(TupleIndexSet {
        cardinality,
        frames,
        indices,
        retention: 1.0,
    })
}

impl TupleIndexSet {
    /// Rebuilds a set from stored tuples, checking every invariant.
    pub fn from_tuples(frames: usize, cardinality: usize, tuples: &[Vec<usize>], retention: f64) -> Result<Self> {
        let full = enumerate_tuples(frames, cardinality)?;
        let mut indices = Vec::with_capacity(tuples.len() * cardinality);
        for t in tuples {
            let ok =
                t.len() == cardinality && t.windows(2).all(|w| w[0] < w[1]) && t.last().is_some_and(|l| *l < frames);
            if !ok {
                return Err(Error::Argument(format!(
                    "invalid {cardinality}-tuple {t:?} over {frames} frames"
                )));
            }
            indices.extend_from_slice(t);
        }
        let set = TupleIndexSet {
            cardinality,
            frames,
            indices,
            retention,
        };
        if set.tuples().zip(set.tuples().skip(1)).any(|(a, b)| a >= b) {
            return Err(Error::Argument("tuples must be unique and sorted".into()));
        }
        if set.is_empty() || set.len() > full.len() {
            return Err(Error::Argument(format!("bad tuple count {}", set.len())));
        }
        Ok(set)
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn retention(&self) -> f64 {
        self.retention
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.cardinality
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.indices[i * self.cardinality..(i + 1) * self.cardinality]
    }

    pub fn tuples(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.indices.chunks_exact(self.cardinality)
    }

    /// Flat index list, `cardinality` entries per tuple.
    pub fn flat(&self) -> &[usize] {
        &self.indices
    }

    /// Uniform random subset of `max(1, round(fraction * len))` tuples,
    /// drawn without replacement and kept in lexicographic order.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<TupleIndexSet> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Argument(format!(
                "retention fraction {fraction} must be in (0, 1]"
            )));
        }
        let n = self.len();
        let keep = retained_count(n, fraction);
        let mut chosen = if keep == n {
            (0..n).collect::<Vec<_>>()
        } else {
            let mut rng = rng_from_seed(seed);
            rand::seq::index::sample(&mut rng, n, keep).into_vec()
        };
        chosen.sort_unstable();
        let mut indices = Vec::with_capacity(keep * self.cardinality);
        for i in chosen {
            indices.extend_from_slice(self.get(i));
        }
        Ok(TupleIndexSet {
            cardinality: self.cardinality,
            frames: self.frames,
            indices,
            retention: self.retention * fraction,
        })
    }
}

/// Round-half-up with a floor of one.
pub fn retained_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 + 0.5).floor() as usize).clamp(1, n.max(1))
}

/// Interleaved sine/cosine positional encoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionalEncoder {
    dim: usize,
    base: f64,
}

impl PositionalEncoder {
    pub const DEFAULT_BASE: f64 = 10_000.0;

    pub fn new(dim: usize, base: f64) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::config(
                "embed_dim",
                format!("positional encoding needs an even, positive dimension, got {dim}"),
            ));
        }
        if base.is_nan() || base <= 0.0 {
            return Err(Error::config("pe_base", format!("must be > 0, got {base}")));
        }
        Ok(PositionalEncoder { dim, base })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// `out[2i] = sin(index / base^(2i/D))`, `out[2i+1] = cos(...)`.
    pub fn encode<T: Real>(&self, index: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(self.dim);
        for i in 0..self.dim / 2 {
            let angle = index as f64 / self.base.powf(2.0 * i as f64 / self.dim as f64);
            out.push(T::of(angle.sin()));
            out.push(T::of(angle.cos()));
        }
        out
    }

    /// Encodings of frames `0..frames` as a `frames×D` matrix.
    pub fn table<T: Real>(&self, frames: usize) -> Tensor<T> {
        let data = (0..frames).flat_map(|f| self.encode::<T>(f)).collect();
        Tensor::matrix(frames, self.dim, data).expect("table shape")
    }
}

/// One tuple of a video: row `i` is `frames[p_i] + PE(p_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TupleRepresentation<T> {
    pub indices: Vec<usize>,
    pub values: Tensor<T>,
}

impl<T: Real> TupleRepresentation<T> {
    /// Row-major (frame-major) flattening, the input layout of the linear maps.
    pub fn flatten(&self) -> &[T] {
        self.values.data()
    }
}

/// Builds the `ω×D` representation of tuple `p` of a `F×D` frame matrix.
/// `encoder = None` disables positional encoding.
pub fn build_tuple_representation<T: Real>(
    frames: &Tensor<T>,
    p: &[usize],
    encoder: Option<&PositionalEncoder>,
) -> Result<TupleRepresentation<T>> {
    let (f, d) = frames.matrix_dims();
    if let Some(bad) = p.iter().find(|i| **i >= f) {
        return Err(Error::Argument(format!(
            "frame index {bad} out of range for {f} frames"
        )));
    }
    if let Some(enc) = encoder {
        if enc.dim() != d {
            return Err(Error::Dimension {
                op: "build_tuple_representation",
                left: vec![enc.dim()],
                right: frames.shape().to_vec(),
            });
        }
    }
    let mut data = Vec::with_capacity(p.len() * d);
    for &i in p {
        let row = frames.row(i);
        match encoder {
            Some(enc) => data.extend(row.iter().zip(enc.encode::<T>(i)).map(|(a, b)| *a + b)),
            None => data.extend_from_slice(row),
        }
    }
    Ok(TupleRepresentation {
        indices: p.to_vec(),
        values: Tensor::matrix(p.len(), d, data)?,
    })
}
