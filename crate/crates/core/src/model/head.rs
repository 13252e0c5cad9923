//! Per-frame embedding head standing in for a convolutional backbone.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{fan_in_uniform, ParamId, ParameterStore, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Identity,
    Linear,
    /// Linear, tanh, linear.
    TwoLayer,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Identity => "identity",
            HeadKind::Linear => "linear",
            HeadKind::TwoLayer => "two_layer",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            HeadKind::Identity => 0,
            HeadKind::Linear => 1,
            HeadKind::TwoLayer => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(HeadKind::Identity),
            1 => Some(HeadKind::Linear),
            2 => Some(HeadKind::TwoLayer),
            _ => None,
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "identity" => Ok(HeadKind::Identity),
            "linear" => Ok(HeadKind::Linear),
            "two_layer" | "two-layer" => Ok(HeadKind::TwoLayer),
            other => Err(format!("expected identity, linear or two_layer, got `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingHead {
    kind: HeadKind,
    input_dim: usize,
    output_dim: usize,
    // (weight, bias) per layer
    layers: Vec<(ParamId, ParamId)>,
}

impl EmbeddingHead {
    pub fn new<T: Real>(
        kind: HeadKind,
        input_dim: usize,
        output_dim: usize,
        hidden_dim: usize,
        store: &mut ParameterStore<T>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !output_dim.is_multiple_of(2) {
            return Err(Error::config("embed_dim", format!("must be even, got {output_dim}")));
        }
        let dims: Vec<(usize, usize)> = match kind {
            HeadKind::Identity => {
                if input_dim != output_dim {
                    return Err(Error::config(
                        "embed_dim",
                        format!("identity head needs embed_dim == input_dim ({input_dim}), got {output_dim}"),
                    ));
                }
                vec![]
            }
            HeadKind::Linear => vec![(input_dim, output_dim)],
            HeadKind::TwoLayer => {
                if hidden_dim == 0 {
                    return Err(Error::config("hidden_dim", "must be positive"));
                }
                vec![(input_dim, hidden_dim), (hidden_dim, output_dim)]
            }
        };
        let mut layers = Vec::new();
        for (i, (n_in, n_out)) in dims.into_iter().enumerate() {
            let w = store.insert(format!("head.{i}.weight"), fan_in_uniform(rng, &[n_out, n_in], n_in))?;
            let b = store.insert(format!("head.{i}.bias"), fan_in_uniform(rng, &[n_out], n_in))?;
            layers.push((w, b));
        }
        Ok(EmbeddingHead {
            kind,
            input_dim,
            output_dim,
            layers,
        })
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Applies the head to every row of `frames` (`n×D_in` → `n×D`).
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParameterStore<T>,
        frames: Var,
        track: bool,
    ) -> Result<Var> {
        let d_in = tape.value(frames).cols();
        if d_in != self.input_dim {
            return Err(Error::config(
                "input_dim",
                format!("head expects {} features per frame, got {d_in}", self.input_dim),
            ));
        }
        let mut x = frames;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let (w, b) = if track {
                (tape.param(store, *w), tape.param(store, *b))
            } else {
                (tape.frozen_param(store, *w), tape.frozen_param(store, *b))
            };
            x = tape.linear(x, w, Some(b))?;
            if i + 1 < self.layers.len() {
                x = tape.tanh(x);
            }
        }
        Ok(x)
    }

    /// Forward-only convenience for a whole `F×D_in` video.
    pub fn embed<T: Real>(&self, store: &ParameterStore<T>, raw: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(raw.clone());
        let y = self.forward(&mut tape, store, x, false)?;
        Ok(tape.value(y).clone())
    }
}
