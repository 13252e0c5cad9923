//! One cross-attention module per tuple cardinality.
//!
//! For query tuple `p` and class `c`, scores against every support tuple
//! `(k, m)` are `LN(key_map(S_km)) · LN(query_map(Q_p))`, normalised with a
//! softmax over all `(k, m)` of the class. The prototype is the
//! attention-weighted sum of `value_map(S_km)`, and the tuple distance is
//! `‖prototype − value_map(Q_p)‖`. Class distance is the mean over query
//! tuples.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{fan_in_uniform, ParamId, ParameterStore, Real, Tape, Tensor, Var};
use crate::tuples::TupleRepresentation;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Affine {
    weight: ParamId,
    bias: ParamId,
}

/// Parameters of the cross-attention module for one cardinality.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossTransformerParams {
    cardinality: usize,
    input_dim: usize,
    d_k: usize,
    d_v: usize,
    query: Affine,
    // `None` when the query map doubles as the key map
    key: Option<Affine>,
    value: Affine,
    norm: Option<(ParamId, ParamId)>,
    ln_eps: f64,
}

pub struct CrossTransformerInit {
    pub cardinality: usize,
    pub embed_dim: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub share_qk: bool,
    pub ln_affine: bool,
    pub ln_eps: f64,
}

impl CrossTransformerParams {
    pub fn new<T: Real>(init: &CrossTransformerInit, store: &mut ParameterStore<T>, rng: &mut Rng) -> Result<Self> {
        let w = init.cardinality;
        let n_in = w * init.embed_dim;
        let mut affine = |name: &str, n_out: usize| -> Result<Affine> {
            Ok(Affine {
                weight: store.insert(
                    format!("trx{w}.{name}.weight"),
                    fan_in_uniform(rng, &[n_out, n_in], n_in),
                )?,
                bias: store.insert(format!("trx{w}.{name}.bias"), fan_in_uniform(rng, &[n_out], n_in))?,
            })
        };
        let query = affine(if init.share_qk { "qk" } else { "query" }, init.d_k)?;
        let key = if init.share_qk {
            None
        } else {
            Some(affine("key", init.d_k)?)
        };
        let value = affine("value", init.d_v)?;
        let norm = if init.ln_affine {
            let ones = Tensor::new(vec![init.d_k], vec![T::one(); init.d_k])?;
            Some((
                store.insert(format!("trx{w}.norm.gain"), ones)?,
                store.insert(format!("trx{w}.norm.bias"), Tensor::zeros(&[init.d_k]))?,
            ))
        } else {
            None
        };
        Ok(CrossTransformerParams {
            cardinality: w,
            input_dim: n_in,
            d_k: init.d_k,
            d_v: init.d_v,
            query,
            key,
            value,
            norm,
            ln_eps: init.ln_eps,
        })
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    /// `ω·D`, the flattened tuple length.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn d_k(&self) -> usize {
        self.d_k
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn shares_query_key(&self) -> bool {
        self.key.is_none()
    }

    fn load<T: Real>(tape: &mut Tape<T>, store: &ParameterStore<T>, id: ParamId, track: bool) -> Var {
        if track {
            tape.param(store, id)
        } else {
            tape.frozen_param(store, id)
        }
    }

    fn check_input<T: Real>(&self, tape: &Tape<T>, tuples: Var) -> Result<()> {
        let cols = tape.value(tuples).cols();
        if cols != self.input_dim {
            return Err(Error::Argument(format!(
                "cardinality mismatch: module for ω={} expects tuples of length {}, got {cols}",
                self.cardinality, self.input_dim
            )));
        }
        Ok(())
    }

    fn keyed<T: Real>(
        &self,
        map: Affine,
        tape: &mut Tape<T>,
        store: &ParameterStore<T>,
        tuples: Var,
        track: bool,
    ) -> Result<Var> {
        self.check_input(tape, tuples)?;
        let w = Self::load(tape, store, map.weight, track);
        let b = Self::load(tape, store, map.bias, track);
        let y = tape.linear(tuples, w, Some(b))?;
        let (gain, bias) = match self.norm {
            Some((g, b)) => (
                Some(Self::load(tape, store, g, track)),
                Some(Self::load(tape, store, b, track)),
            ),
            None => (None, None),
        };
        tape.layer_norm(y, gain, bias, self.ln_eps)
    }

    /// `LN(query_map(tuple))` for every row of `tuples`.
    pub fn query_keys<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParameterStore<T>,
        tuples: Var,
        track: bool,
    ) -> Result<Var> {
        self.keyed(self.query, tape, store, tuples, track)
    }

    /// `LN(key_map(tuple))` for every row of `tuples`.
    pub fn support_keys<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParameterStore<T>,
        tuples: Var,
        track: bool,
    ) -> Result<Var> {
        self.keyed(self.key.unwrap_or(self.query), tape, store, tuples, track)
    }

    /// `value_map(tuple)` for every row; no normalisation.
    pub fn values<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParameterStore<T>,
        tuples: Var,
        track: bool,
    ) -> Result<Var> {
        self.check_input(tape, tuples)?;
        let w = Self::load(tape, store, self.value.weight, track);
        let b = Self::load(tape, store, self.value.bias, track);
        tape.linear(tuples, w, Some(b))
    }
}

/// Distance of one query (its `P` tuples) to one class (its `n` support
/// tuples). Returns the scalar distance and the `P×n` attention map; the
/// softmax runs separately for every query tuple.
pub fn class_distance_on_tape<T: Real>(
    tape: &mut Tape<T>,
    query_keys: Var,
    query_values: Var,
    support_keys: Var,
    support_values: Var,
    scale: f64,
) -> Result<(Var, Var)> {
    if tape.value(support_keys).rows() == 0 {
        return Err(Error::Argument("empty support set".into()));
    }
    let scores = tape.matmul_nt(query_keys, support_keys)?;
    let attention = tape.softmax(scores, scale)?;
    let prototypes = tape.matmul(attention, support_values)?;
    let diff = tape.sub(prototypes, query_values)?;
    let norms = tape.row_norms(diff);
    let distance = tape.mean(norms)?;
    Ok((distance, attention))
}

fn stack_tuples<T: Real>(tuples: &[TupleRepresentation<T>]) -> Result<Tensor<T>> {
    let rows: Vec<&[T]> = tuples.iter().map(|t| t.flatten()).collect();
    Tensor::from_rows(&rows)
}

fn check_cardinality<T: Real>(params: &CrossTransformerParams, tuples: &[TupleRepresentation<T>]) -> Result<()> {
    if let Some(t) = tuples.iter().find(|t| t.indices.len() != params.cardinality) {
        return Err(Error::Argument(format!(
            "cardinality mismatch: tuple {:?} given to the ω={} module",
            t.indices, params.cardinality
        )));
    }
    Ok(())
}

/// Raw attention scores of one query tuple against support tuples.
pub fn attention_scores<T: Real>(
    params: &CrossTransformerParams,
    store: &ParameterStore<T>,
    query: &TupleRepresentation<T>,
    supports: &[TupleRepresentation<T>],
) -> Result<Vec<T>> {
    check_cardinality(params, std::slice::from_ref(query))?;
    check_cardinality(params, supports)?;
    let mut tape = Tape::new();
    let q = tape.constant(stack_tuples(std::slice::from_ref(query))?);
    let s = tape.constant(stack_tuples(supports)?);
    let qk = params.query_keys(&mut tape, store, q, false)?;
    let sk = params.support_keys(&mut tape, store, s, false)?;
    let scores = tape.matmul_nt(qk, sk)?;
    Ok(tape.value(scores).data().to_vec())
}

/// Attention-weighted sum of `values` (one row per score).
pub fn query_prototype<T: Real>(scores: &[T], values: &Tensor<T>, scale: f64) -> Result<Vec<T>> {
    if scores.is_empty() {
        return Err(Error::Argument("empty support set".into()));
    }
    if values.rows() != scores.len() {
        return Err(Error::Dimension {
            op: "query_prototype",
            left: vec![scores.len()],
            right: values.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::vector(scores.to_vec()));
    let v = tape.constant(values.clone());
    let a = tape.softmax(s, scale)?;
    let t = tape.matmul(a, v)?;
    Ok(tape.value(t).data().to_vec())
}

/// `‖t − u‖`.
pub fn tuple_distance<T: Real>(t: &[T], u: &[T]) -> Result<T> {
    let mut tape = Tape::new();
    let t = tape.constant(Tensor::vector(t.to_vec()));
    let u = tape.constant(Tensor::vector(u.to_vec()));
    let d = tape.sub(t, u)?;
    let n = tape.row_norms(d);
    Ok(tape.value(n).data()[0])
}

/// Mean tuple distance of a query's tuples to one class's support tuples.
pub fn class_distance<T: Real>(
    params: &CrossTransformerParams,
    store: &ParameterStore<T>,
    query: &[TupleRepresentation<T>],
    supports: &[TupleRepresentation<T>],
    scale: f64,
) -> Result<T> {
    check_cardinality(params, query)?;
    check_cardinality(params, supports)?;
    if supports.is_empty() || query.is_empty() {
        return Err(Error::Argument("empty query or support set".into()));
    }
    let mut tape = Tape::new();
    let q = tape.constant(stack_tuples(query)?);
    let s = tape.constant(stack_tuples(supports)?);
    let qk = params.query_keys(&mut tape, store, q, false)?;
    let qv = params.values(&mut tape, store, q, false)?;
    let sk = params.support_keys(&mut tape, store, s, false)?;
    let sv = params.values(&mut tape, store, s, false)?;
    let (d, _) = class_distance_on_tape(&mut tape, qk, qv, sk, sv, scale)?;
    Ok(tape.value(d).data()[0])
}
