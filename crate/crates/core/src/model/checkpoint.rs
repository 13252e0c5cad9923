//! Model checkpoints.
//!
//! Little-endian layout: `"TRXM"`, version `u32`, `|Ω| u32` and each `ω u32`,
//! then `F, D, d_k, d_v, flags, D_in, head kind, hidden` as `u32`, then
//! `pe_base, ln_eps, retention` as `f64`. Per cardinality the retained tuple
//! count `u32` and the tuple indices as `u32`. Finally a tensor count `u32`
//! and per tensor: name length `u32`, UTF-8 name, rank `u32`, extents `u32`,
//! values `f32`.

use std::fs;
use std::path::Path;

use super::{HeadKind, ModelConfig, TrxModel};
use crate::episodes::Cursor;
use crate::error::{Error, Result};
use crate::tensor::{ParameterStore, Real, Tensor};
use crate::tuples::TupleIndexSet;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TRXM";
pub const CHECKPOINT_VERSION: u32 = 1;

const FLAG_PE: u32 = 1;
const FLAG_SHARE_QK: u32 = 1 << 1;
const FLAG_LN_AFFINE: u32 = 1 << 2;
const FLAG_SOFTMAX_SCALING: u32 = 1 << 3;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint<T: Real>(model: &TrxModel<T>) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize);
    put_u32(&mut out, c.omegas.len());
    for w in &c.omegas {
        put_u32(&mut out, *w);
    }
    for v in [c.frames, c.embed_dim, c.d_k, c.d_v] {
        put_u32(&mut out, v);
    }
    let mut flags = 0;
    for (on, bit) in [
        (c.pe, FLAG_PE),
        (c.share_qk, FLAG_SHARE_QK),
        (c.ln_affine, FLAG_LN_AFFINE),
        (c.softmax_scaling, FLAG_SOFTMAX_SCALING),
    ] {
        if on {
            flags |= bit;
        }
    }
    put_u32(&mut out, flags as usize);
    put_u32(&mut out, c.input_dim);
    put_u32(&mut out, c.head.code() as usize);
    put_u32(&mut out, c.hidden_dim);
    for v in [c.pe_base, c.ln_eps, c.retention] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for set in model.tuple_sets() {
        put_u32(&mut out, set.len());
        for i in set.flat() {
            put_u32(&mut out, *i);
        }
    }
    put_u32(&mut out, model.store().len());
    for (name, value) in model.store().iter() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, value.shape().len());
        for e in value.shape() {
            put_u32(&mut out, *e);
        }
        for v in value.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<TrxModel<T>> {
    let mut cur = Cursor::new(bytes);
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(format_err(0, "bad magic, expected TRXM"));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let n_omega = cur.u32("omega count")? as usize;
    if n_omega == 0 || n_omega > 64 {
        return Err(format_err(8, format!("implausible omega count {n_omega}")));
    }
    let mut omegas = Vec::with_capacity(n_omega);
    for _ in 0..n_omega {
        omegas.push(cur.u32("omega")? as usize);
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = cur.u32("dimensions")? as usize;
    }
    let [frames, embed_dim, d_k, d_v] = dims;
    let flags = cur.u32("flags")?;
    let input_dim = cur.u32("input dimension")? as usize;
    let head_at = cur.pos();
    let head = HeadKind::from_code(cur.u32("head kind")?).ok_or_else(|| format_err(head_at, "unknown head kind"))?;
    let hidden_dim = cur.u32("hidden dimension")? as usize;
    let pe_base = cur.f64("pe base")?;
    let ln_eps = cur.f64("layer norm eps")?;
    let retention = cur.f64("retention")?;
    let config = ModelConfig {
        omegas: omegas.clone(),
        frames,
        input_dim,
        embed_dim,
        d_k,
        d_v,
        head,
        hidden_dim,
        pe: flags & FLAG_PE != 0,
        pe_base,
        share_qk: flags & FLAG_SHARE_QK != 0,
        ln_affine: flags & FLAG_LN_AFFINE != 0,
        ln_eps,
        softmax_scaling: flags & FLAG_SOFTMAX_SCALING != 0,
        retention,
    };
    let config_end = cur.pos();
    config
        .validate()
        .map_err(|e| format_err(config_end, format!("invalid header: {e}")))?;

    let mut tuple_sets = Vec::with_capacity(n_omega);
    for &w in &omegas {
        let at = cur.pos();
        let count = cur.u32("tuple count")? as usize;
        if count.saturating_mul(w).saturating_mul(4) > cur.remaining() {
            return Err(format_err(at, "truncated tuple set"));
        }
        let mut tuples = Vec::with_capacity(count);
        for _ in 0..count {
            let mut t = Vec::with_capacity(w);
            for _ in 0..w {
                t.push(cur.u32("tuple index")? as usize);
            }
            tuples.push(t);
        }
        let set =
            TupleIndexSet::from_tuples(frames, w, &tuples, retention).map_err(|e| format_err(at, e.to_string()))?;
        tuple_sets.push(set);
    }

    let count = cur.u32("tensor count")? as usize;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let at = cur.pos();
        let len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| format_err(at, "parameter name is not UTF-8"))?
            .to_string();
        let rank = cur.u32("rank")? as usize;
        if rank > 8 {
            return Err(format_err(at, format!("implausible rank {rank} for {name}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n.saturating_mul(4), "tensor values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        store
            .insert(name, Tensor::new(shape, data)?)
            .map_err(|e| format_err(at, e.to_string()))?;
    }
    if cur.remaining() != 0 {
        return Err(format_err(cur.pos(), format!("{} trailing bytes", cur.remaining())));
    }
    TrxModel::from_parts(config, store, tuple_sets).map_err(|e| format_err(config_end, e.to_string()))
}

pub fn save_checkpoint<T: Real>(path: &Path, model: &TrxModel<T>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<TrxModel<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
