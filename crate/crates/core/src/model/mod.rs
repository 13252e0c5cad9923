//! The TRX model: embedding head, one cross-attention module per tuple
//! cardinality, summed class distances and nearest-class prediction.

mod checkpoint;
mod cross;
mod head;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use cross::{
    attention_scores, class_distance, class_distance_on_tape, query_prototype, tuple_distance, CrossTransformerInit,
    CrossTransformerParams,
};
pub use head::{EmbeddingHead, HeadKind};

use crate::episodes::{Episode, VideoFeatures};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::{ParameterStore, Real, Tape, Tensor, Var};
use crate::tuples::{enumerate_tuples, PositionalEncoder, TupleIndexSet};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub omegas: Vec<usize>,
    pub frames: usize,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub head: HeadKind,
    pub hidden_dim: usize,
    pub pe: bool,
    pub pe_base: f64,
    pub share_qk: bool,
    pub ln_affine: bool,
    pub ln_eps: f64,
    pub softmax_scaling: bool,
    /// Fraction of each tuple set kept, in (0, 1].
    pub retention: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            omegas: vec![2, 3],
            frames: 8,
            input_dim: 32,
            embed_dim: 32,
            d_k: 64,
            d_v: 64,
            head: HeadKind::Linear,
            hidden_dim: 64,
            pe: true,
            pe_base: PositionalEncoder::DEFAULT_BASE,
            share_qk: true,
            ln_affine: true,
            ln_eps: 1e-5,
            softmax_scaling: true,
            retention: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::config("frames", "must be positive"));
        }
        if self.omegas.is_empty() {
            return Err(Error::config("omega", "needs at least one cardinality"));
        }
        for (i, &w) in self.omegas.iter().enumerate() {
            if w == 0 || w > self.frames {
                return Err(Error::config(
                    "omega",
                    format!("cardinality {w} must be in 1..={} (frames)", self.frames),
                ));
            }
            if self.omegas[..i].contains(&w) {
                return Err(Error::config("omega", format!("cardinality {w} listed twice")));
            }
        }
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(2) {
            return Err(Error::config(
                "embed_dim",
                format!("must be even and positive, got {}", self.embed_dim),
            ));
        }
        for (key, v) in [("input_dim", self.input_dim), ("d_k", self.d_k), ("d_v", self.d_v)] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.head == HeadKind::Identity && self.input_dim != self.embed_dim {
            return Err(Error::config(
                "embed_dim",
                format!("identity head needs embed_dim == input_dim ({})", self.input_dim),
            ));
        }
        if self.head == HeadKind::TwoLayer && self.hidden_dim == 0 {
            return Err(Error::config("hidden_dim", "must be positive"));
        }
        if self.pe_base.is_nan() || self.pe_base <= 0.0 {
            return Err(Error::config("pe_base", "must be > 0"));
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return Err(Error::config("ln_eps", "must be > 0"));
        }
        if !(self.retention > 0.0 && self.retention <= 1.0) {
            return Err(Error::config(
                "retention",
                format!("must be in (0, 1], got {}", self.retention),
            ));
        }
        Ok(())
    }

    /// Softmax temperature: `√d_k`, or 1 with scaling disabled.
    pub fn softmax_scale(&self) -> f64 {
        if self.softmax_scaling {
            (self.d_k as f64).sqrt()
        } else {
            1.0
        }
    }
}

/// Per-class distances of one query; the smallest wins.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassDistances(pub Vec<f64>);

impl ClassDistances {
    pub fn classify(&self) -> usize {
        classify(&self.0)
    }
}

/// Index of the smallest distance, lowest index on ties.
pub fn classify(distances: &[f64]) -> usize {
    let mut best = 0;
    for (i, d) in distances.iter().enumerate() {
        if *d < distances[best] {
            best = i;
        }
    }
    best
}

/// Tape handles produced by one batched forward pass.
pub struct ForwardPass {
    /// `[C]` distance vector per query.
    pub distances: Vec<Var>,
    /// `[query][omega][class]` scalar distance of one cardinality.
    pub omega_distances: Vec<Vec<Vec<Var>>>,
    /// `[query][omega][class]` attention, `M × (K_c·M)` with columns in
    /// `(k, m)` order.
    pub attention: Vec<Vec<Vec<Var>>>,
}

#[derive(Clone, Debug)]
pub struct TrxModel<T> {
    config: ModelConfig,
    store: ParameterStore<T>,
    head: EmbeddingHead,
    transformers: Vec<CrossTransformerParams>,
    tuple_sets: Vec<TupleIndexSet>,
    encoder: PositionalEncoder,
}

impl<T: Real> TrxModel<T> {
    /// Fresh model; parameters and retained tuples are drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new();
        let mut rng = rng_from_seed(derive_seed(seed, "init"));
        let head = EmbeddingHead::new(
            config.head,
            config.input_dim,
            config.embed_dim,
            config.hidden_dim,
            &mut store,
            &mut rng,
        )?;
        let mut transformers = Vec::new();
        let mut tuple_sets = Vec::new();
        for &w in &config.omegas {
            let init = CrossTransformerInit {
                cardinality: w,
                embed_dim: config.embed_dim,
                d_k: config.d_k,
                d_v: config.d_v,
                share_qk: config.share_qk,
                ln_affine: config.ln_affine,
                ln_eps: config.ln_eps,
            };
            transformers.push(CrossTransformerParams::new(&init, &mut store, &mut rng)?);
            let full = enumerate_tuples(config.frames, w)?;
            tuple_sets.push(full.subsample(config.retention, derive_seed(seed, &format!("tuples{w}")))?);
        }
        let encoder = PositionalEncoder::new(config.embed_dim, config.pe_base)?;
        Ok(TrxModel {
            config,
            store,
            head,
            transformers,
            tuple_sets,
            encoder,
        })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        store: ParameterStore<T>,
        tuple_sets: Vec<TupleIndexSet>,
    ) -> Result<Self> {
        // rebuild the layout on a scratch store, then check names and shapes
        let mut model = TrxModel::<T>::new(config, 0)?;
        for (name, value) in model.store.iter() {
            match store.get(name) {
                Some(v) if v.shape() == value.shape() => {}
                Some(v) => {
                    return Err(Error::Dimension {
                        op: "checkpoint parameter",
                        left: value.shape().to_vec(),
                        right: v.shape().to_vec(),
                    })
                }
                None => return Err(Error::Argument(format!("checkpoint lacks parameter {name}"))),
            }
        }
        if store.len() != model.store.len() {
            return Err(Error::Argument("checkpoint has unexpected parameters".into()));
        }
        for (set, &w) in tuple_sets.iter().zip(&model.config.omegas) {
            if set.cardinality() != w || set.frames() != model.config.frames {
                return Err(Error::Argument(format!("tuple set for ω={w} does not match the model")));
            }
        }
        if tuple_sets.len() != model.config.omegas.len() {
            return Err(Error::Argument("tuple set count does not match omega".into()));
        }
        // parameter ids are assigned in insertion order, so reinsert in the same order
        let mut ordered = ParameterStore::new();
        let names: Vec<String> = model.store.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            ordered.insert(name.clone(), store.get(&name).expect("checked").clone())?;
        }
        model.store = ordered;
        model.tuple_sets = tuple_sets;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore<T> {
        &mut self.store
    }

    pub fn head(&self) -> &EmbeddingHead {
        &self.head
    }

    pub fn transformers(&self) -> &[CrossTransformerParams] {
        &self.transformers
    }

    pub fn tuple_sets(&self) -> &[TupleIndexSet] {
        &self.tuple_sets
    }

    pub fn encoder(&self) -> Option<&PositionalEncoder> {
        self.config.pe.then_some(&self.encoder)
    }

    /// Same model with every parameter converted to another precision.
    pub fn cast<U: Real>(&self) -> TrxModel<U> {
        TrxModel {
            config: self.config.clone(),
            store: self.store.cast(),
            head: self.head.clone(),
            transformers: self.transformers.clone(),
            tuple_sets: self.tuple_sets.clone(),
            encoder: self.encoder,
        }
    }

    /// Per-frame embeddings of one `F×D_in` video.
    pub fn embed_video(&self, raw: &Tensor<T>) -> Result<Tensor<T>> {
        self.head.embed(&self.store, raw)
    }

    fn check_video(&self, v: &VideoFeatures) -> Result<()> {
        if v.frames() != self.config.frames {
            return Err(Error::config(
                "frames",
                format!("model expects {} frames, video has {}", self.config.frames, v.frames()),
            ));
        }
        if v.dim() != self.config.input_dim {
            return Err(Error::config(
                "input_dim",
                format!(
                    "model expects {} features per frame, video has {}",
                    self.config.input_dim,
                    v.dim()
                ),
            ));
        }
        Ok(())
    }

    /// Batched forward pass of several queries against one support set.
    /// Every video goes through the head once; each support tuple is mapped
    /// once and shared by all queries.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        support: &[Vec<VideoFeatures>],
        queries: &[&VideoFeatures],
        track: bool,
    ) -> Result<ForwardPass> {
        if support.is_empty() {
            return Err(Error::Argument("no support classes".into()));
        }
        if let Some(c) = support.iter().position(|s| s.is_empty()) {
            return Err(Error::Argument(format!("support class {c} is empty")));
        }
        if queries.is_empty() {
            return Err(Error::Argument("no query videos".into()));
        }
        let f = self.config.frames;
        let d_in = self.config.input_dim;
        let videos: Vec<&VideoFeatures> = support.iter().flatten().chain(queries.iter().copied()).collect();
        let n_support: usize = support.iter().map(Vec::len).sum();
        let mut raw = Vec::with_capacity(videos.len() * f * d_in);
        for v in &videos {
            self.check_video(v)?;
            raw.extend(v.data().iter().map(|x| T::of(*x as f64)));
        }
        let raw = tape.constant(Tensor::matrix(videos.len() * f, d_in, raw)?);
        let mut frames = self.head.forward(tape, &self.store, raw, track)?;
        if self.config.pe {
            let table = self.encoder.table::<T>(f);
            let tiled: Vec<T> = (0..videos.len()).flat_map(|_| table.data().iter().copied()).collect();
            let pe = tape.constant(Tensor::matrix(videos.len() * f, self.config.embed_dim, tiled)?);
            frames = tape.add(frames, pe)?;
        }

        let scale = self.config.softmax_scale();
        let n_classes = support.len();
        let mut omega_distances = vec![Vec::with_capacity(self.transformers.len()); queries.len()];
        let mut attention = vec![Vec::with_capacity(self.transformers.len()); queries.len()];
        for (params, set) in self.transformers.iter().zip(&self.tuple_sets) {
            let m = set.len();
            let rows: Vec<usize> = (0..videos.len())
                .flat_map(|v| set.flat().iter().map(move |i| v * f + i))
                .collect();
            let tuples = tape.gather_rows(frames, rows, params.cardinality())?;
            let s_tuples = tape.slice_rows(tuples, 0, n_support * m)?;
            let q_tuples = tape.slice_rows(tuples, n_support * m, queries.len() * m)?;
            let sk = params.support_keys(tape, &self.store, s_tuples, track)?;
            let sv = params.values(tape, &self.store, s_tuples, track)?;
            let qk = params.query_keys(tape, &self.store, q_tuples, track)?;
            let qv = params.values(tape, &self.store, q_tuples, track)?;

            let mut class_keys = Vec::with_capacity(n_classes);
            let mut start = 0;
            for class in support {
                let len = class.len() * m;
                class_keys.push((tape.slice_rows(sk, start, len)?, tape.slice_rows(sv, start, len)?));
                start += len;
            }
            for q in 0..queries.len() {
                let qk_q = tape.slice_rows(qk, q * m, m)?;
                let qv_q = tape.slice_rows(qv, q * m, m)?;
                let mut dists = Vec::with_capacity(n_classes);
                let mut maps = Vec::with_capacity(n_classes);
                for &(sk_c, sv_c) in &class_keys {
                    let (d, a) = class_distance_on_tape(tape, qk_q, qv_q, sk_c, sv_c, scale)?;
                    dists.push(d);
                    maps.push(a);
                }
                omega_distances[q].push(dists);
                attention[q].push(maps);
            }
        }

        let mut distances = Vec::with_capacity(queries.len());
        for per_omega in &omega_distances {
            let mut per_class = Vec::with_capacity(n_classes);
            for c in 0..n_classes {
                let mut total = per_omega[0][c];
                for w in per_omega.iter().skip(1) {
                    total = tape.add(total, w[c])?;
                }
                per_class.push(total);
            }
            distances.push(tape.concat(&per_class));
        }
        Ok(ForwardPass {
            distances,
            omega_distances,
            attention,
        })
    }

    /// Mean cross-entropy over the episode's queries, on a fresh tape.
    pub fn episode_loss(&self, tape: &mut Tape<T>, episode: &Episode, track: bool) -> Result<(Var, ForwardPass)> {
        let queries: Vec<&VideoFeatures> = episode.queries.iter().map(|q| &q.video).collect();
        let pass = self.forward(tape, &episode.support, &queries, track)?;
        let mut losses = Vec::with_capacity(queries.len());
        for (d, q) in pass.distances.iter().zip(&episode.queries) {
            losses.push(tape.cross_entropy_from_distances(*d, q.target)?);
        }
        let stacked = tape.concat(&losses);
        let loss = tape.mean(stacked)?;
        Ok((loss, pass))
    }

    /// Class distances of one query against a support set.
    pub fn trx_distances(&self, query: &VideoFeatures, support: &[Vec<VideoFeatures>]) -> Result<ClassDistances> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, support, &[query], false)?;
        Ok(ClassDistances(
            tape.value(pass.distances[0])
                .data()
                .iter()
                .map(|v| v.as_f64())
                .collect(),
        ))
    }

    /// Class distances for every query of an episode.
    pub fn episode_distances(&self, episode: &Episode) -> Result<Vec<ClassDistances>> {
        let mut tape = Tape::new();
        let queries: Vec<&VideoFeatures> = episode.queries.iter().map(|q| &q.video).collect();
        let pass = self.forward(&mut tape, &episode.support, &queries, false)?;
        Ok(pass
            .distances
            .iter()
            .map(|d| ClassDistances(tape.value(*d).data().iter().map(|v| v.as_f64()).collect()))
            .collect())
    }
}
