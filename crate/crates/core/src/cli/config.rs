//! Run configuration: one table of keys drives defaults, the config file
//! parser, the command-line flags and the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::episodes::{Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Precision;
use crate::train_eval::{AblationKind, AblationPlan, EvalOptions, TrainConfig};

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

/// Every configuration key with its default, in manifest order.
pub const KEYS: &[Key] = &[
    key("omega", "2,3", "tuple cardinalities, comma separated"),
    key("frames", "8", "frames per video"),
    key("input_dim", "32", "features per input frame"),
    key("embed_dim", "32", "frame embedding size (even)"),
    key("d_k", "64", "query/key size"),
    key("d_v", "64", "value size"),
    key("head", "linear", "embedding head: identity, linear or two_layer"),
    key("hidden_dim", "64", "hidden size of the two-layer head"),
    key("pe", "true", "add positional encodings"),
    key("pe_base", "10000", "positional encoding base"),
    key("share_qk", "true", "share query and key maps"),
    key("ln_affine", "true", "learnable layer-norm gain and bias"),
    key("ln_eps", "1e-5", "layer-norm epsilon"),
    key("softmax_scaling", "true", "divide attention scores by sqrt(d_k)"),
    key("retention", "1.0", "fraction of tuples kept"),
    key("way", "5", "classes per episode"),
    key("shot", "5", "support videos per class"),
    key("n_query", "1", "query videos per episode"),
    key("learning_rate", "0.001", "SGD learning rate"),
    key("accumulation", "16", "episodes per parameter update"),
    key("train_episodes", "2000", "training episodes"),
    key("eval_episodes", "1000", "evaluation episodes"),
    key("split", "test", "evaluation split: train, val or test"),
    key("reversed", "false", "reverse query frames at evaluation"),
    key("seed", "0", "master seed"),
    key("precision", "f32", "f32 or f64 (TRX_PRECISION=f64 forces f64)"),
    key("workers", "0", "evaluation threads, 0 for all cores"),
    key(
        "timing",
        "auto",
        "record wall-clock seconds: true, false or auto (off in f64)",
    ),
    key("classes", "20", "synthetic: number of classes"),
    key("motifs", "2", "synthetic: motifs per class"),
    key("videos_per_class", "20", "synthetic: videos per class"),
    key("noise", "0.1", "synthetic: Gaussian noise sigma"),
    key("motif_duration", "1.5", "synthetic: nominal frames per motif"),
    key("speed_jitter", "0.25", "synthetic: relative speed jitter"),
    key("offset_jitter", "1.25", "synthetic: onset jitter in frames"),
    key("order_pairs", "true", "synthetic: classes in time-mirrored pairs"),
    key(
        "vocabulary",
        "6",
        "synthetic: shared motif pool size, 0 for fresh motifs",
    ),
    key("kind", "omega_sweep", "ablation kind"),
    key(
        "sweep_omegas",
        "1;2;3;4;2,3;2,4;3,4;2,3,4",
        "omega_sweep values, `;` separated",
    ),
    key("sweep_shots", "1,2,3,4,5", "shot_sweep values"),
    key("sweep_fractions", "0.2,0.4,0.6,0.8,1.0", "retention_sweep values"),
    key("sweep_runs", "4", "seeded runs per retention value"),
    key("sweep_frames", "4,5,6,7,8,9,10,11,12", "frames_sweep values"),
    key(
        "data",
        "",
        "feature file (.trxf binary, .txt/.csv text); empty generates synthetic data",
    ),
    key("checkpoint", "", "model checkpoint to load"),
    key("out", "out", "output directory"),
];

/// Accepted spellings that map onto a key.
pub const ALIASES: &[(&str, &str)] = &[("lr", "learning_rate")];

fn canonical(name: &str) -> Option<&'static str> {
    let name = ALIASES.iter().find(|(a, _)| *a == name).map_or(name, |(_, k)| *k);
    KEYS.iter().find(|k| k.name == name).map(|k| k.name)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub synthetic: SyntheticSpec,
    pub plan: AblationPlan,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    /// Resolved textual value of every key.
    values: BTreeMap<&'static str, String>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::config(key, format!("expected true or false, got `{other}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str, sep: char) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<&str> = value.split(sep).map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::config(key, "needs at least one value"));
    }
    items.into_iter().map(|s| parse(key, s)).collect()
}

impl RunConfig {
    /// Builds a configuration from `(key, value)` pairs applied in order
    /// over the defaults.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut values: BTreeMap<&'static str, String> = KEYS.iter().map(|k| (k.name, k.default.to_string())).collect();
        for (k, v) in pairs {
            let name = canonical(k.trim()).ok_or_else(|| Error::config(k.trim(), "unknown configuration key"))?;
            values.insert(name, v.trim().to_string());
        }
        Self::from_values(values)
    }

    fn from_values(mut values: BTreeMap<&'static str, String>) -> Result<Self> {
        let get = |k: &str| values[k].as_str();
        let precision: Precision = match std::env::var("TRX_PRECISION") {
            Ok(p) if !p.trim().is_empty() => parse("TRX_PRECISION", &p)?,
            _ => parse("precision", get("precision"))?,
        };
        let timing = match get("timing") {
            "auto" => precision == Precision::F32,
            v => parse_bool("timing", v)?,
        };
        let model = ModelConfig {
            omegas: parse_list("omega", get("omega"), ',')?,
            frames: parse("frames", get("frames"))?,
            input_dim: parse("input_dim", get("input_dim"))?,
            embed_dim: parse("embed_dim", get("embed_dim"))?,
            d_k: parse("d_k", get("d_k"))?,
            d_v: parse("d_v", get("d_v"))?,
            head: parse("head", get("head"))?,
            hidden_dim: parse("hidden_dim", get("hidden_dim"))?,
            pe: parse_bool("pe", get("pe"))?,
            pe_base: parse("pe_base", get("pe_base"))?,
            share_qk: parse_bool("share_qk", get("share_qk"))?,
            ln_affine: parse_bool("ln_affine", get("ln_affine"))?,
            ln_eps: parse("ln_eps", get("ln_eps"))?,
            softmax_scaling: parse_bool("softmax_scaling", get("softmax_scaling"))?,
            retention: parse("retention", get("retention"))?,
        };
        let train = TrainConfig {
            model,
            way: parse("way", get("way"))?,
            shot: parse("shot", get("shot"))?,
            n_query: parse("n_query", get("n_query"))?,
            learning_rate: parse("learning_rate", get("learning_rate"))?,
            accumulation: parse("accumulation", get("accumulation"))?,
            episodes: parse("train_episodes", get("train_episodes"))?,
            seed: parse("seed", get("seed"))?,
            precision,
        };
        train.validate()?;
        let eval = EvalOptions {
            split: parse::<Split>("split", get("split"))?,
            way: train.way,
            shot: train.shot,
            n_query: train.n_query,
            episodes: parse("eval_episodes", get("eval_episodes"))?,
            seed: train.seed,
            reversed: parse_bool("reversed", get("reversed"))?,
            workers: parse("workers", get("workers"))?,
            timing,
        };
        if eval.episodes == 0 {
            return Err(Error::config("eval_episodes", "must be positive"));
        }
        let synthetic = SyntheticSpec {
            classes: parse("classes", get("classes"))?,
            motifs: parse("motifs", get("motifs"))?,
            dim: train.model.input_dim,
            frames: train.model.frames,
            videos_per_class: parse("videos_per_class", get("videos_per_class"))?,
            noise: parse("noise", get("noise"))?,
            motif_duration: parse("motif_duration", get("motif_duration"))?,
            speed_jitter: parse("speed_jitter", get("speed_jitter"))?,
            offset_jitter: parse("offset_jitter", get("offset_jitter"))?,
            order_pairs: parse_bool("order_pairs", get("order_pairs"))?,
            vocabulary: parse("vocabulary", get("vocabulary"))?,
        };
        let kind: AblationKind = get("kind")
            .parse()
            .map_err(|e: Error| Error::config("kind", e.to_string()))?;
        let mut plan = AblationPlan::new(kind, train.clone(), eval.clone());
        plan.omegas = get("sweep_omegas")
            .split(';')
            .map(|s| parse_list("sweep_omegas", s, ','))
            .collect::<Result<_>>()?;
        plan.shots = parse_list("sweep_shots", get("sweep_shots"), ',')?;
        plan.fractions = parse_list("sweep_fractions", get("sweep_fractions"), ',')?;
        plan.runs = parse("sweep_runs", get("sweep_runs"))?;
        plan.frames = parse_list("sweep_frames", get("sweep_frames"), ',')?;
        let path = |k: &str| (!get(k).is_empty()).then(|| PathBuf::from(get(k)));
        let (data, checkpoint, out) = (path("data"), path("checkpoint"), PathBuf::from(get("out")));

        values.insert("precision", precision.as_str().to_string());
        values.insert("timing", timing.to_string());
        Ok(RunConfig {
            train,
            eval,
            synthetic,
            plan,
            data,
            checkpoint,
            out,
            values,
        })
    }

    /// Resolved `key = value` lines in table order; parseable as a config file.
    pub fn to_config_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{} = {}\n", k.name, self.values[k.name]))
            .collect()
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(line, format!("line {}: expected `key = value`", n + 1)))?;
        let k = k.trim();
        if canonical(k).is_none() {
            return Err(Error::config(k, format!("line {}: unknown configuration key", n + 1)));
        }
        pairs.push((k.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Defaults, then the file (if any), then flag overrides.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut pairs = match path {
        Some(p) => parse_config_text(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => Vec::new(),
    };
    pairs.extend(overrides.iter().cloned());
    RunConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
}
