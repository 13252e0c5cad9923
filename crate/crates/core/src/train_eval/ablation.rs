use serde::Serialize;

use super::eval::{evaluate, EvalOptions};
use super::train::{train, TrainConfig};
use crate::episodes::Dataset;
use crate::error::{Error, Result};
use crate::model::TrxModel;
use crate::rng::derive_seed;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationKind {
    OmegaSweep,
    ReverseOrder,
    ShotSweep,
    RetentionSweep,
    FramesSweep,
    PeToggle,
}

impl AblationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationKind::OmegaSweep => "omega_sweep",
            AblationKind::ReverseOrder => "reverse_order",
            AblationKind::ShotSweep => "shot_sweep",
            AblationKind::RetentionSweep => "retention_sweep",
            AblationKind::FramesSweep => "frames_sweep",
            AblationKind::PeToggle => "pe_toggle",
        }
    }
}

impl std::str::FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "omega_sweep" => AblationKind::OmegaSweep,
            "reverse_order" => AblationKind::ReverseOrder,
            "shot_sweep" => AblationKind::ShotSweep,
            "retention_sweep" => AblationKind::RetentionSweep,
            "frames_sweep" => AblationKind::FramesSweep,
            "pe_toggle" => AblationKind::PeToggle,
            other => {
                return Err(Error::Argument(format!(
                    "unknown ablation kind `{other}` (expected omega_sweep, reverse_order, \
                     shot_sweep, retention_sweep, frames_sweep or pe_toggle)"
                )))
            }
        })
    }
}

/// A sweep: base training/evaluation settings plus the values to visit.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationPlan {
    pub kind: AblationKind,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub omegas: Vec<Vec<usize>>,
    pub shots: Vec<usize>,
    pub fractions: Vec<f64>,
    /// Independently seeded runs per retention fraction.
    pub runs: usize,
    pub frames: Vec<usize>,
}

impl AblationPlan {
    pub fn new(kind: AblationKind, train: TrainConfig, eval: EvalOptions) -> Self {
        AblationPlan {
            kind,
            train,
            eval,
            omegas: vec![
                vec![1],
                vec![2],
                vec![3],
                vec![4],
                vec![2, 3],
                vec![2, 4],
                vec![3, 4],
                vec![2, 3, 4],
            ],
            shots: (1..=5).collect(),
            fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            runs: 4,
            frames: (4..=12).collect(),
        }
    }
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub kind: String,
    pub omega: Vec<usize>,
    pub shot: usize,
    pub fraction: f64,
    pub frames: usize,
    pub pe: bool,
    pub reversed: bool,
    pub n_episodes: usize,
    pub accuracy: f64,
    pub ci95: f64,
    /// Retained tuples summed over cardinalities of two or more; single
    /// frames count as zero tuples.
    pub tuple_count: usize,
    pub seconds: Option<f64>,
    pub seed: u64,
}

impl MetricsRow {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics rows serialise")
    }
}

fn tuple_count<T: Real>(model: &TrxModel<T>) -> usize {
    model
        .tuple_sets()
        .iter()
        .filter(|s| s.cardinality() >= 2)
        .map(|s| s.len())
        .sum()
}

/// Evaluates `model` and builds its metrics row.
pub(crate) fn metrics_row<T: Real>(
    kind: &str,
    model: &TrxModel<T>,
    dataset: &Dataset,
    eval: &EvalOptions,
    seed: u64,
    per_episode_seconds: bool,
) -> Result<MetricsRow> {
    let report = evaluate(model, dataset, eval)?;
    let config = model.config();
    Ok(MetricsRow {
        kind: kind.to_string(),
        omega: config.omegas.clone(),
        shot: eval.shot,
        fraction: config.retention,
        frames: config.frames,
        pe: config.pe,
        reversed: eval.reversed,
        n_episodes: report.episodes,
        accuracy: report.accuracy,
        ci95: report.ci95,
        tuple_count: tuple_count(model),
        seconds: report.seconds.map(|s| {
            if per_episode_seconds {
                s / report.episodes as f64
            } else {
                s
            }
        }),
        seed,
    })
}

/// Trains and evaluates one model per sweep value. Every finished row is
/// passed to `sink` before the next model starts.
pub fn run_ablation<T: Real>(
    plan: &AblationPlan,
    dataset: &Dataset,
    mut sink: impl FnMut(&MetricsRow) -> Result<()>,
) -> Result<Vec<MetricsRow>> {
    let kind = plan.kind.as_str();
    let mut rows = Vec::new();
    let mut emit = |row: MetricsRow, rows: &mut Vec<MetricsRow>| -> Result<()> {
        sink(&row)?;
        rows.push(row);
        Ok(())
    };
    let base = &plan.train;
    let run = |train_cfg: &TrainConfig, eval: &EvalOptions, per_episode: bool| -> Result<MetricsRow> {
        let (model, _) = train::<T>(train_cfg, dataset)?;
        metrics_row(kind, &model, dataset, eval, train_cfg.seed, per_episode)
    };
    match plan.kind {
        AblationKind::OmegaSweep => {
            for omegas in &plan.omegas {
                let mut cfg = base.clone();
                cfg.model.omegas = omegas.clone();
                emit(run(&cfg, &plan.eval, false)?, &mut rows)?;
            }
        }
        AblationKind::ReverseOrder => {
            let (model, _) = train::<T>(base, dataset)?;
            for reversed in [false, true] {
                let eval = EvalOptions {
                    reversed,
                    ..plan.eval.clone()
                };
                emit(metrics_row(kind, &model, dataset, &eval, base.seed, false)?, &mut rows)?;
            }
        }
        AblationKind::ShotSweep => {
            for &shot in &plan.shots {
                let cfg = TrainConfig { shot, ..base.clone() };
                let eval = EvalOptions {
                    shot,
                    ..plan.eval.clone()
                };
                emit(run(&cfg, &eval, false)?, &mut rows)?;
            }
        }
        AblationKind::RetentionSweep => {
            for &fraction in &plan.fractions {
                for r in 0..plan.runs {
                    let mut cfg = base.clone();
                    cfg.model.retention = fraction;
                    cfg.seed = derive_seed(base.seed, &format!("run{r}"));
                    emit(run(&cfg, &plan.eval, false)?, &mut rows)?;
                }
            }
        }
        AblationKind::FramesSweep => {
            for &frames in &plan.frames {
                let mut cfg = base.clone();
                cfg.model.frames = frames;
                emit(run(&cfg, &plan.eval, true)?, &mut rows)?;
            }
        }
        AblationKind::PeToggle => {
            for pe in [true, false] {
                let mut cfg = base.clone();
                cfg.model.pe = pe;
                emit(run(&cfg, &plan.eval, false)?, &mut rows)?;
            }
        }
    }
    Ok(rows)
}
