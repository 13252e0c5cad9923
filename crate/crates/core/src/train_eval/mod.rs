//! Episodic training, evaluation, ablation sweeps and attention analytics.

mod ablation;
mod analytics;
mod eval;
mod train;

pub(crate) use ablation::metrics_row;
pub use ablation::{run_ablation, AblationKind, AblationPlan, MetricsRow};
pub use analytics::{attention_analytics, AttentionStats, Heatmap, Outcome};
pub use eval::{evaluate, EvalOptions, EvalReport};
pub use train::{train, train_model, TrainConfig, TrainLog};
