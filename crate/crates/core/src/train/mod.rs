//! Training, evaluation, gradient checking and experiment harnesses.

mod experiment;
mod gradcheck;
mod metrics;
mod optim;
mod trainer;

pub use experiment::{
    format_results, run_experiment, sigma_summary, write_results, ExperimentGrid, ExperimentKind,
    ResultRow, TaskSubset, RESULT_COLUMNS,
};
pub use gradcheck::{grad_check, GradCheckReport};
pub use metrics::{
    evaluate, evaluate_reviews, mae, micro_f1, per_entity_f1, score_predictions, Confusion,
    EntityScore, MetricsBundle, Predictor, THRESHOLD,
};
pub use optim::{add_weight_decay, clip_global_norm, Adam, PlateauScheduler};
pub use trainer::{
    train, train_model, write_history, EpochRecord, TrainConfig, TrainOutcome, HISTORY_COLUMNS,
};
