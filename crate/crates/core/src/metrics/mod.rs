//! Ensemble prediction combiners and continual-learning metrics.

mod combine;
mod matrix;

pub use combine::{combine_average, combine_average_logits, combine_hard_vote, combine_majority_vote, Combiner, PredictionBatch};
pub use matrix::{
    final_accuracy, forgetting, forgetting_improvement, learning_accuracy, AccuracyMatrix, MetricsSummary,
};
