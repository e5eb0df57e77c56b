//! Local low-rank matrix approximation toolkit for rating prediction,
//! with social-graph-driven submatrix construction and social
//! regularization, plus global-factorization baselines.

pub mod data;
pub mod error;
pub mod eval;
pub mod factorization;
pub mod graph;
pub mod ingest;
pub mod llorma;
pub mod sloma;

pub use data::{
    CombineRule, EnsembleModel, FactorModel, LocalModel, Origin, RatingEntry, RatingMatrix,
    SocialGraph, Submatrix, RATING_MAX, RATING_MIN,
};
pub use error::{DataError, GraphError, TrainError};
pub use eval::{
    compare, improvement_percent, mae_rmse, run_experiment, score, summarize, train_model,
    write_comparison_tsv, write_experiment_tsv, ComparisonRow, EvalError, ExperimentSummary,
    MetricPair, ModelSpec, TrainedModel,
};
pub use factorization::{
    derive_seed, gradient, load_model, objective, pcc_similarity, save_model, train, training_rmse,
    SimilarityMatrix, TrainConfig, TrainOutcome,
};
pub use graph::{
    detect_communities, k_hop_ball, load_communities, select_connectors, CommunityCover,
    ConnectorMethod, ConnectorStrategy, CoverSource,
};
pub use ingest::{
    filter_cold_start, generate_synthetic, load_edges, load_ratings, save_ground_truth, split,
    train_size, GroundTruth, SplitSpec, SyntheticSpec,
};
pub use llorma::{
    arc_cos_distance, build_anchor_submatrices, epanechnikov, predict_llorma,
    predict_llorma_detailed, train_llorma, LlormaConfig,
};
pub use sloma::{
    build_social_submatrices, coverage, predict_sloma, predict_sloma_detailed, save_coverage,
    train_sloma, Construction, CoverageReport, SlomaConfig,
};
