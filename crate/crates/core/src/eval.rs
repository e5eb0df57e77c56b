//! Metrics, the repeated-split experiment runner, and the model
//! comparison table.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{EnsembleModel, FactorModel, RatingEntry, RatingMatrix, SocialGraph, RATING_MAX, RATING_MIN};
use crate::error::TrainError;
use crate::factorization::{pcc_similarity, train, TrainConfig};
use crate::ingest::{split, SplitSpec};
use crate::llorma::{predict_llorma_detailed, train_llorma, LlormaConfig};
use crate::sloma::{predict_sloma_detailed, train_sloma, SlomaConfig};

/// MAE and RMSE over a test set, plus how often the fallback fired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricPair {
    pub mae: f64,
    pub rmse: f64,
    pub n_test: usize,
    pub fallback_fraction: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty prediction list")]
    Empty,
    #[error("repeat {repeat}: {source}")]
    Repeat {
        repeat: usize,
        #[source]
        source: TrainError,
    },
    #[error(transparent)]
    Data(#[from] crate::error::DataError),
    #[error("comparison needs at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("unknown reference model '{0}'")]
    UnknownReference(String),
}

/// Exact MAE/RMSE over (truth, predicted) pairs.
pub fn mae_rmse(predictions: &[(f64, f64)]) -> Result<MetricPair, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = predictions.len() as f64;
    let mae = predictions.iter().map(|(t, p)| (t - p).abs()).sum::<f64>() / n;
    let rmse = (predictions.iter().map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / n).sqrt();
    Ok(MetricPair {
        mae,
        rmse,
        n_test: predictions.len(),
        fallback_fraction: 0.0,
    })
}

/// Which pipeline to train, with its full configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ModelSpec {
    RegSvd(TrainConfig),
    SocReg(TrainConfig),
    Llorma(LlormaConfig),
    Sloma(SlomaConfig),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::RegSvd(_) => "regsvd",
            ModelSpec::SocReg(_) => "socreg",
            ModelSpec::Llorma(_) => "llorma",
            ModelSpec::Sloma(c) if c.social_reg => "sloma++",
            ModelSpec::Sloma(_) => "sloma",
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            ModelSpec::RegSvd(c) | ModelSpec::SocReg(c) => c.rank,
            ModelSpec::Llorma(c) => c.local.rank,
            ModelSpec::Sloma(c) => c.local.rank,
        }
    }
}

/// A trained pipeline ready to score test pairs.
pub enum TrainedModel {
    Global(FactorModel),
    SlomaEnsemble(EnsembleModel),
    LlormaEnsemble(EnsembleModel),
}

impl TrainedModel {
    /// Prediction plus whether the global-mean fallback was used.
    pub fn predict_detailed(&self, user: usize, item: usize) -> (f64, bool) {
        match self {
            TrainedModel::Global(m) => (m.predict(user, item), false),
            TrainedModel::SlomaEnsemble(e) => predict_sloma_detailed(e, user, item),
            TrainedModel::LlormaEnsemble(e) => predict_llorma_detailed(e, user, item),
        }
    }
}

/// Trains one model spec on the given training data.
pub fn train_model(
    ratings_train: &RatingMatrix,
    graph: Option<&SocialGraph>,
    spec: &ModelSpec,
) -> Result<TrainedModel, TrainError> {
    match spec {
        ModelSpec::RegSvd(cfg) => {
            let cfg = TrainConfig { beta: 0.0, ..cfg.clone() };
            Ok(TrainedModel::Global(train(ratings_train, None, None, &cfg)?.model))
        }
        ModelSpec::SocReg(cfg) => {
            let graph = graph.ok_or_else(|| {
                TrainError::InvalidConfig("socreg requires a social graph".into())
            })?;
            let sim = pcc_similarity(ratings_train, graph);
            Ok(TrainedModel::Global(
                train(ratings_train, Some(graph), Some(&sim), cfg)?.model,
            ))
        }
        ModelSpec::Llorma(cfg) => Ok(TrainedModel::LlormaEnsemble(train_llorma(ratings_train, cfg)?)),
        ModelSpec::Sloma(cfg) => {
            let graph = graph.ok_or_else(|| {
                TrainError::InvalidConfig("sloma requires a social graph".into())
            })?;
            Ok(TrainedModel::SlomaEnsemble(train_sloma(ratings_train, graph, cfg)?))
        }
    }
}

/// Scores a trained model over test pairs, optionally clamping
/// predictions into [1,5].
pub fn score(
    model: &TrainedModel,
    test: &[RatingEntry],
    clamp: bool,
) -> Result<MetricPair, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut pairs = Vec::with_capacity(test.len());
    let mut fallbacks = 0usize;
    for e in test {
        let (mut p, fb) = model.predict_detailed(e.user, e.item);
        if clamp {
            p = p.clamp(RATING_MIN, RATING_MAX);
        }
        if fb {
            fallbacks += 1;
        }
        pairs.push((e.rating, p));
    }
    let mut metrics = mae_rmse(&pairs)?;
    metrics.fallback_fraction = fallbacks as f64 / test.len() as f64;
    Ok(metrics)
}

/// Trains and scores one spec over `repeats` seeded splits.
pub fn run_experiment(
    ratings: &RatingMatrix,
    graph: Option<&SocialGraph>,
    model_spec: &ModelSpec,
    split_spec: &SplitSpec,
    clamp: bool,
) -> Result<Vec<MetricPair>, EvalError> {
    let mut rows = Vec::with_capacity(split_spec.repeats);
    for r in 0..split_spec.repeats {
        let spec = SplitSpec {
            seed: split_spec.seed + r as u64,
            ..*split_spec
        };
        let (train_side, test_side) = split(ratings, &spec)?;
        let model = train_model(&train_side, graph, model_spec)
            .map_err(|source| EvalError::Repeat { repeat: r, source })?;
        rows.push(score(&model, &test_side, clamp)?);
    }
    Ok(rows)
}

/// Mean and sample standard deviation over the repeats.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentSummary {
    pub mean_mae: f64,
    pub sd_mae: f64,
    pub mean_rmse: f64,
    pub sd_rmse: f64,
    pub mean_fallback: f64,
}

pub fn summarize(rows: &[MetricPair]) -> ExperimentSummary {
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&MetricPair) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let sd = |f: &dyn Fn(&MetricPair) -> f64, mu: f64| {
        if rows.len() < 2 {
            0.0
        } else {
            (rows.iter().map(|r| (f(r) - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        }
    };
    let mean_mae = mean(&|r: &MetricPair| r.mae);
    let mean_rmse = mean(&|r: &MetricPair| r.rmse);
    ExperimentSummary {
        mean_mae,
        sd_mae: sd(&|r: &MetricPair| r.mae, mean_mae),
        mean_rmse,
        sd_rmse: sd(&|r: &MetricPair| r.rmse, mean_rmse),
        mean_fallback: mean(&|r: &MetricPair| r.fallback_fraction),
    }
}

/// RMSE reduction of `candidate` relative to `reference`, in percent.
/// Positive means the candidate is better.
pub fn improvement_percent(reference_rmse: f64, candidate_rmse: f64) -> f64 {
    (reference_rmse - candidate_rmse) / reference_rmse * 100.0
}

#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub model: String,
    pub rank: usize,
    pub mae: f64,
    pub rmse: f64,
    pub sd_rmse: f64,
    pub fallback: f64,
    /// RMSE reduction of the designated candidate vs this row.
    pub improvement: f64,
}

/// Runs every spec over the same repeated splits and tabulates mean
/// metrics plus the candidate's improvement over each row.
///
/// `candidate` names the model whose RMSE reduction is reported
/// (defaults to the last spec).
pub fn compare(
    specs: &[ModelSpec],
    ratings: &RatingMatrix,
    graph: Option<&SocialGraph>,
    split_spec: &SplitSpec,
    clamp: bool,
    candidate: Option<&str>,
) -> Result<Vec<ComparisonRow>, EvalError> {
    if specs.len() < 2 {
        return Err(EvalError::TooFewModels(specs.len()));
    }
    let mut summaries = Vec::with_capacity(specs.len());
    for spec in specs {
        let rows = run_experiment(ratings, graph, spec, split_spec, clamp)?;
        summaries.push((spec, summarize(&rows)));
    }
    let cand_name = candidate.unwrap_or_else(|| specs.last().unwrap().name());
    let cand_rmse = summaries
        .iter()
        .find(|(s, _)| s.name() == cand_name)
        .map(|(_, sm)| sm.mean_rmse)
        .ok_or_else(|| EvalError::UnknownReference(cand_name.to_string()))?;
    Ok(summaries
        .into_iter()
        .map(|(spec, sm)| ComparisonRow {
            model: spec.name().to_string(),
            rank: spec.rank(),
            mae: sm.mean_mae,
            rmse: sm.mean_rmse,
            sd_rmse: sm.sd_rmse,
            fallback: sm.mean_fallback,
            improvement: improvement_percent(sm.mean_rmse, cand_rmse),
        })
        .collect())
}

/// Writes the comparison table as TSV with fixed formatting, so equal
/// inputs produce byte-identical output.
pub fn write_comparison_tsv(rows: &[ComparisonRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "model\tK\tMAE\tRMSE\tRMSE_sd\tfallback\timprovement")?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:+.2}%",
            r.model, r.rank, r.mae, r.rmse, r.sd_rmse, r.fallback, r.improvement
        )?;
    }
    Ok(())
}

/// Writes per-repeat metric rows plus the summary line as TSV.
pub fn write_experiment_tsv(rows: &[MetricPair], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "repeat\tMAE\tRMSE\tn_test\tfallback")?;
    for (r, m) in rows.iter().enumerate() {
        writeln!(
            w,
            "{}\t{:.6}\t{:.6}\t{}\t{:.6}",
            r, m.mae, m.rmse, m.n_test, m.fallback_fraction
        )?;
    }
    let s = summarize(rows);
    writeln!(
        w,
        "mean±sd\t{:.6}±{:.6}\t{:.6}±{:.6}\t\t{:.6}",
        s.mean_mae, s.sd_mae, s.mean_rmse, s.sd_rmse, s.mean_fallback
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RatingEntry;

    #[test]
    fn perfect_predictions_zero_error() {
        let pairs = vec![(3.0, 3.0), (4.5, 4.5)];
        let m = mae_rmse(&pairs).unwrap();
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.rmse, 0.0);
    }

    #[test]
    fn hand_computed_mae_rmse() {
        // pairs (1,2) and (3,5) -> MAE 1.5, RMSE sqrt(2.5)
        let m = mae_rmse(&[(1.0, 2.0), (3.0, 5.0)]).unwrap();
        assert!((m.mae - 1.5).abs() < 1e-12);
        assert!((m.rmse - 2.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_pair_mae_equals_rmse() {
        let m = mae_rmse(&[(4.0, 3.0)]).unwrap();
        assert_eq!(m.mae, 1.0);
        assert_eq!(m.rmse, 1.0);
    }

    #[test]
    fn empty_list_errors() {
        assert!(matches!(mae_rmse(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn rmse_at_least_mae() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let pairs: Vec<(f64, f64)> = (0..20)
                .map(|_| (rng.gen_range(1.0..5.0), rng.gen_range(1.0..5.0)))
                .collect();
            let m = mae_rmse(&pairs).unwrap();
            assert!(m.rmse >= m.mae - 1e-12);
        }
    }

    #[test]
    fn metrics_permutation_invariant() {
        let mut pairs = vec![(1.0, 2.0), (3.0, 5.0), (4.0, 4.5), (2.0, 1.0)];
        let a = mae_rmse(&pairs).unwrap();
        pairs.reverse();
        let b = mae_rmse(&pairs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn improvement_arithmetic_from_published_cells() {
        // 0.7347 -> 0.7105 gives +3.29% to two decimals
        let imp = improvement_percent(0.7347, 0.7105);
        assert!((imp - 3.29).abs() < 0.005, "got {imp}");
    }

    #[test]
    fn identical_models_zero_improvement() {
        assert_eq!(improvement_percent(0.9, 0.9), 0.0);
    }

    fn constant_matrix() -> RatingMatrix {
        let entries: Vec<RatingEntry> = (0..12)
            .map(|i| RatingEntry { user: i % 4, item: i / 4, rating: 3.0 })
            .collect();
        RatingMatrix::from_entries(4, 3, entries).unwrap()
    }

    #[test]
    fn mean_predictor_on_constant_data_is_exact() {
        let m = constant_matrix();
        // an ensemble with zero locals is a pure mean predictor
        let ensemble = EnsembleModel {
            locals: vec![],
            combine: crate::data::CombineRule::UniformAverage,
            global_mean: m.global_mean(),
            anchor_factors: None,
        };
        let model = TrainedModel::SlomaEnsemble(ensemble);
        let test: Vec<RatingEntry> = m.entries().to_vec();
        let metrics = score(&model, &test, false).unwrap();
        assert_eq!(metrics.rmse, 0.0);
        assert_eq!(metrics.fallback_fraction, 1.0);
    }

    #[test]
    fn mean_predictor_rmse_equals_sd_around_training_mean() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let entries: Vec<RatingEntry> = (0..40)
            .map(|i| RatingEntry {
                user: i % 8,
                item: i / 8,
                rating: (rng.gen_range(1.0f64..5.0) * 2.0).round() / 2.0,
            })
            .collect();
        let m = RatingMatrix::from_entries(8, 5, entries).unwrap();
        let mean = m.global_mean();
        let ensemble = EnsembleModel {
            locals: vec![],
            combine: crate::data::CombineRule::UniformAverage,
            global_mean: mean,
            anchor_factors: None,
        };
        let model = TrainedModel::SlomaEnsemble(ensemble);
        let test: Vec<RatingEntry> = m.entries().to_vec();
        let metrics = score(&model, &test, false).unwrap();
        let direct = (m
            .entries()
            .iter()
            .map(|e| (e.rating - mean) * (e.rating - mean))
            .sum::<f64>()
            / m.num_ratings() as f64)
            .sqrt();
        assert!((metrics.rmse - direct).abs() < 1e-12);
    }

    #[test]
    fn run_experiment_is_deterministic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let entries: Vec<RatingEntry> = (0..60)
            .map(|i| RatingEntry {
                user: i % 10,
                item: i / 10,
                rating: rng.gen_range(1.0..5.0),
            })
            .collect();
        let m = RatingMatrix::from_entries(10, 6, entries).unwrap();
        let spec = ModelSpec::RegSvd(TrainConfig { max_epochs: 25, ..TrainConfig::new(2) });
        let split_spec = SplitSpec { repeats: 3, ..Default::default() };
        let a = run_experiment(&m, None, &spec, &split_spec, false).unwrap();
        let b = run_experiment(&m, None, &spec, &split_spec, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }
}
