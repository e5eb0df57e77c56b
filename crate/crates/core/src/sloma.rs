//! Social local low-rank matrix approximation: social-group submatrix
//! construction, independently trained local models (optionally with
//! social regularization), uniform-average ensemble prediction, and
//! coverage accounting.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    predict_local, CombineRule, EnsembleModel, LocalModel, Origin, RatingMatrix, SocialGraph,
    Submatrix,
};
use crate::error::{DataError, TrainError};
use crate::factorization::{derive_seed, pcc_similarity, train, TrainConfig};
use crate::graph::{
    detect_communities, k_hop_ball, load_communities, select_connectors, CommunityCover,
    ConnectorMethod, ConnectorStrategy,
};

/// Where the q social groups come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Construction {
    /// Connectors plus d-hop balls.
    Heuristic,
    /// Built-in overlapping community detector.
    CommunityDetected,
    /// External community file, `community_id<TAB>user_id`.
    CommunityFile(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlomaConfig {
    /// Number of local models.
    pub q: usize,
    /// Hop threshold for heuristic construction.
    pub d: usize,
    pub connector: ConnectorStrategy,
    pub construction: Construction,
    /// false = SLOMA, true = SLOMA++ (per-submatrix social regularization).
    pub social_reg: bool,
    pub local: TrainConfig,
    pub seed: u64,
}

impl SlomaConfig {
    /// Paper-mirroring defaults: q=50, d=3, Hub connectors.
    pub fn new(rank: usize) -> Self {
        Self {
            q: 50,
            d: 3,
            connector: ConnectorStrategy::Hub,
            construction: Construction::Heuristic,
            social_reg: false,
            local: TrainConfig::new(rank),
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.q == 0 {
            return Err(TrainError::InvalidConfig("q must be >= 1".into()));
        }
        self.local.validate()
    }
}

/// Per-ensemble coverage fractions and per-model sizes.
#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub user_coverage: f64,
    pub rating_coverage: f64,
    /// (users, items, entries) per local model.
    pub model_sizes: Vec<(usize, usize, usize)>,
}

impl CoverageReport {
    /// TSV dump: summary line then one line per model.
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "user_coverage\t{:.6}", self.user_coverage)?;
        writeln!(w, "rating_coverage\t{:.6}", self.rating_coverage)?;
        writeln!(w, "model\tusers\titems\tratings")?;
        for (t, (u, i, e)) in self.model_sizes.iter().enumerate() {
            writeln!(w, "{t}\t{u}\t{i}\t{e}")?;
        }
        Ok(())
    }
}

fn cover_to_submatrices(ratings: &RatingMatrix, cover: &CommunityCover) -> Vec<Submatrix> {
    cover
        .communities
        .iter()
        .enumerate()
        .map(|(id, users)| {
            Submatrix::from_user_set(ratings, users.clone(), Origin::Community { id })
        })
        .filter(|s| !s.entries.is_empty())
        .collect()
}

/// Builds the q social submatrices per the configured construction.
/// Empty submatrices are dropped; an error is returned only when all are.
pub fn build_social_submatrices(
    ratings: &RatingMatrix,
    graph: &SocialGraph,
    config: &SlomaConfig,
) -> Result<Vec<Submatrix>, TrainError> {
    config.validate()?;
    let skeletons = match &config.construction {
        Construction::Heuristic => {
            let method = ConnectorMethod {
                strategy: config.connector,
                q: config.q,
            };
            let connectors = select_connectors(graph, &method, config.d)?;
            connectors
                .into_iter()
                .map(|c| {
                    let ball = k_hop_ball(graph, c, config.d)?;
                    Ok(Submatrix::from_user_set(
                        ratings,
                        ball,
                        Origin::Connector { user: c },
                    ))
                })
                .collect::<Result<Vec<_>, TrainError>>()?
                .into_iter()
                .filter(|s| !s.entries.is_empty())
                .collect()
        }
        Construction::CommunityDetected => {
            let cover = detect_communities(graph, config.q, config.seed);
            cover_to_submatrices(ratings, &cover)
        }
        Construction::CommunityFile(path) => {
            let cover = load_communities(path, ratings)?;
            cover_to_submatrices(ratings, &cover)
        }
    };
    if skeletons.is_empty() {
        return Err(TrainError::AllSubmatricesEmpty);
    }
    Ok(skeletons)
}

/// Trains every local model independently and assembles the
/// uniform-average ensemble. With `social_reg`, each submatrix gets its
/// own Pearson similarity over the induced friend subgraph.
pub fn train_sloma(
    ratings: &RatingMatrix,
    graph: &SocialGraph,
    config: &SlomaConfig,
) -> Result<EnsembleModel, TrainError> {
    let skeletons = build_social_submatrices(ratings, graph, config)?;
    let locals: Vec<Result<LocalModel, TrainError>> = skeletons
        .into_par_iter()
        .enumerate()
        .map(|(idx, sub)| {
            let local_matrix = sub.to_local_matrix(ratings);
            let mut cfg = TrainConfig {
                seed: derive_seed(config.seed, idx as u64),
                ..config.local.clone()
            };
            let tag = |e| TrainError::Local {
                index: idx,
                source: Box::new(e),
            };
            let out = if config.social_reg && cfg.beta > 0.0 {
                let local_graph = graph.induced_subgraph(&sub.users);
                let sim = pcc_similarity(&local_matrix, &local_graph);
                train(&local_matrix, Some(&local_graph), Some(&sim), &cfg).map_err(tag)?
            } else {
                cfg.beta = 0.0;
                train(&local_matrix, None, None, &cfg).map_err(tag)?
            };
            Ok(LocalModel {
                submatrix: sub,
                factors: out.model,
            })
        })
        .collect();
    let locals: Vec<LocalModel> = locals.into_iter().collect::<Result<_, _>>()?;
    Ok(EnsembleModel {
        locals,
        combine: CombineRule::UniformAverage,
        global_mean: ratings.global_mean(),
        anchor_factors: None,
    })
}

/// Mean of the local predictions over submatrices containing both user
/// and item; the training mean when none does.
pub fn predict_sloma(ensemble: &EnsembleModel, user: usize, item: usize) -> f64 {
    predict_sloma_detailed(ensemble, user, item).0
}

/// As [`predict_sloma`], also reporting whether the fallback fired.
pub fn predict_sloma_detailed(ensemble: &EnsembleModel, user: usize, item: usize) -> (f64, bool) {
    let mut sum = 0.0;
    let mut count = 0usize;
    for local in &ensemble.locals {
        if let Some(p) = predict_local(local, user, item) {
            sum += p;
            count += 1;
        }
    }
    if count > 0 {
        (sum / count as f64, false)
    } else {
        (ensemble.global_mean, true)
    }
}

/// Exact set-union coverage fractions over users and training ratings.
pub fn coverage(
    skeletons: &[Submatrix],
    ratings_train: &RatingMatrix,
    num_users: usize,
) -> CoverageReport {
    let mut user_seen = vec![false; num_users];
    let mut entry_seen = vec![false; ratings_train.num_ratings()];
    let mut model_sizes = Vec::with_capacity(skeletons.len());
    for s in skeletons {
        for &u in &s.users {
            user_seen[u] = true;
        }
        for &e in &s.entries {
            entry_seen[e] = true;
        }
        model_sizes.push((s.users.len(), s.items.len(), s.entries.len()));
    }
    let user_coverage = if num_users == 0 {
        0.0
    } else {
        user_seen.iter().filter(|&&x| x).count() as f64 / num_users as f64
    };
    let rating_coverage = if ratings_train.num_ratings() == 0 {
        0.0
    } else {
        entry_seen.iter().filter(|&&x| x).count() as f64 / ratings_train.num_ratings() as f64
    };
    CoverageReport {
        user_coverage,
        rating_coverage,
        model_sizes,
    }
}

/// Writes a coverage report to a TSV file.
pub fn save_coverage(path: impl AsRef<Path>, report: &CoverageReport) -> Result<(), DataError> {
    let f = std::fs::File::create(path)?;
    report.write_tsv(std::io::BufWriter::new(f))?;
    Ok(())
}
