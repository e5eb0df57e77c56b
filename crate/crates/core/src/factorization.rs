//! Rank-K factor models trained by stochastic gradient descent, for plain
//! MF, L2-regularized MF (RegSVD), and socially regularized MF.
//!
//! The full objective is
//!
//!   1/2 sum_{(i,j) in Omega} (O_ij - u_i . v_j)^2
//!   + lambda/2 (||U||_F^2 + ||V||_F^2)
//!   + beta/2 sum_i sum_{j in F(i)} S_ij ||u_i - u_j||^2
//!
//! where the social sum runs over both orientations of every edge, so
//! each undirected edge is counted twice.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{FactorModel, RatingMatrix, SocialGraph};
use crate::error::{DataError, TrainError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rank: usize,
    pub lambda: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Std-dev of the Gaussian factor initialization.
    pub init_scale: f64,
    pub seed: u64,
    /// Stop when the relative objective decrease falls below this.
    pub convergence_tol: f64,
}

impl TrainConfig {
    /// Defaults for a given rank; init scale follows 0.1/sqrt(K).
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            lambda: 0.05,
            beta: 0.0,
            learning_rate: 0.02,
            max_epochs: 200,
            init_scale: 0.1 / (rank as f64).sqrt(),
            seed: 42,
            convergence_tol: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.rank == 0 {
            return Err(TrainError::InvalidConfig("rank must be positive".into()));
        }
        if self.lambda < 0.0 || self.beta < 0.0 {
            return Err(TrainError::InvalidConfig("lambda and beta must be >= 0".into()));
        }
        if self.learning_rate <= 0.0 || self.init_scale <= 0.0 {
            return Err(TrainError::InvalidConfig(
                "learning_rate and init_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Sparse symmetric similarity over social edges, values in [0,1].
/// Pairs absent from the map contribute nothing to regularization.
#[derive(Debug, Clone, Default)]
pub struct SimilarityMatrix {
    pairs: HashMap<(usize, usize), f64>,
}

impl SimilarityMatrix {
    pub fn insert(&mut self, i: usize, j: usize, value: f64) {
        assert!(i != j && (0.0..=1.0).contains(&value));
        self.pairs.insert((i.min(j), i.max(j)), value);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.pairs.get(&(i.min(j), i.max(j))).copied()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Each stored pair once, smaller index first.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.pairs.iter().map(|(&(i, j), &s)| (i, j, s))
    }
}

/// Pearson similarity over common items for every social edge, mapped
/// through g(x) = (x+1)/2 into [0,1].
///
/// User means are taken over ALL of the user's ratings in the given
/// matrix. Pairs with fewer than two common items or a zero centered
/// norm get similarity 0 and are excluded.
pub fn pcc_similarity(ratings: &RatingMatrix, graph: &SocialGraph) -> SimilarityMatrix {
    let means: Vec<f64> = (0..ratings.num_users())
        .map(|u| {
            let idx = ratings.by_user(u);
            if idx.is_empty() {
                0.0
            } else {
                idx.iter().map(|&i| ratings.entry(i).rating).sum::<f64>() / idx.len() as f64
            }
        })
        .collect();
    let item_maps: Vec<HashMap<usize, f64>> = (0..ratings.num_users())
        .map(|u| {
            ratings
                .by_user(u)
                .iter()
                .map(|&i| {
                    let e = ratings.entry(i);
                    (e.item, e.rating)
                })
                .collect()
        })
        .collect();

    let mut sim = SimilarityMatrix::default();
    for (i, j) in graph.edges() {
        let (small, large) = if item_maps[i].len() <= item_maps[j].len() {
            (i, j)
        } else {
            (j, i)
        };
        let mut num = 0.0;
        let mut den_i = 0.0;
        let mut den_j = 0.0;
        let mut common = 0usize;
        for (&item, &ri) in &item_maps[small] {
            if let Some(&rj) = item_maps[large].get(&item) {
                common += 1;
                let ci = ri - means[small];
                let cj = rj - means[large];
                num += ci * cj;
                den_i += ci * ci;
                den_j += cj * cj;
            }
        }
        if common < 2 || den_i == 0.0 || den_j == 0.0 {
            continue;
        }
        let raw = (num / (den_i.sqrt() * den_j.sqrt())).clamp(-1.0, 1.0);
        sim.insert(i, j, 0.5 * (raw + 1.0));
    }
    sim
}

/// Model plus bookkeeping from a completed training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FactorModel,
    pub final_objective: f64,
    pub epochs_run: usize,
}

/// Value of the full objective at the given factors.
pub fn objective(
    ratings: &RatingMatrix,
    model: &FactorModel,
    sim: Option<&SimilarityMatrix>,
    config: &TrainConfig,
) -> f64 {
    let mut value = 0.0;
    for e in ratings.entries() {
        let err = e.rating - model.predict(e.user, e.item);
        value += 0.5 * err * err;
    }
    if config.lambda > 0.0 {
        let frob: f64 = model.user_factors().iter().map(|x| x * x).sum::<f64>()
            + model.item_factors().iter().map(|x| x * x).sum::<f64>();
        value += 0.5 * config.lambda * frob;
    }
    if config.beta > 0.0 {
        if let Some(sim) = sim {
            let mut social = 0.0;
            for (i, j, s) in sim.iter() {
                let d2: f64 = model
                    .user_row(i)
                    .iter()
                    .zip(model.user_row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                social += s * d2;
            }
            // the per-user sum visits each edge in both orientations
            value += config.beta * social;
        }
    }
    value
}

/// Exact analytic gradient of [`objective`], as flat (dU, dV) arrays.
pub fn gradient(
    ratings: &RatingMatrix,
    model: &FactorModel,
    sim: Option<&SimilarityMatrix>,
    config: &TrainConfig,
) -> (Vec<f64>, Vec<f64>) {
    let k = model.rank();
    let mut du = vec![0.0; model.num_users() * k];
    let mut dv = vec![0.0; model.num_items() * k];
    for e in ratings.entries() {
        let err = model.predict(e.user, e.item) - e.rating;
        let u = model.user_row(e.user);
        let v = model.item_row(e.item);
        for c in 0..k {
            du[e.user * k + c] += err * v[c];
            dv[e.item * k + c] += err * u[c];
        }
    }
    if config.lambda > 0.0 {
        for (g, x) in du.iter_mut().zip(model.user_factors()) {
            *g += config.lambda * x;
        }
        for (g, x) in dv.iter_mut().zip(model.item_factors()) {
            *g += config.lambda * x;
        }
    }
    if config.beta > 0.0 {
        if let Some(sim) = sim {
            for (i, j, s) in sim.iter() {
                // both orientations: d/du_i of beta * s * ||u_i - u_j||^2
                let coef = 2.0 * config.beta * s;
                for c in 0..k {
                    let diff = model.user_row(i)[c] - model.user_row(j)[c];
                    du[i * k + c] += coef * diff;
                    du[j * k + c] -= coef * diff;
                }
            }
        }
    }
    (du, dv)
}

/// Trains a factor model by SGD over shuffled ratings, with the social
/// pull applied per edge after each rating sweep.
pub fn train(
    ratings: &RatingMatrix,
    graph: Option<&SocialGraph>,
    sim: Option<&SimilarityMatrix>,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if config.beta > 0.0 && (graph.is_none() || sim.is_none()) {
        return Err(TrainError::InvalidConfig(
            "beta > 0 requires a social graph and similarity matrix".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, config.init_scale).unwrap();
    let k = config.rank;
    let m = ratings.num_users();
    let n = ratings.num_items();
    let user_factors: Vec<f64> = (0..m * k).map(|_| init.sample(&mut rng)).collect();
    let item_factors: Vec<f64> = (0..n * k).map(|_| init.sample(&mut rng)).collect();
    let mut model = FactorModel::new(
        k,
        m,
        n,
        config.lambda,
        config.beta,
        user_factors,
        item_factors,
    );

    let social_pairs: Vec<(usize, usize, f64)> = if config.beta > 0.0 {
        let mut pairs: Vec<_> = sim.unwrap().iter().filter(|&(_, _, s)| s > 0.0).collect();
        pairs.sort_by_key(|&(i, j, _)| (i, j));
        pairs
    } else {
        Vec::new()
    };

    let mut order: Vec<usize> = (0..ratings.num_ratings()).collect();
    let initial = objective(ratings, &model, sim, config);
    let guard = 1e3 * initial.max(1e-12);
    let mut prev = initial;
    let mut eta = config.learning_rate;
    let mut epochs_run = 0;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let e = ratings.entry(idx);
            let pred = model.predict(e.user, e.item);
            let err = e.rating - pred;
            let u_old: Vec<f64> = model.user_row(e.user).to_vec();
            {
                let v = model.item_row(e.item).to_vec();
                let u = model.user_row_mut(e.user);
                for c in 0..k {
                    u[c] += eta * (err * v[c] - config.lambda * u[c]);
                }
            }
            {
                let v = model.item_row_mut(e.item);
                for c in 0..k {
                    v[c] += eta * (err * u_old[c] - config.lambda * v[c]);
                }
            }
        }
        for &(i, j, s) in &social_pairs {
            let coef = eta * 2.0 * config.beta * s;
            for c in 0..k {
                let diff = model.user_row(i)[c] - model.user_row(j)[c];
                model.user_row_mut(i)[c] -= coef * diff;
                model.user_row_mut(j)[c] += coef * diff;
            }
        }
        epochs_run = epoch + 1;
        let current = objective(ratings, &model, sim, config);
        if !current.is_finite() || current > guard {
            return Err(TrainError::Diverged {
                epoch,
                learning_rate: eta,
            });
        }
        let rel = (prev - current) / prev.abs().max(1e-12);
        prev = current;
        if rel >= 0.0 && rel < config.convergence_tol {
            break;
        }
        eta *= 0.95;
    }
    if !model.all_finite() {
        return Err(TrainError::Diverged {
            epoch: epochs_run,
            learning_rate: eta,
        });
    }
    Ok(TrainOutcome {
        model,
        final_objective: prev,
        epochs_run,
    })
}

/// RMSE of the model over the given matrix's observed entries.
pub fn training_rmse(ratings: &RatingMatrix, model: &FactorModel) -> f64 {
    if ratings.num_ratings() == 0 {
        return 0.0;
    }
    let sse: f64 = ratings
        .entries()
        .iter()
        .map(|e| {
            let err = e.rating - model.predict(e.user, e.item);
            err * err
        })
        .sum();
    (sse / ratings.num_ratings() as f64).sqrt()
}

/// Derives an independent per-submodel seed from a global seed, so
/// results do not depend on scheduling order (splitmix64 step).
pub fn derive_seed(global_seed: u64, index: u64) -> u64 {
    let mut z = global_seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writes a model as TSV at 17 significant digits (bit-exact round trip).
pub fn save_model(path: impl AsRef<Path>, model: &FactorModel) -> Result<(), DataError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "rank\t{}", model.rank())?;
    writeln!(f, "num_users\t{}", model.num_users())?;
    writeln!(f, "num_items\t{}", model.num_items())?;
    writeln!(f, "lambda\t{:.16e}", model.lambda)?;
    writeln!(f, "beta\t{:.16e}", model.beta)?;
    for i in 0..model.num_users() {
        let row: Vec<String> = model.user_row(i).iter().map(|x| format!("{x:.16e}")).collect();
        writeln!(f, "U\t{}\t{}", i, row.join("\t"))?;
    }
    for j in 0..model.num_items() {
        let row: Vec<String> = model.item_row(j).iter().map(|x| format!("{x:.16e}")).collect();
        writeln!(f, "V\t{}\t{}", j, row.join("\t"))?;
    }
    Ok(())
}

/// Reads back a model written by [`save_model`].
pub fn load_model(path: impl AsRef<Path>) -> Result<FactorModel, DataError> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut rank = 0usize;
    let mut num_users = 0usize;
    let mut num_items = 0usize;
    let mut lambda = 0.0f64;
    let mut beta = 0.0f64;
    let mut u: Vec<f64> = Vec::new();
    let mut v: Vec<f64> = Vec::new();
    let parse_err = |line: usize, msg: String| DataError::Parse {
        path: path_str.clone(),
        line,
        msg,
    };
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            "rank" => rank = fields[1].parse().map_err(|e| parse_err(lineno, format!("{e}")))?,
            "num_users" => {
                num_users = fields[1].parse().map_err(|e| parse_err(lineno, format!("{e}")))?
            }
            "num_items" => {
                num_items = fields[1].parse().map_err(|e| parse_err(lineno, format!("{e}")))?
            }
            "lambda" => lambda = fields[1].parse().map_err(|e| parse_err(lineno, format!("{e}")))?,
            "beta" => beta = fields[1].parse().map_err(|e| parse_err(lineno, format!("{e}")))?,
            "U" | "V" => {
                let dest = if fields[0] == "U" { &mut u } else { &mut v };
                for x in &fields[2..] {
                    dest.push(x.parse().map_err(|e| parse_err(lineno, format!("{e}")))?);
                }
            }
            other => return Err(parse_err(lineno, format!("unknown record '{other}'"))),
        }
    }
    if u.len() != num_users * rank || v.len() != num_items * rank {
        return Err(parse_err(0, "factor count mismatch".into()));
    }
    Ok(FactorModel::new(rank, num_users, num_items, lambda, beta, u, v))
}
