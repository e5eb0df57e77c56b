//! File ingestion, synthetic planted-group generation, and seeded
//! train/test splitting.
//!
//! Canonical file formats are TSV with `#` comment lines; CSV is
//! auto-detected per line.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{RatingEntry, RatingMatrix, SocialGraph, RATING_MAX, RATING_MIN};
use crate::error::DataError;

/// Train/test split parameters. The paper's protocol is an 8:2 ratio
/// repeated five times.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub repeats: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 42,
            repeats: 5,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(DataError::InvalidSpec(format!(
                "train_fraction must be in (0,1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Desk-scale planted-group generator parameters. User groups are
/// disjoint; every group rates the same shared item pool through its
/// own rank-r factor pair, so each block is low-rank but their union
/// is not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_groups: usize,
    pub users_per_group: usize,
    /// Size of the shared item pool each group's block spans.
    pub items_per_group: usize,
    pub true_rank: usize,
    pub noise_sigma: f64,
    pub density: f64,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_groups == 0 || self.users_per_group == 0 || self.items_per_group == 0 {
            return Err(DataError::InvalidSpec("group counts must be positive".into()));
        }
        if self.true_rank == 0 || self.true_rank > self.users_per_group.min(self.items_per_group) {
            return Err(DataError::InvalidSpec(format!(
                "true_rank must be in [1, min(users_per_group, items_per_group)], got {}",
                self.true_rank
            )));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(DataError::InvalidSpec("density must be in (0,1]".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(DataError::InvalidSpec("noise_sigma must be >= 0".into()));
        }
        if !(self.intra_edge_prob > self.inter_edge_prob && self.inter_edge_prob >= 0.0) {
            return Err(DataError::InvalidSpec(
                "need intra_edge_prob > inter_edge_prob >= 0".into(),
            ));
        }
        if self.intra_edge_prob > 1.0 {
            return Err(DataError::InvalidSpec("intra_edge_prob must be <= 1".into()));
        }
        Ok(())
    }
}

/// What the synthetic generator actually planted.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Group id per user.
    pub user_groups: Vec<usize>,
    /// Noiseless value per sampled rating entry, parallel to the matrix's entries.
    pub noiseless: Vec<f64>,
    /// Fraction of sampled ratings clipped at the [1,5] boundary after noise.
    pub clipped_fraction: f64,
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Loads `user<TAB>item<TAB>rating` lines into a rating matrix.
pub fn load_ratings(path: impl AsRef<Path>) -> Result<RatingMatrix, DataError> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);

    let mut user_ids: Vec<String> = Vec::new();
    let mut item_ids: Vec<String> = Vec::new();
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();
    let mut entries: Vec<RatingEntry> = Vec::new();
    let mut seen: HashMap<(usize, usize), ()> = HashMap::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = split_fields(trimmed);
        if fields.len() != 3 {
            return Err(DataError::Parse {
                path: path_str,
                line: lineno,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let rating: f64 = fields[2].parse().map_err(|_| DataError::Parse {
            path: path_str.clone(),
            line: lineno,
            msg: format!("invalid rating '{}'", fields[2]),
        })?;
        if !(RATING_MIN..=RATING_MAX).contains(&rating) {
            return Err(DataError::RatingOutOfRange {
                path: path_str,
                line: lineno,
                value: rating,
            });
        }
        let u = *user_index.entry(fields[0].to_string()).or_insert_with(|| {
            user_ids.push(fields[0].to_string());
            user_ids.len() - 1
        });
        let i = *item_index.entry(fields[1].to_string()).or_insert_with(|| {
            item_ids.push(fields[1].to_string());
            item_ids.len() - 1
        });
        if seen.insert((u, i), ()).is_some() {
            return Err(DataError::DuplicatePair {
                user: fields[0].to_string(),
                item: fields[1].to_string(),
            });
        }
        entries.push(RatingEntry {
            user: u,
            item: i,
            rating,
        });
    }
    RatingMatrix::from_parts(user_ids, item_ids, entries)
}

/// Loads `user<TAB>user` friendship lines against the rating matrix's
/// user index. Reversed/repeated duplicates collapse to one edge.
pub fn load_edges(path: impl AsRef<Path>, ratings: &RatingMatrix) -> Result<SocialGraph, DataError> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);

    let mut edges = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = split_fields(trimmed);
        if fields.len() != 2 {
            return Err(DataError::Parse {
                path: path_str,
                line: lineno,
                msg: format!("expected 2 fields, got {}", fields.len()),
            });
        }
        let a = ratings
            .user_index(fields[0])
            .ok_or_else(|| DataError::UnknownUser(fields[0].to_string()))?;
        let b = ratings
            .user_index(fields[1])
            .ok_or_else(|| DataError::UnknownUser(fields[1].to_string()))?;
        if a == b {
            return Err(DataError::SelfLoop(fields[0].to_string()));
        }
        edges.push((a, b));
    }
    SocialGraph::from_edges(ratings.num_users(), &edges)
}

/// Generates a planted-group dataset: per group a rank-r block kept in
/// [1,5], sampled at the given density, with intra/inter social edges.
///
/// The per-group block is built as U_g V_g^T where the first latent
/// column of U_g is constant; the item-side first column carries the
/// base level around 3.0 so the block keeps exact rank r while its
/// values center on the middle of the rating scale. Deviations are
/// rescaled so noiseless values never leave [1,5]; only noise can push
/// a value to the boundary, where it is clipped (and counted).
pub fn generate_synthetic(
    spec: &SyntheticSpec,
) -> Result<(RatingMatrix, SocialGraph, GroundTruth), DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let g = spec.num_groups;
    let upg = spec.users_per_group;
    let ipg = spec.items_per_group;
    let r = spec.true_rank;
    let m = g * upg;
    // all groups rate the same item pool, with group-specific item
    // factors: each group's block is rank r, the union is not
    let n = ipg;

    let std_norm = Normal::new(0.0, 1.0).unwrap();
    let mut entries: Vec<RatingEntry> = Vec::new();
    let mut noiseless: Vec<f64> = Vec::new();
    let mut clipped = 0usize;

    for grp in 0..g {
        // User rows: [1, base + jitter]; item rows: [level_j, w_j].
        let base: Vec<f64> = (0..r - 1).map(|_| std_norm.sample(&mut rng)).collect();
        let mut user_rows = vec![vec![0.0; r]; upg];
        for row in user_rows.iter_mut() {
            row[0] = 1.0;
            for (x, b) in row[1..].iter_mut().zip(&base) {
                *x = b + 0.5 * std_norm.sample(&mut rng);
            }
        }
        let mut item_rows = vec![vec![0.0; r]; ipg];
        for row in item_rows.iter_mut() {
            row[0] = 3.0 + 0.4 * std_norm.sample(&mut rng);
            for x in &mut row[1..] {
                *x = 0.5 * std_norm.sample(&mut rng);
            }
        }
        // Rescale deviations from 3.0 so the noiseless block stays inside
        // [1.1, 4.9]; a pure column scaling on the item side keeps rank r.
        let mut max_dev: f64 = 0.0;
        for u in &user_rows {
            for v in &item_rows {
                let val: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                max_dev = max_dev.max((val - 3.0).abs());
            }
        }
        if max_dev > 1.9 {
            let scale = 1.9 / max_dev;
            for row in item_rows.iter_mut() {
                row[0] = 3.0 + scale * (row[0] - 3.0);
                for x in &mut row[1..] {
                    *x *= scale;
                }
            }
        }

        let noise = if spec.noise_sigma > 0.0 {
            Some(Normal::new(0.0, spec.noise_sigma).unwrap())
        } else {
            None
        };
        for (lu, u_row) in user_rows.iter().enumerate() {
            for (li, v_row) in item_rows.iter().enumerate() {
                if rng.gen::<f64>() >= spec.density {
                    continue;
                }
                let clean: f64 = u_row.iter().zip(v_row).map(|(a, b)| a * b).sum();
                let mut val = clean;
                if let Some(nd) = &noise {
                    val += nd.sample(&mut rng);
                }
                if !(RATING_MIN..=RATING_MAX).contains(&val) {
                    clipped += 1;
                    val = val.clamp(RATING_MIN, RATING_MAX);
                }
                entries.push(RatingEntry {
                    user: grp * upg + lu,
                    item: li,
                    rating: val,
                });
                noiseless.push(clean);
            }
        }
    }

    let mut edges = Vec::new();
    for a in 0..m {
        for b in (a + 1)..m {
            let p = if a / upg == b / upg {
                spec.intra_edge_prob
            } else {
                spec.inter_edge_prob
            };
            if rng.gen::<f64>() < p {
                edges.push((a, b));
            }
        }
    }

    let ratings = RatingMatrix::from_entries(m, n, entries)?;
    let graph = SocialGraph::from_edges(m, &edges)?;
    let truth = GroundTruth {
        user_groups: (0..m).map(|u| u / upg).collect(),
        clipped_fraction: if noiseless.is_empty() {
            0.0
        } else {
            clipped as f64 / noiseless.len() as f64
        },
        noiseless,
    };
    Ok((ratings, graph, truth))
}

/// Writes the planted user -> group membership as TSV.
pub fn save_ground_truth(path: impl AsRef<Path>, truth: &GroundTruth, ratings: &RatingMatrix) -> Result<(), DataError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# user\tgroup_id")?;
    for (u, grp) in truth.user_groups.iter().enumerate() {
        writeln!(f, "{}\t{}", ratings.user_ids()[u], grp)?;
    }
    Ok(())
}

/// Splits the observed ratings into disjoint train/test parts.
///
/// |train| = round(train_fraction * |Omega|) with ties to even; the
/// partition is a pure function of (entries, seed).
pub fn split(
    ratings: &RatingMatrix,
    spec: &SplitSpec,
) -> Result<(RatingMatrix, Vec<RatingEntry>), DataError> {
    spec.validate()?;
    let total = ratings.num_ratings();
    if total < 5 {
        return Err(DataError::TooFewRatings(total));
    }
    let n_train = (spec.train_fraction * total as f64).round_ties_even() as usize;
    if n_train == 0 {
        return Err(DataError::EmptySplit("train"));
    }
    if n_train >= total {
        return Err(DataError::EmptySplit("test"));
    }
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let mut train_idx = order[..n_train].to_vec();
    train_idx.sort_unstable();
    let train = ratings.restrict(&train_idx);
    let test = order[n_train..]
        .iter()
        .map(|&i| *ratings.entry(i))
        .collect();
    Ok((train, test))
}

/// Number of train entries for a given total under the split's rounding rule.
pub fn train_size(total: usize, train_fraction: f64) -> usize {
    (train_fraction * total as f64).round_ties_even() as usize
}

/// Removes social cold-start users (no friends) and cold-start users
/// (fewer than `min_ratings` ratings), reindexing both structures.
///
/// Mirrors the preprocessing the paper applies to Yelp and Douban;
/// exposed as an optional flag rather than always applied.
pub fn filter_cold_start(
    ratings: &RatingMatrix,
    graph: &SocialGraph,
    min_ratings: usize,
) -> Result<(RatingMatrix, SocialGraph), DataError> {
    let keep: Vec<usize> = (0..ratings.num_users())
        .filter(|&u| graph.degree(u) > 0 && ratings.by_user(u).len() >= min_ratings)
        .collect();
    let remap: HashMap<usize, usize> = keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
    let user_ids: Vec<String> = keep.iter().map(|&u| ratings.user_ids()[u].clone()).collect();
    let entries: Vec<RatingEntry> = ratings
        .entries()
        .iter()
        .filter_map(|e| {
            remap.get(&e.user).map(|&u| RatingEntry {
                user: u,
                item: e.item,
                rating: e.rating,
            })
        })
        .collect();
    let filtered = RatingMatrix::from_parts(user_ids, ratings.item_ids().to_vec(), entries)?;
    let edges: Vec<(usize, usize)> = graph
        .edges()
        .filter_map(|(a, b)| match (remap.get(&a), remap.get(&b)) {
            (Some(&x), Some(&y)) => Some((x, y)),
            _ => None,
        })
        .collect();
    let fgraph = SocialGraph::from_edges(keep.len(), &edges)?;
    Ok((filtered, fgraph))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_ratings_counts() {
        let f = write_tmp("u1\ti1\t4.0\nu2\ti1\t3.0\n");
        let m = load_ratings(f.path()).unwrap();
        assert_eq!(m.num_users(), 2);
        assert_eq!(m.num_items(), 1);
        assert_eq!(m.num_ratings(), 2);
    }

    #[test]
    fn load_ratings_rejects_out_of_range() {
        let f = write_tmp("u1\ti1\t7\n");
        assert!(matches!(
            load_ratings(f.path()),
            Err(DataError::RatingOutOfRange { value, .. }) if value == 7.0
        ));
    }

    #[test]
    fn load_ratings_rejects_duplicates() {
        let f = write_tmp("u1\ti1\t4\nu1\ti1\t3\n");
        assert!(matches!(load_ratings(f.path()), Err(DataError::DuplicatePair { .. })));
    }

    #[test]
    fn load_ratings_csv_and_comments() {
        let f = write_tmp("# header\nu1,i1,4.5\nu2,i2,2\n");
        let m = load_ratings(f.path()).unwrap();
        assert_eq!(m.num_ratings(), 2);
        assert_eq!(m.entry(0).rating, 4.5);
    }

    #[test]
    fn yelp_scale_density_arithmetic() {
        // Table-level sanity for the density formula on Yelp-scale counts.
        let density = 1_352_762.0 / (76_220.0f64 * 79_257.0);
        assert!((density - 0.00022).abs() < 2e-5);
        let s_density = 2.0 * 647_451.0 / (76_220.0f64 * 76_220.0);
        assert!((s_density - 0.00022).abs() < 2e-5);
    }

    #[test]
    fn load_edges_dedups_reversed() {
        let rf = write_tmp("u1\ti1\t4\nu2\ti1\t3\n");
        let m = load_ratings(rf.path()).unwrap();
        let ef = write_tmp("u1\tu2\nu2\tu1\n");
        let g = load_edges(ef.path(), &m).unwrap();
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn load_edges_rejects_self_loop_and_unknown() {
        let rf = write_tmp("u1\ti1\t4\nu2\ti1\t3\n");
        let m = load_ratings(rf.path()).unwrap();
        let ef = write_tmp("u1\tu1\n");
        assert!(matches!(load_edges(ef.path(), &m), Err(DataError::SelfLoop(_))));
        let ef2 = write_tmp("u1\tu9\n");
        assert!(matches!(load_edges(ef2.path(), &m), Err(DataError::UnknownUser(_))));
    }

    #[test]
    fn split_basic_counts_and_determinism() {
        let entries: Vec<RatingEntry> = (0..10)
            .map(|i| RatingEntry { user: i % 3, item: i, rating: 3.0 })
            .collect();
        let m = RatingMatrix::from_entries(3, 10, entries).unwrap();
        let spec = SplitSpec { train_fraction: 0.8, seed: 7, repeats: 1 };
        let (train, test) = split(&m, &spec).unwrap();
        assert_eq!(train.num_ratings(), 8);
        assert_eq!(test.len(), 2);
        let (train2, test2) = split(&m, &spec).unwrap();
        assert_eq!(train.entries(), train2.entries());
        assert_eq!(test, test2);
    }

    #[test]
    fn split_is_disjoint_partition() {
        let entries: Vec<RatingEntry> = (0..23)
            .map(|i| RatingEntry { user: i % 5, item: i, rating: 1.0 + (i % 5) as f64 })
            .collect();
        let m = RatingMatrix::from_entries(5, 23, entries.clone()).unwrap();
        let (train, test) = split(&m, &SplitSpec { seed: 3, ..Default::default() }).unwrap();
        let mut joined: Vec<(usize, usize)> = train
            .entries()
            .iter()
            .chain(test.iter())
            .map(|e| (e.user, e.item))
            .collect();
        joined.sort_unstable();
        let mut all: Vec<(usize, usize)> = entries.iter().map(|e| (e.user, e.item)).collect();
        all.sort_unstable();
        assert_eq!(joined, all);
    }

    #[test]
    fn split_rounding_rule_at_yelp_scale() {
        assert_eq!(train_size(1_352_762, 0.8), 1_082_210);
        // ties-to-even check on an exact .5 case
        assert_eq!(train_size(5, 0.5), 2);
        assert_eq!(train_size(7, 0.5), 4);
    }

    #[test]
    fn split_too_few_ratings() {
        let entries = vec![RatingEntry { user: 0, item: 0, rating: 3.0 }];
        let m = RatingMatrix::from_entries(1, 1, entries).unwrap();
        assert!(matches!(
            split(&m, &SplitSpec::default()),
            Err(DataError::TooFewRatings(1))
        ));
    }

    #[test]
    fn synthetic_single_group_full_density() {
        let spec = SyntheticSpec {
            num_groups: 1,
            users_per_group: 8,
            items_per_group: 9,
            true_rank: 2,
            noise_sigma: 0.0,
            density: 1.0,
            intra_edge_prob: 0.5,
            inter_edge_prob: 0.0,
            seed: 11,
        };
        let (ratings, _, truth) = generate_synthetic(&spec).unwrap();
        assert_eq!(ratings.num_ratings(), 72);
        assert_eq!(truth.clipped_fraction, 0.0);
        for e in ratings.entries() {
            assert!(e.rating >= RATING_MIN && e.rating <= RATING_MAX);
        }
    }

    #[test]
    fn synthetic_two_groups_no_inter_edges_two_components() {
        let spec = SyntheticSpec {
            num_groups: 2,
            users_per_group: 10,
            items_per_group: 10,
            true_rank: 2,
            noise_sigma: 0.1,
            density: 0.5,
            intra_edge_prob: 0.6,
            inter_edge_prob: 0.0,
            seed: 5,
        };
        // inter_edge_prob must be < intra; 0.0 allowed
        let spec = SyntheticSpec { inter_edge_prob: 0.0, ..spec };
        let (_, graph, _) = generate_synthetic(&spec).unwrap();
        // count connected components by BFS
        let mut seen = vec![false; graph.num_users()];
        let mut components = 0;
        for s in 0..graph.num_users() {
            if seen[s] {
                continue;
            }
            components += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(u) = stack.pop() {
                for &v in graph.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        // every user has some intra neighbors with p=0.6 over 9 peers, whp
        assert_eq!(components, 2);
    }

    #[test]
    fn synthetic_edge_count_within_three_sigma() {
        let spec = SyntheticSpec {
            num_groups: 3,
            users_per_group: 40,
            items_per_group: 10,
            true_rank: 2,
            noise_sigma: 0.0,
            density: 0.2,
            intra_edge_prob: 0.3,
            inter_edge_prob: 0.01,
            seed: 99,
        };
        let (_, graph, _) = generate_synthetic(&spec).unwrap();
        // intra pairs: 3 * C(40,2); inter pairs: C(120,2) - intra pairs
        let intra_pairs = 3.0f64 * (40.0 * 39.0 / 2.0);
        let total_pairs = 120.0 * 119.0 / 2.0;
        let inter_pairs = total_pairs - intra_pairs;
        let mean = intra_pairs * 0.3 + inter_pairs * 0.01;
        let var = intra_pairs * 0.3 * 0.7 + inter_pairs * 0.01 * 0.99;
        let sigma = var.sqrt();
        let count = graph.num_edges() as f64;
        assert!(
            (count - mean).abs() <= 3.0 * sigma,
            "edge count {count} not within 3 sigma of {mean} (sigma {sigma})"
        );
    }

    #[test]
    fn synthetic_determinism() {
        let spec = SyntheticSpec {
            num_groups: 2,
            users_per_group: 6,
            items_per_group: 6,
            true_rank: 2,
            noise_sigma: 0.2,
            density: 0.7,
            intra_edge_prob: 0.4,
            inter_edge_prob: 0.02,
            seed: 123,
        };
        let (r1, g1, t1) = generate_synthetic(&spec).unwrap();
        let (r2, g2, t2) = generate_synthetic(&spec).unwrap();
        assert_eq!(r1.entries(), r2.entries());
        assert_eq!(g1.num_edges(), g2.num_edges());
        assert_eq!(t1.noiseless, t2.noiseless);
    }

    #[test]
    fn filter_cold_start_drops_friendless_and_sparse() {
        // u0: 5 ratings + friend; u1: 5 ratings, no friends; u2: 1 rating + friend
        let mut entries = Vec::new();
        for j in 0..5 {
            entries.push(RatingEntry { user: 0, item: j, rating: 3.0 });
            entries.push(RatingEntry { user: 1, item: j, rating: 3.0 });
        }
        entries.push(RatingEntry { user: 2, item: 0, rating: 2.0 });
        let m = RatingMatrix::from_entries(3, 5, entries).unwrap();
        let g = SocialGraph::from_edges(3, &[(0, 2)]).unwrap();
        let (fm, fg) = filter_cold_start(&m, &g, 5).unwrap();
        assert_eq!(fm.num_users(), 1);
        assert_eq!(fm.num_ratings(), 5);
        assert_eq!(fg.num_users(), 1);
        assert_eq!(fg.num_edges(), 0);
    }
}
