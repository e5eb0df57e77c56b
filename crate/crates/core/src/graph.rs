//! Graph primitives: k-hop balls, connector selection, and a simplified
//! overlapping community detector of the affiliation-graph family.

use std::collections::VecDeque;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{RatingMatrix, SocialGraph};
use crate::error::{DataError, GraphError};

/// How connector users are picked for heuristic submatrix construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ConnectorStrategy {
    /// Top-q by degree, ties broken by ascending user index.
    Hub,
    /// Uniform without replacement, seeded.
    Random { seed: u64 },
    /// Top `pool_size` by degree, then a uniform seeded sample of q.
    RandomHub { pool_size: usize, seed: u64 },
    /// Repeatedly the highest-degree user not yet inside any selected
    /// connector's d-hop ball.
    Greedy,
}

#[derive(Debug, Clone, Copy)]
pub struct ConnectorMethod {
    pub strategy: ConnectorStrategy,
    pub q: usize,
}

impl ConnectorMethod {
    pub fn validate(&self, num_users: usize) -> Result<(), GraphError> {
        if self.q == 0 {
            return Err(GraphError::InvalidMethod("q must be >= 1".into()));
        }
        if self.q > num_users {
            return Err(GraphError::TooManyConnectors {
                q: self.q,
                num_users,
            });
        }
        if let ConnectorStrategy::RandomHub { pool_size, .. } = self.strategy {
            if pool_size < self.q {
                return Err(GraphError::InvalidMethod(format!(
                    "pool_size {} must be >= q {}",
                    pool_size, self.q
                )));
            }
        }
        Ok(())
    }
}

/// All users within BFS distance `d` of `center`, sorted; the center is
/// included at distance 0. Edge weights are all 1, so BFS gives the same
/// distances as Dijkstra at lower cost.
pub fn k_hop_ball(graph: &SocialGraph, center: usize, d: usize) -> Result<Vec<usize>, GraphError> {
    if center >= graph.num_users() {
        return Err(GraphError::UserOutOfRange {
            index: center,
            num_users: graph.num_users(),
        });
    }
    let mut dist = vec![usize::MAX; graph.num_users()];
    dist[center] = 0;
    let mut queue = VecDeque::new();
    queue.push_back(center);
    let mut ball = vec![center];
    while let Some(u) = queue.pop_front() {
        if dist[u] == d {
            continue;
        }
        for &v in graph.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                ball.push(v);
                queue.push_back(v);
            }
        }
    }
    ball.sort_unstable();
    Ok(ball)
}

fn hub_order(graph: &SocialGraph) -> Vec<usize> {
    let mut users: Vec<usize> = (0..graph.num_users()).collect();
    users.sort_by_key(|&u| (std::cmp::Reverse(graph.degree(u)), u));
    users
}

/// Selects q distinct connector users per the configured strategy.
/// `d` is the hop radius used by Greedy's coverage bookkeeping.
pub fn select_connectors(
    graph: &SocialGraph,
    method: &ConnectorMethod,
    d: usize,
) -> Result<Vec<usize>, GraphError> {
    method.validate(graph.num_users())?;
    let q = method.q;
    match method.strategy {
        ConnectorStrategy::Hub => Ok(hub_order(graph).into_iter().take(q).collect()),
        ConnectorStrategy::Random { seed } => {
            let mut users: Vec<usize> = (0..graph.num_users()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            users.shuffle(&mut rng);
            users.truncate(q);
            Ok(users)
        }
        ConnectorStrategy::RandomHub { pool_size, seed } => {
            let mut pool: Vec<usize> = hub_order(graph)
                .into_iter()
                .take(pool_size.min(graph.num_users()))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            pool.shuffle(&mut rng);
            pool.truncate(q);
            Ok(pool)
        }
        ConnectorStrategy::Greedy => {
            let order = hub_order(graph);
            let mut covered = vec![false; graph.num_users()];
            let mut selected = Vec::with_capacity(q);
            let mut chosen = vec![false; graph.num_users()];
            while selected.len() < q {
                let pick = order
                    .iter()
                    .copied()
                    .find(|&u| !covered[u] && !chosen[u]);
                let u = match pick {
                    Some(u) => u,
                    // everyone covered: fall back to Hub order over the rest
                    None => match order.iter().copied().find(|&u| !chosen[u]) {
                        Some(u) => u,
                        None => break,
                    },
                };
                chosen[u] = true;
                selected.push(u);
                for v in k_hop_ball(graph, u, d)? {
                    covered[v] = true;
                }
            }
            Ok(selected)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverSource {
    Detected,
    Loaded,
}

/// A set of possibly overlapping user communities. The union may be a
/// strict subset of all users; isolated users can stay uncovered.
#[derive(Debug, Clone)]
pub struct CommunityCover {
    pub communities: Vec<Vec<usize>>,
    pub source: CoverSource,
}

impl CommunityCover {
    /// Fraction of users belonging to at least one community.
    pub fn user_coverage(&self, num_users: usize) -> f64 {
        if num_users == 0 {
            return 0.0;
        }
        let mut seen = vec![false; num_users];
        for c in &self.communities {
            for &u in c {
                seen[u] = true;
            }
        }
        seen.iter().filter(|&&s| s).count() as f64 / num_users as f64
    }
}

/// Detects up to `q` overlapping communities by fitting a nonnegative
/// affiliation matrix F (m x q) with projected gradient ascent on the
/// affiliation-graph edge log-likelihood:
///
///   sum_{(u,v) in E} log(1 - exp(-F_u . F_v)) - sum_{(u,v) not in E} F_u . F_v
///
/// User u joins community c when F_uc exceeds delta =
/// sqrt(-log(1 - eps)) with eps the background edge density. Empty
/// communities are dropped, so fewer than q may come back.
pub fn detect_communities(graph: &SocialGraph, q: usize, seed: u64) -> CommunityCover {
    let m = graph.num_users();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = vec![0.0f64; m * q];
    for x in f.iter_mut() {
        *x = rand::Rng::gen_range(&mut rng, 0.0..1.0);
    }

    let row = |f: &[f64], u: usize| -> Vec<f64> { f[u * q..(u + 1) * q].to_vec() };
    let mut sum_f: Vec<f64> = (0..q)
        .map(|c| (0..m).map(|u| f[u * q + c]).sum())
        .collect();

    let step = 0.005;
    let iters = 300;
    for _ in 0..iters {
        for u in 0..m {
            let fu = row(&f, u);
            let mut grad = vec![0.0f64; q];
            // attraction along edges
            for &v in graph.neighbors(u) {
                let fv = &f[v * q..(v + 1) * q];
                let x: f64 = fu.iter().zip(fv).map(|(a, b)| a * b).sum::<f64>().max(1e-9);
                let w = (-x).exp() / (1.0 - (-x).exp());
                for c in 0..q {
                    grad[c] += w * fv[c];
                }
            }
            // repulsion from non-neighbors: sum_F - F_u - sum of neighbor rows
            let mut neigh_sum = vec![0.0f64; q];
            for &v in graph.neighbors(u) {
                for c in 0..q {
                    neigh_sum[c] += f[v * q + c];
                }
            }
            for c in 0..q {
                grad[c] -= sum_f[c] - fu[c] - neigh_sum[c];
            }
            for c in 0..q {
                let old = f[u * q + c];
                let new = (old + step * grad[c]).clamp(0.0, 10.0);
                f[u * q + c] = new;
                sum_f[c] += new - old;
            }
        }
    }

    // cap the background density: on near-complete graphs eps -> 1 would
    // push the threshold beyond anything the clamped F can reach
    let eps = if m > 1 {
        (2.0 * graph.num_edges() as f64 / (m as f64 * (m as f64 - 1.0))).min(0.5)
    } else {
        0.0
    };
    let delta = (-(1.0 - eps).ln()).sqrt();
    let mut communities: Vec<Vec<usize>> = vec![Vec::new(); q];
    for u in 0..m {
        for (c, comm) in communities.iter_mut().enumerate() {
            if f[u * q + c] > delta {
                comm.push(u);
            }
        }
    }
    communities.retain(|c| !c.is_empty());
    CommunityCover {
        communities,
        source: CoverSource::Detected,
    }
}

/// Loads `community_id<TAB>user_id` lines; community order follows first
/// appearance, overlap is legal.
pub fn load_communities(
    path: impl AsRef<Path>,
    ratings: &RatingMatrix,
) -> Result<CommunityCover, DataError> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut order: Vec<String> = Vec::new();
    let mut members: std::collections::HashMap<String, Vec<usize>> = std::collections::HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if trimmed.contains('\t') {
            trimmed.split('\t').map(str::trim).collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        if fields.len() != 2 {
            return Err(DataError::Parse {
                path: path_str,
                line: lineno,
                msg: format!("expected 2 fields, got {}", fields.len()),
            });
        }
        let user = ratings
            .user_index(fields[1])
            .ok_or_else(|| DataError::UnknownUser(fields[1].to_string()))?;
        let entry = members.entry(fields[0].to_string()).or_insert_with(|| {
            order.push(fields[0].to_string());
            Vec::new()
        });
        if !entry.contains(&user) {
            entry.push(user);
        }
    }
    let mut communities = Vec::with_capacity(order.len());
    for id in &order {
        let mut c = members.remove(id).unwrap();
        if c.is_empty() {
            return Err(DataError::EmptyCommunity(id.clone()));
        }
        c.sort_unstable();
        communities.push(c);
    }
    Ok(CommunityCover {
        communities,
        source: CoverSource::Loaded,
    })
}
