//! Core domain types shared by all solvers: sparse ratings, the social
//! graph, latent factor models, and the local/ensemble model containers.

use std::collections::HashMap;

use crate::error::DataError;

pub const RATING_MIN: f64 = 1.0;
pub const RATING_MAX: f64 = 5.0;

/// One observed rating in coordinate form, over dense indexes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingEntry {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
}

/// Sparse observed rating matrix with per-user and per-item indexes.
///
/// External string IDs are mapped to dense indexes at construction; all
/// internal computation uses dense indexes.
#[derive(Debug, Clone)]
pub struct RatingMatrix {
    num_users: usize,
    num_items: usize,
    entries: Vec<RatingEntry>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    by_user: Vec<Vec<usize>>,
    by_item: Vec<Vec<usize>>,
}

impl RatingMatrix {
    /// Builds a matrix from dense-indexed entries, synthesizing ids `u{i}` / `i{j}`.
    pub fn from_entries(
        num_users: usize,
        num_items: usize,
        entries: Vec<RatingEntry>,
    ) -> Result<Self, DataError> {
        let user_ids: Vec<String> = (0..num_users).map(|i| format!("u{i}")).collect();
        let item_ids: Vec<String> = (0..num_items).map(|j| format!("i{j}")).collect();
        Self::from_parts(user_ids, item_ids, entries)
    }

    /// Builds a matrix from explicit id lists and dense-indexed entries.
    pub fn from_parts(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        entries: Vec<RatingEntry>,
    ) -> Result<Self, DataError> {
        let num_users = user_ids.len();
        let num_items = item_ids.len();
        let mut seen: HashMap<(usize, usize), ()> = HashMap::with_capacity(entries.len());
        for e in &entries {
            assert!(e.user < num_users && e.item < num_items, "entry index out of range");
            if seen.insert((e.user, e.item), ()).is_some() {
                return Err(DataError::DuplicatePair {
                    user: user_ids[e.user].clone(),
                    item: item_ids[e.item].clone(),
                });
            }
        }
        let user_index = user_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let item_index = item_ids
            .iter()
            .enumerate()
            .map(|(j, id)| (id.clone(), j))
            .collect();
        let mut by_user = vec![Vec::new(); num_users];
        let mut by_item = vec![Vec::new(); num_items];
        for (idx, e) in entries.iter().enumerate() {
            by_user[e.user].push(idx);
            by_item[e.item].push(idx);
        }
        Ok(Self {
            num_users,
            num_items,
            entries,
            user_ids,
            item_ids,
            user_index,
            item_index,
            by_user,
            by_item,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_ratings(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[RatingEntry] {
        &self.entries
    }

    pub fn entry(&self, idx: usize) -> &RatingEntry {
        &self.entries[idx]
    }

    /// Entry indexes of all ratings by `user`.
    pub fn by_user(&self, user: usize) -> &[usize] {
        &self.by_user[user]
    }

    /// Entry indexes of all ratings of `item`.
    pub fn by_item(&self, item: usize) -> &[usize] {
        &self.by_item[item]
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    /// Fraction of observed cells, |Omega| / (m * n).
    pub fn density(&self) -> f64 {
        if self.num_users == 0 || self.num_items == 0 {
            return 0.0;
        }
        self.entries.len() as f64 / (self.num_users as f64 * self.num_items as f64)
    }

    /// Arithmetic mean of all observed ratings.
    pub fn global_mean(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().map(|e| e.rating).sum::<f64>() / self.entries.len() as f64
    }

    /// New matrix over the same index space keeping only the given entry indexes.
    pub fn restrict(&self, entry_indexes: &[usize]) -> Self {
        let entries = entry_indexes.iter().map(|&i| self.entries[i]).collect();
        Self::from_parts(self.user_ids.clone(), self.item_ids.clone(), entries)
            .expect("restriction of a valid matrix is valid")
    }
}

/// Undirected, unweighted friendship graph over the same user index space
/// as the rating matrix.
#[derive(Debug, Clone)]
pub struct SocialGraph {
    num_users: usize,
    adjacency: Vec<Vec<usize>>,
    num_edges: usize,
}

impl SocialGraph {
    /// Builds a graph from undirected edges. Reversed and repeated
    /// duplicates are collapsed; self-loops are rejected.
    pub fn from_edges(num_users: usize, edges: &[(usize, usize)]) -> Result<Self, DataError> {
        let mut adjacency = vec![Vec::new(); num_users];
        let mut seen = std::collections::HashSet::new();
        for &(a, b) in edges {
            assert!(a < num_users && b < num_users, "edge endpoint out of range");
            if a == b {
                return Err(DataError::SelfLoop(format!("u{a}")));
            }
            let key = (a.min(b), a.max(b));
            if seen.insert(key) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            num_users,
            adjacency,
            num_edges: seen.len(),
        })
    }

    pub fn empty(num_users: usize) -> Self {
        Self {
            num_users,
            adjacency: vec![Vec::new(); num_users],
            num_edges: 0,
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    /// Sorted neighbor list of `user`.
    pub fn neighbors(&self, user: usize) -> &[usize] {
        &self.adjacency[user]
    }

    pub fn degree(&self, user: usize) -> usize {
        self.adjacency[user].len()
    }

    /// All undirected edges, each reported once with the smaller index first.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| i < j).map(move |&j| (i, j)))
    }

    /// Social graph density, 2|E| / m^2.
    pub fn density(&self) -> f64 {
        if self.num_users == 0 {
            return 0.0;
        }
        2.0 * self.num_edges as f64 / (self.num_users as f64 * self.num_users as f64)
    }

    /// Induced subgraph over a sorted user subset, reindexed to local indexes.
    pub fn induced_subgraph(&self, users: &[usize]) -> SocialGraph {
        let local: HashMap<usize, usize> =
            users.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        let mut edges = Vec::new();
        for (l, &g) in users.iter().enumerate() {
            for &n in &self.adjacency[g] {
                if let Some(&ln) = local.get(&n) {
                    if l < ln {
                        edges.push((l, ln));
                    }
                }
            }
        }
        SocialGraph::from_edges(users.len(), &edges).expect("induced edges are valid")
    }
}

/// Paired latent matrices of rank K, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    rank: usize,
    num_users: usize,
    num_items: usize,
    pub lambda: f64,
    pub beta: f64,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
}

impl FactorModel {
    pub fn new(
        rank: usize,
        num_users: usize,
        num_items: usize,
        lambda: f64,
        beta: f64,
        user_factors: Vec<f64>,
        item_factors: Vec<f64>,
    ) -> Self {
        assert_eq!(user_factors.len(), num_users * rank);
        assert_eq!(item_factors.len(), num_items * rank);
        Self {
            rank,
            num_users,
            num_items,
            lambda,
            beta,
            user_factors,
            item_factors,
        }
    }

    pub fn zeros(rank: usize, num_users: usize, num_items: usize) -> Self {
        Self::new(
            rank,
            num_users,
            num_items,
            0.0,
            0.0,
            vec![0.0; num_users * rank],
            vec![0.0; num_items * rank],
        )
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn user_row(&self, i: usize) -> &[f64] {
        &self.user_factors[i * self.rank..(i + 1) * self.rank]
    }

    pub fn item_row(&self, j: usize) -> &[f64] {
        &self.item_factors[j * self.rank..(j + 1) * self.rank]
    }

    pub fn user_row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.user_factors[i * self.rank..(i + 1) * self.rank]
    }

    pub fn item_row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.item_factors[j * self.rank..(j + 1) * self.rank]
    }

    pub fn user_factors(&self) -> &[f64] {
        &self.user_factors
    }

    pub fn item_factors(&self) -> &[f64] {
        &self.item_factors
    }

    /// dot(u_i, v_j).
    pub fn predict(&self, user: usize, item: usize) -> f64 {
        dot(self.user_row(user), self.item_row(item))
    }

    pub fn all_finite(&self) -> bool {
        self.user_factors.iter().chain(&self.item_factors).all(|x| x.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How a submatrix came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// LLORMA anchor point (user, item) drawn from the observed set.
    Anchor { user: usize, item: usize },
    /// SLOMA connector user whose hop-ball seeds the group.
    Connector { user: usize },
    /// Overlapping community, by id.
    Community { id: usize },
}

/// A submatrix skeleton: user/item subsets plus the entry indexes of the
/// parent rating matrix that fall inside it.
#[derive(Debug, Clone)]
pub struct Submatrix {
    /// Sorted global user indexes.
    pub users: Vec<usize>,
    /// Sorted global item indexes.
    pub items: Vec<usize>,
    /// Indexes into the parent matrix's entries.
    pub entries: Vec<usize>,
    pub origin: Origin,
}

impl Submatrix {
    /// Builds a skeleton from a user set: items are all items rated by
    /// those users, entries are all of the users' ratings.
    pub fn from_user_set(ratings: &RatingMatrix, mut users: Vec<usize>, origin: Origin) -> Self {
        users.sort_unstable();
        users.dedup();
        let mut entries = Vec::new();
        let mut items = Vec::new();
        for &u in &users {
            for &idx in ratings.by_user(u) {
                entries.push(idx);
                items.push(ratings.entry(idx).item);
            }
        }
        entries.sort_unstable();
        items.sort_unstable();
        items.dedup();
        Self {
            users,
            items,
            entries,
            origin,
        }
    }

    /// Builds a skeleton from explicit user and item sets; entries are the
    /// observed ratings inside the cross product.
    pub fn from_user_item_sets(
        ratings: &RatingMatrix,
        mut users: Vec<usize>,
        mut items: Vec<usize>,
        origin: Origin,
    ) -> Self {
        users.sort_unstable();
        users.dedup();
        items.sort_unstable();
        items.dedup();
        let mut entries = Vec::new();
        for &u in &users {
            for &idx in ratings.by_user(u) {
                if items.binary_search(&ratings.entry(idx).item).is_ok() {
                    entries.push(idx);
                }
            }
        }
        entries.sort_unstable();
        Self {
            users,
            items,
            entries,
            origin,
        }
    }

    pub fn local_user(&self, user: usize) -> Option<usize> {
        self.users.binary_search(&user).ok()
    }

    pub fn local_item(&self, item: usize) -> Option<usize> {
        self.items.binary_search(&item).ok()
    }

    /// The submatrix as a stand-alone rating matrix over local indexes.
    pub fn to_local_matrix(&self, ratings: &RatingMatrix) -> RatingMatrix {
        let entries = self
            .entries
            .iter()
            .map(|&idx| {
                let e = ratings.entry(idx);
                RatingEntry {
                    user: self.local_user(e.user).expect("entry user in subset"),
                    item: self.local_item(e.item).expect("entry item in subset"),
                    rating: e.rating,
                }
            })
            .collect();
        let user_ids = self.users.iter().map(|&u| ratings.user_ids()[u].clone()).collect();
        let item_ids = self.items.iter().map(|&j| ratings.item_ids()[j].clone()).collect();
        RatingMatrix::from_parts(user_ids, item_ids, entries)
            .expect("local reindexing of a valid matrix is valid")
    }
}

/// One trained local model: its submatrix plus locally indexed factors.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub submatrix: Submatrix,
    pub factors: FactorModel,
}

/// dot(u^t_user, v^t_item) if both are inside the submatrix, else None.
pub fn predict_local(model: &LocalModel, user: usize, item: usize) -> Option<f64> {
    let lu = model.submatrix.local_user(user)?;
    let li = model.submatrix.local_item(item)?;
    Some(model.factors.predict(lu, li))
}

/// How an ensemble combines the local predictions covering a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CombineRule {
    /// SLOMA: plain average over covering submatrices.
    UniformAverage,
    /// LLORMA: Epanechnikov product-kernel weights with the given bandwidth.
    KernelWeighted { bandwidth: f64 },
}

/// A collection of local models plus the global fallback statistics.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub locals: Vec<LocalModel>,
    pub combine: CombineRule,
    /// Mean of all training ratings, used for uncovered pairs.
    pub global_mean: f64,
    /// Global factor model used only for kernel weights (LLORMA).
    pub anchor_factors: Option<FactorModel>,
}
