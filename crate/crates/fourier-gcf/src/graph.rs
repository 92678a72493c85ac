//! Bipartite user-item interaction graphs and their normalized adjacency.
//!
//! The adjacency is kept as two CSR operators, one per propagation direction,
//! whose stored values are the symmetric normalization 1 / sqrt(|N_u| |N_i|).
//! Node dropout zeroes stored values in place of removing entries, so the
//! sparsity structure (and therefore summation order) never changes.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng;
use crate::sparse::SparseMatrix;

/// One observed user-item interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
}

/// Either side of the bipartite node set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    User(usize),
    Item(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    /// Deduplicated edges sorted by (user, item); duplicates keep the
    /// earliest timestamp.
    edges: Vec<Interaction>,
    user_degree: Vec<usize>,
    item_degree: Vec<usize>,
}

impl InteractionGraph {
    pub fn new(num_users: usize, num_items: usize, mut edges: Vec<Interaction>) -> Result<Self> {
        if num_users == 0 || num_items == 0 {
            return Err(Error::contract(format!(
                "graph needs at least one user and one item, got {num_users} users, {num_items} items"
            )));
        }
        for e in &edges {
            if e.user >= num_users || e.item >= num_items {
                return Err(Error::contract(format!(
                    "edge ({}, {}) out of bounds for {num_users} users x {num_items} items",
                    e.user, e.item
                )));
            }
        }
        // Sorting by (user, item, timestamp) makes the first edge of each
        // duplicate group the earliest one, which dedup_by keeps.
        edges.sort_unstable_by_key(|e| (e.user, e.item, e.timestamp));
        edges.dedup_by_key(|e| (e.user, e.item));
        let mut user_degree = vec![0usize; num_users];
        let mut item_degree = vec![0usize; num_items];
        for e in &edges {
            user_degree[e.user] += 1;
            item_degree[e.item] += 1;
        }
        Ok(InteractionGraph {
            num_users,
            num_items,
            edges,
            user_degree,
            item_degree,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Interaction] {
        &self.edges
    }

    pub fn degree(&self, node: NodeRef) -> Result<usize> {
        match node {
            NodeRef::User(u) => self
                .user_degree
                .get(u)
                .copied()
                .ok_or_else(|| Error::contract(format!("user {u} out of range"))),
            NodeRef::Item(i) => self
                .item_degree
                .get(i)
                .copied()
                .ok_or_else(|| Error::contract(format!("item {i} out of range"))),
        }
    }
}

/// Normalized adjacency in both propagation directions, plus a flat edge view
/// (user-major order) for per-edge message construction.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    num_users: usize,
    num_items: usize,
    user_to_item: Arc<SparseMatrix>,
    item_to_user: Arc<SparseMatrix>,
    edge_users: Arc<Vec<usize>>,
    edge_items: Arc<Vec<usize>>,
    edge_weights: Arc<Vec<f64>>,
}

/// Builds both operators from a graph; entry (u, i) carries
/// 1 / sqrt(deg(u) * deg(i)).
pub fn build_normalized_adjacency(graph: &InteractionGraph) -> Result<NormalizedAdjacency> {
    let mut ui = Vec::with_capacity(graph.num_edges());
    let mut iu = Vec::with_capacity(graph.num_edges());
    let mut edge_users = Vec::with_capacity(graph.num_edges());
    let mut edge_items = Vec::with_capacity(graph.num_edges());
    let mut edge_weights = Vec::with_capacity(graph.num_edges());
    for e in graph.edges() {
        let du = graph.user_degree[e.user] as f64;
        let di = graph.item_degree[e.item] as f64;
        let w = 1.0 / (du * di).sqrt();
        ui.push((e.user, e.item, w));
        iu.push((e.item, e.user, w));
        edge_users.push(e.user);
        edge_items.push(e.item);
        edge_weights.push(w);
    }
    Ok(NormalizedAdjacency {
        num_users: graph.num_users(),
        num_items: graph.num_items(),
        user_to_item: Arc::new(SparseMatrix::from_triplets(
            graph.num_users(),
            graph.num_items(),
            ui,
        )?),
        item_to_user: Arc::new(SparseMatrix::from_triplets(
            graph.num_items(),
            graph.num_users(),
            iu,
        )?),
        edge_users: Arc::new(edge_users),
        edge_items: Arc::new(edge_items),
        edge_weights: Arc::new(edge_weights),
    })
}

impl NormalizedAdjacency {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.edge_users.len()
    }

    /// User -> item operator (num_users x num_items).
    pub fn user_to_item(&self) -> &Arc<SparseMatrix> {
        &self.user_to_item
    }

    /// Item -> user operator (num_items x num_users).
    pub fn item_to_user(&self) -> &Arc<SparseMatrix> {
        &self.item_to_user
    }

    /// Edge endpoints and normalization weights in (user, item) order,
    /// matching the row order of the user -> item operator.
    pub fn edge_arrays(&self) -> (&Arc<Vec<usize>>, &Arc<Vec<usize>>, &Arc<Vec<f64>>) {
        (&self.edge_users, &self.edge_items, &self.edge_weights)
    }
}

/// Zeroes every stored entry incident to a sampled fraction `p` of the pooled
/// user+item node set. floor(p * (U + I)) distinct nodes are drawn with the
/// given seed; remaining weights are not renormalized.
pub fn node_dropout(adj: &NormalizedAdjacency, p: f64, seed: u64) -> Result<NormalizedAdjacency> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::contract(format!(
            "node dropout rate must lie in [0, 1], got {p}"
        )));
    }
    let total = adj.num_users + adj.num_items;
    let count = (p * total as f64).floor() as usize;
    let mut rng = rng::seeded(seed);
    let sampled = rand::seq::index::sample(&mut rng, total, count.min(total));
    let mut drop_user = vec![false; adj.num_users];
    let mut drop_item = vec![false; adj.num_items];
    for n in sampled {
        if n < adj.num_users {
            drop_user[n] = true;
        } else {
            drop_item[n - adj.num_users] = true;
        }
    }

    let zeroed = |rows_dropped: &[bool], cols_dropped: &[bool], m: &SparseMatrix| {
        let trips = m
            .entries()
            .map(|(r, c, v)| {
                let v = if rows_dropped[r] || cols_dropped[c] {
                    0.0
                } else {
                    v
                };
                (r, c, v)
            })
            .collect();
        SparseMatrix::from_triplets(m.rows(), m.cols(), trips)
    };
    let user_to_item = Arc::new(zeroed(&drop_user, &drop_item, &adj.user_to_item)?);
    let item_to_user = Arc::new(zeroed(&drop_item, &drop_user, &adj.item_to_user)?);
    let edge_weights = adj
        .edge_users
        .iter()
        .zip(adj.edge_items.iter())
        .zip(adj.edge_weights.iter())
        .map(|((&u, &i), &w)| {
            if drop_user[u] || drop_item[i] {
                0.0
            } else {
                w
            }
        })
        .collect();
    Ok(NormalizedAdjacency {
        num_users: adj.num_users,
        num_items: adj.num_items,
        user_to_item,
        item_to_user,
        edge_users: adj.edge_users.clone(),
        edge_items: adj.edge_items.clone(),
        edge_weights: Arc::new(edge_weights),
    })
}
