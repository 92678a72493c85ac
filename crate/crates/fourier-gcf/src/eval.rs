//! Chronological splitting and top-K ranking evaluation.

use crate::error::{Error, Result};
use crate::graph::Interaction;
use crate::model::EmbeddingState;

/// Fractions of interactions assigned to train and validation; the rest is
/// the test split.
#[derive(Debug, Clone, Copy)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            val: 0.1,
        }
    }
}

/// Orders interactions by (timestamp, user, item) and cuts at
/// floor(train * n) and floor((train + val) * n), so every training
/// interaction precedes (or ties with) every later one.
pub fn chronological_split(
    edges: &[Interaction],
    ratios: SplitRatios,
) -> Result<(Vec<Interaction>, Vec<Interaction>, Vec<Interaction>)> {
    if edges.len() < 10 {
        return Err(Error::contract(format!(
            "need at least 10 interactions to split, got {}",
            edges.len()
        )));
    }
    if !(ratios.train > 0.0 && ratios.val >= 0.0 && ratios.train + ratios.val < 1.0) {
        return Err(Error::contract(format!(
            "split ratios must satisfy train > 0, val >= 0, train + val < 1; got {} and {}",
            ratios.train, ratios.val
        )));
    }
    let mut sorted = edges.to_vec();
    sorted.sort_by_key(|e| (e.timestamp, e.user, e.item));
    let n = sorted.len();
    // Ratios are short decimals, so r * n often lands on an integer that
    // binary rounding undershoots (0.7 + 0.1 = 0.79999…); nudge before
    // flooring so those boundaries stay exact.
    let cut = |r: f64| (((r * n as f64) + 1e-9).floor() as usize).min(n);
    let train_end = cut(ratios.train);
    let val_end = cut(ratios.train + ratios.val).max(train_end);
    let test = sorted.split_off(val_end);
    let val = sorted.split_off(train_end);
    Ok((sorted, val, test))
}

fn check_metric_args(relevant_len: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::contract("top-k cutoff must be positive"));
    }
    if relevant_len == 0 {
        return Err(Error::contract(
            "metrics are undefined for an empty relevant set",
        ));
    }
    Ok(())
}

fn hit(relevant: &[usize], item: usize) -> bool {
    relevant.binary_search(&item).is_ok()
}

/// Fraction of the relevant items that appear in the first k of `ranked`.
/// `relevant` must be sorted ascending.
pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Result<f64> {
    check_metric_args(relevant.len(), k)?;
    let hits = ranked
        .iter()
        .take(k)
        .filter(|&&item| hit(relevant, item))
        .count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// DCG@k with binary gains 1 / log2(position + 1), normalized by the ideal
/// DCG over min(k, |relevant|) positions. `relevant` must be sorted.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Result<f64> {
    check_metric_args(relevant.len(), k)?;
    let mut dcg = 0.0;
    for (pos, &item) in ranked.iter().take(k).enumerate() {
        if hit(relevant, item) {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for pos in 0..k.min(relevant.len()) {
        idcg += 1.0 / ((pos + 2) as f64).log2();
    }
    Ok(dcg / idcg)
}

/// Which held-out split supplies the target items. Validation masks only the
/// training interactions out of the candidate ranking; Test masks training
/// and validation interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTarget {
    Validation,
    Test,
}

/// Metrics for one evaluated user; the vectors are parallel to the requested
/// cutoffs.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RankingResult {
    pub ks: Vec<usize>,
    pub users_evaluated: usize,
    /// One entry per user with at least one target item, ascending by user.
    pub per_user: Vec<UserMetrics>,
    /// Mean Recall@k over evaluated users, parallel to `ks`.
    pub recall: Vec<f64>,
    /// Mean NDCG@k over evaluated users, parallel to `ks`.
    pub ndcg: Vec<f64>,
}

impl RankingResult {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }
}

fn per_user_items(edges: &[Interaction], num_users: usize, num_items: usize) -> Result<Vec<Vec<usize>>> {
    let mut by_user = vec![Vec::new(); num_users];
    for e in edges {
        if e.user >= num_users || e.item >= num_items {
            return Err(Error::contract(format!(
                "interaction ({}, {}) outside the {}x{} embedding tables",
                e.user, e.item, num_users, num_items
            )));
        }
        by_user[e.user].push(e.item);
    }
    for items in &mut by_user {
        items.sort_unstable();
        items.dedup();
    }
    Ok(by_user)
}

/// Ranks all items per user by final-embedding dot product (masked
/// interactions scored as negative infinity, ties broken by ascending item
/// index) and averages Recall@k / NDCG@k over users that have at least one
/// target item.
pub fn evaluate_ranking(
    state: &EmbeddingState,
    train: &[Interaction],
    val: &[Interaction],
    test: &[Interaction],
    target: EvalTarget,
    ks: &[usize],
) -> Result<RankingResult> {
    if ks.is_empty() {
        return Err(Error::contract("no top-k cutoffs requested"));
    }
    for &k in ks {
        if k == 0 {
            return Err(Error::contract("top-k cutoff must be positive"));
        }
    }
    let num_users = state.final_users.rows();
    let num_items = state.final_items.rows();
    let train_by_user = per_user_items(train, num_users, num_items)?;
    let val_by_user = per_user_items(val, num_users, num_items)?;
    let test_by_user = per_user_items(test, num_users, num_items)?;
    let max_k = *ks.iter().max().unwrap();
    let mut recall_sum = vec![0.0; ks.len()];
    let mut ndcg_sum = vec![0.0; ks.len()];
    let mut per_user = Vec::new();
    for u in 0..num_users {
        let targets = match target {
            EvalTarget::Validation => &val_by_user[u],
            EvalTarget::Test => &test_by_user[u],
        };
        if targets.is_empty() {
            continue;
        }
        let mut scored: Vec<(usize, f64)> = (0..num_items)
            .map(|i| {
                let masked = hit(&train_by_user[u], i)
                    || (target == EvalTarget::Test && hit(&val_by_user[u], i));
                let s = if masked {
                    f64::NEG_INFINITY
                } else {
                    state.score(u, i).expect("indices validated above")
                };
                (i, s)
            })
            .collect();
        let cut = max_k.min(num_items.saturating_sub(1));
        let by_rank = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
        };
        if cut < num_items {
            scored.select_nth_unstable_by(cut, by_rank);
        }
        let top = &mut scored[..max_k.min(num_items)];
        top.sort_by(by_rank);
        let ranked: Vec<usize> = top.iter().map(|&(i, _)| i).collect();
        let mut metrics = UserMetrics {
            user: u,
            recall: Vec::with_capacity(ks.len()),
            ndcg: Vec::with_capacity(ks.len()),
        };
        for (slot, &k) in ks.iter().enumerate() {
            let r = recall_at_k(&ranked, targets, k)?;
            let n = ndcg_at_k(&ranked, targets, k)?;
            recall_sum[slot] += r;
            ndcg_sum[slot] += n;
            metrics.recall.push(r);
            metrics.ndcg.push(n);
        }
        per_user.push(metrics);
    }
    if per_user.is_empty() {
        return Err(Error::contract(
            "no user has target items in the requested split",
        ));
    }
    let inv = 1.0 / per_user.len() as f64;
    Ok(RankingResult {
        ks: ks.to_vec(),
        users_evaluated: per_user.len(),
        per_user,
        recall: recall_sum.iter().map(|s| s * inv).collect(),
        ndcg: ndcg_sum.iter().map(|s| s * inv).collect(),
    })
}
