//! BPR training: pairwise sampling, loss construction, and Adam.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{node_dropout, InteractionGraph, NormalizedAdjacency};
use crate::model::{GcfModel, MessageDropout};
use crate::rng;
use crate::tape::{Gradients, NodeId, ParamStore, Tape};
use crate::tensor::Tensor;

/// Seed-stream tags so per-epoch draws never collide across purposes.
const SEED_NODE_DROP: u64 = 1;
const SEED_TRIPLETS: u64 = 2;
const SEED_MSG_DROP: u64 = 3;

/// Xavier/Glorot uniform: entries from U(-b, b) with b = sqrt(6 / (fan_in +
/// fan_out)). Rank-2 tensors use (cols, rows) as the fans; higher ranks fold
/// the trailing dimensions into both, and rank-1 uses the length for both.
pub fn xavier_init(shape: &[usize], seed: u64) -> Result<Tensor> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::contract(format!(
            "xavier init needs a non-empty shape with positive dims, got {shape:?}"
        )));
    }
    let (fan_in, fan_out) = match shape.len() {
        1 => (shape[0], shape[0]),
        _ => {
            let receptive: usize = shape[2..].iter().product();
            (shape[1] * receptive, shape[0] * receptive)
        }
    };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut r = rng::seeded(seed);
    let count: usize = shape.iter().product();
    let values = (0..count).map(|_| r.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), values)
}

/// One pairwise preference: `user` should rank `pos` above `neg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BprTriplet {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// One triplet per training edge, in shuffled order, with negatives drawn
/// uniformly from each user's non-interacted items. Users who interact with
/// every item have no negatives and are skipped with a warning.
pub fn epoch_triplets(graph: &InteractionGraph, seed: u64) -> Result<Vec<BprTriplet>> {
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); graph.num_users()];
    for e in graph.edges() {
        // Edges are sorted by (user, item), so these lists stay sorted.
        by_user[e.user].push(e.item);
    }
    let n_items = graph.num_items();
    let mut r = rng::seeded(seed);
    let mut order: Vec<usize> = (0..graph.num_edges()).collect();
    order.shuffle(&mut r);
    let mut out = Vec::with_capacity(order.len());
    let mut warned = vec![false; graph.num_users()];
    for &ei in &order {
        let e = &graph.edges()[ei];
        let seen = &by_user[e.user];
        if seen.len() >= n_items {
            if !warned[e.user] {
                log::warn!(
                    "user {} interacts with every item; skipping its training edges",
                    e.user
                );
                warned[e.user] = true;
            }
            continue;
        }
        out.push(BprTriplet {
            user: e.user,
            pos: e.item,
            neg: sample_negative(&mut r, seen, n_items),
        });
    }
    if out.is_empty() {
        return Err(Error::contract(
            "no trainable edges: every user interacts with every item",
        ));
    }
    Ok(out)
}

fn sample_negative(r: &mut rng::SeededRng, seen: &[usize], n_items: usize) -> usize {
    for _ in 0..64 {
        let cand = r.random_range(0..n_items);
        if seen.binary_search(&cand).is_err() {
            return cand;
        }
    }
    // Dense user: walk forward from a random start. The caller guarantees a
    // free item exists, so this terminates.
    let mut cand = r.random_range(0..n_items);
    while seen.binary_search(&cand).is_ok() {
        cand = (cand + 1) % n_items;
    }
    cand
}

/// Records the BPR objective on `tape`:
/// sum over triplets of softplus(score(u, neg) - score(u, pos)), plus
/// l2 * sum of squares over `params` added exactly once.
pub fn bpr_loss(
    tape: &mut Tape,
    final_users: NodeId,
    final_items: NodeId,
    triplets: &[BprTriplet],
    l2: f64,
    params: &[NodeId],
) -> Result<NodeId> {
    if triplets.is_empty() {
        return Err(Error::contract("bpr loss over an empty batch"));
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::contract(format!(
            "l2 coefficient must be finite and non-negative, got {l2}"
        )));
    }
    let users = Arc::new(triplets.iter().map(|t| t.user).collect::<Vec<_>>());
    let pos = Arc::new(triplets.iter().map(|t| t.pos).collect::<Vec<_>>());
    let neg = Arc::new(triplets.iter().map(|t| t.neg).collect::<Vec<_>>());
    let u = tape.gather_rows(final_users, users)?;
    let p = tape.gather_rows(final_items, pos)?;
    let n = tape.gather_rows(final_items, neg)?;
    let s_pos = tape.row_dot(u, p)?;
    let s_neg = tape.row_dot(u, n)?;
    let margin = tape.sub(s_neg, s_pos)?;
    let soft = tape.softplus(margin)?;
    let mut loss = tape.sum(soft)?;
    if l2 != 0.0 {
        let mut reg: Option<NodeId> = None;
        for &pn in params {
            let sq = tape.hadamard(pn, pn)?;
            let s = tape.sum(sq)?;
            reg = Some(match reg {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
        if let Some(reg) = reg {
            let scaled = tape.scale(reg, l2)?;
            loss = tape.add(loss, scaled)?;
        }
    }
    Ok(loss)
}

/// Adam with bias correction and one shared step counter for all parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::contract(format!(
                "learning rate must be finite and positive, got {lr}"
            )));
        }
        let zeros: Vec<Tensor> = store
            .ids()
            .map(|id| Tensor::zeros(store.get(id).shape().to_vec()))
            .collect();
        Ok(AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Non-finite gradients abort the run rather
    /// than poisoning the parameters.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite gradient at optimizer step {}",
                self.step + 1
            )));
        }
        if store.len() != self.m.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (slot, (id, g)) in grads.iter().enumerate() {
            let p = store.get_mut(id);
            if g.shape() != p.shape() {
                return Err(Error::shape(format!(
                    "gradient shape {:?} vs parameter shape {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let m = self.m[slot].values_mut();
            let v = self.v[slot].values_mut();
            let pv = p.values_mut();
            for k in 0..pv.len() {
                let gk = g.values()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                pv[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub l2: f64,
    /// Per-edge message dropout rate; 0 disables it.
    pub msg_dropout: f64,
    /// Per-epoch node dropout rate; 0 disables it.
    pub node_dropout: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 2048,
            l2: 1e-4,
            msg_dropout: 0.1,
            node_dropout: 0.1,
            epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::contract(format!("bad learning rate {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be positive"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::contract(format!("bad l2 coefficient {}", self.l2)));
        }
        if !(0.0..1.0).contains(&self.msg_dropout) {
            return Err(Error::contract(format!(
                "message dropout must lie in [0, 1), got {}",
                self.msg_dropout
            )));
        }
        if !(0.0..1.0).contains(&self.node_dropout) {
            return Err(Error::contract(format!(
                "node dropout must lie in [0, 1), got {}",
                self.node_dropout
            )));
        }
        if self.epochs == 0 {
            return Err(Error::contract("epoch count must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    /// Mean per-triplet loss over the epoch.
    pub mean_loss: f64,
    /// Mean per-batch global gradient norm.
    pub grad_norm: f64,
    pub batches: usize,
}

/// One pass over the training edges: resample the node-dropped adjacency,
/// draw this epoch's triplets, then per mini-batch record forward + loss,
/// backpropagate, and apply Adam.
pub fn train_epoch(
    model: &GcfModel,
    store: &mut ParamStore,
    adam: &mut AdamState,
    adj: &NormalizedAdjacency,
    graph: &InteractionGraph,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    cfg.validate()?;
    let ep = epoch as u64;
    let dropped;
    let adj_epoch = if cfg.node_dropout > 0.0 {
        dropped = node_dropout(adj, cfg.node_dropout, rng::mix(cfg.seed, &[SEED_NODE_DROP, ep]))?;
        &dropped
    } else {
        adj
    };
    let triplets = epoch_triplets(graph, rng::mix(cfg.seed, &[SEED_TRIPLETS, ep]))?;
    let mut loss_sum = 0.0;
    let mut norm_sum = 0.0;
    let mut batches = 0;
    for (bi, chunk) in triplets.chunks(cfg.batch_size).enumerate() {
        let mut tape = Tape::new();
        let drop = if cfg.msg_dropout > 0.0 {
            Some(MessageDropout {
                p: cfg.msg_dropout,
                seed: rng::mix(cfg.seed, &[SEED_MSG_DROP, ep, bi as u64]),
            })
        } else {
            None
        };
        let pass = model.forward(&mut tape, store, adj_epoch, drop)?;
        let loss = bpr_loss(
            &mut tape,
            pass.final_users,
            pass.final_items,
            chunk,
            cfg.l2,
            &pass.params,
        )?;
        let grads = tape.backward(loss, store)?;
        loss_sum += tape.value(loss)?.values()[0];
        norm_sum += grads.global_norm();
        adam.step(store, &grads)?;
        batches += 1;
    }
    Ok(EpochStats {
        mean_loss: loss_sum / triplets.len() as f64,
        grad_norm: norm_sum / batches as f64,
        batches,
    })
}
