//! Graph collaborative-filtering model variants.
//!
//! All eight variants share one propagation skeleton. Per layer, each side's
//! next embedding is act(self + sum over incident edges of
//! w_e * (source + phi(source ⊙ target))) with w_e = 1 / sqrt(|N_u| |N_i|):
//!
//! - ngcf:            self = W1 e, source = W1 e, phi = W2 (.)
//! - ngcf-f1:         W1 replaced by identity everywhere
//! - ngcf-f2:         phi = identity
//! - ngcf-i:          phi term removed entirely
//! - ngcf-n:          ngcf with the nonlinearity forced to identity
//! - lightgcn:        no self term, no phi, no nonlinearity
//! - kan-gcf:         self = e, source = e, phi = spline KAN
//! - fourierkan-gcf:  self = e, source = e, phi = Fourier KAN
//!
//! LightGCN reads out the mean of layers 0..=L; every other variant
//! concatenates layers 1..=L.
//!
//! Message dropout zeroes whole per-edge summands (the source + phi message)
//! with probability p, independently per edge, per direction, per layer; the
//! self term is never dropped and surviving messages are not rescaled.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::kan;
use crate::rng;
use crate::spline::SplineGrid;
use crate::tape::{NodeId, ParamId, ParamStore, Tape};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    Ngcf,
    NgcfF1,
    NgcfF2,
    NgcfI,
    NgcfN,
    LightGcn,
    KanGcf,
    FourierKanGcf,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 8] = [
        ModelVariant::Ngcf,
        ModelVariant::NgcfF1,
        ModelVariant::NgcfF2,
        ModelVariant::NgcfI,
        ModelVariant::NgcfN,
        ModelVariant::LightGcn,
        ModelVariant::KanGcf,
        ModelVariant::FourierKanGcf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Ngcf => "ngcf",
            ModelVariant::NgcfF1 => "ngcf-f1",
            ModelVariant::NgcfF2 => "ngcf-f2",
            ModelVariant::NgcfI => "ngcf-i",
            ModelVariant::NgcfN => "ngcf-n",
            ModelVariant::LightGcn => "lightgcn",
            ModelVariant::KanGcf => "kan-gcf",
            ModelVariant::FourierKanGcf => "fourierkan-gcf",
        }
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::contract(format!(
                    "unknown model variant {s:?}; expected one of {}",
                    ModelVariant::ALL.map(|v| v.name()).join(", ")
                ))
            })
    }
}

/// Nonlinearity applied after each propagation layer. LightGCN and ngcf-n
/// force identity regardless of this setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::LeakyRelu => "leaky-relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn apply(self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Identity => Ok(x),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leaky-relu" => Ok(Activation::LeakyRelu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::contract(format!(
                "unknown activation {other:?}; expected leaky-relu, sigmoid or identity"
            ))),
        }
    }
}

/// Per-layer trainable transform, as parameter identities.
#[derive(Debug, Clone)]
pub enum TransformParams {
    None,
    Ngcf {
        w1: Option<ParamId>,
        w2: Option<ParamId>,
    },
    Fourier {
        a: ParamId,
        b: ParamId,
    },
    Spline {
        w: ParamId,
        c: ParamId,
        grid: SplineGrid,
    },
}

/// The same transform bound onto a tape for one forward pass.
#[derive(Debug, Clone)]
pub enum TransformNodes {
    None,
    Ngcf {
        w1: Option<NodeId>,
        w2: Option<NodeId>,
    },
    Fourier {
        a: NodeId,
        b: NodeId,
    },
    Spline {
        w: NodeId,
        c: NodeId,
        grid: SplineGrid,
    },
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub dim: usize,
    pub layers: usize,
    /// Frequency count g of the Fourier transform.
    pub fourier_grid: usize,
    /// Basis layout of the spline transform (kan-gcf only).
    pub spline_grid: SplineGrid,
    pub activation: Activation,
    /// Reuse one transform across layers instead of one per layer.
    pub shared_transforms: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: ModelVariant::FourierKanGcf,
            dim: 64,
            layers: 3,
            fourier_grid: 4,
            spline_grid: SplineGrid {
                intervals: 4,
                degree: 3,
                min: -1.0,
                max: 1.0,
            },
            activation: Activation::LeakyRelu,
            shared_transforms: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GcfModel {
    pub variant: ModelVariant,
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub layers: usize,
    pub activation: Activation,
    user_embed: ParamId,
    item_embed: ParamId,
    transforms: Vec<TransformParams>,
}

/// Message dropout settings for one forward pass. Masks are drawn per layer
/// from seeds derived off this one.
#[derive(Debug, Clone, Copy)]
pub struct MessageDropout {
    pub p: f64,
    pub seed: u64,
}

/// Node handles produced by one recorded forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Layer 0 is the ego embedding table; layer l+1 is one hop further.
    pub layer_users: Vec<NodeId>,
    pub layer_items: Vec<NodeId>,
    pub final_users: NodeId,
    pub final_items: NodeId,
    /// Every distinct trainable parameter, bound exactly once.
    pub params: Vec<NodeId>,
}

/// Final (and per-layer) embeddings as plain tensors, for scoring and
/// evaluation outside any recording.
#[derive(Debug, Clone)]
pub struct EmbeddingState {
    pub layer_users: Vec<Tensor>,
    pub layer_items: Vec<Tensor>,
    pub final_users: Tensor,
    pub final_items: Tensor,
}

impl EmbeddingState {
    /// Preference score: dot product of the final representations.
    pub fn score(&self, user: usize, item: usize) -> Result<f64> {
        if user >= self.final_users.rows() {
            return Err(Error::contract(format!("user {user} out of range")));
        }
        if item >= self.final_items.rows() {
            return Err(Error::contract(format!("item {item} out of range")));
        }
        if self.final_users.cols() != self.final_items.cols() {
            return Err(Error::shape(format!(
                "user readout dim {} vs item readout dim {}",
                self.final_users.cols(),
                self.final_items.cols()
            )));
        }
        let (u, i) = (self.final_users.row(user), self.final_items.row(item));
        let mut acc = 0.0;
        for k in 0..u.len() {
            acc += u[k] * i[k];
        }
        Ok(acc)
    }
}

impl GcfModel {
    /// Registers embeddings and per-layer transforms in `store`, drawing every
    /// tensor from seeds derived off `seed`.
    pub fn init(
        num_users: usize,
        num_items: usize,
        cfg: &ModelConfig,
        seed: u64,
        store: &mut ParamStore,
    ) -> Result<GcfModel> {
        if num_users == 0 || num_items == 0 {
            return Err(Error::contract("model needs at least one user and item"));
        }
        if cfg.dim == 0 {
            return Err(Error::contract("embedding dimension must be positive"));
        }
        if cfg.layers == 0 {
            return Err(Error::contract("at least one propagation layer is required"));
        }
        let d = cfg.dim;
        let user_embed = store.register(
            "user_embed",
            crate::train::xavier_init(&[num_users, d], rng::mix(seed, &[0]))?,
        );
        let item_embed = store.register(
            "item_embed",
            crate::train::xavier_init(&[num_items, d], rng::mix(seed, &[1]))?,
        );
        let layer_count = if cfg.shared_transforms { 1 } else { cfg.layers };
        let mut built = Vec::with_capacity(layer_count);
        for l in 0..layer_count {
            let lt = l as u64;
            let t = match cfg.variant {
                ModelVariant::LightGcn => TransformParams::None,
                ModelVariant::Ngcf | ModelVariant::NgcfN => TransformParams::Ngcf {
                    w1: Some(store.register(
                        format!("w1_{l}"),
                        crate::train::xavier_init(&[d, d], rng::mix(seed, &[2, lt]))?,
                    )),
                    w2: Some(store.register(
                        format!("w2_{l}"),
                        crate::train::xavier_init(&[d, d], rng::mix(seed, &[3, lt]))?,
                    )),
                },
                ModelVariant::NgcfF1 => TransformParams::Ngcf {
                    w1: None,
                    w2: Some(store.register(
                        format!("w2_{l}"),
                        crate::train::xavier_init(&[d, d], rng::mix(seed, &[3, lt]))?,
                    )),
                },
                ModelVariant::NgcfF2 | ModelVariant::NgcfI => TransformParams::Ngcf {
                    w1: Some(store.register(
                        format!("w1_{l}"),
                        crate::train::xavier_init(&[d, d], rng::mix(seed, &[2, lt]))?,
                    )),
                    w2: None,
                },
                ModelVariant::FourierKanGcf => {
                    let (a, b) = kan::fourier_init(d, d, cfg.fourier_grid, rng::mix(seed, &[4, lt]))?;
                    TransformParams::Fourier {
                        a: store.register(format!("fourier_a_{l}"), a),
                        b: store.register(format!("fourier_b_{l}"), b),
                    }
                }
                ModelVariant::KanGcf => {
                    let (w, c) = kan::spline_init(d, d, cfg.spline_grid, rng::mix(seed, &[5, lt]))?;
                    TransformParams::Spline {
                        w: store.register(format!("spline_w_{l}"), w),
                        c: store.register(format!("spline_c_{l}"), c),
                        grid: cfg.spline_grid,
                    }
                }
            };
            built.push(t);
        }
        let transforms = (0..cfg.layers)
            .map(|l| built[if cfg.shared_transforms { 0 } else { l }].clone())
            .collect();
        Ok(GcfModel {
            variant: cfg.variant,
            num_users,
            num_items,
            dim: d,
            layers: cfg.layers,
            activation: cfg.activation,
            user_embed,
            item_embed,
            transforms,
        })
    }

    pub fn user_embed(&self) -> ParamId {
        self.user_embed
    }

    pub fn item_embed(&self) -> ParamId {
        self.item_embed
    }

    pub fn transform_params(&self) -> &[TransformParams] {
        &self.transforms
    }

    /// Records a full forward pass and readout on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        adj: &NormalizedAdjacency,
        dropout: Option<MessageDropout>,
    ) -> Result<ForwardPass> {
        if adj.num_users() != self.num_users || adj.num_items() != self.num_items {
            return Err(Error::contract(format!(
                "adjacency is {}x{}, model expects {}x{}",
                adj.num_users(),
                adj.num_items(),
                self.num_users,
                self.num_items
            )));
        }
        let mut bound: HashMap<ParamId, NodeId> = HashMap::new();
        let mut params = Vec::new();
        let mut bind = |tape: &mut Tape, id: ParamId| -> NodeId {
            *bound.entry(id).or_insert_with(|| {
                let n = tape.param(id, store);
                params.push(n);
                n
            })
        };
        let mut layer_users = vec![bind(tape, self.user_embed)];
        let mut layer_items = vec![bind(tape, self.item_embed)];
        for l in 0..self.layers {
            let nodes = match &self.transforms[l] {
                TransformParams::None => TransformNodes::None,
                TransformParams::Ngcf { w1, w2 } => TransformNodes::Ngcf {
                    w1: w1.map(|p| bind(tape, p)),
                    w2: w2.map(|p| bind(tape, p)),
                },
                TransformParams::Fourier { a, b } => TransformNodes::Fourier {
                    a: bind(tape, *a),
                    b: bind(tape, *b),
                },
                TransformParams::Spline { w, c, grid } => TransformNodes::Spline {
                    w: bind(tape, *w),
                    c: bind(tape, *c),
                    grid: *grid,
                },
            };
            let per_layer = dropout
                .as_ref()
                .map(|d| (d.p, rng::mix(d.seed, &[l as u64])));
            let (u, i) = propagate_layer(
                tape,
                self.variant,
                adj,
                *layer_users.last().unwrap(),
                *layer_items.last().unwrap(),
                &nodes,
                self.activation,
                per_layer,
            )?;
            layer_users.push(u);
            layer_items.push(i);
        }
        let (final_users, final_items) = match self.variant {
            ModelVariant::LightGcn => readout_mean(tape, &layer_users, &layer_items)?,
            _ => readout_concat(tape, &layer_users, &layer_items)?,
        };
        Ok(ForwardPass {
            layer_users,
            layer_items,
            final_users,
            final_items,
            params,
        })
    }

    /// Clean (dropout-free) forward pass evaluated to plain tensors.
    pub fn embeddings(
        &self,
        store: &ParamStore,
        adj: &NormalizedAdjacency,
    ) -> Result<EmbeddingState> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, store, adj, None)?;
        Ok(EmbeddingState {
            layer_users: pass
                .layer_users
                .iter()
                .map(|&n| tape.value(n).cloned())
                .collect::<Result<_>>()?,
            layer_items: pass
                .layer_items
                .iter()
                .map(|&n| tape.value(n).cloned())
                .collect::<Result<_>>()?,
            final_users: tape.value(pass.final_users)?.clone(),
            final_items: tape.value(pass.final_items)?.clone(),
        })
    }
}

fn ngcf_weights(
    variant: ModelVariant,
    t: &TransformNodes,
) -> Result<(Option<NodeId>, Option<NodeId>)> {
    let TransformNodes::Ngcf { w1, w2 } = t else {
        return Err(Error::contract(format!(
            "variant {variant} needs an ngcf transform"
        )));
    };
    let expect = |have: bool, name: &str, wanted: bool| -> Result<()> {
        if have != wanted {
            return Err(Error::contract(format!(
                "variant {variant} {} {name}",
                if wanted { "requires" } else { "must not carry" }
            )));
        }
        Ok(())
    };
    match variant {
        ModelVariant::Ngcf | ModelVariant::NgcfN => {
            expect(w1.is_some(), "w1", true)?;
            expect(w2.is_some(), "w2", true)?;
        }
        ModelVariant::NgcfF1 => {
            expect(w1.is_some(), "w1", false)?;
            expect(w2.is_some(), "w2", true)?;
        }
        ModelVariant::NgcfF2 | ModelVariant::NgcfI => {
            expect(w1.is_some(), "w1", true)?;
            expect(w2.is_some(), "w2", false)?;
        }
        _ => unreachable!("ngcf_weights is only called for ngcf-family variants"),
    }
    Ok((*w1, *w2))
}

/// One propagation hop for both sides of the bipartite graph.
///
/// With `msg_dropout = Some((p, seed))`, every per-edge message is built
/// explicitly, masked, and scatter-added; otherwise the source terms
/// aggregate through the sparse operators and only phi messages go per edge.
#[allow(clippy::too_many_arguments)]
pub fn propagate_layer(
    tape: &mut Tape,
    variant: ModelVariant,
    adj: &NormalizedAdjacency,
    e_u: NodeId,
    e_i: NodeId,
    transform: &TransformNodes,
    activation: Activation,
    msg_dropout: Option<(f64, u64)>,
) -> Result<(NodeId, NodeId)> {
    {
        let (tu, ti) = (tape.value(e_u)?, tape.value(e_i)?);
        tu.require_rank(2, "user embeddings")?;
        ti.require_rank(2, "item embeddings")?;
        if tu.rows() != adj.num_users() || ti.rows() != adj.num_items() {
            return Err(Error::contract(format!(
                "embeddings are {}x{} users x items, adjacency is {}x{}",
                tu.rows(),
                ti.rows(),
                adj.num_users(),
                adj.num_items()
            )));
        }
    }
    let (users_idx, items_idx, weights) = adj.edge_arrays();
    let (users_idx, items_idx, weights) = (users_idx.clone(), items_idx.clone(), weights.clone());

    // Source transforms; these double as the (never dropped) self terms.
    let (src_u, src_i, has_self) = match (variant, transform) {
        (ModelVariant::LightGcn, TransformNodes::None) => (e_u, e_i, false),
        (ModelVariant::LightGcn, _) => {
            return Err(Error::contract("lightgcn takes no transform"))
        }
        (ModelVariant::KanGcf, TransformNodes::Spline { .. }) => (e_u, e_i, true),
        (ModelVariant::KanGcf, _) => {
            return Err(Error::contract("kan-gcf needs a spline transform"))
        }
        (ModelVariant::FourierKanGcf, TransformNodes::Fourier { .. }) => (e_u, e_i, true),
        (ModelVariant::FourierKanGcf, _) => {
            return Err(Error::contract("fourierkan-gcf needs a fourier transform"))
        }
        _ => {
            let (w1, _) = ngcf_weights(variant, transform)?;
            match w1 {
                Some(w1) => (tape.linear(e_u, w1)?, tape.linear(e_i, w1)?, true),
                None => (e_u, e_i, true),
            }
        }
    };

    // Shared per-edge interaction messages phi(e_i ⊙ e_u); the Hadamard
    // product is symmetric, so one transform serves both directions.
    let inter = match variant {
        ModelVariant::LightGcn | ModelVariant::NgcfI => None,
        _ => {
            let hu = tape.gather_rows(e_u, users_idx.clone())?;
            let hi = tape.gather_rows(e_i, items_idx.clone())?;
            let h = tape.hadamard(hi, hu)?;
            let t = match (variant, transform) {
                (ModelVariant::NgcfF2, _) => h,
                (ModelVariant::KanGcf, TransformNodes::Spline { w, c, grid }) => {
                    kan::spline_kan_forward(tape, h, *w, *c, *grid)?
                }
                (ModelVariant::FourierKanGcf, TransformNodes::Fourier { a, b }) => {
                    kan::fourier_kan_forward(tape, h, *a, *b)?
                }
                _ => {
                    let (_, w2) = ngcf_weights(variant, transform)?;
                    tape.linear(h, w2.expect("w2 presence validated"))?
                }
            };
            Some(t)
        }
    };

    let (agg_u, agg_i) = match msg_dropout {
        None => {
            let mut agg_u = tape.sparse_matmul(adj.user_to_item().clone(), src_i)?;
            let mut agg_i = tape.sparse_matmul(adj.item_to_user().clone(), src_u)?;
            if let Some(t) = inter {
                let int_u =
                    tape.scatter_rows(t, users_idx.clone(), Some(weights.clone()), adj.num_users())?;
                let int_i =
                    tape.scatter_rows(t, items_idx.clone(), Some(weights.clone()), adj.num_items())?;
                agg_u = tape.add(agg_u, int_u)?;
                agg_i = tape.add(agg_i, int_i)?;
            }
            (agg_u, agg_i)
        }
        Some((p, seed)) => {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::contract(format!(
                    "message dropout rate must lie in [0, 1), got {p}"
                )));
            }
            // One Bernoulli stream per pass: first the item->user masks in
            // edge order, then the user->item masks.
            let mut r = rng::seeded(seed);
            let masked = |r: &mut rng::SeededRng| -> Arc<Vec<f64>> {
                Arc::new(
                    weights
                        .iter()
                        .map(|&w| if r.random_bool(p) { 0.0 } else { w })
                        .collect(),
                )
            };
            let w_to_user = masked(&mut r);
            let w_to_item = masked(&mut r);
            let msg_u = {
                let src = tape.gather_rows(src_i, items_idx.clone())?;
                match inter {
                    Some(t) => tape.add(src, t)?,
                    None => src,
                }
            };
            let msg_i = {
                let src = tape.gather_rows(src_u, users_idx.clone())?;
                match inter {
                    Some(t) => tape.add(src, t)?,
                    None => src,
                }
            };
            let agg_u = tape.scatter_rows(msg_u, users_idx.clone(), Some(w_to_user), adj.num_users())?;
            let agg_i = tape.scatter_rows(msg_i, items_idx.clone(), Some(w_to_item), adj.num_items())?;
            (agg_u, agg_i)
        }
    };

    let (pre_u, pre_i) = if has_self {
        (tape.add(src_u, agg_u)?, tape.add(src_i, agg_i)?)
    } else {
        (agg_u, agg_i)
    };

    let act = match variant {
        ModelVariant::LightGcn | ModelVariant::NgcfN => Activation::Identity,
        _ => activation,
    };
    Ok((act.apply(tape, pre_u)?, act.apply(tape, pre_i)?))
}

/// Concatenates layers 1..=L per side; layer 0 is excluded.
pub fn readout_concat(
    tape: &mut Tape,
    layer_users: &[NodeId],
    layer_items: &[NodeId],
) -> Result<(NodeId, NodeId)> {
    if layer_users.len() < 2 || layer_items.len() < 2 {
        return Err(Error::contract(
            "concat readout needs at least one propagation layer",
        ));
    }
    Ok((
        tape.concat_cols(&layer_users[1..])?,
        tape.concat_cols(&layer_items[1..])?,
    ))
}

/// Elementwise mean of layers 0..=L per side.
pub fn readout_mean(
    tape: &mut Tape,
    layer_users: &[NodeId],
    layer_items: &[NodeId],
) -> Result<(NodeId, NodeId)> {
    Ok((
        tape.mean_list(layer_users)?,
        tape.mean_list(layer_items)?,
    ))
}
