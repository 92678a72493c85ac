//! Reverse-mode gradient engine.
//!
//! A `Tape` records every forward operation as a node in an append-only
//! arena; node handles are indices tagged with the tape's identity so values
//! from different recordings cannot be mixed. `backward` walks the recorded
//! ops once in reverse, accumulating adjoints, and returns one gradient
//! tensor per registered parameter (exact zeros for parameters the loss never
//! touched). All accumulation is sequential and index-ordered, so repeated
//! runs produce bitwise-identical gradients.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::spline::SplineGrid;
use crate::tensor::Tensor;

/// Identity of a trainable parameter within a `ParamStore`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Owns the live values of every trainable parameter. Optimizer steps mutate
/// these tensors in place between forward passes.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Tensor>,
    names: Vec<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(value);
        self.names.push(name.into());
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }
}

/// Gradients for every registered parameter, indexed like the store.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    /// L2 norm over all entries of all parameter gradients.
    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0;
        for g in &self.grads {
            for v in g.values() {
                acc += v * v;
            }
        }
        acc.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.is_finite())
    }
}

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId {
    record: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    /// Input node; `param` links it to the store entry it was bound from.
    Leaf { param: Option<ParamId> },
    /// A (m,k) x B (k,n) -> (m,n).
    MatMul { a: usize, b: usize },
    /// X (n,k) x W (m,k)^T -> (n,m).
    Linear { x: usize, w: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Hadamard { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    Sigmoid { x: usize },
    Silu { x: usize },
    LeakyRelu { x: usize, slope: f64 },
    Softplus { x: usize },
    Cos { x: usize },
    Sin { x: usize },
    /// Sum of every entry -> scalar.
    Sum { x: usize },
    /// Elementwise mean of same-shaped tensors.
    MeanList { xs: Vec<usize> },
    /// Column-wise concatenation of rank-2 tensors with equal row counts.
    ConcatCols { xs: Vec<usize> },
    /// Per-row dot product of two (n,d) tensors -> (n,).
    RowDot { a: usize, b: usize },
    /// out[e] = x[idx[e]] for each listed row.
    GatherRows { x: usize, idx: Arc<Vec<usize>> },
    /// out[idx[e]] += w[e] * x[e].
    ScatterRows {
        x: usize,
        idx: Arc<Vec<usize>>,
        weights: Option<Arc<Vec<f64>>>,
    },
    /// Sparse constant times dense node.
    SpMM { a: Arc<SparseMatrix>, x: usize },
    /// Slice index k of the last axis of a rank-3 tensor -> rank-2.
    FreqSlice { x: usize, k: usize },
    /// out[a,b,j] = w[a,b] * c[a,b,j].
    BroadcastMulLast { w: usize, c: usize },
    Reshape { x: usize },
    /// B-spline basis per entry: (n,p) -> (n, p*M) with M basis functions.
    BsplineBasis { x: usize, grid: SplineGrid },
}

static RECORD_COUNTER: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Default)]
pub struct Tape {
    record: u64,
    values: Vec<Tensor>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            record: RECORD_COUNTER.fetch_add(1, Ordering::Relaxed),
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        NodeId {
            record: self.record,
            index: self.values.len() - 1,
        }
    }

    fn idx(&self, n: NodeId) -> Result<usize> {
        if n.record != self.record {
            return Err(Error::contract(
                "node belongs to a different gradient record",
            ));
        }
        Ok(n.index)
    }

    /// Value of a recorded node.
    pub fn value(&self, n: NodeId) -> Result<&Tensor> {
        Ok(&self.values[self.idx(n)?])
    }

    /// Value of a scalar node as f64.
    pub fn scalar_value(&self, n: NodeId) -> Result<f64> {
        let t = self.value(n)?;
        if t.numel() != 1 {
            return Err(Error::shape(format!(
                "expected scalar, got shape {:?}",
                t.shape()
            )));
        }
        Ok(t.values()[0])
    }

    /// Records a non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { param: None })
    }

    /// Binds the current value of a store parameter as a trainable leaf.
    pub fn param(&mut self, id: ParamId, store: &ParamStore) -> NodeId {
        self.push(store.get(id).clone(), Op::Leaf { param: Some(id) })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.values[ai], &self.values[bi]);
        ta.require_rank(2, "matmul lhs")?;
        tb.require_rank(2, "matmul rhs")?;
        if ta.cols() != tb.rows() {
            return Err(Error::shape(format!(
                "matmul {}x{} by {}x{}",
                ta.rows(),
                ta.cols(),
                tb.rows(),
                tb.cols()
            )));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Tensor::zeros(vec![m, n]);
        for i in 0..m {
            for p in 0..k {
                let av = ta.values()[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &tb.values()[p * n..(p + 1) * n];
                let orow = &mut out.values_mut()[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        Ok(self.push(out, Op::MatMul { a: ai, b: bi }))
    }

    /// x W^T, the dense transform applied row-wise to a batch.
    pub fn linear(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let (tx, tw) = (&self.values[xi], &self.values[wi]);
        tx.require_rank(2, "linear input")?;
        tw.require_rank(2, "linear weight")?;
        if tx.cols() != tw.cols() {
            return Err(Error::shape(format!(
                "linear input {}x{} against weight {}x{}",
                tx.rows(),
                tx.cols(),
                tw.rows(),
                tw.cols()
            )));
        }
        let (n, k, m) = (tx.rows(), tx.cols(), tw.rows());
        let mut out = Tensor::zeros(vec![n, m]);
        for r in 0..n {
            let xrow = tx.row(r);
            let orow = &mut out.values_mut()[r * m..(r + 1) * m];
            for j in 0..m {
                let wrow = &tw.values()[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for p in 0..k {
                    acc += xrow[p] * wrow[p];
                }
                orow[j] = acc;
            }
        }
        Ok(self.push(out, Op::Linear { x: xi, w: wi }))
    }

    fn binary_same_shape(&mut self, a: NodeId, b: NodeId, what: &str) -> Result<(usize, usize)> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        if self.values[ai].shape() != self.values[bi].shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.values[ai].shape(),
                self.values[bi].shape()
            )));
        }
        Ok((ai, bi))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ai, bi) = self.binary_same_shape(a, b, "add")?;
        let mut out = self.values[ai].clone();
        for (o, v) in out.values_mut().iter_mut().zip(self.values[bi].values()) {
            *o += v;
        }
        Ok(self.push(out, Op::Add { a: ai, b: bi }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ai, bi) = self.binary_same_shape(a, b, "sub")?;
        let mut out = self.values[ai].clone();
        for (o, v) in out.values_mut().iter_mut().zip(self.values[bi].values()) {
            *o -= v;
        }
        Ok(self.push(out, Op::Sub { a: ai, b: bi }))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ai, bi) = self.binary_same_shape(a, b, "hadamard")?;
        let mut out = self.values[ai].clone();
        for (o, v) in out.values_mut().iter_mut().zip(self.values[bi].values()) {
            *o *= v;
        }
        Ok(self.push(out, Op::Hadamard { a: ai, b: bi }))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let xi = self.idx(x)?;
        let mut out = self.values[xi].clone();
        for o in out.values_mut() {
            *o *= c;
        }
        Ok(self.push(out, Op::Scale { x: xi, c }))
    }

    fn unary<F: Fn(f64) -> f64>(&mut self, x: NodeId, f: F, op: fn(usize) -> Op) -> Result<NodeId> {
        let xi = self.idx(x)?;
        let mut out = self.values[xi].clone();
        for o in out.values_mut() {
            *o = f(*o);
        }
        Ok(self.push(out, op(xi)))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, sigmoid, |x| Op::Sigmoid { x })
    }

    pub fn silu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, |v| v * sigmoid(v), |x| Op::Silu { x })
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        let xi = self.idx(x)?;
        let mut out = self.values[xi].clone();
        for o in out.values_mut() {
            if *o < 0.0 {
                *o *= slope;
            }
        }
        Ok(self.push(out, Op::LeakyRelu { x: xi, slope }))
    }

    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, softplus, |x| Op::Softplus { x })
    }

    pub fn cos(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, f64::cos, |x| Op::Cos { x })
    }

    pub fn sin(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, f64::sin, |x| Op::Sin { x })
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let xi = self.idx(x)?;
        let mut acc = 0.0;
        for v in self.values[xi].values() {
            acc += v;
        }
        Ok(self.push(Tensor::scalar(acc), Op::Sum { x: xi }))
    }

    pub fn mean_list(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::contract("mean over an empty tensor list"));
        }
        let idxs = xs.iter().map(|&n| self.idx(n)).collect::<Result<Vec<_>>>()?;
        let shape = self.values[idxs[0]].shape().to_vec();
        for &i in &idxs[1..] {
            if self.values[i].shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "mean over mixed shapes {:?} vs {:?}",
                    shape,
                    self.values[i].shape()
                )));
            }
        }
        let mut out = Tensor::zeros(shape);
        for &i in &idxs {
            for (o, v) in out.values_mut().iter_mut().zip(self.values[i].values()) {
                *o += v;
            }
        }
        let inv = 1.0 / idxs.len() as f64;
        for o in out.values_mut() {
            *o *= inv;
        }
        Ok(self.push(out, Op::MeanList { xs: idxs }))
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::contract("concat of an empty tensor list"));
        }
        let idxs = xs.iter().map(|&n| self.idx(n)).collect::<Result<Vec<_>>>()?;
        let rows = {
            let first = &self.values[idxs[0]];
            first.require_rank(2, "concat operand")?;
            first.rows()
        };
        let mut total = 0;
        for &i in &idxs {
            self.values[i].require_rank(2, "concat operand")?;
            if self.values[i].rows() != rows {
                return Err(Error::shape(format!(
                    "concat row mismatch: {} vs {}",
                    rows,
                    self.values[i].rows()
                )));
            }
            total += self.values[i].cols();
        }
        let mut out = Tensor::zeros(vec![rows, total]);
        for r in 0..rows {
            let orow = &mut out.values_mut()[r * total..(r + 1) * total];
            let mut at = 0;
            for &i in &idxs {
                let c = self.values[i].cols();
                orow[at..at + c].copy_from_slice(self.values[i].row(r));
                at += c;
            }
        }
        Ok(self.push(out, Op::ConcatCols { xs: idxs }))
    }

    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ai, bi) = self.binary_same_shape(a, b, "row_dot")?;
        self.values[ai].require_rank(2, "row_dot operand")?;
        let (n, d) = (self.values[ai].rows(), self.values[ai].cols());
        let mut out = Tensor::zeros(vec![n]);
        for r in 0..n {
            let mut acc = 0.0;
            let ra = self.values[ai].row(r);
            let rb = self.values[bi].row(r);
            for k in 0..d {
                acc += ra[k] * rb[k];
            }
            out.values_mut()[r] = acc;
        }
        Ok(self.push(out, Op::RowDot { a: ai, b: bi }))
    }

    pub fn gather_rows(&mut self, x: NodeId, idx: Arc<Vec<usize>>) -> Result<NodeId> {
        let xi = self.idx(x)?;
        self.values[xi].require_rank(2, "gather source")?;
        let (n, d) = (self.values[xi].rows(), self.values[xi].cols());
        for &r in idx.iter() {
            if r >= n {
                return Err(Error::contract(format!(
                    "gather row {r} out of bounds for {n} rows"
                )));
            }
        }
        let mut out = Tensor::zeros(vec![idx.len(), d]);
        for (e, &r) in idx.iter().enumerate() {
            out.values_mut()[e * d..(e + 1) * d].copy_from_slice(self.values[xi].row(r));
        }
        Ok(self.push(out, Op::GatherRows { x: xi, idx }))
    }

    /// Scatter-add rows of `x` into a fresh (rows, d) tensor, optionally
    /// scaling row `e` by `weights[e]`. Accumulation runs in input order.
    pub fn scatter_rows(
        &mut self,
        x: NodeId,
        idx: Arc<Vec<usize>>,
        weights: Option<Arc<Vec<f64>>>,
        rows: usize,
    ) -> Result<NodeId> {
        let xi = self.idx(x)?;
        self.values[xi].require_rank(2, "scatter source")?;
        let d = self.values[xi].cols();
        if idx.len() != self.values[xi].rows() {
            return Err(Error::shape(format!(
                "scatter index count {} vs {} source rows",
                idx.len(),
                self.values[xi].rows()
            )));
        }
        if let Some(w) = &weights {
            if w.len() != idx.len() {
                return Err(Error::shape(format!(
                    "scatter weight count {} vs {} rows",
                    w.len(),
                    idx.len()
                )));
            }
        }
        for &r in idx.iter() {
            if r >= rows {
                return Err(Error::contract(format!(
                    "scatter row {r} out of bounds for {rows} rows"
                )));
            }
        }
        let mut out = Tensor::zeros(vec![rows, d]);
        for (e, &r) in idx.iter().enumerate() {
            let w = weights.as_ref().map_or(1.0, |w| w[e]);
            let src = self.values[xi].row(e);
            let dst = &mut out.values_mut()[r * d..(r + 1) * d];
            for k in 0..d {
                dst[k] += w * src[k];
            }
        }
        Ok(self.push(out, Op::ScatterRows { x: xi, idx, weights }))
    }

    pub fn sparse_matmul(&mut self, a: Arc<SparseMatrix>, x: NodeId) -> Result<NodeId> {
        let xi = self.idx(x)?;
        let out = a.matmul_dense(&self.values[xi])?;
        Ok(self.push(out, Op::SpMM { a, x: xi }))
    }

    /// View of coefficient plane k from a (r, s, g) tensor as an (r, s) matrix.
    pub fn freq_slice(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        let xi = self.idx(x)?;
        self.values[xi].require_rank(3, "frequency slice source")?;
        let sh = self.values[xi].shape().to_vec();
        let (r, s, g) = (sh[0], sh[1], sh[2]);
        if k >= g {
            return Err(Error::contract(format!(
                "frequency index {k} out of bounds for {g} frequencies"
            )));
        }
        let mut out = Tensor::zeros(vec![r, s]);
        for a in 0..r {
            for b in 0..s {
                out.values_mut()[a * s + b] = self.values[xi].values()[(a * s + b) * g + k];
            }
        }
        Ok(self.push(out, Op::FreqSlice { x: xi, k }))
    }

    pub fn broadcast_mul_last(&mut self, w: NodeId, c: NodeId) -> Result<NodeId> {
        let (wi, ci) = (self.idx(w)?, self.idx(c)?);
        self.values[wi].require_rank(2, "broadcast factor")?;
        self.values[ci].require_rank(3, "broadcast target")?;
        let csh = self.values[ci].shape().to_vec();
        if self.values[wi].shape() != &csh[..2] {
            return Err(Error::shape(format!(
                "broadcast {:?} over {:?}",
                self.values[wi].shape(),
                csh
            )));
        }
        let m = csh[2];
        let mut out = self.values[ci].clone();
        for ab in 0..csh[0] * csh[1] {
            let wv = self.values[wi].values()[ab];
            for j in 0..m {
                out.values_mut()[ab * m + j] *= wv;
            }
        }
        Ok(self.push(out, Op::BroadcastMulLast { w: wi, c: ci }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let xi = self.idx(x)?;
        let out = Tensor::new(shape, self.values[xi].values().to_vec())?;
        Ok(self.push(out, Op::Reshape { x: xi }))
    }

    /// Per-entry B-spline basis expansion: (n, p) -> (n, p * M).
    pub fn bspline_basis(&mut self, x: NodeId, grid: SplineGrid) -> Result<NodeId> {
        let xi = self.idx(x)?;
        self.values[xi].require_rank(2, "spline input")?;
        let (n, p) = (self.values[xi].rows(), self.values[xi].cols());
        let m = grid.basis_count();
        let mut out = Tensor::zeros(vec![n, p * m]);
        for r in 0..n {
            for i in 0..p {
                let b = grid.basis(self.values[xi].values()[r * p + i]);
                out.values_mut()[r * p * m + i * m..r * p * m + (i + 1) * m]
                    .copy_from_slice(&b);
            }
        }
        Ok(self.push(out, Op::BsplineBasis { x: xi, grid }))
    }

    /// Accumulates adjoints from `loss` back to every leaf and returns the
    /// gradient of every parameter registered in `store`.
    pub fn backward(&self, loss: NodeId, store: &ParamStore) -> Result<Gradients> {
        let li = self.idx(loss)?;
        if self.values[li].numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[li].shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.values.len()];
        adj[li] = Some(vec![1.0]);

        for i in (0..self.ops.len()).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf { .. } => {
                    adj[i] = Some(g);
                    continue;
                }
                Op::MatMul { a, b } => {
                    let (ta, tb) = (&self.values[*a], &self.values[*b]);
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    {
                        let ga = grad_buf(&mut adj, *a, ta.numel());
                        for r in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[r * n + j] * tb.values()[p * n + j];
                                }
                                ga[r * k + p] += acc;
                            }
                        }
                    }
                    let gb = grad_buf(&mut adj, *b, tb.numel());
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for r in 0..m {
                                acc += ta.values()[r * k + p] * g[r * n + j];
                            }
                            gb[p * n + j] += acc;
                        }
                    }
                }
                Op::Linear { x, w } => {
                    let (tx, tw) = (&self.values[*x], &self.values[*w]);
                    let (n, k, m) = (tx.rows(), tx.cols(), tw.rows());
                    {
                        let gx = grad_buf(&mut adj, *x, tx.numel());
                        for r in 0..n {
                            for j in 0..m {
                                let gv = g[r * m + j];
                                if gv == 0.0 {
                                    continue;
                                }
                                let wrow = &tw.values()[j * k..(j + 1) * k];
                                for p in 0..k {
                                    gx[r * k + p] += gv * wrow[p];
                                }
                            }
                        }
                    }
                    let gw = grad_buf(&mut adj, *w, tw.numel());
                    for r in 0..n {
                        let xrow = tx.row(r);
                        for j in 0..m {
                            let gv = g[r * m + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                gw[j * k + p] += gv * xrow[p];
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut adj, *a, &g, self.values[*a].numel());
                    accumulate(&mut adj, *b, &g, self.values[*b].numel());
                }
                Op::Sub { a, b } => {
                    accumulate(&mut adj, *a, &g, self.values[*a].numel());
                    let gb = grad_buf(&mut adj, *b, self.values[*b].numel());
                    for (o, v) in gb.iter_mut().zip(&g) {
                        *o -= v;
                    }
                }
                Op::Hadamard { a, b } => {
                    let (ta, tb) = (&self.values[*a], &self.values[*b]);
                    {
                        let ga = grad_buf(&mut adj, *a, ta.numel());
                        for j in 0..g.len() {
                            ga[j] += g[j] * tb.values()[j];
                        }
                    }
                    let gb = grad_buf(&mut adj, *b, tb.numel());
                    for j in 0..g.len() {
                        gb[j] += g[j] * ta.values()[j];
                    }
                }
                Op::Scale { x, c } => {
                    let gx = grad_buf(&mut adj, *x, self.values[*x].numel());
                    for (o, v) in gx.iter_mut().zip(&g) {
                        *o += c * v;
                    }
                }
                Op::Sigmoid { x } => {
                    let out = &self.values[i];
                    let gx = grad_buf(&mut adj, *x, out.numel());
                    for j in 0..g.len() {
                        let s = out.values()[j];
                        gx[j] += g[j] * s * (1.0 - s);
                    }
                }
                Op::Silu { x } => {
                    let tx = &self.values[*x];
                    let gx = grad_buf(&mut adj, *x, tx.numel());
                    for j in 0..g.len() {
                        let v = tx.values()[j];
                        let s = sigmoid(v);
                        gx[j] += g[j] * s * (1.0 + v * (1.0 - s));
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let tx = &self.values[*x];
                    let gx = grad_buf(&mut adj, *x, tx.numel());
                    for j in 0..g.len() {
                        let d = if tx.values()[j] < 0.0 { *slope } else { 1.0 };
                        gx[j] += g[j] * d;
                    }
                }
                Op::Softplus { x } => {
                    let tx = &self.values[*x];
                    let gx = grad_buf(&mut adj, *x, tx.numel());
                    for j in 0..g.len() {
                        gx[j] += g[j] * sigmoid(tx.values()[j]);
                    }
                }
                Op::Cos { x } => {
                    let tx = &self.values[*x];
                    let gx = grad_buf(&mut adj, *x, tx.numel());
                    for j in 0..g.len() {
                        gx[j] -= g[j] * tx.values()[j].sin();
                    }
                }
                Op::Sin { x } => {
                    let tx = &self.values[*x];
                    let gx = grad_buf(&mut adj, *x, tx.numel());
                    for j in 0..g.len() {
                        gx[j] += g[j] * tx.values()[j].cos();
                    }
                }
                Op::Sum { x } => {
                    let n = self.values[*x].numel();
                    let gx = grad_buf(&mut adj, *x, n);
                    for o in gx.iter_mut() {
                        *o += g[0];
                    }
                }
                Op::MeanList { xs } => {
                    let inv = 1.0 / xs.len() as f64;
                    for &x in xs {
                        let gx = grad_buf(&mut adj, x, self.values[x].numel());
                        for (o, v) in gx.iter_mut().zip(&g) {
                            *o += inv * v;
                        }
                    }
                }
                Op::ConcatCols { xs } => {
                    let rows = self.values[i].rows();
                    let total = self.values[i].cols();
                    let mut at = 0;
                    for &x in xs {
                        let c = self.values[x].cols();
                        let gx = grad_buf(&mut adj, x, self.values[x].numel());
                        for r in 0..rows {
                            for j in 0..c {
                                gx[r * c + j] += g[r * total + at + j];
                            }
                        }
                        at += c;
                    }
                }
                Op::RowDot { a, b } => {
                    let (ta, tb) = (&self.values[*a], &self.values[*b]);
                    let (n, d) = (ta.rows(), ta.cols());
                    {
                        let ga = grad_buf(&mut adj, *a, ta.numel());
                        for r in 0..n {
                            for k in 0..d {
                                ga[r * d + k] += g[r] * tb.values()[r * d + k];
                            }
                        }
                    }
                    let gb = grad_buf(&mut adj, *b, tb.numel());
                    for r in 0..n {
                        for k in 0..d {
                            gb[r * d + k] += g[r] * ta.values()[r * d + k];
                        }
                    }
                }
                Op::GatherRows { x, idx } => {
                    let d = self.values[*x].cols();
                    let gx = grad_buf(&mut adj, *x, self.values[*x].numel());
                    for (e, &r) in idx.iter().enumerate() {
                        for k in 0..d {
                            gx[r * d + k] += g[e * d + k];
                        }
                    }
                }
                Op::ScatterRows { x, idx, weights } => {
                    let d = self.values[*x].cols();
                    let gx = grad_buf(&mut adj, *x, self.values[*x].numel());
                    for (e, &r) in idx.iter().enumerate() {
                        let w = weights.as_ref().map_or(1.0, |w| w[e]);
                        for k in 0..d {
                            gx[e * d + k] += w * g[r * d + k];
                        }
                    }
                }
                Op::SpMM { a, x } => {
                    let gt = Tensor::new(self.values[i].shape().to_vec(), g.clone())?;
                    let gx_t = a.transpose_matmul_dense(&gt)?;
                    accumulate(&mut adj, *x, gx_t.values(), gx_t.numel());
                }
                Op::FreqSlice { x, k } => {
                    let gg = self.values[*x].shape()[2];
                    let gx = grad_buf(&mut adj, *x, self.values[*x].numel());
                    for (ab, gv) in g.iter().enumerate() {
                        gx[ab * gg + k] += gv;
                    }
                }
                Op::BroadcastMulLast { w, c } => {
                    let (tw, tc) = (&self.values[*w], &self.values[*c]);
                    let m = tc.shape()[2];
                    {
                        let gw = grad_buf(&mut adj, *w, tw.numel());
                        for ab in 0..tw.numel() {
                            let mut acc = 0.0;
                            for j in 0..m {
                                acc += g[ab * m + j] * tc.values()[ab * m + j];
                            }
                            gw[ab] += acc;
                        }
                    }
                    let gc = grad_buf(&mut adj, *c, tc.numel());
                    for ab in 0..tw.numel() {
                        let wv = tw.values()[ab];
                        for j in 0..m {
                            gc[ab * m + j] += g[ab * m + j] * wv;
                        }
                    }
                }
                Op::Reshape { x } => {
                    accumulate(&mut adj, *x, &g, self.values[*x].numel());
                }
                Op::BsplineBasis { x, grid } => {
                    let tx = &self.values[*x];
                    let (n, p) = (tx.rows(), tx.cols());
                    let m = grid.basis_count();
                    let gx = grad_buf(&mut adj, *x, tx.numel());
                    for r in 0..n {
                        for ii in 0..p {
                            let (_, db) = grid.basis_with_derivative(tx.values()[r * p + ii]);
                            let mut acc = 0.0;
                            for j in 0..m {
                                acc += g[r * p * m + ii * m + j] * db[j];
                            }
                            gx[r * p + ii] += acc;
                        }
                    }
                }
            }
        }

        // Collect leaf adjoints into per-parameter gradients; parameters the
        // loss never touched keep their zero tensors.
        let mut grads: Vec<Tensor> = store
            .ids()
            .map(|id| Tensor::zeros(store.get(id).shape().to_vec()))
            .collect();
        for (i, op) in self.ops.iter().enumerate() {
            if let Op::Leaf { param: Some(pid) } = op {
                if let Some(g) = &adj[i] {
                    if store.get(*pid).shape() != self.values[i].shape() {
                        return Err(Error::shape(format!(
                            "parameter {} changed shape since it was bound",
                            store.name(*pid)
                        )));
                    }
                    let dst = grads[pid.0].values_mut();
                    for (o, v) in dst.iter_mut().zip(g) {
                        *o += v;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn grad_buf<'a>(adj: &'a mut [Option<Vec<f64>>], i: usize, n: usize) -> &'a mut Vec<f64> {
    adj[i].get_or_insert_with(|| vec![0.0; n])
}

fn accumulate(adj: &mut [Option<Vec<f64>>], i: usize, g: &[f64], n: usize) {
    let buf = grad_buf(adj, i, n);
    for (o, v) in buf.iter_mut().zip(g) {
        *o += v;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow for large |x|.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Compares the engine's gradient of `f` against central differences at the
/// store's current point and returns the worst relative error, defined as
/// |analytic - numeric| / max(1, |analytic|).
///
/// `f` must rebuild its forward pass from the store on every call and be
/// deterministic; a second evaluation at the base point is compared bitwise
/// to catch accidental randomness.
pub fn finite_difference_check<F>(store: &mut ParamStore, eps: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<(Tape, NodeId)>,
{
    if !(eps > 0.0) {
        return Err(Error::contract(format!("step size must be positive, got {eps}")));
    }
    let (tape, loss) = f(store)?;
    let base = tape.scalar_value(loss)?;
    let (tape2, loss2) = f(store)?;
    if base.to_bits() != tape2.scalar_value(loss2)?.to_bits() {
        return Err(Error::contract(
            "objective is not deterministic: two evaluations at the same point differ",
        ));
    }
    let analytic = tape.backward(loss, store)?;

    let mut worst = 0.0f64;
    for pid in store.ids().collect::<Vec<_>>() {
        for j in 0..store.get(pid).numel() {
            let orig = store.get(pid).values()[j];
            store.get_mut(pid).values_mut()[j] = orig + eps;
            let (tp, lp) = f(store)?;
            let up = tp.scalar_value(lp)?;
            store.get_mut(pid).values_mut()[j] = orig - eps;
            let (tm, lm) = f(store)?;
            let down = tm.scalar_value(lm)?;
            store.get_mut(pid).values_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let ana = analytic.get(pid).values()[j];
            let rel = (ana - numeric).abs() / ana.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
