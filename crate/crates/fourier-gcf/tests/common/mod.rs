//! Independent oracles backing the acceptance suite.
//!
//! The dense propagation oracle re-derives every layer update with plain
//! nested loops over an explicit edge list — no sparse operators, no tape —
//! so a bug in the engine's aggregation path cannot hide in the reference.
//! The ranking oracle scores and fully sorts every item per user instead of
//! using partial selection.

use fourier_gcf::eval::UserMetrics;
use fourier_gcf::tensor::Tensor;

/// Row-per-node matrix.
pub type Mat = Vec<Vec<f64>>;

/// Fourier coefficients indexed [output][input][frequency - 1].
pub type Coeffs = Vec<Vec<Vec<f64>>>;

pub fn to_rows(t: &Tensor) -> Mat {
    assert_eq!(t.rank(), 2, "row conversion expects a matrix");
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn to_coeffs(t: &Tensor) -> Coeffs {
    assert_eq!(t.rank(), 3, "coefficient conversion expects rank 3");
    let (d_out, d_in, g) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    (0..d_out)
        .map(|j| {
            (0..d_in)
                .map(|i| (0..g).map(|k| t.values()[(j * d_in + i) * g + k]).collect())
                .collect()
        })
        .collect()
}

/// Largest absolute entry difference between an engine tensor and an oracle
/// matrix.
pub fn max_abs_diff(t: &Tensor, m: &Mat) -> f64 {
    assert_eq!(t.rows(), m.len(), "row counts differ");
    let mut worst = 0.0f64;
    for (r, row) in m.iter().enumerate() {
        assert_eq!(t.row(r).len(), row.len(), "column counts differ");
        for (a, b) in t.row(r).iter().zip(row) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Bipartite interaction graph as a bare edge list with degree-derived
/// symmetric normalization weights.
pub struct DenseGraph {
    pub num_users: usize,
    pub num_items: usize,
    pub edges: Vec<(usize, usize)>,
}

impl DenseGraph {
    pub fn new(num_users: usize, num_items: usize, edges: Vec<(usize, usize)>) -> Self {
        for &(u, i) in &edges {
            assert!(u < num_users && i < num_items, "edge ({u}, {i}) out of range");
        }
        DenseGraph {
            num_users,
            num_items,
            edges,
        }
    }

    fn user_degree(&self, u: usize) -> usize {
        self.edges.iter().filter(|&&(eu, _)| eu == u).count()
    }

    fn item_degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(_, ei)| ei == i).count()
    }

    /// 1 / sqrt(|N_u| |N_i|) for an existing edge.
    pub fn weight(&self, u: usize, i: usize) -> f64 {
        1.0 / ((self.user_degree(u) * self.item_degree(i)) as f64).sqrt()
    }
}

pub fn leaky(x: f64) -> f64 {
    if x < 0.0 {
        0.2 * x
    } else {
        x
    }
}

/// y_j = sum_k w[j][k] x[k]; `w` is stored row-per-output like the engine's
/// weight tensors.
fn mat_vec(w: &Mat, x: &[f64]) -> Vec<f64> {
    w.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn axpy(acc: &mut [f64], scale: f64, v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

/// phi(x)_j = sum_i sum_k cos(k x_i) a[j][i][k-1] + sin(k x_i) b[j][i][k-1].
pub fn fourier_phi(x: &[f64], a: &Coeffs, b: &Coeffs) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(aj, bj)| {
            let mut acc = 0.0;
            for (i, &xi) in x.iter().enumerate() {
                for k in 1..=aj[i].len() {
                    let arg = k as f64 * xi;
                    acc += arg.cos() * aj[i][k - 1] + arg.sin() * bj[i][k - 1];
                }
            }
            acc
        })
        .collect()
}

/// One NGCF hop:
/// act(W1 e_self + sum over edges of w (W1 e_src + W2 (e_src ⊙ e_self))).
pub fn dense_ngcf_layer(
    g: &DenseGraph,
    e_u: &Mat,
    e_i: &Mat,
    w1: &Mat,
    w2: &Mat,
    act: fn(f64) -> f64,
) -> (Mat, Mat) {
    let mut out_u: Mat = e_u.iter().map(|e| mat_vec(w1, e)).collect();
    let mut out_i: Mat = e_i.iter().map(|e| mat_vec(w1, e)).collect();
    for &(u, i) in &g.edges {
        let w = g.weight(u, i);
        let inter = hadamard(&e_i[i], &e_u[u]);
        let mut msg_u = mat_vec(w1, &e_i[i]);
        axpy(&mut msg_u, 1.0, &mat_vec(w2, &inter));
        axpy(&mut out_u[u], w, &msg_u);
        let mut msg_i = mat_vec(w1, &e_u[u]);
        axpy(&mut msg_i, 1.0, &mat_vec(w2, &inter));
        axpy(&mut out_i[i], w, &msg_i);
    }
    apply(&mut out_u, act);
    apply(&mut out_i, act);
    (out_u, out_i)
}

/// One LightGCN hop: sum over edges of w e_src, nothing else.
pub fn dense_lightgcn_layer(g: &DenseGraph, e_u: &Mat, e_i: &Mat) -> (Mat, Mat) {
    let d = e_u.first().map_or(0, Vec::len);
    let mut out_u = vec![vec![0.0; d]; g.num_users];
    let mut out_i = vec![vec![0.0; d]; g.num_items];
    for &(u, i) in &g.edges {
        let w = g.weight(u, i);
        axpy(&mut out_u[u], w, &e_i[i]);
        axpy(&mut out_i[i], w, &e_u[u]);
    }
    (out_u, out_i)
}

/// One FourierKAN hop:
/// act(e_self + sum over edges of w (e_src + phi(e_src ⊙ e_self))).
pub fn dense_fourier_layer(
    g: &DenseGraph,
    e_u: &Mat,
    e_i: &Mat,
    a: &Coeffs,
    b: &Coeffs,
    act: fn(f64) -> f64,
) -> (Mat, Mat) {
    let mut out_u = e_u.clone();
    let mut out_i = e_i.clone();
    for &(u, i) in &g.edges {
        let w = g.weight(u, i);
        let inter = hadamard(&e_i[i], &e_u[u]);
        let phi = fourier_phi(&inter, a, b);
        let mut msg_u = e_i[i].clone();
        axpy(&mut msg_u, 1.0, &phi);
        axpy(&mut out_u[u], w, &msg_u);
        let mut msg_i = e_u[u].clone();
        axpy(&mut msg_i, 1.0, &phi);
        axpy(&mut out_i[i], w, &msg_i);
    }
    apply(&mut out_u, act);
    apply(&mut out_i, act);
    (out_u, out_i)
}

fn apply(m: &mut Mat, act: fn(f64) -> f64) {
    for row in m {
        for v in row {
            *v = act(*v);
        }
    }
}

/// Side-by-side concatenation of layers 1.. (the ego layer is excluded).
pub fn dense_concat_readout(layers: &[Mat]) -> Mat {
    assert!(layers.len() >= 2, "concat readout needs a propagated layer");
    let rows = layers[0].len();
    (0..rows)
        .map(|r| layers[1..].iter().flat_map(|l| l[r].iter().copied()).collect())
        .collect()
}

/// Elementwise mean over all layers including the ego layer.
pub fn dense_mean_readout(layers: &[Mat]) -> Mat {
    let rows = layers[0].len();
    let d = layers[0][0].len();
    let scale = 1.0 / layers.len() as f64;
    (0..rows)
        .map(|r| {
            (0..d)
                .map(|c| layers.iter().map(|l| l[r][c]).sum::<f64>() * scale)
                .collect()
        })
        .collect()
}

/// Brute-force ranking metrics: every item is scored by an ascending-index
/// dot product, masked interactions drop to negative infinity, the whole
/// item list is sorted (score descending, index ascending), and recall/NDCG
/// are computed with linear membership scans. Returns the per-user metrics
/// together with their macro-averages, accumulated in ascending user order.
pub fn oracle_evaluate(
    user_vecs: &Mat,
    item_vecs: &Mat,
    train: &[(usize, usize)],
    val: &[(usize, usize)],
    test: &[(usize, usize)],
    use_test_targets: bool,
    ks: &[usize],
) -> (Vec<UserMetrics>, Vec<f64>, Vec<f64>) {
    let num_users = user_vecs.len();
    let num_items = item_vecs.len();
    let collect = |edges: &[(usize, usize)]| -> Vec<Vec<usize>> {
        let mut by_user = vec![Vec::new(); num_users];
        for &(u, i) in edges {
            by_user[u].push(i);
        }
        for items in &mut by_user {
            items.sort_unstable();
            items.dedup();
        }
        by_user
    };
    let train_by = collect(train);
    let val_by = collect(val);
    let test_by = collect(test);
    let mut per_user = Vec::new();
    let mut recall_sum = vec![0.0; ks.len()];
    let mut ndcg_sum = vec![0.0; ks.len()];
    for u in 0..num_users {
        let targets = if use_test_targets { &test_by[u] } else { &val_by[u] };
        if targets.is_empty() {
            continue;
        }
        let mut scored: Vec<(usize, f64)> = (0..num_items)
            .map(|i| {
                let masked = train_by[u].contains(&i)
                    || (use_test_targets && val_by[u].contains(&i));
                if masked {
                    return (i, f64::NEG_INFINITY);
                }
                let mut s = 0.0;
                for k in 0..user_vecs[u].len() {
                    s += user_vecs[u][k] * item_vecs[i][k];
                }
                (i, s)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let ranked: Vec<usize> = scored.iter().map(|&(i, _)| i).collect();
        let mut metrics = UserMetrics {
            user: u,
            recall: Vec::new(),
            ndcg: Vec::new(),
        };
        for (slot, &k) in ks.iter().enumerate() {
            let hits = ranked.iter().take(k).filter(|i| targets.contains(i)).count();
            let recall = hits as f64 / targets.len() as f64;
            let mut dcg = 0.0;
            for (pos, item) in ranked.iter().take(k).enumerate() {
                if targets.contains(item) {
                    dcg += 1.0 / ((pos + 2) as f64).log2();
                }
            }
            let mut idcg = 0.0;
            for pos in 0..k.min(targets.len()) {
                idcg += 1.0 / ((pos + 2) as f64).log2();
            }
            let ndcg = dcg / idcg;
            recall_sum[slot] += recall;
            ndcg_sum[slot] += ndcg;
            metrics.recall.push(recall);
            metrics.ndcg.push(ndcg);
        }
        per_user.push(metrics);
    }
    let inv = 1.0 / per_user.len() as f64;
    (
        per_user,
        recall_sum.iter().map(|s| s * inv).collect(),
        ndcg_sum.iter().map(|s| s * inv).collect(),
    )
}
