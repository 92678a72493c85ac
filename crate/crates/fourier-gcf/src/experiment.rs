//! Experiment orchestration: data acquisition, training with validation
//! checkpointing, test evaluation, grid search, and report emission.
//!
//! Reports exist in two forms with one schema version: a human-readable
//! table (metrics at 4 decimals) and a machine-readable TSV whose floats
//! round-trip exactly. Wall time is kept on the in-memory report only, so
//! identical config + seed produces byte-identical files.

use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::data::{self, FormatDescriptor, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{chronological_split, evaluate_ranking, EvalTarget, SplitRatios};
use crate::graph::{build_normalized_adjacency, InteractionGraph};
use crate::model::{GcfModel, ModelConfig, ModelVariant};
use crate::rng;
use crate::tape::ParamStore;
use crate::train::{train_epoch, AdamState, TrainConfig};

const SEED_MODEL: u64 = 10;
const SEED_DATA: u64 = 20;

/// Model selection happens on validation Recall at this cutoff.
pub const SELECT_K: usize = 20;

pub const REPORT_SCHEMA: &str = "# fourier-gcf report v1";
pub const GRID_SCHEMA: &str = "# fourier-gcf grid v1";

/// Hyperparameter values admitted in grid mode.
pub const SWEEP_L2: [f64; 5] = [0.0, 0.01, 0.1, 1.0, 10.0];
pub const SWEEP_LAYERS: [usize; 4] = [1, 2, 3, 4];
pub const SWEEP_GRID_SIZES: [usize; 4] = [1, 2, 4, 8];
pub const SWEEP_DROPOUT: [f64; 4] = [0.0, 0.1, 0.2, 0.3];

#[derive(Debug, Clone)]
pub enum DataSource {
    Dataset {
        path: PathBuf,
        format: FormatDescriptor,
    },
    Synthetic(SyntheticSpec),
}

impl DataSource {
    fn echo(&self) -> String {
        match self {
            DataSource::Dataset { path, .. } => format!("dataset {}", path.display()),
            DataSource::Synthetic(spec) => format!("synthetic {spec}"),
        }
    }
}

/// Dropout ablations: force one dropout rate to zero, leaving the rest of
/// the configuration (or grid) untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    None,
    NoMessageDropout,
    NoNodeDropout,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoMessageDropout => "no-md",
            Ablation::NoNodeDropout => "no-nd",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "no-md" => Ok(Ablation::NoMessageDropout),
            "no-nd" => Ok(Ablation::NoNodeDropout),
            other => Err(Error::contract(format!(
                "unknown ablation {other:?}; expected none, no-md or no-nd"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitRatios,
    /// Cutoffs for the test metric table.
    pub ks: Vec<usize>,
    pub ablation: Ablation,
}

impl ExperimentConfig {
    pub fn new(source: DataSource) -> Self {
        ExperimentConfig {
            source,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: SplitRatios::default(),
            ks: vec![10, 20, 50],
            ablation: Ablation::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.ks.is_empty() {
            return Err(Error::contract("at least one top-k cutoff is required"));
        }
        if self.ks.iter().any(|&k| k == 0) {
            return Err(Error::contract("top-k cutoffs must be positive"));
        }
        Ok(())
    }

    fn echo_lines(&self) -> Vec<(String, String)> {
        let (m, t) = (&self.model, &self.train);
        let sg = m.spline_grid;
        let pairs: Vec<(&str, String)> = vec![
            ("source", self.source.echo()),
            ("model", m.variant.to_string()),
            ("dim", m.dim.to_string()),
            ("layers", m.layers.to_string()),
            ("grid-size", m.fourier_grid.to_string()),
            (
                "spline-grid",
                format!("G={},k={},range=[{},{}]", sg.intervals, sg.degree, sg.min, sg.max),
            ),
            ("activation", m.activation.name().to_string()),
            ("shared-transforms", m.shared_transforms.to_string()),
            ("lr", t.lr.to_string()),
            ("batch-size", t.batch_size.to_string()),
            ("l2", t.l2.to_string()),
            ("msg-dropout", t.msg_dropout.to_string()),
            ("node-dropout", t.node_dropout.to_string()),
            ("epochs", t.epochs.to_string()),
            ("seed", t.seed.to_string()),
            (
                "split",
                format!("train={},val={}", self.split.train, self.split.val),
            ),
            (
                "topk",
                self.ks
                    .iter()
                    .map(|k| k.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("ablation", self.ablation.name().to_string()),
        ];
        pairs
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// Validation Recall@SELECT_K after this epoch.
    pub val_recall: f64,
    pub val_ndcg: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: Vec<(String, String)>,
    pub epochs: Vec<EpochRow>,
    /// 1-based epoch whose checkpoint produced the test metrics.
    pub best_epoch: usize,
    pub best_val_recall: f64,
    pub ks: Vec<usize>,
    pub test_recall: Vec<f64>,
    pub test_ndcg: Vec<f64>,
    pub users_evaluated: usize,
    pub seed: u64,
    /// Console-only; excluded from emitted files to keep them reproducible.
    pub wall_secs: f64,
}

/// Full experiment: acquire data, split chronologically, train with per-epoch
/// validation, restore the best checkpoint, and score the test split.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let seed = cfg.train.seed;
    let ds = match &cfg.source {
        DataSource::Dataset { path, format } => data::load_path(path, format)?,
        DataSource::Synthetic(spec) => data::generate_synthetic(spec, rng::mix(seed, &[SEED_DATA]))?,
    };
    let (train_e, val_e, test_e) = chronological_split(&ds.interactions, cfg.split)?;
    if val_e.is_empty() {
        return Err(Error::contract(
            "validation split is empty; enlarge the dataset or the val ratio",
        ));
    }
    let train_graph = InteractionGraph::new(ds.num_users, ds.num_items, train_e.clone())?;
    let adj = build_normalized_adjacency(&train_graph)?;
    let mut train_cfg = cfg.train.clone();
    match cfg.ablation {
        Ablation::NoMessageDropout => train_cfg.msg_dropout = 0.0,
        Ablation::NoNodeDropout => train_cfg.node_dropout = 0.0,
        Ablation::None => {}
    }
    let mut store = ParamStore::new();
    let model = GcfModel::init(
        ds.num_users,
        ds.num_items,
        &cfg.model,
        rng::mix(seed, &[SEED_MODEL]),
        &mut store,
    )?;
    let mut adam = AdamState::new(&store, train_cfg.lr)?;
    let mut epochs = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 0..train_cfg.epochs {
        let stats = train_epoch(&model, &mut store, &mut adam, &adj, &train_graph, &train_cfg, epoch)?;
        let state = model.embeddings(&store, &adj)?;
        let v = evaluate_ranking(&state, &train_e, &val_e, &test_e, EvalTarget::Validation, &[SELECT_K])?;
        let (vr, vn) = (v.recall[0], v.ndcg[0]);
        log::info!(
            "epoch {:>3}: loss {:.4}, grad norm {:.4}, val recall@{SELECT_K} {:.4}",
            epoch + 1,
            stats.mean_loss,
            stats.grad_norm,
            vr
        );
        epochs.push(EpochRow {
            epoch: epoch + 1,
            loss: stats.mean_loss,
            grad_norm: stats.grad_norm,
            val_recall: vr,
            val_ndcg: vn,
        });
        if best.as_ref().map_or(true, |&(b, _, _)| vr > b) {
            best = Some((vr, epoch + 1, store.clone()));
        }
    }
    let (best_val_recall, best_epoch, best_store) = best.expect("at least one epoch ran");
    let state = model.embeddings(&best_store, &adj)?;
    let t = evaluate_ranking(&state, &train_e, &val_e, &test_e, EvalTarget::Test, &cfg.ks)?;
    Ok(RunReport {
        config: cfg.echo_lines(),
        epochs,
        best_epoch,
        best_val_recall,
        ks: t.ks,
        test_recall: t.recall,
        test_ndcg: t.ndcg,
        users_evaluated: t.users_evaluated,
        seed,
        wall_secs: started.elapsed().as_secs_f64(),
    })
}

fn check_report(report: &RunReport) -> Result<()> {
    if report.ks.is_empty()
        || report.ks.len() != report.test_recall.len()
        || report.ks.len() != report.test_ndcg.len()
    {
        return Err(Error::contract(
            "report needs one recall and ndcg value per configured k",
        ));
    }
    Ok(())
}

/// Aligned table with 4-decimal metrics.
pub fn format_human(report: &RunReport) -> Result<String> {
    check_report(report)?;
    let mut out = String::new();
    out.push_str("fourier-gcf run report (schema v1)\n\nconfig:\n");
    for (k, v) in &report.config {
        out.push_str(&format!("  {k} = {v}\n"));
    }
    out.push_str(&format!(
        "\nepochs (validation at k={SELECT_K}):\n  {:>5}  {:>10}  {:>10}  {:>10}  {:>10}\n",
        "epoch", "loss", "grad_norm", "recall", "ndcg"
    ));
    for e in &report.epochs {
        out.push_str(&format!(
            "  {:>5}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}\n",
            e.epoch, e.loss, e.grad_norm, e.val_recall, e.val_ndcg
        ));
    }
    out.push_str(&format!(
        "\nbest epoch: {} (validation recall@{SELECT_K} = {:.4})\n",
        report.best_epoch, report.best_val_recall
    ));
    out.push_str(&format!(
        "\ntest metrics at the best checkpoint ({} users evaluated):\n  {:>5}  {:>10}  {:>10}\n",
        report.users_evaluated, "k", "recall", "ndcg"
    ));
    for (i, &k) in report.ks.iter().enumerate() {
        out.push_str(&format!(
            "  {:>5}  {:>10.4}  {:>10.4}\n",
            k, report.test_recall[i], report.test_ndcg[i]
        ));
    }
    out.push_str(&format!("\nseed: {}\n", report.seed));
    Ok(out)
}

/// Tab-separated rows with exact (round-trippable) floats.
pub fn format_machine(report: &RunReport) -> Result<String> {
    check_report(report)?;
    let mut out = String::new();
    out.push_str(REPORT_SCHEMA);
    out.push('\n');
    for (k, v) in &report.config {
        out.push_str(&format!("config\t{k}\t{v}\n"));
    }
    for e in &report.epochs {
        out.push_str(&format!(
            "epoch\t{}\t{}\t{}\t{}\t{}\n",
            e.epoch, e.loss, e.grad_norm, e.val_recall, e.val_ndcg
        ));
    }
    out.push_str(&format!("best_epoch\t{}\n", report.best_epoch));
    out.push_str(&format!("best_val_recall\t{}\n", report.best_val_recall));
    for (i, &k) in report.ks.iter().enumerate() {
        out.push_str(&format!(
            "test\t{}\t{}\t{}\n",
            k, report.test_recall[i], report.test_ndcg[i]
        ));
    }
    out.push_str(&format!("users_evaluated\t{}\n", report.users_evaluated));
    out.push_str(&format!("seed\t{}\n", report.seed));
    Ok(out)
}

/// Writes report.txt (human) and report.tsv (machine) under `dir`.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let human = format_human(report)?;
    let machine = format_machine(report)?;
    std::fs::create_dir_all(dir)?;
    let txt = dir.join("report.txt");
    let tsv = dir.join("report.tsv");
    std::fs::write(&txt, human)?;
    std::fs::write(&tsv, machine)?;
    Ok((txt, tsv))
}

/// A machine report read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReport {
    pub config: Vec<(String, String)>,
    pub epochs: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_val_recall: f64,
    pub test: Vec<(usize, f64, f64)>,
    pub users_evaluated: usize,
    pub seed: u64,
}

fn parse_field<T: FromStr>(parts: &[&str], at: usize, what: &str) -> Result<T> {
    parts
        .get(at)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::contract(format!("bad {what} field in report row {parts:?}")))
}

pub fn parse_machine<R: BufRead>(reader: R) -> Result<ParsedReport> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::contract("empty report file"))?;
    if header != REPORT_SCHEMA {
        return Err(Error::contract(format!(
            "unsupported report schema {header:?}; expected {REPORT_SCHEMA:?}"
        )));
    }
    let mut config = Vec::new();
    let mut epochs = Vec::new();
    let mut best_epoch = None;
    let mut best_val_recall = None;
    let mut test = Vec::new();
    let mut users_evaluated = None;
    let mut seed = None;
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        match parts[0] {
            "config" => {
                if parts.len() != 3 {
                    return Err(Error::contract(format!("bad config row {line:?}")));
                }
                config.push((parts[1].to_string(), parts[2].to_string()));
            }
            "epoch" => epochs.push(EpochRow {
                epoch: parse_field(&parts, 1, "epoch")?,
                loss: parse_field(&parts, 2, "loss")?,
                grad_norm: parse_field(&parts, 3, "grad_norm")?,
                val_recall: parse_field(&parts, 4, "val_recall")?,
                val_ndcg: parse_field(&parts, 5, "val_ndcg")?,
            }),
            "best_epoch" => best_epoch = Some(parse_field(&parts, 1, "best_epoch")?),
            "best_val_recall" => {
                best_val_recall = Some(parse_field(&parts, 1, "best_val_recall")?)
            }
            "test" => test.push((
                parse_field(&parts, 1, "k")?,
                parse_field(&parts, 2, "recall")?,
                parse_field(&parts, 3, "ndcg")?,
            )),
            "users_evaluated" => users_evaluated = Some(parse_field(&parts, 1, "users_evaluated")?),
            "seed" => seed = Some(parse_field(&parts, 1, "seed")?),
            other => {
                return Err(Error::contract(format!("unknown report row tag {other:?}")))
            }
        }
    }
    if test.is_empty() {
        return Err(Error::contract("report carries no test metrics"));
    }
    Ok(ParsedReport {
        config,
        epochs,
        best_epoch: best_epoch.ok_or_else(|| Error::contract("report lacks best_epoch"))?,
        best_val_recall: best_val_recall
            .ok_or_else(|| Error::contract("report lacks best_val_recall"))?,
        test,
        users_evaluated: users_evaluated
            .ok_or_else(|| Error::contract("report lacks users_evaluated"))?,
        seed: seed.ok_or_else(|| Error::contract("report lacks seed"))?,
    })
}

/// Grid-mode hyperparameter surface. Every axis must be a non-empty subset
/// of the corresponding sweep set.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub l2: Vec<f64>,
    pub layers: Vec<usize>,
    pub grid_size: Vec<usize>,
    pub msg_dropout: Vec<f64>,
    pub node_dropout: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            l2: SWEEP_L2.to_vec(),
            layers: SWEEP_LAYERS.to_vec(),
            grid_size: SWEEP_GRID_SIZES.to_vec(),
            msg_dropout: SWEEP_DROPOUT.to_vec(),
            node_dropout: SWEEP_DROPOUT.to_vec(),
        }
    }
}

fn check_axis<T: PartialEq + std::fmt::Debug>(
    name: &str,
    values: &[T],
    allowed: &[T],
) -> Result<()> {
    if values.is_empty() {
        return Err(Error::contract(format!("grid axis {name} is empty")));
    }
    for (i, v) in values.iter().enumerate() {
        if !allowed.contains(v) {
            return Err(Error::contract(format!(
                "grid {name} value {v:?} is outside the allowed set {allowed:?}"
            )));
        }
        if values[..i].contains(v) {
            return Err(Error::contract(format!(
                "grid {name} value {v:?} is listed twice"
            )));
        }
    }
    Ok(())
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        check_axis("l2", &self.l2, &SWEEP_L2)?;
        check_axis("layers", &self.layers, &SWEEP_LAYERS)?;
        check_axis("grid-size", &self.grid_size, &SWEEP_GRID_SIZES)?;
        check_axis("msg-dropout", &self.msg_dropout, &SWEEP_DROPOUT)?;
        check_axis("node-dropout", &self.node_dropout, &SWEEP_DROPOUT)?;
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.l2.len()
            * self.layers.len()
            * self.grid_size.len()
            * self.msg_dropout.len()
            * self.node_dropout.len()
    }
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub index: usize,
    pub l2: f64,
    pub layers: usize,
    pub grid_size: usize,
    pub msg_dropout: f64,
    pub node_dropout: f64,
    /// Best-epoch validation Recall@SELECT_K of this cell.
    pub val_recall: f64,
    pub ks: Vec<usize>,
    pub test_recall: Vec<f64>,
    pub test_ndcg: Vec<f64>,
}

#[derive(Debug)]
pub struct GridSearchOutcome {
    pub rows: Vec<GridRow>,
    pub best_index: usize,
    pub best: RunReport,
}

/// Enumerates the Cartesian product in fixed nesting order (l2, layers,
/// grid-size, msg-dropout, node-dropout; innermost fastest), runs every cell
/// with the same seed, and keeps the first cell achieving the highest
/// validation Recall@SELECT_K.
pub fn grid_search(cfg: &ExperimentConfig, spec: &GridSpec) -> Result<GridSearchOutcome> {
    let mut spec = spec.clone();
    match cfg.ablation {
        Ablation::NoMessageDropout => spec.msg_dropout = vec![0.0],
        Ablation::NoNodeDropout => spec.node_dropout = vec![0.0],
        Ablation::None => {}
    }
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.cells());
    let mut best: Option<(usize, RunReport)> = None;
    let mut index = 0;
    for &l2 in &spec.l2 {
        for &layers in &spec.layers {
            for &grid_size in &spec.grid_size {
                for &msg_dropout in &spec.msg_dropout {
                    for &node_dropout in &spec.node_dropout {
                        let mut cell = cfg.clone();
                        cell.train.l2 = l2;
                        cell.model.layers = layers;
                        cell.model.fourier_grid = grid_size;
                        if cell.model.variant == ModelVariant::KanGcf {
                            // Spline G shares the grid-size axis.
                            cell.model.spline_grid.intervals = grid_size;
                        }
                        cell.train.msg_dropout = msg_dropout;
                        cell.train.node_dropout = node_dropout;
                        let report = run(&cell)?;
                        log::info!(
                            "grid cell {index}: l2={l2} L={layers} g={grid_size} p_m={msg_dropout} p_n={node_dropout} -> val recall@{SELECT_K} {:.4}",
                            report.best_val_recall
                        );
                        if best
                            .as_ref()
                            .map_or(true, |(_, b)| report.best_val_recall > b.best_val_recall)
                        {
                            best = Some((index, report.clone()));
                        }
                        rows.push(GridRow {
                            index,
                            l2,
                            layers,
                            grid_size,
                            msg_dropout,
                            node_dropout,
                            val_recall: report.best_val_recall,
                            ks: report.ks,
                            test_recall: report.test_recall,
                            test_ndcg: report.test_ndcg,
                        });
                        index += 1;
                    }
                }
            }
        }
    }
    let (best_index, best) = best.expect("grid axes validated non-empty");
    Ok(GridSearchOutcome {
        rows,
        best_index,
        best,
    })
}

/// Long-form grid table: one TSV row per cell, floats exact.
pub fn format_grid(outcome: &GridSearchOutcome) -> Result<String> {
    if outcome.rows.is_empty() {
        return Err(Error::contract("grid outcome holds no rows"));
    }
    let ks = &outcome.rows[0].ks;
    let mut out = String::new();
    out.push_str(GRID_SCHEMA);
    out.push('\n');
    let per_k: Vec<String> = ks
        .iter()
        .map(|k| format!("test_recall@{k}\ttest_ndcg@{k}"))
        .collect();
    out.push_str(&format!(
        "# columns: index\tl2\tlayers\tgrid_size\tmsg_dropout\tnode_dropout\tval_recall@{SELECT_K}\t{}\n",
        per_k.join("\t")
    ));
    for row in &outcome.rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            row.index, row.l2, row.layers, row.grid_size, row.msg_dropout, row.node_dropout,
            row.val_recall
        ));
        for i in 0..row.ks.len() {
            out.push_str(&format!("\t{}\t{}", row.test_recall[i], row.test_ndcg[i]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Writes grid.tsv plus the best cell's report files under `dir`.
pub fn emit_grid(outcome: &GridSearchOutcome, dir: &Path) -> Result<PathBuf> {
    let table = format_grid(outcome)?;
    std::fs::create_dir_all(dir)?;
    let path = dir.join("grid.tsv");
    std::fs::write(&path, table)?;
    emit_report(&outcome.best, dir)?;
    Ok(path)
}
