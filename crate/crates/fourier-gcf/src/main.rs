//! Command-line experiment driver.
//!
//! Settings resolve in three layers: built-in defaults, then the --config
//! file (flat `key = value` lines), then command-line flags. Exit codes:
//! 0 success, 2 usage/config error, 1 runtime failure.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use fourier_gcf::data::{FormatDescriptor, SyntheticSpec};
use fourier_gcf::error::{Error, Result};
use fourier_gcf::experiment::{
    emit_grid, emit_report, format_grid, format_human, grid_search, run, DataSource,
    ExperimentConfig, GridSpec,
};
use fourier_gcf::model::ModelVariant;

#[derive(Parser, Debug)]
#[command(
    name = "fourier-gcf",
    version,
    about = "Graph collaborative filtering with Fourier KAN message transforms"
)]
struct Cli {
    /// Flat `key = value` settings file; flags override its entries.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Interaction log: user, item, timestamp columns, one record per line.
    #[arg(long, value_name = "PATH", conflicts_with = "synthetic")]
    dataset: Option<PathBuf>,

    /// Synthetic block dataset spec, e.g.
    /// "users=200,items=100,blocks=4,edges-per-user=10,noise=0.1".
    /// Used by default (with those values) when --dataset is absent.
    #[arg(long, value_name = "SPEC")]
    synthetic: Option<String>,

    /// Dataset column separator: "tab", "comma", or a single character.
    #[arg(long, value_name = "CHAR")]
    delimiter: Option<String>,

    /// Skip the first non-comment dataset line.
    #[arg(long)]
    header: bool,

    /// Model variant: ngcf, ngcf-f1, ngcf-f2, ngcf-i, ngcf-n, lightgcn,
    /// kan-gcf, or fourierkan-gcf.
    #[arg(long)]
    model: Option<String>,

    /// Embedding dimension d.
    #[arg(long)]
    dim: Option<String>,

    /// Propagation depth L; a comma list with --grid.
    #[arg(long)]
    layers: Option<String>,

    /// Fourier grid size g (the spline G follows it for kan-gcf); a comma
    /// list with --grid.
    #[arg(long = "grid-size")]
    grid_size: Option<String>,

    /// Message dropout rate p_m; a comma list with --grid.
    #[arg(long = "msg-dropout")]
    msg_dropout: Option<String>,

    /// Node dropout rate p_n; a comma list with --grid.
    #[arg(long = "node-dropout")]
    node_dropout: Option<String>,

    /// L2 regularization strength; a comma list with --grid.
    #[arg(long)]
    l2: Option<String>,

    /// Adam learning rate.
    #[arg(long)]
    lr: Option<String>,

    #[arg(long)]
    epochs: Option<String>,

    #[arg(long = "batch-size")]
    batch_size: Option<String>,

    #[arg(long)]
    seed: Option<String>,

    /// Metric cutoffs for the test table, e.g. 10,20,50.
    #[arg(long)]
    topk: Option<String>,

    /// Post-layer nonlinearity: leaky-relu, sigmoid, or identity.
    #[arg(long)]
    activation: Option<String>,

    /// Reuse one transform across layers.
    #[arg(long = "shared-transforms")]
    shared_transforms: bool,

    /// Grid mode: sweep the built-in hyperparameter grids, restricted by
    /// any comma lists given for the grid axes.
    #[arg(long)]
    grid: bool,

    /// Dropout ablation: none, no-md, or no-nd.
    #[arg(long)]
    ablation: Option<String>,

    /// Directory for report.txt / report.tsv (and grid.tsv in grid mode).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

const KNOWN_KEYS: [&str; 23] = [
    "dataset",
    "synthetic",
    "delimiter",
    "header",
    "model",
    "dim",
    "layers",
    "grid-size",
    "msg-dropout",
    "node-dropout",
    "l2",
    "lr",
    "epochs",
    "batch-size",
    "seed",
    "topk",
    "activation",
    "shared-transforms",
    "grid",
    "ablation",
    "out",
    "split-train",
    "split-val",
];

/// Folds the config file (if any) and the flags into one string map, flags
/// winning.
fn settings_from(cli: &Cli) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let mut put = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            map.insert(key.to_string(), v);
        }
    };
    put("dataset", cli.dataset.as_ref().map(|p| p.display().to_string()));
    put("synthetic", cli.synthetic.clone());
    put("delimiter", cli.delimiter.clone());
    put("model", cli.model.clone());
    put("dim", cli.dim.clone());
    put("layers", cli.layers.clone());
    put("grid-size", cli.grid_size.clone());
    put("msg-dropout", cli.msg_dropout.clone());
    put("node-dropout", cli.node_dropout.clone());
    put("l2", cli.l2.clone());
    put("lr", cli.lr.clone());
    put("epochs", cli.epochs.clone());
    put("batch-size", cli.batch_size.clone());
    put("seed", cli.seed.clone());
    put("topk", cli.topk.clone());
    put("activation", cli.activation.clone());
    put("ablation", cli.ablation.clone());
    put("out", cli.out.as_ref().map(|p| p.display().to_string()));
    if cli.header {
        map.insert("header".to_string(), "true".to_string());
    }
    if cli.shared_transforms {
        map.insert("shared-transforms".to_string(), "true".to_string());
    }
    if cli.grid {
        map.insert("grid".to_string(), "true".to_string());
    }
    Ok(map)
}

fn parse_one<T: std::str::FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::contract(format!("bad value {value:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_one(s, key))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::contract(format!("no values given for {key}")));
    }
    Ok(items)
}

struct Resolved {
    cfg: ExperimentConfig,
    grid: Option<GridSpec>,
    out: Option<PathBuf>,
}

fn resolve(map: BTreeMap<String, String>) -> Result<Resolved> {
    for key in map.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::contract(format!("unknown setting {key:?}")));
        }
    }
    let mut format = FormatDescriptor::default();
    if let Some(d) = map.get("delimiter") {
        format.delimiter = match d.as_str() {
            "tab" | "\\t" => '\t',
            "comma" => ',',
            s if s.chars().count() == 1 => s.chars().next().unwrap(),
            other => {
                return Err(Error::contract(format!(
                    "delimiter must be tab, comma, or one character, got {other:?}"
                )))
            }
        };
    }
    if let Some(h) = map.get("header") {
        format.has_header = parse_one(h, "header")?;
    }
    let source = match (map.get("dataset"), map.get("synthetic")) {
        (Some(_), Some(_)) => {
            return Err(Error::contract(
                "choose either a dataset file or a synthetic spec, not both",
            ))
        }
        (Some(p), None) => DataSource::Dataset {
            path: PathBuf::from(p),
            format,
        },
        (None, Some(s)) => DataSource::Synthetic(s.parse()?),
        (None, None) => DataSource::Synthetic(SyntheticSpec::default()),
    };
    let mut cfg = ExperimentConfig::new(source);
    if let Some(v) = map.get("model") {
        cfg.model.variant = v.parse()?;
    }
    if let Some(v) = map.get("dim") {
        cfg.model.dim = parse_one(v, "dim")?;
    }
    if let Some(v) = map.get("activation") {
        cfg.model.activation = v.parse()?;
    }
    if let Some(v) = map.get("shared-transforms") {
        cfg.model.shared_transforms = parse_one(v, "shared-transforms")?;
    }
    if let Some(v) = map.get("lr") {
        cfg.train.lr = parse_one(v, "lr")?;
    }
    if let Some(v) = map.get("epochs") {
        cfg.train.epochs = parse_one(v, "epochs")?;
    }
    if let Some(v) = map.get("batch-size") {
        cfg.train.batch_size = parse_one(v, "batch-size")?;
    }
    if let Some(v) = map.get("seed") {
        cfg.train.seed = parse_one(v, "seed")?;
    }
    if let Some(v) = map.get("topk") {
        cfg.ks = parse_list(v, "topk")?;
    }
    if let Some(v) = map.get("ablation") {
        cfg.ablation = v.parse()?;
    }
    if let Some(v) = map.get("split-train") {
        cfg.split.train = parse_one(v, "split-train")?;
    }
    if let Some(v) = map.get("split-val") {
        cfg.split.val = parse_one(v, "split-val")?;
    }
    let grid_mode = match map.get("grid") {
        Some(v) => parse_one(v, "grid")?,
        None => false,
    };
    let grid = if grid_mode {
        let mut spec = GridSpec::default();
        if let Some(v) = map.get("l2") {
            spec.l2 = parse_list(v, "l2")?;
        }
        if let Some(v) = map.get("layers") {
            spec.layers = parse_list(v, "layers")?;
        }
        if let Some(v) = map.get("grid-size") {
            spec.grid_size = parse_list(v, "grid-size")?;
        }
        if let Some(v) = map.get("msg-dropout") {
            spec.msg_dropout = parse_list(v, "msg-dropout")?;
        }
        if let Some(v) = map.get("node-dropout") {
            spec.node_dropout = parse_list(v, "node-dropout")?;
        }
        spec.validate()?;
        Some(spec)
    } else {
        let single = |key: &str| -> Result<Option<&String>> {
            match map.get(key) {
                Some(v) if v.contains(',') => Err(Error::contract(format!(
                    "{key} takes one value without --grid, got list {v:?}"
                ))),
                other => Ok(other),
            }
        };
        if let Some(v) = single("l2")? {
            cfg.train.l2 = parse_one(v, "l2")?;
        }
        if let Some(v) = single("layers")? {
            cfg.model.layers = parse_one(v, "layers")?;
        }
        if let Some(v) = single("grid-size")? {
            cfg.model.fourier_grid = parse_one(v, "grid-size")?;
        }
        if let Some(v) = single("msg-dropout")? {
            cfg.train.msg_dropout = parse_one(v, "msg-dropout")?;
        }
        if let Some(v) = single("node-dropout")? {
            cfg.train.node_dropout = parse_one(v, "node-dropout")?;
        }
        None
    };
    if cfg.model.variant == ModelVariant::KanGcf {
        // The spline interval count shares the grid-size axis.
        cfg.model.spline_grid.intervals = cfg.model.fourier_grid;
    }
    cfg.validate()?;
    Ok(Resolved {
        cfg,
        grid,
        out: map.get("out").map(PathBuf::from),
    })
}

fn execute(resolved: Resolved) -> Result<()> {
    match resolved.grid {
        Some(spec) => {
            let outcome = grid_search(&resolved.cfg, &spec)?;
            match &resolved.out {
                Some(dir) => {
                    let path = emit_grid(&outcome, dir)?;
                    println!("wrote {} plus the best cell's report files", path.display());
                }
                None => print!("{}", format_grid(&outcome)?),
            }
            println!("best grid cell: {}", outcome.best_index);
            print!("{}", format_human(&outcome.best)?);
            println!("wall time (best cell): {:.1}s", outcome.best.wall_secs);
        }
        None => {
            let report = run(&resolved.cfg)?;
            print!("{}", format_human(&report)?);
            println!("wall time: {:.1}s", report.wall_secs);
            if let Some(dir) = &resolved.out {
                let (txt, tsv) = emit_report(&report, dir)?;
                println!("wrote {} and {}", txt.display(), tsv.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let resolved = match settings_from(&cli).and_then(resolve) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(resolved) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
