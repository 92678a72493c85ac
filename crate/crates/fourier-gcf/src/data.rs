//! Dataset loading, canonical serialization, statistics, and the synthetic
//! block-structured generator used for desk-scale experiments.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Interaction, InteractionGraph};
use crate::rng;

/// Shape of an interaction text file: one record per line, columns
/// user, item, timestamp (integer). Lines starting with '#' are ignored.
#[derive(Debug, Clone, Copy)]
pub struct FormatDescriptor {
    pub delimiter: char,
    pub has_header: bool,
}

impl Default for FormatDescriptor {
    fn default() -> Self {
        FormatDescriptor {
            delimiter: '\t',
            has_header: false,
        }
    }
}

/// Bijection between raw user/item keys and dense indices, in first
/// appearance order.
#[derive(Debug, Clone, Default)]
pub struct KeyMaps {
    users: Vec<String>,
    items: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
}

impl KeyMaps {
    pub fn intern_user(&mut self, key: &str) -> usize {
        match self.user_index.get(key) {
            Some(&i) => i,
            None => {
                self.users.push(key.to_string());
                self.user_index.insert(key.to_string(), self.users.len() - 1);
                self.users.len() - 1
            }
        }
    }

    pub fn intern_item(&mut self, key: &str) -> usize {
        match self.item_index.get(key) {
            Some(&i) => i,
            None => {
                self.items.push(key.to_string());
                self.item_index.insert(key.to_string(), self.items.len() - 1);
                self.items.len() - 1
            }
        }
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn user_key(&self, idx: usize) -> &str {
        &self.users[idx]
    }

    pub fn item_key(&self, idx: usize) -> &str {
        &self.items[idx]
    }

    pub fn user_id(&self, key: &str) -> Option<usize> {
        self.user_index.get(key).copied()
    }

    pub fn item_id(&self, key: &str) -> Option<usize> {
        self.item_index.get(key).copied()
    }
}

/// A loaded interaction log with dense indices. Duplicate (user, item) pairs
/// are preserved here; graph construction collapses them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub num_users: usize,
    pub num_items: usize,
    pub interactions: Vec<Interaction>,
    pub keys: KeyMaps,
}

impl Dataset {
    pub fn graph(&self) -> Result<InteractionGraph> {
        InteractionGraph::new(self.num_users, self.num_items, self.interactions.clone())
    }

    pub fn stats(&self) -> Result<DatasetStats> {
        compute_stats(self.num_users, self.num_items, self.interactions.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    /// 1 - interactions / (users * items).
    pub sparsity: f64,
}

impl DatasetStats {
    pub fn sparsity_percent(&self) -> f64 {
        self.sparsity * 100.0
    }
}

pub fn compute_stats(
    num_users: usize,
    num_items: usize,
    num_interactions: usize,
) -> Result<DatasetStats> {
    if num_users == 0 || num_items == 0 || num_interactions == 0 {
        return Err(Error::contract("stats of an empty interaction set"));
    }
    let cells = num_users as f64 * num_items as f64;
    Ok(DatasetStats {
        num_users,
        num_items,
        num_interactions,
        sparsity: 1.0 - num_interactions as f64 / cells,
    })
}

/// Parses an interaction log. Empty lines and '#' comments are skipped; the
/// first remaining line is dropped when the format declares a header. Parse
/// failures carry 1-based line numbers.
pub fn load_interactions<R: BufRead>(reader: R, fmt: &FormatDescriptor) -> Result<Dataset> {
    let mut keys = KeyMaps::default();
    let mut interactions = Vec::new();
    let mut header_pending = fmt.has_header;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let mut fields = text.split(fmt.delimiter).map(str::trim);
        let mut next = |what: &str| -> Result<&str> {
            match fields.next() {
                Some(f) if !f.is_empty() => Ok(f),
                _ => Err(Error::Parse {
                    line: lineno,
                    msg: format!("missing {what} column"),
                }),
            }
        };
        let user = next("user")?;
        let item = next("item")?;
        let ts = next("timestamp")?;
        let timestamp: i64 = ts.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad timestamp {ts:?}"),
        })?;
        let user = keys.intern_user(user);
        let item = keys.intern_item(item);
        interactions.push(Interaction {
            user,
            item,
            timestamp,
        });
    }
    if interactions.is_empty() {
        return Err(Error::contract("interaction file holds no records"));
    }
    Ok(Dataset {
        num_users: keys.num_users(),
        num_items: keys.num_items(),
        interactions,
        keys,
    })
}

pub fn load_path(path: &Path, fmt: &FormatDescriptor) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    load_interactions(BufReader::new(file), fmt)
}

/// Writes the canonical tab-separated form (original keys, one record per
/// line, dataset order). Loading the output reproduces the dense structure.
pub fn save_interactions<W: Write>(writer: &mut W, ds: &Dataset) -> Result<()> {
    for e in &ds.interactions {
        writeln!(
            writer,
            "{}\t{}\t{}",
            ds.keys.user_key(e.user),
            ds.keys.item_key(e.item),
            e.timestamp
        )?;
    }
    Ok(())
}

/// Block-diagonal synthetic interaction log. Users and items divide evenly
/// into `blocks` aligned groups; each user draws `edges_per_user` distinct
/// items from its own block, then each edge is rerouted to a uniformly
/// chosen out-of-block item with probability `noise`. Timestamps are the
/// positions of a global shuffle, so they are strictly increasing and unique.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub blocks: usize,
    pub edges_per_user: usize,
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            users: 200,
            items: 100,
            blocks: 4,
            edges_per_user: 10,
            noise: 0.1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 || self.blocks == 0 || self.edges_per_user == 0 {
            return Err(Error::contract(
                "synthetic spec needs positive users, items, blocks and edges-per-user",
            ));
        }
        if self.users % self.blocks != 0 || self.items % self.blocks != 0 {
            return Err(Error::contract(format!(
                "blocks={} must divide users={} and items={} evenly",
                self.blocks, self.users, self.items
            )));
        }
        if self.edges_per_user > self.items / self.blocks {
            return Err(Error::contract(format!(
                "edges-per-user={} exceeds the {} items per block",
                self.edges_per_user,
                self.items / self.blocks
            )));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::contract(format!(
                "noise must lie in [0, 1], got {}",
                self.noise
            )));
        }
        if self.noise > 0.0 && self.blocks < 2 {
            return Err(Error::contract(
                "cross-block noise needs at least two blocks",
            ));
        }
        Ok(())
    }
}

impl fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "users={},items={},blocks={},edges-per-user={},noise={}",
            self.users, self.items, self.blocks, self.edges_per_user, self.noise
        )
    }
}

impl FromStr for SyntheticSpec {
    type Err = Error;

    /// Comma-separated key=value pairs over the defaults, e.g.
    /// "users=200,items=100,blocks=4,edges-per-user=10,noise=0.1".
    fn from_str(s: &str) -> Result<Self> {
        let mut spec = SyntheticSpec::default();
        for pair in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                Error::contract(format!("synthetic spec entry {pair:?} is not key=value"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || Error::contract(format!("bad value {value:?} for synthetic {key}"));
            match key {
                "users" => spec.users = value.parse().map_err(|_| bad())?,
                "items" => spec.items = value.parse().map_err(|_| bad())?,
                "blocks" => spec.blocks = value.parse().map_err(|_| bad())?,
                "edges-per-user" => spec.edges_per_user = value.parse().map_err(|_| bad())?,
                "noise" => spec.noise = value.parse().map_err(|_| bad())?,
                other => {
                    return Err(Error::contract(format!(
                        "unknown synthetic spec key {other:?}"
                    )))
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let users_per_block = spec.users / spec.blocks;
    let items_per_block = spec.items / spec.blocks;
    let mut r = rng::seeded(seed);
    let mut edges = Vec::with_capacity(spec.users * spec.edges_per_user);
    for u in 0..spec.users {
        let base = (u / users_per_block) * items_per_block;
        let mut chosen: Vec<usize> = rand::seq::index::sample(&mut r, items_per_block, spec.edges_per_user)
            .into_iter()
            .map(|o| base + o)
            .collect();
        if spec.noise > 0.0 {
            for slot in 0..chosen.len() {
                if !r.random_bool(spec.noise) {
                    continue;
                }
                // Out-of-block items outnumber a user's edges whenever two or
                // more blocks exist, so a free target always exists.
                loop {
                    let cand = r.random_range(0..spec.items);
                    if (base..base + items_per_block).contains(&cand) || chosen.contains(&cand) {
                        continue;
                    }
                    chosen[slot] = cand;
                    break;
                }
            }
        }
        edges.extend(chosen.into_iter().map(|i| (u, i)));
    }
    edges.shuffle(&mut r);
    let mut keys = KeyMaps::default();
    for u in 0..spec.users {
        keys.intern_user(&u.to_string());
    }
    for i in 0..spec.items {
        keys.intern_item(&i.to_string());
    }
    Ok(Dataset {
        num_users: spec.users,
        num_items: spec.items,
        interactions: edges
            .into_iter()
            .enumerate()
            .map(|(t, (user, item))| Interaction {
                user,
                item,
                timestamp: t as i64,
            })
            .collect(),
        keys,
    })
}
