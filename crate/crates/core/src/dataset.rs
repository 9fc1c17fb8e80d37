//! On-disk dataset layout shared by the CLI and the FFI layer.
//!
//! A prepared directory holds:
//!
//! - `catalog.tsv`: the relation catalog in canonical form
//! - `entities.tsv`: `index  kind  namespace  name`, one entity per line in
//!   index order (`namespace` is the relation name for attributes, `-` otherwise)
//! - `train.tsv`, `valid.tsv`, `test.tsv`: triplet files
//! - `stats.tsv`: summary counts of the filtered graph

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{
    filter_min_interactions, leave_one_out_split, parse_triplet_file, write_triplet, DataSplit,
    EntityKind, GraphStats, HeldOut, Namespace, RelationCatalog, Triplet, UnifiedGraph, Vocabulary,
};

pub const DEFAULT_THRESHOLD: usize = 4;

pub const CATALOG_FILE: &str = "catalog.tsv";
pub const ENTITIES_FILE: &str = "entities.tsv";
pub const TRAIN_FILE: &str = "train.tsv";
pub const VALID_FILE: &str = "valid.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const STATS_FILE: &str = "stats.tsv";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::from(e).in_file(path))
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<RelationCatalog> {
    let path = path.as_ref();
    RelationCatalog::parse(&read(path)?).map_err(|e| e.in_file(path))
}

/// Reads a raw triplet file into a graph with a fresh vocabulary.
pub fn load_graph(triplets: impl AsRef<Path>, catalog: impl AsRef<Path>) -> Result<UnifiedGraph> {
    let catalog = load_catalog(catalog)?;
    let path = triplets.as_ref();
    let mut vocab = Vocabulary::new();
    let parsed = parse_triplet_file(&read(path)?, &catalog, &mut vocab).map_err(|e| e.in_file(path))?;
    UnifiedGraph::from_triplets(vocab, catalog, parsed).map_err(|e| e.in_file(path))
}

pub fn entities_text(vocab: &Vocabulary, catalog: &RelationCatalog) -> String {
    let mut out = String::new();
    for (id, e) in vocab.iter() {
        let ns = e.namespace.relation.map_or("-", |r| catalog.get(r).name.as_str());
        let _ = writeln!(out, "{}\t{}\t{}\t{}", id.0, e.kind(), ns, e.name);
    }
    out
}

pub fn parse_entities(text: &str, catalog: &RelationCatalog) -> Result<Vocabulary> {
    let mut vocab = Vocabulary::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse { line, message };
        let fields: Vec<&str> = raw.trim_end_matches('\r').split('\t').collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let index: usize = fields[0].parse().map_err(|_| bad(format!("bad index `{}`", fields[0])))?;
        if index != vocab.len() {
            return Err(bad(format!("index {index} out of order (expected {})", vocab.len())));
        }
        let kind = EntityKind::parse(fields[1]).ok_or_else(|| bad(format!("bad kind `{}`", fields[1])))?;
        let relation = match (kind, fields[2]) {
            (EntityKind::Attribute, name) => Some(
                catalog
                    .by_name(name)
                    .ok_or_else(|| Error::UnknownRelation { line, name: name.to_string() })?
                    .id,
            ),
            (_, "-") => None,
            (_, other) => return Err(bad(format!("namespace `{other}` on a non-attribute"))),
        };
        vocab
            .push(fields[3], Namespace { kind, relation })
            .map_err(|e| bad(e.to_string()))?;
    }
    vocab.freeze();
    Ok(vocab)
}

fn triplets_text(graph: &UnifiedGraph) -> Vec<u8> {
    let mut out = Vec::new();
    graph.write_triplets(&mut out).expect("writing to memory");
    out
}

fn heldout_text(split: &DataSplit, held: &BTreeMap<crate::graph::EntityId, HeldOut>) -> Vec<u8> {
    let g = &split.train;
    let r = g.catalog().interaction();
    let mut out = Vec::new();
    for (&user, h) in held {
        let t = Triplet {
            head: user,
            tail: h.item,
            relation: r,
            timestamp: Some(h.timestamp),
        };
        write_triplet(&mut out, g.vocab(), g.catalog(), &t).expect("writing to memory");
    }
    out
}

/// Writes a split in the prepared-directory layout.
pub fn write_split(split: &DataSplit, stats: &GraphStats, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
    let g = &split.train;
    write(&dir.join(CATALOG_FILE), g.catalog().to_text().as_bytes())?;
    write(&dir.join(ENTITIES_FILE), entities_text(g.vocab(), g.catalog()).as_bytes())?;
    write(&dir.join(TRAIN_FILE), &triplets_text(g))?;
    write(&dir.join(VALID_FILE), &heldout_text(split, &split.validation))?;
    write(&dir.join(TEST_FILE), &heldout_text(split, &split.test))?;
    write(&dir.join(STATS_FILE), stats.to_string().as_bytes())
}

fn load_heldout(path: &Path, graph: &UnifiedGraph) -> Result<BTreeMap<crate::graph::EntityId, HeldOut>> {
    let mut vocab = graph.vocab().clone();
    let triplets = parse_triplet_file(&read(path)?, graph.catalog(), &mut vocab).map_err(|e| e.in_file(path))?;
    let interaction = graph.catalog().interaction();
    let mut out = BTreeMap::new();
    for t in triplets {
        let err = |m: String| Error::Graph(m).in_file(path);
        if t.relation != interaction {
            return Err(err("held-out files may only contain interactions".into()));
        }
        let h = HeldOut {
            item: t.tail,
            timestamp: t.timestamp.expect("interaction timestamps are required"),
        };
        if out.insert(t.head, h).is_some() {
            return Err(err(format!("user `{}` held out twice", graph.vocab().name(t.head))));
        }
    }
    Ok(out)
}

/// Reads a prepared directory back into a split. The vocabulary is frozen, so
/// any entity missing from `entities.tsv` is an error.
pub fn load_split(dir: impl AsRef<Path>) -> Result<DataSplit> {
    let dir = dir.as_ref();
    let catalog = load_catalog(dir.join(CATALOG_FILE))?;
    let ent_path = dir.join(ENTITIES_FILE);
    let mut vocab = parse_entities(&read(&ent_path)?, &catalog).map_err(|e| e.in_file(&ent_path))?;
    let train_path = dir.join(TRAIN_FILE);
    let triplets = parse_triplet_file(&read(&train_path)?, &catalog, &mut vocab).map_err(|e| e.in_file(&train_path))?;
    let train = UnifiedGraph::from_triplets(vocab, catalog, triplets).map_err(|e| e.in_file(&train_path))?;
    let validation = load_heldout(&dir.join(VALID_FILE), &train)?;
    let test = load_heldout(&dir.join(TEST_FILE), &train)?;
    Ok(DataSplit {
        train,
        validation,
        test,
    })
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: DataSplit,
    /// Statistics of the filtered graph before holding anything out.
    pub stats: GraphStats,
}

/// Parse, filter, split.
pub fn prepare(triplets: impl AsRef<Path>, catalog: impl AsRef<Path>, threshold: usize) -> Result<Prepared> {
    let path = triplets.as_ref();
    let raw = load_graph(path, catalog)?;
    let filtered = filter_min_interactions(&raw, threshold).map_err(|e| e.in_file(path))?;
    let stats = filtered.stats();
    let split = leave_one_out_split(&filtered).map_err(|e| e.in_file(path))?;
    Ok(Prepared { split, stats })
}
