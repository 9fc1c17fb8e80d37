//! The unified graph: users, items and attributes joined by directed
//! knowledge/interaction relations and undirected item co-occurrence relations.
//!
//! Construction goes through [`UnifiedGraph::from_triplets`], which validates
//! kinds against the relation catalog and builds the lookup indexes. A finished
//! graph is immutable; filtering and splitting produce new graphs.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::Write;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct EntityId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct RelationId(pub u32);

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityKind {
    User,
    Item,
    Attribute,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::User => "user",
            EntityKind::Item => "item",
            EntityKind::Attribute => "attribute",
        }
    }

    pub(crate) fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "user" => Some(EntityKind::User),
            "item" => Some(EntityKind::Item),
            "attribute" | "attr" => Some(EntityKind::Attribute),
            _ => None,
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Directedness {
    Directed,
    Undirected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationDef {
    pub id: RelationId,
    pub name: String,
    pub directedness: Directedness,
    pub head_kind: EntityKind,
    pub tail_kind: EntityKind,
    pub is_interaction: bool,
}

impl RelationDef {
    pub fn is_directed(&self) -> bool {
        self.directedness == Directedness::Directed
    }
}

/// The set of relations a dataset uses, in file order.
///
/// Exactly one relation is the user→item interaction relation. Undirected
/// relations connect items to items only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationCatalog {
    relations: Vec<RelationDef>,
    by_name: HashMap<String, RelationId>,
    interaction: RelationId,
}

impl RelationCatalog {
    pub fn new(defs: Vec<RelationDef>) -> Result<Self> {
        let mut by_name = HashMap::new();
        let mut relations = Vec::with_capacity(defs.len());
        for (i, mut def) in defs.into_iter().enumerate() {
            def.id = RelationId(i as u32);
            if def.name.is_empty() || def.name.contains(char::is_whitespace) {
                return Err(Error::Catalog(format!("invalid relation name `{}`", def.name)));
            }
            if by_name.insert(def.name.clone(), def.id).is_some() {
                return Err(Error::Catalog(format!("duplicate relation `{}`", def.name)));
            }
            if def.directedness == Directedness::Undirected
                && (def.head_kind != EntityKind::Item || def.tail_kind != EntityKind::Item)
            {
                return Err(Error::Catalog(format!(
                    "undirected relation `{}` must connect item to item",
                    def.name
                )));
            }
            if def.is_interaction
                && (def.directedness != Directedness::Directed
                    || def.head_kind != EntityKind::User
                    || def.tail_kind != EntityKind::Item)
            {
                return Err(Error::Catalog(format!(
                    "interaction relation `{}` must be directed user -> item",
                    def.name
                )));
            }
            if !def.is_interaction
                && (def.head_kind == EntityKind::User || def.tail_kind == EntityKind::User)
            {
                return Err(Error::Catalog(format!(
                    "relation `{}`: only the interaction relation may involve users",
                    def.name
                )));
            }
            relations.push(def);
        }
        let interactions: Vec<_> = relations.iter().filter(|r| r.is_interaction).collect();
        if interactions.len() != 1 {
            return Err(Error::Catalog(format!(
                "expected exactly one interaction relation, found {}",
                interactions.len()
            )));
        }
        let interaction = interactions[0].id;
        Ok(RelationCatalog {
            relations,
            by_name,
            interaction,
        })
    }

    /// Parses the tab-separated catalog format:
    /// `name  directedness  head_kind  tail_kind  is_interaction`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut defs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 5 tab-separated fields, found {}", fields.len()),
                });
            }
            let directedness = match fields[1].to_ascii_lowercase().as_str() {
                "directed" => Directedness::Directed,
                "undirected" => Directedness::Undirected,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("bad directedness `{other}`"),
                    })
                }
            };
            let kind = |s: &str| {
                EntityKind::parse(s).ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("bad entity kind `{s}`"),
                })
            };
            let is_interaction = match fields[4].to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" => true,
                "false" | "0" | "no" => false,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("bad is_interaction flag `{other}`"),
                    })
                }
            };
            defs.push(RelationDef {
                id: RelationId(0),
                name: fields[0].to_string(),
                directedness,
                head_kind: kind(fields[2])?,
                tail_kind: kind(fields[3])?,
                is_interaction,
            });
        }
        Self::new(defs)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.relations {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.name,
                if r.is_directed() { "directed" } else { "undirected" },
                r.head_kind,
                r.tail_kind,
                r.is_interaction
            ));
        }
        out
    }

    /// SHA-256 of the canonical text form.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn get(&self, id: RelationId) -> &RelationDef {
        &self.relations[id.index()]
    }

    pub fn by_name(&self, name: &str) -> Option<&RelationDef> {
        self.by_name.get(name).map(|id| self.get(*id))
    }

    pub fn interaction(&self) -> RelationId {
        self.interaction
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelationDef> {
        self.relations.iter()
    }

    pub fn directed(&self) -> impl Iterator<Item = &RelationDef> {
        self.relations.iter().filter(|r| r.is_directed())
    }

    pub fn undirected(&self) -> impl Iterator<Item = &RelationDef> {
        self.relations.iter().filter(|r| !r.is_directed())
    }
}

/// Attribute entities are namespaced by the relation they were first seen in,
/// so the same string used as a category and as a maker yields two entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Namespace {
    pub kind: EntityKind,
    pub relation: Option<RelationId>,
}

impl Namespace {
    pub fn for_side(kind: EntityKind, relation: RelationId) -> Self {
        Namespace {
            kind,
            relation: (kind == EntityKind::Attribute).then_some(relation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub name: String,
    pub namespace: Namespace,
}

impl Entity {
    pub fn kind(&self) -> EntityKind {
        self.namespace.kind
    }
}

/// Dense entity vocabulary. Indices are contiguous from 0 across all kinds.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    entities: Vec<Entity>,
    index: HashMap<(Namespace, String), EntityId>,
    frozen: bool,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entity. Fails if it already exists.
    pub fn push(&mut self, name: &str, namespace: Namespace) -> Result<EntityId> {
        if name.is_empty() || name.contains(['\t', '\n', '\r']) {
            return Err(Error::Graph(format!("invalid entity name {name:?}")));
        }
        let key = (namespace, name.to_string());
        if self.index.contains_key(&key) {
            return Err(Error::Graph(format!("duplicate entity `{name}` ({})", namespace.kind)));
        }
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(Entity {
            name: name.to_string(),
            namespace,
        });
        self.index.insert(key, id);
        Ok(id)
    }

    /// Stops [`parse_triplet_file`] from adding entities.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn lookup(&self, name: &str, namespace: Namespace) -> Option<EntityId> {
        self.index.get(&(namespace, name.to_string())).copied()
    }

    fn resolve(&mut self, name: &str, namespace: Namespace, line: usize) -> Result<EntityId> {
        if let Some(id) = self.lookup(name, namespace) {
            return Ok(id);
        }
        if self.frozen {
            return Err(Error::UnknownEntity {
                line,
                name: name.to_string(),
            });
        }
        self.push(name, namespace).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, id: EntityId) -> &Entity {
        &self.entities[id.index()]
    }

    pub fn name(&self, id: EntityId) -> &str {
        &self.entities[id.index()].name
    }

    pub fn kind(&self, id: EntityId) -> EntityKind {
        self.entities[id.index()].kind()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityId, &Entity)> {
        self.entities
            .iter()
            .enumerate()
            .map(|(i, e)| (EntityId(i as u32), e))
    }

    pub fn ids_of_kind(&self, kind: EntityKind) -> Vec<EntityId> {
        self.iter()
            .filter(|(_, e)| e.kind() == kind)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn count_kind(&self, kind: EntityKind) -> usize {
        self.entities.iter().filter(|e| e.kind() == kind).count()
    }

    /// SHA-256 over `kind \t namespace \t name` per entity in index order.
    pub fn hash(&self, catalog: &RelationCatalog) -> [u8; 32] {
        let mut h = Sha256::new();
        for e in &self.entities {
            h.update(e.kind().as_str());
            h.update(b"\t");
            if let Some(r) = e.namespace.relation {
                h.update(catalog.get(r).name.as_bytes());
            }
            h.update(b"\t");
            h.update(e.name.as_bytes());
            h.update(b"\n");
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub head: EntityId,
    pub tail: EntityId,
    pub relation: RelationId,
    pub timestamp: Option<i64>,
}

impl Triplet {
    pub fn new(head: EntityId, tail: EntityId, relation: RelationId) -> Self {
        Triplet {
            head,
            tail,
            relation,
            timestamp: None,
        }
    }

    /// Lower index first; used for undirected relations.
    pub fn canonical(self) -> Self {
        if self.head <= self.tail {
            self
        } else {
            Triplet {
                head: self.tail,
                tail: self.head,
                ..self
            }
        }
    }

    fn key(&self) -> (u32, u32, u32) {
        (self.head.0, self.tail.0, self.relation.0)
    }
}

/// Parses the line-oriented triplet format, extending `vocab` with entities
/// seen for the first time (unless it is frozen).
///
/// Undirected triplets are canonicalized and deduplicated; repeated directed
/// triplets keep their first occurrence.
pub fn parse_triplet_file(
    source: &str,
    catalog: &RelationCatalog,
    vocab: &mut Vocabulary,
) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, raw) in source.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 or 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let rel = catalog
            .by_name(fields[2].trim())
            .ok_or_else(|| Error::UnknownRelation {
                line: line_no,
                name: fields[2].trim().to_string(),
            })?;
        let timestamp = match fields.get(3) {
            Some(ts) => {
                if !rel.is_interaction {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("timestamp given for non-interaction relation `{}`", rel.name),
                    });
                }
                Some(ts.trim().parse::<i64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad timestamp `{}`", ts.trim()),
                })?)
            }
            None if rel.is_interaction => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "interaction triplet without timestamp".into(),
                })
            }
            None => None,
        };
        let (h, t) = (fields[0].trim(), fields[1].trim());
        if !rel.is_directed() && h == t {
            return Err(Error::SelfLoop {
                line: line_no,
                entity: h.to_string(),
                relation: rel.name.clone(),
            });
        }
        let head = vocab.resolve(h, Namespace::for_side(rel.head_kind, rel.id), line_no)?;
        let tail = vocab.resolve(t, Namespace::for_side(rel.tail_kind, rel.id), line_no)?;
        let mut triplet = Triplet {
            head,
            tail,
            relation: rel.id,
            timestamp,
        };
        if !rel.is_directed() {
            triplet = triplet.canonical();
        }
        if seen.insert(triplet.key()) {
            out.push(triplet);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub item: EntityId,
    pub timestamp: i64,
}

/// An immutable unified graph with membership and per-user indexes.
#[derive(Debug, Clone)]
pub struct UnifiedGraph {
    vocab: Vocabulary,
    catalog: RelationCatalog,
    triplets: Vec<Vec<Triplet>>,
    /// Indexed by entity; empty for non-users. Sorted by (timestamp, item).
    interactions: Vec<Vec<Interaction>>,
    positives: HashSet<(u32, u32, u32)>,
    pools: HashMap<Namespace, Vec<EntityId>>,
}

impl UnifiedGraph {
    /// Validates every triplet against the vocabulary and catalog and builds indexes.
    pub fn from_triplets(
        vocab: Vocabulary,
        catalog: RelationCatalog,
        triplets: impl IntoIterator<Item = Triplet>,
    ) -> Result<Self> {
        let mut per_rel = vec![Vec::new(); catalog.len()];
        let mut positives = HashSet::new();
        let mut interactions = vec![Vec::new(); vocab.len()];
        for t in triplets {
            let rel = catalog
                .relations
                .get(t.relation.index())
                .ok_or_else(|| Error::Graph(format!("relation id {} out of range", t.relation.0)))?;
            for (side, id, kind) in [("head", t.head, rel.head_kind), ("tail", t.tail, rel.tail_kind)] {
                if id.index() >= vocab.len() {
                    return Err(Error::Graph(format!("{side} entity {} out of range", id.0)));
                }
                if vocab.kind(id) != kind {
                    return Err(Error::Graph(format!(
                        "`{}` is a {} but relation `{}` expects a {} {side}",
                        vocab.name(id),
                        vocab.kind(id),
                        rel.name,
                        kind
                    )));
                }
            }
            let t = if rel.is_directed() {
                t
            } else {
                if t.head == t.tail {
                    return Err(Error::Graph(format!(
                        "undirected self-loop on `{}`",
                        vocab.name(t.head)
                    )));
                }
                t.canonical()
            };
            if rel.is_interaction && t.timestamp.is_none() {
                return Err(Error::Graph("interaction triplet without timestamp".into()));
            }
            if !positives.insert(t.key()) {
                continue;
            }
            if rel.is_interaction {
                interactions[t.head.index()].push(Interaction {
                    item: t.tail,
                    timestamp: t.timestamp.unwrap_or_default(),
                });
            }
            per_rel[t.relation.index()].push(t);
        }
        for list in &mut interactions {
            list.sort_by_key(|i| (i.timestamp, i.item));
        }
        let mut pools: HashMap<Namespace, Vec<EntityId>> = HashMap::new();
        for (id, e) in vocab.iter() {
            pools.entry(e.namespace).or_default().push(id);
        }
        Ok(UnifiedGraph {
            vocab,
            catalog,
            triplets: per_rel,
            interactions,
            positives,
            pools,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn catalog(&self) -> &RelationCatalog {
        &self.catalog
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.len()
    }

    pub fn triplets(&self, r: RelationId) -> &[Triplet] {
        &self.triplets[r.index()]
    }

    pub fn all_triplets(&self) -> impl Iterator<Item = &Triplet> {
        self.triplets.iter().flatten()
    }

    pub fn num_triplets(&self) -> usize {
        self.triplets.iter().map(Vec::len).sum()
    }

    pub fn interaction_triplets(&self) -> &[Triplet] {
        self.triplets(self.catalog.interaction())
    }

    pub fn users(&self) -> Vec<EntityId> {
        self.vocab.ids_of_kind(EntityKind::User)
    }

    pub fn items(&self) -> Vec<EntityId> {
        self.vocab.ids_of_kind(EntityKind::Item)
    }

    /// Interactions of `user`, ascending by (timestamp, item index).
    pub fn user_interactions(&self, user: EntityId) -> &[Interaction] {
        &self.interactions[user.index()]
    }

    /// Membership test; symmetric for undirected relations.
    pub fn contains(&self, head: EntityId, tail: EntityId, r: RelationId) -> bool {
        let t = Triplet::new(head, tail, r);
        let t = if self.catalog.get(r).is_directed() {
            t
        } else {
            t.canonical()
        };
        self.positives.contains(&t.key())
    }

    /// All entities that may fill the tail slot of `r`.
    pub fn tail_pool(&self, r: RelationId) -> &[EntityId] {
        let rel = self.catalog.get(r);
        self.pools
            .get(&Namespace::for_side(rel.tail_kind, r))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Same vocabulary and catalog, new triplet set.
    pub fn with_triplets(&self, triplets: impl IntoIterator<Item = Triplet>) -> Result<Self> {
        Self::from_triplets(self.vocab.clone(), self.catalog.clone(), triplets)
    }

    /// Writes every triplet in the line format, relation by relation.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in self.all_triplets() {
            write_triplet(&mut w, &self.vocab, &self.catalog, t)?;
        }
        Ok(())
    }

    pub fn stats(&self) -> GraphStats {
        let n_users = self.vocab.count_kind(EntityKind::User);
        let n_items = self.vocab.count_kind(EntityKind::Item);
        let n_attributes = self.vocab.count_kind(EntityKind::Attribute);
        let n_interactions = self.interaction_triplets().len();
        let per_relation = self
            .catalog
            .iter()
            .map(|r| (r.name.clone(), self.triplets(r.id).len()))
            .collect();
        let cells = (n_users as f64) * (n_items as f64);
        GraphStats {
            n_users,
            n_items,
            n_attributes,
            n_interactions,
            per_relation,
            sparsity: if cells > 0.0 { 1.0 - n_interactions as f64 / cells } else { 1.0 },
        }
    }
}

pub(crate) fn write_triplet<W: Write>(
    w: &mut W,
    vocab: &Vocabulary,
    catalog: &RelationCatalog,
    t: &Triplet,
) -> std::io::Result<()> {
    let rel = catalog.get(t.relation);
    write!(w, "{}\t{}\t{}", vocab.name(t.head), vocab.name(t.tail), rel.name)?;
    match t.timestamp {
        Some(ts) => writeln!(w, "\t{ts}"),
        None => writeln!(w),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_attributes: usize,
    pub n_interactions: usize,
    pub per_relation: Vec<(String, usize)>,
    pub sparsity: f64,
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "users\t{}", self.n_users)?;
        writeln!(f, "items\t{}", self.n_items)?;
        writeln!(f, "attributes\t{}", self.n_attributes)?;
        writeln!(f, "interactions\t{}", self.n_interactions)?;
        for (name, n) in &self.per_relation {
            writeln!(f, "relation:{name}\t{n}")?;
        }
        writeln!(f, "sparsity\t{:.6}", self.sparsity)
    }
}

/// Keeps users and items with at least `threshold` interactions, repeating
/// until no more can be removed, then drops dangling triplets and recompacts
/// the vocabulary (relative order preserved).
pub fn filter_min_interactions(graph: &UnifiedGraph, threshold: usize) -> Result<UnifiedGraph> {
    if threshold == 0 {
        return Err(Error::Contract("filter threshold must be >= 1".into()));
    }
    let n = graph.num_entities();
    let inter = graph.interaction_triplets();
    let mut degree = vec![0usize; n];
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, t) in inter.iter().enumerate() {
        degree[t.head.index()] += 1;
        degree[t.tail.index()] += 1;
        incident[t.head.index()].push(i);
        incident[t.tail.index()].push(i);
    }
    let mut alive_edge = vec![true; inter.len()];
    let mut removed = vec![false; n];
    let mut queue = VecDeque::new();
    for (id, e) in graph.vocab.iter() {
        if matches!(e.kind(), EntityKind::User | EntityKind::Item) && degree[id.index()] < threshold {
            removed[id.index()] = true;
            queue.push_back(id.index());
        }
    }
    while let Some(v) = queue.pop_front() {
        for &ei in &incident[v] {
            if !alive_edge[ei] {
                continue;
            }
            alive_edge[ei] = false;
            let t = &inter[ei];
            let other = if t.head.index() == v { t.tail.index() } else { t.head.index() };
            degree[other] -= 1;
            if !removed[other] && degree[other] < threshold {
                removed[other] = true;
                queue.push_back(other);
            }
        }
    }
    let interaction = graph.catalog.interaction();
    let kept: Vec<Triplet> = graph
        .all_triplets()
        .filter(|t| !removed[t.head.index()] && !removed[t.tail.index()])
        .copied()
        .collect();
    if !kept.iter().any(|t| t.relation == interaction) {
        return Err(Error::EmptyAfterFilter { threshold });
    }
    recompact(graph, kept)
}

/// Rebuilds the vocabulary with only entities referenced by `triplets`.
fn recompact(graph: &UnifiedGraph, triplets: Vec<Triplet>) -> Result<UnifiedGraph> {
    let mut used = vec![false; graph.num_entities()];
    for t in &triplets {
        used[t.head.index()] = true;
        used[t.tail.index()] = true;
    }
    let mut remap = vec![u32::MAX; graph.num_entities()];
    let mut vocab = Vocabulary::new();
    for (id, e) in graph.vocab.iter() {
        if used[id.index()] {
            remap[id.index()] = vocab.push(&e.name, e.namespace)?.0;
        }
    }
    let triplets = triplets.into_iter().map(|t| Triplet {
        head: EntityId(remap[t.head.index()]),
        tail: EntityId(remap[t.tail.index()]),
        ..t
    });
    UnifiedGraph::from_triplets(vocab, graph.catalog.clone(), triplets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeldOut {
    pub item: EntityId,
    pub timestamp: i64,
}

/// Leave-one-out split. `train` shares the full vocabulary of the source graph.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: UnifiedGraph,
    pub validation: BTreeMap<EntityId, HeldOut>,
    pub test: BTreeMap<EntityId, HeldOut>,
}

impl DataSplit {
    /// Items a user interacted with in training.
    pub fn train_items(&self, user: EntityId) -> impl Iterator<Item = EntityId> + '_ {
        self.train.user_interactions(user).iter().map(|i| i.item)
    }
}

/// Holds out each user's latest interaction for test and second latest for
/// validation. Ties on timestamp resolve by item index: larger index is later.
pub fn leave_one_out_split(graph: &UnifiedGraph) -> Result<DataSplit> {
    let interaction = graph.catalog.interaction();
    let mut validation = BTreeMap::new();
    let mut test = BTreeMap::new();
    let mut held: HashSet<(u32, u32)> = HashSet::new();
    for user in graph.users() {
        let list = graph.user_interactions(user);
        if list.len() < 3 {
            return Err(Error::Split {
                user: graph.vocab.name(user).to_string(),
                count: list.len(),
            });
        }
        let last = list[list.len() - 1];
        let second = list[list.len() - 2];
        test.insert(user, HeldOut { item: last.item, timestamp: last.timestamp });
        validation.insert(user, HeldOut { item: second.item, timestamp: second.timestamp });
        held.insert((user.0, last.item.0));
        held.insert((user.0, second.item.0));
    }
    let train = graph.with_triplets(
        graph
            .all_triplets()
            .filter(|t| t.relation != interaction || !held.contains(&(t.head.0, t.tail.0)))
            .copied(),
    )?;
    Ok(DataSplit {
        train,
        validation,
        test,
    })
}
