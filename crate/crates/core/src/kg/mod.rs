//! Knowledge graph storage and TransE entity features.
//!
//! On disk a graph is a directory of tab-separated files:
//!
//! ```text
//! triples.tsv     head_id<TAB>relation_id<TAB>tail_id
//! entities.tsv    id<TAB>description
//! relations.tsv   id<TAB>description
//! importance.tsv  relation_id<TAB>p(r)        (optional)
//! ```
//!
//! Triples are directed and parallel edges (same head and relation, different
//! tails) are kept as a multiset; adjacency lists preserve file order.

mod transe;

pub use transe::{train_transe, transe_score, EmbeddingTable, TransEConfig, TransEReport};

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TRIPLES_FILE: &str = "triples.tsv";
pub const ENTITIES_FILE: &str = "entities.tsv";
pub const RELATIONS_FILE: &str = "relations.tsv";
pub const IMPORTANCE_FILE: &str = "importance.tsv";

/// Importance assigned to relations missing from the importance file.
pub const DEFAULT_IMPORTANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Outgoing edge of an entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, PartialEq)]
struct Interner {
    ids: Vec<String>,
    descriptions: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    fn new() -> Self {
        Interner {
            ids: Vec::new(),
            descriptions: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn insert(&mut self, id: String, description: String) -> Option<usize> {
        if self.index.contains_key(&id) {
            return None;
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.descriptions.push(description);
        Some(self.ids.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    importance: Vec<f64>,
    triples: Vec<Triple>,
    adjacency: Vec<Vec<Edge>>,
}

impl KnowledgeGraph {
    /// Builds a graph from in-memory `(id, description)` lists and string
    /// triples. Relation importance starts at [`DEFAULT_IMPORTANCE`].
    pub fn from_parts<S: AsRef<str>>(
        entities: &[(S, S)],
        relations: &[(S, S)],
        triples: &[(S, S, S)],
    ) -> Result<Self> {
        let mut kg = KnowledgeGraph::empty();
        for (id, desc) in entities {
            kg.add_entity(id.as_ref(), desc.as_ref())?;
        }
        for (id, desc) in relations {
            kg.add_relation(id.as_ref(), desc.as_ref())?;
        }
        for (h, r, t) in triples {
            kg.add_triple(h.as_ref(), r.as_ref(), t.as_ref())?;
        }
        Ok(kg)
    }

    fn empty() -> Self {
        KnowledgeGraph {
            entities: Interner::new(),
            relations: Interner::new(),
            importance: Vec::new(),
            triples: Vec::new(),
            adjacency: Vec::new(),
        }
    }

    fn add_entity(&mut self, id: &str, desc: &str) -> Result<EntityId> {
        check_id("entity", id)?;
        let idx = self
            .entities
            .insert(id.to_string(), desc.to_string())
            .ok_or_else(|| Error::Invalid(format!("duplicate entity id `{id}`")))?;
        self.adjacency.push(Vec::new());
        Ok(EntityId(idx))
    }

    fn add_relation(&mut self, id: &str, desc: &str) -> Result<RelationId> {
        check_id("relation", id)?;
        let idx = self
            .relations
            .insert(id.to_string(), desc.to_string())
            .ok_or_else(|| Error::Invalid(format!("duplicate relation id `{id}`")))?;
        self.importance.push(DEFAULT_IMPORTANCE);
        Ok(RelationId(idx))
    }

    /// Adds a triple; returns `false` if the exact triple was already present.
    fn add_triple(&mut self, h: &str, r: &str, t: &str) -> Result<bool> {
        let triple = Triple {
            head: self.entity(h)?,
            relation: self.relation(r)?,
            tail: self.entity(t)?,
        };
        let edge = Edge {
            relation: triple.relation,
            tail: triple.tail,
        };
        let out = &mut self.adjacency[triple.head.0];
        if out.contains(&edge) {
            return Ok(false);
        }
        out.push(edge);
        self.triples.push(triple);
        Ok(true)
    }

    /// Loads the four files of a graph directory. `importance.tsv` may be absent.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let importance = dir.join(IMPORTANCE_FILE);
        load_kg(
            &dir.join(TRIPLES_FILE),
            &dir.join(ENTITIES_FILE),
            &dir.join(RELATIONS_FILE),
            importance.exists().then_some(importance.as_path()),
        )
    }

    /// Writes the graph in the layout read by [`KnowledgeGraph::load_dir`].
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(p, e))
        };
        let mut ents = String::new();
        for (id, d) in self.entities.ids.iter().zip(&self.entities.descriptions) {
            ents.push_str(&format!("{id}\t{d}\n"));
        }
        let mut rels = String::new();
        let mut imp = String::new();
        for (i, (id, d)) in self
            .relations
            .ids
            .iter()
            .zip(&self.relations.descriptions)
            .enumerate()
        {
            rels.push_str(&format!("{id}\t{d}\n"));
            imp.push_str(&format!("{id}\t{:?}\n", self.importance[i]));
        }
        let mut trip = String::new();
        for t in &self.triples {
            trip.push_str(&format!(
                "{}\t{}\t{}\n",
                self.entity_key(t.head),
                self.relation_key(t.relation),
                self.entity_key(t.tail)
            ));
        }
        write(ENTITIES_FILE, ents)?;
        write(RELATIONS_FILE, rels)?;
        write(IMPORTANCE_FILE, imp)?;
        write(TRIPLES_FILE, trip)
    }

    pub fn entity_count(&self) -> usize {
        self.entities.ids.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.ids.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity(&self, id: &str) -> Result<EntityId> {
        self.entities
            .index
            .get(id)
            .map(|&i| EntityId(i))
            .ok_or_else(|| Error::unknown("entity", id))
    }

    pub fn relation(&self, id: &str) -> Result<RelationId> {
        self.relations
            .index
            .get(id)
            .map(|&i| RelationId(i))
            .ok_or_else(|| Error::unknown("relation", id))
    }

    pub fn entity_key(&self, e: EntityId) -> &str {
        &self.entities.ids[e.0]
    }

    pub fn relation_key(&self, r: RelationId) -> &str {
        &self.relations.ids[r.0]
    }

    pub fn entity_description(&self, e: EntityId) -> &str {
        &self.entities.descriptions[e.0]
    }

    pub fn relation_description(&self, r: RelationId) -> &str {
        &self.relations.descriptions[r.0]
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> {
        (0..self.entity_count()).map(EntityId)
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> {
        (0..self.relation_count()).map(RelationId)
    }

    /// Outgoing edges of an entity in insertion order.
    pub fn edges(&self, e: EntityId) -> &[Edge] {
        &self.adjacency[e.0]
    }

    /// Outgoing edges of an entity given by its string id.
    pub fn neighbors(&self, id: &str) -> Result<&[Edge]> {
        Ok(self.edges(self.entity(id)?))
    }

    pub fn has_triple(&self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        self.adjacency[head.0].contains(&Edge { relation, tail })
    }

    pub fn importance(&self, r: RelationId) -> f64 {
        self.importance[r.0]
    }

    /// Per-relation importance scores indexed by [`RelationId`].
    pub fn importance_scores(&self) -> &[f64] {
        &self.importance
    }

    pub fn set_importance(&mut self, r: RelationId, p: f64) -> Result<()> {
        if !p.is_finite() {
            return Err(Error::Invalid(format!(
                "importance of `{}` is not finite",
                self.relation_key(r)
            )));
        }
        self.importance[r.0] = p;
        Ok(())
    }
}

fn check_id(kind: &str, id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        Err(Error::Invalid(format!(
            "{kind} id `{id}` is empty or contains whitespace"
        )))
    } else {
        Ok(())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn read_descriptions(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let text = read(path)?;
    lines(&text)
        .map(|(n, line)| {
            let (id, desc) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, n, "expected `id<TAB>description`"))?;
            Ok((n, id.trim().to_string(), desc.trim().to_string()))
        })
        .collect()
}

/// Loads a graph from its triples, descriptions and optional importance file.
///
/// Relations not listed in the importance file (or all of them, when the file
/// is absent) get [`DEFAULT_IMPORTANCE`]. Exact duplicate triples are dropped
/// with a warning.
pub fn load_kg(
    triples: &Path,
    entity_descriptions: &Path,
    relation_descriptions: &Path,
    importance: Option<&Path>,
) -> Result<KnowledgeGraph> {
    let mut kg = KnowledgeGraph::empty();
    for (n, id, desc) in read_descriptions(entity_descriptions)? {
        kg.add_entity(&id, &desc)
            .map_err(|e| Error::parse(entity_descriptions, n, e.to_string()))?;
    }
    for (n, id, desc) in read_descriptions(relation_descriptions)? {
        kg.add_relation(&id, &desc)
            .map_err(|e| Error::parse(relation_descriptions, n, e.to_string()))?;
    }
    let text = read(triples)?;
    let mut duplicates = 0usize;
    for (n, line) in lines(&text) {
        let parts: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [h, r, t] = parts[..] else {
            return Err(Error::parse(
                triples,
                n,
                "expected `head<TAB>relation<TAB>tail`",
            ));
        };
        if !kg
            .add_triple(h, r, t)
            .map_err(|e| Error::parse(triples, n, e.to_string()))?
        {
            duplicates += 1;
        }
    }
    if duplicates > 0 {
        tracing::warn!(duplicates, path = %triples.display(), "dropped duplicate triples");
    }
    if let Some(path) = importance {
        let text = read(path)?;
        let mut seen = HashSet::new();
        for (n, line) in lines(&text) {
            let (id, value) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, n, "expected `relation_id<TAB>value`"))?;
            let r = kg
                .relation(id.trim())
                .map_err(|e| Error::parse(path, n, e.to_string()))?;
            let p: f64 = value.trim().parse().map_err(|_| {
                Error::parse(path, n, format!("`{}` is not a number", value.trim()))
            })?;
            if !seen.insert(r) {
                return Err(Error::parse(
                    path,
                    n,
                    format!("relation `{}` listed twice", id.trim()),
                ));
            }
            kg.set_importance(r, p)
                .map_err(|e| Error::parse(path, n, e.to_string()))?;
        }
    }
    Ok(kg)
}
