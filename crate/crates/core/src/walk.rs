//! Biased knowledge walks.
//!
//! From entity `e`, the next edge is drawn from a softmax over `e`'s outgoing
//! edges with logits `p(r)` of each edge's relation. Edges sharing a relation
//! split that relation's mass evenly, and a walk that reaches an entity with
//! no outgoing edges stops there.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::embed_io::{text_embedding, walk_key, Corpus, DocumentRecord, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::kg::{Edge, EntityId, KnowledgeGraph, RelationId};
use crate::seed;

/// Per-relation importance scores `p(r)`, indexed by [`RelationId`].
#[derive(Debug, Clone, PartialEq)]
pub struct WalkImportance(Vec<f64>);

impl WalkImportance {
    pub fn from_graph(kg: &KnowledgeGraph) -> Self {
        WalkImportance(kg.importance_scores().to_vec())
    }

    pub fn uniform(kg: &KnowledgeGraph, c: f64) -> Self {
        WalkImportance(vec![c; kg.relation_count()])
    }

    pub fn set(&mut self, r: RelationId, p: f64) -> Result<()> {
        if !p.is_finite() {
            return Err(Error::Invalid(format!("importance {p} is not finite")));
        }
        self.0[r.0] = p;
        Ok(())
    }

    pub fn get(&self, r: RelationId) -> f64 {
        self.0[r.0]
    }

    /// Overrides scores from an `relation_id<TAB>value` file.
    pub fn apply_file(&mut self, kg: &KnowledgeGraph, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `relation_id<TAB>value`"))?;
            let r = kg
                .relation(id.trim())
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            let p = v.trim().parse().map_err(|_| {
                Error::parse(path, i + 1, format!("`{}` is not a number", v.trim()))
            })?;
            self.set(r, p)
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeWalk {
    /// `e(0) .. e(K')`, one more than `relations`.
    pub entities: Vec<EntityId>,
    pub relations: Vec<RelationId>,
    /// Index of the paragraph the walk was generated for.
    pub paragraph: usize,
}

impl KnowledgeWalk {
    /// Realized number of hops `K'`.
    pub fn hops(&self) -> usize {
        self.relations.len()
    }

    pub fn start(&self) -> EntityId {
        self.entities[0]
    }

    pub fn end(&self) -> EntityId {
        self.entities[self.entities.len() - 1]
    }

    /// Every consecutive `(entity, relation, entity)` is a triple of `kg`.
    pub fn is_valid(&self, kg: &KnowledgeGraph) -> bool {
        self.entities.len() == self.relations.len() + 1
            && self
                .relations
                .iter()
                .enumerate()
                .all(|(i, &r)| kg.has_triple(self.entities[i], r, self.entities[i + 1]))
    }

    /// Space-separated `e0 r01 e1 ...` using graph ids.
    pub fn id_path(&self, kg: &KnowledgeGraph) -> String {
        let mut out = kg.entity_key(self.entities[0]).to_string();
        for (r, e) in self.relations.iter().zip(&self.entities[1..]) {
            let _ = write!(out, " {} {}", kg.relation_key(*r), kg.entity_key(*e));
        }
        out
    }
}

/// Step probabilities over the outgoing edges of `entity`, in edge order.
pub fn step_distribution(
    kg: &KnowledgeGraph,
    entity: EntityId,
    importance: &WalkImportance,
) -> Result<Vec<(Edge, f64)>> {
    let edges = kg.edges(entity);
    if edges.is_empty() {
        return Err(Error::Invalid(format!(
            "entity `{}` has no outgoing edges",
            kg.entity_key(entity)
        )));
    }
    let logits: Vec<f64> = edges.iter().map(|e| importance.get(e.relation)).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(edges
        .iter()
        .zip(weights)
        .map(|(&e, w)| (e, w / total))
        .collect())
}

fn sample(dist: &[(Edge, f64)], u: f64) -> Edge {
    let mut acc = 0.0;
    for &(e, p) in dist {
        acc += p;
        if u < acc {
            return e;
        }
    }
    dist[dist.len() - 1].0
}

/// One walk of at most `k` hops from `start`, truncated at sinks.
pub fn generate_walk(
    kg: &KnowledgeGraph,
    start: EntityId,
    k: usize,
    importance: &WalkImportance,
    seed: u64,
) -> Result<KnowledgeWalk> {
    if k == 0 {
        return Err(Error::Config("walk length must be at least 1".into()));
    }
    if start.0 >= kg.entity_count() {
        return Err(Error::unknown("entity", format!("#{}", start.0)));
    }
    let mut rng = seed::rng(seed, "walk");
    let mut walk = KnowledgeWalk {
        entities: vec![start],
        relations: Vec::with_capacity(k),
        paragraph: 0,
    };
    let mut at = start;
    for _ in 0..k {
        if kg.edges(at).is_empty() {
            break;
        }
        let dist = step_distribution(kg, at, importance)?;
        let edge = sample(&dist, rng.random::<f64>());
        walk.relations.push(edge.relation);
        walk.entities.push(edge.tail);
        at = edge.tail;
    }
    Ok(walk)
}

/// `walks_per_entity` walks from each mentioned entity, in mention order.
///
/// Mentions missing from the graph are skipped with a warning; each walk's
/// seed depends only on `(seed, entity, index)` so skipping one mention never
/// changes the walks of another.
pub fn generate_walks_for_paragraph(
    kg: &KnowledgeGraph,
    mentions: &[String],
    k: usize,
    walks_per_entity: usize,
    importance: &WalkImportance,
    seed: u64,
    paragraph: usize,
) -> Result<Vec<KnowledgeWalk>> {
    let mut walks = Vec::with_capacity(mentions.len() * walks_per_entity);
    for mention in mentions {
        let Ok(start) = kg.entity(mention) else {
            tracing::warn!(entity = %mention, "mentioned entity not in knowledge graph; skipping");
            continue;
        };
        for j in 0..walks_per_entity {
            let walk_seed = seed::derive(seed, &format!("{mention}#{j}"));
            let mut w = generate_walk(kg, start, k, importance, walk_seed)?;
            w.paragraph = paragraph;
            walks.push(w);
        }
    }
    Ok(walks)
}

/// Descriptions of the walk's entities and relations joined by single spaces.
pub fn walk_to_sentence(kg: &KnowledgeGraph, walk: &KnowledgeWalk) -> Result<String> {
    let mut parts = Vec::with_capacity(walk.entities.len() + walk.relations.len());
    let describe_entity = |e: EntityId| {
        let d = kg.entity_description(e);
        if d.is_empty() {
            Err(Error::Invalid(format!(
                "entity `{}` has no description",
                kg.entity_key(e)
            )))
        } else {
            Ok(d)
        }
    };
    parts.push(describe_entity(walk.entities[0])?);
    for (r, e) in walk.relations.iter().zip(&walk.entities[1..]) {
        let d = kg.relation_description(*r);
        if d.is_empty() {
            return Err(Error::Invalid(format!(
                "relation `{}` has no description",
                kg.relation_key(*r)
            )));
        }
        parts.push(d);
        parts.push(describe_entity(*e)?);
    }
    Ok(parts.join(" "))
}

/// One line of a walk file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkRecord {
    pub doc_id: String,
    pub paragraph: usize,
    /// Alternating entity and relation ids, starting and ending with an entity.
    pub path: Vec<String>,
    pub sentence: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkSettings {
    pub k: usize,
    pub walks_per_entity: usize,
    pub seed: u64,
}

/// Seed of the walks of one paragraph.
pub fn paragraph_seed(seed: u64, doc_id: &str, paragraph: usize) -> u64 {
    seed::derive(seed, &format!("walks:{doc_id}/{paragraph}"))
}

/// Walks for every paragraph of a document, in paragraph order.
pub fn walks_for_document(
    kg: &KnowledgeGraph,
    doc: &DocumentRecord,
    settings: &WalkSettings,
    importance: &WalkImportance,
) -> Result<Vec<WalkRecord>> {
    let mut out = Vec::new();
    for (i, p) in doc.paragraphs.iter().enumerate() {
        let seed = paragraph_seed(settings.seed, &doc.doc_id, i);
        for w in generate_walks_for_paragraph(
            kg,
            &p.entity_ids,
            settings.k,
            settings.walks_per_entity,
            importance,
            seed,
            i,
        )? {
            out.push(WalkRecord {
                doc_id: doc.doc_id.clone(),
                paragraph: i,
                path: w.id_path(kg).split(' ').map(str::to_string).collect(),
                sentence: walk_to_sentence(kg, &w)?,
            });
        }
    }
    Ok(out)
}

pub fn walks_for_corpus(
    kg: &KnowledgeGraph,
    corpus: &Corpus,
    settings: &WalkSettings,
    importance: &WalkImportance,
) -> Result<Vec<WalkRecord>> {
    let mut out = Vec::new();
    for doc in &corpus.docs {
        out.extend(walks_for_document(kg, doc, settings, importance)?);
    }
    Ok(out)
}

/// Embeds walk sentences with [`text_embedding`], keyed `doc/paragraph/j`
/// where `j` counts the paragraph's walks in file order.
pub fn embed_walks(walks: &[WalkRecord], d: usize, seed: u64) -> Result<EmbeddingMatrix> {
    let mut keys = Vec::with_capacity(walks.len());
    let mut values = ndarray::Array2::zeros((walks.len(), d));
    let mut counter: HashMap<(&str, usize), usize> = HashMap::new();
    for (i, w) in walks.iter().enumerate() {
        let j = counter.entry((w.doc_id.as_str(), w.paragraph)).or_insert(0);
        keys.push(walk_key(&w.doc_id, w.paragraph, *j));
        *j += 1;
        values
            .row_mut(i)
            .assign(&text_embedding(&w.sentence, d, seed));
    }
    EmbeddingMatrix::new(keys, values)
}

fn clean(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn walks_to_text(walks: &[WalkRecord]) -> String {
    let mut out = String::new();
    for w in walks {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            w.doc_id,
            w.paragraph,
            w.path.join(" "),
            clean(&w.sentence)
        );
    }
    out
}

pub fn write_walks(path: &Path, walks: &[WalkRecord]) -> Result<()> {
    fs::write(path, walks_to_text(walks)).map_err(|e| Error::io(path, e))
}

pub fn read_walks(path: &Path) -> Result<Vec<WalkRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        let [doc, para, path_ids, sentence] = fields[..] else {
            return Err(Error::parse(path, i + 1, "expected 4 tab-separated fields"));
        };
        let paragraph = para
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad paragraph index `{para}`")))?;
        let ids: Vec<String> = path_ids.split_whitespace().map(str::to_string).collect();
        if ids.len().is_multiple_of(2) {
            return Err(Error::parse(
                path,
                i + 1,
                "walk path must alternate entity and relation ids",
            ));
        }
        out.push(WalkRecord {
            doc_id: doc.to_string(),
            paragraph,
            path: ids,
            sentence: sentence.to_string(),
        });
    }
    Ok(out)
}
