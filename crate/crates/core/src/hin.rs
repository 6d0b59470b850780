//! Per-document heterogeneous information networks.
//!
//! Node sets: paragraphs (V1), topics (V2), sentiments (V3), tenses (V4),
//! quotation flags (V5) and knowledge-graph entities (V6). Relation R1 links
//! consecutive paragraphs; R2..R6 link a paragraph to its cue node of the
//! matching type. Nodes are ordered paragraphs first, then cue types in
//! V2..V6 order, each cue type in order of first reference.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embed_io::{DocumentRecord, EmbeddingMatrix, Sentiment, TENSE_COUNT};
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    Paragraph,
    Topic,
    Sentiment,
    Tense,
    Quotation,
    Entity,
}

impl NodeType {
    pub const ALL: [NodeType; 6] = [
        NodeType::Paragraph,
        NodeType::Topic,
        NodeType::Sentiment,
        NodeType::Tense,
        NodeType::Quotation,
        NodeType::Entity,
    ];

    pub fn label(self) -> &'static str {
        match self {
            NodeType::Paragraph => "V1",
            NodeType::Topic => "V2",
            NodeType::Sentiment => "V3",
            NodeType::Tense => "V4",
            NodeType::Quotation => "V5",
            NodeType::Entity => "V6",
        }
    }
}

/// Edge relation; `Adjacent` is R1, the cue relations are R2..R6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    Adjacent,
    Cue(Cue),
}

impl Relation {
    pub const ALL: [Relation; 6] = [
        Relation::Adjacent,
        Relation::Cue(Cue::Topic),
        Relation::Cue(Cue::Sentiment),
        Relation::Cue(Cue::Tense),
        Relation::Cue(Cue::Quotation),
        Relation::Cue(Cue::Entity),
    ];

    /// Position in `R1..R6`, zero based.
    pub fn index(self) -> usize {
        match self {
            Relation::Adjacent => 0,
            Relation::Cue(c) => c.relation_index(),
        }
    }

    pub fn label(self) -> &'static str {
        ["R1", "R2", "R3", "R4", "R5", "R6"][self.index()]
    }

    pub fn target_type(self) -> NodeType {
        match self {
            Relation::Adjacent => NodeType::Paragraph,
            Relation::Cue(c) => c.node_type(),
        }
    }
}

/// The five textual cue kinds that can be ablated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cue {
    Topic,
    Sentiment,
    Tense,
    Quotation,
    Entity,
}

impl Cue {
    pub const ALL: [Cue; 5] = [
        Cue::Topic,
        Cue::Sentiment,
        Cue::Tense,
        Cue::Quotation,
        Cue::Entity,
    ];

    fn relation_index(self) -> usize {
        match self {
            Cue::Topic => 1,
            Cue::Sentiment => 2,
            Cue::Tense => 3,
            Cue::Quotation => 4,
            Cue::Entity => 5,
        }
    }

    pub fn node_type(self) -> NodeType {
        match self {
            Cue::Topic => NodeType::Topic,
            Cue::Sentiment => NodeType::Sentiment,
            Cue::Tense => NodeType::Tense,
            Cue::Quotation => NodeType::Quotation,
            Cue::Entity => NodeType::Entity,
        }
    }

    /// Parses `R2`..`R6` or the cue name.
    pub fn parse(s: &str) -> Result<Cue> {
        match s.to_ascii_lowercase().as_str() {
            "r2" | "topic" => Ok(Cue::Topic),
            "r3" | "sentiment" => Ok(Cue::Sentiment),
            "r4" | "tense" => Ok(Cue::Tense),
            "r5" | "quotation" => Ok(Cue::Quotation),
            "r6" | "entity" => Ok(Cue::Entity),
            _ => Err(Error::Config(format!(
                "`{s}` is not a cue relation (R2..R6)"
            ))),
        }
    }
}

impl fmt::Display for Cue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(Relation::Cue(*self).label())
    }
}

/// Where a node's initial feature vector comes from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FeatureSource {
    /// Infused representation of paragraph `i`.
    Paragraph(usize),
    /// Row of the topic embedding table.
    Topic(String),
    /// Shared learnable slot.
    Sentiment(Sentiment),
    Tense(usize),
    Quotation(bool),
    /// Row of the entity embedding table.
    Entity(String),
}

impl FeatureSource {
    pub fn node_type(&self) -> NodeType {
        match self {
            FeatureSource::Paragraph(_) => NodeType::Paragraph,
            FeatureSource::Topic(_) => NodeType::Topic,
            FeatureSource::Sentiment(_) => NodeType::Sentiment,
            FeatureSource::Tense(_) => NodeType::Tense,
            FeatureSource::Quotation(_) => NodeType::Quotation,
            FeatureSource::Entity(_) => NodeType::Entity,
        }
    }
}

impl fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSource::Paragraph(i) => write!(f, "paragraph:{i}"),
            FeatureSource::Topic(t) => write!(f, "topic:{t}"),
            FeatureSource::Sentiment(Sentiment::Positive) => f.write_str("sentiment:positive"),
            FeatureSource::Sentiment(Sentiment::Negative) => f.write_str("sentiment:negative"),
            FeatureSource::Tense(t) => write!(f, "tense:{t}"),
            FeatureSource::Quotation(q) => write!(f, "quotation:{q}"),
            FeatureSource::Entity(e) => write!(f, "entity:{e}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HinEdge {
    pub relation: Relation,
    /// Paragraph node.
    pub src: usize,
    /// Next paragraph for R1, cue node otherwise.
    pub dst: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HinGraph {
    pub doc_id: String,
    pub label: usize,
    pub nodes: Vec<FeatureSource>,
    pub edges: Vec<HinEdge>,
}

impl HinGraph {
    pub fn node_type(&self, i: usize) -> NodeType {
        self.nodes[i].node_type()
    }

    pub fn count(&self, t: NodeType) -> usize {
        self.nodes.iter().filter(|n| n.node_type() == t).count()
    }

    pub fn edge_count(&self, r: Relation) -> usize {
        self.edges.iter().filter(|e| e.relation == r).count()
    }

    pub fn paragraph_count(&self) -> usize {
        self.count(NodeType::Paragraph)
    }

    /// Checks every structural invariant of a document graph.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Invalid(format!("graph {}: {msg}", self.doc_id)));
        let n_par = self.paragraph_count();
        if self.nodes[..n_par]
            .iter()
            .any(|s| s.node_type() != NodeType::Paragraph)
        {
            return fail("paragraph nodes must come first".into());
        }
        let mut degree = vec![0usize; self.nodes.len()];
        let mut adjacent = 0;
        for e in &self.edges {
            if e.src >= self.nodes.len() || e.dst >= self.nodes.len() {
                return fail(format!("edge {e:?} out of range"));
            }
            if self.node_type(e.src) != NodeType::Paragraph
                || self.node_type(e.dst) != e.relation.target_type()
            {
                return fail(format!(
                    "edge {e:?} does not match the {} signature",
                    e.relation.label()
                ));
            }
            if e.relation == Relation::Adjacent {
                if e.dst != e.src + 1 {
                    return fail(format!(
                        "R1 edge {e:?} does not join consecutive paragraphs"
                    ));
                }
                adjacent += 1;
            }
            degree[e.src] += 1;
            degree[e.dst] += 1;
        }
        if adjacent != n_par.saturating_sub(1) {
            return fail(format!("{adjacent} R1 edges for {n_par} paragraphs"));
        }
        if let Some(i) = (n_par..self.nodes.len()).find(|&i| degree[i] == 0) {
            return fail(format!("cue node {i} ({}) is isolated", self.nodes[i]));
        }
        for (t, max) in [
            (NodeType::Sentiment, 2),
            (NodeType::Tense, TENSE_COUNT),
            (NodeType::Quotation, 2),
        ] {
            if self.count(t) > max {
                return fail(format!(
                    "{} {} nodes exceed {max}",
                    self.count(t),
                    t.label()
                ));
            }
        }
        Ok(())
    }

    /// Text dump used for debugging and golden files.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "doc\t{}\tlabel\t{}", self.doc_id, self.label);
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "node\t{i}\t{}\t{n}", n.node_type().label());
        }
        for e in &self.edges {
            let _ = writeln!(out, "edge\t{}\t{}\t{}", e.relation.label(), e.src, e.dst);
        }
        out
    }
}

/// Builds the graph of one document.
///
/// Topic and entity ids must have rows in the given embedding tables; the
/// paragraph features are bound later, when the infused representations
/// are computed.
pub fn build_hin(
    doc: &DocumentRecord,
    topics: &EmbeddingMatrix,
    entities: &EmbeddingMatrix,
) -> Result<HinGraph> {
    let n = doc.paragraphs.len();
    let mut nodes: Vec<FeatureSource> = (0..n).map(FeatureSource::Paragraph).collect();
    let mut edges: Vec<HinEdge> = (1..n)
        .map(|i| HinEdge {
            relation: Relation::Adjacent,
            src: i - 1,
            dst: i,
        })
        .collect();

    for cue in Cue::ALL {
        let mut index: HashMap<FeatureSource, usize> = HashMap::new();
        for (i, p) in doc.paragraphs.iter().enumerate() {
            let sources: Vec<FeatureSource> = match cue {
                Cue::Topic => {
                    if !topics.contains(&p.topic_id) {
                        return Err(Error::Invalid(format!(
                            "doc {}: paragraph {i} references unknown topic `{}`",
                            doc.doc_id, p.topic_id
                        )));
                    }
                    vec![FeatureSource::Topic(p.topic_id.clone())]
                }
                Cue::Sentiment => vec![FeatureSource::Sentiment(p.sentiment)],
                Cue::Tense => {
                    if p.tense_id >= TENSE_COUNT {
                        return Err(Error::Invalid(format!(
                            "doc {}: tense {} out of range",
                            doc.doc_id, p.tense_id
                        )));
                    }
                    vec![FeatureSource::Tense(p.tense_id)]
                }
                Cue::Quotation => vec![FeatureSource::Quotation(p.quotation)],
                Cue::Entity => {
                    let mut seen = Vec::new();
                    for e in &p.entity_ids {
                        if !entities.contains(e) {
                            return Err(Error::Invalid(format!(
                                "doc {}: paragraph {i} references unknown entity `{e}`",
                                doc.doc_id
                            )));
                        }
                        let s = FeatureSource::Entity(e.clone());
                        if !seen.contains(&s) {
                            seen.push(s);
                        }
                    }
                    seen
                }
            };
            for s in sources {
                let node = *index.entry(s.clone()).or_insert_with(|| {
                    nodes.push(s);
                    nodes.len() - 1
                });
                edges.push(HinEdge {
                    relation: Relation::Cue(cue),
                    src: i,
                    dst: node,
                });
            }
        }
    }
    Ok(HinGraph {
        doc_id: doc.doc_id.clone(),
        label: doc.label,
        nodes,
        edges,
    })
}

/// Removes each edge of one cue relation independently with probability `p`,
/// then prunes cue nodes left without edges.
pub fn drop_cues(graph: &HinGraph, cue: Cue, p: f64, seed: u64) -> Result<HinGraph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!(
            "cue removal probability {p} outside [0, 1]"
        )));
    }
    if p == 0.0 {
        return Ok(graph.clone());
    }
    let mut rng = seed::rng(seed, &format!("drop:{}:{}", graph.doc_id, cue));
    let relation = Relation::Cue(cue);
    let kept: Vec<HinEdge> = graph
        .edges
        .iter()
        .filter(|e| e.relation != relation || !(p >= 1.0 || rng.random::<f64>() < p))
        .copied()
        .collect();
    let n_par = graph.paragraph_count();
    let mut used = vec![false; graph.nodes.len()];
    used[..n_par].iter_mut().for_each(|u| *u = true);
    for e in &kept {
        used[e.dst] = true;
    }
    let mut remap = vec![usize::MAX; graph.nodes.len()];
    let mut nodes = Vec::new();
    for (i, n) in graph.nodes.iter().enumerate() {
        if used[i] {
            remap[i] = nodes.len();
            nodes.push(n.clone());
        }
    }
    let edges = kept
        .into_iter()
        .map(|e| HinEdge {
            relation: e.relation,
            src: remap[e.src],
            dst: remap[e.dst],
        })
        .collect();
    Ok(HinGraph {
        doc_id: graph.doc_id.clone(),
        label: graph.label,
        nodes,
        edges,
    })
}

/// Characters treated as quotation marks.
pub const QUOTE_MARKS: [char; 3] = ['"', '\u{201C}', '\u{201D}'];

/// True iff the text contains one of [`QUOTE_MARKS`].
pub fn detect_quotation(text: &str) -> bool {
    detect_quotation_with(text, &QUOTE_MARKS)
}

pub fn detect_quotation_with(text: &str, marks: &[char]) -> bool {
    text.chars().any(|c| marks.contains(&c))
}

/// Case-insensitive longest-match entity linker over entity descriptions.
pub struct EntityLinker {
    /// Lowercased description and entity id, longest descriptions first.
    names: Vec<(String, String)>,
}

impl EntityLinker {
    pub fn new(kg: &KnowledgeGraph) -> Self {
        let mut names: Vec<(String, String)> = kg
            .entities()
            .map(|e| {
                (
                    kg.entity_description(e).to_lowercase(),
                    kg.entity_key(e).to_string(),
                )
            })
            .filter(|(d, _)| !d.trim().is_empty())
            .collect();
        names.sort_by_key(|n| std::cmp::Reverse(n.0.len()));
        EntityLinker { names }
    }

    /// Entity ids mentioned in `text`, in order of first mention.
    pub fn link(&self, text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        let mut found: Vec<String> = Vec::new();
        let mut pos = 0;
        while pos < lower.len() {
            let at_boundary = lower[..pos]
                .chars()
                .next_back()
                .is_none_or(|c| !c.is_alphanumeric());
            let matched = at_boundary.then(|| {
                self.names.iter().find(|(name, _)| {
                    lower[pos..].starts_with(name.as_str())
                        && lower[pos + name.len()..]
                            .chars()
                            .next()
                            .is_none_or(|c| !c.is_alphanumeric())
                })
            });
            match matched.flatten() {
                Some((name, id)) => {
                    if !found.contains(id) {
                        found.push(id.clone());
                    }
                    pos += name.len();
                }
                None => pos += lower[pos..].chars().next().map_or(1, char::len_utf8),
            }
        }
        found
    }
}

/// One-shot form of [`EntityLinker::link`].
pub fn link_entities_naive(text: &str, kg: &KnowledgeGraph) -> Vec<String> {
    EntityLinker::new(kg).link(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed_io::{synthetic_matrix, Paragraph};

    fn para(
        topic: &str,
        sentiment: Sentiment,
        tense: usize,
        quotation: bool,
        ents: &[&str],
    ) -> Paragraph {
        Paragraph {
            text: String::new(),
            topic_id: topic.into(),
            sentiment,
            tense_id: tense,
            quotation,
            entity_ids: ents.iter().map(|e| e.to_string()).collect(),
        }
    }

    fn tables() -> (EmbeddingMatrix, EmbeddingMatrix) {
        let topics = synthetic_matrix(vec!["t1".into(), "t2".into()], 4, 0);
        let ents = synthetic_matrix((1..=4).map(|i| format!("e{i}")).collect(), 4, 0);
        (topics, ents)
    }

    fn three_paragraphs() -> DocumentRecord {
        DocumentRecord {
            doc_id: "d".into(),
            label: 1,
            fold: 0,
            paragraphs: vec![
                para("t1", Sentiment::Positive, 0, true, &["e1", "e2"]),
                para("t2", Sentiment::Negative, 3, false, &["e3"]),
                para("t1", Sentiment::Positive, 0, true, &["e4", "e1"]),
            ],
        }
    }

    #[test]
    fn counts_follow_construction_rules() {
        let (topics, ents) = tables();
        let g = build_hin(&three_paragraphs(), &topics, &ents).unwrap();
        g.validate().unwrap();
        assert_eq!(g.count(NodeType::Paragraph), 3);
        assert_eq!(g.count(NodeType::Topic), 2);
        assert_eq!(g.count(NodeType::Entity), 4);
        assert_eq!(g.edge_count(Relation::Adjacent), 2);
        for cue in [Cue::Topic, Cue::Sentiment, Cue::Tense, Cue::Quotation] {
            assert_eq!(g.edge_count(Relation::Cue(cue)), 3);
        }
        assert_eq!(g.edge_count(Relation::Cue(Cue::Entity)), 5);
    }

    #[test]
    fn single_paragraph_has_no_adjacency() {
        let (topics, ents) = tables();
        let mut doc = three_paragraphs();
        doc.paragraphs.truncate(1);
        let g = build_hin(&doc, &topics, &ents).unwrap();
        g.validate().unwrap();
        assert_eq!(g.edge_count(Relation::Adjacent), 0);
    }

    #[test]
    fn entity_free_document_is_valid() {
        let (topics, ents) = tables();
        let mut doc = three_paragraphs();
        doc.paragraphs.iter_mut().for_each(|p| p.entity_ids.clear());
        let g = build_hin(&doc, &topics, &ents).unwrap();
        g.validate().unwrap();
        assert_eq!(g.count(NodeType::Entity), 0);
        assert_eq!(g.edge_count(Relation::Cue(Cue::Entity)), 0);
    }

    #[test]
    fn unknown_ids_are_errors() {
        let (topics, ents) = tables();
        let mut doc = three_paragraphs();
        doc.paragraphs[1].topic_id = "t9".into();
        assert!(build_hin(&doc, &topics, &ents).is_err());
        let mut doc = three_paragraphs();
        doc.paragraphs[1].entity_ids.push("e99".into());
        assert!(build_hin(&doc, &topics, &ents).is_err());
    }

    #[test]
    fn construction_is_deterministic() {
        let (topics, ents) = tables();
        let a = build_hin(&three_paragraphs(), &topics, &ents).unwrap();
        let b = build_hin(&three_paragraphs(), &topics, &ents).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn dropping_with_zero_and_one() {
        let (topics, ents) = tables();
        let g = build_hin(&three_paragraphs(), &topics, &ents).unwrap();
        assert_eq!(drop_cues(&g, Cue::Entity, 0.0, 1).unwrap(), g);
        let dropped = drop_cues(&g, Cue::Entity, 1.0, 1).unwrap();
        dropped.validate().unwrap();
        assert_eq!(dropped.edge_count(Relation::Cue(Cue::Entity)), 0);
        assert_eq!(dropped.count(NodeType::Entity), 0);
        assert_eq!(dropped.edge_count(Relation::Cue(Cue::Topic)), 3);
        assert!(drop_cues(&g, Cue::Entity, 1.5, 1).is_err());
    }

    #[test]
    fn dropping_half_removes_about_half() {
        let (topics, _) = tables();
        let ents = synthetic_matrix((0..10_000).map(|i| format!("x{i}")).collect(), 2, 0);
        let mut p = para("t1", Sentiment::Positive, 0, false, &[]);
        p.entity_ids = (0..10_000).map(|i| format!("x{i}")).collect();
        let doc = DocumentRecord {
            doc_id: "big".into(),
            label: 0,
            fold: 0,
            paragraphs: vec![p],
        };
        let g = build_hin(&doc, &topics, &ents).unwrap();
        let before = g.edge_count(Relation::Cue(Cue::Entity));
        let after = drop_cues(&g, Cue::Entity, 0.5, 42).unwrap();
        after.validate().unwrap();
        let removed = 1.0 - after.edge_count(Relation::Cue(Cue::Entity)) as f64 / before as f64;
        assert!((removed - 0.5).abs() <= 0.02, "{removed}");
        assert_eq!(after, drop_cues(&g, Cue::Entity, 0.5, 42).unwrap());
    }

    #[test]
    fn quotation_marks() {
        assert!(detect_quotation("He said \"no deal\"."));
        assert!(!detect_quotation("No quotes here."));
        assert!(detect_quotation("She said \u{201C}never\u{201D}."));
        assert!(detect_quotation_with("it's", &['\'']));
    }

    #[test]
    fn naive_linking() {
        let kg = KnowledgeGraph::from_parts(
            &[
                ("trump", "Donald Trump"),
                ("ny", "New York"),
                ("york", "York"),
                ("gop", "Republican Party"),
            ],
            &[("r", "r")],
            &[],
        )
        .unwrap();
        assert_eq!(link_entities_naive("Donald Trump spoke", &kg), ["trump"]);
        assert_eq!(link_entities_naive("in new york today", &kg), ["ny"]);
        assert!(link_entities_naive("nothing to see", &kg).is_empty());
        // word boundaries and one report per entity
        assert!(link_entities_naive("Yorkshire", &kg).is_empty());
        assert_eq!(link_entities_naive("York, then York again", &kg), ["york"]);
    }
}
