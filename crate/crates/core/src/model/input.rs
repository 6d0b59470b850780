//! Per-document model inputs and their disjoint-union batches.

use std::ops::Range;
use std::sync::Arc;

use ndarray::{Array2, Axis};

use crate::embed_io::{paragraph_key, walk_key, DocumentRecord, EmbeddingMatrix, TENSE_COUNT};
use crate::error::{Error, Result};
use crate::hin::{FeatureSource, HinGraph, NodeType, Relation};
use crate::tensor::SparseRows;

/// Number of relation kinds inside the model: each HIN relation in both
/// directions.
pub const INTERNAL_RELATIONS: usize = 2 * Relation::ALL.len();

/// Where a node's initial feature comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeSlot {
    /// Infused vector of the document's paragraph `i`.
    Paragraph(usize),
    /// Row of the document's fixed feature matrix (topics and entities).
    Fixed(usize),
    Sentiment(usize),
    Tense(usize),
    Quotation(usize),
}

/// The embedding files a document draws from.
#[derive(Debug, Clone, Copy)]
pub struct Embeddings<'a> {
    pub paragraphs: &'a EmbeddingMatrix,
    pub walks: &'a EmbeddingMatrix,
    pub topics: &'a EmbeddingMatrix,
    pub entities: &'a EmbeddingMatrix,
}

impl Embeddings<'_> {
    /// Common dimension of every matrix.
    pub fn dim(&self) -> Result<usize> {
        let d = self.paragraphs.dim();
        for (name, m) in [
            ("walk", self.walks),
            ("topic", self.topics),
            ("entity", self.entities),
        ] {
            if !m.is_empty() && m.dim() != d {
                return Err(Error::Invalid(format!(
                    "{name} embeddings have dimension {}, paragraph embeddings {d}",
                    m.dim()
                )));
            }
        }
        Ok(d)
    }
}

/// A document's graph together with every input row the model reads.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDoc {
    pub graph: HinGraph,
    /// Paragraph embeddings, `n x d`.
    pub paragraphs: Array2<f64>,
    /// Walk embeddings of all paragraphs stacked, grouped by `walk_groups`.
    pub walks: Array2<f64>,
    pub walk_groups: Vec<Range<usize>>,
    pub fixed: Array2<f64>,
    pub slots: Vec<NodeSlot>,
}

impl PreparedDoc {
    pub fn doc_id(&self) -> &str {
        &self.graph.doc_id
    }

    pub fn label(&self) -> usize {
        self.graph.label
    }

    /// Same inputs over a different graph of the same document, e.g. after
    /// cue removal.
    pub fn with_graph(&self, graph: HinGraph, emb: &Embeddings<'_>) -> Result<PreparedDoc> {
        let (fixed, slots) = resolve_slots(&graph, emb)?;
        Ok(PreparedDoc {
            graph,
            fixed,
            slots,
            ..self.clone()
        })
    }
}

/// Collects the rows for `doc` and its graph.
///
/// Walks of paragraph `p` are read under keys `doc/p/0`, `doc/p/1`, ... until
/// the first missing index.
pub fn prepare_document(
    doc: &DocumentRecord,
    graph: HinGraph,
    emb: &Embeddings<'_>,
) -> Result<PreparedDoc> {
    let d = emb.dim()?;
    let n = doc.paragraphs.len();
    if graph.paragraph_count() != n {
        return Err(Error::Invalid(format!(
            "graph of `{}` has {} paragraphs, document has {n}",
            doc.doc_id,
            graph.paragraph_count()
        )));
    }
    let mut paragraphs = Array2::zeros((n, d));
    for i in 0..n {
        let key = paragraph_key(&doc.doc_id, i);
        paragraphs
            .row_mut(i)
            .assign(&emb.paragraphs.row(&key, "paragraph embedding")?);
    }
    let mut walk_rows = Vec::new();
    let mut walk_groups = Vec::with_capacity(n);
    for p in 0..n {
        let start = walk_rows.len();
        while let Some(row) = emb
            .walks
            .get(&walk_key(&doc.doc_id, p, walk_rows.len() - start))
        {
            walk_rows.push(row);
        }
        walk_groups.push(start..walk_rows.len());
    }
    let walks = if walk_rows.is_empty() {
        Array2::zeros((0, d))
    } else {
        ndarray::stack(Axis(0), &walk_rows).expect("rows share the dimension")
    };
    let (fixed, slots) = resolve_slots(&graph, emb)?;
    Ok(PreparedDoc {
        graph,
        paragraphs,
        walks,
        walk_groups,
        fixed,
        slots,
    })
}

fn resolve_slots(graph: &HinGraph, emb: &Embeddings<'_>) -> Result<(Array2<f64>, Vec<NodeSlot>)> {
    let d = emb.dim()?;
    let mut fixed_rows = Vec::new();
    let mut slots = Vec::with_capacity(graph.nodes.len());
    for node in &graph.nodes {
        let slot = match node {
            FeatureSource::Paragraph(i) => NodeSlot::Paragraph(*i),
            FeatureSource::Topic(id) => {
                fixed_rows.push(emb.topics.row(id, "topic")?);
                NodeSlot::Fixed(fixed_rows.len() - 1)
            }
            FeatureSource::Entity(id) => {
                fixed_rows.push(emb.entities.row(id, "entity")?);
                NodeSlot::Fixed(fixed_rows.len() - 1)
            }
            FeatureSource::Sentiment(s) => NodeSlot::Sentiment(s.index()),
            FeatureSource::Tense(t) => {
                if *t >= TENSE_COUNT {
                    return Err(Error::Invalid(format!("tense {t} out of range")));
                }
                NodeSlot::Tense(*t)
            }
            FeatureSource::Quotation(q) => NodeSlot::Quotation(usize::from(*q)),
        };
        slots.push(slot);
    }
    let fixed = if fixed_rows.is_empty() {
        Array2::zeros((0, d))
    } else {
        ndarray::stack(Axis(0), &fixed_rows).expect("rows share the dimension")
    };
    Ok((fixed, slots))
}

/// Neighbourhood operators of one internal relation.
#[derive(Debug, Clone)]
pub struct RelationBlock {
    /// `targets x nodes`: mean over each target's neighbours.
    pub gather: Arc<SparseRows>,
    /// `nodes x targets`: places each target's message on its node.
    pub scatter: Arc<SparseRows>,
}

/// Message-passing structure of a (batched) graph.
///
/// Internal relation `2r` carries messages along the stored edge direction of
/// HIN relation `r`, `2r + 1` against it.
#[derive(Debug, Clone)]
pub struct GraphStructure {
    pub nodes: usize,
    pub relations: Vec<Option<RelationBlock>>,
}

impl GraphStructure {
    /// Builds from `(relation index, src, dst)` edges.
    pub fn new(nodes: usize, edges: &[(usize, usize, usize)]) -> Self {
        let mut neighbours: Vec<Vec<Vec<usize>>> =
            vec![vec![Vec::new(); nodes]; INTERNAL_RELATIONS];
        for &(r, src, dst) in edges {
            neighbours[2 * r][dst].push(src);
            neighbours[2 * r + 1][src].push(dst);
        }
        let relations = neighbours
            .into_iter()
            .map(|per_node| {
                let targets: Vec<usize> = (0..nodes).filter(|&v| !per_node[v].is_empty()).collect();
                if targets.is_empty() {
                    return None;
                }
                let gather = targets
                    .iter()
                    .map(|&v| {
                        let w = 1.0 / per_node[v].len() as f64;
                        per_node[v].iter().map(|&u| (u, w)).collect()
                    })
                    .collect();
                let mut scatter = vec![Vec::new(); nodes];
                for (t, &v) in targets.iter().enumerate() {
                    scatter[v].push((t, 1.0));
                }
                Some(RelationBlock {
                    gather: Arc::new(SparseRows::new(nodes, gather)),
                    scatter: Arc::new(SparseRows::new(targets.len(), scatter)),
                })
            })
            .collect();
        GraphStructure { nodes, relations }
    }

    pub fn from_graph(graph: &HinGraph) -> Self {
        let edges: Vec<_> = graph
            .edges
            .iter()
            .map(|e| (e.relation.index(), e.src, e.dst))
            .collect();
        GraphStructure::new(graph.nodes.len(), &edges)
    }
}

/// Disjoint union of several documents.
#[derive(Debug, Clone)]
pub struct Batch {
    pub doc_ids: Vec<String>,
    pub labels: Vec<usize>,
    /// Paragraph embeddings of all documents stacked.
    pub paragraphs: Array2<f64>,
    pub walks: Array2<f64>,
    /// Walk rows of each stacked paragraph.
    pub walk_groups: Vec<Range<usize>>,
    /// Paragraph rows of each document.
    pub doc_paragraphs: Vec<Range<usize>>,
    pub fixed: Array2<f64>,
    /// Batch node rows of each document.
    pub doc_nodes: Vec<Range<usize>>,
    pub node_types: Vec<NodeType>,
    /// Batch-level slot of every node; paragraph and fixed indices are
    /// already offset into the stacked matrices.
    pub slots: Vec<NodeSlot>,
    pub structure: GraphStructure,
}

impl Batch {
    pub fn new(docs: &[&PreparedDoc]) -> Result<Batch> {
        let Some(first) = docs.first() else {
            return Err(Error::Invalid("cannot batch zero documents".into()));
        };
        let d = first.paragraphs.ncols();
        if let Some(bad) = docs.iter().find(|p| p.paragraphs.ncols() != d) {
            return Err(Error::Invalid(format!(
                "document `{}` has dimension {}, expected {d}",
                bad.doc_id(),
                bad.paragraphs.ncols()
            )));
        }
        let stack = |parts: Vec<&Array2<f64>>| -> Array2<f64> {
            let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("equal widths")
        };
        let paragraphs = stack(docs.iter().map(|p| &p.paragraphs).collect());
        let walks = stack(docs.iter().map(|p| &p.walks).collect());
        let fixed = stack(docs.iter().map(|p| &p.fixed).collect());

        let (mut para_off, mut walk_off, mut fixed_off, mut node_off) = (0, 0, 0, 0);
        let mut walk_groups = Vec::new();
        let mut doc_paragraphs = Vec::with_capacity(docs.len());
        let mut doc_nodes = Vec::with_capacity(docs.len());
        let mut node_types = Vec::new();
        let mut slots = Vec::new();
        let mut edges = Vec::new();
        for doc in docs {
            let g = &doc.graph;
            walk_groups.extend(
                doc.walk_groups
                    .iter()
                    .map(|r| r.start + walk_off..r.end + walk_off),
            );
            doc_paragraphs.push(para_off..para_off + doc.paragraphs.nrows());
            doc_nodes.push(node_off..node_off + g.nodes.len());
            node_types.extend((0..g.nodes.len()).map(|i| g.node_type(i)));
            slots.extend(doc.slots.iter().map(|s| match *s {
                NodeSlot::Paragraph(i) => NodeSlot::Paragraph(i + para_off),
                NodeSlot::Fixed(i) => NodeSlot::Fixed(i + fixed_off),
                other => other,
            }));
            edges.extend(
                g.edges
                    .iter()
                    .map(|e| (e.relation.index(), e.src + node_off, e.dst + node_off)),
            );
            para_off += doc.paragraphs.nrows();
            walk_off += doc.walks.nrows();
            fixed_off += doc.fixed.nrows();
            node_off += g.nodes.len();
        }
        Ok(Batch {
            doc_ids: docs.iter().map(|p| p.doc_id().to_string()).collect(),
            labels: docs.iter().map(|p| p.label()).collect(),
            paragraphs,
            walks,
            walk_groups,
            doc_paragraphs,
            fixed,
            doc_nodes,
            node_types,
            slots,
            structure: GraphStructure::new(node_off, &edges),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.slots.len()
    }
}
