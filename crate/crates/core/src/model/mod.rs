//! Gated relational GNN over document graphs, graph readout and classifier.

mod checkpoint;
mod input;
mod layer;

pub use checkpoint::CHECKPOINT_HEADER;
pub use input::{
    prepare_document, Batch, Embeddings, GraphStructure, NodeSlot, PreparedDoc, RelationBlock,
    INTERNAL_RELATIONS,
};
pub use layer::GatedLayer;

use std::fmt;
use std::ops::Range;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embed_io::TENSE_COUNT;
use crate::error::{Error, Result};
use crate::hin::NodeType;
use crate::infusion::{
    aggregate_walks, infuse_batch, pool_walks, InfusionParams, Pooling, WalkAggregation,
};
use crate::seed;
use crate::tensor::{softmax_rows, xavier, ParamId, ParamStore, Tape, Tensor};

/// Which nodes are averaged into the graph vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Readout {
    /// Paragraph nodes only.
    #[default]
    PA,
    /// Every node except paragraphs.
    CA,
    /// All nodes.
    GA,
}

impl Readout {
    pub const ALL: [Readout; 3] = [Readout::PA, Readout::CA, Readout::GA];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PA" => Ok(Readout::PA),
            "CA" => Ok(Readout::CA),
            "GA" => Ok(Readout::GA),
            _ => Err(Error::Config(format!(
                "unknown readout `{s}` (expected PA, CA or GA)"
            ))),
        }
    }

    fn includes(self, t: NodeType) -> bool {
        match self {
            Readout::PA => t == NodeType::Paragraph,
            Readout::CA => t != NodeType::Paragraph,
            Readout::GA => true,
        }
    }
}

impl fmt::Display for Readout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Readout::PA => "PA",
            Readout::CA => "CA",
            Readout::GA => "GA",
        })
    }
}

/// Node rows averaged by `readout` for each document of a batch.
pub fn readout_groups(
    node_types: &[NodeType],
    docs: &[Range<usize>],
    doc_ids: &[String],
    readout: Readout,
) -> Result<Vec<Vec<usize>>> {
    docs.iter()
        .zip(doc_ids)
        .map(|(range, id)| {
            let group: Vec<usize> = range.clone().filter(|&v| readout.includes(node_types[v])).collect();
            if group.is_empty() {
                return Err(match readout {
                    Readout::CA => Error::Invalid(format!(
                        "document `{id}` has no cue nodes, so cue-average readout is undefined; use PA or GA"
                    )),
                    _ => Error::Invalid(format!("document `{id}` has no nodes for {readout} readout")),
                });
            }
            Ok(group)
        })
        .collect()
}

/// Class probabilities `softmax(v_g W_o + b_o)` for each row of `v_g`.
pub fn classify(v_g: &Array2<f64>, w_o: &Array2<f64>, b_o: &Array2<f64>) -> Array2<f64> {
    softmax_rows(&(v_g.dot(w_o) + b_o))
}

/// `λ Σ ‖θ‖²` over every parameter of the tape's store.
pub fn l2_penalty(tape: &mut Tape<'_>, lambda: f64) -> Result<Tensor> {
    let ids: Vec<ParamId> = tape.store().ids().collect();
    let mut total = tape.constant(Array2::zeros((1, 1)))?;
    for id in ids {
        let p = tape.param(id);
        let s = tape.sum_squares(p)?;
        total = tape.add(total, s)?;
    }
    Ok(tape.affine(total, lambda, 0.0)?)
}

/// Mean cross entropy of `logits` plus the L2 penalty.
pub fn objective(
    tape: &mut Tape<'_>,
    logits: Tensor,
    labels: &[usize],
    lambda: f64,
) -> Result<Tensor> {
    let ce = tape.cross_entropy(logits, labels)?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    let reg = l2_penalty(tape, lambda)?;
    Ok(tape.add(ce, reg)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub readout: Readout,
    pub walk_aggregation: WalkAggregation,
    pub leaky_slope: f64,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 768,
            hidden_dim: 512,
            layers: 2,
            heads: 8,
            dropout: 0.6,
            readout: Readout::PA,
            walk_aggregation: WalkAggregation::Attention,
            leaky_slope: 0.01,
            num_classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.layers == 0 {
            return bad("at least one graph layer is required".into());
        }
        if self.heads == 0 || !self.input_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "input dimension {} is not divisible into {} heads",
                self.input_dim, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if self.num_classes < 2 {
            return bad("at least two classes are required".into());
        }
        if !self.leaky_slope.is_finite() {
            return bad("leaky slope must be finite".into());
        }
        Ok(())
    }
}

/// Shared learnable features of sentiment, tense and quotation nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CueSlots {
    pub sentiment: ParamId,
    pub tense: ParamId,
    pub quotation: ParamId,
}

/// All learnable state of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub infusion: InfusionParams,
    pub cues: CueSlots,
    pub layers: Vec<GatedLayer>,
    pub classifier_w: ParamId,
    pub classifier_b: ParamId,
}

impl Model {
    /// Fresh parameters drawn from `seed`: Xavier-uniform weights, zero
    /// biases, cue features uniform in `±√(3/d)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = seed::rng(seed, "model-init");
        let mut params = ParamStore::new();
        let d = config.input_dim;
        let infusion =
            InfusionParams::init(&mut params, d, config.heads, config.leaky_slope, &mut rng)?;
        let bound = (3.0 / d as f64).sqrt();
        let mut cue = |params: &mut ParamStore, name: &str, rows: usize| {
            let v = Array2::from_shape_fn((rows, d), |_| rng.random_range(-bound..=bound));
            params.add(format!("cue.{name}"), v)
        };
        let cues = CueSlots {
            sentiment: cue(&mut params, "sentiment", 2),
            tense: cue(&mut params, "tense", TENSE_COUNT),
            quotation: cue(&mut params, "quotation", 2),
        };
        let layers = (0..config.layers)
            .map(|l| {
                let d_in = if l == 0 { d } else { config.hidden_dim };
                GatedLayer::init(
                    &mut params,
                    &format!("gnn{l}"),
                    d_in,
                    config.hidden_dim,
                    &mut rng,
                )
            })
            .collect();
        let classifier_w = params.add(
            "classifier.w",
            xavier(config.hidden_dim, config.num_classes, &mut rng),
        );
        let classifier_b = params.add("classifier.b", Array2::zeros((1, config.num_classes)));
        Ok(Model {
            config,
            params,
            infusion,
            cues,
            layers,
            classifier_w,
            classifier_b,
        })
    }

    /// Initial node features of every batch node.
    pub fn node_features(
        &self,
        tape: &mut Tape<'_>,
        batch: &Batch,
        infused: Tensor,
    ) -> Result<Tensor> {
        let p = batch.paragraphs.nrows();
        let f = batch.fixed.nrows();
        let mut parts = vec![infused];
        if f > 0 {
            parts.push(tape.constant(batch.fixed.clone())?);
        }
        let cue_base = p + f;
        parts.push(tape.param(self.cues.sentiment));
        parts.push(tape.param(self.cues.tense));
        parts.push(tape.param(self.cues.quotation));
        let pool = tape.concat_rows(&parts)?;
        let index: Vec<usize> = batch
            .slots
            .iter()
            .map(|s| match *s {
                NodeSlot::Paragraph(i) => i,
                NodeSlot::Fixed(i) => p + i,
                NodeSlot::Sentiment(i) => cue_base + i,
                NodeSlot::Tense(i) => cue_base + 2 + i,
                NodeSlot::Quotation(i) => cue_base + 2 + TENSE_COUNT + i,
            })
            .collect();
        Ok(tape.gather_rows(pool, &index)?)
    }

    /// Knowledge vector of each stacked paragraph.
    fn knowledge(&self, tape: &mut Tape<'_>, batch: &Batch, v_s: Tensor) -> Result<Tensor> {
        let pooled = |mode| {
            let mut out = Array2::zeros((batch.paragraphs.nrows(), self.config.input_dim));
            for (i, g) in batch.walk_groups.iter().enumerate() {
                let (v, _) = pool_walks(batch.walks.slice(ndarray::s![g.clone(), ..]), mode);
                out.row_mut(i).assign(&v);
            }
            out
        };
        match self.config.walk_aggregation {
            WalkAggregation::Attention => {
                let walks = tape.constant(batch.walks.clone())?;
                Ok(aggregate_walks(tape, &self.infusion, v_s, walks, &batch.walk_groups)?.0)
            }
            WalkAggregation::Max => Ok(tape.constant(pooled(Pooling::Max))?),
            WalkAggregation::Avg => Ok(tape.constant(pooled(Pooling::Avg))?),
        }
    }

    /// Node states after the graph layers. With a random source, dropout is
    /// applied after every layer.
    pub fn encode(
        &self,
        tape: &mut Tape<'_>,
        batch: &Batch,
        mut dropout: Option<&mut seed::Rng>,
    ) -> Result<Tensor> {
        if batch.paragraphs.ncols() != self.config.input_dim {
            return Err(Error::Invalid(format!(
                "inputs have dimension {}, model expects {}",
                batch.paragraphs.ncols(),
                self.config.input_dim
            )));
        }
        let v_s = tape.constant(batch.paragraphs.clone())?;
        let v_p = self.knowledge(tape, batch, v_s)?;
        let infused = infuse_batch(tape, &self.infusion, v_s, v_p, &batch.doc_paragraphs)?;
        let mut h = self.node_features(tape, batch, infused.s)?;
        for layer in &self.layers {
            h = layer.forward(tape, &batch.structure, h)?;
            if let Some(rng) = dropout.as_deref_mut() {
                if self.config.dropout > 0.0 {
                    let keep = 1.0 - self.config.dropout;
                    let mask = Array2::from_shape_fn(tape.shape(h), |_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    h = tape.dropout(h, mask)?;
                }
            }
        }
        Ok(h)
    }

    /// Graph vectors, one row per document.
    pub fn graph_vectors(
        &self,
        tape: &mut Tape<'_>,
        batch: &Batch,
        dropout: Option<&mut seed::Rng>,
    ) -> Result<Tensor> {
        let groups = readout_groups(
            &batch.node_types,
            &batch.doc_nodes,
            &batch.doc_ids,
            self.config.readout,
        )?;
        let h = self.encode(tape, batch, dropout)?;
        Ok(tape.mean_rows(h, &groups)?)
    }

    /// Class logits, one row per document.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        batch: &Batch,
        dropout: Option<&mut seed::Rng>,
    ) -> Result<Tensor> {
        let v_g = self.graph_vectors(tape, batch, dropout)?;
        let w = tape.param(self.classifier_w);
        let b = tape.param(self.classifier_b);
        let logits = tape.matmul(v_g, w)?;
        Ok(tape.add_row(logits, b)?)
    }

    /// Class probabilities without dropout.
    pub fn predict_proba(&self, batch: &Batch) -> Result<Array2<f64>> {
        let mut tape = Tape::with_params(&self.params);
        let logits = self.forward(&mut tape, batch, None)?;
        Ok(softmax_rows(tape.value(logits)))
    }

    pub fn predict(&self, batch: &Batch) -> Result<Vec<usize>> {
        let probs = self.predict_proba(batch)?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &p)| {
                        if p > best.1 {
                            (i, p)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }
}
