//! Knowledge-walk and textual-cue enhanced perspective detection.
//!
//! The pipeline, bottom up:
//!
//! * [`tensor`]: dense matrices with a reverse-mode tape and Adam.
//! * [`kg`]: knowledge graph loading, adjacency, and TransE entity features.
//! * [`walk`]: biased knowledge walks and their textual form.
//! * [`embed_io`]: embedding matrices, the annotated corpus format, and
//!   deterministic synthetic embeddings.
//! * [`infusion`]: walk aggregation guided by the paragraph and document-level
//!   multi-head self-attention.
//! * [`dataset`]: the files a training run reads, bundled.
//! * [`hin`]: per-document heterogeneous graphs over paragraphs and cues.
//! * [`model`]: gated relational GNN, readouts, classifier and loss.
//! * [`train`]: fold protocol, early stopping, metrics and ablations.
//! * [`synth`]: generator for the cue-separable synthetic benchmark.

pub mod dataset;
pub mod embed_io;
pub mod error;
pub mod hin;
pub mod infusion;
pub mod kg;
pub mod model;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod walk;

pub use error::{Error, Result};
