//! Everything a training run reads, and its on-disk layout:
//!
//! ```text
//! <dir>/corpus.jsonl
//! <dir>/kg/{entities,relations,triples,importance}.tsv
//! <dir>/paragraph_embeddings.txt
//! <dir>/topic_embeddings.txt
//! <dir>/walks.tsv
//! <dir>/walk_embeddings.txt
//! <dir>/transe/{entity,relation}_embeddings.txt
//! ```

use std::fs;
use std::path::Path;

use crate::embed_io::{check_referential_integrity, load_corpus, Corpus, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::kg::{EmbeddingTable, KnowledgeGraph};
use crate::model::Embeddings;
use crate::walk::{read_walks, write_walks, WalkRecord};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const KG_DIR: &str = "kg";
pub const PARAGRAPH_EMBEDDINGS_FILE: &str = "paragraph_embeddings.txt";
pub const TOPIC_EMBEDDINGS_FILE: &str = "topic_embeddings.txt";
pub const WALKS_FILE: &str = "walks.tsv";
pub const WALK_EMBEDDINGS_FILE: &str = "walk_embeddings.txt";
pub const TRANSE_DIR: &str = "transe";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub corpus: Corpus,
    pub kg: KnowledgeGraph,
    pub paragraphs: EmbeddingMatrix,
    pub topics: EmbeddingMatrix,
    pub walks: Vec<WalkRecord>,
    pub walk_embeddings: EmbeddingMatrix,
    pub transe: EmbeddingTable,
}

impl Dataset {
    pub fn load_dir(dir: &Path) -> Result<Dataset> {
        let corpus = load_corpus(&dir.join(CORPUS_FILE))?;
        let kg = KnowledgeGraph::load_dir(&dir.join(KG_DIR))?;
        let paragraphs = EmbeddingMatrix::read(&dir.join(PARAGRAPH_EMBEDDINGS_FILE))?;
        check_referential_integrity(&corpus, &paragraphs)?;
        let topics = EmbeddingMatrix::read(&dir.join(TOPIC_EMBEDDINGS_FILE))?;
        let walks_path = dir.join(WALKS_FILE);
        let walks = if walks_path.exists() {
            read_walks(&walks_path)?
        } else {
            Vec::new()
        };
        let walk_embeddings = EmbeddingMatrix::read(&dir.join(WALK_EMBEDDINGS_FILE))?;
        let transe = EmbeddingTable::read_dir(&dir.join(TRANSE_DIR))?;
        let data = Dataset {
            corpus,
            kg,
            paragraphs,
            topics,
            walks,
            walk_embeddings,
            transe,
        };
        data.embeddings().dim()?;
        Ok(data)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.corpus.write(&dir.join(CORPUS_FILE))?;
        self.kg.write_dir(&dir.join(KG_DIR))?;
        self.paragraphs
            .write(&dir.join(PARAGRAPH_EMBEDDINGS_FILE))?;
        self.topics.write(&dir.join(TOPIC_EMBEDDINGS_FILE))?;
        write_walks(&dir.join(WALKS_FILE), &self.walks)?;
        self.walk_embeddings
            .write(&dir.join(WALK_EMBEDDINGS_FILE))?;
        self.transe.write_dir(&dir.join(TRANSE_DIR))
    }

    pub fn embeddings(&self) -> Embeddings<'_> {
        Embeddings {
            paragraphs: &self.paragraphs,
            walks: &self.walk_embeddings,
            topics: &self.topics,
            entities: &self.transe.entities,
        }
    }

    pub fn dim(&self) -> usize {
        self.paragraphs.dim()
    }
}
