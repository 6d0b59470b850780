//! Synthetic cue-separable corpora.
//!
//! A document's label fixes the sentiment of every paragraph and the marker
//! entity its first paragraph mentions. Topics, tenses, quotation and filler
//! entities are random, so only the sentiment and marker cues carry the label.
//! The knowledge graph links markers and fillers; entity features come from
//! TransE on that graph and text embeddings from the stand-in encoder.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom as _;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::embed_io::{
    paragraph_key, synthetic_matrix, text_embedding, Corpus, DocumentRecord, EmbeddingMatrix,
    Paragraph, Sentiment, TENSE_COUNT, TEXT_ENCODER_SEED,
};
use crate::error::{Error, Result};
use crate::kg::{train_transe, EmbeddingTable, KnowledgeGraph, TransEConfig};
use crate::seed;
use crate::walk::{embed_walks, walks_for_corpus, WalkImportance, WalkSettings};

const NAMES: [&str; 24] = [
    "Aster", "Birch", "Cedar", "Dahlia", "Elm", "Fern", "Gorse", "Hazel", "Iris", "Juniper",
    "Kale", "Laurel", "Maple", "Nettle", "Oak", "Poppy", "Quince", "Rowan", "Sage", "Thyme",
    "Umber", "Violet", "Willow", "Yarrow",
];
const MARKERS: [&str; 4] = ["Northwind", "Southgate", "Eastmere", "Westfall"];
const RELATIONS: [(&str, &str); 4] = [
    ("allied", "allied with"),
    ("opposes", "opposes"),
    ("member", "member of"),
    ("funded", "funded by"),
];
const TOPICS: [&str; 6] = [
    "budget",
    "healthcare",
    "immigration",
    "energy",
    "trade",
    "education",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub docs: usize,
    pub classes: usize,
    pub dim: usize,
    pub folds: usize,
    pub min_paragraphs: usize,
    pub max_paragraphs: usize,
    pub filler_entities: usize,
    pub topics: usize,
    pub walk_length: usize,
    pub walks_per_entity: usize,
    pub transe_epochs: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            docs: 200,
            classes: 2,
            dim: 768,
            folds: 5,
            min_paragraphs: 2,
            max_paragraphs: 4,
            filler_entities: 20,
            topics: 5,
            walk_length: 8,
            walks_per_entity: 1,
            transe_epochs: 500,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(2..=MARKERS.len()).contains(&self.classes) {
            return bad("synthetic corpora support 2 to 4 classes");
        }
        if self.docs < self.classes || self.folds == 0 || self.dim == 0 {
            return bad("need at least one document per class, one fold and a positive dimension");
        }
        if self.min_paragraphs == 0 || self.min_paragraphs > self.max_paragraphs {
            return bad("paragraph range must satisfy 1 <= min <= max");
        }
        if self.filler_entities < 2 || self.filler_entities > NAMES.len() {
            return bad("filler entity count must be between 2 and 24");
        }
        if self.topics == 0 || self.topics > TOPICS.len() {
            return bad("topic count must be between 1 and 6");
        }
        if self.walk_length == 0 || self.transe_epochs == 0 {
            return bad("walk length and TransE epochs must be positive");
        }
        Ok(())
    }
}

fn sentiment_for(label: usize) -> Sentiment {
    if label.is_multiple_of(2) {
        Sentiment::Positive
    } else {
        Sentiment::Negative
    }
}

fn synthetic_kg(cfg: &SynthConfig, rng: &mut seed::Rng) -> Result<KnowledgeGraph> {
    let fillers: Vec<String> = (0..cfg.filler_entities).map(|i| format!("f{i}")).collect();
    let mut entities: Vec<(String, String)> = (0..cfg.classes)
        .map(|c| (format!("m{c}"), format!("{} Party", MARKERS[c])))
        .collect();
    entities.extend(
        fillers
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), format!("{} Council", NAMES[i]))),
    );
    let relations: Vec<(String, String)> = RELATIONS
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    let mut triples = BTreeSet::new();
    let link =
        |rng: &mut seed::Rng, head: &str, triples: &mut BTreeSet<(String, String, String)>| {
            let tail = fillers.choose(rng).expect("fillers").clone();
            if tail != head {
                let r = RELATIONS.choose(rng).expect("relations").0.to_string();
                triples.insert((head.to_string(), r, tail));
            }
        };
    for c in 0..cfg.classes {
        for _ in 0..3 {
            link(rng, &format!("m{c}"), &mut triples);
        }
    }
    for f in &fillers {
        for _ in 0..2 {
            link(rng, f, &mut triples);
        }
    }
    let triples: Vec<(String, String, String)> = triples.into_iter().collect();
    KnowledgeGraph::from_parts(&entities, &relations, &triples)
}

fn paragraph_text(
    kg: &KnowledgeGraph,
    topic: &str,
    entities: &[String],
    quotation: bool,
    sentiment: Sentiment,
) -> String {
    let names: Vec<&str> = entities
        .iter()
        .filter_map(|e| kg.entity(e).ok().map(|id| kg.entity_description(id)))
        .collect();
    let mood = match sentiment {
        Sentiment::Positive => "welcomed",
        Sentiment::Negative => "criticised",
    };
    let mut text = format!("On {topic}, {} {mood} the proposal.", names.join(" and "));
    if quotation {
        text.push_str(" \"We will see,\" an aide said.");
    }
    text
}

/// Generates a corpus, its knowledge graph, walks and every embedding file.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed, "synth");
    let kg = synthetic_kg(cfg, &mut rng)?;
    let fillers: Vec<String> = (0..cfg.filler_entities).map(|i| format!("f{i}")).collect();
    let topics: Vec<String> = TOPICS[..cfg.topics]
        .iter()
        .map(|t| format!("topic_{t}"))
        .collect();
    let mut docs = Vec::with_capacity(cfg.docs);
    for i in 0..cfg.docs {
        let label = i % cfg.classes;
        let n = rng.random_range(cfg.min_paragraphs..=cfg.max_paragraphs);
        let mut paragraphs = Vec::with_capacity(n);
        for p in 0..n {
            let mut entity_ids = Vec::new();
            if p == 0 || rng.random_bool(0.5) {
                entity_ids.push(format!("m{label}"));
            }
            for _ in 0..rng.random_range(0..=2) {
                let f = fillers.choose(&mut rng).expect("fillers").clone();
                if !entity_ids.contains(&f) {
                    entity_ids.push(f);
                }
            }
            let topic = topics.choose(&mut rng).expect("topics").clone();
            let quotation = rng.random_bool(0.5);
            let sentiment = sentiment_for(label);
            paragraphs.push(Paragraph {
                text: paragraph_text(
                    &kg,
                    topic.trim_start_matches("topic_"),
                    &entity_ids,
                    quotation,
                    sentiment,
                ),
                topic_id: topic,
                sentiment,
                tense_id: rng.random_range(0..TENSE_COUNT),
                quotation,
                entity_ids,
            });
        }
        docs.push(DocumentRecord {
            doc_id: format!("doc{i:04}"),
            label,
            fold: i % cfg.folds,
            paragraphs,
        });
    }
    let corpus = Corpus::new(docs);
    let d = cfg.dim;
    let text_seed = TEXT_ENCODER_SEED;
    let mut para_rows = Vec::new();
    for doc in &corpus.docs {
        for (i, p) in doc.paragraphs.iter().enumerate() {
            para_rows.push((
                paragraph_key(&doc.doc_id, i),
                text_embedding(&p.text, d, text_seed).to_vec(),
            ));
        }
    }
    let paragraphs = EmbeddingMatrix::from_rows(para_rows, d)?;
    let topic_rows = topics
        .iter()
        .map(|t| {
            (
                t.clone(),
                text_embedding(&t.replace('_', " "), d, text_seed).to_vec(),
            )
        })
        .collect();
    let topic_matrix = EmbeddingMatrix::from_rows(topic_rows, d)?;
    let settings = WalkSettings {
        k: cfg.walk_length,
        walks_per_entity: cfg.walks_per_entity,
        seed: seed::derive(cfg.seed, "walks"),
    };
    let walks = walks_for_corpus(&kg, &corpus, &settings, &WalkImportance::from_graph(&kg))?;
    let walk_embeddings = embed_walks(&walks, d, text_seed)?;
    let (transe, _) = train_transe(
        &kg,
        &TransEConfig {
            dim: d,
            epochs: cfg.transe_epochs,
            seed: seed::derive(cfg.seed, "transe"),
            ..TransEConfig::default()
        },
    )?;
    Ok(Dataset {
        corpus,
        kg,
        paragraphs,
        topics: topic_matrix,
        walks,
        walk_embeddings,
        transe,
    })
}

/// One two-paragraph document whose graph has every node type, with three
/// walks (two for the first paragraph, one for the second) and synthetic
/// embeddings of width `dim`.
pub fn toy_document(dim: usize, seed: u64) -> Result<Dataset> {
    let kg = KnowledgeGraph::from_parts(
        &[("e0", "Aster Council"), ("e1", "Birch Council")],
        &[("allied", "allied with")],
        &[("e0", "allied", "e1"), ("e1", "allied", "e0")],
    )?;
    let para = |text: &str, topic: &str, sentiment, tense_id, quotation, ents: &[&str]| Paragraph {
        text: text.to_string(),
        topic_id: topic.to_string(),
        sentiment,
        tense_id,
        quotation,
        entity_ids: ents.iter().map(|e| e.to_string()).collect(),
    };
    let doc = DocumentRecord {
        doc_id: "toy".into(),
        label: 1,
        fold: 0,
        paragraphs: vec![
            para(
                "Aster Council said \"yes\".",
                "t0",
                Sentiment::Positive,
                3,
                true,
                &["e0", "e1"],
            ),
            para(
                "Birch Council disagreed.",
                "t1",
                Sentiment::Negative,
                5,
                false,
                &["e1"],
            ),
        ],
    };
    let corpus = Corpus::new(vec![doc]);
    let settings = WalkSettings {
        k: 2,
        walks_per_entity: 1,
        seed,
    };
    let walks = walks_for_corpus(&kg, &corpus, &settings, &WalkImportance::from_graph(&kg))?;
    let walk_keys: Vec<String> = embed_walks(&walks, 1, seed)?.keys().to_vec();
    Ok(Dataset {
        paragraphs: synthetic_matrix(
            vec![paragraph_key("toy", 0), paragraph_key("toy", 1)],
            dim,
            seed,
        ),
        topics: synthetic_matrix(vec!["t0".into(), "t1".into()], dim, seed),
        walk_embeddings: synthetic_matrix(walk_keys, dim, seed),
        transe: EmbeddingTable {
            entities: synthetic_matrix(vec!["e0".into(), "e1".into()], dim, seed),
            relations: synthetic_matrix(vec!["allied".into()], dim, seed),
        },
        corpus,
        kg,
        walks,
    })
}
