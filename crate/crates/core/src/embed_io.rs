//! Embedding matrices, the annotated corpus, and synthetic embeddings.
//!
//! Embedding matrix files start with a header line `n d` followed by `n`
//! lines `key v1 ... vd`. Values are written with 17 significant digits so a
//! write/read cycle is exact.
//!
//! The corpus is JSON lines, one document per line:
//!
//! ```text
//! {"doc_id":"d1","label":0,"fold":3,"paragraphs":[{"text":"...","topic_id":"t4",
//!  "sentiment":"negative","tense_id":2,"quotation":false,"entity_ids":["e7"]}]}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Number of tense categories a paragraph can be annotated with.
pub const TENSE_COUNT: usize = 17;

/// Key of paragraph `index` of document `doc_id` in paragraph embedding files.
pub fn paragraph_key(doc_id: &str, index: usize) -> String {
    format!("{doc_id}/{index}")
}

/// Key of the `j`-th walk of a paragraph in walk embedding files.
pub fn walk_key(doc_id: &str, paragraph: usize, j: usize) -> String {
    format!("{doc_id}/{paragraph}/{j}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    keys: Vec<String>,
    values: Array2<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(keys: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if keys.len() != values.nrows() {
            return Err(Error::Invalid(format!(
                "{} keys for {} embedding rows",
                keys.len(),
                values.nrows()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(
                "embedding contains non-finite values".into(),
            ));
        }
        let mut index = HashMap::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            if k.is_empty() || k.chars().any(char::is_whitespace) {
                return Err(Error::Invalid(format!(
                    "embedding key `{k}` is empty or contains whitespace"
                )));
            }
            if index.insert(k.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate embedding key `{k}`")));
            }
        }
        Ok(EmbeddingMatrix {
            keys,
            values,
            index,
        })
    }

    /// Builds a matrix from `(key, vector)` rows; all vectors must share a length.
    pub fn from_rows(rows: Vec<(String, Vec<f64>)>, dim: usize) -> Result<Self> {
        let mut values = Array2::zeros((rows.len(), dim));
        let mut keys = Vec::with_capacity(rows.len());
        for (i, (k, v)) in rows.into_iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Invalid(format!(
                    "row `{k}` has {} values, expected {dim}",
                    v.len()
                )));
            }
            values.row_mut(i).assign(&Array1::from(v));
            keys.push(k);
        }
        EmbeddingMatrix::new(keys, values)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn position(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<ArrayView1<'_, f64>> {
        self.position(key).map(|i| self.values.row(i))
    }

    pub fn row(&self, key: &str, kind: &'static str) -> Result<ArrayView1<'_, f64>> {
        self.get(key).ok_or_else(|| Error::unknown(kind, key))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing `n d` header"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, 1, format!("bad header `{header}`")))?;
        let [n, d] = dims[..] else {
            return Err(Error::parse(path, 1, format!("bad header `{header}`")));
        };
        let mut keys = Vec::with_capacity(n);
        let mut values = Array2::zeros((n, d));
        let mut seen = HashSet::with_capacity(n);
        for (line_no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row = keys.len();
            if row == n {
                return Err(Error::parse(path, line_no, format!("more than {n} rows")));
            }
            let mut fields = line.split_whitespace();
            let key = fields.next().unwrap_or_default();
            let vals: Vec<f64> = fields
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, line_no, "unparseable value"))?;
            if vals.len() != d {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("row {} has {} values, expected {d}", row + 1, vals.len()),
                ));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(path, line_no, "non-finite value"));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("duplicate key `{key}`"),
                ));
            }
            values.row_mut(row).assign(&Array1::from(vals));
            keys.push(key.to_string());
        }
        if keys.len() != n {
            return Err(Error::parse(
                path,
                text.lines().count(),
                format!("header promises {n} rows, found {}", keys.len()),
            ));
        }
        EmbeddingMatrix::new(keys, values)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 24);
        let _ = writeln!(out, "{} {}", self.len(), self.dim());
        for (k, row) in self.keys.iter().zip(self.values.rows()) {
            out.push_str(k);
            for v in row {
                let _ = write!(out, " {v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
}

impl Sentiment {
    pub fn index(self) -> usize {
        match self {
            Sentiment::Positive => 0,
            Sentiment::Negative => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paragraph {
    pub text: String,
    pub topic_id: String,
    pub sentiment: Sentiment,
    pub tense_id: usize,
    pub quotation: bool,
    pub entity_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub label: usize,
    pub fold: usize,
    pub paragraphs: Vec<Paragraph>,
}

impl DocumentRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.doc_id.is_empty()
            || self
                .doc_id
                .contains(|c: char| c.is_whitespace() || c == '/')
        {
            return Err(format!(
                "doc_id `{}` must be non-empty without whitespace or `/`",
                self.doc_id
            ));
        }
        if self.paragraphs.is_empty() {
            return Err("document has no paragraphs".into());
        }
        for (i, p) in self.paragraphs.iter().enumerate() {
            if p.tense_id >= TENSE_COUNT {
                return Err(format!(
                    "paragraph {i}: tense_id {} out of range 0..{TENSE_COUNT}",
                    p.tense_id
                ));
            }
            if p.topic_id.is_empty() {
                return Err(format!("paragraph {i}: empty topic_id"));
            }
        }
        Ok(())
    }
}

/// A loaded corpus together with the non-fatal issues found while loading.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub docs: Vec<DocumentRecord>,
    pub warnings: Vec<String>,
}

impl Corpus {
    pub fn new(docs: Vec<DocumentRecord>) -> Self {
        Corpus {
            docs,
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Number of documents per label.
    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for d in &self.docs {
            *counts.entry(d.label).or_insert(0) += 1;
        }
        counts
    }

    /// Smallest class count covering every label present.
    pub fn num_classes(&self) -> usize {
        self.docs.iter().map(|d| d.label + 1).max().unwrap_or(0)
    }

    /// Rejects labels outside `0..num_classes`.
    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self.docs.iter().find(|d| d.label >= num_classes) {
            Some(d) => Err(Error::Invalid(format!(
                "doc {}: label {} not below class count {num_classes}",
                d.doc_id, d.label
            ))),
            None => Ok(()),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.docs {
            out.push_str(&serde_json::to_string(d).expect("corpus records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a JSON-lines corpus.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut warnings = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, n, format!("invalid JSON: {e}")))?;
        let doc_id = raw
            .get("doc_id")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::parse(path, n, "missing field `doc_id`"))?;
        let doc: DocumentRecord = serde_json::from_value(raw)
            .map_err(|e| Error::parse(path, n, format!("doc {doc_id}: {e}")))?;
        doc.validate()
            .map_err(|msg| Error::parse(path, n, format!("doc {doc_id}: {msg}")))?;
        if !ids.insert(doc.doc_id.clone()) {
            return Err(Error::parse(
                path,
                n,
                format!("duplicate doc_id `{doc_id}`"),
            ));
        }
        docs.push(doc);
    }
    if docs.is_empty() {
        let msg = format!("{}: corpus is empty", path.display());
        tracing::warn!("{msg}");
        warnings.push(msg);
    } else {
        let counts: Vec<String> = Corpus::new(docs.clone())
            .class_counts()
            .iter()
            .map(|(c, k)| format!("{c}:{k}"))
            .collect();
        tracing::info!(docs = docs.len(), classes = %counts.join(" "), "loaded corpus");
    }
    Ok(Corpus { docs, warnings })
}

/// Verifies that paragraph embedding keys and corpus paragraphs match one to one.
pub fn check_referential_integrity(corpus: &Corpus, paragraphs: &EmbeddingMatrix) -> Result<()> {
    let mut expected = HashSet::new();
    for d in &corpus.docs {
        for i in 0..d.paragraphs.len() {
            let key = paragraph_key(&d.doc_id, i);
            if !paragraphs.contains(&key) {
                return Err(Error::Invalid(format!(
                    "no paragraph embedding for `{key}`"
                )));
            }
            expected.insert(key);
        }
    }
    if let Some(extra) = paragraphs
        .keys()
        .iter()
        .find(|k| !expected.contains(k.as_str()))
    {
        return Err(Error::Invalid(format!(
            "paragraph embedding `{extra}` has no matching corpus paragraph"
        )));
    }
    Ok(())
}

/// Deterministic unit-norm pseudo-random vector for `(key, seed)`.
///
/// Stands in for encoder output where real embeddings are not available.
pub fn synthetic_embedding(key: &str, d: usize, seed: u64) -> Array1<f64> {
    assert!(d >= 1, "embedding dimension must be positive");
    let mut rng = seed::rng(seed, &format!("embedding:{key}"));
    loop {
        let v: Array1<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Word-vector seed of the stand-in encoder used by the synthetic benchmark
/// and by walk regeneration.
pub const TEXT_ENCODER_SEED: u64 = 0x6b63_6400;

/// Deterministic stand-in for a sentence encoder: the normalised mean of
/// the synthetic embeddings of the lower-cased words of `text`. Texts that
/// share words get similar vectors. Empty text maps to the zero vector.
pub fn text_embedding(text: &str, d: usize, seed: u64) -> Array1<f64> {
    let mut sum = Array1::zeros(d);
    for word in text.split_whitespace() {
        let w: String = word
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        if !w.is_empty() {
            sum += &synthetic_embedding(&format!("word:{w}"), d, seed);
        }
    }
    let norm = sum.dot(&sum).sqrt();
    if norm > 1e-12 {
        sum / norm
    } else {
        sum
    }
}

/// Synthetic embeddings for a list of keys.
pub fn synthetic_matrix(keys: Vec<String>, d: usize, seed: u64) -> EmbeddingMatrix {
    let mut values = Array2::zeros((keys.len(), d));
    for (i, k) in keys.iter().enumerate() {
        values.row_mut(i).assign(&synthetic_embedding(k, d, seed));
    }
    EmbeddingMatrix::new(keys, values).expect("synthetic keys are unique")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp(body: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        fs::write(&p, body).unwrap();
        (dir, p)
    }

    #[test]
    fn text_embedding_is_normalised_and_word_based() {
        let a = text_embedding("Donald Trump spoke", 16, 3);
        let b = text_embedding("donald trump, spoke!", 16, 3);
        assert_eq!(a, b);
        assert!((a.dot(&a) - 1.0).abs() < 1e-12);
        let c = text_embedding("budget vote", 16, 3);
        assert!(a.dot(&b) > a.dot(&c));
        assert_eq!(text_embedding("  ", 4, 0), Array1::<f64>::zeros(4));
    }

    #[test]
    fn parses_small_matrix() {
        let (_d, p) = tmp("2 3\na 1 2 3\nb 4 5 6.5\n");
        let m = EmbeddingMatrix::read(&p).unwrap();
        assert_eq!((m.len(), m.dim()), (2, 3));
        assert_eq!(m.get("b").unwrap()[2], 6.5);
    }

    #[test]
    fn short_row_is_reported_with_its_line() {
        let (_d, p) = tmp("2 3\na 1 2 3\nb 4 5\n");
        let err = EmbeddingMatrix::read(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let (_d, p) = tmp("2 1\na 1\na 2\n");
        assert!(EmbeddingMatrix::read(&p).is_err());
    }

    proptest! {
        #[test]
        fn write_read_round_trip_is_exact(vals in proptest::collection::vec(-1e6f64..1e6, 1..24)) {
            let d = 3;
            let n = vals.len() / d;
            prop_assume!(n > 0);
            let values = Array2::from_shape_vec((n, d), vals[..n * d].to_vec()).unwrap();
            let keys = (0..n).map(|i| format!("k{i}")).collect();
            let m = EmbeddingMatrix::new(keys, values).unwrap();
            let back = EmbeddingMatrix::parse(&m.to_text(), Path::new("mem")).unwrap();
            prop_assert_eq!(m, back);
        }
    }

    fn doc_line(tense: usize) -> String {
        format!(
            r#"{{"doc_id":"d1","label":1,"fold":0,"paragraphs":[{{"text":"He said \"no\".","topic_id":"t1","sentiment":"positive","tense_id":{tense},"quotation":true,"entity_ids":["e1"]}}]}}"#
        )
    }

    #[test]
    fn loads_valid_corpus() {
        let (_d, p) = tmp(&(doc_line(3) + "\n"));
        let c = load_corpus(&p).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c.warnings.is_empty());
        assert_eq!(c.docs[0].paragraphs[0].sentiment, Sentiment::Positive);
    }

    #[test]
    fn tense_out_of_range_is_rejected() {
        let (_d, p) = tmp(&doc_line(17));
        let err = load_corpus(&p).unwrap_err();
        assert!(err.to_string().contains("tense_id 17"), "{err}");
    }

    #[test]
    fn missing_annotation_names_doc_and_field() {
        let line = doc_line(2).replace(r#""quotation":true,"#, "");
        let (_d, p) = tmp(&line);
        let err = load_corpus(&p).unwrap_err().to_string();
        assert!(err.contains("d1") && err.contains("quotation"), "{err}");
    }

    #[test]
    fn empty_corpus_warns() {
        let (_d, p) = tmp("");
        let c = load_corpus(&p).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.warnings.len(), 1);
    }

    #[test]
    fn class_summary_matches_fixture_shape() {
        // 645 documents split 407/238, the size of the smaller benchmark
        let para = Paragraph {
            text: String::new(),
            topic_id: "t".into(),
            sentiment: Sentiment::Negative,
            tense_id: 0,
            quotation: false,
            entity_ids: vec![],
        };
        let docs = (0..645)
            .map(|i| DocumentRecord {
                doc_id: format!("d{i}"),
                label: usize::from(i >= 407),
                fold: i % 10,
                paragraphs: vec![para.clone()],
            })
            .collect();
        let corpus = Corpus::new(docs);
        let (_d, p) = tmp(&corpus.to_jsonl());
        let loaded = load_corpus(&p).unwrap();
        assert_eq!(loaded.len(), 645);
        assert_eq!(loaded.num_classes(), 2);
        assert_eq!(loaded.class_counts(), BTreeMap::from([(0, 407), (1, 238)]));
    }

    #[test]
    fn synthetic_embeddings_are_deterministic_unit_vectors() {
        let a = synthetic_embedding("d1/0", 16, 5);
        let b = synthetic_embedding("d1/0", 16, 5);
        let c = synthetic_embedding("d1/1", 16, 5);
        assert_eq!(a, b);
        assert!(a.iter().zip(&c).any(|(x, y)| x != y));
        assert!((a.dot(&a).sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn integrity_check_finds_missing_and_extra_rows() {
        let (_d, p) = tmp(&doc_line(0));
        let corpus = load_corpus(&p).unwrap();
        let ok = synthetic_matrix(vec![paragraph_key("d1", 0)], 4, 1);
        check_referential_integrity(&corpus, &ok).unwrap();
        let extra = synthetic_matrix(vec![paragraph_key("d1", 0), "d9/0".into()], 4, 1);
        assert!(check_referential_integrity(&corpus, &extra).is_err());
        let missing = synthetic_matrix(vec!["d2/0".into()], 4, 1);
        assert!(check_referential_integrity(&corpus, &missing).is_err());
    }
}
