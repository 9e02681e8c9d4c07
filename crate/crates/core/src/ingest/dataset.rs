use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::conllu::{parse_conllu, validate_tree, Skeleton};
use super::embeddings::{load_embeddings, EmbeddingTable};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Neutral,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Positive, Label::Negative, Label::Neutral];

    pub fn index(self) -> usize {
        match self {
            Label::Positive => 0,
            Label::Negative => 1,
            Label::Neutral => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Dataset(format!("unknown label `{s}`")))
    }
}

/// Half-open word interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize, n: usize) -> Result<Self> {
        if end <= start {
            return Err(Error::Dataset(format!(
                "empty aspect span [{start}, {end})"
            )));
        }
        if end > n {
            return Err(Error::Dataset(format!(
                "aspect span [{start}, {end}) out of range for {n} tokens"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..self.end).contains(&i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub heads: Vec<Option<usize>>,
    pub deprels: Vec<String>,
    pub aspect: Span,
    pub label: Label,
}

impl Sentence {
    pub fn new(
        tokens: Vec<String>,
        heads: Vec<Option<usize>>,
        aspect: Span,
        label: Label,
    ) -> Result<Self> {
        if tokens.len() != heads.len() {
            return Err(Error::Dataset("tokens and heads differ in length".into()));
        }
        validate_tree(&heads).map_err(Error::Dataset)?;
        Span::new(aspect.start, aspect.end, tokens.len())?;
        Ok(Self {
            tokens,
            heads,
            deprels: Vec::new(),
            aspect,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn skeleton(&self) -> Skeleton {
        Skeleton {
            tokens: self.tokens.clone(),
            heads: self.heads.clone(),
            deprels: self.deprels.clone(),
            line: 0,
        }
    }

    /// Mean `|i - head(i)|` over non-root arcs; 0 for single-token sentences.
    pub fn dependency_distance(&self) -> f64 {
        let arcs: Vec<f64> = self
            .heads
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.map(|h| i.abs_diff(h) as f64))
            .collect();
        if arcs.is_empty() {
            0.0
        } else {
            arcs.iter().sum::<f64>() / arcs.len() as f64
        }
    }
}

/// One JSONL line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub tokens: Vec<String>,
    pub aspect_span: [usize; 2],
    pub label: String,
}

impl From<&Sentence> for Record {
    fn from(s: &Sentence) -> Self {
        Self {
            tokens: s.tokens.clone(),
            aspect_span: [s.aspect.start, s.aspect.end],
            label: s.label.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Example {
    pub sentence: Sentence,
    /// `n×d` token representations.
    pub embedding: Tensor,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub dim: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::Dataset("dataset is empty".into()))?;
        let dim = first.embedding.cols();
        for (i, ex) in examples.iter().enumerate() {
            if ex.embedding.shape() != (ex.sentence.len(), dim) {
                return Err(Error::Dataset(format!(
                    "example {i}: embedding shape {:?} does not match {} tokens × {dim}",
                    ex.embedding.shape(),
                    ex.sentence.len()
                )));
            }
        }
        Ok(Self { examples, dim })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.examples.iter().map(|e| &e.sentence)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.examples[i].clone()).collect())
    }
}

pub fn parse_records(jsonl: &str) -> Result<Vec<Record>> {
    jsonl
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Joins records with their parses, validating spans, labels and token alignment.
pub fn assemble_sentences(records: &[Record], trees: &[Skeleton]) -> Result<Vec<Sentence>> {
    if records.len() != trees.len() {
        return Err(Error::Dataset(format!(
            "alignment error: {} JSONL records but {} CoNLL-U sentences",
            records.len(),
            trees.len()
        )));
    }
    records
        .iter()
        .zip(trees)
        .enumerate()
        .map(|(i, (rec, tree))| {
            if rec.tokens != tree.tokens {
                return Err(Error::Dataset(format!(
                    "record {i}: tokens differ from the CoNLL-U FORM column"
                )));
            }
            let aspect = Span::new(rec.aspect_span[0], rec.aspect_span[1], rec.tokens.len())
                .map_err(|e| Error::Dataset(format!("record {i}: {e}")))?;
            let label: Label = rec.label.parse()?;
            Ok(Sentence {
                tokens: tree.tokens.clone(),
                heads: tree.heads.clone(),
                deprels: tree.deprels.clone(),
                aspect,
                label,
            })
        })
        .collect()
}

pub fn attach_embeddings(sentences: Vec<Sentence>, table: &EmbeddingTable) -> Result<Dataset> {
    if let Some(count) = table.sentence_count() {
        if count != sentences.len() {
            return Err(Error::Dataset(format!(
                "alignment error: {count} embedding blocks for {} sentences",
                sentences.len()
            )));
        }
    }
    let examples = sentences
        .into_iter()
        .enumerate()
        .map(|(i, sentence)| {
            let embedding = table.resolve(i, &sentence.tokens)?;
            Ok(Example {
                sentence,
                embedding,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(examples)
}

pub fn load_sentences(jsonl: &Path, conllu: &Path) -> Result<Vec<Sentence>> {
    let records = parse_records(&std::fs::read_to_string(jsonl)?)?;
    let trees = parse_conllu(&std::fs::read_to_string(conllu)?)?;
    assemble_sentences(&records, &trees)
}

pub fn load_dataset(jsonl: &Path, conllu: &Path, embeddings: &Path) -> Result<Dataset> {
    let sentences = load_sentences(jsonl, conllu)?;
    let table = load_embeddings(embeddings)?;
    attach_embeddings(sentences, &table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Distribution of per-sentence dependency distance (population std).
pub fn dd_stats<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Result<DdStats> {
    let dds: Vec<f64> = sentences
        .into_iter()
        .map(Sentence::dependency_distance)
        .collect();
    if dds.is_empty() {
        return Err(Error::Dataset("statistics of an empty dataset".into()));
    }
    let n = dds.len() as f64;
    let mean = dds.iter().sum::<f64>() / n;
    let var = dds.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok(DdStats {
        mean,
        std: var.sqrt(),
        min: dds.iter().copied().fold(f64::INFINITY, f64::min),
        max: dds.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

pub fn dataset_dd_stats(d: &Dataset) -> Result<DdStats> {
    dd_stats(d.sentences())
}
