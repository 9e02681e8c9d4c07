//! Separable toy data for end-to-end runs.
//!
//! Each sentence has a single-token aspect. A polarity word hangs directly
//! off the aspect and carries its class direction; a distractor carrying a
//! different class direction sits six arcs away. Everything else is noise.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::ingest::{
    serialize_conllu, write_otev1, Dataset, Example, Label, Record, Sentence, Span,
};
use crate::tensor::Tensor;
use crate::training::ModelConfig;

/// Arcs between the aspect and the distractor.
pub const DISTRACTOR_DISTANCE: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub sentences: usize,
    pub dim: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Length of the class direction added to polarity and distractor words.
    pub signal: f64,
    /// Seed for the class directions, shared between splits.
    pub world_seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            sentences: 200,
            dim: 32,
            min_tokens: 8,
            max_tokens: 12,
            signal: 4.0,
            world_seed: 0,
        }
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Unit class directions drawn from `world_seed`.
pub fn class_directions(dim: usize, world_seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(world_seed);
    (0..3)
        .map(|_| unit(normal_vec(&mut rng, dim, 1.0)))
        .collect()
}

/// Training settings that fit the toy set within 50 epochs.
pub fn toy_config(seed: u64) -> ModelConfig {
    ModelConfig {
        lr: 3e-3,
        batch_size: 16,
        epochs: 50,
        seed,
        ..ModelConfig::default()
    }
}

const POLARITY_WORDS: [&str; 3] = ["good", "bad", "okay"];

/// Draws `spec.sentences` examples from `seed`.
pub fn generate(spec: &ToySpec, seed: u64) -> Result<Dataset> {
    assert!(spec.min_tokens >= DISTRACTOR_DISTANCE + 2 && spec.max_tokens >= spec.min_tokens);
    let dirs = class_directions(spec.dim, spec.world_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = 1.0 / (spec.dim as f64).sqrt();
    let mut examples = Vec::with_capacity(spec.sentences);

    for _ in 0..spec.sentences {
        let n = rng.gen_range(spec.min_tokens..=spec.max_tokens);
        let label = Label::from_index(rng.gen_range(0..3)).expect("three classes");
        let other =
            Label::from_index((label.index() + rng.gen_range(1..3)) % 3).expect("three classes");

        // Nodes: 0 aspect, 1 polarity, 2..=7 backbone ending in the distractor.
        let mut edges: Vec<(usize, usize)> = vec![(0, 1), (0, 2)];
        for k in 2..DISTRACTOR_DISTANCE + 1 {
            edges.push((k, k + 1));
        }
        let distractor = DISTRACTOR_DISTANCE + 1;
        for k in distractor + 1..n {
            let attach = rng.gen_range(0..k);
            edges.push((attach, k));
        }

        let root = rng.gen_range(0..n);
        let mut parent: Vec<Option<usize>> = vec![None; n];
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::from([root]);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            for &(a, b) in &edges {
                let v = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some(u);
                    queue.push_back(v);
                }
            }
        }

        let mut position: Vec<usize> = (0..n).collect();
        position.shuffle(&mut rng);
        let mut heads = vec![None; n];
        let mut tokens = vec![String::new(); n];
        let mut rows = vec![Vec::new(); n];
        for node in 0..n {
            let pos = position[node];
            heads[pos] = parent[node].map(|p| position[p]);
            let mut v = normal_vec(&mut rng, spec.dim, noise);
            let (token, class) = match node {
                0 => ("aspect".to_string(), None),
                1 => (POLARITY_WORDS[label.index()].to_string(), Some(label)),
                d if d == distractor => (POLARITY_WORDS[other.index()].to_string(), Some(other)),
                k => (format!("w{k}"), None),
            };
            if let Some(c) = class {
                for (x, y) in v.iter_mut().zip(&dirs[c.index()]) {
                    *x += spec.signal * y;
                }
            }
            tokens[pos] = token;
            rows[pos] = v;
        }

        let aspect = Span::new(position[0], position[0] + 1, n)?;
        let mut sentence = Sentence::new(tokens, heads, aspect, label)?;
        sentence.deprels = sentence
            .heads
            .iter()
            .map(|h| if h.is_some() { "dep" } else { "root" }.to_string())
            .collect();
        examples.push(Example {
            sentence,
            embedding: Tensor::from_rows(&rows)?,
        });
    }
    Dataset::new(examples)
}

/// Writes `data.jsonl`, `trees.conllu` and `embeddings.otev` into `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut jsonl = String::new();
    for s in dataset.sentences() {
        jsonl.push_str(&serde_json::to_string(&Record::from(s))?);
        jsonl.push('\n');
    }
    std::fs::write(dir.join("data.jsonl"), jsonl)?;
    let trees: Vec<_> = dataset.sentences().map(Sentence::skeleton).collect();
    std::fs::write(dir.join("trees.conllu"), serialize_conllu(&trees))?;
    let blocks: Vec<Tensor> = dataset
        .examples
        .iter()
        .map(|e| e.embedding.clone())
        .collect();
    let mut file = std::io::BufWriter::new(std::fs::File::create(dir.join("embeddings.otev"))?);
    write_otev1(&mut file, dataset.dim, &blocks)?;
    file.flush()?;
    Ok(())
}
