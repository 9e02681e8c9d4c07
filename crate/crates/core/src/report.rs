//! CSV input and the text reports written by the command-line tool.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{dd_stats, Example, Label, Sentence};
use crate::syngraph::DistanceMatrix;
use crate::tensor::{Tape, Tensor};
use crate::training::{prepare, Metrics, Model, ModelConfig, ModelParams};

/// Decimal places for every float written to CSV.
pub const CSV_DECIMALS: usize = 10;

fn fmt(v: f64) -> String {
    format!("{v:.CSV_DECIMALS$}")
}

/// Reads a headerless numeric CSV. Blank lines and `#` comments are skipped.
pub fn parse_matrix_csv(text: &str) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("not a number: `{f}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "empty matrix".into(),
        });
    }
    Tensor::from_rows(&rows)
}

pub fn read_matrix_csv(path: &Path) -> Result<Tensor> {
    parse_matrix_csv(&std::fs::read_to_string(path)?)
}

pub fn matrix_csv(t: &Tensor) -> String {
    let mut s = String::new();
    for i in 0..t.rows() {
        let row: Vec<String> = t.row_slice(i).iter().map(|&v| fmt(v)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// `index:token` labels, unique even when tokens repeat.
pub fn token_labels(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{i}:{t}"))
        .collect()
}

/// Matrix with a header row of column labels and a label column.
pub fn labelled_csv(
    corner: &str,
    rows: &[String],
    cols: &[String],
    values: impl Fn(usize, usize) -> String,
) -> String {
    let mut s = quote(corner);
    for c in cols {
        s.push(',');
        s.push_str(&quote(c));
    }
    s.push('\n');
    for (i, r) in rows.iter().enumerate() {
        s.push_str(&quote(r));
        for j in 0..cols.len() {
            s.push(',');
            s.push_str(&values(i, j));
        }
        s.push('\n');
    }
    s
}

/// Label counts and dependency-distance summary of a corpus.
pub fn stats_csv(sentences: &[Sentence]) -> Result<String> {
    let dd = dd_stats(sentences)?;
    let mut counts = [0usize; 3];
    for s in sentences {
        counts[s.label.index()] += 1;
    }
    let mut out = String::from(
        "sentences,positive,negative,neutral,tokens_mean,dd_mean,dd_std,dd_min,dd_max\n",
    );
    let tokens = sentences.iter().map(Sentence::len).sum::<usize>() as f64 / sentences.len() as f64;
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{}",
        sentences.len(),
        counts[0],
        counts[1],
        counts[2],
        fmt(tokens),
        fmt(dd.mean),
        fmt(dd.std),
        fmt(dd.min),
        fmt(dd.max)
    );
    Ok(out)
}

pub fn metrics_text(m: &Metrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "examples  {}", m.total());
    let _ = writeln!(s, "accuracy  {:.4}", m.accuracy);
    let _ = writeln!(s, "macro_f1  {:.4}", m.macro_f1);
    let _ = writeln!(s, "class     precision  recall  f1");
    for l in Label::ALL {
        let c = l.index();
        let _ = writeln!(
            s,
            "{:<9} {:.4}     {:.4}  {:.4}",
            l.as_str(),
            m.precision[c],
            m.recall[c],
            m.f1[c]
        );
    }
    s
}

/// Detached attention maps of one sentence under trained parameters.
#[derive(Debug, Clone)]
pub struct AttentionMaps {
    pub tokens: Vec<String>,
    pub distances: DistanceMatrix,
    /// Per-head syntactic attention; empty when that channel is ablated.
    pub sgaa: Vec<Tensor>,
    /// `n×p`: transport weight of each token under each head.
    pub ot: Option<Tensor>,
    pub fused: Tensor,
    pub beta: f64,
}

pub fn attention_maps(
    config: &ModelConfig,
    params: &ModelParams,
    example: &Example,
) -> Result<AttentionMaps> {
    let model = Model::new(config)?;
    let prepared = prepare(example, config)?;
    let tape = Tape::new();
    let pv = params.on_tape(&tape, false);
    let out = model.forward(&pv, example, &prepared, None)?;
    let ot = if out.a_ot.is_empty() {
        None
    } else {
        let cols: Vec<Tensor> = out.a_ot.iter().map(|v| v.value()).collect();
        Some(Tensor::from_fn(
            example.sentence.len(),
            cols.len(),
            |i, k| cols[k][(i, 0)],
        ))
    };
    Ok(AttentionMaps {
        tokens: example.sentence.tokens.clone(),
        distances: prepared.distances,
        sgaa: out.a_sg.iter().map(|v| v.value()).collect(),
        ot,
        fused: out.fused.value(),
        beta: model.effective_beta(params),
    })
}

impl AttentionMaps {
    /// File name and contents of every CSV in an `attn` dump.
    pub fn csv_files(&self) -> Vec<(String, String)> {
        let labels = token_labels(&self.tokens);
        let square = |t: &Tensor| labelled_csv("token", &labels, &labels, |i, j| fmt(t[(i, j)]));
        let mut files = vec![(
            "distances.csv".to_string(),
            labelled_csv("token", &labels, &labels, |i, j| {
                self.distances.get(i, j).to_string()
            }),
        )];
        for (k, a) in self.sgaa.iter().enumerate() {
            files.push((format!("sgaa_head{}.csv", k + 1), square(a)));
        }
        if !self.sgaa.is_empty() {
            let n = self.tokens.len();
            let mean = Tensor::from_fn(n, n, |i, j| {
                self.sgaa.iter().map(|a| a[(i, j)]).sum::<f64>() / self.sgaa.len() as f64
            });
            files.push(("sgaa_mean.csv".to_string(), square(&mean)));
        }
        if let Some(ot) = &self.ot {
            let heads: Vec<String> = (1..=ot.cols()).map(|k| format!("head{k}")).collect();
            files.push((
                "ot.csv".to_string(),
                labelled_csv("token", &labels, &heads, |i, k| fmt(ot[(i, k)])),
            ));
        }
        files.push(("fused.csv".to_string(), square(&self.fused)));
        files
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, text) in self.csv_files() {
            std::fs::write(dir.join(name), text)?;
        }
        Ok(())
    }
}
