use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const OTEV1_MAGIC: &[u8; 6] = b"OTEV1\0";

#[derive(Debug, Clone)]
enum Vectors {
    /// One `tokens×dim` block per sentence, in dataset order.
    Contextual(Vec<Tensor>),
    /// Static token → vector lookup.
    Words(HashMap<String, Vec<f64>>),
}

/// Token representations feeding the model, one row per word.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: Vectors,
}

impl EmbeddingTable {
    pub fn contextual(dim: usize, blocks: Vec<Tensor>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dataset(
                "embedding dimension must be positive".into(),
            ));
        }
        for (s, block) in blocks.iter().enumerate() {
            if block.cols() != dim {
                return Err(Error::Dataset(format!(
                    "sentence {s} has dimension {}, expected {dim}",
                    block.cols()
                )));
            }
            for r in 0..block.rows() {
                if block.row_slice(r).iter().all(|&v| v == 0.0) {
                    return Err(Error::Degenerate(format!(
                        "sentence {s} token {r} is a zero vector"
                    )));
                }
            }
        }
        Ok(Self {
            dim,
            vectors: Vectors::Contextual(blocks),
        })
    }

    pub fn words(dim: usize, words: HashMap<String, Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dataset(
                "embedding dimension must be positive".into(),
            ));
        }
        for (w, v) in &words {
            if v.len() != dim {
                return Err(Error::Dataset(format!(
                    "word `{w}` has dimension {}",
                    v.len()
                )));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::Degenerate(format!("word `{w}` is a zero vector")));
            }
        }
        Ok(Self {
            dim,
            vectors: Vectors::Words(words),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of per-sentence blocks, or `None` in word mode.
    pub fn sentence_count(&self) -> Option<usize> {
        match &self.vectors {
            Vectors::Contextual(b) => Some(b.len()),
            Vectors::Words(_) => None,
        }
    }

    /// `tokens.len()×dim` matrix for sentence `index`.
    pub fn resolve(&self, index: usize, tokens: &[String]) -> Result<Tensor> {
        match &self.vectors {
            Vectors::Contextual(blocks) => {
                let block = blocks
                    .get(index)
                    .ok_or_else(|| Error::Dataset(format!("no embeddings for sentence {index}")))?;
                if block.rows() != tokens.len() {
                    return Err(Error::Dataset(format!(
                        "sentence {index}: {} embedding rows for {} tokens",
                        block.rows(),
                        tokens.len()
                    )));
                }
                Ok(block.clone())
            }
            Vectors::Words(map) => {
                let mut data = Vec::with_capacity(tokens.len() * self.dim);
                for tok in tokens {
                    let v = map
                        .get(tok)
                        .or_else(|| map.get(&tok.to_lowercase()))
                        .ok_or_else(|| {
                            Error::Dataset(format!(
                                "sentence {index}: missing embedding for `{tok}`"
                            ))
                        })?;
                    data.extend_from_slice(v);
                }
                Tensor::new(tokens.len(), self.dim, data)
            }
        }
    }
}

fn read_u32(bytes: &[u8], offset: &mut usize) -> Result<u32> {
    let end = *offset + 4;
    let chunk = bytes.get(*offset..end).ok_or_else(|| Error::Format {
        offset: *offset,
        msg: "truncated header".into(),
    })?;
    *offset = end;
    Ok(u32::from_le_bytes(chunk.try_into().expect("4 bytes")))
}

/// Decodes the binary per-sentence format.
pub fn parse_otev1(bytes: &[u8]) -> Result<EmbeddingTable> {
    if bytes.len() < OTEV1_MAGIC.len() || &bytes[..OTEV1_MAGIC.len()] != OTEV1_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "magic mismatch, expected OTEV1".into(),
        });
    }
    let mut offset = OTEV1_MAGIC.len();
    let count = read_u32(bytes, &mut offset)? as usize;
    let dim_offset = offset;
    let dim = read_u32(bytes, &mut offset)? as usize;
    if dim == 0 {
        return Err(Error::Format {
            offset: dim_offset,
            msg: "dimension must be positive".into(),
        });
    }
    let mut blocks = Vec::with_capacity(count);
    for s in 0..count {
        let tokens = read_u32(bytes, &mut offset)? as usize;
        let need = tokens * dim * 4;
        let payload = bytes.get(offset..offset + need).ok_or_else(|| Error::Format {
            offset: bytes.len(),
            msg: format!(
                "truncated payload for sentence {s}: need {need} bytes from offset {offset}, have {}",
                bytes.len() - offset.min(bytes.len())
            ),
        })?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        for r in 0..tokens {
            if data[r * dim..(r + 1) * dim].iter().all(|&v| v == 0.0) {
                return Err(Error::Format {
                    offset: offset + r * dim * 4,
                    msg: format!("sentence {s} token {r} is a zero vector"),
                });
            }
        }
        offset += need;
        blocks.push(Tensor::new(tokens, dim, data)?);
    }
    if offset != bytes.len() {
        return Err(Error::Format {
            offset,
            msg: "trailing bytes after last sentence".into(),
        });
    }
    EmbeddingTable::contextual(dim, blocks)
}

pub fn write_otev1(mut w: impl Write, dim: usize, blocks: &[Tensor]) -> Result<()> {
    w.write_all(OTEV1_MAGIC)?;
    w.write_all(&(blocks.len() as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for b in blocks {
        w.write_all(&(b.rows() as u32).to_le_bytes())?;
        for &v in b.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Parses `<count> <dim>` followed by `<token> <f1> ... <fd>` lines.
pub fn parse_word_vectors(text: &str) -> Result<EmbeddingTable> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str| s.parse::<usize>().ok();
    let (count, dim) = match fields.as_slice() {
        [c, d] => parse_usize(c).zip(parse_usize(d)).ok_or(Error::Parse {
            line: 1,
            msg: "header must be `<count> <dim>`".into(),
        })?,
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "header must be `<count> <dim>`".into(),
            })
        }
    };
    if dim == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "dimension must be positive".into(),
        });
    }
    let mut words = HashMap::with_capacity(count);
    for (idx, line) in lines {
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line").to_string();
        let values: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: idx + 1,
                msg: format!("bad float: {e}"),
            })?;
        if values.len() != dim {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected {dim} values, found {}", values.len()),
            });
        }
        words.insert(token, values);
    }
    if words.len() != count {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header declares {count} vectors, found {}", words.len()),
        });
    }
    EmbeddingTable::words(dim, words)
}

/// Loads either format, picking by the leading magic bytes.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(OTEV1_MAGIC) {
        return parse_otev1(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::Format {
        offset: 0,
        msg: "neither OTEV1 nor UTF-8 word vectors".into(),
    })?;
    parse_word_vectors(&text)
}
