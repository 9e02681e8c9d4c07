use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Word-level dependency tree read from CoNLL-U.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    pub tokens: Vec<String>,
    /// 0-based head per token; `None` marks the root.
    pub heads: Vec<Option<usize>>,
    pub deprels: Vec<String>,
    /// 1-based line number of the first word line.
    pub line: usize,
}

/// Checks single root, in-range heads and acyclicity.
pub fn validate_tree(heads: &[Option<usize>]) -> std::result::Result<(), String> {
    let n = heads.len();
    if n == 0 {
        return Err("empty sentence".into());
    }
    let roots = heads.iter().filter(|h| h.is_none()).count();
    if roots != 1 {
        return Err(format!("expected exactly one root, found {roots}"));
    }
    for (i, h) in heads.iter().enumerate() {
        if let Some(h) = *h {
            if h >= n {
                return Err(format!("token {} has out-of-range head {}", i + 1, h + 1));
            }
            if h == i {
                return Err(format!("token {} is its own head", i + 1));
            }
        }
    }
    // With one root and n-1 arcs, acyclic implies connected.
    for start in 0..n {
        let mut cur = start;
        let mut steps = 0;
        while let Some(h) = heads[cur] {
            cur = h;
            steps += 1;
            if steps > n {
                return Err(format!("cycle through token {}", start + 1));
            }
        }
    }
    Ok(())
}

/// Parses CoNLL-U text into word-level trees.
///
/// Multiword ranges (`1-2`) and empty nodes (`1.1`) are skipped.
pub fn parse_conllu(text: &str) -> Result<Vec<Skeleton>> {
    let mut out = Vec::new();
    let mut cur = Skeleton {
        tokens: Vec::new(),
        heads: Vec::new(),
        deprels: Vec::new(),
        line: 0,
    };

    let finish = |cur: &mut Skeleton, out: &mut Vec<Skeleton>, line: usize| -> Result<()> {
        if cur.tokens.is_empty() {
            return Ok(());
        }
        let sentence_no = out.len() + 1;
        validate_tree(&cur.heads).map_err(|msg| Error::Parse {
            line: cur.line,
            msg: format!("sentence {sentence_no}: {msg}"),
        })?;
        let done = std::mem::replace(
            cur,
            Skeleton {
                tokens: Vec::new(),
                heads: Vec::new(),
                deprels: Vec::new(),
                line,
            },
        );
        out.push(done);
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut cur, &mut out, line_no)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("invalid ID `{id}`"),
        })?;
        if id != cur.tokens.len() + 1 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected ID {}, found {id}", cur.tokens.len() + 1),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("non-integer HEAD `{}`", cols[6]),
        })?;
        if cur.tokens.is_empty() {
            cur.line = line_no;
        }
        cur.tokens.push(cols[1].to_string());
        cur.heads.push(head.checked_sub(1));
        cur.deprels.push(cols[7].to_string());
    }
    let end = text.lines().count() + 1;
    finish(&mut cur, &mut out, end)?;
    Ok(out)
}

/// Writes word lines back out in CoNLL-U form. Unknown columns become `_`.
pub fn serialize_conllu(sentences: &[Skeleton]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (i, tok) in s.tokens.iter().enumerate() {
            let head = s.heads[i].map_or(0, |h| h + 1);
            let rel = s.deprels.get(i).map_or("_", String::as_str);
            let _ = writeln!(out, "{}\t{tok}\t_\t_\t_\t_\t{head}\t{rel}\t_\t_", i + 1);
        }
        out.push('\n');
    }
    out
}
