//! Line-oriented file formats: triplet lists, chain traces and query logs.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ibhc_core::Triplet;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn line_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Line {
        line,
        message: message.into(),
    }
}

/// Parses `"a b | c"`.
pub fn parse_triplet(text: &str) -> Result<Triplet, String> {
    let (left, right) = text.split_once('|').ok_or("expected 'a b | c'")?;
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("not a leaf index: {s:?}"));
    let pair: Vec<&str> = left.split_whitespace().collect();
    let out: Vec<&str> = right.split_whitespace().collect();
    if pair.len() != 2 || out.len() != 1 {
        return Err("expected two indices before '|' and one after".into());
    }
    Triplet::new(num(pair[0])?, num(pair[1])?, num(out[0])?).map_err(|e| e.to_string())
}

pub fn format_triplet(t: &Triplet) -> String {
    let (a, b) = t.pair();
    format!("{a} {b} | {}", t.outgroup())
}

/// Reads a triplet file: one `a b | c` per line, `#` starts a comment.
pub fn parse_triplets(text: &str) -> Result<Vec<Triplet>, FormatError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse_triplet(line).map_err(|m| line_err(i + 1, m))?);
    }
    Ok(out)
}

pub fn write_triplets<'a>(w: &mut impl Write, ts: impl IntoIterator<Item = &'a Triplet>) -> std::io::Result<()> {
    for t in ts {
        writeln!(w, "{}", format_triplet(t))?;
    }
    Ok(())
}

/// One chain snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u64,
    pub log_prior: f64,
    pub log_likelihood: f64,
    pub newick: String,
}

/// A user's reply to a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Accept,
    Triplet(Triplet),
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Accept => f.write_str("accept"),
            Answer::Triplet(t) => f.write_str(&format_triplet(t)),
        }
    }
}

impl FromStr for Answer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim() == "accept" {
            Ok(Answer::Accept)
        } else {
            parse_triplet(s).map(Answer::Triplet)
        }
    }
}

impl Serialize for Answer {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Answer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One posed query and its answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_index: usize,
    pub scheme_turn: String,
    pub subset: Vec<usize>,
    pub answer: Answer,
}

pub fn write_jsonl<'a, T: Serialize + 'a>(w: &mut impl Write, records: impl IntoIterator<Item = &'a T>) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(r: impl BufRead) -> Result<Vec<T>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| line_err(i + 1, e.to_string()))?);
    }
    Ok(out)
}
