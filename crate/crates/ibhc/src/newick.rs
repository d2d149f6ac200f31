//! Newick reading and writing.
//!
//! Leaves are labelled by dataset index, or by name through a
//! [`LabelTable`]. Branch lengths carry divergence times: the length of the
//! edge above `v` is `t(v) - t(parent)`, and the root's length is its time
//! (the stem sits at 0).

use std::collections::HashMap;
use std::fmt::Write as _;

use ibhc_core::tree::BuildId;
use ibhc_core::{NodeId, Tree, TreeBuilder};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NewickError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown leaf label {label:?} at offset {offset}")]
    UnknownLabel { label: String, offset: usize },
    #[error("leaf label {label:?} appears more than once (offset {offset})")]
    DuplicateLabel { label: String, offset: usize },
    #[error("tree is not binary")]
    NotBinary,
    #[error(transparent)]
    Tree(#[from] ibhc_core::Error),
}

/// Maps leaf labels to dataset indices. Numeric labels are always read as
/// indices; names are looked up first when a table is given.
#[derive(Debug, Clone, Default)]
pub struct LabelTable {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelTable {
    /// Only numeric labels.
    pub fn indices() -> Self {
        Self::default()
    }

    pub fn from_names(names: &[String]) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self {
            names: names.to_vec(),
            index,
        }
    }

    pub fn resolve(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied().or_else(|| label.parse().ok())
    }

    /// Label written for leaf `i`.
    pub fn name(&self, i: usize) -> String {
        self.names.get(i).cloned().unwrap_or_else(|| i.to_string())
    }
}

enum Raw {
    Leaf {
        label: String,
        offset: usize,
        length: Option<f64>,
    },
    Node {
        kids: Vec<Raw>,
        length: Option<f64>,
    },
}

impl Raw {
    fn length(&self) -> Option<f64> {
        match self {
            Raw::Leaf { length, .. } | Raw::Node { length, .. } => *length,
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

const DELIMS: &[u8] = b"()[]':;,";

impl<'a> Parser<'a> {
    fn err<T>(&self, offset: usize, message: impl Into<String>) -> Result<T, NewickError> {
        Err(NewickError::Syntax {
            offset,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn skip_blank(&mut self) -> Result<(), NewickError> {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'[' {
                let start = self.pos;
                match self.src[self.pos..].find(']') {
                    Some(k) => self.pos += k + 1,
                    None => return self.err(start, "unterminated comment"),
                }
            } else {
                break;
            }
        }
        Ok(())
    }

    fn label(&mut self) -> Result<Option<(String, usize)>, NewickError> {
        self.skip_blank()?;
        let start = self.pos;
        if self.peek() == Some(b'\'') {
            self.pos += 1;
            let mut out = String::new();
            loop {
                let rest = &self.src[self.pos..];
                let Some(k) = rest.find('\'') else {
                    return self.err(start, "unterminated quoted label");
                };
                out.push_str(&rest[..k]);
                self.pos += k + 1;
                if self.peek() == Some(b'\'') {
                    out.push('\'');
                    self.pos += 1;
                } else {
                    return Ok(Some((out, start)));
                }
            }
        }
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() || DELIMS.contains(&b) {
                break;
            }
            self.pos += self.src[self.pos..].chars().next().map_or(1, char::len_utf8);
        }
        if self.pos == start {
            Ok(None)
        } else {
            Ok(Some((self.src[start..self.pos].to_string(), start)))
        }
    }

    fn length(&mut self) -> Result<Option<f64>, NewickError> {
        self.skip_blank()?;
        if self.peek() != Some(b':') {
            return Ok(None);
        }
        self.pos += 1;
        self.skip_blank()?;
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        match self.src[start..self.pos].parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => self.err(start, "expected a branch length"),
        }
    }

    fn subtree(&mut self) -> Result<Raw, NewickError> {
        self.skip_blank()?;
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let mut kids = vec![self.subtree()?];
            loop {
                self.skip_blank()?;
                match self.peek() {
                    Some(b',') => {
                        self.pos += 1;
                        kids.push(self.subtree()?);
                    }
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return self.err(self.pos, "expected ',' or ')'"),
                }
            }
            // internal labels are allowed and ignored
            self.label()?;
            let length = self.length()?;
            return Ok(Raw::Node { kids, length });
        }
        match self.label()? {
            Some((label, offset)) => Ok(Raw::Leaf {
                label,
                offset,
                length: self.length()?,
            }),
            None => self.err(self.pos, "expected a leaf label or '('"),
        }
    }
}

fn parse_raw(text: &str) -> Result<Raw, NewickError> {
    let mut p = Parser { src: text, pos: 0 };
    let raw = p.subtree()?;
    p.skip_blank()?;
    if p.peek() != Some(b';') {
        return p.err(p.pos, "expected ';'");
    }
    p.pos += 1;
    p.skip_blank()?;
    if p.pos != text.len() {
        return p.err(p.pos, "trailing input after ';'");
    }
    Ok(raw)
}

/// Whether every edge carries a length and the implied times are usable.
fn times_from_lengths(raw: &Raw) -> bool {
    fn walk(r: &Raw, above: f64) -> bool {
        let Some(len) = r.length() else { return false };
        let t = above + len;
        match r {
            Raw::Leaf { .. } => (t - 1.0).abs() < 1e-6,
            Raw::Node { kids, .. } => len > 0.0 && t < 1.0 && kids.iter().all(|k| walk(k, t)),
        }
    }
    walk(raw, 0.0)
}

fn emit(
    raw: &Raw,
    above: f64,
    timed: bool,
    labels: &LabelTable,
    seen: &mut HashMap<usize, ()>,
    b: &mut TreeBuilder,
) -> Result<BuildId, NewickError> {
    match raw {
        Raw::Leaf { label, offset, .. } => {
            let leaf = labels.resolve(label).ok_or_else(|| NewickError::UnknownLabel {
                label: label.clone(),
                offset: *offset,
            })?;
            if seen.insert(leaf, ()).is_some() {
                return Err(NewickError::DuplicateLabel {
                    label: label.clone(),
                    offset: *offset,
                });
            }
            Ok(b.leaf(leaf))
        }
        Raw::Node { kids, length } => {
            let t = above + length.unwrap_or(0.0);
            if kids.len() == 1 {
                // a unary wrapper carries no cluster information
                return emit(&kids[0], t, timed, labels, seen, b);
            }
            let ids = kids
                .iter()
                .map(|k| emit(k, t, timed, labels, seen, b))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(b.internal(ids, timed.then_some(t)))
        }
    }
}

/// Parses a tree that may be non-binary (for targets). Times come from the
/// branch lengths when every edge has one and they place the leaves at 1;
/// otherwise internal nodes get uniform level spacing.
pub fn parse_target_newick(text: &str, labels: &LabelTable) -> Result<Tree, NewickError> {
    let raw = parse_raw(text)?;
    let timed = times_from_lengths(&raw);
    let mut b = TreeBuilder::new();
    let mut seen = HashMap::new();
    let root = emit(&raw, 0.0, timed, labels, &mut seen, &mut b)?;
    Ok(b.finish(root)?)
}

/// Parses a binary tree, as written by [`to_newick`].
pub fn parse_newick(text: &str, labels: &LabelTable) -> Result<Tree, NewickError> {
    let t = parse_target_newick(text, labels)?;
    if !t.is_binary() {
        return Err(NewickError::NotBinary);
    }
    Ok(t)
}

fn quoted(label: &str) -> String {
    let plain = !label.is_empty()
        && label
            .bytes()
            .all(|b| !b.is_ascii_whitespace() && !DELIMS.contains(&b));
    if plain {
        label.to_string()
    } else {
        format!("'{}'", label.replace('\'', "''"))
    }
}

fn write_node(tree: &Tree, id: NodeId, labels: &LabelTable, internal: Option<&HashMap<NodeId, String>>, out: &mut String) {
    let node = tree.node(id).expect("live node");
    if let Some(l) = node.leaf() {
        out.push_str(&quoted(&labels.name(l)));
    } else {
        out.push('(');
        for (i, &c) in node.children().iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write_node(tree, c, labels, internal, out);
        }
        out.push(')');
        if let Some(name) = internal.and_then(|m| m.get(&id)) {
            out.push_str(name);
        }
    }
    let parent = tree.parent(id).expect("non-stem node has a parent");
    let _ = write!(out, ":{}", node.time() - tree.time(parent));
}

/// Writes `tree` with times as branch lengths, ending in ";".
pub fn to_newick(tree: &Tree, labels: &LabelTable) -> String {
    let mut out = String::new();
    write_node(tree, tree.root(), labels, None, &mut out);
    out.push(';');
    out
}

/// Like [`to_newick`] but internal nodes carry the given labels.
pub fn to_newick_labelled(tree: &Tree, labels: &LabelTable, internal: &HashMap<NodeId, String>) -> String {
    let mut out = String::new();
    write_node(tree, tree.root(), labels, Some(internal), &mut out);
    out.push(';');
    out
}
