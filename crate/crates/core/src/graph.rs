// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
// License for the specific language governing permissions and limitations
// under the License.

//! Directed, unweighted graphs and the two text formats they are read from.
//!
//! Node ids are dense (`0..n`). Whatever the input called a node is kept as
//! its label so reports can speak the dataset's language.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: expected `source target`, found {found} token(s)")]
    MalformedLine { line: usize, found: usize },
    #[error("duplicate arc {src} -> {dst}{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    DuplicateArc {
        src: String,
        dst: String,
        line: Option<usize>,
    },
    #[error("GML line {line}: {msg}")]
    Gml { line: usize, msg: String },
    #[error("edge references unknown node id {0}")]
    UnknownNode(i64),
    #[error("arc endpoint {id} out of range for {n} nodes")]
    NodeOutOfRange { id: usize, n: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An immutable directed graph with binary adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    node_count: usize,
    links: Vec<(usize, usize)>,
    out_degree: Vec<usize>,
    in_degree: Vec<usize>,
    // sorted successor lists; `has_arc` binary-searches these
    successors: Vec<Vec<usize>>,
    node_labels: Vec<String>,
}

impl DirectedGraph {
    /// Builds a graph from dense-id arcs. Labels default to the ids.
    pub fn from_arcs(node_count: usize, arcs: &[(usize, usize)]) -> Result<Self, GraphError> {
        let labels = (0..node_count).map(|i| i.to_string()).collect();
        Self::build(node_count, arcs.iter().map(|&a| (a, None)), labels)
    }

    fn build(
        node_count: usize,
        arcs: impl IntoIterator<Item = ((usize, usize), Option<usize>)>,
        node_labels: Vec<String>,
    ) -> Result<Self, GraphError> {
        debug_assert_eq!(node_labels.len(), node_count);
        let mut successors = vec![Vec::new(); node_count];
        let mut links = Vec::new();
        for ((src, dst), line) in arcs {
            for id in [src, dst] {
                if id >= node_count {
                    return Err(GraphError::NodeOutOfRange { id, n: node_count });
                }
            }
            match successors[src].binary_search(&dst) {
                Ok(_) => {
                    return Err(GraphError::DuplicateArc {
                        src: node_labels[src].clone(),
                        dst: node_labels[dst].clone(),
                        line,
                    })
                }
                Err(pos) => successors[src].insert(pos, dst),
            }
            links.push((src, dst));
        }
        let mut out_degree = vec![0; node_count];
        let mut in_degree = vec![0; node_count];
        for &(s, d) in &links {
            out_degree[s] += 1;
            in_degree[d] += 1;
        }
        Ok(Self {
            node_count,
            links,
            out_degree,
            in_degree,
            successors,
            node_labels,
        })
    }

    /// Parses a whitespace-separated `src dst` list. `#` starts a comment
    /// line; blank lines are skipped. Labels get dense ids in order of first
    /// appearance.
    pub fn from_edge_list<R: BufRead>(reader: R) -> Result<Self, GraphError> {
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut labels = Vec::new();
        let mut arcs = Vec::new();
        let mut intern = |tok: &str, labels: &mut Vec<String>| -> usize {
            *ids.entry(tok.to_owned()).or_insert_with(|| {
                labels.push(tok.to_owned());
                labels.len() - 1
            })
        };
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = trimmed.split_whitespace().collect();
            if tokens.len() != 2 {
                return Err(GraphError::MalformedLine {
                    line: idx + 1,
                    found: tokens.len(),
                });
            }
            let s = intern(tokens[0], &mut labels);
            let d = intern(tokens[1], &mut labels);
            arcs.push(((s, d), Some(idx + 1)));
        }
        Self::build(labels.len(), arcs, labels)
    }

    pub fn from_edge_list_str(text: &str) -> Result<Self, GraphError> {
        Self::from_edge_list(text.as_bytes())
    }

    /// Parses the GML subset `graph [ directed 0|1 node [ id N ] edge [ source A target B ] ]`.
    /// Undirected input (or a missing `directed` key) yields reciprocal arcs.
    pub fn from_gml(text: &str) -> Result<Self, GraphError> {
        gml::parse(text)
    }

    /// Reads a file, choosing the parser by extension (`.gml` or edge list).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let is_gml = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("gml"));
        if is_gml {
            Self::from_gml(&text)
        } else {
            Self::from_edge_list_str(&text)
        }
    }

    /// Serializes to the edge-list format, one arc per line, using labels.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for &(s, d) in &self.links {
            let _ = writeln!(out, "{} {}", self.node_labels[s], self.node_labels[d]);
        }
        out
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Number of arcs, `m`.
    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[(usize, usize)] {
        &self.links
    }

    pub fn out_degree(&self) -> &[usize] {
        &self.out_degree
    }

    pub fn in_degree(&self) -> &[usize] {
        &self.in_degree
    }

    pub fn successors(&self, node: usize) -> &[usize] {
        &self.successors[node]
    }

    pub fn node_labels(&self) -> &[String] {
        &self.node_labels
    }

    pub fn label(&self, node: usize) -> &str {
        &self.node_labels[node]
    }

    /// Dense id of the node carrying `label`, if any.
    pub fn node_by_label(&self, label: &str) -> Option<usize> {
        self.node_labels.iter().position(|l| l == label)
    }

    /// `A_ij`. Panics when either id is out of range.
    pub fn has_arc(&self, i: usize, j: usize) -> bool {
        assert!(
            i < self.node_count && j < self.node_count,
            "node id out of range: ({i}, {j}) with n = {}",
            self.node_count
        );
        self.successors[i].binary_search(&j).is_ok()
    }
}

mod gml {
    use super::{DirectedGraph, GraphError};
    use std::collections::HashMap;

    #[derive(Debug, Clone, PartialEq)]
    enum Token {
        Open,
        Close,
        Key(String),
        Int(i64),
        Float,
        Str(String),
    }

    #[derive(Debug)]
    enum Value {
        Int(i64),
        Other,
        Str(String),
        List(Vec<(String, Value, usize)>),
    }

    fn err(line: usize, msg: impl Into<String>) -> GraphError {
        GraphError::Gml {
            line,
            msg: msg.into(),
        }
    }

    fn tokenize(text: &str) -> Result<Vec<(Token, usize)>, GraphError> {
        let mut out = Vec::new();
        let mut chars = text.chars().peekable();
        let mut line = 1;
        while let Some(&c) = chars.peek() {
            match c {
                '\n' => {
                    line += 1;
                    chars.next();
                }
                c if c.is_whitespace() => {
                    chars.next();
                }
                '#' => {
                    while chars.peek().is_some_and(|&c| c != '\n') {
                        chars.next();
                    }
                }
                '[' => {
                    chars.next();
                    out.push((Token::Open, line));
                }
                ']' => {
                    chars.next();
                    out.push((Token::Close, line));
                }
                '"' => {
                    chars.next();
                    let start = line;
                    let mut s = String::new();
                    loop {
                        match chars.next() {
                            Some('"') => break,
                            Some(ch) => {
                                if ch == '\n' {
                                    line += 1;
                                }
                                s.push(ch);
                            }
                            None => return Err(err(start, "unterminated string")),
                        }
                    }
                    out.push((Token::Str(s), start));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let mut s = String::new();
                    while let Some(&ch) = chars.peek() {
                        if ch.is_ascii_alphanumeric() || ch == '_' {
                            s.push(ch);
                            chars.next();
                        } else {
                            break;
                        }
                    }
                    out.push((Token::Key(s), line));
                }
                c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                    let mut s = String::new();
                    while let Some(&ch) = chars.peek() {
                        if ch.is_ascii_alphanumeric() || "+-.".contains(ch) {
                            s.push(ch);
                            chars.next();
                        } else {
                            break;
                        }
                    }
                    if let Ok(v) = s.parse::<i64>() {
                        out.push((Token::Int(v), line));
                    } else if s.parse::<f64>().is_ok() {
                        out.push((Token::Float, line));
                    } else {
                        return Err(err(line, format!("bad number `{s}`")));
                    }
                }
                other => return Err(err(line, format!("unexpected character `{other}`"))),
            }
        }
        Ok(out)
    }

    fn parse_list(
        tokens: &[(Token, usize)],
        pos: &mut usize,
        nested: bool,
    ) -> Result<Vec<(String, Value, usize)>, GraphError> {
        let mut items = Vec::new();
        loop {
            let Some((tok, line)) = tokens.get(*pos) else {
                if nested {
                    let line = tokens.last().map_or(1, |t| t.1);
                    return Err(err(line, "missing `]`"));
                }
                return Ok(items);
            };
            *pos += 1;
            let key = match tok {
                Token::Close if nested => return Ok(items),
                Token::Key(k) => k.clone(),
                other => return Err(err(*line, format!("expected a key, found {other:?}"))),
            };
            let Some((vtok, vline)) = tokens.get(*pos) else {
                return Err(err(*line, format!("key `{key}` has no value")));
            };
            *pos += 1;
            let value = match vtok {
                Token::Int(v) => Value::Int(*v),
                Token::Float => Value::Other,
                Token::Str(s) => Value::Str(s.clone()),
                Token::Open => Value::List(parse_list(tokens, pos, true)?),
                other => return Err(err(*vline, format!("bad value for `{key}`: {other:?}"))),
            };
            items.push((key, value, *line));
        }
    }

    fn int_field(items: &[(String, Value, usize)], key: &str, line: usize) -> Result<i64, GraphError> {
        match items.iter().find(|(k, _, _)| k == key) {
            Some((_, Value::Int(v), _)) => Ok(*v),
            Some((_, _, l)) => Err(err(*l, format!("`{key}` must be an integer"))),
            None => Err(err(line, format!("missing `{key}`"))),
        }
    }

    pub(super) fn parse(text: &str) -> Result<DirectedGraph, GraphError> {
        let tokens = tokenize(text)?;
        let mut pos = 0;
        let top = parse_list(&tokens, &mut pos, false)?;
        let mut graphs = top.iter().filter(|(k, _, _)| k == "graph");
        let Some((_, graph, gline)) = graphs.next() else {
            return Err(err(1, "no `graph [ ... ]` block"));
        };
        if let Some((_, _, l)) = graphs.next() {
            return Err(err(*l, "more than one `graph` block"));
        }
        let Value::List(items) = graph else {
            return Err(err(*gline, "`graph` must be a list"));
        };

        let directed = match items.iter().find(|(k, _, _)| k == "directed") {
            None => false,
            Some((_, Value::Int(0), _)) => false,
            Some((_, Value::Int(1), _)) => true,
            Some((_, _, l)) => return Err(err(*l, "`directed` must be 0 or 1")),
        };

        let mut ids: HashMap<i64, usize> = HashMap::new();
        let mut labels = Vec::new();
        for (key, value, line) in items {
            if key != "node" {
                continue;
            }
            let Value::List(fields) = value else {
                return Err(err(*line, "`node` must be a list"));
            };
            let id = int_field(fields, "id", *line)?;
            if ids.insert(id, labels.len()).is_some() {
                return Err(err(*line, format!("duplicate node id {id}")));
            }
            let label = match fields.iter().find(|(k, _, _)| k == "label") {
                Some((_, Value::Str(s), _)) => s.clone(),
                _ => id.to_string(),
            };
            labels.push(label);
        }

        let mut arcs = Vec::new();
        for (key, value, line) in items {
            if key != "edge" {
                continue;
            }
            let Value::List(fields) = value else {
                return Err(err(*line, "`edge` must be a list"));
            };
            let src = int_field(fields, "source", *line)?;
            let dst = int_field(fields, "target", *line)?;
            let s = *ids.get(&src).ok_or(GraphError::UnknownNode(src))?;
            let d = *ids.get(&dst).ok_or(GraphError::UnknownNode(dst))?;
            arcs.push(((s, d), Some(*line)));
            if !directed && s != d {
                arcs.push(((d, s), Some(*line)));
            }
        }
        for (key, value, line) in items {
            match (key.as_str(), value) {
                ("node" | "edge" | "directed", _) => {}
                (_, Value::List(_)) => {
                    return Err(err(*line, format!("unknown block `{key}` inside graph")))
                }
                _ => {}
            }
        }
        DirectedGraph::build(labels.len(), arcs, labels)
    }
}
