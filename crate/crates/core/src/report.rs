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

//! Report documents, DOT rendering and bundled datasets.

use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::belonging::{Cover, CoverDocument};
use crate::ga::{EpochRecord, GaConfig, RunResult};
use crate::graph::DirectedGraph;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.05;

/// Fill colors indexed by community, cycled when there are more communities.
pub const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf", "#aec7e8", "#ffbb78",
];
pub const OVERLAP_OUTLINE: &str = "#e41a1c";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDescriptor {
    pub path: String,
    pub nodes: usize,
    pub links: usize,
}

impl InputDescriptor {
    pub fn new(path: &str, g: &DirectedGraph) -> Self {
        Self {
            path: path.to_string(),
            nodes: g.node_count(),
            links: g.link_count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Membership {
    pub community: usize,
    pub alpha: f64,
}

/// A node with at least two memberships at or above the threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Overlap {
    pub node: usize,
    pub label: String,
    pub memberships: Vec<Membership>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommunityMembers {
    pub community: usize,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunDocument {
    pub seed: u64,
    pub best_fitness: f64,
    pub epochs_run: usize,
    pub best_cover: CoverDocument,
    pub history: Vec<EpochRecord>,
    pub config: GaConfig,
}

impl RunDocument {
    pub fn new(run: &RunResult, labels: &[String]) -> Self {
        Self {
            seed: run.seed,
            best_fitness: run.best_fitness,
            epochs_run: run.epochs_run,
            best_cover: run.best_cover.to_document(labels),
            history: run.history.clone(),
            config: run.config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub best_fitness: f64,
    pub epochs_run: usize,
    pub populated_communities: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectReport {
    pub schema_version: u32,
    pub input: InputDescriptor,
    /// 0 means the sequential backend.
    pub workers: usize,
    pub overlap_threshold: f64,
    pub runs: Vec<RunSummary>,
    pub best: RunDocument,
    pub crisp_projection: Vec<usize>,
    pub overlaps: Vec<Overlap>,
    pub populated_communities: usize,
    pub communities: Vec<CommunityMembers>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl DetectReport {
    /// Builds the report for the best of `runs` (highest fitness, earliest on ties).
    pub fn new(
        input: InputDescriptor,
        g: &DirectedGraph,
        runs: &[RunResult],
        workers: usize,
        overlap_threshold: f64,
        timestamp: Option<u64>,
    ) -> Self {
        assert!(!runs.is_empty(), "a report needs at least one run");
        let mut best = &runs[0];
        for r in &runs[1..] {
            if r.best_fitness > best.best_fitness {
                best = r;
            }
        }
        let cover = &best.best_cover;
        let projection = cover.crisp_projection();
        let communities = (0..cover.community_count())
            .filter_map(|c| {
                let members: Vec<String> = (0..g.node_count())
                    .filter(|&i| projection[i] == c)
                    .map(|i| g.label(i).to_string())
                    .collect();
                (!members.is_empty()).then_some(CommunityMembers { community: c, members })
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            input,
            workers,
            overlap_threshold,
            runs: runs
                .iter()
                .map(|r| RunSummary {
                    seed: r.seed,
                    best_fitness: r.best_fitness,
                    epochs_run: r.epochs_run,
                    populated_communities: populated_communities(&r.best_cover),
                })
                .collect(),
            best: RunDocument::new(best, g.node_labels()),
            overlaps: overlaps(cover, g.node_labels(), overlap_threshold),
            populated_communities: populated_communities(cover),
            crisp_projection: projection,
            communities,
            timestamp,
        }
    }

    /// One line per node: `node,label,community,alpha_0,...`.
    pub fn to_csv(&self) -> String {
        let c = self.best.best_cover.communities;
        let mut out = String::from("node,label,community");
        for k in 0..c {
            write!(out, ",alpha_{k}").unwrap();
        }
        out.push('\n');
        for (i, row) in self.best.best_cover.alpha.iter().enumerate() {
            write!(out, "{i},{},{}", csv_field(&self.best.best_cover.labels[i]), self.crisp_projection[i]).unwrap();
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Nodes holding at least two memberships `>= threshold`.
pub fn overlaps(cover: &Cover, labels: &[String], threshold: f64) -> Vec<Overlap> {
    cover
        .rows()
        .enumerate()
        .filter_map(|(i, row)| {
            let memberships: Vec<Membership> = row
                .iter()
                .enumerate()
                .filter(|(_, &a)| a >= threshold)
                .map(|(community, &alpha)| Membership { community, alpha })
                .collect();
            (memberships.len() >= 2).then(|| Overlap {
                node: i,
                label: labels.get(i).cloned().unwrap_or_else(|| i.to_string()),
                memberships,
            })
        })
        .collect()
}

/// Communities that are the argmax of at least two nodes.
pub fn populated_communities(cover: &Cover) -> usize {
    let mut counts = vec![0usize; cover.community_count()];
    for c in cover.crisp_projection() {
        counts[c] += 1;
    }
    counts.iter().filter(|&&k| k >= 2).count()
}

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz digraph: fill by argmax community, a thick outline for
/// overlapped nodes, memberships in the tooltip.
pub fn export_dot(g: &DirectedGraph, cover: &Cover, threshold: f64) -> String {
    let projection = cover.crisp_projection();
    let overlapped: Vec<bool> = {
        let mut v = vec![false; g.node_count()];
        for o in overlaps(cover, g.node_labels(), threshold) {
            v[o.node] = true;
        }
        v
    };
    let mut out = String::from("digraph cover {\n  node [style=filled, shape=circle];\n");
    for i in 0..g.node_count() {
        let tooltip: Vec<String> = cover
            .row(i)
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 0.0)
            .map(|(c, a)| format!("c{c}={a:.4}"))
            .collect();
        let fill = PALETTE[projection[i] % PALETTE.len()];
        write!(
            out,
            "  {} [fillcolor={}, tooltip={}",
            dot_id(g.label(i)),
            dot_id(fill),
            dot_id(&tooltip.join(" "))
        )
        .unwrap();
        if overlapped[i] {
            write!(out, ", color={}, penwidth=3", dot_id(OVERLAP_OUTLINE)).unwrap();
        }
        out.push_str("];\n");
    }
    for &(s, d) in g.links() {
        writeln!(out, "  {} -> {};", dot_id(g.label(s)), dot_id(g.label(d))).unwrap();
    }
    out.push_str("}\n");
    out
}

/// A data file shipped inside the binary.
#[derive(Debug, Clone, Copy)]
pub struct BundledDataset {
    pub name: &'static str,
    pub file: &'static str,
    pub contents: &'static str,
    pub source: &'static str,
}

pub const DATASETS: [BundledDataset; 2] = [
    BundledDataset {
        name: "zachary",
        file: "zachary.edges",
        contents: include_str!("../../../data/zachary.edges"),
        source: "Zachary karate club, 78 friendships as 156 reciprocal arcs",
    },
    BundledDataset {
        name: "dolphins",
        file: "dolphins.gml",
        contents: include_str!("../../../data/dolphins.gml"),
        source: "Lusseau et al. Doubtful Sound bottlenose dolphins, 62 animals, 159 ties",
    },
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetInfo {
    pub name: String,
    pub file: String,
    pub nodes: usize,
    pub links: usize,
    pub bytes: usize,
    pub sha256: String,
    pub source: String,
}

impl BundledDataset {
    pub fn graph(&self) -> DirectedGraph {
        let parsed = if self.file.ends_with(".gml") {
            DirectedGraph::from_gml(self.contents)
        } else {
            DirectedGraph::from_edge_list_str(self.contents)
        };
        parsed.expect("bundled datasets parse")
    }

    pub fn info(&self) -> DatasetInfo {
        let g = self.graph();
        let digest = Sha256::digest(self.contents.as_bytes());
        DatasetInfo {
            name: self.name.into(),
            file: self.file.into(),
            nodes: g.node_count(),
            links: g.link_count(),
            bytes: self.contents.len(),
            sha256: digest.iter().fold(String::new(), |mut s, b| {
                write!(s, "{b:02x}").unwrap();
                s
            }),
            source: self.source.into(),
        }
    }
}

pub fn dataset(name: &str) -> Option<&'static BundledDataset> {
    DATASETS.iter().find(|d| d.name == name || d.file == name)
}
