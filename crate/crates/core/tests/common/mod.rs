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

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::Rng;

use ovcomm::belonging::{normalize_rows, Cover};
use ovcomm::graph::DirectedGraph;

/// Dataset labels of the club members who sided with the instructor.
pub const INSTRUCTOR_FACTION: [u32; 17] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 11, 12, 13, 14, 17, 18, 20, 22];

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn zachary() -> DirectedGraph {
    DirectedGraph::load(data_dir().join("zachary.edges")).unwrap()
}

pub fn dolphins() -> DirectedGraph {
    DirectedGraph::load(data_dir().join("dolphins.gml")).unwrap()
}

pub fn worker_exe() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_ovcomm"))
}

/// Random digraph without self-loops and with at least one arc.
pub fn random_digraph<R: Rng>(rng: &mut R, n: usize, density: f64) -> DirectedGraph {
    loop {
        let mut arcs = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_bool(density) {
                    arcs.push((i, j));
                }
            }
        }
        if !arcs.is_empty() {
            return DirectedGraph::from_arcs(n, &arcs).unwrap();
        }
    }
}

pub fn random_cover<R: Rng>(rng: &mut R, n: usize, communities: usize) -> Cover {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..communities).map(|_| rng.random_range(0.01..1.0)).collect())
        .collect();
    normalize_rows(&rows).unwrap()
}

/// Nodes whose community agrees with the club split, taking the two
/// largest communities as the two factions in whichever orientation fits
/// better. Nodes outside those two communities count as disagreeing.
pub fn faction_agreement(g: &DirectedGraph, projection: &[usize]) -> usize {
    let slots = projection.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; slots];
    for &c in projection {
        counts[c] += 1;
    }
    let mut order: Vec<usize> = (0..slots).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let (first, second) = (order[0], order.get(1).copied().unwrap_or(usize::MAX));
    let score = |instructor_side: usize, officer_side: usize| {
        (0..g.node_count())
            .filter(|&i| {
                let label: u32 = g.label(i).parse().unwrap();
                let expected = if INSTRUCTOR_FACTION.contains(&label) {
                    instructor_side
                } else {
                    officer_side
                };
                projection[i] == expected
            })
            .count()
    };
    score(first, second).max(score(second, first))
}
