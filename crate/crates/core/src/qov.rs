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

//! Overlapping modularity of a cover on a directed graph.
//!
//! ```text
//! Q = 1/m sum_c [ sum_{(i,j) in arcs} F(a_ic, a_jc)
//!                 - 1/m (sum_i b_out_ic k_out_i) (sum_j b_in_jc k_in_j) ]
//! ```
//!
//! The observed term only visits existing arcs; the null term factorizes
//! because `b_out` depends on the source alone and `b_in` on the target alone.

use serde::Serialize;
use thiserror::Error;

use crate::belonging::{link_belonging, transfer_matrix, transfer_means, Cover, LogisticParams};
use crate::belonging::expected_belonging_direct;
use crate::graph::DirectedGraph;

/// Largest graph the brute-force oracle accepts.
pub const ORACLE_MAX_NODES: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum QovError {
    #[error("modularity is undefined on a graph without arcs")]
    EmptyGraph,
    #[error("cover has {cover} rows but the graph has {graph} nodes")]
    DimensionMismatch { cover: usize, graph: usize },
    #[error("brute-force oracle is limited to {ORACLE_MAX_NODES} nodes, got {0}")]
    OracleTooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QovBreakdown {
    pub total: f64,
    /// Contribution of each community slot; sums to `total`.
    pub per_community: Vec<f64>,
}

fn check(g: &DirectedGraph, cover: &Cover) -> Result<(), QovError> {
    if g.link_count() == 0 {
        return Err(QovError::EmptyGraph);
    }
    if cover.node_count() != g.node_count() {
        return Err(QovError::DimensionMismatch {
            cover: cover.node_count(),
            graph: g.node_count(),
        });
    }
    Ok(())
}

/// Sum that does not depend on the order of `values`: terms are added in
/// ascending numeric order, so relabeling communities leaves the total
/// bit-identical.
fn order_free_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum()
}

/// Fast path: `O(C (n + m))`.
pub fn qov(g: &DirectedGraph, cover: &Cover, params: LogisticParams) -> Result<QovBreakdown, QovError> {
    check(g, cover)?;
    let n = g.node_count();
    let c = cover.community_count();
    let m = g.link_count() as f64;
    let f = transfer_matrix(cover, params);
    let means = transfer_means(&f, n, c);

    let mut observed = vec![0.0; c];
    for &(i, j) in g.links() {
        let (fi, fj) = (&f[i * c..(i + 1) * c], &f[j * c..(j + 1) * c]);
        for k in 0..c {
            observed[k] += fi[k] * fj[k];
        }
    }

    let mut out_mass = vec![0.0; c];
    let mut in_mass = vec![0.0; c];
    for i in 0..n {
        let ko = g.out_degree()[i] as f64;
        let ki = g.in_degree()[i] as f64;
        for k in 0..c {
            let beta = f[i * c + k] * means[k];
            out_mass[k] += beta * ko;
            in_mass[k] += beta * ki;
        }
    }

    let per_community: Vec<f64> = (0..c)
        .map(|k| (observed[k] - out_mass[k] * in_mass[k] / m) / m)
        .collect();
    Ok(QovBreakdown {
        total: order_free_sum(&per_community),
        per_community,
    })
}

/// Literal transcription of the definition: a double loop over all ordered
/// node pairs with the expectation taken from its direct `O(n)` mean.
/// Used as a test oracle; refuses graphs above [`ORACLE_MAX_NODES`].
pub fn qov_bruteforce(g: &DirectedGraph, cover: &Cover, params: LogisticParams) -> Result<f64, QovError> {
    check(g, cover)?;
    let n = g.node_count();
    if n > ORACLE_MAX_NODES {
        return Err(QovError::OracleTooLarge(n));
    }
    let m = g.link_count() as f64;
    let tables = expected_belonging_direct(g, cover, params);
    let mut total = 0.0;
    for c in 0..cover.community_count() {
        for i in 0..n {
            for j in 0..n {
                let a = if g.has_arc(i, j) { 1.0 } else { 0.0 };
                let beta = link_belonging(cover.get(i, c), cover.get(j, c), params);
                let null = tables.beta_out(i, c) * g.out_degree()[i] as f64 * tables.beta_in(j, c)
                    * g.in_degree()[j] as f64
                    / m;
                total += beta * a - null;
            }
        }
    }
    Ok(total / m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belonging::normalize_rows;

    fn p30() -> LogisticParams {
        LogisticParams::new(30.0).unwrap()
    }

    fn two_pairs() -> DirectedGraph {
        DirectedGraph::from_edge_list_str("0 1\n1 0\n2 3\n3 2\n").unwrap()
    }

    #[test]
    fn single_saturated_community_is_zero() {
        let g = two_pairs();
        let q = qov(&g, &Cover::single_community(4, 1), p30()).unwrap();
        assert!(q.total.abs() < 1e-3);
    }

    #[test]
    fn two_pairs_matches_oracle_and_is_positive() {
        let g = two_pairs();
        let cover = Cover::crisp(&[0, 0, 1, 1], 2);
        let fast = qov(&g, &cover, p30()).unwrap();
        let slow = qov_bruteforce(&g, &cover, p30()).unwrap();
        assert!((fast.total - slow).abs() < 1e-12);
        assert!(fast.total > 0.0);
        // each pair: observed 2 F(1,1), null (2 b)(2 b)/4 with b = f(1)(f(1)+f(0))/2
        let f1 = p30().transfer(1.0);
        let f0 = p30().transfer(0.0);
        let b = f1 * (f1 + f0) / 2.0;
        let per = (2.0 * f1 * f1 - (2.0 * b) * (2.0 * b) / 4.0) / 4.0;
        // nodes 2 and 3 add only f(0)-sized terms to community 0
        assert!((fast.per_community[0] - per).abs() < 1e-10);
    }

    #[test]
    fn single_arc_hand_expansion() {
        let g = DirectedGraph::from_edge_list_str("0 1\n").unwrap();
        let cover = Cover::single_community(2, 1);
        let p = p30();
        let f1 = p.transfer(1.0);
        let beta = f1 * f1; // mean over both endpoints of F(1, 1)
        let expected = link_belonging(1.0, 1.0, p) - beta * 1.0 * beta * 1.0 / 1.0;
        let slow = qov_bruteforce(&g, &cover, p).unwrap();
        assert!((slow - expected).abs() < 1e-15);
        assert!((qov(&g, &cover, p).unwrap().total - expected).abs() < 1e-15);
    }

    #[test]
    fn empty_column_contributes_nothing() {
        let g = two_pairs();
        let cover = Cover::single_community(4, 2);
        let q = qov(&g, &cover, p30()).unwrap();
        assert!(q.per_community[1].abs() < 1e-6);
    }

    #[test]
    fn errors() {
        let empty = DirectedGraph::from_arcs(3, &[]).unwrap();
        assert_eq!(
            qov(&empty, &Cover::single_community(3, 1), p30()),
            Err(QovError::EmptyGraph)
        );
        let g = two_pairs();
        assert_eq!(
            qov(&g, &Cover::single_community(3, 1), p30()),
            Err(QovError::DimensionMismatch { cover: 3, graph: 4 })
        );
        let arcs: Vec<_> = (0..65).map(|i| (i, (i + 1) % 65)).collect();
        let big = DirectedGraph::from_arcs(65, &arcs).unwrap();
        assert_eq!(
            qov_bruteforce(&big, &Cover::single_community(65, 1), p30()),
            Err(QovError::OracleTooLarge(65))
        );
    }

    #[test]
    fn breakdown_sums_to_total() {
        let g = DirectedGraph::from_edge_list_str("0 1\n1 2\n2 0\n2 3\n3 4\n4 3\n").unwrap();
        let cover = normalize_rows(&[
            vec![0.9, 0.1, 0.0],
            vec![0.8, 0.2, 0.3],
            vec![0.5, 0.5, 0.1],
            vec![0.1, 0.9, 0.2],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        let q = qov(&g, &cover, p30()).unwrap();
        let s: f64 = q.per_community.iter().sum();
        assert!((s - q.total).abs() < 1e-12);
        assert!(q.total <= 1.0);
    }
}
