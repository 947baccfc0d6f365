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

//! Belonging coefficients.
//!
//! A [`Cover`] stores, for every node `i` and community slot `c`, the strength
//! `alpha[i][c]` with which `i` belongs to `c`; each row lies on the unit
//! simplex. An arc `(i, j)` belongs to `c` with strength
//! `F(alpha[i][c], alpha[j][c]) = f(alpha[i][c]) * f(alpha[j][c])`, where
//! `f(x) = 1 / (1 + exp(-(2 p x - p)))` is a logistic transfer centred at 0.5.
//!
//! The expected belonging of an arc leaving `i` (resp. entering `j`) is the
//! mean of `F` over all `n` possible opposite endpoints. Because `F`
//! factorizes, that mean is `f(alpha[i][c]) * mean_j f(alpha[j][c])`, which
//! [`expected_belonging`] computes in `O(C n)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::DirectedGraph;

/// Tolerance on row sums accepted when a cover is loaded from outside.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_STEEPNESS: f64 = 30.0;

#[derive(Debug, Error, PartialEq)]
pub enum BelongingError {
    #[error("node {node} has no positive membership weight")]
    DegenerateRow { node: usize },
    #[error("logistic steepness must be a positive finite number, got {0}")]
    InvalidSteepness(f64),
    #[error("alpha[{node}][{community}] = {value} is outside [0, 1]")]
    OutOfRange {
        node: usize,
        community: usize,
        value: f64,
    },
    #[error("row {node} sums to {sum}, expected 1")]
    RowSum { node: usize, sum: f64 },
    #[error("row {node} has {found} entries, expected {expected}")]
    RaggedRow {
        node: usize,
        found: usize,
        expected: usize,
    },
    #[error("a cover needs at least one community")]
    NoCommunities,
    #[error("cover lists {labels} labels for {nodes} rows")]
    LabelCount { labels: usize, nodes: usize },
    #[error("cover declares {declared} communities but rows have {found}")]
    CommunityCount { declared: usize, found: usize },
}

/// Steepness of the logistic transfer `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    steepness: f64,
}

impl LogisticParams {
    pub fn new(steepness: f64) -> Result<Self, BelongingError> {
        if steepness.is_finite() && steepness > 0.0 {
            Ok(Self { steepness })
        } else {
            Err(BelongingError::InvalidSteepness(steepness))
        }
    }

    pub fn steepness(&self) -> f64 {
        self.steepness
    }

    /// The one-dimensional transfer `f(x)`.
    #[inline]
    pub fn transfer(&self, x: f64) -> f64 {
        let p = self.steepness;
        1.0 / (1.0 + (-(2.0 * p * x - p)).exp())
    }
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            steepness: DEFAULT_STEEPNESS,
        }
    }
}

/// `F(a_src, a_dst)`: strength with which an arc belongs to a community,
/// given its endpoints' memberships in that community.
#[inline]
pub fn link_belonging(a_src: f64, a_dst: f64, params: LogisticParams) -> f64 {
    params.transfer(a_src) * params.transfer(a_dst)
}

/// A soft partition: an `n x C` membership matrix with rows on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Cover {
    node_count: usize,
    community_count: usize,
    alpha: Vec<f64>,
}

impl Cover {
    /// Wraps already-normalized rows, checking the simplex invariant.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, BelongingError> {
        let community_count = rows.first().map_or(0, Vec::len);
        if community_count == 0 {
            return Err(BelongingError::NoCommunities);
        }
        let mut alpha = Vec::with_capacity(rows.len() * community_count);
        for (node, row) in rows.iter().enumerate() {
            if row.len() != community_count {
                return Err(BelongingError::RaggedRow {
                    node,
                    found: row.len(),
                    expected: community_count,
                });
            }
            for (community, &value) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(BelongingError::OutOfRange {
                        node,
                        community,
                        value,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(BelongingError::RowSum { node, sum });
            }
            alpha.extend_from_slice(row);
        }
        Ok(Self {
            node_count: rows.len(),
            community_count,
            alpha,
        })
    }

    /// Every node fully inside community `0` of `community_count` slots.
    pub fn single_community(node_count: usize, community_count: usize) -> Self {
        assert!(community_count >= 1);
        let mut alpha = vec![0.0; node_count * community_count];
        for i in 0..node_count {
            alpha[i * community_count] = 1.0;
        }
        Self {
            node_count,
            community_count,
            alpha,
        }
    }

    /// Crisp cover from a community index per node.
    pub fn crisp(assignment: &[usize], community_count: usize) -> Self {
        let mut alpha = vec![0.0; assignment.len() * community_count];
        for (i, &c) in assignment.iter().enumerate() {
            assert!(c < community_count, "community {c} out of range");
            alpha[i * community_count + c] = 1.0;
        }
        Self {
            node_count: assignment.len(),
            community_count,
            alpha,
        }
    }

    pub(crate) fn normalized_from_flat(
        node_count: usize,
        community_count: usize,
        raw: &[f64],
    ) -> Result<Self, BelongingError> {
        debug_assert_eq!(raw.len(), node_count * community_count);
        if community_count == 0 {
            return Err(BelongingError::NoCommunities);
        }
        let mut alpha = raw.to_vec();
        for (node, row) in alpha.chunks_exact_mut(community_count).enumerate() {
            let sum: f64 = row.iter().sum();
            if sum.is_nan() || sum <= 0.0 || !sum.is_finite() {
                return Err(BelongingError::DegenerateRow { node });
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(Self {
            node_count,
            community_count,
            alpha,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn community_count(&self) -> usize {
        self.community_count
    }

    #[inline]
    pub fn get(&self, node: usize, community: usize) -> f64 {
        self.alpha[node * self.community_count + community]
    }

    pub fn row(&self, node: usize) -> &[f64] {
        let c = self.community_count;
        &self.alpha[node * c..(node + 1) * c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.alpha.chunks_exact(self.community_count)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Argmax community per node, ties to the lowest index.
    pub fn crisp_projection(&self) -> Vec<usize> {
        self.rows()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                    .0
            })
            .collect()
    }

    /// Total membership mass per community slot.
    pub fn column_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.community_count];
        for row in self.rows() {
            for (m, &v) in mass.iter_mut().zip(row) {
                *m += v;
            }
        }
        mass
    }

    /// Reorders community slots: new column `k` is old column `order[k]`.
    pub fn permute_communities(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.community_count);
        let mut alpha = Vec::with_capacity(self.alpha.len());
        for row in self.rows() {
            alpha.extend(order.iter().map(|&k| row[k]));
        }
        Self { alpha, ..*self }
    }

    /// Reorders nodes: new row `perm[i]` is old row `i`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.node_count);
        let c = self.community_count;
        let mut alpha = vec![0.0; self.alpha.len()];
        for (i, row) in self.rows().enumerate() {
            alpha[perm[i] * c..(perm[i] + 1) * c].copy_from_slice(row);
        }
        Self { alpha, ..*self }
    }

    pub fn to_document(&self, labels: &[String]) -> CoverDocument {
        CoverDocument {
            communities: self.community_count,
            alpha: self.to_rows(),
            labels: labels.to_vec(),
        }
    }
}

/// The on-disk JSON shape of a cover:
/// `{"communities": C, "alpha": [[...], ...], "labels": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverDocument {
    pub communities: usize,
    pub alpha: Vec<Vec<f64>>,
    #[serde(default)]
    pub labels: Vec<String>,
}

impl CoverDocument {
    pub fn to_cover(&self) -> Result<Cover, BelongingError> {
        let cover = Cover::from_rows(&self.alpha)?;
        if cover.community_count() != self.communities {
            return Err(BelongingError::CommunityCount {
                declared: self.communities,
                found: cover.community_count(),
            });
        }
        if !self.labels.is_empty() && self.labels.len() != cover.node_count() {
            return Err(BelongingError::LabelCount {
                labels: self.labels.len(),
                nodes: cover.node_count(),
            });
        }
        Ok(cover)
    }
}

/// Divides every row by its sum.
pub fn normalize_rows(raw: &[Vec<f64>]) -> Result<Cover, BelongingError> {
    let community_count = raw.first().map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(raw.len() * community_count);
    for (node, row) in raw.iter().enumerate() {
        if row.len() != community_count {
            return Err(BelongingError::RaggedRow {
                node,
                found: row.len(),
                expected: community_count,
            });
        }
        if let Some(community) = row.iter().position(|v| v.is_nan() || *v < 0.0 || !v.is_finite()) {
            return Err(BelongingError::OutOfRange {
                node,
                community,
                value: row[community],
            });
        }
        flat.extend_from_slice(row);
    }
    Cover::normalized_from_flat(raw.len(), community_count, &flat)
}

/// Expected belonging factors `beta_out[i][c]` and `beta_in[j][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BelongingTables {
    community_count: usize,
    beta_out: Vec<f64>,
    beta_in: Vec<f64>,
}

impl BelongingTables {
    pub fn community_count(&self) -> usize {
        self.community_count
    }

    #[inline]
    pub fn beta_out(&self, node: usize, community: usize) -> f64 {
        self.beta_out[node * self.community_count + community]
    }

    #[inline]
    pub fn beta_in(&self, node: usize, community: usize) -> f64 {
        self.beta_in[node * self.community_count + community]
    }
}

/// `f(alpha[i][c])` for every entry, row-major.
pub(crate) fn transfer_matrix(cover: &Cover, params: LogisticParams) -> Vec<f64> {
    cover.alpha.iter().map(|&a| params.transfer(a)).collect()
}

/// Per-community mean of the transfer column, summed in ascending node order.
pub(crate) fn transfer_means(transfer: &[f64], node_count: usize, community_count: usize) -> Vec<f64> {
    let mut sums = vec![0.0; community_count];
    for row in transfer.chunks_exact(community_count) {
        for (s, &t) in sums.iter_mut().zip(row) {
            *s += t;
        }
    }
    sums.iter().map(|s| s / node_count as f64).collect()
}

/// Factorized `O(C n)` computation of the expected belonging tables.
///
/// Panics if the cover does not have one row per graph node.
pub fn expected_belonging(g: &DirectedGraph, cover: &Cover, params: LogisticParams) -> BelongingTables {
    assert_eq!(
        cover.node_count(),
        g.node_count(),
        "cover rows must match graph nodes"
    );
    let c = cover.community_count();
    let n = cover.node_count();
    let transfer = transfer_matrix(cover, params);
    let means = transfer_means(&transfer, n, c);
    let mut beta = Vec::with_capacity(n * c);
    for row in transfer.chunks_exact(c) {
        beta.extend(row.iter().zip(&means).map(|(t, m)| t * m));
    }
    BelongingTables {
        community_count: c,
        beta_in: beta.clone(),
        beta_out: beta,
    }
}

/// Direct `O(C n^2)` evaluation of the same tables from the definition.
pub fn expected_belonging_direct(
    g: &DirectedGraph,
    cover: &Cover,
    params: LogisticParams,
) -> BelongingTables {
    assert_eq!(
        cover.node_count(),
        g.node_count(),
        "cover rows must match graph nodes"
    );
    let c = cover.community_count();
    let n = cover.node_count();
    let mut beta_out = vec![0.0; n * c];
    let mut beta_in = vec![0.0; n * c];
    for k in 0..c {
        for i in 0..n {
            let mut out_sum = 0.0;
            let mut in_sum = 0.0;
            for j in 0..n {
                out_sum += link_belonging(cover.get(i, k), cover.get(j, k), params);
                in_sum += link_belonging(cover.get(j, k), cover.get(i, k), params);
            }
            beta_out[i * c + k] = out_sum / n as f64;
            beta_in[i * c + k] = in_sum / n as f64;
        }
    }
    BelongingTables {
        community_count: c,
        beta_out,
        beta_in,
    }
}
