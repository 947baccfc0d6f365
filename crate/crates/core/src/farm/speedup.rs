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

//! Wall-clock scaling of full GA runs over worker counts.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::ga::{run, GaConfig, GaError};
use crate::graph::DirectedGraph;

use super::{BackendError, FitnessBackend};

pub const MIN_REPETITIONS: usize = 3;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("invalid worker list: {0}")]
    InvalidWorkers(String),
    #[error("at least {MIN_REPETITIONS} repetitions are required, got {0}")]
    TooFewRepetitions(usize),
    #[error("runs performed different work: {workers} workers ran {found} epochs, expected {expected}")]
    EpochMismatch {
        workers: usize,
        expected: usize,
        found: usize,
    },
    #[error("run with {workers} workers took no measurable time")]
    ZeroDuration { workers: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Ga(#[from] GaError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRecord {
    pub worker_counts: Vec<usize>,
    /// Median seconds per worker count.
    pub wall_times: Vec<f64>,
    /// `T(1) / T(W)` per worker count.
    pub speedups: Vec<f64>,
    pub repetitions: usize,
    /// Every timed sample, per worker count.
    pub samples: Vec<Vec<f64>>,
}

impl SpeedupRecord {
    pub fn speedup(&self, workers: usize) -> Option<f64> {
        let idx = self.worker_counts.iter().position(|&w| w == workers)?;
        Some(self.speedups[idx])
    }

    pub fn wall_time(&self, workers: usize) -> Option<f64> {
        let idx = self.worker_counts.iter().position(|&w| w == workers)?;
        Some(self.wall_times[idx])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("workers,median_seconds,speedup\n");
        for ((w, t), s) in self.worker_counts.iter().zip(&self.wall_times).zip(&self.speedups) {
            writeln!(out, "{w},{t:.6},{s:.6}").unwrap();
        }
        out
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// Checks a worker list: non-empty, positive, distinct, containing 1.
pub fn validate_worker_counts(worker_counts: &[usize]) -> Result<(), MeasureError> {
    let bad = |m: &str| Err(MeasureError::InvalidWorkers(m.to_string()));
    if worker_counts.contains(&0) {
        return bad("worker counts must be positive");
    }
    if !worker_counts.contains(&1) {
        return bad("worker counts must include 1");
    }
    let mut sorted = worker_counts.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != worker_counts.len() {
        return bad("worker counts must be distinct");
    }
    Ok(())
}

/// Times `repetitions` seeded GA runs per worker count after one discarded
/// warm-up run. `make_backend(w)` builds the backend for `w` workers; its
/// startup is not timed.
pub fn measure_speedup<F>(
    g: &DirectedGraph,
    cfg: &GaConfig,
    worker_counts: &[usize],
    repetitions: usize,
    mut make_backend: F,
) -> Result<SpeedupRecord, MeasureError>
where
    F: FnMut(usize) -> Result<Box<dyn FitnessBackend>, BackendError>,
{
    validate_worker_counts(worker_counts)?;
    if repetitions < MIN_REPETITIONS {
        return Err(MeasureError::TooFewRepetitions(repetitions));
    }
    let mut expected_epochs = None;
    let mut samples = Vec::with_capacity(worker_counts.len());
    for &w in worker_counts {
        let mut backend = make_backend(w)?;
        let mut times = Vec::with_capacity(repetitions);
        for rep in 0..=repetitions {
            let start = Instant::now();
            let result = run(g, cfg, backend.as_mut())?;
            let elapsed = start.elapsed().as_secs_f64();
            let expected = *expected_epochs.get_or_insert(result.epochs_run);
            if result.epochs_run != expected {
                return Err(MeasureError::EpochMismatch {
                    workers: w,
                    expected,
                    found: result.epochs_run,
                });
            }
            if rep > 0 {
                if elapsed <= 0.0 {
                    return Err(MeasureError::ZeroDuration { workers: w });
                }
                times.push(elapsed);
            }
        }
        samples.push(times);
    }
    let wall_times: Vec<f64> = samples.iter().map(|s| median(s)).collect();
    let base = wall_times[worker_counts.iter().position(|&w| w == 1).unwrap()];
    Ok(SpeedupRecord {
        worker_counts: worker_counts.to_vec(),
        speedups: wall_times.iter().map(|t| base / t).collect(),
        wall_times,
        repetitions,
        samples,
    })
}
