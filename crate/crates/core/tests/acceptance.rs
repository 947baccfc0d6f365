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

//! Acceptance checks, one line of output each.
//!
//! Runs with a custom harness: `cargo test --release --test acceptance`.
//! Pass criterion numbers as arguments to run a subset. The process exits
//! non-zero when any criterion fails; a criterion whose host precondition is
//! not met is reported as BLOCKED after its measurements are printed.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ovcomm::belonging::{link_belonging, Cover, LogisticParams};
use ovcomm::farm::{measure_speedup, EvalContext, Farm, FitnessBackend, SequentialBackend};
use ovcomm::ga::{run, Genotype, GaConfig, RunResult};
use ovcomm::graph::DirectedGraph;
use ovcomm::qov::{qov, qov_bruteforce};
use ovcomm::report::{overlaps, populated_communities};

use common::{dolphins, faction_agreement, random_cover, random_digraph, worker_exe, zachary};

/// Base seed of the ten-run experiments; run k uses `BASE_SEED + k`.
const BASE_SEED: u64 = 7;
const RUNS: u64 = 10;

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
}

use Outcome::{Blocked, Fail, Pass};

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn p30() -> LogisticParams {
    LogisticParams::new(30.0).unwrap()
}

fn seeded_runs(g: &DirectedGraph) -> Vec<RunResult> {
    let mut backend = SequentialBackend::new(EvalContext::new(g.clone(), p30()));
    (0..RUNS)
        .map(|k| run(g, &GaConfig::with_seed(BASE_SEED + k), &mut backend).unwrap())
        .collect()
}

fn best_of(runs: &[RunResult]) -> &RunResult {
    let mut best = &runs[0];
    for r in &runs[1..] {
        if r.best_fitness > best.best_fitness {
            best = r;
        }
    }
    best
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=12);
        let density = rng.random_range(0.1..=0.5);
        let g = random_digraph(&mut rng, n, density);
        let c = rng.random_range(1..=3);
        let cover = random_cover(&mut rng, n, c);
        let fast = qov(&g, &cover, p30()).unwrap().total;
        let slow = qov_bruteforce(&g, &cover, p30()).unwrap();
        worst = worst.max((fast - slow).abs());
    }
    check(worst < 1e-9, format!("50 random digraphs, max |fast - oracle| = {worst:.3e} (< 1e-9)"))
}

fn trivial_cover_zero() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for (name, g) in [("zachary", zachary()), ("dolphins", dolphins())] {
        let q = qov(&g, &Cover::single_community(g.node_count(), 1), p30()).unwrap().total;
        ok &= q.abs() < 1e-3;
        detail.push(format!("{name} Q = {q:.3e}"));
    }
    check(ok, format!("{} (|Q| < 1e-3)", detail.join(", ")))
}

struct ZacharyRuns {
    runs: Vec<RunResult>,
}

fn zachary_structure(z: &ZacharyRuns) -> Outcome {
    let g = zachary();
    let best = best_of(&z.runs);
    let populated = populated_communities(&best.best_cover);
    let agreement = faction_agreement(&g, &best.best_cover.crisp_projection());
    check(
        populated == 2 && agreement >= 32,
        format!(
            "best of seeds {BASE_SEED}..{} (seed {}, Q = {:.6}): {populated} populated communities (want 2), faction agreement {agreement}/34 (want >= 32)",
            BASE_SEED + RUNS - 1,
            best.seed,
            best.best_fitness
        ),
    )
}

fn zachary_overlap(z: &ZacharyRuns) -> Outcome {
    let g = zachary();
    let best = best_of(&z.runs);
    let cover = &best.best_cover;
    let overlapped = overlaps(cover, g.node_labels(), 0.05);
    let projection = cover.crisp_projection();
    let mut counts = BTreeMap::new();
    for &c in &projection {
        *counts.entry(c).or_insert(0usize) += 1;
    }
    let mut main: Vec<usize> = counts.keys().copied().collect();
    main.sort_by_key(|c| std::cmp::Reverse(counts[c]));
    main.truncate(2);

    let mut ok = true;
    let mut detail = Vec::new();
    for label in ["3", "10"] {
        let node = g.node_by_label(label).unwrap();
        let row = cover.row(node);
        let both = main.len() == 2 && main.iter().all(|&c| row[c] >= 0.05);
        let dominant = row.iter().copied().fold(0.0, f64::max);
        let in_band = (0.55..=0.95).contains(&dominant);
        ok &= both && in_band;
        let shown: Vec<String> = main.iter().map(|&c| format!("c{c}={:.3}", row[c])).collect();
        detail.push(format!(
            "node {label}: {} dominant {dominant:.3}",
            shown.join(" ")
        ));
    }
    let labels: Vec<&str> = overlapped.iter().map(|o| o.label.as_str()).collect();
    check(
        ok,
        format!(
            "seed {}: {} (want >= 0.05 in both, dominant in [0.55, 0.95]); overlapped nodes {labels:?}",
            best.seed,
            detail.join("; ")
        ),
    )
}

fn dolphins_structure() -> Outcome {
    let g = dolphins();
    let counts: Vec<usize> = seeded_runs(&g)
        .iter()
        .map(|r| populated_communities(&r.best_cover))
        .collect();
    let mut freq = BTreeMap::new();
    for &c in &counts {
        *freq.entry(c).or_insert(0usize) += 1;
    }
    let top = freq.values().copied().max().unwrap();
    let modes: Vec<usize> = freq.iter().filter(|(_, &f)| f == top).map(|(&c, _)| c).collect();
    let in_band = counts.iter().all(|c| (3..=5).contains(c));
    check(
        modes == [4] && in_band,
        format!("populated counts over seeds {BASE_SEED}..{}: {counts:?}, mode {modes:?} (want 4, each in 3..=5)", BASE_SEED + RUNS - 1),
    )
}

fn determinism_across_parallelism() -> Outcome {
    let g = zachary();
    let cfg = GaConfig::with_seed(BASE_SEED);
    let ctx = EvalContext::new(g.clone(), cfg.logistic);
    let mut results = Vec::new();
    let mut seq = SequentialBackend::new(ctx.clone());
    results.push(("sequential".to_string(), run(&g, &cfg, &mut seq).unwrap()));
    for w in [1, 2, 4] {
        let mut farm = Farm::spawn_pipe(&worker_exe(), w, &ctx).unwrap();
        results.push((format!("{w} pipe workers"), run(&g, &cfg, &mut farm).unwrap()));
        let mut farm = Farm::spawn_tcp(&worker_exe(), w, &ctx).unwrap();
        results.push((format!("{w} tcp workers"), run(&g, &cfg, &mut farm).unwrap()));
    }
    let bits = |c: &Cover| c.rows().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    let reference = &results[0].1;
    let mismatched: Vec<&str> = results
        .iter()
        .filter(|(_, r)| {
            r.best_fitness.to_bits() != reference.best_fitness.to_bits()
                || bits(&r.best_cover) != bits(&reference.best_cover)
        })
        .map(|(name, _)| name.as_str())
        .collect();
    check(
        mismatched.is_empty(),
        format!(
            "{} configurations, best Q = {:.12}, mismatches: {mismatched:?}",
            results.len(),
            reference.best_fitness
        ),
    )
}

fn speedup() -> Outcome {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let g = zachary();
    let cfg = GaConfig::with_seed(BASE_SEED);
    let ctx = EvalContext::new(g.clone(), cfg.logistic).with_busywork(100);
    let record = measure_speedup(&g, &cfg, &[1, 2, 3], 3, |w| {
        Ok(Box::new(Farm::spawn_pipe(&worker_exe(), w, &ctx)?) as Box<dyn FitnessBackend>)
    })
    .unwrap();
    let t: Vec<f64> = record.wall_times.clone();
    let s2 = record.speedup(2).unwrap();
    let s3 = record.speedup(3).unwrap();
    let detail = format!(
        "busywork 100, T = [{:.3}s, {:.3}s, {:.3}s], S(2) = {s2:.2} (want >= 1.5), S(3) = {s3:.2} (want 1.9..=2.9), host has {cores} cores",
        t[0], t[1], t[2]
    );
    if cores < 4 {
        return Blocked(format!("{detail}; requires >= 4 cores"));
    }
    check(
        s2 >= 1.5 && (1.9..=2.9).contains(&s3) && t[1] <= t[0] && t[2] <= t[1],
        detail,
    )
}

/// Records batch sizes and the best value seen, delegating evaluation.
struct Recording {
    inner: SequentialBackend,
    batches: Vec<usize>,
}

impl FitnessBackend for Recording {
    fn evaluate_batch(&mut self, genotypes: &[Genotype]) -> Result<Vec<f64>, ovcomm::farm::BackendError> {
        self.batches.push(genotypes.len());
        self.inner.evaluate_batch(genotypes)
    }
}

fn ga_bookkeeping() -> Outcome {
    let defaults = GaConfig::default();
    let g = zachary();
    let cfg = GaConfig {
        max_epochs: 100,
        seed: BASE_SEED,
        ..defaults
    };
    let mut backend = Recording {
        inner: SequentialBackend::new(EvalContext::new(g.clone(), cfg.logistic)),
        batches: Vec::new(),
    };
    let result = run(&g, &cfg, &mut backend).unwrap();
    let initial = backend.batches[0];
    let offspring_ok = backend.batches[1..].iter().all(|&b| b == 6);
    let monotone = result.history.windows(2).all(|w| w[1].best >= w[0].best);
    check(
        defaults.population_size == 60
            && defaults.offspring_per_epoch() == 6
            && initial == 60
            && offspring_ok
            && result.epochs_run == 100
            && monotone,
        format!(
            "population {}, offspring per epoch {}, batches {} x 6 after an initial {initial}, best non-decreasing over {} epochs: {monotone}",
            defaults.population_size,
            defaults.offspring_per_epoch(),
            backend.batches.len() - 1,
            result.epochs_run
        ),
    )
}

fn invariance_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut column_exact = true;
    let mut node_worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=20);
        let g = random_digraph(&mut rng, n, 0.3);
        let c = rng.random_range(2..=6);
        let cover = random_cover(&mut rng, n, c);
        let base = qov(&g, &cover, p30()).unwrap().total;

        let mut order: Vec<usize> = (0..c).collect();
        for i in (1..c).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let permuted = qov(&g, &cover.permute_communities(&order), p30()).unwrap().total;
        column_exact &= permuted.to_bits() == base.to_bits();

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let arcs: Vec<(usize, usize)> = g.links().iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        let relabeled = DirectedGraph::from_arcs(n, &arcs).unwrap();
        let moved = qov(&relabeled, &cover.permute_nodes(&perm), p30()).unwrap().total;
        node_worst = node_worst.max((moved - base).abs());
    }

    let grid: Vec<f64> = (0..10).map(|k| k as f64 / 9.0).collect();
    let mut symmetric = true;
    let mut monotone = true;
    for &x in &grid {
        for (k, &y) in grid.iter().enumerate() {
            let v = link_belonging(x, y, p30());
            symmetric &= v == link_belonging(y, x, p30());
            if k > 0 {
                monotone &= link_belonging(x, grid[k - 1], p30()) <= v;
            }
        }
    }
    check(
        column_exact && node_worst < 1e-12 && symmetric && monotone,
        format!(
            "column permutation exact: {column_exact}; node relabeling max drift {node_worst:.1e} (< 1e-12); F symmetric {symmetric}, monotone {monotone} on 10x10 grid"
        ),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |k: u32| wanted.is_empty() || wanted.contains(&k);

    let mut failed = 0;
    let mut report = |k: u32, name: &str, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let over = if elapsed > budget {
            format!(" over {budget:?} budget")
        } else {
            String::new()
        };
        let (tag, detail) = match outcome {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Blocked(d) => ("BLOCKED", d),
        };
        println!("criterion {k} {tag:<7} {name}: {detail} [{:.2}s{over}]", elapsed.as_secs_f64());
    };

    if selected(1) {
        report(1, "oracle equivalence", Duration::from_secs(5), &mut oracle_equivalence);
    }
    if selected(2) {
        report(2, "trivial cover zero", Duration::from_secs(1), &mut trivial_cover_zero);
    }
    if selected(3) || selected(4) {
        let start = Instant::now();
        let runs = ZacharyRuns {
            runs: seeded_runs(&zachary()),
        };
        let shared = start.elapsed();
        if selected(3) {
            report(3, "zachary structure", Duration::from_secs(180) - shared, &mut || zachary_structure(&runs));
        }
        if selected(4) {
            report(4, "zachary overlap", Duration::from_secs(180) - shared, &mut || zachary_overlap(&runs));
        }
    }
    if selected(5) {
        report(5, "dolphins structure", Duration::from_secs(600), &mut dolphins_structure);
    }
    if selected(6) {
        report(6, "determinism across parallelism", Duration::from_secs(120), &mut determinism_across_parallelism);
    }
    if selected(7) {
        report(7, "speedup", Duration::from_secs(600), &mut speedup);
    }
    if selected(8) {
        report(8, "GA bookkeeping", Duration::from_secs(60), &mut ga_bookkeeping);
    }
    if selected(9) {
        report(9, "invariance suite", Duration::from_secs(60), &mut invariance_suite);
    }

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
