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

//! Steady-state genetic search over covers.
//!
//! The master loop lives here and is strictly sequential; fitness values come
//! from a [`FitnessBackend`], which may farm them out. Every random draw is
//! taken from a ChaCha8 stream: stream `0` initializes the population and
//! epoch `e` uses stream `e + 1`, both keyed by the run seed. Nothing the
//! backend does can shift the random sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belonging::{Cover, LogisticParams};
use crate::farm::{BackendError, FitnessBackend};
use crate::graph::DirectedGraph;

/// Rows whose entries are all below this are degenerate and get repaired.
pub const ROW_FLOOR: f64 = 1e-12;
/// Weight given to the non-chosen slots of a crisp row.
pub const CRISP_FLOOR: f64 = 1e-6;
/// Columns with less total mass than this count as empty.
pub const EMPTY_COLUMN_MASS: f64 = 1e-9;
/// Best-fitness gains at or below this do not reset the stagnation counter.
pub const IMPROVEMENT_EPSILON: f64 = 1e-12;

pub type GaRng = ChaCha8Rng;

#[derive(Debug, Error)]
pub enum GaError {
    #[error("invalid GA configuration: {0}")]
    InvalidConfig(String),
    #[error("individual {0} has not been evaluated")]
    Unevaluated(usize),
    #[error("genotype shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("graph has no arcs")]
    EmptyGraph,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Random stream for population initialization.
pub fn master_rng(seed: u64) -> GaRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for epoch `epoch` (0-based).
pub fn epoch_rng(seed: u64, epoch: u64) -> GaRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch + 1);
    rng
}

/// Raw, unnormalized `n x C_max` membership weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Genotype {
    node_count: usize,
    slots: usize,
    raw: Vec<f64>,
}

impl Genotype {
    /// Panics if `raw` has the wrong length, holds a value outside `[0, 1]`,
    /// or has a row with no entry above [`ROW_FLOOR`].
    pub fn new(node_count: usize, slots: usize, raw: Vec<f64>) -> Self {
        Self::try_new(node_count, slots, raw).expect("invalid genotype")
    }

    pub fn try_new(node_count: usize, slots: usize, raw: Vec<f64>) -> Result<Self, String> {
        if slots == 0 {
            return Err("genotype needs at least one slot".into());
        }
        if raw.len() != node_count * slots {
            return Err(format!(
                "expected {} weights for {node_count} x {slots}, got {}",
                node_count * slots,
                raw.len()
            ));
        }
        if let Some(v) = raw.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(format!("weight {v} outside [0, 1]"));
        }
        if let Some(node) = raw
            .chunks_exact(slots)
            .position(|row| row.iter().all(|&v| v < ROW_FLOOR))
        {
            return Err(format!("row {node} is degenerate"));
        }
        Ok(Self {
            node_count,
            slots,
            raw,
        })
    }

    /// Copies a cover's alpha matrix as raw weights.
    pub fn from_cover(cover: &Cover) -> Self {
        let raw = cover.rows().flatten().copied().collect();
        Self::new(cover.node_count(), cover.community_count(), raw)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.node_count, self.slots)
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn row(&self, node: usize) -> &[f64] {
        &self.raw[node * self.slots..(node + 1) * self.slots]
    }

    fn row_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.raw[node * self.slots..(node + 1) * self.slots]
    }
}

/// Genotype to cover: each row divided by its sum.
pub fn decode(geno: &Genotype) -> Cover {
    Cover::normalized_from_flat(geno.node_count, geno.slots, &geno.raw)
        .expect("genotype rows are never degenerate")
}

/// Number of community slots that carry any mass.
pub fn nonempty_communities(cover: &Cover) -> usize {
    cover
        .column_mass()
        .iter()
        .filter(|&&m| m >= EMPTY_COLUMN_MASS)
        .count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genotype: Genotype,
    pub fitness: Option<f64>,
}

impl Individual {
    pub fn unevaluated(genotype: Genotype) -> Self {
        Self {
            genotype,
            fitness: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub replacement_fraction: f64,
    pub tournament_size: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub max_communities: usize,
    pub max_epochs: usize,
    pub stagnation_epochs: usize,
    pub seed: u64,
    pub logistic: LogisticParams,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 60,
            replacement_fraction: 0.10,
            tournament_size: 2,
            mutation_rate: 0.05,
            crossover_rate: 0.9,
            max_communities: 8,
            max_epochs: 1000,
            stagnation_epochs: 200,
            seed: 0,
            logistic: LogisticParams::default(),
        }
    }
}

impl GaConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GaError> {
        let bad = |msg: String| Err(GaError::InvalidConfig(msg));
        if !(self.replacement_fraction > 0.0 && self.replacement_fraction < 1.0) {
            return bad(format!(
                "replacement_fraction must lie in (0, 1), got {}",
                self.replacement_fraction
            ));
        }
        if self.tournament_size == 0 {
            return bad("tournament_size must be at least 1".into());
        }
        if self.population_size < 2 * self.tournament_size {
            return bad(format!(
                "population_size {} is below twice the tournament size {}",
                self.population_size, self.tournament_size
            ));
        }
        if self.max_communities < 2 {
            return bad(format!("max_communities must be at least 2, got {}", self.max_communities));
        }
        for (name, p) in [("mutation_rate", self.mutation_rate), ("crossover_rate", self.crossover_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }

    /// Offspring created (and incumbents displaced) per epoch.
    pub fn offspring_per_epoch(&self) -> usize {
        let r = (self.replacement_fraction * self.population_size as f64).round() as usize;
        r.clamp(1, self.population_size - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub best: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub best_cover: Cover,
    pub best_fitness: f64,
    pub history: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub seed: u64,
    pub config: GaConfig,
}

fn random_row(row: &mut [f64], rng: &mut GaRng) {
    for v in row.iter_mut() {
        *v = rng.random::<f64>();
    }
    repair_row(row, rng);
}

fn crisp_row(row: &mut [f64], rng: &mut GaRng) {
    let k = rng.random_range(0..row.len());
    row.fill(CRISP_FLOOR);
    row[k] = 1.0;
}

fn repair_row(row: &mut [f64], rng: &mut GaRng) {
    if row.iter().all(|&v| v < ROW_FLOOR) {
        let k = rng.random_range(0..row.len());
        row[k] = 1.0;
    }
}

/// Index of the largest entry, ties to the lowest.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// `population_size` fresh, unevaluated individuals. Each row is crisp in a
/// random slot with probability 1/2, otherwise uniform in `[0, 1)` per slot.
pub fn init_population(cfg: &GaConfig, node_count: usize, rng: &mut GaRng) -> Vec<Individual> {
    let slots = cfg.max_communities;
    (0..cfg.population_size)
        .map(|_| {
            let mut raw = vec![0.0; node_count * slots];
            for row in raw.chunks_exact_mut(slots) {
                if rng.random_bool(0.5) {
                    crisp_row(row, rng);
                } else {
                    random_row(row, rng);
                }
            }
            Individual::unevaluated(Genotype::new(node_count, slots, raw))
        })
        .collect()
}

fn fitness_of(pop: &[Individual], idx: usize) -> Result<f64, GaError> {
    pop[idx].fitness.ok_or(GaError::Unevaluated(idx))
}

/// Draws `k` indices uniformly with replacement and returns the fittest,
/// preferring the lowest index among equals.
pub fn tournament_select(pop: &[Individual], k: usize, rng: &mut GaRng) -> Result<usize, GaError> {
    if let Some(idx) = pop.iter().position(|ind| ind.fitness.is_none()) {
        return Err(GaError::Unevaluated(idx));
    }
    let mut winner = rng.random_range(0..pop.len());
    for _ in 1..k {
        let challenger = rng.random_range(0..pop.len());
        let (fw, fc) = (fitness_of(pop, winner)?, fitness_of(pop, challenger)?);
        if fc > fw || (fc == fw && challenger < winner) {
            winner = challenger;
        }
    }
    Ok(winner)
}

/// Uniform node-wise crossover: every row is copied whole from one parent.
pub fn crossover(a: &Genotype, b: &Genotype, rng: &mut GaRng) -> Result<Genotype, GaError> {
    if a.shape() != b.shape() {
        return Err(GaError::ShapeMismatch(a.shape(), b.shape()));
    }
    let mut child = a.clone();
    for node in 0..a.node_count {
        if rng.random_bool(0.5) {
            child.row_mut(node).copy_from_slice(b.row(node));
        }
    }
    Ok(child)
}

/// With probability `rate` per node, applies one of three equally likely
/// operators: resample the row uniformly, make it crisp in a random slot, or
/// move a random fraction of its largest weight to another random slot.
pub fn mutate(g: &Genotype, rate: f64, rng: &mut GaRng) -> Genotype {
    let mut out = g.clone();
    if rate <= 0.0 {
        return out;
    }
    let slots = out.slots;
    for node in 0..out.node_count {
        if !rng.random_bool(rate) {
            continue;
        }
        let row = out.row_mut(node);
        match rng.random_range(0..3u8) {
            0 => random_row(row, rng),
            1 => crisp_row(row, rng),
            _ => {
                let from = argmax(row);
                if slots > 1 {
                    let mut to = rng.random_range(0..slots - 1);
                    if to >= from {
                        to += 1;
                    }
                    let moved = row[from] * rng.random::<f64>();
                    row[from] -= moved;
                    row[to] = (row[to] + moved).min(1.0);
                    repair_row(row, rng);
                }
            }
        }
    }
    out
}

/// Population indices ordered best first; equal fitness goes to the lower index.
fn ranking(pop: &[Individual]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (pop[a].fitness.unwrap(), pop[b].fitness.unwrap());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    order
}

fn best_and_mean(pop: &[Individual]) -> (usize, f64, f64) {
    let mut best = 0;
    let mut sum = 0.0;
    for (i, ind) in pop.iter().enumerate() {
        let f = ind.fitness.unwrap();
        sum += f;
        if f > pop[best].fitness.unwrap() {
            best = i;
        }
    }
    (best, pop[best].fitness.unwrap(), sum / pop.len() as f64)
}

/// Breeds the epoch's offspring without evaluating them.
pub fn breed(pop: &[Individual], cfg: &GaConfig, rng: &mut GaRng) -> Result<Vec<Genotype>, GaError> {
    let mut offspring = Vec::with_capacity(cfg.offspring_per_epoch());
    for _ in 0..cfg.offspring_per_epoch() {
        let a = tournament_select(pop, cfg.tournament_size, rng)?;
        let b = tournament_select(pop, cfg.tournament_size, rng)?;
        let child = if rng.random_bool(cfg.crossover_rate) {
            crossover(&pop[a].genotype, &pop[b].genotype, rng)?
        } else {
            let (fa, fb) = (fitness_of(pop, a)?, fitness_of(pop, b)?);
            let fitter = if fb > fa || (fb == fa && b < a) { b } else { a };
            pop[fitter].genotype.clone()
        };
        offspring.push(mutate(&child, cfg.mutation_rate, rng));
    }
    Ok(offspring)
}

/// One steady-state epoch. The worst `R` incumbents compete with the `R`
/// offspring for their slots; the best `R` of that pool survive, offspring
/// winning ties. The population's best individual is never among the
/// displaced. On a backend error the population is left untouched.
pub fn evolve_epoch(
    pop: &mut [Individual],
    cfg: &GaConfig,
    backend: &mut dyn FitnessBackend,
    rng: &mut GaRng,
) -> Result<EpochRecord, GaError> {
    let offspring = breed(pop, cfg, rng)?;
    let fitness = backend.evaluate_batch(&offspring)?;
    if fitness.len() != offspring.len() {
        return Err(GaError::Backend(BackendError::Protocol(format!(
            "backend returned {} results for {} genotypes",
            fitness.len(),
            offspring.len()
        ))));
    }

    let order = ranking(pop);
    let mut slots: Vec<usize> = order[order.len() - offspring.len()..].to_vec();
    slots.sort_unstable();

    // pool entries: (fitness, is_incumbent, tiebreak index, individual)
    let mut pool: Vec<(f64, bool, usize, Individual)> = slots
        .iter()
        .map(|&i| (pop[i].fitness.unwrap(), true, i, pop[i].clone()))
        .collect();
    pool.extend(offspring.into_iter().zip(fitness).enumerate().map(|(k, (g, f))| {
        (
            f,
            false,
            k,
            Individual {
                genotype: g,
                fitness: Some(f),
            },
        )
    }));
    pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (&slot, (_, _, _, ind)) in slots.iter().zip(pool) {
        pop[slot] = ind;
    }

    let (_, best, mean) = best_and_mean(pop);
    Ok(EpochRecord { epoch: 0, best, mean })
}

/// Runs the search until `max_epochs` or `stagnation_epochs` epochs without a
/// best-fitness gain above [`IMPROVEMENT_EPSILON`].
pub fn run(
    g: &DirectedGraph,
    cfg: &GaConfig,
    backend: &mut dyn FitnessBackend,
) -> Result<RunResult, GaError> {
    cfg.validate()?;
    if g.link_count() == 0 {
        return Err(GaError::EmptyGraph);
    }
    let mut pop = init_population(cfg, g.node_count(), &mut master_rng(cfg.seed));
    let genotypes: Vec<Genotype> = pop.iter().map(|i| i.genotype.clone()).collect();
    for (ind, f) in pop.iter_mut().zip(backend.evaluate_batch(&genotypes)?) {
        ind.fitness = Some(f);
    }

    let (_, mut best, _) = best_and_mean(&pop);
    let mut stagnant = 0;
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let mut rng = epoch_rng(cfg.seed, epoch as u64);
        let mut record = evolve_epoch(&mut pop, cfg, backend, &mut rng)?;
        record.epoch = epoch;
        history.push(record);
        if record.best > best + IMPROVEMENT_EPSILON {
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        best = best.max(record.best);
        if stagnant >= cfg.stagnation_epochs {
            break;
        }
    }

    let (idx, best_fitness, _) = best_and_mean(&pop);
    Ok(RunResult {
        best_cover: decode(&pop[idx].genotype),
        best_fitness,
        epochs_run: history.len(),
        history,
        seed: cfg.seed,
        config: *cfg,
    })
}
