//! Evolutionary scheduler seeded with the worst-fit mapping.
//!
//! Each generation: binary-tournament selection, single-point crossover,
//! per-gene mutation, then each offspring replaces the most expensive member
//! if it is strictly cheaper and not already in the population. The elites
//! are never the most expensive member, so they always survive. Costs are
//! evaluated in parallel; every random draw happens on the calling thread from
//! one seeded stream, so results do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mwfd::mwfd_schedule;
use super::ScheduleError;
use crate::domain::{Constraints, ScheduleMapping, Task};
use crate::objective::{BatchCostModel, CostWeights, VmContext};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaParams {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-gene resampling probability.
    pub mutation_rate: f64,
    pub elitism_count: usize,
    /// Stop after this many generations without improvement of the best cost.
    pub stagnation_limit: Option<usize>,
    pub seed: u64,
    pub alpha: f64,
    pub execution: Execution,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population_size: 50,
            generations: 200,
            crossover_rate: 0.9,
            mutation_rate: 0.02,
            elitism_count: 2,
            stagnation_limit: Some(50),
            seed: 0,
            alpha: 0.5,
            execution: Execution::Parallel,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let bad = |m: String| Err(ScheduleError::InvalidParams(m));
        if self.population_size < 2 {
            return bad(format!("population_size must be >= 2, got {}", self.population_size));
        }
        if self.generations < 1 {
            return bad("generations must be >= 1".into());
        }
        if self.elitism_count >= self.population_size {
            return bad(format!(
                "elitism_count ({}) must be below population_size ({})",
                self.elitism_count, self.population_size
            ));
        }
        for (name, v) in [("crossover_rate", self.crossover_rate), ("mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        self.weights()?;
        Ok(())
    }

    pub fn weights(&self) -> Result<CostWeights, ScheduleError> {
        CostWeights::new(self.alpha).map_err(|e| ScheduleError::InvalidParams(e.to_string()))
    }
}

/// One candidate mapping: gene `j` is the VM index assigned to task `j`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Chromosome {
    pub genes: Vec<usize>,
}

impl AsRef<[usize]> for Chromosome {
    fn as_ref(&self) -> &[usize] {
        &self.genes
    }
}

/// Single-point crossover: heads are kept, tails are swapped at `point`.
pub fn crossover(a: &Chromosome, b: &Chromosome, point: usize) -> Result<(Chromosome, Chromosome), ScheduleError> {
    if a.genes.len() != b.genes.len() {
        return Err(ScheduleError::InvalidParams(format!(
            "crossover of chromosomes with lengths {} and {}",
            a.genes.len(),
            b.genes.len()
        )));
    }
    if point == 0 || point >= a.genes.len() {
        return Err(ScheduleError::InvalidParams(format!(
            "crossover point {point} outside 1..{}",
            a.genes.len()
        )));
    }
    let join = |x: &[usize], y: &[usize]| Chromosome { genes: x.iter().chain(y).copied().collect() };
    Ok((
        join(&a.genes[..point], &b.genes[point..]),
        join(&b.genes[..point], &a.genes[point..]),
    ))
}

/// Resamples each gene uniformly from `choices` with probability `rate`.
pub fn mutate<R: Rng>(chrom: &Chromosome, rate: f64, choices: &[usize], rng: &mut R) -> Chromosome {
    let mut out = chrom.clone();
    if rate <= 0.0 || choices.is_empty() {
        return out;
    }
    for g in &mut out.genes {
        if rng.random_bool(rate) {
            *g = choices[rng.random_range(0..choices.len())];
        }
    }
    out
}

/// The worst-fit seed as a full chromosome. Tasks worst-fit could not place
/// go to the individually feasible VM with the most CPU headroom (or VM 0).
fn seed_chromosome(model: &BatchCostModel, c: &Constraints) -> Chromosome {
    let tasks: Vec<Task> = model.tasks().iter().map(|t| (*t).clone()).collect();
    let seed = mwfd_schedule(&tasks, model.vms(), c);
    let genes = tasks
        .iter()
        .enumerate()
        .map(|(j, t)| match seed.mapping.vm_of(&t.id) {
            Some(id) => model.vms().iter().position(|v| v.spec().id == id).expect("known VM"),
            None => model
                .feasible_vms(j)
                .iter()
                .copied()
                .min_by(|a, b| {
                    let la = model.vms()[*a].state.load().cpu_pct;
                    let lb = model.vms()[*b].state.load().cpu_pct;
                    la.total_cmp(&lb).then(a.cmp(b))
                })
                .unwrap_or(0),
        })
        .collect();
    Chromosome { genes }
}

/// Worst-fit seed plus `population_size - 1` perturbed copies, each gene
/// resampled over its task's feasible VMs with probability `mutation_rate`.
/// A perturbation equal to an existing member is redrawn a bounded number of
/// times, falling back to resampling every gene, so small batches still start
/// from a varied population.
pub fn init_population(
    tasks: &[Task],
    vms: &[VmContext],
    c: &Constraints,
    params: &GaParams,
) -> Result<Vec<Chromosome>, ScheduleError> {
    params.validate()?;
    let model = BatchCostModel::new(tasks, vms, params.weights()?, *c);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    Ok(initial_population(&model, c, params, &mut rng))
}

fn initial_population(model: &BatchCostModel, c: &Constraints, params: &GaParams, rng: &mut ChaCha8Rng) -> Vec<Chromosome> {
    let seed = seed_chromosome(model, c);
    let all: Vec<usize> = (0..model.vms().len()).collect();
    let mut pop = Vec::with_capacity(params.population_size);
    pop.push(seed.clone());
    while pop.len() < params.population_size {
        let mut draw = perturb(&seed, model, &all, params.mutation_rate, rng);
        if params.mutation_rate > 0.0 {
            // Redraw duplicates, first at the configured rate, then with
            // every gene resampled.
            for k in 1..2 * PERTURBATION_DRAWS {
                if !pop.contains(&draw) {
                    break;
                }
                let rate = if k < PERTURBATION_DRAWS { params.mutation_rate } else { 1.0 };
                draw = perturb(&seed, model, &all, rate, rng);
            }
        }
        pop.push(draw);
    }
    pop
}

/// Redraws per initial member at each perturbation strength before settling
/// for a duplicate.
const PERTURBATION_DRAWS: usize = 64;

fn perturb(seed: &Chromosome, model: &BatchCostModel, all: &[usize], rate: f64, rng: &mut ChaCha8Rng) -> Chromosome {
    let mut genes = seed.genes.clone();
    if rate > 0.0 {
        for (j, g) in genes.iter_mut().enumerate() {
            if rng.random_bool(rate) {
                let choices = match model.feasible_vms(j) {
                    [] => all,
                    f => f,
                };
                *g = choices[rng.random_range(0..choices.len())];
            }
        }
    }
    Chromosome { genes }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub mapping: ScheduleMapping,
    pub genes: Vec<usize>,
    pub best_cost: f64,
    /// Cost of the worst-fit seed under the same cost model.
    pub seed_cost: f64,
    /// Best cost in the population at the start of each generation, plus the
    /// final value.
    pub best_cost_history: Vec<f64>,
    pub generations_run: usize,
}

fn tournament(costs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let i = rng.random_range(0..costs.len());
    let j = rng.random_range(0..costs.len());
    match costs[i].total_cmp(&costs[j]) {
        std::cmp::Ordering::Greater => j,
        std::cmp::Ordering::Less => i,
        std::cmp::Ordering::Equal => i.min(j),
    }
}

/// Index of the most expensive member; among equal costs the greatest
/// chromosome, matching the order `sort_population` establishes.
fn worst_member(costs: &[f64], pop: &[Chromosome]) -> usize {
    (0..costs.len())
        .max_by(|a, b| costs[*a].total_cmp(&costs[*b]).then_with(|| pop[*a].cmp(&pop[*b])))
        .expect("population is non-empty")
}

fn sort_population(pop: &mut Vec<Chromosome>, costs: &mut Vec<f64>) {
    let mut paired: Vec<(f64, Chromosome)> = costs.drain(..).zip(pop.drain(..)).collect();
    paired.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    for (c, g) in paired {
        costs.push(c);
        pop.push(g);
    }
}

/// Runs the evolutionary search over one batch of tasks.
pub fn ga_schedule(tasks: &[Task], vms: &[VmContext], c: &Constraints, params: &GaParams) -> Result<GaOutcome, ScheduleError> {
    params.validate()?;
    if vms.is_empty() {
        return Err(ScheduleError::NoVms);
    }
    let model = BatchCostModel::new(tasks, vms, params.weights()?, *c);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let all_vms: Vec<usize> = (0..vms.len()).collect();
    let len = model.tasks().len();

    let mut pop = initial_population(&model, c, params, &mut rng);
    let seed_cost = model.cost(&pop[0].genes);
    let mut costs = model.cost_all(&pop, params.execution);
    sort_population(&mut pop, &mut costs);

    let mut history = Vec::with_capacity(params.generations + 1);
    let mut stagnant = 0;
    let mut generations_run = 0;
    let n_offspring = params.population_size - params.elitism_count;

    for _ in 0..params.generations {
        history.push(costs[0]);
        let mut offspring: Vec<Chromosome> = Vec::with_capacity(n_offspring + 1);
        while offspring.len() < n_offspring {
            let a = &pop[tournament(&costs, &mut rng)];
            let b = &pop[tournament(&costs, &mut rng)];
            let (c1, c2) = if len >= 2 && rng.random_bool(params.crossover_rate) {
                let point = rng.random_range(1..len);
                crossover(a, b, point)?
            } else {
                (a.clone(), b.clone())
            };
            offspring.push(mutate(&c1, params.mutation_rate, &all_vms, &mut rng));
            if offspring.len() < n_offspring {
                offspring.push(mutate(&c2, params.mutation_rate, &all_vms, &mut rng));
            }
        }
        let offspring_costs = model.cost_all(&offspring, params.execution);

        let before = costs[0];
        for (child, child_cost) in offspring.into_iter().zip(offspring_costs) {
            let worst = worst_member(&costs, &pop);
            if child_cost < costs[worst] && !pop.contains(&child) {
                pop[worst] = child;
                costs[worst] = child_cost;
            }
        }
        sort_population(&mut pop, &mut costs);
        generations_run += 1;

        if costs[0] < before {
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        if params.stagnation_limit.is_some_and(|limit| stagnant >= limit) {
            break;
        }
    }
    history.push(costs[0]);

    if !costs[0].is_finite() {
        let unplaceable: Vec<String> = (0..len)
            .filter(|j| model.feasible_vms(*j).is_empty())
            .map(|j| format!("task {} fits on no VM", model.tasks()[j].id))
            .collect();
        let reasons = if unplaceable.is_empty() {
            vec!["every explored mapping exceeds a VM's CPU threshold or memory".to_string()]
        } else {
            unplaceable
        };
        return Err(ScheduleError::NoFeasibleSchedule { reasons });
    }

    Ok(GaOutcome {
        mapping: model.mapping_of(&pop[0].genes),
        genes: pop[0].genes.clone(),
        best_cost: costs[0],
        seed_cost,
        best_cost_history: history,
        generations_run,
    })
}
