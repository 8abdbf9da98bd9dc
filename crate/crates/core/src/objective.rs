//! Weighted-sum cost over normalized execution time and energy, capacity
//! constraints, and chromosome-level cost for the evolutionary scheduler.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Constraints, ScheduleMapping, Task, UtilizationVector, VmId, VmSpec};
use crate::energy::{execution_time, incremental_energy_with, VmState};
use crate::par::{self, Execution};
use crate::power::PowerModel;

/// Added to the cost before inverting it into a fitness.
pub const FITNESS_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("cannot normalize an empty list")]
    EmptyInput,
    #[error("alpha must be in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("no feasible placement for task {0}")]
    NoFeasiblePlacement(String),
    #[error("mapping does not assign every task to exactly one known VM")]
    InvalidMapping,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Weight of the execution-time term; energy gets `1 - alpha`.
    pub alpha: f64,
}

impl CostWeights {
    pub fn new(alpha: f64) -> Result<Self, ObjectiveError> {
        if (0.0..=1.0).contains(&alpha) {
            Ok(Self { alpha })
        } else {
            Err(ObjectiveError::InvalidAlpha(alpha))
        }
    }
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub vm_id: VmId,
    pub et_s: f64,
    pub ec_j: f64,
    pub et_norm: f64,
    pub ec_norm: f64,
    pub cost: f64,
    pub feasible: bool,
}

/// A VM state paired with the power model a scheduler uses to judge it.
#[derive(Debug, Clone, Copy)]
pub struct VmContext<'a> {
    pub state: &'a VmState,
    pub model: &'a PowerModel,
}

impl VmContext<'_> {
    pub fn spec(&self) -> &VmSpec {
        &self.state.spec
    }

    /// Model power in watts, with utilization clamped to the model's
    /// calibrated range.
    pub fn power(&self, util: &UtilizationVector) -> f64 {
        let (watts, clamped) = self.model.predict_clamped(util);
        if clamped {
            log::trace!("{}: scheduler power query clamped at {util:?}", self.state.spec.id);
        }
        watts
    }
}

/// `(v - min) / (max - min)` elementwise; a degenerate range maps to zeros.
pub fn min_max_normalize(values: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
    let bounds = Bounds::of(values.iter().copied()).ok_or(ObjectiveError::EmptyInput)?;
    Ok(values.iter().map(|v| bounds.normalize(*v)).collect())
}

pub fn cost(et_norm: f64, ec_norm: f64, w: CostWeights) -> f64 {
    w.alpha * et_norm + (1.0 - w.alpha) * ec_norm
}

/// CPU must stay strictly below the threshold; memory must fit in the VM.
pub fn check_capacity(vm: &VmSpec, current_load: &UtilizationVector, new_demand: &UtilizationVector, c: &Constraints) -> bool {
    current_load.cpu_pct + new_demand.cpu_pct < c.cpu_threshold_pct && current_load.mem_mb + new_demand.mem_mb <= vm.ram_mb
}

pub fn fitness(cost: f64) -> f64 {
    if cost.is_finite() {
        1.0 / (cost + FITNESS_EPSILON)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Bounds {
    min: f64,
    max: f64,
}

impl Bounds {
    fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        values.fold(None, |acc, v| match acc {
            None => Some(Self { min: v, max: v }),
            Some(b) => Some(Self { min: b.min.min(v), max: b.max.max(v) }),
        })
    }

    fn normalize(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }
}

/// Time and energy of `task` on `vm` given extra tasks already placed there in
/// the same batch (each with its full length remaining).
fn time_and_energy(task: &Task, vm: &VmContext, extra: &[(f64, UtilizationVector)]) -> (f64, f64) {
    let mut ongoing: Vec<(f64, UtilizationVector)> =
        vm.state.running.iter().map(|r| (r.remaining_mi, r.task.demand)).collect();
    ongoing.extend_from_slice(extra);
    let mips = vm.spec().mips;
    let et = execution_time(task.length_mi, mips, ongoing.len() + 1).expect("validated VM and task");
    let ec = incremental_energy_with(task.length_mi, task.demand, mips, &ongoing, |u| Ok(vm.power(u)))
        .expect("clamped power never fails")
        .total_j;
    (et, ec)
}

/// Scores every VM for a single task. Infeasible VMs carry an infinite cost.
pub fn evaluate_candidates(
    task: &Task,
    vms: &[VmContext],
    w: CostWeights,
    c: &Constraints,
) -> Result<Vec<CandidateEvaluation>, ObjectiveError> {
    let mut out: Vec<CandidateEvaluation> = vms
        .iter()
        .map(|vm| {
            let feasible = check_capacity(vm.spec(), &vm.state.load(), &task.demand, c);
            let (et_s, ec_j) = if feasible { time_and_energy(task, vm, &[]) } else { (f64::INFINITY, f64::INFINITY) };
            CandidateEvaluation { vm_id: vm.spec().id, et_s, ec_j, et_norm: 0.0, ec_norm: 0.0, cost: f64::INFINITY, feasible }
        })
        .collect();
    let feasible: Vec<usize> = (0..out.len()).filter(|i| out[*i].feasible).collect();
    if feasible.is_empty() {
        return Err(ObjectiveError::NoFeasiblePlacement(task.id.clone()));
    }
    let et = Bounds::of(feasible.iter().map(|i| out[*i].et_s)).expect("non-empty");
    let ec = Bounds::of(feasible.iter().map(|i| out[*i].ec_j)).expect("non-empty");
    for i in feasible {
        let cand = &mut out[i];
        cand.et_norm = et.normalize(cand.et_s);
        cand.ec_norm = ec.normalize(cand.ec_j);
        cand.cost = cost(cand.et_norm, cand.ec_norm, w);
    }
    Ok(out)
}

/// Lowest-cost feasible candidate, ties broken by lowest VM id.
pub fn select_candidate(candidates: &[CandidateEvaluation]) -> Option<&CandidateEvaluation> {
    candidates
        .iter()
        .filter(|c| c.feasible)
        .min_by(|a, b| a.cost.total_cmp(&b.cost).then(a.vm_id.cmp(&b.vm_id)))
}

/// Cost evaluator for one batch of tasks placed at the same instant.
///
/// Chromosome genes are indices into the VM slice, one per task in
/// `(arrival, id)` order. Execution time and energy are normalized with
/// bounds taken over every feasible single (task, VM) pair against the
/// pre-batch VM states, so costs of different chromosomes are comparable.
#[derive(Debug)]
pub struct BatchCostModel<'a> {
    tasks: Vec<&'a Task>,
    vms: &'a [VmContext<'a>],
    weights: CostWeights,
    constraints: Constraints,
    base_load: Vec<UtilizationVector>,
    feasible: Vec<Vec<usize>>,
    et_bounds: Bounds,
    ec_bounds: Bounds,
}

impl<'a> BatchCostModel<'a> {
    pub fn new(tasks: &'a [Task], vms: &'a [VmContext<'a>], weights: CostWeights, constraints: Constraints) -> Self {
        let mut ordered: Vec<&Task> = tasks.iter().collect();
        ordered.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s).then_with(|| a.id.cmp(&b.id)));
        let base_load: Vec<UtilizationVector> = vms.iter().map(|v| v.state.load()).collect();
        let mut feasible = Vec::with_capacity(ordered.len());
        let mut ets = Vec::new();
        let mut ecs = Vec::new();
        for task in &ordered {
            let ok: Vec<usize> = (0..vms.len())
                .filter(|i| check_capacity(vms[*i].spec(), &base_load[*i], &task.demand, &constraints))
                .collect();
            for i in &ok {
                let (et, ec) = time_and_energy(task, &vms[*i], &[]);
                ets.push(et);
                ecs.push(ec);
            }
            feasible.push(ok);
        }
        let zero = Bounds { min: 0.0, max: 0.0 };
        Self {
            tasks: ordered,
            vms,
            weights,
            constraints,
            base_load,
            feasible,
            et_bounds: Bounds::of(ets.into_iter()).unwrap_or(zero),
            ec_bounds: Bounds::of(ecs.into_iter()).unwrap_or(zero),
        }
    }

    /// Tasks in gene order.
    pub fn tasks(&self) -> &[&'a Task] {
        &self.tasks
    }

    pub fn vms(&self) -> &[VmContext<'a>] {
        self.vms
    }

    /// VM indices where task `j` fits on its own against the pre-batch state.
    pub fn feasible_vms(&self, j: usize) -> &[usize] {
        &self.feasible[j]
    }

    /// Sum of per-task costs, or infinity if any capacity limit is exceeded.
    pub fn cost(&self, genes: &[usize]) -> f64 {
        debug_assert_eq!(genes.len(), self.tasks.len());
        let mut placed: Vec<Vec<(f64, UtilizationVector)>> = vec![Vec::new(); self.vms.len()];
        let mut total = 0.0;
        for (task, &vm) in self.tasks.iter().zip(genes) {
            let ctx = &self.vms[vm];
            let load = self.base_load[vm] + placed[vm].iter().map(|(_, u)| *u).sum();
            if !check_capacity(ctx.spec(), &load, &task.demand, &self.constraints) {
                return f64::INFINITY;
            }
            let (et, ec) = time_and_energy(task, ctx, &placed[vm]);
            total += cost(self.et_bounds.normalize(et), self.ec_bounds.normalize(ec), self.weights);
            placed[vm].push((task.length_mi, task.demand));
        }
        total
    }

    /// Costs of many chromosomes, in input order.
    pub fn cost_all<G: AsRef<[usize]> + Sync>(&self, population: &[G], exec: Execution) -> Vec<f64> {
        par::map(population, exec, |g| self.cost(g.as_ref()))
    }

    pub fn genes_of(&self, mapping: &ScheduleMapping) -> Option<Vec<usize>> {
        self.tasks
            .iter()
            .map(|t| {
                let vm = mapping.vm_of(&t.id)?;
                self.vms.iter().position(|c| c.spec().id == vm)
            })
            .collect()
    }

    pub fn mapping_of(&self, genes: &[usize]) -> ScheduleMapping {
        let mut m = ScheduleMapping::new();
        for (t, g) in self.tasks.iter().zip(genes) {
            m.assign(t.id.clone(), self.vms[*g].spec().id);
        }
        m
    }
}

/// Cost of a complete mapping of `tasks` onto `vms`.
pub fn chromosome_cost(
    mapping: &ScheduleMapping,
    tasks: &[Task],
    vms: &[VmContext],
    w: CostWeights,
    c: &Constraints,
) -> Result<f64, ObjectiveError> {
    let specs: Vec<VmSpec> = vms.iter().map(|v| v.spec().clone()).collect();
    if !mapping.validate(tasks, &specs) {
        return Err(ObjectiveError::InvalidMapping);
    }
    let model = BatchCostModel::new(tasks, vms, w, *c);
    let genes = model.genes_of(mapping).ok_or(ObjectiveError::InvalidMapping)?;
    Ok(model.cost(&genes))
}
