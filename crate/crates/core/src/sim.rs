//! Discrete-event simulation of task arrivals, placement and processor-shared
//! execution, with a per-VM energy meter.
//!
//! Arrivals at the same timestamp form one batch handed to the scheduler.
//! Every change to a VM's task set first advances the VM to the current time
//! (charging the meter and draining remaining work at the old sharing level),
//! then reschedules the VM's next completion.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Constraints, Task, VmId, VmSpec};
use crate::energy::{incremental_energy_with, RunningExecution, VmState};
use crate::objective::check_capacity;
use crate::power::PowerModel;
use crate::schedulers::{ModelSet, ScheduleError, Scheduler};

/// Relative tolerance on completed work.
pub const WORK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("duplicate task id {0}")]
    DuplicateTask(String),
    #[error("no meter model for {0}")]
    MissingMeter(VmId),
    #[error("scheduler: {0}")]
    Scheduler(#[from] ScheduleError),
    #[error("placement of {task} on {vm} at t={time_s} violates capacity")]
    CapacityViolation { task: String, vm: VmId, time_s: f64 },
    #[error("scheduler placed unknown task {task} or unknown {vm}")]
    BadPlacement { task: String, vm: VmId },
    #[error("internal accounting error: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    TaskCompletion,
    TaskArrival,
}

/// Completions carry the VM index and the VM's epoch when scheduled; an
/// event whose epoch is behind the VM's is stale and skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub time_s: f64,
    pub kind: EventKind,
    pub task_id: String,
    pub vm: usize,
    pub epoch: u64,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time_s
            .total_cmp(&other.time_s)
            .then(self.kind.cmp(&other.kind))
            .then_with(|| self.task_id.cmp(&other.task_id))
            .then(self.vm.cmp(&other.vm))
            .then(self.epoch.cmp(&other.epoch))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub vm_id: VmId,
    pub arrival_s: f64,
    pub start_s: f64,
    pub finish_s: f64,
    /// Incremental energy charged to the task when it was placed.
    pub energy_j: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    /// Completed tasks in arrival order.
    pub records: Vec<TaskRecord>,
    pub rejected: Vec<String>,
    /// Metered energy over every VM's busy time.
    pub total_energy_j: f64,
    pub mean_execution_time_s: f64,
    pub rejected_task_count: usize,
    pub makespan_s: f64,
    /// Meter queries that fell outside a model's calibrated range.
    pub clamped_queries: u64,
}

/// A VM inside the simulation.
#[derive(Debug, Clone)]
pub struct SimVm {
    pub state: VmState,
    pub last_update_s: f64,
    pub epoch: u64,
    pub energy_j: f64,
    /// Work processed so far per running task, parallel to `state.running`.
    processed_mi: Vec<f64>,
}

impl SimVm {
    pub fn new(spec: VmSpec) -> Self {
        Self { state: VmState::idle(spec), last_update_s: 0.0, epoch: 0, energy_j: 0.0, processed_mi: Vec::new() }
    }

    fn rate(&self) -> f64 {
        self.state.spec.mips / self.state.running.len() as f64
    }

    /// Time at which the running task with least remaining work finishes,
    /// with its id.
    pub fn next_completion(&self) -> Option<(f64, &str)> {
        let n = self.state.running.len() as f64;
        self.state
            .running
            .iter()
            .min_by(|a, b| a.remaining_mi.total_cmp(&b.remaining_mi).then_with(|| a.task.id.cmp(&b.task.id)))
            .map(|r| (self.last_update_s + r.remaining_mi * n / self.state.spec.mips, r.task.id.as_str()))
    }

    fn push(&mut self, task: Task, now: f64) {
        self.state.running.push(RunningExecution { remaining_mi: task.length_mi, task, started_s: now });
        self.processed_mi.push(0.0);
    }
}

/// Advances `vm` to `now`: drains `elapsed * mips / n` MI from every running
/// task and charges the meter for the segment. Tasks left with no work (up to
/// rounding) are removed and returned with their finish time.
pub fn advance_vm_state(
    vm: &mut SimVm,
    now: f64,
    meter: &PowerModel,
    clamped: &mut u64,
) -> Result<Vec<(RunningExecution, f64)>, SimError> {
    let elapsed = now - vm.last_update_s;
    if elapsed < 0.0 {
        return Err(SimError::Internal(format!("{} moved back in time to {now}", vm.state.spec.id)));
    }
    if !vm.state.is_idle() && elapsed > 0.0 {
        let (watts, was_clamped) = meter.predict_clamped(&vm.state.load());
        if was_clamped {
            *clamped += 1;
            log::debug!("{}: meter query clamped at t={now}", vm.state.spec.id);
        }
        vm.energy_j += watts * elapsed;
        let done = elapsed * vm.rate();
        for (r, p) in vm.state.running.iter_mut().zip(vm.processed_mi.iter_mut()) {
            r.remaining_mi -= done;
            *p += done;
        }
    }
    vm.last_update_s = now;

    let mut finished = Vec::new();
    let mut k = 0;
    while k < vm.state.running.len() {
        let r = &vm.state.running[k];
        let slack = WORK_TOLERANCE * r.task.length_mi.max(1.0);
        if r.remaining_mi < -slack {
            return Err(SimError::Internal(format!("{} overran by {} MI", r.task.id, -r.remaining_mi)));
        }
        if r.remaining_mi <= slack {
            let processed = vm.processed_mi.remove(k);
            let r = vm.state.running.remove(k);
            if (processed - r.task.length_mi).abs() > slack {
                return Err(SimError::Internal(format!(
                    "{} processed {processed} MI of {}",
                    r.task.id, r.task.length_mi
                )));
            }
            finished.push((r, now));
        } else {
            k += 1;
        }
    }
    Ok(finished)
}

struct Pending {
    arrival_s: f64,
    start_s: f64,
    vm_id: VmId,
    energy_j: f64,
}

struct Engine<'a> {
    scheduler: &'a Scheduler,
    constraints: Constraints,
    meters: Vec<&'a PowerModel>,
    vms: Vec<SimVm>,
    queue: BinaryHeap<Reverse<SimEvent>>,
    pending: HashMap<String, Pending>,
    report: SimReport,
}

impl Engine<'_> {
    /// Advances VM `i` to `now`, records finished tasks and reschedules the
    /// VM's next completion if anything finished or `force` is set.
    fn advance(&mut self, i: usize, now: f64, force: bool) -> Result<usize, SimError> {
        let finished = advance_vm_state(&mut self.vms[i], now, self.meters[i], &mut self.report.clamped_queries)?;
        let n = finished.len();
        for (r, finish_s) in finished {
            let p = self
                .pending
                .remove(&r.task.id)
                .ok_or_else(|| SimError::Internal(format!("{} finished twice", r.task.id)))?;
            self.report.records.push(TaskRecord {
                task_id: r.task.id,
                vm_id: p.vm_id,
                arrival_s: p.arrival_s,
                start_s: p.start_s,
                finish_s,
                energy_j: p.energy_j,
            });
        }
        if n > 0 || force {
            self.schedule_completion(i);
        }
        Ok(n)
    }

    fn schedule_completion(&mut self, i: usize) {
        let vm = &mut self.vms[i];
        vm.epoch += 1;
        if let Some((time_s, id)) = vm.next_completion() {
            self.queue.push(Reverse(SimEvent {
                time_s,
                kind: EventKind::TaskCompletion,
                task_id: id.to_string(),
                vm: i,
                epoch: vm.epoch,
            }));
        }
    }

    fn place_batch(&mut self, batch: &[Task], now: f64, batch_index: u64) -> Result<(), SimError> {
        // Bring every VM up to date so the scheduler sees current remaining work.
        for i in 0..self.vms.len() {
            self.advance(i, now, false)?;
        }
        let states: Vec<VmState> = self.vms.iter().map(|v| v.state.clone()).collect();
        let placement = match self.scheduler.place_batch(batch, &states, batch_index) {
            Ok(p) => p,
            Err(e @ (ScheduleError::MissingModel(_) | ScheduleError::InvalidParams(_))) => return Err(e.into()),
            Err(e) => {
                log::warn!("batch at t={now} rejected: {e}");
                self.report.rejected.extend(batch.iter().map(|t| t.id.clone()));
                return Ok(());
            }
        };
        self.report.rejected.extend(placement.rejected);

        let mut touched = Vec::new();
        for (task_id, vm_id) in placement.assignments {
            let task = batch.iter().find(|t| t.id == task_id);
            let index = self.vms.iter().position(|v| v.state.spec.id == vm_id);
            let (Some(task), Some(i)) = (task, index) else {
                return Err(SimError::BadPlacement { task: task_id, vm: vm_id });
            };
            let vm = &mut self.vms[i];
            if !check_capacity(&vm.state.spec, &vm.state.load(), &task.demand, &self.constraints) {
                return Err(SimError::CapacityViolation { task: task_id, vm: vm_id, time_s: now });
            }
            let ongoing: Vec<_> = vm.state.running.iter().map(|r| (r.remaining_mi, r.task.demand)).collect();
            let model = self.meters[i];
            let energy = incremental_energy_with(task.length_mi, task.demand, vm.state.spec.mips, &ongoing, |u| {
                Ok(model.predict_clamped(u).0)
            })
            .map_err(|e| SimError::Internal(e.to_string()))?;
            self.pending.insert(
                task.id.clone(),
                Pending { arrival_s: task.arrival_s, start_s: now, vm_id, energy_j: energy.total_j },
            );
            vm.push(task.clone(), now);
            if !touched.contains(&i) {
                touched.push(i);
            }
        }
        for i in touched {
            self.schedule_completion(i);
        }
        Ok(())
    }
}

/// Runs `workload` on `vms`. `meter` supplies the power model of each VM's
/// host for energy accounting, independent of what the scheduler uses.
pub fn run_simulation(workload: &[Task], vms: &[VmSpec], meter: &ModelSet, scheduler: &Scheduler) -> Result<SimReport, SimError> {
    let mut tasks: Vec<Task> = workload.to_vec();
    crate::domain::sort_by_arrival(&mut tasks);
    let mut by_id: HashMap<&str, &Task> = HashMap::with_capacity(tasks.len());
    for t in &tasks {
        t.validate().map_err(|e| SimError::InvalidTask(format!("{}: {e}", t.id)))?;
        if by_id.insert(t.id.as_str(), t).is_some() {
            return Err(SimError::DuplicateTask(t.id.clone()));
        }
    }
    let meters: Vec<&PowerModel> = vms
        .iter()
        .map(|v| meter.get(&v.host_id).ok_or(SimError::MissingMeter(v.id)))
        .collect::<Result<_, _>>()?;

    let mut engine = Engine {
        scheduler,
        constraints: *scheduler.constraints(),
        meters,
        vms: vms.iter().cloned().map(SimVm::new).collect(),
        queue: BinaryHeap::new(),
        pending: HashMap::new(),
        report: SimReport::default(),
    };
    for t in &tasks {
        engine.queue.push(Reverse(SimEvent {
            time_s: t.arrival_s,
            kind: EventKind::TaskArrival,
            task_id: t.id.clone(),
            vm: 0,
            epoch: 0,
        }));
    }

    let mut batch_index = 0u64;
    while let Some(Reverse(event)) = engine.queue.pop() {
        let now = event.time_s;
        match event.kind {
            EventKind::TaskCompletion => {
                if event.epoch != engine.vms[event.vm].epoch {
                    continue;
                }
                if engine.advance(event.vm, now, true)? == 0 {
                    return Err(SimError::Internal(format!(
                        "completion of {} at t={now} found no finished task",
                        event.task_id
                    )));
                }
            }
            EventKind::TaskArrival => {
                let mut batch = vec![by_id[event.task_id.as_str()].clone()];
                while let Some(Reverse(next)) = engine.queue.peek() {
                    if next.kind != EventKind::TaskArrival || next.time_s != now {
                        break;
                    }
                    let Reverse(next) = engine.queue.pop().expect("peeked");
                    batch.push(by_id[next.task_id.as_str()].clone());
                }
                engine.place_batch(&batch, now, batch_index)?;
                batch_index += 1;
            }
        }
    }

    if !engine.pending.is_empty() {
        return Err(SimError::Internal(format!("{} task(s) never completed", engine.pending.len())));
    }
    let mut report = engine.report;
    let order: HashMap<&str, usize> = tasks.iter().enumerate().map(|(i, t)| (t.id.as_str(), i)).collect();
    report.records.sort_by_key(|r| order[r.task_id.as_str()]);
    report.total_energy_j = engine.vms.iter().map(|v| v.energy_j).sum();
    report.rejected_task_count = report.rejected.len();
    report.makespan_s = report.records.iter().map(|r| r.finish_s).fold(0.0, f64::max);
    if !report.records.is_empty() {
        report.mean_execution_time_s =
            report.records.iter().map(|r| r.finish_s - r.start_s).sum::<f64>() / report.records.len() as f64;
    }
    Ok(report)
}
