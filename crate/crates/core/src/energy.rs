//! Execution time under processor sharing and per-task energy accounting.
//!
//! A VM running `n` tasks gives each of them `mips / n` MI per second, so a
//! task of length `L` alone on the VM finishes in `L / mips * n` seconds as
//! long as `n` stays constant. When a task joins a busy VM the ongoing tasks
//! slow down; the energy charged to the newcomer is the power of the combined
//! utilization while it shares the VM plus its solo power once the others have
//! finished.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Task, UtilizationVector, VmSpec};
use crate::power::{PowerError, PowerModel};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("mips must be > 0, got {0}")]
    NonPositiveMips(f64),
    #[error("task count must be >= 1")]
    NoTasks,
    #[error("length must be finite and >= 0, got {0}")]
    InvalidLength(f64),
    #[error(transparent)]
    Power(#[from] PowerError),
}

/// A task already running on a VM, observed at the scheduling instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningExecution {
    pub task: Task,
    pub started_s: f64,
    pub remaining_mi: f64,
}

/// A VM together with the tasks currently running on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmState {
    pub spec: VmSpec,
    pub running: Vec<RunningExecution>,
}

impl VmState {
    pub fn idle(spec: VmSpec) -> Self {
        Self { spec, running: Vec::new() }
    }

    pub fn load(&self) -> UtilizationVector {
        self.running.iter().map(|r| r.task.demand).sum()
    }

    pub fn is_idle(&self) -> bool {
        self.running.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub total_j: f64,
    /// Energy while sharing the VM with at least one ongoing task.
    pub parallel_phase_j: f64,
    /// Energy after every ongoing task has finished.
    pub solo_phase_j: f64,
    /// Execution time of the new task at the sharing level it starts with.
    pub et_prime_s: f64,
    /// Time until the first ongoing task finishes once the new task joins;
    /// zero on an idle VM.
    pub net_prev_s: f64,
}

pub fn execution_time(length_mi: f64, mips: f64, n_tasks: usize) -> Result<f64, EnergyError> {
    if !(mips.is_finite() && mips > 0.0) {
        return Err(EnergyError::NonPositiveMips(mips));
    }
    if n_tasks < 1 {
        return Err(EnergyError::NoTasks);
    }
    if !(length_mi.is_finite() && length_mi >= 0.0) {
        return Err(EnergyError::InvalidLength(length_mi));
    }
    Ok(length_mi / mips * n_tasks as f64)
}

pub fn task_energy_simple(power_w: f64, et_s: f64) -> f64 {
    power_w * et_s
}

/// Time the ongoing task still needs once `n_after` tasks share the VM.
pub fn new_execution_time(ongoing: &RunningExecution, mips: f64, n_after: usize) -> Result<f64, EnergyError> {
    execution_time(ongoing.remaining_mi, mips, n_after)
}

/// Energy charged to `new_task` when placed on `vm` next to `ongoing`, using
/// `model` for power. Errors if the model cannot be evaluated at some segment's
/// utilization.
pub fn incremental_energy(
    new_task: &Task,
    vm: &VmSpec,
    ongoing: &[RunningExecution],
    model: &PowerModel,
) -> Result<EnergyBreakdown, EnergyError> {
    let others: Vec<(f64, UtilizationVector)> = ongoing.iter().map(|r| (r.remaining_mi, r.task.demand)).collect();
    incremental_energy_with(new_task.length_mi, new_task.demand, vm.mips, &others, |u| model.predict(u))
}

/// Core of [`incremental_energy`] over `(remaining_mi, demand)` pairs and an
/// arbitrary power function.
///
/// The timeline is cut at every completion of an ongoing task; within a
/// segment the number of tasks and the combined utilization are constant.
/// With one ongoing task this reduces to the three-case rule: idle VM,
/// newcomer finishes first (ties included), or newcomer outlives the ongoing
/// task and finishes alone.
pub fn incremental_energy_with<F>(
    length_mi: f64,
    demand: UtilizationVector,
    mips: f64,
    ongoing: &[(f64, UtilizationVector)],
    power: F,
) -> Result<EnergyBreakdown, EnergyError>
where
    F: Fn(&UtilizationVector) -> Result<f64, PowerError>,
{
    let n0 = ongoing.len() + 1;
    let et_prime_s = execution_time(length_mi, mips, n0)?;
    let mut others: Vec<(f64, UtilizationVector)> = ongoing.to_vec();
    others.sort_by(|a, b| a.0.total_cmp(&b.0));
    let net_prev_s = match others.first() {
        Some((rem, _)) => execution_time(*rem, mips, n0)?,
        None => 0.0,
    };

    let mut remaining = length_mi;
    let mut parallel = 0.0;
    let mut solo = 0.0;
    let mut first = 0;
    loop {
        let active = &others[first..];
        let Some(&(next_done, _)) = active.first() else {
            solo = task_energy_simple(power(&demand)?, execution_time(remaining, mips, 1)?);
            break;
        };
        let n = active.len() + 1;
        let combined = active.iter().map(|(_, u)| *u).sum::<UtilizationVector>() + demand;
        let p = power(&combined)?;
        if remaining <= next_done {
            parallel += task_energy_simple(p, execution_time(remaining, mips, n)?);
            break;
        }
        parallel += task_energy_simple(p, execution_time(next_done, mips, n)?);
        remaining -= next_done;
        for o in &mut others[first..] {
            o.0 -= next_done;
        }
        while first < others.len() && others[first].0 <= 0.0 {
            first += 1;
        }
    }
    Ok(EnergyBreakdown { total_j: parallel + solo, parallel_phase_j: parallel, solo_phase_j: solo, et_prime_s, net_prev_s })
}
