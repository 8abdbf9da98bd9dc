//! Shared domain types: resource demand vectors, tasks, VMs, hosts and the
//! task-to-VM assignment.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("invalid utilization vector: {0}")]
    InvalidUtilization(String),
    #[error("invalid task {id}: {reason}")]
    InvalidTask { id: String, reason: String },
    #[error("invalid VM {id}: {reason}")]
    InvalidVm { id: VmId, reason: String },
    #[error("unknown VM id {0}")]
    UnknownVm(VmId),
    #[error("cpu threshold must be in (0, 100], got {0}")]
    InvalidThreshold(f64),
}

/// Resource demand of a task, or aggregate load of a VM.
///
/// The four fields are the predictors of the power models: CPU in percent,
/// memory in MB, disk and network throughput in bytes per second.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UtilizationVector {
    pub cpu_pct: f64,
    pub mem_mb: f64,
    pub disk_bps: f64,
    pub net_bps: f64,
}

impl UtilizationVector {
    pub const ZERO: Self = Self { cpu_pct: 0.0, mem_mb: 0.0, disk_bps: 0.0, net_bps: 0.0 };

    /// Builds a demand vector, rejecting values outside the valid domain.
    pub fn new(cpu_pct: f64, mem_mb: f64, disk_bps: f64, net_bps: f64) -> Result<Self, DomainError> {
        let v = Self { cpu_pct, mem_mb, disk_bps, net_bps };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !self.as_array().iter().all(|x| x.is_finite()) {
            return Err(DomainError::InvalidUtilization(format!("non-finite component in {self:?}")));
        }
        if !(0.0..=100.0).contains(&self.cpu_pct) {
            return Err(DomainError::InvalidUtilization(format!("cpu_pct {} outside [0, 100]", self.cpu_pct)));
        }
        if self.mem_mb < 0.0 || self.disk_bps < 0.0 || self.net_bps < 0.0 {
            return Err(DomainError::InvalidUtilization(format!("negative component in {self:?}")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cpu_pct, self.mem_mb, self.disk_bps, self.net_bps]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { cpu_pct: a[0], mem_mb: a[1], disk_bps: a[2], net_bps: a[3] }
    }
}

impl Add for UtilizationVector {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            cpu_pct: self.cpu_pct + rhs.cpu_pct,
            mem_mb: self.mem_mb + rhs.mem_mb,
            disk_bps: self.disk_bps + rhs.disk_bps,
            net_bps: self.net_bps + rhs.net_bps,
        }
    }
}

impl Sub for UtilizationVector {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        Self {
            cpu_pct: self.cpu_pct - rhs.cpu_pct,
            mem_mb: self.mem_mb - rhs.mem_mb,
            disk_bps: self.disk_bps - rhs.disk_bps,
            net_bps: self.net_bps - rhs.net_bps,
        }
    }
}

impl std::iter::Sum for UtilizationVector {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, |acc, v| acc + v)
    }
}

/// A unit of work submitted to the broker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    /// Length in million instructions.
    pub length_mi: f64,
    pub demand: UtilizationVector,
    pub arrival_s: f64,
}

impl Task {
    pub fn new(
        id: impl Into<String>,
        length_mi: f64,
        demand: UtilizationVector,
        arrival_s: f64,
    ) -> Result<Self, DomainError> {
        let task = Self { id: id.into(), length_mi, demand, arrival_s };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let invalid = |reason: &str| DomainError::InvalidTask { id: self.id.clone(), reason: reason.to_string() };
        if !(self.length_mi.is_finite() && self.length_mi > 0.0) {
            return Err(invalid("length_mi must be finite and > 0"));
        }
        if !(self.arrival_s.is_finite() && self.arrival_s >= 0.0) {
            return Err(invalid("arrival_s must be finite and >= 0"));
        }
        self.demand.validate()
    }
}

/// Sorts tasks by arrival time, breaking ties by id.
pub fn sort_by_arrival(tasks: &mut [Task]) {
    tasks.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s).then_with(|| a.id.cmp(&b.id)));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VmId(pub u32);

impl fmt::Display for VmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vm-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HostId(pub u32);

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "host-{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmSpec {
    pub id: VmId,
    pub mips: f64,
    pub ram_mb: f64,
    pub host_id: HostId,
}

impl VmSpec {
    pub fn new(id: VmId, mips: f64, ram_mb: f64, host_id: HostId) -> Result<Self, DomainError> {
        if !(mips.is_finite() && mips > 0.0) {
            return Err(DomainError::InvalidVm { id, reason: format!("mips must be > 0, got {mips}") });
        }
        if !(ram_mb.is_finite() && ram_mb > 0.0) {
            return Err(DomainError::InvalidVm { id, reason: format!("ram_mb must be > 0, got {ram_mb}") });
        }
        Ok(Self { id, mips, ram_mb, host_id })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostSpec {
    pub id: HostId,
    pub label: String,
    pub power_model_id: String,
}

/// Total assignment of tasks to VMs, keyed by task id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleMapping {
    pub assignment: BTreeMap<String, VmId>,
}

impl ScheduleMapping {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn assign(&mut self, task_id: impl Into<String>, vm: VmId) {
        self.assignment.insert(task_id.into(), vm);
    }

    pub fn vm_of(&self, task_id: &str) -> Option<VmId> {
        self.assignment.get(task_id).copied()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// True iff the mapping covers exactly the given tasks and references only
    /// known VMs.
    pub fn validate(&self, tasks: &[Task], vms: &[VmSpec]) -> bool {
        validate_mapping(self, tasks, vms)
    }
}

/// Checks that `mapping` assigns every task to exactly one existing VM and
/// mentions no other task.
pub fn validate_mapping(mapping: &ScheduleMapping, tasks: &[Task], vms: &[VmSpec]) -> bool {
    let vm_ids: HashSet<VmId> = vms.iter().map(|v| v.id).collect();
    let task_ids: HashSet<&str> = tasks.iter().map(|t| t.id.as_str()).collect();
    if task_ids.len() != tasks.len() || mapping.assignment.len() != task_ids.len() {
        return false;
    }
    mapping
        .assignment
        .iter()
        .all(|(task, vm)| task_ids.contains(task.as_str()) && vm_ids.contains(vm))
}

/// Componentwise sum of the demands of all tasks assigned to `vm_id`.
pub fn vm_load(
    mapping: &ScheduleMapping,
    vm_id: VmId,
    tasks: &[Task],
    vms: &[VmSpec],
) -> Result<UtilizationVector, DomainError> {
    if !vms.iter().any(|v| v.id == vm_id) {
        return Err(DomainError::UnknownVm(vm_id));
    }
    Ok(tasks
        .iter()
        .filter(|t| mapping.vm_of(&t.id) == Some(vm_id))
        .map(|t| t.demand)
        .sum())
}

/// Capacity limits enforced on every placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Constraints {
    pub cpu_threshold_pct: f64,
}

impl Constraints {
    pub fn new(cpu_threshold_pct: f64) -> Result<Self, DomainError> {
        let c = Self { cpu_threshold_pct };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.cpu_threshold_pct > 0.0 && self.cpu_threshold_pct <= 100.0 {
            Ok(())
        } else {
            Err(DomainError::InvalidThreshold(self.cpu_threshold_pct))
        }
    }
}

impl Default for Constraints {
    fn default() -> Self {
        Self { cpu_threshold_pct: 80.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn util(cpu: f64, mem: f64, disk: f64, net: f64) -> UtilizationVector {
        UtilizationVector::new(cpu, mem, disk, net).unwrap()
    }

    fn task(id: &str, cpu: f64) -> Task {
        Task::new(id, 1000.0, util(cpu, 100.0, 0.0, 0.0), 0.0).unwrap()
    }

    fn vms(n: u32) -> Vec<VmSpec> {
        (0..n).map(|i| VmSpec::new(VmId(i), 1000.0, 1000.0, HostId(0)).unwrap()).collect()
    }

    #[test]
    fn utilization_rejects_out_of_range() {
        assert!(UtilizationVector::new(101.0, 0.0, 0.0, 0.0).is_err());
        assert!(UtilizationVector::new(-1.0, 0.0, 0.0, 0.0).is_err());
        assert!(UtilizationVector::new(10.0, -1.0, 0.0, 0.0).is_err());
        assert!(UtilizationVector::new(10.0, 0.0, f64::NAN, 0.0).is_err());
        assert!(UtilizationVector::new(100.0, 0.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn task_invariants() {
        assert!(Task::new("a", 0.0, UtilizationVector::ZERO, 0.0).is_err());
        assert!(Task::new("a", 10.0, UtilizationVector::ZERO, -1.0).is_err());
    }

    #[test]
    fn valid_mapping_two_tasks() {
        let tasks = vec![task("a", 10.0), task("b", 20.0)];
        let mut m = ScheduleMapping::new();
        m.assign("a", VmId(0));
        m.assign("b", VmId(1));
        assert!(validate_mapping(&m, &tasks, &vms(2)));
    }

    #[test]
    fn mapping_missing_task_is_invalid() {
        let tasks = vec![task("a", 10.0), task("b", 20.0), task("c", 5.0)];
        let mut m = ScheduleMapping::new();
        m.assign("a", VmId(0));
        m.assign("b", VmId(1));
        assert!(!validate_mapping(&m, &tasks, &vms(2)));
    }

    #[test]
    fn mapping_with_dangling_vm_is_invalid() {
        let tasks = vec![task("a", 10.0)];
        let mut m = ScheduleMapping::new();
        m.assign("a", VmId(7));
        assert!(!validate_mapping(&m, &tasks, &vms(2)));
    }

    #[test]
    fn mapping_with_extra_task_is_invalid() {
        let tasks = vec![task("a", 10.0)];
        let mut m = ScheduleMapping::new();
        m.assign("a", VmId(0));
        m.assign("zz", VmId(0));
        assert!(!validate_mapping(&m, &tasks, &vms(1)));
    }

    #[test]
    fn vm_load_sums() {
        let tasks = vec![task("a", 30.0), task("b", 25.0)];
        let mut m = ScheduleMapping::new();
        m.assign("a", VmId(0));
        m.assign("b", VmId(0));
        let vms = vms(2);
        assert_eq!(vm_load(&m, VmId(0), &tasks, &vms).unwrap().cpu_pct, 55.0);
        assert_eq!(vm_load(&m, VmId(1), &tasks, &vms).unwrap(), UtilizationVector::ZERO);
        assert_eq!(vm_load(&m, VmId(9), &tasks, &vms), Err(DomainError::UnknownVm(VmId(9))));
    }

    #[test]
    fn vm_load_singleton_unchanged() {
        let t = Task::new("a", 10.0, util(10.0, 512.0, 100.0, 50.0), 0.0).unwrap();
        let mut m = ScheduleMapping::new();
        m.assign("a", VmId(0));
        assert_eq!(vm_load(&m, VmId(0), std::slice::from_ref(&t), &vms(1)).unwrap(), t.demand);
    }

    #[test]
    fn constraints_bounds() {
        assert!(Constraints::new(0.0).is_err());
        assert!(Constraints::new(100.0).is_ok());
        assert!(Constraints::new(100.5).is_err());
        assert_eq!(Constraints::default().cpu_threshold_pct, 80.0);
    }

    proptest! {
        #[test]
        fn validation_ignores_task_order(n_tasks in 1usize..8, n_vms in 1u32..4, seed in any::<u64>(), rot in 0usize..8) {
            let tasks: Vec<Task> = (0..n_tasks).map(|i| task(&format!("t{i}"), 1.0)).collect();
            let mut m = ScheduleMapping::new();
            for (i, t) in tasks.iter().enumerate() {
                m.assign(t.id.clone(), VmId(((seed as usize + i) % n_vms as usize) as u32));
            }
            let mut rotated = tasks.clone();
            rotated.rotate_left(rot % n_tasks);
            prop_assert_eq!(validate_mapping(&m, &tasks, &vms(n_vms)), validate_mapping(&m, &rotated, &vms(n_vms)));
        }

        #[test]
        fn load_is_conserved(cpus in prop::collection::vec(0.0f64..20.0, 1..10), n_vms in 1u32..5) {
            let tasks: Vec<Task> = cpus.iter().enumerate().map(|(i, c)| task(&format!("t{i}"), *c)).collect();
            let vms = vms(n_vms);
            let mut m = ScheduleMapping::new();
            for (i, t) in tasks.iter().enumerate() {
                m.assign(t.id.clone(), VmId(i as u32 % n_vms));
            }
            let per_vm: UtilizationVector = vms.iter().map(|v| vm_load(&m, v.id, &tasks, &vms).unwrap()).sum();
            let total: UtilizationVector = tasks.iter().map(|t| t.demand).sum();
            prop_assert!((per_vm.cpu_pct - total.cpu_pct).abs() < 1e-9);
            prop_assert!((per_vm.mem_mb - total.mem_mb).abs() < 1e-9);
        }
    }
}
