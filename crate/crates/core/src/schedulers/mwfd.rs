use crate::domain::{Constraints, ScheduleMapping, Task, UtilizationVector};
use crate::objective::{check_capacity, VmContext};

/// Result of a worst-fit pass; tasks that fit nowhere stay unassigned.
#[derive(Debug, Clone, PartialEq)]
pub struct MwfdOutcome {
    pub mapping: ScheduleMapping,
    pub unassigned: Vec<String>,
    /// Task ids in the order they were considered.
    pub order: Vec<String>,
}

/// Modified worst fit decreasing.
///
/// Tasks are taken by decreasing CPU demand (ties by id). Each goes to the
/// feasible VM whose power rises the most when the task is added; an idle
/// VM draws no power before the placement. Ties go to the lowest VM id.
pub fn mwfd_schedule(tasks: &[Task], vms: &[VmContext], c: &Constraints) -> MwfdOutcome {
    let mut order: Vec<&Task> = tasks.iter().collect();
    order.sort_by(|a, b| b.demand.cpu_pct.total_cmp(&a.demand.cpu_pct).then_with(|| a.id.cmp(&b.id)));

    let mut by_id: Vec<usize> = (0..vms.len()).collect();
    by_id.sort_by_key(|i| vms[*i].spec().id);

    let mut load: Vec<UtilizationVector> = vms.iter().map(|v| v.state.load()).collect();
    let mut count: Vec<usize> = vms.iter().map(|v| v.state.running.len()).collect();
    let mut out = MwfdOutcome { mapping: ScheduleMapping::new(), unassigned: Vec::new(), order: Vec::new() };

    for task in order {
        out.order.push(task.id.clone());
        let mut best: Option<(usize, f64)> = None;
        for &i in &by_id {
            let vm = &vms[i];
            if !check_capacity(vm.spec(), &load[i], &task.demand, c) {
                continue;
            }
            let before = if count[i] == 0 { 0.0 } else { vm.power(&load[i]) };
            let increase = vm.power(&(load[i] + task.demand)) - before;
            if best.is_none_or(|(_, b)| increase > b) {
                best = Some((i, increase));
            }
        }
        match best {
            Some((i, _)) => {
                out.mapping.assign(task.id.clone(), vms[i].spec().id);
                load[i] = load[i] + task.demand;
                count[i] += 1;
            }
            None => out.unassigned.push(task.id.clone()),
        }
    }
    out
}
