use super::ScheduleError;
use crate::domain::{Constraints, ScheduleMapping, Task};
use crate::objective::{BatchCostModel, CostWeights, VmContext};

/// Largest search space the exhaustive scheduler accepts.
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceOutcome {
    pub mapping: ScheduleMapping,
    pub genes: Vec<usize>,
    pub best_cost: f64,
    pub evaluated: usize,
}

/// Exact minimizer of the batch cost over every mapping. Mappings are
/// enumerated in lexicographic gene order and the first minimum wins.
pub fn brute_force_schedule(
    tasks: &[Task],
    vms: &[VmContext],
    w: CostWeights,
    c: &Constraints,
) -> Result<BruteForceOutcome, ScheduleError> {
    if vms.is_empty() {
        return Err(ScheduleError::NoVms);
    }
    let size = (vms.len() as f64).powi(tasks.len() as i32);
    if size > BRUTE_FORCE_LIMIT {
        return Err(ScheduleError::InstanceTooLarge { size, limit: BRUTE_FORCE_LIMIT });
    }
    let model = BatchCostModel::new(tasks, vms, w, *c);
    let mut genes = vec![0usize; tasks.len()];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut evaluated = 0;
    loop {
        let cost = model.cost(&genes);
        evaluated += 1;
        if cost.is_finite() && best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, genes.clone()));
        }
        // Odometer increment, last gene fastest.
        let mut pos = genes.len();
        loop {
            if pos == 0 {
                let (best_cost, genes) = best.ok_or_else(|| ScheduleError::NoFeasibleSchedule {
                    reasons: vec!["every mapping exceeds a VM's CPU threshold or memory".into()],
                })?;
                return Ok(BruteForceOutcome { mapping: model.mapping_of(&genes), genes, best_cost, evaluated });
            }
            pos -= 1;
            genes[pos] += 1;
            if genes[pos] < vms.len() {
                break;
            }
            genes[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{HostId, UtilizationVector, VmId, VmSpec};
    use crate::energy::VmState;
    use crate::objective::{evaluate_candidates, select_candidate};
    use crate::power::{MlrCoefficients, PowerModel};

    fn setup(n: u32) -> (Vec<VmState>, Vec<PowerModel>) {
        let st = (0..n)
            .map(|i| VmState::idle(VmSpec::new(VmId(i), 1200.0 + 400.0 * i as f64, 2000.0, HostId(0)).unwrap()))
            .collect();
        let ms = (0..n)
            .map(|i| PowerModel::linear_cpu_mem(MlrCoefficients::new(30.0 + 45.0 * i as f64, 0.8, 0.02, 0.0, 0.0)).unwrap())
            .collect();
        (st, ms)
    }

    fn task(id: &str, len: f64, cpu: f64) -> Task {
        Task::new(id, len, UtilizationVector::new(cpu, 100.0, 0.0, 0.0).unwrap(), 0.0).unwrap()
    }

    #[test]
    fn single_task_matches_candidate_argmin() {
        let (st, ms) = setup(3);
        let ctx: Vec<_> = st.iter().zip(&ms).map(|(state, model)| VmContext { state, model }).collect();
        let t = task("a", 5000.0, 20.0);
        let w = CostWeights::default();
        let c = Constraints::default();
        let bf = brute_force_schedule(std::slice::from_ref(&t), &ctx, w, &c).unwrap();
        let cands = evaluate_candidates(&t, &ctx, w, &c).unwrap();
        assert_eq!(bf.mapping.vm_of("a"), Some(select_candidate(&cands).unwrap().vm_id));
        assert_eq!(bf.evaluated, 3);
    }

    #[test]
    fn two_by_two_is_minimum_of_four() {
        let (st, ms) = setup(2);
        let ctx: Vec<_> = st.iter().zip(&ms).map(|(state, model)| VmContext { state, model }).collect();
        let tasks = [task("a", 3000.0, 20.0), task("b", 7000.0, 40.0)];
        let w = CostWeights::default();
        let c = Constraints::default();
        let bf = brute_force_schedule(&tasks, &ctx, w, &c).unwrap();
        let model = BatchCostModel::new(&tasks, &ctx, w, c);
        let all = [[0, 0], [0, 1], [1, 0], [1, 1]].map(|g| model.cost(&g));
        let min = all.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(bf.best_cost, min);
        assert_eq!(bf.evaluated, 4);
    }

    #[test]
    fn all_infeasible_fails() {
        let (st, ms) = setup(2);
        let ctx: Vec<_> = st.iter().zip(&ms).map(|(state, model)| VmContext { state, model }).collect();
        let r = brute_force_schedule(&[task("a", 1.0, 90.0)], &ctx, CostWeights::default(), &Constraints::default());
        assert!(matches!(r, Err(ScheduleError::NoFeasibleSchedule { .. })));
    }

    #[test]
    fn guard_rejects_huge_instances() {
        let (st, ms) = setup(3);
        let ctx: Vec<_> = st.iter().zip(&ms).map(|(state, model)| VmContext { state, model }).collect();
        let tasks: Vec<Task> = (0..13).map(|i| task(&format!("t{i}"), 100.0, 1.0)).collect();
        let r = brute_force_schedule(&tasks, &ctx, CostWeights::default(), &Constraints::default());
        assert!(matches!(r, Err(ScheduleError::InstanceTooLarge { .. })));
    }
}
