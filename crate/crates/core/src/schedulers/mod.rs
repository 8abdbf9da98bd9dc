//! Placement strategies: worst-fit seeding, the evolutionary scheduler and an
//! exhaustive oracle, plus the batch-level [`Scheduler`] the simulator drives.

mod brute;
mod ga;
mod mwfd;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Constraints, HostId, Task, VmId};
use crate::energy::VmState;
use crate::objective::{check_capacity, VmContext};
use crate::power::PowerModel;

pub use brute::{brute_force_schedule, BruteForceOutcome, BRUTE_FORCE_LIMIT};
pub use ga::{crossover, ga_schedule, init_population, mutate, Chromosome, GaOutcome, GaParams};
pub use mwfd::{mwfd_schedule, MwfdOutcome};

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("no VMs to schedule on")]
    NoVms,
    #[error("no feasible schedule: {}", .reasons.join("; "))]
    NoFeasibleSchedule { reasons: Vec<String> },
    #[error("search space of {size} mappings exceeds the limit of {limit}")]
    InstanceTooLarge { size: f64, limit: f64 },
    #[error("invalid scheduler parameters: {0}")]
    InvalidParams(String),
    #[error("no power model for host {0}")]
    MissingModel(HostId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SchedulerKind {
    #[serde(rename = "MWFD")]
    Mwfd,
    #[serde(rename = "GA_LC_MLR")]
    GaLcMlr,
    #[serde(rename = "GA_LM")]
    GaLm,
    #[serde(rename = "BRUTE_FORCE")]
    BruteForce,
}

impl SchedulerKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mwfd => "MWFD",
            Self::GaLcMlr => "GA_LC_MLR",
            Self::GaLm => "GA_LM",
            Self::BruteForce => "BRUTE_FORCE",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Power model used for each host's VMs.
pub type ModelSet = BTreeMap<HostId, PowerModel>;

/// Outcome of placing one arrival batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchPlacement {
    pub assignments: Vec<(String, VmId)>,
    pub rejected: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Strategy {
    Mwfd,
    Ga,
    BruteForce,
}

/// A scheduling policy bound to the power models it uses for decisions.
#[derive(Debug, Clone)]
pub struct Scheduler {
    kind: SchedulerKind,
    strategy: Strategy,
    models: ModelSet,
    params: GaParams,
    constraints: Constraints,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind, models: ModelSet, params: GaParams, constraints: Constraints) -> Result<Self, ScheduleError> {
        params.validate()?;
        let strategy = match kind {
            SchedulerKind::Mwfd => Strategy::Mwfd,
            SchedulerKind::GaLcMlr | SchedulerKind::GaLm => Strategy::Ga,
            SchedulerKind::BruteForce => Strategy::BruteForce,
        };
        Ok(Self { kind, strategy, models, params, constraints })
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn constraints(&self) -> &Constraints {
        &self.constraints
    }

    pub fn params(&self) -> &GaParams {
        &self.params
    }

    /// Checks that every VM's host has a model.
    pub fn check_models(&self, vms: &[VmState]) -> Result<(), ScheduleError> {
        match vms.iter().find(|v| !self.models.contains_key(&v.spec.host_id)) {
            Some(v) => Err(ScheduleError::MissingModel(v.spec.host_id)),
            None => Ok(()),
        }
    }

    /// Places a batch of simultaneous arrivals. Tasks that fit nowhere, or
    /// that worst-fit cannot place alongside the rest of the batch, are
    /// rejected; the remaining tasks are placed by the configured strategy.
    pub fn place_batch(&self, batch: &[Task], vms: &[VmState], batch_index: u64) -> Result<BatchPlacement, ScheduleError> {
        self.check_models(vms)?;
        let ctx: Vec<VmContext> = vms
            .iter()
            .map(|state| VmContext { state, model: &self.models[&state.spec.host_id] })
            .collect();

        let mut out = BatchPlacement::default();
        let seed = mwfd_schedule(batch, &ctx, &self.constraints);
        out.rejected = seed.unassigned.clone();
        let placeable: Vec<Task> = batch.iter().filter(|t| seed.mapping.vm_of(&t.id).is_some()).cloned().collect();
        if placeable.is_empty() {
            return Ok(out);
        }

        let mapping = match self.strategy {
            Strategy::Mwfd => seed.mapping,
            Strategy::Ga => {
                let params = GaParams { seed: mix_seed(self.params.seed, batch_index), ..self.params.clone() };
                ga_schedule(&placeable, &ctx, &self.constraints, &params)?.mapping
            }
            Strategy::BruteForce => {
                brute_force_schedule(&placeable, &ctx, self.params.weights()?, &self.constraints)?.mapping
            }
        };

        let mut ordered = placeable;
        crate::domain::sort_by_arrival(&mut ordered);
        out.assignments = ordered
            .into_iter()
            .map(|t| {
                let vm = mapping.vm_of(&t.id).expect("strategies return total mappings");
                (t.id, vm)
            })
            .collect();
        debug_assert!(out.assignments.iter().all(|(id, _)| batch.iter().any(|t| &t.id == id)));
        Ok(out)
    }

    /// True if `task` fits on at least one VM on its own.
    pub fn fits_somewhere(&self, task: &Task, vms: &[VmState]) -> bool {
        vms.iter().any(|v| check_capacity(&v.spec, &v.load(), &task.demand, &self.constraints))
    }
}

/// Derives a per-batch RNG seed.
fn mix_seed(seed: u64, batch_index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ batch_index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
