//! Experiment runner: every (scheduler, seed) cell simulated over a shared
//! per-seed workload, with per-task CSV reports, per-cell summaries and a
//! cross-scheduler comparison.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{load_catalog, Catalog};
use crate::domain::{Constraints, Task};
use crate::par;
use crate::schedulers::{GaParams, Scheduler, SchedulerKind};
use crate::sim::{run_simulation, SimReport};
use crate::workload::{generate_workload, load_traces, CpuTrace, WorkloadSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: line {line} column {column}: {message}", .path.display())]
    Json { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("need at least two summaries, got {0}")]
    TooFew(usize),
    #[error("summaries cover different workloads: {0} and {1}")]
    WorkloadMismatch(String, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Catalog path, relative to the config file.
    pub catalog: PathBuf,
    /// Total hosts, split evenly over the host types; declared counts if absent.
    #[serde(default)]
    pub host_count: Option<usize>,
    /// Total VMs, split evenly over the VM types; declared counts if absent.
    #[serde(default)]
    pub vm_count: Option<usize>,
    #[serde(default)]
    pub workload: WorkloadSpec,
    pub schedulers: Vec<SchedulerKind>,
    #[serde(default)]
    pub ga: GaParams,
    #[serde(default)]
    pub constraints: Constraints,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    /// Parses a config document; relative paths resolve against `base_dir`.
    pub fn from_json(text: &str, origin: &Path, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Json {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.catalog = base_dir.join(&cfg.catalog);
        cfg.output_dir = base_dir.join(&cfg.output_dir);
        if let Some(dir) = &cfg.workload.trace_dir {
            cfg.workload.trace_dir = Some(base_dir.join(dir));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::from_json(&text, path, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.schedulers.is_empty() {
            return invalid("schedulers must list at least one scheduler".into());
        }
        if self.seeds.is_empty() {
            return invalid("seeds must list at least one seed".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(k) = self.schedulers.iter().find(|k| !seen.insert(**k)) {
            return invalid(format!("scheduler {k} listed twice"));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return invalid(format!("seed {s} listed twice"));
        }
        self.ga.validate().map_err(|e| ConfigError::Invalid(format!("ga: {e}")))?;
        self.constraints.validate().map_err(|e| ConfigError::Invalid(format!("constraints: {e}")))?;
        self.workload.validate().map_err(|e| ConfigError::Invalid(format!("workload: {e}")))?;
        if !self.catalog.is_file() {
            return invalid(format!("catalog {} does not exist", self.catalog.display()));
        }
        if let Some(dir) = &self.workload.trace_dir {
            if !dir.is_dir() {
                return invalid(format!("workload.trace_dir {} does not exist", dir.display()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub workload_id: String,
    pub total_energy_j: f64,
    pub mean_execution_time_s: f64,
    pub completed: usize,
    pub rejected: usize,
    pub makespan_s: f64,
    pub clamped_meter_queries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Self { mean: values.iter().sum::<f64>() / values.len() as f64, min, max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerAggregate {
    pub runs: usize,
    pub total_energy_j: Spread,
    pub mean_execution_time_s: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub a: f64,
    pub b: f64,
    /// `a - b`.
    pub delta: f64,
    /// `delta` as a percentage of `b`.
    pub pct: f64,
    /// Scheduler with the lower value, or `"tie"`.
    pub winner: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: SchedulerKind,
    pub b: SchedulerKind,
    pub total_energy_j: MetricDelta,
    pub mean_execution_time_s: MetricDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub workload_id: String,
    pub pairs: Vec<PairComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    #[serde(flatten)]
    pub comparison: Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schedulers: BTreeMap<SchedulerKind, SchedulerAggregate>,
    pub per_seed: Vec<SeedComparison>,
    pub failed: Vec<FailedCell>,
}

fn metric_delta(a: f64, b: f64, name_a: SchedulerKind, name_b: SchedulerKind) -> MetricDelta {
    let delta = a - b;
    let pct = if b != 0.0 { delta / b * 100.0 } else { 0.0 };
    let winner = match a.total_cmp(&b) {
        std::cmp::Ordering::Less => name_a.to_string(),
        std::cmp::Ordering::Greater => name_b.to_string(),
        std::cmp::Ordering::Equal => "tie".to_string(),
    };
    MetricDelta { a, b, delta, pct, winner }
}

/// Pairwise deltas between summaries of the same workload, for every pair
/// `(i, j)` with `i < j`. Lower is better for both metrics.
pub fn compare_reports(summaries: &[RunSummary]) -> Result<Comparison, CompareError> {
    if summaries.len() < 2 {
        return Err(CompareError::TooFew(summaries.len()));
    }
    let id = &summaries[0].workload_id;
    if let Some(s) = summaries.iter().find(|s| &s.workload_id != id) {
        return Err(CompareError::WorkloadMismatch(id.clone(), s.workload_id.clone()));
    }
    let mut pairs = Vec::new();
    for (i, a) in summaries.iter().enumerate() {
        for b in &summaries[i + 1..] {
            pairs.push(PairComparison {
                a: a.scheduler,
                b: b.scheduler,
                total_energy_j: metric_delta(a.total_energy_j, b.total_energy_j, a.scheduler, b.scheduler),
                mean_execution_time_s: metric_delta(
                    a.mean_execution_time_s,
                    b.mean_execution_time_s,
                    a.scheduler,
                    b.scheduler,
                ),
            });
        }
    }
    Ok(Comparison { workload_id: id.clone(), pairs })
}

/// Hex SHA-256 of the JSON encoding of `tasks`.
pub fn workload_id(tasks: &[Task]) -> String {
    let bytes = serde_json::to_vec(tasks).expect("tasks serialize");
    hex::encode(Sha256::digest(bytes))
}

/// Everything one cell needs besides the scheduler kind.
pub struct CellInput<'a> {
    pub catalog: &'a Catalog,
    pub tasks: &'a [Task],
    pub ga: &'a GaParams,
    pub constraints: Constraints,
    pub seed: u64,
}

/// Simulates one cell. The meter always uses each host's declared model;
/// `GA_LM` schedules with the CPU/memory-only models instead.
pub fn run_cell(kind: SchedulerKind, input: &CellInput) -> Result<SimReport, String> {
    let decision_models = match kind {
        SchedulerKind::GaLm => input.catalog.baseline_models(),
        _ => input.catalog.full_models(),
    };
    let params = GaParams { seed: input.seed, ..input.ga.clone() };
    let scheduler = Scheduler::new(kind, decision_models, params, input.constraints).map_err(|e| e.to_string())?;
    run_simulation(input.tasks, &input.catalog.vms, &input.catalog.full_models(), &scheduler).map_err(|e| e.to_string())
}

pub fn write_task_csv(path: &Path, report: &SimReport) -> Result<(), ExperimentError> {
    let io = |e: std::io::Error| ExperimentError::Io { path: path.to_path_buf(), source: e };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(["task_id", "vm_id", "arrival_s", "start_s", "finish_s", "energy_j"]).map_err(|e| io(e.into()))?;
    for r in &report.records {
        w.write_record([
            r.task_id.clone(),
            r.vm_id.0.to_string(),
            r.arrival_s.to_string(),
            r.start_s.to_string(),
            r.finish_s.to_string(),
            r.energy_j.to_string(),
        ])
        .map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| ExperimentError::Io { path: path.to_path_buf(), source: e })
}

pub fn summary_file_name(kind: SchedulerKind, seed: u64) -> String {
    format!("{kind}_seed{seed}_summary.json")
}

pub fn tasks_file_name(kind: SchedulerKind, seed: u64) -> String {
    format!("{kind}_seed{seed}_tasks.csv")
}

pub const COMPARISON_FILE: &str = "comparison.json";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub summaries: Vec<RunSummary>,
    pub reports: Vec<(SchedulerKind, u64, SimReport)>,
    pub failed: Vec<FailedCell>,
    pub comparison: ComparisonReport,
}

/// Runs every cell of `cfg` and writes the report files into
/// `cfg.output_dir`. Cells run in parallel; files are written afterwards in
/// (seed, scheduler) order, so the output does not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    cfg.validate()?;
    let doc = fs::read_to_string(&cfg.catalog).map_err(|e| ConfigError::Io { path: cfg.catalog.clone(), source: e })?;
    let base = cfg.catalog.parent().unwrap_or(Path::new("."));
    let catalog = load_catalog(&doc, base, cfg.host_count, cfg.vm_count)
        .map_err(|e| ConfigError::Invalid(format!("{}: {e}", cfg.catalog.display())))?;
    let traces: Vec<CpuTrace> = match &cfg.workload.trace_dir {
        Some(dir) => load_traces(dir).map_err(|e| ConfigError::Invalid(e.to_string()))?,
        None => Vec::new(),
    };
    let workloads: Vec<Vec<Task>> = cfg
        .seeds
        .iter()
        .map(|seed| generate_workload(&WorkloadSpec { seed: *seed, ..cfg.workload.clone() }, &traces))
        .collect::<Result<_, _>>()
        .map_err(|e| ConfigError::Invalid(format!("workload: {e}")))?;
    let ids: Vec<String> = workloads.iter().map(|w| workload_id(w)).collect();

    let cells: Vec<(usize, SchedulerKind)> =
        (0..cfg.seeds.len()).flat_map(|s| cfg.schedulers.iter().map(move |k| (s, *k))).collect();
    let results = par::map(&cells, cfg.ga.execution, |(s, kind)| {
        let input =
            CellInput { catalog: &catalog, tasks: &workloads[*s], ga: &cfg.ga, constraints: cfg.constraints, seed: cfg.seeds[*s] };
        log::info!("running {kind} seed {}", cfg.seeds[*s]);
        run_cell(*kind, &input)
    });

    fs::create_dir_all(&cfg.output_dir).map_err(|e| ExperimentError::Io { path: cfg.output_dir.clone(), source: e })?;
    let mut summaries = Vec::new();
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for ((s, kind), result) in cells.iter().zip(results) {
        let seed = cfg.seeds[*s];
        match result {
            Ok(report) => {
                let summary = RunSummary {
                    scheduler: *kind,
                    seed,
                    workload_id: ids[*s].clone(),
                    total_energy_j: report.total_energy_j,
                    mean_execution_time_s: report.mean_execution_time_s,
                    completed: report.records.len(),
                    rejected: report.rejected_task_count,
                    makespan_s: report.makespan_s,
                    clamped_meter_queries: report.clamped_queries,
                };
                write_task_csv(&cfg.output_dir.join(tasks_file_name(*kind, seed)), &report)?;
                write_json(&cfg.output_dir.join(summary_file_name(*kind, seed)), &summary)?;
                summaries.push(summary);
                reports.push((*kind, seed, report));
            }
            Err(error) => {
                log::error!("{kind} seed {seed} failed: {error}");
                failed.push(FailedCell { scheduler: *kind, seed, error });
            }
        }
    }

    let comparison = aggregate(cfg, &summaries, failed.clone());
    write_json(&cfg.output_dir.join(COMPARISON_FILE), &comparison)?;
    Ok(ExperimentOutcome { summaries, reports, failed, comparison })
}

fn aggregate(cfg: &ExperimentConfig, summaries: &[RunSummary], failed: Vec<FailedCell>) -> ComparisonReport {
    let mut schedulers = BTreeMap::new();
    for kind in &cfg.schedulers {
        let mine: Vec<&RunSummary> = summaries.iter().filter(|s| s.scheduler == *kind).collect();
        let energy: Vec<f64> = mine.iter().map(|s| s.total_energy_j).collect();
        let time: Vec<f64> = mine.iter().map(|s| s.mean_execution_time_s).collect();
        if let (Some(e), Some(t)) = (Spread::of(&energy), Spread::of(&time)) {
            schedulers.insert(*kind, SchedulerAggregate { runs: mine.len(), total_energy_j: e, mean_execution_time_s: t });
        }
    }
    let per_seed = cfg
        .seeds
        .iter()
        .filter_map(|seed| {
            let mine: Vec<RunSummary> = summaries.iter().filter(|s| s.seed == *seed).cloned().collect();
            compare_reports(&mine).ok().map(|comparison| SeedComparison { seed: *seed, comparison })
        })
        .collect();
    ComparisonReport { schedulers, per_seed, failed }
}
