//! CPU utilization traces in the PlanetLab text format and synthetic task
//! generation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, Task, UtilizationVector};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("trace is empty")]
    Empty,
    #[error("{}: {source}", .path.display())]
    File { path: PathBuf, source: Box<TraceError> },
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no trace files in {}", .0.display())]
    NoTraces(PathBuf),
}

/// One CPU utilization percentage per sampling interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpuTrace {
    readings: Vec<u8>,
}

impl CpuTrace {
    pub fn new(readings: Vec<u8>) -> Result<Self, TraceError> {
        if readings.is_empty() {
            return Err(TraceError::Empty);
        }
        if let Some(i) = readings.iter().position(|r| *r > 100) {
            return Err(TraceError::Parse { line: i + 1, reason: format!("{} is outside [0, 100]", readings[i]) });
        }
        Ok(Self { readings })
    }

    pub fn readings(&self) -> &[u8] {
        &self.readings
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }
}

/// Parses one integer per line. Trailing blank lines are ignored; any other
/// blank or non-integer line, or a value outside `[0, 100]`, is an error.
pub fn parse_planetlab_trace(bytes: &[u8]) -> Result<CpuTrace, TraceError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count() + 1;
        TraceError::Parse { line, reason: "not valid UTF-8".into() }
    })?;
    let lines: Vec<&str> = text.lines().map(str::trim).collect();
    let used = lines.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1);
    let mut readings = Vec::with_capacity(used);
    for (i, line) in lines[..used].iter().enumerate() {
        let value: i64 = line
            .parse()
            .map_err(|_| TraceError::Parse { line: i + 1, reason: format!("expected an integer, got {line:?}") })?;
        if !(0..=100).contains(&value) {
            return Err(TraceError::Parse { line: i + 1, reason: format!("{value} is outside [0, 100]") });
        }
        readings.push(value as u8);
    }
    CpuTrace::new(readings)
}

pub fn serialize_trace(trace: &CpuTrace) -> String {
    trace.readings.iter().map(|r| format!("{r}\n")).collect()
}

/// Reads every regular file in `dir` as a trace, in file name order.
pub fn load_traces(dir: &Path) -> Result<Vec<CpuTrace>, TraceError> {
    let io = |e| TraceError::Io { path: dir.to_path_buf(), source: e };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    paths.retain(|p| p.is_file());
    paths.sort();
    if paths.is_empty() {
        return Err(TraceError::NoTraces(dir.to_path_buf()));
    }
    paths
        .into_iter()
        .map(|path| {
            let bytes = fs::read(&path).map_err(|e| TraceError::Io { path: path.clone(), source: e })?;
            parse_planetlab_trace(&bytes).map_err(|e| TraceError::File { path, source: Box::new(e) })
        })
        .collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("{name}: min {min} exceeds max {max} or is invalid")]
    BadRange { name: &'static str, min: f64, max: f64 },
    #[error("arrival_interval_s must be > 0, got {0}")]
    BadInterval(f64),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub task_count: usize,
    pub length_range_mi: [f64; 2],
    pub arrival_interval_s: f64,
    pub mem_range_mb: [f64; 2],
    pub disk_range_bps: [f64; 2],
    pub net_range_bps: [f64; 2],
    /// Directory of CPU traces; CPU demand is uniform over `[0, 100]` when
    /// absent.
    pub trace_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            task_count: 1000,
            length_range_mi: [6000.0, 12500.0],
            arrival_interval_s: 3.0,
            mem_range_mb: [100.0, 1000.0],
            disk_range_bps: [0.0, 1e6],
            net_range_bps: [0.0, 1e6],
            trace_dir: None,
            seed: 0,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let ranges = [
            ("length_range_mi", self.length_range_mi, 0.0),
            ("mem_range_mb", self.mem_range_mb, 0.0),
            ("disk_range_bps", self.disk_range_bps, 0.0),
            ("net_range_bps", self.net_range_bps, 0.0),
        ];
        for (name, [min, max], floor) in ranges {
            if !(min.is_finite() && max.is_finite() && floor <= min && min <= max) {
                return Err(WorkloadError::BadRange { name, min, max });
            }
        }
        if self.length_range_mi[1] <= 0.0 {
            let [min, max] = self.length_range_mi;
            return Err(WorkloadError::BadRange { name: "length_range_mi", min, max });
        }
        if !(self.arrival_interval_s.is_finite() && self.arrival_interval_s > 0.0) {
            return Err(WorkloadError::BadInterval(self.arrival_interval_s));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, [min, max]: [f64; 2]) -> f64 {
    if min == max {
        min
    } else {
        rng.random_range(min..=max)
    }
}

/// Task `k` arrives at `k * arrival_interval_s`. With traces, its CPU demand
/// is the next unused reading of trace `k mod traces.len()` (wrapping at the
/// end of the trace); otherwise it is uniform over `[0, 100]`.
pub fn generate_workload(spec: &WorkloadSpec, traces: &[CpuTrace]) -> Result<Vec<Task>, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.task_count.saturating_sub(1).to_string().len().max(6);
    (0..spec.task_count)
        .map(|k| {
            let cpu = if traces.is_empty() {
                uniform(&mut rng, [0.0, 100.0])
            } else {
                let trace = &traces[k % traces.len()];
                f64::from(trace.readings[(k / traces.len()) % trace.len()])
            };
            let length = uniform(&mut rng, spec.length_range_mi);
            let mem = uniform(&mut rng, spec.mem_range_mb);
            let disk = uniform(&mut rng, spec.disk_range_bps);
            let net = uniform(&mut rng, spec.net_range_bps);
            let demand = UtilizationVector::new(cpu, mem, disk, net)?;
            Ok(Task::new(format!("task-{k:0width$}"), length, demand, k as f64 * spec.arrival_interval_s)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_small_trace() {
        let t = parse_planetlab_trace(b"0\n50\n100\n").unwrap();
        assert_eq!(t.readings(), &[0, 50, 100]);
    }

    #[test]
    fn reports_bad_line_number() {
        match parse_planetlab_trace(b"42\nabc\n") {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_planetlab_trace(b"1\n2\n101\n") {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trailing_blank_lines_ignored_but_inner_ones_are_not() {
        assert_eq!(parse_planetlab_trace(b"3\n4\n\n\n").unwrap().len(), 2);
        assert!(parse_planetlab_trace(b"3\n\n4\n").is_err());
        assert!(matches!(parse_planetlab_trace(b"\n\n"), Err(TraceError::Empty)));
        assert_eq!(parse_planetlab_trace(b"7\r\n8\r\n").unwrap().readings(), &[7, 8]);
    }

    #[test]
    fn shipped_traces_have_a_day_of_readings() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/planetlab");
        let traces = load_traces(&dir).unwrap();
        assert_eq!(traces.len(), 10);
        assert!(traces.iter().all(|t| t.len() == 288));
    }

    #[test]
    fn arrivals_every_interval() {
        let spec = WorkloadSpec { task_count: 3, ..WorkloadSpec::default() };
        let tasks = generate_workload(&spec, &[]).unwrap();
        let at: Vec<f64> = tasks.iter().map(|t| t.arrival_s).collect();
        assert_eq!(at, vec![0.0, 3.0, 6.0]);
        assert_eq!(tasks[1].id, "task-000001");
    }

    #[test]
    fn cpu_comes_round_robin_from_traces() {
        let a = CpuTrace::new(vec![1, 2, 3]).unwrap();
        let b = CpuTrace::new(vec![10, 20]).unwrap();
        let spec = WorkloadSpec { task_count: 7, ..WorkloadSpec::default() };
        let cpu: Vec<f64> = generate_workload(&spec, &[a, b]).unwrap().iter().map(|t| t.demand.cpu_pct).collect();
        assert_eq!(cpu, vec![1.0, 10.0, 2.0, 20.0, 3.0, 10.0, 1.0]);
    }

    #[test]
    fn lengths_stay_in_range() {
        let spec = WorkloadSpec { task_count: 10_000, seed: 11, ..WorkloadSpec::default() };
        for t in generate_workload(&spec, &[]).unwrap() {
            assert!((6000.0..=12500.0).contains(&t.length_mi));
            assert!((100.0..=1000.0).contains(&t.demand.mem_mb));
            assert!(t.validate().is_ok());
        }
    }

    #[test]
    fn same_seed_same_tasks() {
        let spec = WorkloadSpec { task_count: 50, seed: 4, ..WorkloadSpec::default() };
        assert_eq!(generate_workload(&spec, &[]).unwrap(), generate_workload(&spec, &[]).unwrap());
        let other = WorkloadSpec { seed: 5, ..spec.clone() };
        assert_ne!(generate_workload(&spec, &[]).unwrap(), generate_workload(&other, &[]).unwrap());
    }

    #[test]
    fn rejects_bad_specs() {
        let s = WorkloadSpec { length_range_mi: [10.0, 5.0], ..WorkloadSpec::default() };
        assert!(matches!(s.validate(), Err(WorkloadError::BadRange { .. })));
        let s = WorkloadSpec { arrival_interval_s: 0.0, ..WorkloadSpec::default() };
        assert_eq!(s.validate(), Err(WorkloadError::BadInterval(0.0)));
    }

    proptest! {
        #[test]
        fn parse_serialize_round_trip(readings in prop::collection::vec(0u8..=100, 1..300)) {
            let t = CpuTrace::new(readings).unwrap();
            prop_assert_eq!(parse_planetlab_trace(serialize_trace(&t).as_bytes()).unwrap(), t);
        }

        #[test]
        fn arrivals_are_arithmetic(n in 1usize..200, interval in 0.1f64..10.0, seed in any::<u64>()) {
            let spec = WorkloadSpec { task_count: n, arrival_interval_s: interval, seed, ..WorkloadSpec::default() };
            let tasks = generate_workload(&spec, &[]).unwrap();
            for (k, t) in tasks.iter().enumerate() {
                prop_assert_eq!(t.arrival_s, k as f64 * interval);
                prop_assert!(t.validate().is_ok());
            }
        }
    }
}
