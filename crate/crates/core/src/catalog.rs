//! Host and VM catalogs: a JSON document declaring host types, VM types and
//! the power model of each host type.
//!
//! ```json
//! {
//!   "hosts": [{ "type_label": "...", "count": 1, "power_model_id": "server1" }],
//!   "vms": [{ "type_label": "...", "count": 1, "mips": 2200, "ram_mb": 870 }],
//!   "power_models": {
//!     "server1": { "kind": "LC_MLR", "calibration_csv": "calibration/server1.csv" },
//!     "flat": { "kind": "LINEAR_CPU_MEM", "coefficients": { "intercept_w": 90, "beta_cpu": 1.1, "beta_mem": 0.01 } }
//!   }
//! }
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::domain::{HostId, HostSpec, VmId, VmSpec};
use crate::power::{fit_linear_cpu_mem, read_calibration_csv, MlrCoefficients, PowerError, PowerModel, PowerModelKind};
use crate::schedulers::ModelSet;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog JSON, line {line} column {column}: {message}")]
    Json { line: usize, column: usize, message: String },
    #[error("catalog schema: {0}")]
    Schema(String),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("power model {id}: {source}")]
    Power { id: String, source: PowerError },
}

impl From<serde_json::Error> for CatalogError {
    fn from(e: serde_json::Error) -> Self {
        Self::Json { line: e.line(), column: e.column(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostTypeDoc {
    pub type_label: String,
    pub count: usize,
    pub power_model_id: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmTypeDoc {
    pub type_label: String,
    pub count: usize,
    pub mips: f64,
    pub ram_mb: f64,
    #[serde(default = "round_robin")]
    pub host_binding_policy: String,
}

fn round_robin() -> String {
    "round_robin".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerModelDoc {
    pub kind: PowerModelKind,
    #[serde(default)]
    pub coefficients: Option<MlrCoefficients>,
    #[serde(default)]
    pub calibration_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogDoc {
    pub hosts: Vec<HostTypeDoc>,
    pub vms: Vec<VmTypeDoc>,
    pub power_models: BTreeMap<String, PowerModelDoc>,
}

/// The model a host type is metered with and the CPU/memory-only model fitted
/// to the same calibration data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    pub full: PowerModel,
    pub baseline: PowerModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub hosts: Vec<HostSpec>,
    pub vms: Vec<VmSpec>,
    /// VM type label of each entry in `vms`.
    pub vm_types: Vec<String>,
    pub models: BTreeMap<String, ModelPair>,
}

impl Catalog {
    /// Each host's declared model.
    pub fn full_models(&self) -> ModelSet {
        self.hosts.iter().map(|h| (h.id, self.models[&h.power_model_id].full.clone())).collect()
    }

    /// Each host's CPU/memory-only model.
    pub fn baseline_models(&self) -> ModelSet {
        self.hosts.iter().map(|h| (h.id, self.models[&h.power_model_id].baseline.clone())).collect()
    }
}

/// Splits `total` over `n` types as evenly as possible, giving the remainder
/// to the earliest types.
pub fn distribute(total: usize, n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    (0..n).map(|i| total / n + usize::from(i < total % n)).collect()
}

/// Loads a catalog document. Relative calibration paths resolve against
/// `base_dir`. `host_count` and `vm_count`, when given, replace the declared
/// per-type counts with an even split over the declared types.
///
/// Hosts are numbered type by type in declaration order. VMs cycle through
/// the VM types while each type has instances left, and VM `k` runs on host
/// `k mod hosts`.
pub fn load_catalog(
    document: &str,
    base_dir: &Path,
    host_count: Option<usize>,
    vm_count: Option<usize>,
) -> Result<Catalog, CatalogError> {
    let doc: CatalogDoc = serde_json::from_str(document)?;
    let schema = |m: String| Err(CatalogError::Schema(m));
    if doc.hosts.is_empty() {
        return schema("at least one host type is required".into());
    }
    if doc.vms.is_empty() {
        return schema("at least one VM type is required".into());
    }
    for h in &doc.hosts {
        if !doc.power_models.contains_key(&h.power_model_id) {
            return schema(format!("host type {:?} refers to unknown power model {:?}", h.type_label, h.power_model_id));
        }
    }
    for v in &doc.vms {
        if !(v.mips.is_finite() && v.mips > 0.0) {
            return schema(format!("VM type {:?}: mips must be > 0, got {}", v.type_label, v.mips));
        }
        if !(v.ram_mb.is_finite() && v.ram_mb > 0.0) {
            return schema(format!("VM type {:?}: ram_mb must be > 0, got {}", v.type_label, v.ram_mb));
        }
        if v.host_binding_policy != "round_robin" {
            return schema(format!("VM type {:?}: unsupported host_binding_policy {:?}", v.type_label, v.host_binding_policy));
        }
    }

    let host_counts = match host_count {
        Some(n) => distribute(n, doc.hosts.len()),
        None => doc.hosts.iter().map(|h| h.count).collect(),
    };
    let mut vm_left = match vm_count {
        Some(n) => distribute(n, doc.vms.len()),
        None => doc.vms.iter().map(|v| v.count).collect(),
    };

    let mut hosts = Vec::new();
    for (t, n) in doc.hosts.iter().zip(&host_counts) {
        for _ in 0..*n {
            let id = HostId(hosts.len() as u32);
            hosts.push(HostSpec { id, label: t.type_label.clone(), power_model_id: t.power_model_id.clone() });
        }
    }
    if hosts.is_empty() {
        return schema("catalog expands to zero hosts".into());
    }

    let mut vms = Vec::new();
    let mut vm_types = Vec::new();
    while vm_left.iter().any(|n| *n > 0) {
        for (t, left) in doc.vms.iter().zip(vm_left.iter_mut()) {
            if *left == 0 {
                continue;
            }
            *left -= 1;
            let k = vms.len();
            let spec = VmSpec::new(VmId(k as u32), t.mips, t.ram_mb, hosts[k % hosts.len()].id)
                .map_err(|e| CatalogError::Schema(format!("VM type {:?}: {e}", t.type_label)))?;
            vms.push(spec);
            vm_types.push(t.type_label.clone());
        }
    }
    if vms.is_empty() {
        return schema("catalog expands to zero VMs".into());
    }

    let mut models = BTreeMap::new();
    for h in &doc.hosts {
        if models.contains_key(&h.power_model_id) {
            continue;
        }
        let pair = load_model(&h.power_model_id, &doc.power_models[&h.power_model_id], base_dir)?;
        models.insert(h.power_model_id.clone(), pair);
    }
    Ok(Catalog { hosts, vms, vm_types, models })
}

fn load_model(id: &str, doc: &PowerModelDoc, base_dir: &Path) -> Result<ModelPair, CatalogError> {
    let power = |source| CatalogError::Power { id: id.to_string(), source };
    match (doc.kind, &doc.coefficients, &doc.calibration_csv) {
        (PowerModelKind::LcMlr, None, Some(csv)) => {
            let path = base_dir.join(csv);
            let file = File::open(&path).map_err(|e| CatalogError::Io { path: path.clone(), source: e })?;
            let samples = read_calibration_csv(file).map_err(power)?;
            let full = PowerModel::fit_lc_mlr(&samples).map_err(power)?;
            let baseline = PowerModel::linear_cpu_mem(fit_linear_cpu_mem(&samples).map_err(power)?).map_err(power)?;
            Ok(ModelPair { full, baseline })
        }
        (PowerModelKind::LinearCpuMem, Some(c), None) => {
            let model = PowerModel::linear_cpu_mem(*c).map_err(power)?;
            Ok(ModelPair { full: model.clone(), baseline: model })
        }
        (PowerModelKind::LcMlr, _, _) => {
            Err(CatalogError::Schema(format!("power model {id:?}: LC_MLR needs calibration_csv and no coefficients")))
        }
        (PowerModelKind::LinearCpuMem, _, _) => Err(CatalogError::Schema(format!(
            "power model {id:?}: LINEAR_CPU_MEM needs coefficients and no calibration_csv"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
    }

    fn shipped() -> String {
        std::fs::read_to_string(data_dir().join("catalog.json")).unwrap()
    }

    #[test]
    fn shipped_catalog_lists_five_vm_types() {
        let c = load_catalog(&shipped(), &data_dir(), None, None).unwrap();
        let specs: Vec<(f64, f64)> = c.vms.iter().map(|v| (v.mips, v.ram_mb)).collect();
        assert_eq!(specs, vec![(2200.0, 870.0), (1800.0, 1740.0), (2000.0, 870.0), (1500.0, 1740.0), (1750.0, 613.0)]);
        assert_eq!(c.hosts.len(), 6);
        assert_eq!(c.models.len(), 6);
        for pair in c.models.values() {
            assert_eq!(pair.full.kind(), PowerModelKind::LcMlr);
            assert_eq!(pair.baseline.kind(), PowerModelKind::LinearCpuMem);
        }
    }

    #[test]
    fn even_distribution_with_remainder_to_earliest() {
        assert_eq!(distribute(6, 6), vec![1; 6]);
        assert_eq!(distribute(800, 6), vec![134, 134, 133, 133, 133, 133]);
        assert_eq!(distribute(48, 5), vec![10, 10, 10, 9, 9]);
    }

    #[test]
    fn counts_override_and_binding() {
        let c = load_catalog(&shipped(), &data_dir(), Some(24), Some(48)).unwrap();
        assert_eq!(c.hosts.len(), 24);
        assert_eq!(c.vms.len(), 48);
        for (k, vm) in c.vms.iter().enumerate() {
            assert_eq!(vm.host_id, HostId((k % 24) as u32));
            assert_eq!(c.vm_types[k], format!("VM_type {}", k % 5 + 1));
        }
        assert_eq!(c.hosts.iter().filter(|h| h.power_model_id == "server1").count(), 4);
        assert_eq!(c.full_models().len(), 24);
    }

    #[test]
    fn coefficient_models_need_no_files() {
        let doc = r#"{
            "hosts": [{"type_label": "h", "count": 2, "power_model_id": "m"}],
            "vms": [{"type_label": "v", "count": 3, "mips": 1000, "ram_mb": 512}],
            "power_models": {"m": {"kind": "LINEAR_CPU_MEM", "coefficients": {"intercept_w": 90, "beta_cpu": 1.0, "beta_mem": 0.01}}}
        }"#;
        let c = load_catalog(doc, Path::new("."), None, None).unwrap();
        assert_eq!(c.vms.iter().map(|v| v.host_id.0).collect::<Vec<_>>(), vec![0, 1, 0]);
    }

    #[test]
    fn schema_errors() {
        let base = r#"{"hosts": [{"type_label": "h", "count": 1, "power_model_id": "@ID@"}],
            "vms": [{"type_label": "v", "count": 1, "mips": @MIPS@, "ram_mb": 512}],
            "power_models": {"m": {"kind": "LINEAR_CPU_MEM", "coefficients": {"intercept_w": 1, "beta_cpu": 1, "beta_mem": 0}}}}"#;
        let unknown = base.replace("@ID@", "x").replace("@MIPS@", "1000");
        assert!(matches!(load_catalog(&unknown, Path::new("."), None, None), Err(CatalogError::Schema(_))));
        let zero_mips = base.replace("@ID@", "m").replace("@MIPS@", "0");
        assert!(matches!(load_catalog(&zero_mips, Path::new("."), None, None), Err(CatalogError::Schema(_))));
        match load_catalog("{\n  \"hosts\": [,\n}", Path::new("."), None, None) {
            Err(CatalogError::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
