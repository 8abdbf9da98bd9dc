use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::PowerError;
use crate::domain::UtilizationVector;

const HEADER: [&str; 5] = ["cpu_pct", "mem_mb", "disk_bps", "net_bps", "power_w"];

/// One measured operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub util: UtilizationVector,
    pub power_w: f64,
}

#[derive(Deserialize, Serialize)]
struct Row {
    cpu_pct: f64,
    mem_mb: f64,
    disk_bps: f64,
    net_bps: f64,
    power_w: f64,
}

/// Reads `cpu_pct,mem_mb,disk_bps,net_bps,power_w` records.
pub fn read_calibration_csv<R: Read>(reader: R) -> Result<Vec<CalibrationSample>, PowerError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(HEADER) {
        return Err(PowerError::InvalidSample {
            record: 0,
            reason: format!("expected header {}, got {}", HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row?;
        let util = UtilizationVector::new(row.cpu_pct, row.mem_mb, row.disk_bps, row.net_bps)
            .map_err(|e| PowerError::InvalidSample { record: i + 1, reason: e.to_string() })?;
        if !(row.power_w.is_finite() && row.power_w >= 0.0) {
            return Err(PowerError::InvalidSample { record: i + 1, reason: format!("power_w {}", row.power_w) });
        }
        out.push(CalibrationSample { util, power_w: row.power_w });
    }
    Ok(out)
}

pub fn write_calibration_csv<W: Write>(writer: W, samples: &[CalibrationSample]) -> Result<(), PowerError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for s in samples {
        wtr.serialize(Row {
            cpu_pct: s.util.cpu_pct,
            mem_mb: s.util.mem_mb,
            disk_bps: s.util.disk_bps,
            net_bps: s.util.net_bps,
            power_w: s.power_w,
        })?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}
