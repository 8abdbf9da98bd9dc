use nalgebra::{DMatrix, DVector};

use super::{CalibrationSample, MlrCoefficients, PowerError, AXIS_NAMES};

const CONDITION_LIMIT: f64 = 1e-10;

/// Ordinary least squares over intercept, cpu, mem, disk and net.
pub fn fit_mlr(samples: &[CalibrationSample]) -> Result<MlrCoefficients, PowerError> {
    fit_columns(samples, [true; 4])
}

/// Ordinary least squares over intercept, cpu and mem; disk and net
/// coefficients are zero.
pub fn fit_linear_cpu_mem(samples: &[CalibrationSample]) -> Result<MlrCoefficients, PowerError> {
    fit_columns(samples, [true, true, false, false])
}

/// Least squares on standardized predictors. Standardizing keeps the
/// problem well conditioned when columns differ by many orders of magnitude
/// (CPU percent vs bytes per second).
fn fit_columns(samples: &[CalibrationSample], used: [bool; 4]) -> Result<MlrCoefficients, PowerError> {
    let cols: Vec<usize> = (0..4).filter(|d| used[*d]).collect();
    let needed = cols.len() + 1;
    if samples.len() < needed {
        return Err(PowerError::TooFewSamples { needed, got: samples.len() });
    }
    for (i, s) in samples.iter().enumerate() {
        if !(s.power_w.is_finite() && s.power_w >= 0.0) {
            return Err(PowerError::InvalidSample { record: i + 1, reason: format!("power_w {}", s.power_w) });
        }
    }

    let n = samples.len() as f64;
    let raw: Vec<[f64; 4]> = samples.iter().map(|s| s.util.as_array()).collect();
    let mut mean = [0.0; 4];
    let mut scale = [1.0; 4];
    let mut constant = Vec::new();
    for &d in &cols {
        mean[d] = raw.iter().map(|r| r[d]).sum::<f64>() / n;
        let var = raw.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd <= 1e-12 * mean[d].abs().max(1.0) {
            constant.push(format!("{} (constant, collinear with intercept)", AXIS_NAMES[d]));
        } else {
            scale[d] = sd;
        }
    }
    if !constant.is_empty() {
        return Err(PowerError::RankDeficient { columns: constant });
    }

    let design = DMatrix::from_fn(samples.len(), needed, |r, c| {
        if c == 0 {
            1.0
        } else {
            let d = cols[c - 1];
            (raw[r][d] - mean[d]) / scale[d]
        }
    });
    let target = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.power_w));

    let svd = design.svd(true, true);
    let sigma = &svd.singular_values;
    let (max_sv, min_idx) = (sigma.max(), sigma.imin());
    if sigma[min_idx] <= CONDITION_LIMIT * max_sv {
        let v_t = svd.v_t.as_ref().expect("computed");
        let null = v_t.row(min_idx);
        let columns = (0..needed)
            .filter(|c| null[*c].abs() > 0.1)
            .map(|c| if c == 0 { "intercept".to_string() } else { AXIS_NAMES[cols[c - 1]].to_string() })
            .collect();
        return Err(PowerError::RankDeficient { columns });
    }
    let gamma = svd
        .solve(&target, CONDITION_LIMIT * max_sv)
        .map_err(|e| PowerError::InvalidModel(e.to_string()))?;

    let mut beta = [0.0; 4];
    for (c, &d) in cols.iter().enumerate() {
        beta[d] = gamma[c + 1] / scale[d];
    }
    let intercept = gamma[0] - cols.iter().map(|&d| beta[d] * mean[d]).sum::<f64>();
    Ok(MlrCoefficients::new(intercept, beta[0], beta[1], beta[2], beta[3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::UtilizationVector;
    use crate::power::mlr_predict;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn planted_samples(c: &MlrCoefficients, n: usize, seed: u64) -> Vec<CalibrationSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u = UtilizationVector {
                    cpu_pct: rng.random_range(0.0..100.0),
                    mem_mb: rng.random_range(0.0..4000.0),
                    disk_bps: rng.random_range(0.0..2e6),
                    net_bps: rng.random_range(0.0..2e6),
                };
                CalibrationSample { util: u, power_w: mlr_predict(c, &u) }
            })
            .collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn recovers_planted_coefficients() {
        let planted = MlrCoefficients::new(100.0, 1.2, 0.01, 1e-7, 2e-7);
        let fit = fit_mlr(&planted_samples(&planted, 32, 7)).unwrap();
        for (a, b) in fit.as_array().iter().zip(planted.as_array()) {
            assert!(rel(*a, b) < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_target_gives_flat_model() {
        let zero = MlrCoefficients::new(0.0, 0.0, 0.0, 0.0, 0.0);
        let mut samples = planted_samples(&zero, 20, 3);
        for s in &mut samples {
            s.power_w = 150.0;
        }
        let fit = fit_mlr(&samples).unwrap();
        assert!((fit.intercept_w - 150.0).abs() < 1e-8);
        assert!(fit.beta_cpu.abs() < 1e-10 && fit.beta_mem.abs() < 1e-10);
        assert!(fit.beta_disk.abs() < 1e-12 && fit.beta_net.abs() < 1e-12);
    }

    #[test]
    fn identical_samples_are_rank_deficient() {
        let s = CalibrationSample {
            util: UtilizationVector { cpu_pct: 10.0, mem_mb: 20.0, disk_bps: 30.0, net_bps: 40.0 },
            power_w: 100.0,
        };
        let err = fit_mlr(&vec![s; 10]).unwrap_err();
        match err {
            PowerError::RankDeficient { columns } => assert_eq!(columns.len(), 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn collinear_columns_are_named() {
        let planted = MlrCoefficients::new(100.0, 1.2, 0.01, 1e-7, 2e-7);
        let mut samples = planted_samples(&planted, 16, 9);
        for s in &mut samples {
            s.util.net_bps = s.util.disk_bps * 2.0;
        }
        match fit_mlr(&samples).unwrap_err() {
            PowerError::RankDeficient { columns } => {
                assert!(columns.contains(&"disk_bps".to_string()));
                assert!(columns.contains(&"net_bps".to_string()));
                assert!(!columns.contains(&"cpu_pct".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_few_samples() {
        let planted = MlrCoefficients::new(1.0, 1.0, 1.0, 1.0, 1.0);
        assert!(matches!(fit_mlr(&planted_samples(&planted, 4, 1)), Err(PowerError::TooFewSamples { .. })));
    }

    #[test]
    fn cpu_mem_fit_ignores_disk_net() {
        let planted = MlrCoefficients::new(80.0, 0.7, 0.005, 0.0, 0.0);
        let fit = fit_linear_cpu_mem(&planted_samples(&planted, 12, 5)).unwrap();
        assert!(rel(fit.intercept_w, 80.0) < 1e-9);
        assert!(rel(fit.beta_cpu, 0.7) < 1e-9);
        assert!(rel(fit.beta_mem, 0.005) < 1e-9);
        assert_eq!((fit.beta_disk, fit.beta_net), (0.0, 0.0));
    }
}
