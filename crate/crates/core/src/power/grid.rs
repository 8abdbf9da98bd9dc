use serde::{Deserialize, Serialize};

use super::{mlr_predict, CalibrationSample, MlrCoefficients, PowerError, AXIS_NAMES};
use crate::domain::UtilizationVector;

/// Regression residuals (measured minus predicted watts) on a 4-D lattice.
///
/// Axes are ordered cpu, mem, disk, net. Residuals are stored row-major with
/// the net axis varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualGrid {
    axes: [Vec<f64>; 4],
    residuals: Vec<f64>,
}

impl ResidualGrid {
    pub fn new(axes: [Vec<f64>; 4], residuals: Vec<f64>) -> Result<Self, PowerError> {
        for (axis, name) in axes.iter().zip(AXIS_NAMES) {
            if axis.len() < 2 {
                return Err(PowerError::InvalidGrid(format!("axis {name} needs at least 2 nodes")));
            }
            if !axis.iter().all(|x| x.is_finite()) || axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(PowerError::InvalidGrid(format!("axis {name} must be finite and strictly increasing")));
            }
        }
        let expected: usize = axes.iter().map(Vec::len).product();
        if residuals.len() != expected {
            return Err(PowerError::InvalidGrid(format!(
                "expected {expected} residuals, got {}",
                residuals.len()
            )));
        }
        if !residuals.iter().all(|r| r.is_finite()) {
            return Err(PowerError::InvalidGrid("non-finite residual".into()));
        }
        Ok(Self { axes, residuals })
    }

    pub fn zeros(axes: [Vec<f64>; 4]) -> Result<Self, PowerError> {
        let n = axes.iter().map(Vec::len).product();
        Self::new(axes, vec![0.0; n])
    }

    pub fn axes(&self) -> &[Vec<f64>; 4] {
        &self.axes
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    fn flat(&self, idx: [usize; 4]) -> usize {
        ((idx[0] * self.axes[1].len() + idx[1]) * self.axes[2].len() + idx[2]) * self.axes[3].len() + idx[3]
    }

    pub fn get(&self, idx: [usize; 4]) -> f64 {
        self.residuals[self.flat(idx)]
    }

    pub fn set(&mut self, idx: [usize; 4], value: f64) {
        let i = self.flat(idx);
        self.residuals[i] = value;
    }

    pub fn node(&self, idx: [usize; 4]) -> UtilizationVector {
        UtilizationVector::from_array(std::array::from_fn(|d| self.axes[d][idx[d]]))
    }

    /// Iterates over all lattice indices in storage order.
    pub fn indices(&self) -> impl Iterator<Item = [usize; 4]> + '_ {
        let n = self.axes.clone().map(|a| a.len());
        (0..self.residuals.len()).map(move |mut flat| {
            let mut idx = [0; 4];
            for d in (0..4).rev() {
                idx[d] = flat % n[d];
                flat /= n[d];
            }
            idx
        })
    }

    /// Projects `util` onto the lattice's bounding box.
    pub fn clamp(&self, util: &UtilizationVector) -> (UtilizationVector, bool) {
        let q = util.as_array();
        let mut clamped = false;
        let out = std::array::from_fn(|d| {
            let (lo, hi) = (self.axes[d][0], *self.axes[d].last().unwrap());
            let v = q[d].clamp(lo, hi);
            clamped |= v != q[d];
            v
        });
        (UtilizationVector::from_array(out), clamped)
    }
}

/// Base node and interpolation weight along one axis: the greatest node not
/// above `value` and the fractional position towards the next node. A query
/// equal to the top node uses that node as base with weight 0.
fn bracket(nodes: &[f64], value: f64, axis: usize) -> Result<(usize, f64), PowerError> {
    let (lo, hi) = (nodes[0], nodes[nodes.len() - 1]);
    if !(value >= lo && value <= hi) {
        return Err(PowerError::OutOfRange { axis: AXIS_NAMES[axis], value, min: lo, max: hi });
    }
    let k = nodes.partition_point(|n| *n <= value) - 1;
    if k + 1 == nodes.len() {
        return Ok((k, 0.0));
    }
    Ok((k, (value - nodes[k]) / (nodes[k + 1] - nodes[k])))
}

/// Residual correction term in watts: the residual at the base node plus one
/// independent linear increment per axis, each taken along that axis with the
/// other three indices held at the base node.
pub fn residual_correction(grid: &ResidualGrid, util: &UtilizationVector) -> Result<f64, PowerError> {
    let q = util.as_array();
    let mut base = [0usize; 4];
    let mut weight = [0.0; 4];
    for d in 0..4 {
        (base[d], weight[d]) = bracket(&grid.axes[d], q[d], d)?;
    }
    let e0 = grid.get(base);
    let mut correction = e0;
    for d in 0..4 {
        if weight[d] == 0.0 {
            continue;
        }
        let mut next = base;
        next[d] += 1;
        correction += (grid.get(next) - e0) * weight[d];
    }
    Ok(correction)
}

/// Residuals of `coeffs` at every sample of a complete axis-aligned lattice.
pub fn build_residual_grid(coeffs: &MlrCoefficients, samples: &[CalibrationSample]) -> Result<ResidualGrid, PowerError> {
    let axes: [Vec<f64>; 4] = std::array::from_fn(|d| {
        let mut v: Vec<f64> = samples.iter().map(|s| s.util.as_array()[d]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    });
    let mut grid = ResidualGrid::zeros(axes)?;
    let mut seen = vec![false; grid.residuals.len()];
    for s in samples {
        let q = s.util.as_array();
        let idx: [usize; 4] = std::array::from_fn(|d| grid.axes[d].partition_point(|n| *n < q[d]));
        let flat = grid.flat(idx);
        if seen[flat] {
            return Err(PowerError::DuplicateNode(q));
        }
        seen[flat] = true;
        grid.residuals[flat] = s.power_w - mlr_predict(coeffs, &s.util);
    }
    let missing: Vec<[f64; 4]> = grid
        .indices()
        .filter(|idx| !seen[grid.flat(*idx)])
        .map(|idx| grid.node(idx).as_array())
        .collect();
    if !missing.is_empty() {
        return Err(PowerError::IncompleteLattice { missing });
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_axes() -> [Vec<f64>; 4] {
        [vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]]
    }

    fn util(a: [f64; 4]) -> UtilizationVector {
        UtilizationVector::from_array(a)
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(ResidualGrid::zeros([vec![0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]]).is_err());
        assert!(ResidualGrid::zeros([vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]]).is_err());
        assert!(ResidualGrid::new(unit_axes(), vec![0.0; 15]).is_err());
    }

    #[test]
    fn one_dimensional_interpolation() {
        let axes = [vec![0.0, 40.0, 50.0, 100.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let mut g = ResidualGrid::zeros(axes).unwrap();
        g.set([1, 0, 0, 0], 2.0);
        g.set([2, 0, 0, 0], 4.0);
        let v = residual_correction(&g, &util([45.0, 0.0, 0.0, 0.0])).unwrap();
        assert!((v - 3.0).abs() < 1e-12);
    }

    #[test]
    fn exact_at_every_node_including_upper_corners() {
        let mut g = ResidualGrid::zeros(unit_axes()).unwrap();
        for (i, idx) in g.indices().collect::<Vec<_>>().into_iter().enumerate() {
            g.set(idx, (i as f64).sin() * 7.0);
        }
        for idx in g.indices() {
            assert_eq!(residual_correction(&g, &g.node(idx)).unwrap(), g.get(idx));
        }
    }

    #[test]
    fn zero_field_gives_zero() {
        let g = ResidualGrid::zeros(unit_axes()).unwrap();
        assert_eq!(residual_correction(&g, &util([0.3, 0.7, 0.1, 0.9])).unwrap(), 0.0);
    }

    #[test]
    fn additive_corrections_not_multilinear() {
        // Off-base in two axes: e(0) + (e(x) - e(0)) * wx + (e(y) - e(0)) * wy.
        let mut g = ResidualGrid::zeros(unit_axes()).unwrap();
        g.set([0, 0, 0, 0], 1.0);
        g.set([1, 0, 0, 0], 3.0);
        g.set([0, 1, 0, 0], 5.0);
        g.set([1, 1, 0, 0], 100.0);
        let v = residual_correction(&g, &util([0.5, 0.5, 0.0, 0.0])).unwrap();
        assert!((v - (1.0 + 1.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_is_an_error() {
        let g = ResidualGrid::zeros(unit_axes()).unwrap();
        let err = residual_correction(&g, &util([0.5, 0.5, 1.5, 0.5])).unwrap_err();
        assert!(matches!(err, PowerError::OutOfRange { axis: "disk_bps", .. }));
        assert!(residual_correction(&g, &util([0.5, -0.1, 0.5, 0.5])).is_err());
    }

    #[test]
    fn clamp_projects_into_box() {
        let g = ResidualGrid::zeros(unit_axes()).unwrap();
        let (c, flag) = g.clamp(&util([2.0, 0.5, -1.0, 0.5]));
        assert!(flag);
        assert_eq!(c.as_array(), [1.0, 0.5, 0.0, 0.5]);
        assert!(!g.clamp(&util([0.2, 0.2, 0.2, 0.2])).1);
    }

    fn lattice_samples(coeffs: &MlrCoefficients, extra: impl Fn(usize) -> f64) -> Vec<CalibrationSample> {
        let mut out = Vec::new();
        let mut i = 0;
        for c in [0.0, 100.0] {
            for m in [0.0, 1000.0] {
                for d in [0.0, 1e6] {
                    for n in [0.0, 1e6] {
                        let u = util([c, m, d, n]);
                        out.push(CalibrationSample { util: u, power_w: mlr_predict(coeffs, &u) + extra(i) });
                        i += 1;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn perfect_fit_gives_zero_residuals() {
        let c = MlrCoefficients::new(50.0, 1.0, 0.01, 1e-5, 2e-5);
        let g = build_residual_grid(&c, &lattice_samples(&c, |_| 0.0)).unwrap();
        assert!(g.residuals().iter().all(|r| r.abs() < 1e-9));
    }

    #[test]
    fn residuals_stored_verbatim() {
        let c = MlrCoefficients::new(50.0, 1.0, 0.01, 1e-5, 2e-5);
        let offsets = |i: usize| (i as f64) - 7.5;
        let samples = lattice_samples(&c, offsets);
        let g = build_residual_grid(&c, &samples).unwrap();
        for s in &samples {
            let idx: [usize; 4] = std::array::from_fn(|d| usize::from(s.util.as_array()[d] > 0.0));
            let expected = s.power_w - mlr_predict(&c, &s.util);
            assert!((g.get(idx) - expected).abs() < 1e-9);
        }
        let mut shuffled = samples.clone();
        shuffled.reverse();
        assert_eq!(build_residual_grid(&c, &shuffled).unwrap(), g);
    }

    #[test]
    fn one_node_above_prediction() {
        let c = MlrCoefficients::new(50.0, 1.0, 0.0, 0.0, 0.0);
        let samples = lattice_samples(&c, |i| if i == 5 { 5.0 } else { 0.0 });
        let g = build_residual_grid(&c, &samples).unwrap();
        let idx: [usize; 4] = std::array::from_fn(|d| usize::from(samples[5].util.as_array()[d] > 0.0));
        assert!((g.get(idx) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn incomplete_lattice_lists_missing_nodes() {
        let c = MlrCoefficients::new(50.0, 1.0, 0.0, 0.0, 0.0);
        let mut samples = lattice_samples(&c, |_| 0.0);
        let dropped = samples.remove(3);
        match build_residual_grid(&c, &samples) {
            Err(PowerError::IncompleteLattice { missing }) => assert_eq!(missing, vec![dropped.util.as_array()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_node_rejected() {
        let c = MlrCoefficients::new(50.0, 1.0, 0.0, 0.0, 0.0);
        let mut samples = lattice_samples(&c, |_| 0.0);
        samples.push(samples[0]);
        assert!(matches!(build_residual_grid(&c, &samples), Err(PowerError::DuplicateNode(_))));
    }
}
