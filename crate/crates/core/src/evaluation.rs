//! Percent error maps between true and predicted product fields.

use thiserror::Error;

use crate::mesh::StructuredTriMesh;

/// Half-width of the interface band around `x = L/2`, as a fraction of `L`.
pub const INTERFACE_HALF_WIDTH: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("field sizes differ: truth has {truth}, prediction has {pred}")]
    GridMismatch { truth: usize, pred: usize },
    #[error("no error maps given")]
    Empty,
    #[error("region mask has {mask} entries for {values} values")]
    MaskMismatch { mask: usize, values: usize },
}

/// Extremes of a signed percent error field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub inf_norm: f64,
    /// Largest positive error (truth above prediction).
    pub max_under: f64,
    /// Largest negative error, reported as a magnitude.
    pub max_over: f64,
    /// Node holding `inf_norm`; the first such node wins ties.
    pub worst_node: usize,
}

impl ErrorSummary {
    fn of(values: &[f64], mask: Option<&[bool]>) -> ErrorSummary {
        let mut s = ErrorSummary { inf_norm: 0.0, max_under: 0.0, max_over: 0.0, worst_node: 0 };
        for (i, &v) in values.iter().enumerate() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            if v.abs() > s.inf_norm {
                s.inf_norm = v.abs();
                s.worst_node = i;
            }
            s.max_under = s.max_under.max(v);
            s.max_over = s.max_over.max(-v);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    pub step: usize,
    /// `(truth − pred) · 100` per node.
    pub values: Vec<f64>,
    pub summary: ErrorSummary,
}

impl ErrorMap {
    pub fn region_summary(&self, mask: &[bool]) -> Result<ErrorSummary, EvalError> {
        if mask.len() != self.values.len() {
            return Err(EvalError::MaskMismatch { mask: mask.len(), values: self.values.len() });
        }
        Ok(ErrorSummary::of(&self.values, Some(mask)))
    }
}

pub fn error_map(truth: &[f64], pred: &[f64], step: usize) -> Result<ErrorMap, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::GridMismatch { truth: truth.len(), pred: pred.len() });
    }
    let values: Vec<f64> = truth.iter().zip(pred).map(|(t, p)| (t - p) * 100.0).collect();
    let summary = ErrorSummary::of(&values, None);
    Ok(ErrorMap { step, values, summary })
}

/// Nodes with `|x − L/2| ≤ 0.1 L`.
pub fn interface_mask(mesh: &StructuredTriMesh) -> Vec<bool> {
    let l = mesh.length();
    // Small slack so band edges landing on grid lines are included despite rounding.
    let limit = INTERFACE_HALF_WIDTH * l * (1.0 + 1e-12);
    (0..mesh.node_count()).map(|n| (mesh.node_coords(n)[0] - 0.5 * l).abs() <= limit).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionVerdict {
    pub summary: ErrorSummary,
    pub pass: bool,
    pub worst_position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub final_step: usize,
    pub global: RegionVerdict,
    pub interface: RegionVerdict,
    /// Global inf-norm per map, in input order.
    pub inf_norms: Vec<f64>,
}

impl ThresholdReport {
    pub fn pass(&self) -> bool {
        self.global.pass
    }
}

/// Judge the last map against `threshold` percent, globally and in the interface band.
pub fn threshold_report(
    maps: &[ErrorMap],
    mesh: &StructuredTriMesh,
    threshold: f64,
) -> Result<ThresholdReport, EvalError> {
    let last = maps.last().ok_or(EvalError::Empty)?;
    let mask = interface_mask(mesh);
    let verdict = |summary: ErrorSummary| RegionVerdict {
        summary,
        pass: summary.inf_norm <= threshold,
        worst_position: mesh.node_coords(summary.worst_node),
    };
    let global = verdict(last.summary);
    let interface = verdict(last.region_summary(&mask)?);
    Ok(ThresholdReport {
        threshold,
        final_step: last.step,
        global,
        interface,
        inf_norms: maps.iter().map(|m| m.summary.inf_norm).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sign_convention() {
        let m = error_map(&[0.5; 4], &[0.4; 4], 1).unwrap();
        assert!(m.values.iter().all(|v| (v - 10.0).abs() < 1e-12));
        assert!((m.summary.max_under - 10.0).abs() < 1e-12);
        assert_eq!(m.summary.max_over, 0.0);
    }

    #[test]
    fn identical_fields_are_zero() {
        let m = error_map(&[0.3, 0.9], &[0.3, 0.9], 1).unwrap();
        assert_eq!(m.values, vec![0.0, 0.0]);
        assert_eq!(m.summary.inf_norm, 0.0);
    }

    #[test]
    fn summary_definitions() {
        let m = error_map(&[0.0, 0.07], &[0.03, 0.0], 2).unwrap();
        assert!((m.values[0] + 3.0).abs() < 1e-12 && (m.values[1] - 7.0).abs() < 1e-12);
        assert!((m.summary.inf_norm - 7.0).abs() < 1e-12);
        assert!((m.summary.max_under - 7.0).abs() < 1e-12);
        assert!((m.summary.max_over - 3.0).abs() < 1e-12);
        assert_eq!(m.summary.worst_node, 1);
    }

    #[test]
    fn mismatch_rejected() {
        assert_eq!(error_map(&[0.0], &[0.0, 1.0], 1).unwrap_err(), EvalError::GridMismatch { truth: 1, pred: 2 });
    }

    #[test]
    fn interface_band_on_21_grid() {
        let mesh = StructuredTriMesh::new(21, 3, 1.0).unwrap();
        let mask = interface_mask(&mesh);
        // x = 0.40 .. 0.60 in steps of 0.05: five columns.
        let columns: Vec<usize> = (0..21).filter(|&i| mask[mesh.node_index(i, 0)]).collect();
        assert_eq!(columns, vec![8, 9, 10, 11, 12]);
    }

    #[test]
    fn threshold_verdicts() {
        let mesh = StructuredTriMesh::new(5, 5, 1.0).unwrap();
        let truth = vec![0.5; 25];
        let near: Vec<f64> = truth.iter().map(|t| t - 0.04).collect();
        let report = threshold_report(&[error_map(&truth, &near, 9).unwrap()], &mesh, 10.0).unwrap();
        assert!(report.pass() && report.interface.pass);
        assert_eq!(report.final_step, 9);

        let same = threshold_report(&[error_map(&truth, &truth, 1).unwrap()], &mesh, 1e-9).unwrap();
        assert!(same.pass());

        let mut spiked = truth.clone();
        let node = mesh.node_index(0, 3);
        spiked[node] -= 0.12;
        let report = threshold_report(&[error_map(&truth, &spiked, 1).unwrap()], &mesh, 10.0).unwrap();
        assert!(!report.global.pass);
        assert_eq!(report.global.summary.worst_node, node);
        assert_eq!(report.global.worst_position, [0.0, 0.75]);
        // The spike sits at x = 0, outside the interface band.
        assert!(report.interface.pass);
        assert_eq!(threshold_report(&[], &mesh, 10.0).unwrap_err(), EvalError::Empty);
    }

    fn field(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0..1.0f64, n)
    }

    proptest! {
        #[test]
        fn antisymmetric(a in field(16), b in field(16)) {
            let ab = error_map(&a, &b, 1).unwrap();
            let ba = error_map(&b, &a, 1).unwrap();
            for (x, y) in ab.values.iter().zip(&ba.values) {
                prop_assert_eq!(*x, -*y);
            }
        }

        #[test]
        fn triangle_inequality(a in field(16), b in field(16), c in field(16)) {
            let ac = error_map(&a, &c, 1).unwrap().summary.inf_norm;
            let ab = error_map(&a, &b, 1).unwrap().summary.inf_norm;
            let bc = error_map(&b, &c, 1).unwrap().summary.inf_norm;
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
