//! Cross-cutting verification over trajectories: conservation and
//! monotonicity monitors, rank constancy, trajectory comparison, and the
//! closed-form regression for the pathological scalar autoencoder.

use serde::{Deserialize, Serialize};

use crate::integrator::{Snapshot, Trajectory};
use crate::model;
use crate::{Error, Mat, Result};

/// Outcome of one invariant check over a trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantReport {
    pub name: String,
    pub max_violation: f64,
    pub threshold: f64,
    pub passed: bool,
    /// Snapshot time at which the worst violation occurred.
    pub worst_time: f64,
}

impl InvariantReport {
    fn new(name: &str, max_violation: f64, threshold: f64, worst_time: f64) -> Self {
        Self {
            name: name.to_string(),
            max_violation,
            threshold,
            passed: max_violation <= threshold,
            worst_time,
        }
    }
}

/// Default drift threshold for the conserved differences.
pub const CONSERVED_DRIFT_TOL: f64 = 1e-6;
/// Default trajectory-comparison threshold.
pub const TRAJECTORY_TOL: f64 = 1e-6;
/// Default closed-form regression threshold.
pub const REGRESSION_TOL: f64 = 1e-6;

fn worst<I: Iterator<Item = (f64, f64)>>(values: I) -> (f64, f64) {
    let mut max_v = 0.0;
    let mut at = 0.0;
    for (t, v) in values {
        if v > max_v {
            max_v = v;
            at = t;
        }
    }
    (max_v, at)
}

/// Maximum drift of the conserved quantities
/// `D_j = W_{j+1}ᵀW_{j+1} − W_jW_jᵀ` and of the pairwise norm differences
/// `‖W_j‖² − ‖W_i‖²` across snapshots, against their initial values.
pub fn check_conserved(traj: &Trajectory, threshold: f64) -> Result<InvariantReport> {
    let first = traj
        .states
        .first()
        .and_then(Snapshot::as_tuple)
        .ok_or_else(|| Error::Precondition("conservation check needs layer-tuple snapshots".into()))?;
    let d0 = model::conserved_differences(first);
    let norms0: Vec<f64> = first.layers().iter().map(Mat::norm_squared).collect();

    let per_snapshot = traj.times.iter().zip(&traj.states).map(|(&t, s)| {
        let tuple = s.as_tuple().expect("homogeneous trajectory");
        let drift_d = model::conserved_differences(tuple)
            .iter()
            .zip(&d0)
            .map(|(d, d0)| (d - d0).norm())
            .fold(0.0, f64::max);
        let norms: Vec<f64> = tuple.layers().iter().map(Mat::norm_squared).collect();
        let mut drift_n: f64 = 0.0;
        for i in 0..norms.len() {
            for j in i + 1..norms.len() {
                let now = norms[j] - norms[i];
                let was = norms0[j] - norms0[i];
                drift_n = drift_n.max((now - was).abs());
            }
        }
        (t, drift_d.max(drift_n))
    });
    let (max_violation, worst_time) = worst(per_snapshot);
    Ok(InvariantReport::new("conserved-differences", max_violation, threshold, worst_time))
}

/// Maximum positive inter-snapshot loss increment, normalized by
/// `1 + loss`: the flow is a gradient flow, so the loss may only increase by
/// integrator error.
pub fn check_monotone_loss(traj: &Trajectory, threshold: f64) -> InvariantReport {
    let per_pair = traj
        .times
        .iter()
        .skip(1)
        .zip(traj.stats.windows(2))
        .map(|(&t, w)| {
            let increase = (w[1].loss - w[0].loss) / (1.0 + w[0].loss);
            (t, increase.max(0.0))
        });
    let (max_violation, worst_time) = worst(per_pair);
    InvariantReport::new("monotone-loss", max_violation, threshold, worst_time)
}

/// Whether the snapshot rank estimate stays constant. The product flow
/// preserves rank for every finite time; a singular value may still decay
/// through the numerical threshold as the flow approaches a lower-rank
/// limit, so the report carries the count of such near-threshold drops
/// rather than failing on them: `max_violation` counts upward jumps only.
pub fn check_rank_constant(traj: &Trajectory) -> InvariantReport {
    let r0 = traj.stats.first().map(|s| s.rank_estimate).unwrap_or(0);
    let per_snapshot = traj.times.iter().zip(&traj.stats).map(|(&t, s)| {
        let jump = s.rank_estimate.saturating_sub(r0);
        (t, jump as f64)
    });
    let (max_violation, worst_time) = worst(per_snapshot);
    InvariantReport::new("rank-constant", max_violation, 0.0, worst_time)
}

/// `max_t ‖map(a_t) − map(b_t)‖_F` over two trajectories on identical grids.
pub fn compare_trajectories(
    a: &Trajectory,
    b: &Trajectory,
    map: &dyn Fn(&Snapshot) -> Mat,
) -> Result<f64> {
    if a.times.len() != b.times.len()
        || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-12)
    {
        return Err(Error::GridMismatch(format!(
            "time grids differ ({} vs {} snapshots)",
            a.times.len(),
            b.times.len()
        )));
    }
    Ok(a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| (map(x) - map(y)).norm())
        .fold(0.0, f64::max))
}

/// Closed-form family for [`closed_form_regression`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedFormFamily {
    /// `d = 1` pathological autoencoder: `α₁(t) = 1/√(2e^{2λ₁t} − 1)`,
    /// `β₁(t) = −α₁(t)`.
    PathologicalScalar { lambda: f64 },
}

/// Deviation of a scalar two-layer trajectory from the pathological closed
/// form across snapshots.
pub fn closed_form_regression(
    traj: &Trajectory,
    family: ClosedFormFamily,
    threshold: f64,
) -> Result<InvariantReport> {
    let ClosedFormFamily::PathologicalScalar { lambda } = family;
    let per_snapshot = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| {
            let (alpha, beta) = match s {
                Snapshot::Tuple(tuple) => {
                    if tuple.depth() != 2 || tuple.layer(1).len() != 1 {
                        return Err(Error::Precondition(
                            "pathological regression needs a scalar two-layer trajectory".into(),
                        ));
                    }
                    (tuple.layer(1)[(0, 0)], tuple.layer(2)[(0, 0)])
                }
                Snapshot::Pair { w1, w2 } => {
                    if w1.len() != 1 || w2.len() != 1 {
                        return Err(Error::Precondition(
                            "pathological regression needs scalar layers".into(),
                        ));
                    }
                    (w1[(0, 0)], w2[(0, 0)])
                }
                _ => {
                    return Err(Error::Precondition(
                        "pathological regression needs layer snapshots".into(),
                    ))
                }
            };
            let expect = 1.0 / (2.0 * (2.0 * lambda * t).exp() - 1.0).sqrt();
            Ok((t, (alpha - expect).abs().max((beta + expect).abs())))
        })
        .collect::<Result<Vec<_>>>()?;
    let (max_violation, worst_time) = worst(per_snapshot.into_iter());
    Ok(InvariantReport::new("pathological-closed-form", max_violation, threshold, worst_time))
}
