//! Finite-difference self-tests of a chain's analytic Jacobians.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::kinematics::se3::log_so3;
use crate::kinematics::{KinematicChain, KinematicsError};

#[derive(Clone, Debug, PartialEq)]
pub struct JacobianCheck {
    pub sample: usize,
    pub frame: usize,
    /// Largest entry-wise deviation from the finite-difference estimate.
    pub max_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub checks: Vec<JacobianCheck>,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn worst(&self) -> Option<&JacobianCheck> {
        self.checks.iter().max_by(|a, b| a.max_error.total_cmp(&b.max_error))
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_error <= self.tolerance)
    }
}

/// Central-difference estimate of the 6×n geometric Jacobian of `frame`.
pub fn fd_jacobian(
    chain: &KinematicChain,
    q: &DVector<f64>,
    frame: usize,
    h: f64,
) -> Result<DMatrix<f64>, KinematicsError> {
    let n = chain.dof();
    let mut jac = DMatrix::zeros(6, n);
    let mut probe = q.clone();
    for j in 0..n {
        probe[j] = q[j] + h;
        let plus = chain.forward_kinematics(&probe)?[frame];
        probe[j] = q[j] - h;
        let minus = chain.forward_kinematics(&probe)?[frame];
        probe[j] = q[j];
        let lin = (plus.translation - minus.translation) / (2.0 * h);
        let ang = log_so3(&(plus.rotation * minus.rotation.transpose())) / (2.0 * h);
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, j).copy_from(&ang);
    }
    Ok(jac)
}

/// Compare analytic and finite-difference Jacobians of every frame at
/// `samples` random configurations inside the joint limits.
pub fn jacobian_self_test(
    chain: &KinematicChain,
    samples: usize,
    tolerance: f64,
    rng: &mut impl Rng,
) -> Result<CheckReport, KinematicsError> {
    let mut checks = Vec::new();
    for sample in 0..samples {
        let q = DVector::from_iterator(
            chain.dof(),
            chain.limits().iter().map(|l| {
                let (lo, hi) = (l.lower.max(-std::f64::consts::PI), l.upper.min(std::f64::consts::PI));
                if hi > lo {
                    rng.gen_range(lo..hi)
                } else {
                    lo
                }
            }),
        );
        for frame in 1..chain.frame_count() {
            let analytic = chain.geometric_jacobian(&q, frame)?;
            let numeric = fd_jacobian(chain, &q, frame, 1e-6)?;
            checks.push(JacobianCheck { sample, frame, max_error: (analytic - numeric).amax() });
        }
    }
    Ok(CheckReport { checks, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn bundled_chain_passes() {
        let chain = KinematicChain::from_json(crate::BUNDLED_CHAIN).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let report = jacobian_self_test(&chain, 5, 1e-6, &mut rng).unwrap();
        assert!(report.passed(), "{:?}", report.worst());
        assert_eq!(report.checks.len(), 5 * (chain.frame_count() - 1));
    }
}
