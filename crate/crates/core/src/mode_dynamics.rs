//! Closed-loop matrices per topology mode and the coupling-gain bound.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Complex64};
use crate::signed_graph::{AugmentedMode, ModeClass, ModeId, NEGATIVE_EIG_TOL};

/// Default cap on `p·N` for a single mode.
pub const DEFAULT_MAX_DIM: usize = 512;

/// Default factor applied to the gain bound when suggesting a coupling gain.
pub const DEFAULT_RHO_MARGIN_FACTOR: f64 = 2.0;

/// Shared open-loop dynamics `A` of every agent and of the leader.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentDynamics {
    a: DMatrix<f64>,
}

impl AgentDynamics {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::Config(format!(
                "agent matrix must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("agent matrix has non-finite entries".into()));
        }
        Ok(AgentDynamics { a })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// State dimension `p` of a single agent.
    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn abscissa(&self) -> Result<f64> {
        linalg::spectral_abscissa(&self.a)
    }

    /// Certification assumes `α(A) ≥ 0`; a violation is only a warning.
    pub fn warnings(&self) -> Result<Vec<String>> {
        let alpha = self.abscissa()?;
        Ok(if alpha < 0.0 {
            vec![format!(
                "agent matrix is Hurwitz (abscissa {alpha}); the gain bound assumes a non-negative abscissa"
            )]
        } else {
            Vec::new()
        })
    }
}

/// Closed-loop error dynamics `Ã = I_N ⊗ A + ρ Z ⊗ I_p` of one mode.
#[derive(Clone, Debug)]
pub struct ModeMatrix {
    pub mode_id: ModeId,
    pub n_agents: usize,
    pub p: usize,
    pub a_tilde: DMatrix<f64>,
    pub eigenvalues: Vec<Complex64>,
    pub alpha: f64,
    pub stable: bool,
}

impl ModeMatrix {
    pub fn dim(&self) -> usize {
        self.a_tilde.nrows()
    }

    /// Whether the abscissa sign matches what the mode class predicts for a valid gain.
    pub fn consistent_with(&self, class: ModeClass) -> bool {
        match class {
            ModeClass::PositiveSpanning => self.alpha < 0.0,
            ModeClass::PositiveNoSpanning => self.alpha >= -NEGATIVE_EIG_TOL,
            ModeClass::NegativeMajority => self.alpha > NEGATIVE_EIG_TOL,
            ModeClass::NegativeMinority => true,
        }
    }
}

pub fn closed_loop_matrix(dynamics: &AgentDynamics, z: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let n = z.nrows();
    let p = dynamics.p();
    linalg::kron(&DMatrix::identity(n, n), dynamics.a())
        + linalg::kron(z, &DMatrix::identity(p, p)) * rho
}

/// Stacked leader-plus-agents dynamics `I_{N+1} ⊗ A + ρ L̃ ⊗ I_p`.
pub fn state_matrix(dynamics: &AgentDynamics, mode: &AugmentedMode, rho: f64) -> DMatrix<f64> {
    closed_loop_matrix(dynamics, &mode.augmented_laplacian(), rho)
}

pub fn build_mode_matrix(
    dynamics: &AgentDynamics,
    mode: &AugmentedMode,
    rho: f64,
    max_dim: usize,
) -> Result<ModeMatrix> {
    let p = dynamics.p();
    let dim = p * mode.n_agents();
    if dim > max_dim {
        return Err(Error::DimensionOverflow { dim, max: max_dim });
    }
    let a_tilde = closed_loop_matrix(dynamics, &mode.z_matrix(), rho);
    let eigenvalues = linalg::eigenvalues(&a_tilde).map_err(|e| match e {
        Error::Numeric { reason, .. } => Error::numeric(format!("mode {}", mode.id), reason),
        other => other,
    })?;
    let alpha = eigenvalues
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ModeMatrix {
        mode_id: mode.id,
        n_agents: mode.n_agents(),
        p,
        a_tilde,
        eigenvalues,
        alpha,
        stable: alpha < 0.0,
    })
}

/// `min over spanning positive modes of α(A) / α(-Z)`; a valid gain lies strictly below.
pub fn rho_upper_bound(dynamics: &AgentDynamics, modes: &[AugmentedMode]) -> Result<f64> {
    let alpha_a = dynamics.abscissa()?;
    let mut bound = f64::INFINITY;
    for m in modes
        .iter()
        .filter(|m| m.class() == ModeClass::PositiveSpanning)
    {
        let alpha_neg_z = linalg::spectral_abscissa(&-m.z_matrix())?;
        if alpha_neg_z >= 0.0 {
            return Err(Error::numeric(
                format!("mode {}", m.id),
                format!("spanning positive mode has α(-Z) = {alpha_neg_z} ≥ 0"),
            ));
        }
        bound = bound.min(alpha_a / alpha_neg_z);
    }
    if bound == f64::INFINITY {
        return Err(Error::AssumptionViolation(
            "no positive mode with a spanning tree rooted at the leader".into(),
        ));
    }
    Ok(bound)
}

/// Gain suggestion `bound · factor`, or `-(factor - 1)` when the bound is zero.
pub fn suggested_rho(bound: f64, margin_factor: f64) -> f64 {
    if bound < 0.0 {
        bound * margin_factor
    } else {
        -(margin_factor - 1.0).max(f64::EPSILON)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KroneckerCheck {
    /// Bottleneck matching distance between the two spectra.
    pub max_deviation: f64,
    pub ok: bool,
}

pub const KRONECKER_MATCH_TOL: f64 = 1e-8;

/// Compares `λ(F ⊗ I + I ⊗ G)` against all pairwise sums `λ(F) + λ(G)`.
pub fn kronecker_spectrum_deviation(f: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<KroneckerCheck> {
    let direct = linalg::eigenvalues(&linalg::kron_sum(f, g))?;
    let ef = linalg::eigenvalues(f)?;
    let eg = linalg::eigenvalues(g)?;
    let sums: Vec<Complex64> = ef
        .iter()
        .flat_map(|a| eg.iter().map(move |b| a + b))
        .collect();
    let max_deviation = linalg::bottleneck_match(&direct, &sums)
        .ok_or_else(|| Error::DimensionMismatch("spectrum sizes differ".into()))?;
    Ok(KroneckerCheck {
        max_deviation,
        ok: max_deviation <= KRONECKER_MATCH_TOL,
    })
}

pub fn kronecker_spectrum_check(f: &DMatrix<f64>, g: &DMatrix<f64>) -> bool {
    kronecker_spectrum_deviation(f, g).is_ok_and(|c| c.ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{reference_dynamics, reference_modes, REFERENCE_RHO};
    use nalgebra::DVector;

    fn build_all(rho: f64) -> Vec<ModeMatrix> {
        let dynamics = reference_dynamics();
        reference_modes()
            .iter()
            .map(|m| build_mode_matrix(&dynamics, m, rho, DEFAULT_MAX_DIM).unwrap())
            .collect()
    }

    #[test]
    fn reference_abscissas() {
        let alphas: Vec<f64> = build_all(REFERENCE_RHO).iter().map(|m| m.alpha).collect();
        let expected = [-2.925, 0.025, 5.925, 2.975];
        for (a, e) in alphas.iter().zip(expected) {
            assert!((a - e).abs() < 1e-9, "{a} vs {e}");
        }
        let stable: Vec<bool> = build_all(REFERENCE_RHO).iter().map(|m| m.stable).collect();
        assert_eq!(stable, vec![true, false, false, false]);
    }

    #[test]
    fn zero_gain_reduces_to_agent_abscissa() {
        for m in build_all(0.0) {
            assert!((m.alpha - 0.025).abs() < 1e-12);
        }
    }

    #[test]
    fn gain_bound_for_reference() {
        // Z₁ has spectrum {1,1,1,2}, so α(-Z₁) = -1 and the bound is 0.025 / -1.
        let bound = rho_upper_bound(&reference_dynamics(), &reference_modes()).unwrap();
        assert!((bound + 0.025).abs() < 1e-12);
        assert!(REFERENCE_RHO < bound);
        assert!((suggested_rho(bound, 2.0) + 0.05).abs() < 1e-12);
    }

    #[test]
    fn gain_bound_takes_minimum() {
        let dynamics =
            AgentDynamics::new(DMatrix::from_diagonal(&DVector::from_vec(vec![0.4, -1.0])))
                .unwrap();
        let m = |id, d: f64| {
            let g = crate::signed_graph::SignedDigraph::new(1, []).unwrap();
            AugmentedMode::new(ModeId(id), g, vec![d]).unwrap()
        };
        // α(-Z) = -1 and -2 → ratios -0.4 and -0.2
        let bound = rho_upper_bound(&dynamics, &[m(1, 1.0), m(2, 2.0)]).unwrap();
        assert!((bound + 0.4).abs() < 1e-15);
    }

    #[test]
    fn gain_bound_needs_spanning_mode() {
        let modes: Vec<_> = reference_modes().into_iter().skip(1).collect();
        assert!(matches!(
            rho_upper_bound(&reference_dynamics(), &modes),
            Err(Error::AssumptionViolation(_))
        ));
    }

    #[test]
    fn zero_abscissa_gives_zero_bound() {
        let dynamics =
            AgentDynamics::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        let bound = rho_upper_bound(&dynamics, &reference_modes()).unwrap();
        assert!(bound.abs() < 1e-12);
    }

    #[test]
    fn dimension_guard() {
        let m = &reference_modes()[2];
        let err = build_mode_matrix(&reference_dynamics(), m, REFERENCE_RHO, 8).unwrap_err();
        assert!(matches!(err, Error::DimensionOverflow { dim: 10, max: 8 }));
    }

    #[test]
    fn classes_match_abscissa_signs() {
        for (mm, mode) in build_all(REFERENCE_RHO).iter().zip(reference_modes()) {
            assert!(mm.consistent_with(mode.class()), "mode {}", mode.id);
        }
    }

    #[test]
    fn halving_gain_scales_coupling_shift() {
        // all reference Z spectra are real, so α(Ã) = α(A) + ρ·λ_min(Z) for ρ < 0
        let alpha_a = 0.025;
        for (full, half) in build_all(REFERENCE_RHO)
            .iter()
            .zip(build_all(REFERENCE_RHO / 2.0))
        {
            let shift_full = full.alpha - alpha_a;
            let shift_half = half.alpha - alpha_a;
            assert!((shift_full - 2.0 * shift_half).abs() < 1e-9);
        }
    }

    #[test]
    fn kronecker_diagonal_and_reference() {
        let f = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let g = DMatrix::from_element(1, 1, 10.0);
        assert!(kronecker_spectrum_check(&f, &g));

        let z1 = reference_modes()[0].z_matrix() * REFERENCE_RHO;
        let a = reference_dynamics().a().clone();
        let check = kronecker_spectrum_deviation(&z1, &a).unwrap();
        assert!(check.ok, "{}", check.max_deviation);
        let alpha = linalg::spectral_abscissa(&linalg::kron_sum(&z1, &a)).unwrap();
        assert!((alpha + 2.925).abs() < 1e-9);
    }
}
