//! The four-mode reference network: a damped-oscillator agent model, four
//! signed topologies over 3 to 5 agents and the migrations linking them.
//!
//! Shared by unit tests, the acceptance suite, benches and the bundled
//! scenario file.

use nalgebra::DMatrix;

use crate::mode_dynamics::AgentDynamics;
use crate::signed_graph::{AugmentedMode, ModeId};

pub const REFERENCE_RHO: f64 = -2.95;

/// Bound on the state-independent impulses in the reference example.
pub const REFERENCE_PHI_BAR: f64 = 0.53;

/// Bound on the dynamics perturbation in the reference example.
pub const REFERENCE_H_BAR: f64 = 0.2;

/// Published activation-time ratio lower bound of the reference example.
pub const REFERENCE_RATIO: f64 = 13.15;

/// Published average-dwell-time lower bound of the reference example.
pub const REFERENCE_ADT: f64 = 2.42;

/// Class-wide rate margins found by `certificate::calibrate` for the two
/// published bounds (unit migration norm).
pub const REFERENCE_STABLE_MARGIN: f64 = 1.016_437_5;
pub const REFERENCE_UNSTABLE_MARGIN: f64 = 0.271_878_584_4;

pub fn reference_dynamics() -> AgentDynamics {
    AgentDynamics::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.2, 0.05]))
        .expect("2x2 agent matrix")
}

pub fn reference_laplacians() -> [DMatrix<f64>; 4] {
    [
        DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, 0.0, -1.0, //
                0.0, 0.0, 0.0, 0.0, //
                0.0, -1.0, 1.0, 0.0, //
                0.0, 0.0, -1.0, 1.0,
            ],
        ),
        DMatrix::from_row_slice(
            3,
            3,
            &[
                0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, //
                -1.0, -1.0, 2.0,
            ],
        ),
        DMatrix::from_row_slice(
            5,
            5,
            &[
                0.0, 0.0, 0.0, 0.0, 0.0, //
                0.0, -2.0, 1.0, 0.0, 1.0, //
                0.0, 0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, 0.0,
            ],
        ),
        DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0, 0.0, -1.0, //
                1.0, -1.0, 0.0, //
                0.0, 0.0, 0.0,
            ],
        ),
    ]
}

pub fn reference_leader_links() -> [Vec<f64>; 4] {
    [
        vec![1.0, 1.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0],
        vec![-1.0, 0.0, 0.0, -1.0, 0.0],
        vec![0.0, 0.0, -1.0],
    ]
}

pub fn reference_modes() -> Vec<AugmentedMode> {
    reference_laplacians()
        .iter()
        .zip(reference_leader_links())
        .enumerate()
        .map(|(k, (l, d))| {
            AugmentedMode::from_dense(ModeId(k as u32 + 1), l, d).expect("valid reference mode")
        })
        .collect()
}

/// A migration between two reference modes: `(from, to, joins, leaves)`
/// with 1-based agent positions.
pub struct ReferenceMigration {
    pub from: u32,
    pub to: u32,
    pub joins: &'static [usize],
    pub leaves: &'static [usize],
}

pub const REFERENCE_MIGRATIONS: [ReferenceMigration; 8] = [
    ReferenceMigration {
        from: 1,
        to: 2,
        joins: &[],
        leaves: &[2],
    },
    ReferenceMigration {
        from: 2,
        to: 3,
        joins: &[2, 5],
        leaves: &[],
    },
    ReferenceMigration {
        from: 3,
        to: 1,
        joins: &[],
        leaves: &[5],
    },
    ReferenceMigration {
        from: 1,
        to: 3,
        joins: &[5],
        leaves: &[],
    },
    ReferenceMigration {
        from: 2,
        to: 1,
        joins: &[3],
        leaves: &[],
    },
    ReferenceMigration {
        from: 3,
        to: 2,
        joins: &[],
        leaves: &[3, 4],
    },
    ReferenceMigration {
        from: 1,
        to: 4,
        joins: &[],
        leaves: &[1],
    },
    ReferenceMigration {
        from: 4,
        to: 1,
        joins: &[3],
        leaves: &[],
    },
];
