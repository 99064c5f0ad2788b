//! Workloads shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use omas_core::fixtures::{reference_dynamics, reference_modes, REFERENCE_RHO};
pub use omas_core::mode_dynamics::{build_mode_matrix, DEFAULT_MAX_DIM};
pub use omas_core::scenario::{reference_scenario, vanishing, SignalSpec};
pub use omas_core::{AugmentedMode, Edge, ModeId, ModeMatrix, Scenario, Segment, SignedDigraph};

/// Closed-loop matrices of the four reference modes.
pub fn reference_matrices() -> Vec<ModeMatrix> {
    let dynamics = reference_dynamics();
    reference_modes()
        .iter()
        .map(|m| build_mode_matrix(&dynamics, m, REFERENCE_RHO, DEFAULT_MAX_DIM).unwrap())
        .collect()
}

/// Directed ring of `n` agents plus random chords, a fraction of them negative.
/// The leader pins agent 1 so the positive ring is spanning.
pub fn ring_mode(n: usize, chords: usize, negative: f64, seed: u64) -> AugmentedMode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<Edge> = (1..=n)
        .map(|i| Edge {
            from: i,
            to: i % n + 1,
            weight: 1.0,
        })
        .collect();
    while edges.len() < n + chords {
        let (from, to) = (rng.random_range(1..=n), rng.random_range(1..=n));
        if from == to || edges.iter().any(|e| e.from == from && e.to == to) {
            continue;
        }
        let weight = if rng.random::<f64>() < negative {
            -1.0
        } else {
            1.0
        };
        edges.push(Edge { from, to, weight });
    }
    let mut links = vec![0.0; n];
    links[0] = 1.0;
    AugmentedMode::new(ModeId(1), SignedDigraph::new(n, edges).unwrap(), links).unwrap()
}

pub fn ring_matrix(n: usize, seed: u64) -> ModeMatrix {
    build_mode_matrix(
        &reference_dynamics(),
        &ring_mode(n, n / 2, 0.2, seed),
        REFERENCE_RHO,
        DEFAULT_MAX_DIM,
    )
    .unwrap()
}

/// Reference network on an explicit signal of length `tf` with one excursion.
pub fn short_reference(tf: f64, dt: f64) -> Scenario {
    let mut s = reference_scenario();
    s.signal = SignalSpec::Explicit {
        t0: 0.0,
        tf,
        segments: vec![
            Segment {
                start: 0.0,
                mode: ModeId(1),
            },
            Segment {
                start: 0.5 * tf,
                mode: ModeId(3),
            },
            Segment {
                start: 0.5 * tf + 0.3,
                mode: ModeId(1),
            },
        ],
    };
    s.simulation.dt = dt;
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workloads_build() {
        assert_eq!(reference_matrices().len(), 4);
        let m = ring_matrix(12, 1);
        assert_eq!(m.a_tilde.nrows(), 24);
        assert!(short_reference(4.0, 0.01).check().is_ok());
    }
}
