//! Signed digraphs with a leader node, repelling Laplacians and mode classes.
//!
//! Agents are numbered `1..=N` inside a mode. An edge `from -> to` with weight
//! `w` sets `a[to][from] = w`: agent `to` listens to agent `from`. Node `0` is
//! the leader; it only ever sends.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Threshold separating a genuinely negative real part from the structural zero.
pub const NEGATIVE_EIG_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeId(pub u32);

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    /// `+1`/`-1` for the unweighted model; any non-zero real otherwise.
    #[serde(rename = "sign")]
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignedDigraph {
    n_agents: usize,
    edges: Vec<Edge>,
}

impl SignedDigraph {
    pub fn new(n_agents: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::Config("a mode needs at least one agent".into()));
        }
        let mut seen = vec![false; n_agents * n_agents];
        let mut out = Vec::new();
        for e in edges {
            if e.from == 0 || e.to == 0 || e.from > n_agents || e.to > n_agents {
                return Err(Error::Config(format!(
                    "edge {}->{} outside agent range 1..={n_agents}",
                    e.from, e.to
                )));
            }
            if e.from == e.to {
                return Err(Error::Config(format!("self-loop on agent {}", e.from)));
            }
            if !e.weight.is_finite() || e.weight == 0.0 {
                return Err(Error::Config(format!(
                    "edge {}->{} has invalid weight {}",
                    e.from, e.to, e.weight
                )));
            }
            let slot = (e.to - 1) * n_agents + (e.from - 1);
            if std::mem::replace(&mut seen[slot], true) {
                return Err(Error::Config(format!(
                    "duplicate edge {}->{}",
                    e.from, e.to
                )));
            }
            out.push(e);
        }
        out.sort_by_key(|e| (e.to, e.from));
        Ok(SignedDigraph {
            n_agents,
            edges: out,
        })
    }

    /// Recovers the edge set from a dense repelling Laplacian.
    ///
    /// Off-diagonal entries give `a_ij = -l_ij`; the diagonal must equal the
    /// row sum of the adjacency (zero row sums) to within `1e-9`.
    pub fn from_laplacian(l: &DMatrix<f64>) -> Result<Self> {
        let n = l.nrows();
        if !l.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "laplacian must be square, got {}x{}",
                l.nrows(),
                l.ncols()
            )));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                row_sum += l[(i, j)];
                if i != j && l[(i, j)] != 0.0 {
                    edges.push(Edge {
                        from: j + 1,
                        to: i + 1,
                        weight: -l[(i, j)],
                    });
                }
            }
            if row_sum.abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "laplacian row {} sums to {row_sum}, expected 0",
                    i + 1
                )));
            }
        }
        SignedDigraph::new(n, edges)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_agents, self.n_agents);
        for e in &self.edges {
            a[(e.to - 1, e.from - 1)] = e.weight;
        }
        a
    }

    /// Renames agent `i` to `perm[i-1]` (1-based targets).
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_agents {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        SignedDigraph::new(
            self.n_agents,
            self.edges.iter().map(|e| Edge {
                from: perm[e.from - 1],
                to: perm[e.to - 1],
                weight: e.weight,
            }),
        )
    }
}

/// `l_ij = -a_ij` off the diagonal, `l_ii = Σ_j a_ij`.
pub fn repelling_laplacian(g: &SignedDigraph) -> DMatrix<f64> {
    let a = g.adjacency();
    let mut l = -&a;
    for i in 0..g.n_agents {
        l[(i, i)] = a.row(i).sum();
    }
    l
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeClass {
    PositiveSpanning,
    PositiveNoSpanning,
    NegativeMajority,
    /// Has negative edges but they do not dominate; excluded from certified scenarios.
    NegativeMinority,
}

impl ModeClass {
    pub fn is_positive(self) -> bool {
        matches!(
            self,
            ModeClass::PositiveSpanning | ModeClass::PositiveNoSpanning
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Classification {
    pub class: ModeClass,
    pub positive_edges: usize,
    pub negative_edges: usize,
    /// `Σ_{i≠j} l̃_ij`, the weighted dominance measure.
    pub off_diagonal_sum: f64,
    /// `false` when edge counting and the weighted sum disagree on dominance.
    pub definitions_agree: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NegativeInstabilityReport {
    pub trace_ltilde: f64,
    pub trace_z: f64,
    pub min_re_ltilde: f64,
    pub min_re_z: f64,
    pub has_negative_eig_ltilde: bool,
    pub has_negative_eig_z: bool,
}

impl NegativeInstabilityReport {
    pub fn holds(&self) -> bool {
        self.trace_ltilde < 0.0
            && self.trace_z < 0.0
            && self.has_negative_eig_ltilde
            && self.has_negative_eig_z
    }
}

/// One topology mode: agent graph plus leader links `d̃`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedMode {
    pub id: ModeId,
    graph: SignedDigraph,
    leader_links: Vec<f64>,
}

impl AugmentedMode {
    pub fn new(id: ModeId, graph: SignedDigraph, leader_links: Vec<f64>) -> Result<Self> {
        if leader_links.len() != graph.n_agents() {
            return Err(Error::DimensionMismatch(format!(
                "mode {id}: {} leader links for {} agents",
                leader_links.len(),
                graph.n_agents()
            )));
        }
        if leader_links.iter().any(|d| !d.is_finite()) {
            return Err(Error::Config(format!("mode {id}: non-finite leader link")));
        }
        Ok(AugmentedMode {
            id,
            graph,
            leader_links,
        })
    }

    /// Builds a mode from a dense repelling Laplacian and leader-link diagonal.
    pub fn from_dense(
        id: ModeId,
        laplacian: &DMatrix<f64>,
        leader_links: Vec<f64>,
    ) -> Result<Self> {
        let graph = SignedDigraph::from_laplacian(laplacian)
            .map_err(|e| Error::Config(format!("mode {id}: {e}")))?;
        AugmentedMode::new(id, graph, leader_links)
    }

    pub fn graph(&self) -> &SignedDigraph {
        &self.graph
    }

    pub fn leader_links(&self) -> &[f64] {
        &self.leader_links
    }

    pub fn n_agents(&self) -> usize {
        self.graph.n_agents()
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        repelling_laplacian(&self.graph)
    }

    /// `Z = L + diag(d̃)`.
    pub fn z_matrix(&self) -> DMatrix<f64> {
        let mut z = self.laplacian();
        for (i, d) in self.leader_links.iter().enumerate() {
            z[(i, i)] += d;
        }
        z
    }

    /// `L̃ = [0, 0ᵀ; -d̃, Z]`, the Laplacian of the graph including the leader.
    pub fn augmented_laplacian(&self) -> DMatrix<f64> {
        let n = self.n_agents();
        let mut lt = DMatrix::zeros(n + 1, n + 1);
        lt.view_mut((1, 1), (n, n)).copy_from(&self.z_matrix());
        for (i, d) in self.leader_links.iter().enumerate() {
            lt[(i + 1, 0)] = -d;
        }
        lt
    }

    fn edge_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.graph
            .edges()
            .iter()
            .map(|e| e.weight)
            .chain(self.leader_links.iter().copied().filter(|d| *d != 0.0))
    }

    pub fn is_unit_weight(&self) -> bool {
        self.edge_weights().all(|w| w.abs() == 1.0)
    }

    /// Every agent reachable from the leader along directed edges.
    pub fn leader_reaches_all(&self) -> bool {
        let n = self.n_agents();
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
        for (i, d) in self.leader_links.iter().enumerate() {
            if *d != 0.0 {
                out[0].push(i + 1);
            }
        }
        for e in self.graph.edges() {
            out[e.from].push(e.to);
        }
        let mut seen = vec![false; n + 1];
        seen[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for &v in &out[u] {
                if !std::mem::replace(&mut seen[v], true) {
                    queue.push_back(v);
                }
            }
        }
        seen.iter().all(|s| *s)
    }

    pub fn classify(&self) -> Classification {
        let positive_edges = self.edge_weights().filter(|w| *w > 0.0).count();
        let negative_edges = self.edge_weights().filter(|w| *w < 0.0).count();
        // Σ_{i≠j} l̃_ij = -(Σ a_ij + Σ d_i)
        let off_diagonal_sum = -self.edge_weights().sum::<f64>();

        let by_count = negative_edges > positive_edges;
        let by_sum = off_diagonal_sum > 0.0;
        let class = if negative_edges == 0 {
            if self.leader_reaches_all() {
                ModeClass::PositiveSpanning
            } else {
                ModeClass::PositiveNoSpanning
            }
        } else {
            let dominated = if self.is_unit_weight() {
                by_count
            } else {
                by_sum
            };
            if dominated {
                ModeClass::NegativeMajority
            } else {
                ModeClass::NegativeMinority
            }
        };
        Classification {
            class,
            positive_edges,
            negative_edges,
            off_diagonal_sum,
            definitions_agree: negative_edges == 0 || by_count == by_sum,
        }
    }

    pub fn class(&self) -> ModeClass {
        self.classify().class
    }

    /// Trace and eigenvalue evidence that negative dominance destabilises `L̃` and `Z`.
    pub fn negative_instability_report(&self) -> Result<NegativeInstabilityReport> {
        let lt = self.augmented_laplacian();
        let z = self.z_matrix();
        let min_re = |m: &DMatrix<f64>| -> Result<f64> {
            Ok(linalg::eigenvalues(m)?
                .iter()
                .map(|e| e.re)
                .fold(f64::INFINITY, f64::min))
        };
        let min_re_ltilde = min_re(&lt)?;
        let min_re_z = min_re(&z)?;
        Ok(NegativeInstabilityReport {
            trace_ltilde: lt.trace(),
            trace_z: z.trace(),
            min_re_ltilde,
            min_re_z,
            has_negative_eig_ltilde: min_re_ltilde < -NEGATIVE_EIG_TOL,
            has_negative_eig_z: min_re_z < -NEGATIVE_EIG_TOL,
        })
    }

    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let graph = self.graph.relabel(perm)?;
        let mut links = vec![0.0; self.leader_links.len()];
        for (i, d) in self.leader_links.iter().enumerate() {
            links[perm[i] - 1] = *d;
        }
        AugmentedMode::new(self.id, graph, links)
    }

    pub fn leader_link_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.leader_links)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    fn mode(n: usize, edges: &[(usize, usize, f64)], links: &[f64]) -> AugmentedMode {
        let g = SignedDigraph::new(
            n,
            edges
                .iter()
                .map(|&(from, to, weight)| Edge { from, to, weight }),
        )
        .unwrap();
        AugmentedMode::new(ModeId(0), g, links.to_vec()).unwrap()
    }

    #[test]
    fn mode_two_laplacian_from_edges() {
        let m = mode(3, &[(1, 3, 1.0), (2, 3, 1.0)], &[1.0, 0.0, 0.0]);
        let expected =
            DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, -1.0, 2.0]);
        assert_eq!(m.laplacian(), expected);
    }

    #[test]
    fn empty_graph_has_zero_laplacian() {
        let m = mode(3, &[], &[0.0; 3]);
        assert_eq!(m.laplacian(), DMatrix::zeros(3, 3));
        assert_eq!(m.augmented_laplacian(), DMatrix::zeros(4, 4));
        assert_eq!(m.z_matrix(), m.laplacian());
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        let self_loop = SignedDigraph::new(
            2,
            [Edge {
                from: 1,
                to: 1,
                weight: 1.0,
            }],
        );
        assert!(matches!(self_loop, Err(Error::Config(_))));
        let dup = SignedDigraph::new(
            2,
            [
                Edge {
                    from: 1,
                    to: 2,
                    weight: 1.0,
                },
                Edge {
                    from: 1,
                    to: 2,
                    weight: -1.0,
                },
            ],
        );
        assert!(matches!(dup, Err(Error::Config(_))));
        let bad_row = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(SignedDigraph::from_laplacian(&bad_row).is_err());
    }

    #[test]
    fn fixture_z_and_augmented_laplacians() {
        let modes = fixtures::reference_modes();
        let z1 = DMatrix::from_row_slice(
            4,
            4,
            &[
                2.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, -1.0, 1.0,
            ],
        );
        assert_eq!(modes[0].z_matrix(), z1);

        let lt4 = modes[3].augmented_laplacian();
        assert_eq!(lt4.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0; 4]);
        assert_eq!(
            lt4.column(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 0.0, 0.0, 1.0]
        );
        let z4 = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -1.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0]);
        assert_eq!(lt4.view((1, 1), (3, 3)).clone_owned(), z4);
    }

    #[test]
    fn fixture_z3_spectrum() {
        // Z₃ is upper triangular, so its spectrum is its diagonal: the
        // characteristic polynomial is Π (z_ii − λ).
        let z3 = fixtures::reference_modes()[2].z_matrix();
        for i in 0..5 {
            for j in 0..i {
                assert_eq!(z3[(i, j)], 0.0);
            }
        }
        let mut diag: Vec<f64> = z3.diagonal().iter().copied().collect();
        diag.sort_by(f64::total_cmp);
        assert_eq!(diag, vec![-2.0, -1.0, -1.0, 0.0, 0.0]);

        let mut eigs: Vec<f64> = linalg::eigenvalues(&z3)
            .unwrap()
            .iter()
            .map(|z| z.re)
            .collect();
        eigs.sort_by(f64::total_cmp);
        for (e, d) in eigs.iter().zip(&diag) {
            assert!((e - d).abs() < 1e-12);
        }
    }

    #[test]
    fn fixture_classes() {
        let classes: Vec<ModeClass> = fixtures::reference_modes()
            .iter()
            .map(|m| m.class())
            .collect();
        assert_eq!(
            classes,
            vec![
                ModeClass::PositiveSpanning,
                ModeClass::PositiveNoSpanning,
                ModeClass::NegativeMajority,
                ModeClass::NegativeMajority,
            ]
        );
    }

    #[test]
    fn single_agent_with_leader_link_spans() {
        assert_eq!(mode(1, &[], &[1.0]).class(), ModeClass::PositiveSpanning);
        assert_eq!(mode(1, &[], &[0.0]).class(), ModeClass::PositiveNoSpanning);
    }

    #[test]
    fn negative_minority_is_detected() {
        let m = mode(2, &[(1, 2, -1.0)], &[1.0, 1.0]);
        assert_eq!(m.class(), ModeClass::NegativeMinority);
    }

    #[test]
    fn fixture_negative_instability_reports() {
        let modes = fixtures::reference_modes();
        let r3 = modes[2].negative_instability_report().unwrap();
        assert_eq!(r3.trace_z, -4.0);
        assert!(r3.holds());
        let r4 = modes[3].negative_instability_report().unwrap();
        assert_eq!(r4.trace_z, -1.0);
        assert!(r4.holds());
    }

    #[test]
    fn weighted_definitions_can_disagree() {
        // two negative edges of weight -0.1 against one positive of 1.0
        let m = mode(
            3,
            &[(1, 2, -0.1), (2, 3, -0.1), (3, 1, 1.0)],
            &[0.0, 0.0, 0.0],
        );
        let c = m.classify();
        assert!(!c.definitions_agree);
        assert_eq!(c.class, ModeClass::NegativeMinority);
    }

    pub(crate) fn arb_mode(max_n: usize) -> impl Strategy<Value = AugmentedMode> {
        (1..=max_n).prop_flat_map(|n| {
            let pairs = n * n;
            (
                proptest::collection::vec(prop_oneof![Just(0i8), Just(1), Just(-1)], pairs),
                proptest::collection::vec(prop_oneof![Just(0i8), Just(1), Just(-1)], n),
            )
                .prop_map(move |(adj, links)| {
                    let edges = adj.iter().enumerate().filter_map(|(k, &s)| {
                        let (to, from) = (k / n + 1, k % n + 1);
                        (s != 0 && to != from).then_some(Edge {
                            from,
                            to,
                            weight: s as f64,
                        })
                    });
                    let g = SignedDigraph::new(n, edges).unwrap();
                    AugmentedMode::new(ModeId(1), g, links.iter().map(|&d| d as f64).collect())
                        .unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn laplacian_annihilates_ones(m in arb_mode(8)) {
            let n = m.n_agents();
            let ones = DVector::from_element(n, 1.0);
            prop_assert!((m.laplacian() * &ones).norm() <= 1e-12 * n as f64);
            let lt = m.augmented_laplacian();
            let r = lt * DVector::from_element(n + 1, 1.0);
            prop_assert!(r.amax() <= 1e-12);
        }

        #[test]
        fn trace_counts_signed_edges(m in arb_mode(8)) {
            let c = m.classify();
            let expected = c.positive_edges as f64 - c.negative_edges as f64;
            prop_assert_eq!(m.augmented_laplacian().trace(), expected);
            prop_assert_eq!(m.augmented_laplacian().trace(), -c.off_diagonal_sum);
        }

        #[test]
        fn classification_ignores_labels(
            m in arb_mode(7),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut perm: Vec<usize> = (1..=m.n_agents()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let relabeled = m.relabel(&perm).unwrap();
            prop_assert_eq!(m.classify(), relabeled.classify());
        }

        #[test]
        fn negative_majority_is_unstable(m in arb_mode(8)) {
            if m.class() == ModeClass::NegativeMajority {
                let r = m.negative_instability_report().unwrap();
                prop_assert!(r.holds(), "{:?}", r);
            }
        }
    }
}
