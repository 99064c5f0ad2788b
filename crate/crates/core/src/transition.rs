//! Jump maps at switching instants.
//!
//! When agents leave or join, the stacked state changes dimension. The
//! migration matrix `Ξ` is built from the identity by deleting the rows of
//! departing agents and inserting zero rows for newcomers. On top of the pure
//! size change, every jump carries a state-independent impulse `Φ_ind` and a
//! state-dependent one generated by `Ξ̂`, which acts on tracking errors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{SeedTree, Stream};
use crate::signed_graph::ModeId;

/// One migration occurrence at switching instant `t_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct MigrationEvent {
    pub time_index: usize,
    pub mode_before: ModeId,
    pub mode_after: ModeId,
    pub n_before: usize,
    pub n_after: usize,
    /// Positions of newcomers in the post-jump vertex set, 1-based, sorted.
    pub joins: Vec<usize>,
    /// Positions of departing agents in the pre-jump vertex set, 1-based, sorted.
    pub leaves: Vec<usize>,
    /// State-independent impulse, length `p·n_after`.
    pub phi_ind: Option<DVector<f64>>,
    /// State-dependent impulse generator, `p·n_after × p·n_before`.
    pub xi_hat: Option<DMatrix<f64>>,
}

impl MigrationEvent {
    /// A pure relabeling event with no impulses.
    pub fn plain(
        mode_before: ModeId,
        mode_after: ModeId,
        n_before: usize,
        n_after: usize,
        joins: Vec<usize>,
        leaves: Vec<usize>,
    ) -> Self {
        MigrationEvent {
            time_index: 0,
            mode_before,
            mode_after,
            n_before,
            n_after,
            joins,
            leaves,
            phi_ind: None,
            xi_hat: None,
        }
    }

    fn label(&self) -> String {
        format!(
            "event {} ({}->{})",
            self.time_index, self.mode_before, self.mode_after
        )
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let label = self.label();
        if self.n_before + self.joins.len() != self.n_after + self.leaves.len() {
            return Err(Error::Config(format!(
                "{label}: {} agents - {} leaving + {} joining != {}",
                self.n_before,
                self.leaves.len(),
                self.joins.len(),
                self.n_after
            )));
        }
        check_positions(&label, "leaves", &self.leaves, self.n_before)?;
        check_positions(&label, "joins", &self.joins, self.n_after)?;
        if let Some(phi) = &self.phi_ind {
            if phi.len() != p * self.n_after {
                return Err(Error::Config(format!(
                    "{label}: impulse has length {}, expected {}",
                    phi.len(),
                    p * self.n_after
                )));
            }
        }
        if let Some(xh) = &self.xi_hat {
            if xh.shape() != (p * self.n_after, p * self.n_before) {
                return Err(Error::Config(format!(
                    "{label}: state-dependent impulse matrix is {:?}, expected {:?}",
                    xh.shape(),
                    (p * self.n_after, p * self.n_before)
                )));
            }
        }
        Ok(())
    }
}

fn check_positions(label: &str, what: &str, pos: &[usize], n: usize) -> Result<()> {
    if pos.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "{label}: {what} must be strictly increasing"
        )));
    }
    if let Some(&bad) = pos.iter().find(|&&i| i == 0 || i > n) {
        return Err(Error::Config(format!(
            "{label}: {what} position {bad} outside 1..={n}"
        )));
    }
    Ok(())
}

/// Migration matrix `Ξ` (`n_after × n_before`, binary).
///
/// Leaves are removed first, then zero rows are inserted at the join positions.
pub fn build_xi(ev: &MigrationEvent) -> Result<DMatrix<f64>> {
    ev.validate(1).or_else(|e| match e {
        // impulse shapes depend on p; only the index structure matters here
        Error::Config(msg) if msg.contains("impulse") => Ok(()),
        other => Err(other),
    })?;
    let survivors: Vec<usize> = (1..=ev.n_before)
        .filter(|i| ev.leaves.binary_search(i).is_err())
        .collect();
    let mut xi = DMatrix::zeros(ev.n_after, ev.n_before);
    let mut source = survivors.iter();
    for row in 1..=ev.n_after {
        if ev.joins.binary_search(&row).is_ok() {
            continue;
        }
        let col = source.next().expect("row count checked by validate");
        xi[(row - 1, col - 1)] = 1.0;
    }
    Ok(xi)
}

/// `Υ̃_N = [-1_N, I_N] ⊗ I_p`, mapping stacked states to tracking errors.
pub fn upsilon(n: usize, p: usize) -> DMatrix<f64> {
    let mut u = DMatrix::zeros(n, n + 1);
    for i in 0..n {
        u[(i, 0)] = -1.0;
        u[(i, i + 1)] = 1.0;
    }
    linalg::kron(&u, &DMatrix::identity(p, p))
}

/// `[-1_{N+}, 0_{N+ × N-}] ⊗ I_p`.
pub fn upsilon_hat(n_after: usize, n_before: usize, p: usize) -> DMatrix<f64> {
    let mut u = DMatrix::zeros(n_after, n_before + 1);
    u.column_mut(0).fill(-1.0);
    linalg::kron(&u, &DMatrix::identity(p, p))
}

/// `[-1_N, 0_{N × N}] ⊗ I_p`.
pub fn upsilon_breve(n: usize, p: usize) -> DMatrix<f64> {
    upsilon_hat(n, n, p)
}

/// Stacked tracking errors `ε_i = ξ_i - ξ_0`.
pub fn errors_of(state: &DVector<f64>, p: usize) -> DVector<f64> {
    let n = state.len() / p - 1;
    let leader = state.rows(0, p);
    DVector::from_fn(n * p, |k, _| state[p + k] - leader[k % p])
}

/// Jump data of one switching instant.
#[derive(Clone, Debug)]
pub struct TransitionMap {
    pub mode_before: ModeId,
    pub mode_after: ModeId,
    pub p: usize,
    pub xi: DMatrix<f64>,
    /// `Ξ ⊗ I_p`.
    pub xi_tilde: DMatrix<f64>,
    /// Size change of the stacked state including the leader block.
    pub xi_aug: DMatrix<f64>,
    pub xi_hat: DMatrix<f64>,
    /// Error-space jump matrix `Ξ̃ + Ξ̂`.
    pub xi_breve_err: DMatrix<f64>,
    /// State-space generator of the state-dependent impulse.
    pub xi_breve_state: DMatrix<f64>,
}

impl TransitionMap {
    pub fn n_before(&self) -> usize {
        self.xi.ncols()
    }

    pub fn n_after(&self) -> usize {
        self.xi.nrows()
    }

    /// `Ξ̂̃ ξ + [0_p; Φ_ind + Ξ̆ ξ]`. The leader block passes through unchanged.
    pub fn apply_state_jump(
        &self,
        state: &DVector<f64>,
        phi_ind: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        let p = self.p;
        if state.len() != p * (self.n_before() + 1) {
            return Err(Error::DimensionMismatch(format!(
                "pre-jump state has length {}, expected {}",
                state.len(),
                p * (self.n_before() + 1)
            )));
        }
        let mut out = &self.xi_aug * state;
        let mut agents = &self.xi_breve_state * state;
        if let Some(phi) = phi_ind {
            check_phi(phi, p * self.n_after())?;
            agents += phi;
        }
        let mut tail = out.rows_mut(p, p * self.n_after());
        tail += agents;
        Ok(out)
    }

    /// `Ξ̆̃ ε + Φ_ind`.
    pub fn apply_error_jump(
        &self,
        err: &DVector<f64>,
        phi_ind: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        if err.len() != self.p * self.n_before() {
            return Err(Error::DimensionMismatch(format!(
                "pre-jump error has length {}, expected {}",
                err.len(),
                self.p * self.n_before()
            )));
        }
        let mut out = &self.xi_breve_err * err;
        if let Some(phi) = phi_ind {
            check_phi(phi, self.p * self.n_after())?;
            out += phi;
        }
        Ok(out)
    }
}

fn check_phi(phi: &DVector<f64>, expected: usize) -> Result<()> {
    if phi.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "impulse has length {}, expected {expected}",
            phi.len()
        )));
    }
    Ok(())
}

pub fn build_transition_map(ev: &MigrationEvent, p: usize) -> Result<TransitionMap> {
    ev.validate(p)?;
    let xi = build_xi(ev)?;
    let (n_after, n_before) = xi.shape();
    let id_p = DMatrix::identity(p, p);
    let xi_tilde = linalg::kron(&xi, &id_p);

    let mut xi_aug = DMatrix::zeros(p * (n_after + 1), p * (n_before + 1));
    xi_aug.view_mut((0, 0), (p, p)).copy_from(&id_p);
    xi_aug
        .view_mut((p, p), (p * n_after, p * n_before))
        .copy_from(&xi_tilde);

    let xi_hat = ev
        .xi_hat
        .clone()
        .unwrap_or_else(|| DMatrix::zeros(p * n_after, p * n_before));
    let xi_breve_err = &xi_tilde + &xi_hat;
    let xi_breve_state = &xi_hat * upsilon(n_before, p) - upsilon_hat(n_after, n_before, p)
        + &xi_tilde * upsilon_breve(n_before, p);

    Ok(TransitionMap {
        mode_before: ev.mode_before,
        mode_after: ev.mode_after,
        p,
        xi,
        xi_tilde,
        xi_aug,
        xi_hat,
        xi_breve_err,
        xi_breve_state,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ImpulseBounds {
    /// Largest state-independent impulse norm.
    pub phi_bar: f64,
    /// Largest induced 2-norm of the error-space jump matrix.
    pub xi_breve_norm_max: f64,
}

pub fn impulse_bounds(events: &[MigrationEvent], p: usize) -> Result<ImpulseBounds> {
    let mut phi_bar = 0.0f64;
    let mut norm_max = 0.0f64;
    let mut seen: Vec<(ModeId, ModeId, &Option<DMatrix<f64>>)> = Vec::new();
    for ev in events {
        if let Some(phi) = &ev.phi_ind {
            phi_bar = phi_bar.max(phi.norm());
        }
        let key = (ev.mode_before, ev.mode_after, &ev.xi_hat);
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let tm = build_transition_map(ev, p)?;
        norm_max = norm_max.max(linalg::spectral_norm(&tm.xi_breve_err));
    }
    Ok(ImpulseBounds {
        phi_bar,
        xi_breve_norm_max: norm_max,
    })
}

/// Uniform draw on the sphere of the given radius.
pub fn sample_sphere<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> DVector<f64> {
    if dim == 0 || radius == 0.0 {
        return DVector::zeros(dim);
    }
    loop {
        let v = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let norm: f64 = v.norm();
        if norm > 1e-12 {
            return v * (radius / norm);
        }
    }
}

/// Gaussian matrix rescaled to the requested induced 2-norm.
pub fn random_matrix_with_norm<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    norm: f64,
) -> DMatrix<f64> {
    if rows == 0 || cols == 0 || norm == 0.0 {
        return DMatrix::zeros(rows, cols);
    }
    let m = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    let s = linalg::spectral_norm(&m);
    m * (norm / s)
}

/// How the state-independent impulse of an event is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum ImpulseSpec {
    None,
    Explicit(DVector<f64>),
    /// Fresh uniform draw on a sphere at every occurrence.
    Sphere {
        radius: f64,
    },
}

/// How the state-dependent impulse generator of a mode pair is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum XiHatSpec {
    None,
    Explicit(DMatrix<f64>),
    /// Gaussian matrix scaled to the given induced 2-norm, fixed per mode pair.
    RandomNorm {
        norm: f64,
    },
}

/// Entry of an event table keyed by `(from, to)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventTemplate {
    pub from: ModeId,
    pub to: ModeId,
    pub joins: Vec<usize>,
    pub leaves: Vec<usize>,
    pub phi_ind: ImpulseSpec,
    pub xi_hat: XiHatSpec,
}

impl EventTemplate {
    /// Identity migration between equally sized modes.
    pub fn relabel(from: ModeId, to: ModeId) -> Self {
        EventTemplate {
            from,
            to,
            joins: Vec::new(),
            leaves: Vec::new(),
            phi_ind: ImpulseSpec::None,
            xi_hat: XiHatSpec::None,
        }
    }

    /// Concrete event for switch number `time_index`; random draws come from `seeds`.
    pub fn instantiate(
        &self,
        time_index: usize,
        n_before: usize,
        n_after: usize,
        p: usize,
        seeds: &SeedTree,
    ) -> Result<MigrationEvent> {
        let phi_ind = match &self.phi_ind {
            ImpulseSpec::None => None,
            ImpulseSpec::Explicit(v) => Some(v.clone()),
            ImpulseSpec::Sphere { radius } => {
                let mut rng = seeds.rng(Stream::Impulse, time_index as u64);
                Some(sample_sphere(&mut rng, p * n_after, *radius))
            }
        };
        let xi_hat = match &self.xi_hat {
            XiHatSpec::None => None,
            XiHatSpec::Explicit(m) => Some(m.clone()),
            XiHatSpec::RandomNorm { norm } => {
                let key = ((self.from.0 as u64) << 32) | self.to.0 as u64;
                let mut rng = seeds.rng(Stream::XiHat, key);
                Some(random_matrix_with_norm(
                    &mut rng,
                    p * n_after,
                    p * n_before,
                    *norm,
                ))
            }
        };
        let ev = MigrationEvent {
            time_index,
            mode_before: self.from,
            mode_after: self.to,
            n_before,
            n_after,
            joins: self.joins.clone(),
            leaves: self.leaves.clone(),
            phi_ind,
            xi_hat,
        };
        ev.validate(p)?;
        Ok(ev)
    }
}
