//! Hybrid simulation of the stacked leader/agent system and its error system.
//!
//! Each segment integrates `ξ̇ = Mξ + [0; h]` and `ε̇ = Ãε + h` on a fixed grid
//! that ends exactly at the next switch; at switches the jump maps are applied
//! to both. The perturbation is sampled once per step at the step midpoint and
//! held, so both integration routes solve the same equation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::certificate::CertificateBundle;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mode_dynamics::{closed_loop_matrix, state_matrix, AgentDynamics};
use crate::rng::{SeedTree, Stream};
use crate::signed_graph::{AugmentedMode, ModeId};
use crate::switching::SwitchingSignal;
use crate::transition::{build_transition_map, errors_of, upsilon, MigrationEvent};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_HOLD: f64 = 0.05;
pub const DEFAULT_TAIL_FRACTION: f64 = 0.2;
pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-3;
const BLOW_UP: f64 = 1e200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationKind {
    Zero,
    /// Fixed direction of norm `h̄`; `pattern` is repeated per agent.
    Constant {
        #[serde(default)]
        pattern: Option<Vec<f64>>,
    },
    /// `h̄·u·sin(2πft)` with unit direction `u`.
    Sinusoidal {
        frequency: f64,
        #[serde(default)]
        pattern: Option<Vec<f64>>,
    },
    /// Uniform draws in the `h̄`-ball, held for `hold` seconds.
    RandomPiecewise {
        #[serde(default = "default_hold")]
        hold: f64,
    },
}

fn default_hold() -> f64 {
    DEFAULT_HOLD
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationModel {
    pub kind: PerturbationKind,
    pub h_bar: f64,
    pub t0: f64,
    pub seeds: SeedTree,
}

impl PerturbationModel {
    pub fn zero() -> Self {
        PerturbationModel {
            kind: PerturbationKind::Zero,
            h_bar: 0.0,
            t0: 0.0,
            seeds: SeedTree::new(0),
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.h_bar >= 0.0 && self.h_bar.is_finite()) {
            return Err(Error::Config(format!(
                "h_bar {} must be finite and >= 0",
                self.h_bar
            )));
        }
        match &self.kind {
            PerturbationKind::Constant { pattern: Some(v) }
            | PerturbationKind::Sinusoidal {
                pattern: Some(v), ..
            } => {
                if v.len() != p || v.iter().all(|x| *x == 0.0) {
                    return Err(Error::Config(format!(
                        "perturbation pattern must be a nonzero vector of length {p}"
                    )));
                }
            }
            PerturbationKind::RandomPiecewise { hold } if !(*hold > 0.0) => {
                return Err(Error::Config(format!("hold {hold} must be positive")));
            }
            _ => {}
        }
        Ok(())
    }

    fn direction(pattern: &Option<Vec<f64>>, dim: usize) -> DVector<f64> {
        let v = match pattern {
            Some(p) => DVector::from_fn(dim, |i, _| p[i % p.len()]),
            None => DVector::from_element(dim, 1.0),
        };
        let n = v.norm();
        v / n
    }

    /// `h̃(t)` for an error vector of length `dim`; never exceeds `h̄` in norm.
    pub fn sample(&self, t: f64, dim: usize) -> DVector<f64> {
        if self.h_bar == 0.0 || dim == 0 {
            return DVector::zeros(dim);
        }
        match &self.kind {
            PerturbationKind::Zero => DVector::zeros(dim),
            PerturbationKind::Constant { pattern } => Self::direction(pattern, dim) * self.h_bar,
            PerturbationKind::Sinusoidal { frequency, pattern } => {
                let s = (2.0 * std::f64::consts::PI * frequency * (t - self.t0)).sin();
                Self::direction(pattern, dim) * (self.h_bar * s)
            }
            PerturbationKind::RandomPiecewise { hold } => {
                let index = ((t - self.t0) / hold).floor().max(0.0) as u64;
                let mut rng = self.seeds.rng(Stream::Perturbation, index);
                let g = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
                let g: DVector<f64> = g;
                let radius = self.h_bar * rng.random::<f64>().powf(1.0 / dim as f64);
                let n = g.norm();
                if n == 0.0 {
                    DVector::zeros(dim)
                } else {
                    g * (radius / n)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Matrix-exponential propagation with exact convolution of the held forcing.
    #[default]
    Exact,
    /// Classical fixed-step fourth-order Runge–Kutta.
    Rk4,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimOptions {
    pub dt: f64,
    pub method: Method,
    /// Keep every `stride`-th grid point (segment ends are always kept).
    pub stride: usize,
    pub tail_fraction: f64,
    pub convergence_tol: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dt: DEFAULT_DT,
            method: Method::Exact,
            stride: 1,
            tail_fraction: DEFAULT_TAIL_FRACTION,
            convergence_tol: DEFAULT_CONVERGENCE_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub segment: usize,
    pub mode: ModeId,
    pub state: DVector<f64>,
    pub err: DVector<f64>,
}

impl Sample {
    pub fn n_agents(&self, p: usize) -> usize {
        self.state.len() / p - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub k: usize,
    pub t: f64,
    pub event: MigrationEvent,
    pub pre: Sample,
    pub post: Sample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub p: usize,
    pub t0: f64,
    pub tf: f64,
    pub samples: Vec<Sample>,
    pub events: Vec<EventRecord>,
    /// Time at which the state stopped being finite.
    pub diverged_at: Option<f64>,
    /// Largest `‖ε − Υ̃ξ‖ / (1 + ‖ξ‖)` over all samples.
    pub consistency: f64,
}

/// Everything needed to run one switched trajectory.
#[derive(Clone, Debug)]
pub struct SimulationSetup<'a> {
    pub dynamics: &'a AgentDynamics,
    pub rho: f64,
    pub modes: &'a BTreeMap<ModeId, AugmentedMode>,
    pub signal: &'a SwitchingSignal,
    /// Stacked `[ξ₀; ξ₁; …]` for the first mode.
    pub initial_state: DVector<f64>,
    pub perturbation: &'a PerturbationModel,
    pub options: SimOptions,
}

struct Propagator {
    e: DMatrix<f64>,
    gamma: DMatrix<f64>,
}

impl Propagator {
    /// `e^{Mh}` and `∫₀ʰ e^{Ms} ds` from one exponential of `[[M, I], [0, 0]]·h`.
    fn new(m: &DMatrix<f64>, h: f64) -> Self {
        let n = m.nrows();
        let mut big = DMatrix::zeros(2 * n, 2 * n);
        big.view_mut((0, 0), (n, n)).copy_from(&(m * h));
        big.view_mut((0, n), (n, n)).fill_with_identity();
        big.view_mut((0, n), (n, n)).scale_mut(h);
        let ex = linalg::expm(&big);
        Propagator {
            e: ex.view((0, 0), (n, n)).clone_owned(),
            gamma: ex.view((0, n), (n, n)).clone_owned(),
        }
    }

    fn step(&self, x: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
        &self.e * x + &self.gamma * f
    }
}

fn rk4_step(m: &DMatrix<f64>, x: &DVector<f64>, f: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = m * x + f;
    let k2 = m * (x + &k1 * (h / 2.0)) + f;
    let k3 = m * (x + &k2 * (h / 2.0)) + f;
    let k4 = m * (x + &k3 * h) + f;
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

enum Stepper {
    Exact {
        full: Propagator,
        last: Option<Propagator>,
    },
    Rk4(DMatrix<f64>),
}

impl Stepper {
    fn new(method: Method, m: DMatrix<f64>, dt: f64, last: Option<f64>) -> Self {
        match method {
            Method::Exact => Stepper::Exact {
                full: Propagator::new(&m, dt),
                last: last.map(|h| Propagator::new(&m, h)),
            },
            Method::Rk4 => Stepper::Rk4(m),
        }
    }

    fn step(&self, x: &DVector<f64>, f: &DVector<f64>, h: f64, is_last: bool) -> DVector<f64> {
        match self {
            Stepper::Exact { full, last } => match (is_last, last) {
                (true, Some(p)) => p.step(x, f),
                _ => full.step(x, f),
            },
            Stepper::Rk4(m) => rk4_step(m, x, f, h),
        }
    }
}

/// Step lengths covering `[a, b]`: full steps of `dt` plus a final partial step.
fn step_grid(a: f64, b: f64, dt: f64) -> (usize, Option<f64>) {
    let span = b - a;
    let full = (span / dt).floor();
    let rem = span - full * dt;
    if rem <= 1e-9 * dt {
        ((full as usize).max(1), None)
    } else {
        (full as usize + 1, Some(rem))
    }
}

fn padded_forcing(p: usize, h: &DVector<f64>) -> DVector<f64> {
    let mut f = DVector::zeros(p + h.len());
    f.rows_mut(p, h.len()).copy_from(h);
    f
}

pub fn simulate(setup: &SimulationSetup<'_>) -> Result<Trajectory> {
    let sig = setup.signal;
    let opts = &setup.options;
    let p = setup.dynamics.p();
    if !(opts.dt > 0.0 && opts.dt.is_finite()) || opts.stride == 0 {
        return Err(Error::Config(format!(
            "need dt > 0 and stride >= 1, got {} and {}",
            opts.dt, opts.stride
        )));
    }
    setup.perturbation.validate(p)?;
    let mode_of = |id: ModeId| {
        setup
            .modes
            .get(&id)
            .ok_or_else(|| Error::Config(format!("signal uses unknown mode {id}")))
    };
    let first = mode_of(sig.segments[0].mode)?;
    if setup.initial_state.len() != p * (first.n_agents() + 1) {
        return Err(Error::DimensionMismatch(format!(
            "initial state has length {}, mode {} needs {}",
            setup.initial_state.len(),
            first.id,
            p * (first.n_agents() + 1)
        )));
    }
    if !sig.events.is_empty() && sig.events.len() != sig.n_switches() {
        return Err(Error::Config("signal has a partial event list".into()));
    }

    let mut traj = Trajectory {
        p,
        t0: sig.t0,
        tf: sig.tf,
        samples: Vec::new(),
        events: Vec::new(),
        diverged_at: None,
        consistency: 0.0,
    };
    let mut state = setup.initial_state.clone();
    let mut err = errors_of(&state, p);

    for (i, seg) in sig.segments.iter().enumerate() {
        let mode = mode_of(seg.mode)?;
        let n = mode.n_agents();
        if i > 0 {
            let ev = match sig.events.get(i - 1) {
                Some(ev) => ev.clone(),
                None => {
                    let prev = mode_of(sig.segments[i - 1].mode)?;
                    if prev.n_agents() != n {
                        return Err(Error::Config(format!(
                            "switch {i} changes the agent count without a migration event"
                        )));
                    }
                    MigrationEvent::plain(prev.id, mode.id, n, n, vec![], vec![])
                }
            };
            let pre = traj
                .samples
                .last()
                .cloned()
                .expect("segment produced samples");
            let tm = build_transition_map(&ev, p)?;
            state = tm.apply_state_jump(&state, ev.phi_ind.as_ref())?;
            err = tm.apply_error_jump(&err, ev.phi_ind.as_ref())?;
            let post = Sample {
                t: seg.start,
                segment: i,
                mode: mode.id,
                state: state.clone(),
                err: err.clone(),
            };
            traj.samples.push(post.clone());
            traj.events.push(EventRecord {
                k: i,
                t: seg.start,
                event: ev,
                pre,
                post,
            });
        } else {
            traj.samples.push(Sample {
                t: seg.start,
                segment: 0,
                mode: mode.id,
                state: state.clone(),
                err: err.clone(),
            });
        }

        let t_end = sig.segment_end(i);
        let (steps, partial) = step_grid(seg.start, t_end, opts.dt);
        let m_state = state_matrix(setup.dynamics, mode, setup.rho);
        let m_err = closed_loop_matrix(setup.dynamics, &mode.z_matrix(), setup.rho);
        let s_state = Stepper::new(opts.method, m_state, opts.dt, partial);
        let s_err = Stepper::new(opts.method, m_err, opts.dt, partial);
        for k in 0..steps {
            let is_last = k + 1 == steps;
            let t_a = seg.start + k as f64 * opts.dt;
            let t_b = if is_last {
                t_end
            } else {
                seg.start + (k + 1) as f64 * opts.dt
            };
            let h = t_b - t_a;
            let forcing = setup.perturbation.sample(0.5 * (t_a + t_b), p * n);
            state = s_state.step(&state, &padded_forcing(p, &forcing), h, is_last);
            err = s_err.step(&err, &forcing, h, is_last);
            let finite = state
                .iter()
                .chain(err.iter())
                .all(|v| v.is_finite() && v.abs() < BLOW_UP);
            if !finite {
                traj.diverged_at = Some(t_b);
                return Ok(finish(traj, p));
            }
            if is_last || (k + 1) % opts.stride == 0 {
                traj.samples.push(Sample {
                    t: t_b,
                    segment: i,
                    mode: mode.id,
                    state: state.clone(),
                    err: err.clone(),
                });
            }
        }
    }
    Ok(finish(traj, p))
}

fn finish(mut traj: Trajectory, p: usize) -> Trajectory {
    traj.consistency = traj
        .samples
        .iter()
        .map(|s| {
            let n = s.n_agents(p);
            (&s.err - upsilon(n, p) * &s.state).norm() / (1.0 + s.state.norm())
        })
        .fold(0.0, f64::max);
    traj
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub dt: f64,
    pub method: Method,
    pub t0: f64,
    pub tf: f64,
    pub n_switches: usize,
    pub n_samples: usize,
    pub diverged_at: Option<f64>,
    pub tail_start: f64,
    /// `sup ‖ε̃(t)‖` over the final part of the horizon.
    pub tail_sup_error: f64,
    pub converged: bool,
    pub epsilon: Option<f64>,
    pub bound_respected: Option<bool>,
    pub max_error: f64,
    pub consistency: f64,
    /// Smallest `‖ε⁺ − Ξ̃ε⁻‖` over switching instants: the impulse beyond relabelling.
    pub min_event_jump: Option<f64>,
}

pub fn summarize(
    traj: &Trajectory,
    bundle: Option<&CertificateBundle>,
    options: &SimOptions,
    seed: u64,
) -> RunSummary {
    let tail_start = traj.tf - options.tail_fraction * (traj.tf - traj.t0);
    let tail_sup_error = traj
        .samples
        .iter()
        .filter(|s| s.t >= tail_start)
        .map(|s| s.err.norm())
        .fold(0.0, f64::max);
    let diverged = traj.diverged_at.is_some();
    let tail_sup_error = if diverged {
        f64::INFINITY
    } else {
        tail_sup_error
    };
    let epsilon = bundle.and_then(|b| b.epsilon);
    let min_event_jump = traj
        .events
        .iter()
        .map(|e| match build_transition_map(&e.event, traj.p) {
            Ok(map) => (&e.post.err - &map.xi_tilde * &e.pre.err).norm(),
            Err(_) => f64::NAN,
        })
        .reduce(f64::min);
    RunSummary {
        seed,
        dt: options.dt,
        method: options.method,
        t0: traj.t0,
        tf: traj.tf,
        n_switches: traj.events.len(),
        n_samples: traj.samples.len(),
        diverged_at: traj.diverged_at,
        tail_start,
        tail_sup_error,
        converged: !diverged && tail_sup_error < options.convergence_tol,
        epsilon,
        bound_respected: epsilon.map(|e| !diverged && tail_sup_error <= e),
        max_error: traj
            .samples
            .iter()
            .map(|s| s.err.norm())
            .fold(0.0, f64::max),
        consistency: traj.consistency,
        min_event_jump,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentDeviation {
    pub segment: usize,
    pub mode: ModeId,
    /// `max ‖x_exact − x_rk4‖ / max ‖x_exact‖` over the segment's samples.
    pub rel_deviation: f64,
}

/// Runs both integration routes and compares them segment by segment.
pub fn cross_check(setup: &SimulationSetup<'_>) -> Result<Vec<SegmentDeviation>> {
    let run = |method| {
        let mut s = setup.clone();
        s.options.method = method;
        simulate(&s)
    };
    let a = run(Method::Exact)?;
    let b = run(Method::Rk4)?;
    if a.samples.len() != b.samples.len() {
        return Err(Error::numeric("cross-check", "sample grids differ"));
    }
    let mut out: Vec<SegmentDeviation> = Vec::new();
    let mut acc: BTreeMap<usize, (ModeId, f64, f64)> = BTreeMap::new();
    for (x, y) in a.samples.iter().zip(&b.samples) {
        let entry = acc.entry(x.segment).or_insert((x.mode, 0.0, 0.0));
        let dev = (&x.state - &y.state).norm().max((&x.err - &y.err).norm());
        entry.1 = entry.1.max(dev);
        entry.2 = entry.2.max(x.state.norm()).max(x.err.norm());
    }
    for (segment, (mode, dev, scale)) in acc {
        out.push(SegmentDeviation {
            segment,
            mode,
            rel_deviation: if scale > 0.0 { dev / scale } else { dev },
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JumpCheck {
    pub k: usize,
    pub v_minus: f64,
    pub v_plus: f64,
    /// `μV⁻ + Θ̄`.
    pub bound: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovPoint {
    pub t: f64,
    pub v: f64,
    pub envelope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovTrace {
    pub points: Vec<LyapunovPoint>,
    /// Largest `(V − envelope)/envelope`, negative when V stays strictly below.
    pub max_rel_excess: f64,
    /// Sample times where the excess tops `tol`.
    pub violations: Vec<f64>,
    pub jumps: Vec<JumpCheck>,
}

/// Evaluates `V = √(εᵀP_σε)` along a trajectory against the envelope
/// `β + Ω_k + Ω̃_k`, where after `k` switches
/// `β = e^{max(k, N̂) ln μ + γ̃(t−t0)} V(t0)`,
/// `Ω_k = c̄ + Σ_{j=1..k} c̄ e^{j ln μ + γ̃(t − t_{k−j+1})}` and
/// `Ω̃_k = Σ_{j=1..k} Θ̄ e^{(j−1) ln μ + γ̃(t − t_{k−j+1})}`.
pub fn lyapunov_trace(
    traj: &Trajectory,
    bundle: &CertificateBundle,
    switch_times: &[f64],
    tol: f64,
) -> Result<LyapunovTrace> {
    let v_of = |s: &Sample| -> Result<f64> {
        let cert = bundle
            .mode(s.mode)
            .ok_or_else(|| Error::Config(format!("no certificate for mode {}", s.mode)))?;
        if cert.p.nrows() != s.err.len() {
            return Err(Error::DimensionMismatch(format!(
                "certificate of mode {} has size {}, error has {}",
                s.mode,
                cert.p.nrows(),
                s.err.len()
            )));
        }
        Ok(cert.lyapunov_value(&s.err))
    };
    let ln_mu = bundle.mu.ln();
    let g = bundle.gamma_tilde;
    let v0 = match traj.samples.first() {
        Some(s) => v_of(s)?,
        None => 0.0,
    };
    let mut points = Vec::with_capacity(traj.samples.len());
    let mut max_rel_excess = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    for s in &traj.samples {
        let k = s.segment;
        let dt0 = s.t - traj.t0;
        let beta = ((k as f64).max(bundle.n_hat) * ln_mu + g * dt0).exp() * v0;
        let mut omega = bundle.c_bar;
        let mut omega_tilde = 0.0;
        for j in 1..=k {
            let since = s.t - switch_times[k - j];
            omega += bundle.c_bar * (j as f64 * ln_mu + g * since).exp();
            omega_tilde += bundle.theta_bar * ((j - 1) as f64 * ln_mu + g * since).exp();
        }
        let envelope = beta + omega + omega_tilde;
        let v = v_of(s)?;
        let excess = if envelope > 0.0 {
            (v - envelope) / envelope
        } else if v > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        max_rel_excess = max_rel_excess.max(excess);
        if excess > tol {
            violations.push(s.t);
        }
        points.push(LyapunovPoint {
            t: s.t,
            v,
            envelope,
        });
    }
    let jumps = traj
        .events
        .iter()
        .map(|e| {
            let v_minus = v_of(&e.pre)?;
            let v_plus = v_of(&e.post)?;
            let bound = bundle.mu * v_minus + bundle.theta_bar;
            Ok(JumpCheck {
                k: e.k,
                v_minus,
                v_plus,
                bound,
                ok: v_plus <= bound * (1.0 + 1e-12) + 1e-15,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LyapunovTrace {
        points,
        max_rel_excess,
        violations,
        jumps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{reference_dynamics, reference_modes, REFERENCE_RHO};
    use crate::signed_graph::SignedDigraph;
    use crate::switching::Segment;

    fn scalar_setup_parts() -> (AgentDynamics, BTreeMap<ModeId, AugmentedMode>) {
        // one agent, A = 0, ρ = −1, leader link 1 → ε̇ = −ε + h
        let dynamics = AgentDynamics::new(DMatrix::zeros(1, 1)).unwrap();
        let g = SignedDigraph::new(1, []).unwrap();
        let mode = AugmentedMode::new(ModeId(1), g, vec![1.0]).unwrap();
        (dynamics, [(ModeId(1), mode)].into())
    }

    #[test]
    fn scalar_forced_decay_matches_closed_form() {
        let (dynamics, modes) = scalar_setup_parts();
        let sig = SwitchingSignal::new(
            0.0,
            1.0,
            vec![Segment {
                start: 0.0,
                mode: ModeId(1),
            }],
        )
        .unwrap();
        let pert = PerturbationModel {
            kind: PerturbationKind::Constant { pattern: None },
            h_bar: 1.0,
            ..PerturbationModel::zero()
        };
        for method in [Method::Exact, Method::Rk4] {
            let setup = SimulationSetup {
                dynamics: &dynamics,
                rho: -1.0,
                modes: &modes,
                signal: &sig,
                initial_state: DVector::zeros(2),
                perturbation: &pert,
                options: SimOptions {
                    method,
                    ..SimOptions::default()
                },
            };
            let traj = simulate(&setup).unwrap();
            let last = traj.samples.last().unwrap();
            assert_eq!(last.t, 1.0);
            assert!(
                (last.err[0] - (1.0 - (-1.0f64).exp())).abs() < 1e-12,
                "{method:?}"
            );
            assert!(traj.consistency < 1e-12);
        }
    }

    #[test]
    fn partial_final_step_lands_on_switch() {
        assert_eq!(step_grid(0.0, 1.0, 1e-3), (1000, None));
        let (n, last) = step_grid(0.0, 0.0105, 1e-3);
        assert_eq!(n, 11);
        assert!((last.unwrap() - 0.0005).abs() < 1e-12);
        assert_eq!(step_grid(0.0, 1e-4, 1e-3), (1, Some(1e-4)));
    }

    #[test]
    fn perturbations_respect_bound() {
        let seeds = SeedTree::new(4);
        let kinds = [
            PerturbationKind::Zero,
            PerturbationKind::Constant {
                pattern: Some(vec![1.0, -2.0]),
            },
            PerturbationKind::Sinusoidal {
                frequency: 0.7,
                pattern: None,
            },
            PerturbationKind::RandomPiecewise { hold: 0.05 },
        ];
        for kind in kinds {
            let m = PerturbationModel {
                kind,
                h_bar: 0.2,
                t0: 0.0,
                seeds,
            };
            let mut peak: f64 = 0.0;
            for i in 0..2000 {
                let h = m.sample(i as f64 * 0.0137, 8);
                peak = peak.max(h.norm());
            }
            assert!(peak <= 0.2 + 1e-12);
        }
        let m = PerturbationModel {
            kind: PerturbationKind::RandomPiecewise { hold: 0.05 },
            h_bar: 0.2,
            t0: 0.0,
            seeds,
        };
        assert_eq!(m.sample(0.011, 4), m.sample(0.049, 4));
        assert_ne!(m.sample(0.049, 4), m.sample(0.051, 4));
    }

    #[test]
    fn unstable_mode_grows_at_abscissa_rate() {
        // mode 3 alone, started on its dominant eigendirection
        let dynamics = reference_dynamics();
        let modes: BTreeMap<_, _> = reference_modes().into_iter().map(|m| (m.id, m)).collect();
        let m3 = &modes[&ModeId(3)];
        let a_tilde = closed_loop_matrix(&dynamics, &m3.z_matrix(), REFERENCE_RHO);
        // power iteration on e^{Ã} picks the dominant direction
        let e = linalg::expm(&a_tilde);
        let mut v = DVector::from_element(10, 1.0);
        for _ in 0..50 {
            v = &e * &v;
            v /= v.norm();
        }
        let mut x0 = DVector::zeros(12);
        x0.rows_mut(2, 10).copy_from(&v);
        let sig = SwitchingSignal::new(
            0.0,
            6.0,
            vec![Segment {
                start: 0.0,
                mode: ModeId(3),
            }],
        )
        .unwrap();
        let setup = SimulationSetup {
            dynamics: &dynamics,
            rho: REFERENCE_RHO,
            modes: &modes,
            signal: &sig,
            initial_state: x0,
            perturbation: &PerturbationModel::zero(),
            options: SimOptions::default(),
        };
        let traj = simulate(&setup).unwrap();
        let at = |t: f64| {
            traj.samples
                .iter()
                .find(|s| s.t >= t - 1e-9)
                .unwrap()
                .err
                .norm()
        };
        let rate = (at(6.0) / at(3.0)).ln() / 3.0;
        assert!((rate / 5.925 - 1.0).abs() < 0.05, "rate {rate}");
    }

    #[test]
    fn leader_follows_free_dynamics() {
        let dynamics = reference_dynamics();
        let modes: BTreeMap<_, _> = reference_modes().into_iter().map(|m| (m.id, m)).collect();
        let sig = SwitchingSignal::new(
            0.0,
            2.0,
            vec![
                Segment {
                    start: 0.0,
                    mode: ModeId(1),
                },
                Segment {
                    start: 0.7,
                    mode: ModeId(4),
                },
            ],
        )
        .unwrap();
        let sig = SwitchingSignal {
            events: vec![MigrationEvent::plain(
                ModeId(1),
                ModeId(4),
                4,
                3,
                vec![],
                vec![1],
            )],
            ..sig
        };
        let x0 = DVector::from_fn(10, |i, _| (i as f64 * 0.3).cos());
        let pert = PerturbationModel {
            kind: PerturbationKind::RandomPiecewise { hold: 0.05 },
            h_bar: 0.2,
            ..PerturbationModel::zero()
        };
        let setup = SimulationSetup {
            dynamics: &dynamics,
            rho: REFERENCE_RHO,
            modes: &modes,
            signal: &sig,
            initial_state: x0.clone(),
            perturbation: &pert,
            options: SimOptions::default(),
        };
        let traj = simulate(&setup).unwrap();
        for s in &traj.samples {
            let free = linalg::expm(&(dynamics.a() * s.t)) * x0.rows(0, 2);
            assert!((s.state.rows(0, 2) - free).norm() < 1e-9);
        }
        assert!(traj.consistency < 1e-9);
        assert_eq!(traj.events.len(), 1);
        assert_eq!(traj.events[0].pre.state.len(), 10);
        assert_eq!(traj.events[0].post.state.len(), 8);
    }

    #[test]
    fn single_stable_mode_stays_under_envelope() {
        use crate::certificate::{assemble_bundle, certify_modes, BundleInputs, MarginPolicy};
        use crate::mode_dynamics::{build_mode_matrix, DEFAULT_MAX_DIM};
        use crate::transition::ImpulseBounds;
        let dynamics = reference_dynamics();
        let modes: BTreeMap<_, _> = reference_modes().into_iter().map(|m| (m.id, m)).collect();
        let sig = SwitchingSignal::new(
            0.0,
            5.0,
            vec![Segment {
                start: 0.0,
                mode: ModeId(1),
            }],
        )
        .unwrap();
        let mms: Vec<_> = modes
            .values()
            .map(|m| build_mode_matrix(&dynamics, m, REFERENCE_RHO, DEFAULT_MAX_DIM).unwrap())
            .collect();
        let bundle = assemble_bundle(BundleInputs {
            certs: certify_modes(&mms, &MarginPolicy::default()).unwrap(),
            impulses: ImpulseBounds {
                phi_bar: 0.0,
                xi_breve_norm_max: 1.0,
            },
            h_bar: 0.2,
            signal: &sig,
            n_hat: 0.0,
            gamma_tilde: None,
        })
        .unwrap();
        let pert = PerturbationModel {
            kind: PerturbationKind::Sinusoidal {
                frequency: 1.3,
                pattern: None,
            },
            h_bar: 0.2,
            ..PerturbationModel::zero()
        };
        let setup = SimulationSetup {
            dynamics: &dynamics,
            rho: REFERENCE_RHO,
            modes: &modes,
            signal: &sig,
            initial_state: DVector::from_fn(10, |i, _| i as f64 - 4.0),
            perturbation: &pert,
            options: SimOptions::default(),
        };
        let traj = simulate(&setup).unwrap();
        let trace = lyapunov_trace(&traj, &bundle, &[], 1e-6).unwrap();
        assert!(trace.violations.is_empty(), "{}", trace.max_rel_excess);
        let summary = summarize(&traj, Some(&bundle), &setup.options, 0);
        assert_eq!(summary.bound_respected, Some(true));
        assert!(summary.diverged_at.is_none());
    }

    #[test]
    fn divergence_is_reported() {
        let dynamics = AgentDynamics::new(DMatrix::from_element(1, 1, 2000.0)).unwrap();
        let g = SignedDigraph::new(1, []).unwrap();
        let modes: BTreeMap<_, _> = [(
            ModeId(1),
            AugmentedMode::new(ModeId(1), g, vec![1.0]).unwrap(),
        )]
        .into();
        let sig = SwitchingSignal::new(
            0.0,
            1.0,
            vec![Segment {
                start: 0.0,
                mode: ModeId(1),
            }],
        )
        .unwrap();
        let setup = SimulationSetup {
            dynamics: &dynamics,
            rho: -1.0,
            modes: &modes,
            signal: &sig,
            initial_state: DVector::from_element(2, 1.0),
            perturbation: &PerturbationModel::zero(),
            options: SimOptions::default(),
        };
        let traj = simulate(&setup).unwrap();
        assert!(traj.diverged_at.is_some());
        let s = summarize(&traj, None, &setup.options, 0);
        assert!(!s.converged && s.tail_sup_error.is_infinite());
    }
}
