//! Per-mode Lyapunov certificates and the global ultimate bound.
//!
//! For each mode a rate `γ̃_φ > α(Ã_φ)` is chosen and `P_φ` solves
//! `(Ã−γ̃I)ᵀP + P(Ã−γ̃I) = −I`, which gives `ÃᵀP + PÃ ≤ 2γ̃_φ P`.
//! The mode constants are then reduced to the jump gain `μ`, the flow and jump
//! perturbation levels, and the ultimate tracking-error bound `ε`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mode_dynamics::ModeMatrix;
use crate::signed_graph::ModeId;
use crate::switching::{piecewise_adt, SwitchingBudget, SwitchingSignal};
use crate::transition::ImpulseBounds;

/// Relative tolerance on the certificate inequality.
pub const CERTIFICATE_TOL: f64 = 1e-8;

/// Fraction of `|α|` kept as decay when the additive margin would cross zero.
pub const STABLE_CLAMP: f64 = 0.1;

#[derive(Clone, Debug, Serialize)]
pub struct ModeCertificate {
    pub mode_id: ModeId,
    pub alpha: f64,
    pub stable: bool,
    pub gamma_phi: f64,
    #[serde(skip)]
    pub p: DMatrix<f64>,
    pub p_min: f64,
    pub p_max: f64,
    /// `λ_max(ÃᵀP + PÃ − 2γ̃P)`.
    pub residual: f64,
}

impl ModeCertificate {
    /// `√(xᵀPx)`.
    pub fn lyapunov_value(&self, x: &nalgebra::DVector<f64>) -> f64 {
        x.dot(&(&self.p * x)).max(0.0).sqrt()
    }
}

pub fn default_gamma_margin(alpha: f64) -> f64 {
    0.05 * (1.0 + alpha.abs())
}

/// Rate `α + margin`, pulled back to `0.9α` for stable modes it would destabilise.
pub fn gamma_from_margin(alpha: f64, stable: bool, margin: f64) -> f64 {
    let gamma = alpha + margin;
    if stable && gamma >= 0.0 {
        alpha * (1.0 - STABLE_CLAMP)
    } else {
        gamma
    }
}

pub fn solve_mode_certificate(mm: &ModeMatrix, gamma_margin: f64) -> Result<ModeCertificate> {
    if !(gamma_margin > 0.0 && gamma_margin.is_finite()) {
        return Err(Error::Certificate {
            mode: mm.mode_id,
            reason: format!("rate margin must be positive, got {gamma_margin}"),
        });
    }
    certificate_with_rate(mm, gamma_from_margin(mm.alpha, mm.stable, gamma_margin))
}

/// Certificate for an explicitly chosen rate `γ̃_φ`.
pub fn certificate_with_rate(mm: &ModeMatrix, gamma: f64) -> Result<ModeCertificate> {
    let fail = |reason: String| Error::Certificate {
        mode: mm.mode_id,
        reason,
    };
    if !(gamma > mm.alpha) {
        return Err(fail(format!(
            "rate {gamma} does not exceed the spectral abscissa {}",
            mm.alpha
        )));
    }
    if mm.stable && gamma >= 0.0 {
        return Err(fail(format!(
            "stable mode needs a negative rate, got {gamma}"
        )));
    }
    let n = mm.dim();
    let shifted = &mm.a_tilde - DMatrix::identity(n, n) * gamma;
    let p = linalg::solve_lyapunov(&shifted, &(-DMatrix::identity(n, n))).map_err(|e| match e {
        Error::Numeric { reason, .. } => Error::numeric(format!("mode {}", mm.mode_id), reason),
        other => other,
    })?;
    let p = (&p + p.transpose()) * 0.5;
    let (p_min, p_max) = linalg::symmetric_extremes(&p);
    if !(p_min > 0.0) {
        return Err(fail(format!(
            "Lyapunov matrix is not positive definite (λ_min = {p_min})"
        )));
    }
    let lhs = mm.a_tilde.transpose() * &p + &p * &mm.a_tilde - &p * (2.0 * gamma);
    let (_, residual) = linalg::symmetric_extremes(&((&lhs + lhs.transpose()) * 0.5));
    if residual > CERTIFICATE_TOL * p_max {
        return Err(Error::numeric(
            format!("mode {}", mm.mode_id),
            format!("certificate inequality violated by {residual}"),
        ));
    }
    Ok(ModeCertificate {
        mode_id: mm.mode_id,
        alpha: mm.alpha,
        stable: mm.stable,
        gamma_phi: gamma,
        p,
        p_min,
        p_max,
        residual,
    })
}

/// Rates for every mode: per-mode margins override the class margins, which
/// override the default `0.05(1+|α|)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MarginPolicy {
    pub stable: Option<f64>,
    pub unstable: Option<f64>,
    pub per_mode: BTreeMap<ModeId, f64>,
}

impl MarginPolicy {
    pub fn margin_for(&self, mm: &ModeMatrix) -> f64 {
        if let Some(m) = self.per_mode.get(&mm.mode_id) {
            return *m;
        }
        let class = if mm.stable {
            self.stable
        } else {
            self.unstable
        };
        class.unwrap_or_else(|| default_gamma_margin(mm.alpha))
    }
}

pub fn certify_modes(modes: &[ModeMatrix], policy: &MarginPolicy) -> Result<Vec<ModeCertificate>> {
    modes
        .iter()
        .map(|mm| solve_mode_certificate(mm, policy.margin_for(mm)))
        .collect()
}

pub fn stable_set(certs: &[ModeCertificate]) -> BTreeSet<ModeId> {
    certs
        .iter()
        .filter(|c| c.stable)
        .map(|c| c.mode_id)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GammaAggregates {
    pub gamma_bar_s: f64,
    /// Zero when every mode is stable; then the ratio condition holds trivially.
    pub gamma_bar_u: f64,
    pub gamma_tilde_default: f64,
}

pub fn gamma_aggregates(
    certs: &[ModeCertificate],
    stable_set: &BTreeSet<ModeId>,
) -> Result<GammaAggregates> {
    let (stable, unstable): (Vec<_>, Vec<_>) =
        certs.iter().partition(|c| stable_set.contains(&c.mode_id));
    let gamma_bar_s = stable
        .iter()
        .map(|c| c.gamma_phi)
        .reduce(f64::max)
        .ok_or_else(|| Error::AssumptionViolation("no stable mode".into()))?;
    let gamma_bar_u = unstable.iter().map(|c| c.gamma_phi).fold(0.0, f64::max);
    Ok(GammaAggregates {
        gamma_bar_s,
        gamma_bar_u,
        gamma_tilde_default: gamma_bar_s / 2.0,
    })
}

pub fn select_gamma_tilde(agg: &GammaAggregates, requested: Option<f64>) -> Result<f64> {
    match requested {
        None => Ok(agg.gamma_tilde_default),
        Some(g) if g > agg.gamma_bar_s && g < 0.0 => Ok(g),
        Some(g) => Err(Error::OutOfRange(format!(
            "gamma_tilde {g} outside ({}, 0)",
            agg.gamma_bar_s
        ))),
    }
}

/// `(1 − μ^k)/(1 − μ)`, with the limit `k` at `μ = 1`.
pub fn geometric_sum(mu: f64, k: f64) -> f64 {
    if (mu - 1.0).abs() < 1e-12 {
        k
    } else {
        (1.0 - mu.powf(k)) / (1.0 - mu)
    }
}

/// `(1 − e^{ςn})/(1 − e^ς)`, with the limit `n` at `ς = 0`.
fn tail_sum(varsigma: f64, n: f64) -> f64 {
    if n <= 0.0 {
        0.0
    } else if varsigma.abs() < 1e-12 {
        n
    } else {
        (1.0 - (varsigma * n).exp()) / (1.0 - varsigma.exp())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Bounded,
    /// `ς̄ ≥ 0`: the geometric tail diverges.
    Unbounded,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateBundle {
    pub modes: Vec<ModeCertificate>,
    pub p_under: f64,
    pub p_over: f64,
    pub xi_breve_norm_max: f64,
    pub mu: f64,
    pub h_bar: f64,
    pub phi_bar: f64,
    pub vartheta_bar: f64,
    pub theta_bar: f64,
    pub c_bar: f64,
    pub varsigma_bar: f64,
    pub n_hat: f64,
    pub gamma_tilde: f64,
    pub gamma_bar_s: f64,
    pub gamma_bar_u: f64,
    pub ratio_lower_bound: f64,
    pub adt_lower_bound: f64,
    pub status: BoundStatus,
    /// Ultimate bound on the tracking error; absent when unbounded.
    pub epsilon: Option<f64>,
}

impl CertificateBundle {
    pub fn budget(&self) -> SwitchingBudget {
        SwitchingBudget {
            n_hat: self.n_hat,
            gamma_tilde: self.gamma_tilde,
            gamma_bar_s: self.gamma_bar_s,
            gamma_bar_u: self.gamma_bar_u,
            mu: self.mu,
        }
    }

    pub fn epsilon(&self) -> Result<f64> {
        self.epsilon.ok_or_else(|| {
            Error::UnboundedCertificate(format!(
                "max_j(τ_j γ̃ + ln μ) = {} is not negative",
                self.varsigma_bar
            ))
        })
    }

    pub fn mode(&self, id: ModeId) -> Option<&ModeCertificate> {
        self.modes.iter().find(|c| c.mode_id == id)
    }

    /// Bound on `‖ε̃‖` after `k` switches, from the partial geometric sums.
    ///
    /// Unlike [`CertificateBundle::epsilon`] it exists for any `ς̄`, and it
    /// increases to the ultimate bound as `k → ∞` when `ς̄ < 0`.
    pub fn finite_switch_bound(&self, k: usize) -> f64 {
        let k = k as f64;
        let n_hat = self.n_hat;
        let (head_c, head_theta, tail) = if k <= n_hat {
            (
                geometric_sum(self.mu, k + 1.0),
                geometric_sum(self.mu, k),
                0.0,
            )
        } else {
            (
                geometric_sum(self.mu, n_hat + 1.0),
                geometric_sum(self.mu, n_hat),
                tail_sum(self.varsigma_bar, k - n_hat),
            )
        };
        let iota = self.c_bar * (head_c + self.mu.powf(n_hat + 1.0) * tail)
            + self.theta_bar * (head_theta + self.mu.powf(n_hat) * tail);
        iota / self.p_under.sqrt()
    }
}

/// Ultimate bound `ε`; `None` when `ς̄ ≥ 0`, except that without persistent
/// inputs (`c̄ = Θ̄ = 0`) it is zero.
pub fn ultimate_bound(
    p_under: f64,
    mu: f64,
    c_bar: f64,
    theta_bar: f64,
    n_hat: f64,
    varsigma_bar: f64,
) -> Option<f64> {
    if c_bar == 0.0 && theta_bar == 0.0 {
        return Some(0.0);
    }
    if varsigma_bar >= 0.0 {
        return None;
    }
    let tail = 1.0 / (1.0 - varsigma_bar.exp());
    let iota = c_bar * (geometric_sum(mu, n_hat + 1.0) + mu.powf(n_hat + 1.0) * tail)
        + theta_bar * (geometric_sum(mu, n_hat) + mu.powf(n_hat) * tail);
    Some(iota / p_under.sqrt())
}

/// `max_j (τ(t_j, t_f) γ̃ + ln μ)` over `j ∈ {0..N(t0,tf)}`; suffixes without
/// enough switches (`τ = ∞`) contribute nothing.
pub fn varsigma_bar(sig: &SwitchingSignal, n_hat: f64, gamma_tilde: f64, mu: f64) -> f64 {
    (0..=sig.n_switches())
        .map(|j| piecewise_adt(sig, n_hat, j))
        .filter(|tau| tau.is_finite())
        .map(|tau| tau * gamma_tilde + mu.ln())
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Debug)]
pub struct BundleInputs<'a> {
    pub certs: Vec<ModeCertificate>,
    pub impulses: ImpulseBounds,
    pub h_bar: f64,
    pub signal: &'a SwitchingSignal,
    pub n_hat: f64,
    pub gamma_tilde: Option<f64>,
}

/// Dwell-time constants from certificates and impulse bounds alone, before any
/// signal is fixed.
pub fn switching_budget(
    certs: &[ModeCertificate],
    impulses: &ImpulseBounds,
    n_hat: f64,
    gamma_tilde: Option<f64>,
) -> Result<SwitchingBudget> {
    let agg = gamma_aggregates(certs, &stable_set(certs))?;
    let gamma_tilde = select_gamma_tilde(&agg, gamma_tilde)?;
    let (p_under, p_over) = p_extremes(certs);
    let budget = SwitchingBudget {
        n_hat,
        gamma_tilde,
        gamma_bar_s: agg.gamma_bar_s,
        gamma_bar_u: agg.gamma_bar_u,
        mu: (p_over / p_under).sqrt() * impulses.xi_breve_norm_max.max(1.0),
    };
    budget.validate()?;
    Ok(budget)
}

fn p_extremes(certs: &[ModeCertificate]) -> (f64, f64) {
    let p_under = certs.iter().map(|c| c.p_min).fold(f64::INFINITY, f64::min);
    let p_over = certs.iter().map(|c| c.p_max).fold(0.0, f64::max);
    (p_under, p_over)
}

pub fn assemble_bundle(inputs: BundleInputs<'_>) -> Result<CertificateBundle> {
    let BundleInputs {
        certs,
        impulses,
        h_bar,
        signal,
        n_hat,
        gamma_tilde,
    } = inputs;
    if !(h_bar >= 0.0 && n_hat >= 0.0 && impulses.phi_bar >= 0.0) {
        return Err(Error::OutOfRange(format!(
            "need h_bar >= 0, N_hat >= 0, Phi_bar >= 0; got {h_bar}, {n_hat}, {}",
            impulses.phi_bar
        )));
    }
    for m in signal.modes() {
        if !certs.iter().any(|c| c.mode_id == m) {
            return Err(Error::Config(format!("signal uses uncertified mode {m}")));
        }
    }
    let budget = switching_budget(&certs, &impulses, n_hat, gamma_tilde)?;
    let (p_under, p_over) = p_extremes(&certs);
    let (mu, gamma_tilde) = (budget.mu, budget.gamma_tilde);
    let vartheta_bar = h_bar * p_over / p_under.sqrt();
    let theta_bar = impulses.phi_bar * p_over.sqrt();
    let c_bar = vartheta_bar / -gamma_tilde;
    let varsigma = varsigma_bar(signal, n_hat, gamma_tilde, mu);
    let epsilon = ultimate_bound(p_under, mu, c_bar, theta_bar, n_hat, varsigma);
    Ok(CertificateBundle {
        modes: certs,
        p_under,
        p_over,
        xi_breve_norm_max: impulses.xi_breve_norm_max,
        mu,
        h_bar,
        phi_bar: impulses.phi_bar,
        vartheta_bar,
        theta_bar,
        c_bar,
        varsigma_bar: varsigma,
        n_hat,
        gamma_tilde,
        gamma_bar_s: budget.gamma_bar_s,
        gamma_bar_u: budget.gamma_bar_u,
        ratio_lower_bound: budget.ratio_lower_bound(),
        adt_lower_bound: budget.adt_lower_bound(),
        status: if epsilon.is_some() {
            BoundStatus::Bounded
        } else {
            BoundStatus::Unbounded
        },
        epsilon,
    })
}

/// Reference values for the two switching lower bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub ratio: f64,
    pub adt: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Calibration {
    pub target: CalibrationTarget,
    pub stable_margin: f64,
    pub unstable_margin: f64,
    pub gamma_tilde: f64,
    pub gamma_bar_s: f64,
    pub gamma_bar_u: f64,
    pub mu: f64,
    pub ratio_lower_bound: f64,
    pub adt_lower_bound: f64,
    pub ratio_rel_err: f64,
    pub adt_rel_err: f64,
}

impl Calibration {
    pub fn max_rel_err(&self) -> f64 {
        self.ratio_rel_err.max(self.adt_rel_err)
    }

    pub fn policy(&self) -> MarginPolicy {
        MarginPolicy {
            stable: Some(self.stable_margin),
            unstable: Some(self.unstable_margin),
            per_mode: BTreeMap::new(),
        }
    }
}

struct Aggregate {
    gamma_bar_s: f64,
    gamma_bar_u: f64,
    ln_mu: f64,
}

fn aggregate(modes: &[ModeMatrix], policy: &MarginPolicy, xi_norm: f64) -> Option<Aggregate> {
    let certs = certify_modes(modes, policy).ok()?;
    let agg = gamma_aggregates(&certs, &stable_set(&certs)).ok()?;
    let (p_under, p_over) = p_extremes(&certs);
    Some(Aggregate {
        gamma_bar_s: agg.gamma_bar_s,
        gamma_bar_u: agg.gamma_bar_u,
        ln_mu: 0.5 * (p_over / p_under).ln() + xi_norm.max(1.0).ln(),
    })
}

/// Chooses `γ̃ ∈ (γ̄ₛ, 0)` minimising the larger relative deviation. The ratio
/// bound decreases and the dwell bound increases with `γ̃`, so the objective is
/// unimodal.
fn best_gamma_tilde(a: &Aggregate, target: CalibrationTarget) -> (f64, f64, f64) {
    let eval = |g: f64| {
        let ratio = -(a.gamma_bar_u - g) / (a.gamma_bar_s - g);
        let adt = -a.ln_mu / g;
        (ratio, adt)
    };
    let cost = |g: f64| {
        let (r, d) = eval(g);
        ((r / target.ratio - 1.0).abs()).max((d / target.adt - 1.0).abs())
    };
    let (mut lo, mut hi) = (a.gamma_bar_s, 0.0);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if cost(m1) <= cost(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let g = 0.5 * (lo + hi);
    let (r, d) = eval(g);
    (g, r, d)
}

/// Searches class-wide rate margins and `γ̃` so that the ratio and dwell lower
/// bounds approach `target`.
pub fn calibrate(
    modes: &[ModeMatrix],
    xi_norm: f64,
    target: CalibrationTarget,
) -> Result<Calibration> {
    let alpha_s = modes
        .iter()
        .filter(|m| m.stable)
        .map(|m| m.alpha)
        .fold(f64::NEG_INFINITY, f64::max);
    if alpha_s == f64::NEG_INFINITY {
        return Err(Error::AssumptionViolation(
            "no stable mode to calibrate".into(),
        ));
    }
    if !(target.ratio > 0.0 && target.adt > 0.0) {
        return Err(Error::OutOfRange(format!(
            "calibration targets must be positive: {target:?}"
        )));
    }
    let evaluate = |ds: f64, du: f64| -> Option<Calibration> {
        let policy = MarginPolicy {
            stable: Some(ds),
            unstable: Some(du),
            per_mode: BTreeMap::new(),
        };
        let a = aggregate(modes, &policy, xi_norm)?;
        let (g, r, d) = best_gamma_tilde(&a, target);
        Some(Calibration {
            target,
            stable_margin: ds,
            unstable_margin: du,
            gamma_tilde: g,
            gamma_bar_s: a.gamma_bar_s,
            gamma_bar_u: a.gamma_bar_u,
            mu: a.ln_mu.exp(),
            ratio_lower_bound: r,
            adt_lower_bound: d,
            ratio_rel_err: (r / target.ratio - 1.0).abs(),
            adt_rel_err: (d / target.adt - 1.0).abs(),
        })
    };
    let better = |best: Option<Calibration>, c: Option<Calibration>| match (best, c) {
        (Some(b), Some(c)) if c.max_rel_err() < b.max_rel_err() => Some(c),
        (None, c) => c,
        (b, _) => b,
    };
    // stable margins as fractions of |α|, unstable margins on a log scale
    let stable_steps = 40;
    let unstable_steps = 32;
    let ds_of = |f: f64| -alpha_s * f;
    let du_of = |e: f64| 10f64.powf(e);
    let mut best = None;
    for i in 1..stable_steps {
        for k in 0..=unstable_steps {
            let f = i as f64 / stable_steps as f64;
            let e = -2.0 + 3.0 * k as f64 / unstable_steps as f64;
            best = better(best, evaluate(ds_of(f), du_of(e)));
        }
    }
    let coarse = best
        .clone()
        .ok_or_else(|| Error::numeric("calibration", "no admissible margin pair"))?;
    let f0 = coarse.stable_margin / -alpha_s;
    let e0 = coarse.unstable_margin.log10();
    let (df, de) = (1.0 / stable_steps as f64, 3.0 / unstable_steps as f64);
    for i in -10..=10 {
        for k in -10..=10 {
            let f = f0 + df * i as f64 / 10.0;
            if !(f > 0.0 && f < 1.0) {
                continue;
            }
            best = better(best, evaluate(ds_of(f), du_of(e0 + de * k as f64 / 10.0)));
        }
    }
    Ok(best.unwrap())
}
