//! Switching signals, suffix dwell-time accounting and signal generation.
//!
//! Switch `j ≥ 1` happens at `t_j`, the start of segment `j`; `t_0` is the
//! start of the horizon. `N(t_j, t_f)` counts switches in `(t_j, t_f]`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeedTree, Stream};
use crate::signed_graph::ModeId;
use crate::transition::{EventTemplate, MigrationEvent};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(rename = "t")]
    pub start: f64,
    pub mode: ModeId,
}

/// Right-continuous piecewise-constant mode signal on `[t0, tf]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchingSignal {
    pub t0: f64,
    pub tf: f64,
    pub segments: Vec<Segment>,
    /// One event per switch; `events[k - 1]` belongs to switch `k`.
    pub events: Vec<MigrationEvent>,
}

impl SwitchingSignal {
    /// Signal without migration data; jumps are treated as identity relabelings.
    pub fn new(t0: f64, tf: f64, segments: Vec<Segment>) -> Result<Self> {
        let sig = SwitchingSignal {
            t0,
            tf,
            segments,
            events: Vec::new(),
        };
        sig.validate_times()?;
        Ok(sig)
    }

    pub fn with_events(
        t0: f64,
        tf: f64,
        segments: Vec<Segment>,
        events: Vec<MigrationEvent>,
    ) -> Result<Self> {
        let sig = SwitchingSignal {
            t0,
            tf,
            segments,
            events,
        };
        sig.validate_times()?;
        if sig.events.len() != sig.n_switches() {
            return Err(Error::Config(format!(
                "{} switches but {} migration events",
                sig.n_switches(),
                sig.events.len()
            )));
        }
        for (k, ev) in sig.events.iter().enumerate() {
            let (before, after) = (sig.segments[k].mode, sig.segments[k + 1].mode);
            if ev.mode_before != before || ev.mode_after != after {
                return Err(Error::Config(format!(
                    "switch {} goes {before}->{after} but its event is {}->{}",
                    k + 1,
                    ev.mode_before,
                    ev.mode_after
                )));
            }
        }
        Ok(sig)
    }

    fn validate_times(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.tf.is_finite() && self.t0 < self.tf) {
            return Err(Error::Config(format!(
                "horizon [{}, {}] is empty or not finite",
                self.t0, self.tf
            )));
        }
        let first = self
            .segments
            .first()
            .ok_or_else(|| Error::Config("switching signal has no segments".into()))?;
        if first.start != self.t0 {
            return Err(Error::Config(format!(
                "first segment starts at {} instead of t0 = {}",
                first.start, self.t0
            )));
        }
        if self.segments.windows(2).any(|w| !(w[0].start < w[1].start)) {
            return Err(Error::Config(
                "segment start times must be strictly increasing".into(),
            ));
        }
        if self.segments.last().unwrap().start >= self.tf {
            return Err(Error::Config("last segment starts at or after tf".into()));
        }
        Ok(())
    }

    pub fn n_switches(&self) -> usize {
        self.segments.len() - 1
    }

    /// `t_j`, with `t_0` the horizon start.
    pub fn switch_time(&self, j: usize) -> f64 {
        if j == 0 {
            self.t0
        } else {
            self.segments[j].start
        }
    }

    pub fn segment_end(&self, i: usize) -> f64 {
        self.segments.get(i + 1).map_or(self.tf, |s| s.start)
    }

    /// Mode active at `t` (the new mode at a switching instant).
    pub fn mode_at(&self, t: f64) -> ModeId {
        let i = self.segments.partition_point(|s| s.start <= t);
        self.segments[i.saturating_sub(1)].mode
    }

    /// `N(t_j, t_f)`.
    pub fn switches_after(&self, j: usize) -> usize {
        self.n_switches() - j
    }

    pub fn modes(&self) -> BTreeSet<ModeId> {
        self.segments.iter().map(|s| s.mode).collect()
    }
}

/// Total stable and unstable activation time on `[from, tf]`.
pub fn activation_times(
    sig: &SwitchingSignal,
    stable_set: &BTreeSet<ModeId>,
    from: f64,
) -> Result<(f64, f64)> {
    if !(from >= sig.t0 && from <= sig.tf) {
        return Err(Error::OutOfRange(format!(
            "activation window start {from} outside [{}, {}]",
            sig.t0, sig.tf
        )));
    }
    let (mut ts, mut tu) = (0.0, 0.0);
    for (i, seg) in sig.segments.iter().enumerate() {
        let len = (sig.segment_end(i) - seg.start.max(from)).max(0.0);
        if stable_set.contains(&seg.mode) {
            ts += len;
        } else {
            tu += len;
        }
    }
    Ok((ts, tu))
}

/// `τ(t_j, t_f)`: largest τ with `N(t_j, t_f) ≤ N̂ + (t_f − t_j)/τ`.
pub fn piecewise_adt(sig: &SwitchingSignal, n_hat: f64, j: usize) -> f64 {
    let n = sig.switches_after(j) as f64;
    if n > n_hat {
        (sig.tf - sig.switch_time(j)) / (n - n_hat)
    } else {
        f64::INFINITY
    }
}

/// Constants entering the dwell-time conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SwitchingBudget {
    pub n_hat: f64,
    pub gamma_tilde: f64,
    pub gamma_bar_s: f64,
    pub gamma_bar_u: f64,
    pub mu: f64,
}

impl SwitchingBudget {
    pub fn validate(&self) -> Result<()> {
        let b = self;
        if !(b.gamma_bar_s < b.gamma_tilde && b.gamma_tilde < 0.0) {
            return Err(Error::OutOfRange(format!(
                "gamma_tilde {} must lie in ({}, 0)",
                b.gamma_tilde, b.gamma_bar_s
            )));
        }
        if b.gamma_bar_u < 0.0 {
            return Err(Error::OutOfRange(format!(
                "unstable rate bound {} is negative",
                b.gamma_bar_u
            )));
        }
        if !(b.mu >= 1.0) || !(b.n_hat >= 0.0) {
            return Err(Error::OutOfRange(format!(
                "need mu >= 1 and N_hat >= 0, got {} and {}",
                b.mu, b.n_hat
            )));
        }
        Ok(())
    }

    /// Minimal stable-to-unstable activation ratio `-(γ̄ᵤ−γ̃)/(γ̄ₛ−γ̃)`.
    pub fn ratio_lower_bound(&self) -> f64 {
        -(self.gamma_bar_u - self.gamma_tilde) / (self.gamma_bar_s - self.gamma_tilde)
    }

    /// Minimal piecewise ADT `-ln μ / γ̃`.
    pub fn adt_lower_bound(&self) -> f64 {
        -self.mu.ln() / self.gamma_tilde
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuffixSelection {
    /// Every `j ∈ {0..N(t0,tf)}`.
    #[default]
    All,
    /// Only `j = 0`, sufficient for the asymptotic case.
    First,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuffixCheck {
    pub j: usize,
    pub t_j: f64,
    pub t_s: f64,
    pub t_u: f64,
    pub switches: usize,
    /// `-(T_s(γ̄ₛ−γ̃) + T_u(γ̄ᵤ−γ̃))`; non-negative when the ratio condition holds.
    pub ratio_slack: f64,
    pub adt: f64,
    /// `τ + ln μ / γ̃`; non-negative when the dwell condition holds.
    pub adt_slack: f64,
}

impl SuffixCheck {
    pub fn ok(&self) -> bool {
        self.ratio_slack >= 0.0 && self.adt_slack >= 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub ratio_lower_bound: f64,
    pub adt_lower_bound: f64,
    /// Suffix with the smallest ratio slack.
    pub worst_j_ratio: usize,
    /// Suffix with the smallest dwell slack.
    pub worst_j_adt: usize,
    pub min_ratio_slack: f64,
    pub min_adt_slack: f64,
    pub suffixes: Vec<SuffixCheck>,
}

pub fn validate_switching_conditions(
    sig: &SwitchingSignal,
    budget: &SwitchingBudget,
    stable_set: &BTreeSet<ModeId>,
    selection: SuffixSelection,
) -> ValidationReport {
    let last = match selection {
        SuffixSelection::All => sig.n_switches(),
        SuffixSelection::First => 0,
    };
    let adt_lb = budget.adt_lower_bound();
    let suffixes: Vec<SuffixCheck> = (0..=last)
        .map(|j| {
            let t_j = sig.switch_time(j);
            let (t_s, t_u) = activation_times(sig, stable_set, t_j).expect("t_j within horizon");
            let ratio_slack = -(t_s * (budget.gamma_bar_s - budget.gamma_tilde)
                + t_u * (budget.gamma_bar_u - budget.gamma_tilde));
            let adt = piecewise_adt(sig, budget.n_hat, j);
            SuffixCheck {
                j,
                t_j,
                t_s,
                t_u,
                switches: sig.switches_after(j),
                ratio_slack,
                adt,
                adt_slack: adt - adt_lb,
            }
        })
        .collect();
    let argmin = |f: fn(&SuffixCheck) -> f64| {
        suffixes
            .iter()
            .min_by(|a, b| f(a).total_cmp(&f(b)))
            .map(|s| (s.j, f(s)))
            .unwrap()
    };
    let (worst_j_ratio, min_ratio_slack) = argmin(|s| s.ratio_slack);
    let (worst_j_adt, min_adt_slack) = argmin(|s| s.adt_slack);
    ValidationReport {
        ok: suffixes.iter().all(SuffixCheck::ok),
        ratio_lower_bound: budget.ratio_lower_bound(),
        adt_lower_bound: adt_lb,
        worst_j_ratio,
        worst_j_adt,
        min_ratio_slack,
        min_adt_slack,
        suffixes,
    }
}

/// Builds the events of a mode sequence from an event table.
///
/// Pairs missing from the table are allowed only between equally sized modes,
/// where they become identity relabelings.
pub fn attach_events(
    segments: &[Segment],
    table: &[EventTemplate],
    sizes: &BTreeMap<ModeId, usize>,
    p: usize,
    seeds: &SeedTree,
) -> Result<Vec<MigrationEvent>> {
    let size = |m: ModeId| {
        sizes
            .get(&m)
            .copied()
            .ok_or_else(|| Error::Config(format!("signal uses unknown mode {m}")))
    };
    for s in segments {
        size(s.mode)?;
    }
    segments
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let (from, to) = (w[0].mode, w[1].mode);
            let (n_before, n_after) = (size(from)?, size(to)?);
            let fallback;
            let template = match table.iter().find(|t| t.from == from && t.to == to) {
                Some(t) => t,
                None if n_before == n_after => {
                    fallback = EventTemplate::relabel(from, to);
                    &fallback
                }
                None => {
                    return Err(Error::Config(format!(
                        "no migration event for {from}->{to} ({n_before} -> {n_after} agents)"
                    )))
                }
            };
            template.instantiate(k + 1, n_before, n_after, p, seeds)
        })
        .collect()
}

/// Request for a signal that meets given ratio and dwell lower bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(default)]
    pub t0: f64,
    pub horizon: f64,
    pub stable_modes: Vec<ModeId>,
    #[serde(default)]
    pub unstable_modes: Vec<ModeId>,
    pub ratio_lb: f64,
    pub adt_lb: f64,
    /// Relative headroom over both lower bounds.
    #[serde(default = "default_generator_margin")]
    pub margin: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub fn default_generator_margin() -> f64 {
    0.05
}

/// Mode sequence and switch times of a compliant signal.
///
/// Layout: one stable lead-in segment, then `m` unstable/stable pairs. Each pair
/// spans `2a` with `a = adt_lb·(1+margin)`, and inside a pair the stable part is
/// `r = ratio_lb·(1+margin)` times the unstable part. Every suffix then has
/// `T_s/T_u ≥ r` and piecewise ADT `≥ a` for any `N̂ ≥ 0`. The lead-in is at
/// least one stable block long, so every prefix `[t0, t]` also has `T_s ≥ r·T_u`.
pub fn generate_segments(spec: &GeneratorSpec, seeds: &SeedTree) -> Result<Vec<Segment>> {
    if spec.stable_modes.is_empty() {
        return Err(Error::Config(
            "generator needs at least one stable mode".into(),
        ));
    }
    if !(spec.horizon > 0.0 && spec.horizon.is_finite()) {
        return Err(Error::Config(format!(
            "horizon {} must be positive",
            spec.horizon
        )));
    }
    if !(spec.ratio_lb > 0.0 && spec.adt_lb > 0.0 && spec.margin >= 0.0) {
        return Err(Error::Config(format!(
            "generator needs ratio_lb > 0, adt_lb > 0, margin >= 0 (got {}, {}, {})",
            spec.ratio_lb, spec.adt_lb, spec.margin
        )));
    }
    let lead = Segment {
        start: spec.t0,
        mode: spec.stable_modes[0],
    };
    if spec.unstable_modes.is_empty() {
        return Ok(vec![lead]);
    }
    let r = spec.ratio_lb * (1.0 + spec.margin);
    let a = spec.adt_lb * (1.0 + spec.margin);
    let period = 2.0 * a;
    let unstable_len = period / (1.0 + r);
    let stable_len = period - unstable_len;
    if spec.horizon < stable_len + period {
        return Err(Error::Config(format!(
            "horizon {} too short for a stable lead-in of {stable_len} plus one unstable/stable pair of length {period}",
            spec.horizon
        )));
    }
    let pairs = ((spec.horizon - stable_len) / period).floor() as usize;
    let lead_len = spec.horizon - pairs as f64 * period;

    let mut rng = seeds.rng(Stream::Signal, 0);
    let mut unstable: Vec<ModeId> = (0..pairs)
        .map(|i| spec.unstable_modes[i % spec.unstable_modes.len()])
        .collect();
    unstable.shuffle(&mut rng);
    let mut stable: Vec<ModeId> = (0..pairs)
        .map(|i| spec.stable_modes[i % spec.stable_modes.len()])
        .collect();
    stable.shuffle(&mut rng);

    let mut segments = vec![lead];
    for i in 0..pairs {
        let base = spec.t0 + lead_len + i as f64 * period;
        segments.push(Segment {
            start: base,
            mode: unstable[i],
        });
        segments.push(Segment {
            start: base + unstable_len,
            mode: stable[i],
        });
    }
    Ok(segments)
}

/// Generates a compliant signal and attaches migration events from `table`.
pub fn generate_signal(
    spec: &GeneratorSpec,
    table: &[EventTemplate],
    sizes: &BTreeMap<ModeId, usize>,
    p: usize,
    seeds: &SeedTree,
) -> Result<SwitchingSignal> {
    let segments = generate_segments(spec, seeds)?;
    let events = attach_events(&segments, table, sizes, p, seeds)?;
    SwitchingSignal::with_events(spec.t0, spec.t0 + spec.horizon, segments, events)
}
