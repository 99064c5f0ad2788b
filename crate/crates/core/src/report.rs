//! End-to-end pipelines behind the command-line tool: mode analysis,
//! certification with signal validation, calibration and simulation runs.

use serde::Serialize;

use crate::certificate::{
    assemble_bundle, calibrate, certify_modes, stable_set, switching_budget, BundleInputs,
    Calibration, CertificateBundle,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mode_dynamics::{
    build_mode_matrix, rho_upper_bound, suggested_rho, ModeMatrix, DEFAULT_RHO_MARGIN_FACTOR,
};
use crate::rng::SeedTree;
use crate::scenario::{Model, Scenario, SignalSpec};
use crate::signed_graph::{Classification, ModeClass, ModeId, NegativeInstabilityReport};
use crate::simulate::{
    cross_check, lyapunov_trace, simulate, summarize, LyapunovTrace, PerturbationModel, RunSummary,
    SegmentDeviation, SimulationSetup, Trajectory,
};
use crate::switching::{
    attach_events, generate_signal, validate_switching_conditions, GeneratorSpec, SuffixSelection,
    SwitchingSignal, ValidationReport,
};
use crate::transition::{impulse_bounds, ImpulseBounds, MigrationEvent};

/// Relative tolerance of the pointwise Lyapunov envelope check.
pub const ENVELOPE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct ModeReport {
    pub id: ModeId,
    pub n_agents: usize,
    #[serde(flatten)]
    pub classification: Classification,
    pub leader_reaches_all: bool,
    /// Eigenvalues of `L̃` as `[re, im]`.
    pub laplacian_spectrum: Vec<[f64; 2]>,
    pub alpha: f64,
    pub stable: bool,
    /// Abscissa sign agrees with what the class predicts.
    pub class_consistent: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negative_instability: Option<NegativeInstabilityReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionStatus {
    pub holds: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalysisReport {
    pub name: String,
    pub p: usize,
    pub rho: f64,
    pub alpha_a: f64,
    /// Valid gains lie strictly below this; absent without a spanning positive mode.
    pub rho_upper_bound: Option<f64>,
    pub rho_valid: bool,
    pub suggested_rho: Option<f64>,
    pub modes: Vec<ModeReport>,
    pub stable_modes: Vec<ModeId>,
    pub unstable_modes: Vec<ModeId>,
    pub assumption1: AssumptionStatus,
    pub assumption2: AssumptionStatus,
    pub warnings: Vec<String>,
}

impl AnalysisReport {
    pub fn certifiable(&self) -> bool {
        self.assumption1.holds && self.assumption2.holds && self.rho_valid
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<6} {:>4}  {:<22} {:>5} {:>5} {:>12}  {}\n",
            "mode", "N", "class", "E+", "E-", "alpha", "set"
        );
        for m in &self.modes {
            out += &format!(
                "{:<6} {:>4}  {:<22} {:>5} {:>5} {:>12.6}  {}\n",
                m.id.0,
                m.n_agents,
                format!("{:?}", m.classification.class),
                m.classification.positive_edges,
                m.classification.negative_edges,
                m.alpha,
                if m.stable { "stable" } else { "unstable" },
            );
        }
        out += &format!(
            "rho = {} (bound {}), assumption 1: {}, assumption 2: {}\n",
            self.rho,
            self.rho_upper_bound
                .map_or("none".into(), |b| b.to_string()),
            if self.assumption1.holds {
                "met"
            } else {
                "unmet"
            },
            if self.assumption2.holds {
                "met"
            } else {
                "unmet"
            },
        );
        for w in &self.warnings {
            out += &format!("warning: {w}\n");
        }
        out
    }
}

pub fn analyze(scenario: &Scenario, model: &Model) -> Result<(AnalysisReport, Vec<ModeMatrix>)> {
    let mut warnings = model.dynamics.warnings()?;
    let max_dim = scenario.max_dim();
    let mut reports = Vec::new();
    let mut matrices = Vec::new();
    for mode in model.modes.values() {
        let mm = build_mode_matrix(&model.dynamics, mode, model.rho, max_dim)?;
        let classification = mode.classify();
        if !classification.definitions_agree {
            warnings.push(format!(
                "mode {}: edge counts and weighted sum disagree on negative dominance",
                mode.id
            ));
        }
        let class = classification.class;
        let negative_instability = if class.is_positive() {
            None
        } else {
            Some(mode.negative_instability_report()?)
        };
        let laplacian_spectrum = linalg::eigenvalues(&mode.augmented_laplacian())?
            .iter()
            .map(|z| [z.re, z.im])
            .collect();
        reports.push(ModeReport {
            id: mode.id,
            n_agents: mode.n_agents(),
            leader_reaches_all: mode.leader_reaches_all(),
            laplacian_spectrum,
            alpha: mm.alpha,
            stable: mm.stable,
            class_consistent: mm.consistent_with(class),
            negative_instability,
            classification,
        });
        matrices.push(mm);
    }
    let classes: Vec<ModeClass> = reports.iter().map(|m| m.classification.class).collect();
    let has_spanning = classes.contains(&ModeClass::PositiveSpanning);
    let has_negative = classes.iter().any(|c| !c.is_positive());
    let minority: Vec<String> = reports
        .iter()
        .filter(|m| m.classification.class == ModeClass::NegativeMinority)
        .map(|m| m.id.to_string())
        .collect();
    let assumption1 = AssumptionStatus {
        holds: has_spanning && has_negative,
        detail: match (has_spanning, has_negative) {
            (true, true) => "spanning positive and negative-edge modes both present".into(),
            (false, _) => "no positive mode with a spanning tree rooted at the leader".into(),
            (_, false) => "no mode with negative edges".into(),
        },
    };
    let assumption2 = AssumptionStatus {
        holds: minority.is_empty(),
        detail: if minority.is_empty() {
            "every negative-edge mode is negatively dominated".into()
        } else {
            format!(
                "modes with non-dominant negative edges: {}",
                minority.join(", ")
            )
        },
    };
    let bound = rho_upper_bound(&model.dynamics, &model.mode_list()).ok();
    let rho_valid = bound.is_some_and(|b| model.rho < b);
    if let Some(b) = bound.filter(|_| !rho_valid) {
        warnings.push(format!("rho = {} is not below the bound {b}", model.rho));
    }
    let (stable_modes, unstable_modes) = {
        let (s, u): (Vec<_>, Vec<_>) = reports.iter().partition(|m| m.stable);
        (
            s.iter().map(|m| m.id).collect(),
            u.iter().map(|m| m.id).collect(),
        )
    };
    Ok((
        AnalysisReport {
            name: scenario.name.clone(),
            p: model.p(),
            rho: model.rho,
            alpha_a: model.dynamics.abscissa()?,
            rho_upper_bound: bound,
            rho_valid,
            suggested_rho: bound.map(|b| suggested_rho(b, DEFAULT_RHO_MARGIN_FACTOR)),
            modes: reports,
            stable_modes,
            unstable_modes,
            assumption1,
            assumption2,
            warnings,
        },
        matrices,
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct SignalRecord {
    pub t0: f64,
    pub tf: f64,
    pub segments: Vec<crate::switching::Segment>,
}

impl From<&SwitchingSignal> for SignalRecord {
    fn from(s: &SwitchingSignal) -> Self {
        SignalRecord {
            t0: s.t0,
            tf: s.tf,
            segments: s.segments.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CertifyReport {
    pub bundle: CertificateBundle,
    pub impulses: ImpulseBounds,
    pub signal: SignalRecord,
    pub generated_signal: bool,
    pub suffixes: SuffixSelection,
    pub validation: ValidationReport,
}

/// Everything certification produces; the signal carries its events.
#[derive(Clone, Debug)]
pub struct Certified {
    pub report: CertifyReport,
    pub signal: SwitchingSignal,
}

fn vanishing(scenario: &Scenario, impulses: &ImpulseBounds) -> bool {
    scenario.perturbation.h_bar == 0.0 && impulses.phi_bar == 0.0
}

/// Impulse bounds over every event-table entry, instantiated once per pair.
fn table_impulses(model: &Model) -> Result<ImpulseBounds> {
    let sizes = model.sizes();
    let events = model
        .table
        .iter()
        .enumerate()
        .map(|(k, t)| t.instantiate(k + 1, sizes[&t.from], sizes[&t.to], model.p(), &model.seeds))
        .collect::<Result<Vec<MigrationEvent>>>()?;
    impulse_bounds(&events, model.p())
}

fn merge(a: ImpulseBounds, b: ImpulseBounds) -> ImpulseBounds {
    ImpulseBounds {
        phi_bar: a.phi_bar.max(b.phi_bar),
        xi_breve_norm_max: a.xi_breve_norm_max.max(b.xi_breve_norm_max),
    }
}

/// Certifies every mode, fixes (or generates) the signal and validates it.
pub fn certify(
    scenario: &Scenario,
    model: &Model,
    matrices: &[ModeMatrix],
    suffixes: Option<SuffixSelection>,
) -> Result<Certified> {
    let cert = &scenario.certification;
    let certs = certify_modes(matrices, &cert.policy())?;
    let stable = stable_set(&certs);
    if stable.is_empty() {
        return Err(Error::AssumptionViolation(
            "no stable mode to certify against".into(),
        ));
    }
    let table_bounds = table_impulses(model)?;
    let (signal, generated) = match &scenario.signal {
        SignalSpec::Explicit { t0, tf, segments } => {
            let events = attach_events(
                segments,
                &model.table,
                &model.sizes(),
                model.p(),
                &model.seeds,
            )?;
            (
                SwitchingSignal::with_events(*t0, *tf, segments.clone(), events)?,
                false,
            )
        }
        SignalSpec::Generate {
            t0,
            horizon,
            stable_modes,
            unstable_modes,
            ratio_lb,
            adt_lb,
            margin,
        } => {
            let budget = switching_budget(&certs, &table_bounds, cert.n_hat, cert.gamma_tilde)?;
            let all_unstable: Vec<ModeId> = certs
                .iter()
                .filter(|c| !stable.contains(&c.mode_id))
                .map(|c| c.mode_id)
                .collect();
            let spec = GeneratorSpec {
                t0: *t0,
                horizon: *horizon,
                stable_modes: stable_modes
                    .clone()
                    .unwrap_or_else(|| stable.iter().copied().collect()),
                unstable_modes: unstable_modes.clone().unwrap_or(all_unstable),
                ratio_lb: ratio_lb.unwrap_or(budget.ratio_lower_bound()),
                adt_lb: adt_lb.unwrap_or(budget.adt_lower_bound()),
                margin: *margin,
                seed: Some(model.seeds.root()),
            };
            let sig =
                generate_signal(&spec, &model.table, &model.sizes(), model.p(), &model.seeds)?;
            (sig, true)
        }
    };
    let impulses = merge(table_bounds, impulse_bounds(&signal.events, model.p())?);
    let bundle = assemble_bundle(BundleInputs {
        certs,
        impulses,
        h_bar: scenario.perturbation.h_bar,
        signal: &signal,
        n_hat: cert.n_hat,
        gamma_tilde: cert.gamma_tilde,
    })?;
    let selection = suffixes
        .or(cert.suffixes)
        .unwrap_or(if vanishing(scenario, &impulses) {
            SuffixSelection::First
        } else {
            SuffixSelection::All
        });
    let validation = validate_switching_conditions(&signal, &bundle.budget(), &stable, selection);
    Ok(Certified {
        report: CertifyReport {
            bundle,
            impulses,
            signal: SignalRecord::from(&signal),
            generated_signal: generated,
            suffixes: selection,
            validation,
        },
        signal,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationReport {
    pub calibration: Calibration,
    /// Norm of the error-space jump matrices used for `μ`.
    pub xi_breve_norm: f64,
    pub within_15_percent: bool,
}

/// Searches rate margins so the switching lower bounds approach the target.
/// Uses only the pure migration part of the jump maps (`‖Ξ̆‖ = 1`).
pub fn calibrate_report(
    matrices: &[ModeMatrix],
    target: crate::certificate::CalibrationTarget,
) -> Result<CalibrationReport> {
    let calibration = calibrate(matrices, 1.0, target)?;
    Ok(CalibrationReport {
        within_15_percent: calibration.max_rel_err() <= 0.15,
        calibration,
        xi_breve_norm: 1.0,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeSummary {
    pub max_rel_excess: f64,
    pub violations: usize,
    pub first_violation: Option<f64>,
    pub jumps_ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub name: String,
    pub summary: RunSummary,
    pub certified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certification_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_ok: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cross_check: Vec<SegmentDeviation>,
}

pub struct RunOutput {
    pub report: RunReport,
    pub trajectory: Trajectory,
    pub certified: Option<Certified>,
    pub lyapunov: Option<LyapunovTrace>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub cross_check: bool,
}

/// Builds the model with the effective seed and runs the whole pipeline.
///
/// Certification failures do not stop the run when the signal is given
/// explicitly; they are recorded in the report instead.
pub fn run_scenario(scenario: &Scenario, overrides: &RunOverrides) -> Result<RunOutput> {
    let seed = overrides.seed.unwrap_or(scenario.simulation.seed);
    let model = scenario.model_with_seed(seed)?;
    let (_, matrices) = analyze(scenario, &model)?;
    let certified = certify(scenario, &model, &matrices, None);
    let (certified, certification_error, signal) = match certified {
        Ok(c) => {
            let sig = c.signal.clone();
            (Some(c), None, sig)
        }
        Err(e) => match &scenario.signal {
            SignalSpec::Explicit { t0, tf, segments } => {
                let events = attach_events(
                    segments,
                    &model.table,
                    &model.sizes(),
                    model.p(),
                    &model.seeds,
                )?;
                let sig = SwitchingSignal::with_events(*t0, *tf, segments.clone(), events)?;
                (None, Some(e.to_string()), sig)
            }
            SignalSpec::Generate { .. } => return Err(e),
        },
    };
    let mut options = scenario.simulation.options();
    if let Some(dt) = overrides.dt {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("dt {dt} must be positive")));
        }
        options.dt = dt;
    }
    let first = model.modes[&signal.segments[0].mode].n_agents();
    let perturbation = PerturbationModel {
        kind: scenario.perturbation.kind.clone(),
        h_bar: scenario.perturbation.h_bar,
        t0: signal.t0,
        seeds: SeedTree::new(seed),
    };
    let setup = SimulationSetup {
        dynamics: &model.dynamics,
        rho: model.rho,
        modes: &model.modes,
        signal: &signal,
        initial_state: scenario.initial_state(model.p(), first, &model.seeds)?,
        perturbation: &perturbation,
        options: options.clone(),
    };
    let trajectory = simulate(&setup)?;
    let bundle = certified.as_ref().map(|c| &c.report.bundle);
    let summary = summarize(&trajectory, bundle, &options, seed);
    let lyapunov = match bundle {
        Some(b) if trajectory.diverged_at.is_none() => {
            let times: Vec<f64> = (0..=signal.n_switches())
                .map(|j| signal.switch_time(j))
                .collect();
            Some(lyapunov_trace(&trajectory, b, &times, ENVELOPE_TOL)?)
        }
        _ => None,
    };
    let envelope = lyapunov.as_ref().map(|l| EnvelopeSummary {
        max_rel_excess: l.max_rel_excess,
        violations: l.violations.len(),
        first_violation: l.violations.first().copied(),
        jumps_ok: l.jumps.iter().all(|j| j.ok),
    });
    let cross = if overrides.cross_check {
        cross_check(&setup)?
    } else {
        Vec::new()
    };
    Ok(RunOutput {
        report: RunReport {
            name: scenario.name.clone(),
            summary,
            certified: certified.is_some(),
            certification_error,
            validation_ok: certified.as_ref().map(|c| c.report.validation.ok),
            envelope,
            cross_check: cross,
        },
        trajectory,
        certified,
        lyapunov,
    })
}
