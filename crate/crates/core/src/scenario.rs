//! JSON scenario documents and their conversion into model objects.
//!
//! Dense matrices are row-major nested arrays. Parse failures and semantic
//! inconsistencies are both reported as [`Error::Schema`] with a field path
//! such as `modes[2].leader_links`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::certificate::{CalibrationTarget, MarginPolicy};
use crate::error::{Error, Result};
use crate::mode_dynamics::{AgentDynamics, DEFAULT_MAX_DIM};
use crate::rng::{SeedTree, Stream};
use crate::signed_graph::{AugmentedMode, Edge, ModeId, SignedDigraph};
use crate::simulate::{
    Method, PerturbationKind, PerturbationModel, SimOptions, DEFAULT_CONVERGENCE_TOL, DEFAULT_DT,
    DEFAULT_TAIL_FRACTION,
};
use crate::switching::{default_generator_margin, Segment, SuffixSelection};
use crate::transition::{EventTemplate, ImpulseSpec, XiHatSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub dynamics: DynamicsSpec,
    pub modes: Vec<ModeSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    pub signal: SignalSpec,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub certification: CertificationSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    pub a: Vec<Vec<f64>>,
    pub rho: f64,
}

/// A topology mode given either densely (`laplacian`) or as an edge list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub id: ModeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub laplacian: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_agents: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<Edge>>,
    pub leader_links: Vec<f64>,
    /// Global agent keys by position, for reporting only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub from: ModeId,
    pub to: ModeId,
    #[serde(default)]
    pub joins: Vec<usize>,
    #[serde(default)]
    pub leaves: Vec<usize>,
    #[serde(default)]
    pub phi_ind: ImpulseJson,
    #[serde(default)]
    pub xi_hat: XiHatJson,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImpulseJson {
    #[default]
    None,
    Explicit {
        value: Vec<f64>,
    },
    Sphere {
        radius: f64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum XiHatJson {
    #[default]
    None,
    Explicit {
        value: Vec<Vec<f64>>,
    },
    RandomNorm {
        norm: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Explicit {
        #[serde(default)]
        t0: f64,
        tf: f64,
        segments: Vec<Segment>,
    },
    /// Compliant signal built at run time; unset bounds and mode lists are
    /// taken from the certificate.
    Generate {
        #[serde(default)]
        t0: f64,
        horizon: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stable_modes: Option<Vec<ModeId>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unstable_modes: Option<Vec<ModeId>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ratio_lb: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        adt_lb: Option<f64>,
        #[serde(default = "default_generator_margin")]
        margin: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    #[serde(default)]
    pub h_bar: f64,
    #[serde(flatten)]
    pub kind: PerturbationKind,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            h_bar: 0.0,
            kind: PerturbationKind::Zero,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stable_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unstable_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_mode_margin: BTreeMap<ModeId, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_tilde: Option<f64>,
    #[serde(default)]
    pub n_hat: f64,
    /// Suffixes checked by the validator; `first` by default when nothing
    /// persistent perturbs the system, `all` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suffixes: Option<SuffixSelection>,
    /// Reference lower bounds for `certify --calibrate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_target: Option<CalibrationTarget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_dim: Option<usize>,
}

impl CertificationSpec {
    pub fn policy(&self) -> MarginPolicy {
        MarginPolicy {
            stable: self.stable_margin,
            unstable: self.unstable_margin,
            per_mode: self.per_mode_margin.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialStateSpec {
    /// Every component uniform in `[-scale, scale]`, leader included.
    Random { scale: f64 },
    /// Stacked `[ξ₀; ξ₁; …]` for the first mode.
    Explicit { value: Vec<f64> },
}

impl Default for InitialStateSpec {
    fn default() -> Self {
        InitialStateSpec::Random { scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
    #[serde(default = "default_tol")]
    pub convergence_tol: f64,
    #[serde(default)]
    pub initial_state: InitialStateSpec,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_stride() -> usize {
    1
}
fn default_tail() -> f64 {
    DEFAULT_TAIL_FRACTION
}
fn default_tol() -> f64 {
    DEFAULT_CONVERGENCE_TOL
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            dt: DEFAULT_DT,
            seed: 0,
            method: Method::Exact,
            stride: 1,
            tail_fraction: DEFAULT_TAIL_FRACTION,
            convergence_tol: DEFAULT_CONVERGENCE_TOL,
            initial_state: InitialStateSpec::default(),
        }
    }
}

impl SimulationSpec {
    pub fn options(&self) -> SimOptions {
        SimOptions {
            dt: self.dt,
            method: self.method,
            stride: self.stride,
            tail_fraction: self.tail_fraction,
            convergence_tol: self.convergence_tol,
        }
    }
}

/// Validated model objects built from a [`Scenario`].
#[derive(Clone, Debug)]
pub struct Model {
    pub dynamics: AgentDynamics,
    pub rho: f64,
    pub modes: BTreeMap<ModeId, AugmentedMode>,
    pub table: Vec<EventTemplate>,
    pub seeds: SeedTree,
}

impl Model {
    pub fn p(&self) -> usize {
        self.dynamics.p()
    }

    pub fn sizes(&self) -> BTreeMap<ModeId, usize> {
        self.modes.iter().map(|(k, m)| (*k, m.n_agents())).collect()
    }

    pub fn mode_list(&self) -> Vec<AugmentedMode> {
        self.modes.values().cloned().collect()
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::schema(
            if path == "." { "$".into() } else { path },
            e.into_inner().to_string(),
        )
    })
}

impl SignalSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        parse_json(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = parse_json(text)?;
        scenario.check()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn max_dim(&self) -> usize {
        self.certification.max_dim.unwrap_or(DEFAULT_MAX_DIM)
    }

    /// Semantic checks that only need the document itself.
    pub fn check(&self) -> Result<()> {
        self.model_with_seed(self.simulation.seed).map(|_| ())
    }

    /// Builds the model, seeding all randomness from `seed`.
    pub fn model_with_seed(&self, seed: u64) -> Result<Model> {
        let a = dense("dynamics.a", &self.dynamics.a)?;
        let dynamics = AgentDynamics::new(a).map_err(|e| Error::schema("dynamics.a", strip(e)))?;
        if !self.dynamics.rho.is_finite() {
            return Err(Error::schema("dynamics.rho", "must be finite"));
        }
        let p = dynamics.p();

        if self.modes.is_empty() {
            return Err(Error::schema("modes", "at least one mode is required"));
        }
        let mut modes = BTreeMap::new();
        for (i, spec) in self.modes.iter().enumerate() {
            let mode = build_mode(&format!("modes[{i}]"), spec)?;
            if modes.insert(spec.id, mode).is_some() {
                return Err(Error::schema(
                    format!("modes[{i}].id"),
                    format!("duplicate mode id {}", spec.id),
                ));
            }
        }
        let size = |path: String, id: ModeId| {
            modes
                .get(&id)
                .map(|m: &AugmentedMode| m.n_agents())
                .ok_or_else(|| Error::schema(path, format!("unknown mode {id}")))
        };

        let mut table = Vec::new();
        let mut pairs = BTreeSet::new();
        for (i, ev) in self.events.iter().enumerate() {
            let path = format!("events[{i}]");
            let n_before = size(format!("{path}.from"), ev.from)?;
            let n_after = size(format!("{path}.to"), ev.to)?;
            if !pairs.insert((ev.from, ev.to)) {
                return Err(Error::schema(
                    path,
                    format!("duplicate event for {}->{}", ev.from, ev.to),
                ));
            }
            let template = EventTemplate {
                from: ev.from,
                to: ev.to,
                joins: ev.joins.clone(),
                leaves: ev.leaves.clone(),
                phi_ind: match &ev.phi_ind {
                    ImpulseJson::None => ImpulseSpec::None,
                    ImpulseJson::Explicit { value } => {
                        ImpulseSpec::Explicit(DVector::from_column_slice(value))
                    }
                    ImpulseJson::Sphere { radius } if *radius >= 0.0 => {
                        ImpulseSpec::Sphere { radius: *radius }
                    }
                    ImpulseJson::Sphere { .. } => {
                        return Err(Error::schema(
                            format!("{path}.phi_ind.radius"),
                            "must be >= 0",
                        ))
                    }
                },
                xi_hat: match &ev.xi_hat {
                    XiHatJson::None => XiHatSpec::None,
                    XiHatJson::Explicit { value } => {
                        XiHatSpec::Explicit(dense(&format!("{path}.xi_hat.value"), value)?)
                    }
                    XiHatJson::RandomNorm { norm } if *norm >= 0.0 => {
                        XiHatSpec::RandomNorm { norm: *norm }
                    }
                    XiHatJson::RandomNorm { .. } => {
                        return Err(Error::schema(format!("{path}.xi_hat.norm"), "must be >= 0"))
                    }
                },
            };
            // instantiating once checks sizes, positions and impulse shapes
            template
                .instantiate(0, n_before, n_after, p, &SeedTree::new(seed))
                .map_err(|e| Error::schema(path.clone(), strip(e)))?;
            table.push(template);
        }

        match &self.signal {
            SignalSpec::Explicit { t0, tf, segments } => {
                for (i, s) in segments.iter().enumerate() {
                    size(format!("signal.segments[{i}].mode"), s.mode)?;
                }
                crate::switching::SwitchingSignal::new(*t0, *tf, segments.clone())
                    .map_err(|e| Error::schema("signal", strip(e)))?;
            }
            SignalSpec::Generate {
                horizon,
                stable_modes,
                unstable_modes,
                margin,
                ..
            } => {
                if !(*horizon > 0.0) {
                    return Err(Error::schema("signal.horizon", "must be positive"));
                }
                if !(*margin >= 0.0) {
                    return Err(Error::schema("signal.margin", "must be >= 0"));
                }
                for (name, list) in [
                    ("stable_modes", stable_modes),
                    ("unstable_modes", unstable_modes),
                ] {
                    for (i, m) in list.iter().flatten().enumerate() {
                        size(format!("signal.{name}[{i}]"), *m)?;
                    }
                }
            }
        }

        let pert = &self.perturbation;
        PerturbationModel {
            kind: pert.kind.clone(),
            h_bar: pert.h_bar,
            t0: 0.0,
            seeds: SeedTree::new(seed),
        }
        .validate(p)
        .map_err(|e| Error::schema("perturbation", strip(e)))?;

        let cert = &self.certification;
        if !(cert.n_hat >= 0.0) {
            return Err(Error::schema("certification.n_hat", "must be >= 0"));
        }
        for id in cert.per_mode_margin.keys() {
            size(format!("certification.per_mode_margin.{id}"), *id)?;
        }

        let sim = &self.simulation;
        if !(sim.dt > 0.0 && sim.dt.is_finite()) {
            return Err(Error::schema("simulation.dt", "must be positive"));
        }
        if sim.stride == 0 {
            return Err(Error::schema("simulation.stride", "must be >= 1"));
        }
        if !(sim.tail_fraction > 0.0 && sim.tail_fraction <= 1.0) {
            return Err(Error::schema(
                "simulation.tail_fraction",
                "must lie in (0, 1]",
            ));
        }
        if let InitialStateSpec::Explicit { value } = &sim.initial_state {
            let first = self.first_mode();
            if let Some(first) = first {
                let n = size("signal".into(), first)?;
                if value.len() != p * (n + 1) {
                    return Err(Error::schema(
                        "simulation.initial_state.value",
                        format!(
                            "length {} but mode {first} needs {}",
                            value.len(),
                            p * (n + 1)
                        ),
                    ));
                }
            }
        }

        Ok(Model {
            dynamics,
            rho: self.dynamics.rho,
            modes,
            table,
            seeds: SeedTree::new(seed),
        })
    }

    /// Mode active at the start, when it is known without certification.
    pub fn first_mode(&self) -> Option<ModeId> {
        match &self.signal {
            SignalSpec::Explicit { segments, .. } => segments.first().map(|s| s.mode),
            SignalSpec::Generate { stable_modes, .. } => {
                stable_modes.as_ref().and_then(|m| m.first().copied())
            }
        }
    }

    /// Initial stacked state for a first mode with `n` agents.
    pub fn initial_state(&self, p: usize, n: usize, seeds: &SeedTree) -> Result<DVector<f64>> {
        let dim = p * (n + 1);
        match &self.simulation.initial_state {
            InitialStateSpec::Explicit { value } if value.len() == dim => {
                Ok(DVector::from_column_slice(value))
            }
            InitialStateSpec::Explicit { value } => Err(Error::schema(
                "simulation.initial_state.value",
                format!("length {} but the first mode needs {dim}", value.len()),
            )),
            InitialStateSpec::Random { scale } => {
                let mut rng = seeds.rng(Stream::InitialState, 0);
                Ok(DVector::from_fn(dim, |_, _| {
                    rng.random_range(-1.0..=1.0) * scale
                }))
            }
        }
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) | Error::DimensionMismatch(m) | Error::OutOfRange(m) => m,
        other => other.to_string(),
    }
}

fn dense(path: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::schema(
            format!("{path}[{i}]"),
            format!("row has {} entries, expected {ncols}", rows[i].len()),
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    // `+ 0.0` folds negative zeros so documents read cleanly
    m.row_iter()
        .map(|r| r.iter().map(|v| v + 0.0).collect())
        .collect()
}

fn build_mode(path: &str, spec: &ModeSpec) -> Result<AugmentedMode> {
    let mode = match (&spec.laplacian, &spec.edges) {
        (Some(l), None) => {
            if spec.n_agents.is_some_and(|n| n != l.len()) {
                return Err(Error::schema(
                    format!("{path}.n_agents"),
                    "disagrees with the laplacian size",
                ));
            }
            let l = dense(&format!("{path}.laplacian"), l)?;
            AugmentedMode::from_dense(spec.id, &l, spec.leader_links.clone())
        }
        (None, Some(edges)) => {
            let n = spec.n_agents.unwrap_or(spec.leader_links.len());
            SignedDigraph::new(n, edges.iter().copied())
                .and_then(|g| AugmentedMode::new(spec.id, g, spec.leader_links.clone()))
        }
        (Some(_), Some(_)) => {
            return Err(Error::schema(
                path,
                "give either `laplacian` or `edges`, not both",
            ))
        }
        (None, None) => return Err(Error::schema(path, "missing `laplacian` or `edges`")),
    };
    let mode = mode.map_err(|e| Error::schema(path, strip(e)))?;
    if let Some(agents) = &spec.agents {
        if agents.len() != mode.n_agents() {
            return Err(Error::schema(
                format!("{path}.agents"),
                format!("{} keys for {} agents", agents.len(), mode.n_agents()),
            ));
        }
    }
    Ok(mode)
}

/// Scenario for the four-mode reference network, with a generated signal.
pub fn reference_scenario() -> Scenario {
    use crate::fixtures::*;
    let dynamics = reference_dynamics();
    let modes = reference_modes()
        .iter()
        .map(|m| ModeSpec {
            id: m.id,
            laplacian: Some(matrix_rows(&m.laplacian())),
            n_agents: None,
            edges: None,
            leader_links: m.leader_links().to_vec(),
            agents: None,
        })
        .collect();
    let events = REFERENCE_MIGRATIONS
        .iter()
        .map(|m| EventSpec {
            from: ModeId(m.from),
            to: ModeId(m.to),
            joins: m.joins.to_vec(),
            leaves: m.leaves.to_vec(),
            phi_ind: ImpulseJson::Sphere {
                radius: REFERENCE_PHI_BAR,
            },
            xi_hat: XiHatJson::RandomNorm { norm: 0.2 },
        })
        .collect();
    Scenario {
        name: "reference".into(),
        dynamics: DynamicsSpec {
            a: matrix_rows(dynamics.a()),
            rho: REFERENCE_RHO,
        },
        modes,
        events,
        signal: SignalSpec::Generate {
            t0: 0.0,
            horizon: 30.0,
            stable_modes: None,
            unstable_modes: None,
            ratio_lb: None,
            adt_lb: None,
            margin: default_generator_margin(),
        },
        perturbation: PerturbationSpec {
            h_bar: REFERENCE_H_BAR,
            kind: PerturbationKind::RandomPiecewise { hold: 0.05 },
        },
        certification: CertificationSpec {
            stable_margin: Some(REFERENCE_STABLE_MARGIN),
            unstable_margin: Some(REFERENCE_UNSTABLE_MARGIN),
            calibration_target: Some(CalibrationTarget {
                ratio: REFERENCE_RATIO,
                adt: REFERENCE_ADT,
            }),
            ..CertificationSpec::default()
        },
        simulation: SimulationSpec {
            seed: 7,
            ..SimulationSpec::default()
        },
    }
}

/// The reference scenario with every non-vanishing input switched off.
pub fn vanishing(mut s: Scenario) -> Scenario {
    s.perturbation = PerturbationSpec::default();
    for ev in &mut s.events {
        ev.phi_ind = ImpulseJson::None;
    }
    s
}
