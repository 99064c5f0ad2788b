//! Certification and simulation toolkit for open multi-agent systems whose
//! agents join and leave at switching instants, interact through signed
//! (possibly repelling) links, and suffer bounded perturbations.

pub mod certificate;
pub mod error;
pub mod export;
pub mod fixtures;
pub mod linalg;
pub mod mode_dynamics;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod signed_graph;
pub mod simulate;
pub mod switching;
pub mod transition;

pub use certificate::{CertificateBundle, ModeCertificate};
pub use error::{Error, Result};
pub use mode_dynamics::{AgentDynamics, ModeMatrix};
pub use report::{run_scenario, RunOverrides};
pub use scenario::Scenario;
pub use signed_graph::{AugmentedMode, Edge, ModeClass, ModeId, SignedDigraph};
pub use simulate::{PerturbationModel, SimOptions, Trajectory};
pub use switching::{Segment, SwitchingSignal};
pub use transition::{EventTemplate, MigrationEvent, TransitionMap};
