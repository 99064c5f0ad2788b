//! `omas`: analyze, certify and simulate open multi-agent scenarios.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 invalid scenario or
//! arguments, 3 assumption or certificate failure, 4 divergence under `--strict`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use omas_core::certificate::CalibrationTarget;
use omas_core::export::{self, write_run};
use omas_core::report::{
    analyze, calibrate_report, certify, run_scenario, RunOutput, RunOverrides,
};
use omas_core::scenario::SignalSpec;
use omas_core::switching::SuffixSelection;
use omas_core::{Error, Scenario};

const EXIT_RUNTIME: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_CERTIFICATE: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "omas",
    version,
    about = "Certify and simulate open multi-agent systems with repelling links"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify modes, report spectra and check the standing assumptions.
    Analyze(AnalyzeArgs),
    /// Build Lyapunov certificates and validate the switching signal.
    Certify(CertifyArgs),
    /// Integrate the closed loop and write traces.
    Simulate(SimulateArgs),
    /// Generate a compliant switching signal.
    GenSignal(GenSignalArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario JSON document.
    #[arg(long)]
    scenario: PathBuf,
    /// Seed for every random draw; defaults to the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    /// Directory for `analysis.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Suffixes {
    All,
    First,
}

impl From<Suffixes> for SuffixSelection {
    fn from(s: Suffixes) -> Self {
        match s {
            Suffixes::All => SuffixSelection::All,
            Suffixes::First => SuffixSelection::First,
        }
    }
}

#[derive(Args, Debug)]
struct CertifyArgs {
    #[command(flatten)]
    common: Common,
    /// Directory for `certificate.json` (and `calibration.json`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the scenario signal with one read from this file.
    #[arg(long)]
    signal: Option<PathBuf>,
    /// Which suffixes of the signal to validate.
    #[arg(long, value_enum)]
    validate_suffixes: Option<Suffixes>,
    /// Also search rate margins that reproduce target switching bounds.
    #[arg(long)]
    calibrate: bool,
    /// Target activation-ratio lower bound for `--calibrate`.
    #[arg(long, requires = "target_adt")]
    target_ratio: Option<f64>,
    /// Target dwell-time lower bound for `--calibrate`.
    #[arg(long, requires = "target_ratio")]
    target_adt: Option<f64>,
    /// Exit with code 3 when the signal fails validation.
    #[arg(long)]
    strict: bool,
    /// Print the certificate JSON instead of the summary.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory for the traces and summary.
    #[arg(long)]
    out: PathBuf,
    /// Replace the scenario signal with one read from this file.
    #[arg(long)]
    signal: Option<PathBuf>,
    /// Integration step in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Exit with code 4 when the run diverges.
    #[arg(long)]
    strict: bool,
    /// Run this many consecutive seeds, one subdirectory each.
    #[arg(long, value_name = "N")]
    sweep: Option<u64>,
    /// Compare each segment with an independent RK4 integration.
    #[arg(long)]
    cross_check: bool,
}

#[derive(Args, Debug)]
struct GenSignalArgs {
    #[command(flatten)]
    common: Common,
    /// Signal file to write; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Schema { .. } | Error::Config(_) | Error::DimensionOverflow { .. } => EXIT_INPUT,
            Error::AssumptionViolation(_)
            | Error::Certificate { .. }
            | Error::UnboundedCertificate(_) => EXIT_CERTIFICATE,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type CmdResult = Result<(), Failure>;

fn load(common: &Common, signal: Option<&Path>) -> Result<Scenario, Failure> {
    let mut scenario = Scenario::load(&common.scenario)?;
    if let Some(path) = signal {
        scenario.signal = SignalSpec::load(path)?;
        scenario.check()?;
    }
    Ok(scenario)
}

fn seed_of(common: &Common, scenario: &Scenario) -> u64 {
    common.seed.unwrap_or(scenario.simulation.seed)
}

fn write_json_to<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> CmdResult {
    fs::create_dir_all(dir)?;
    export::write_json(value, &dir.join(name))?;
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> CmdResult {
    let scenario = load(&args.common, None)?;
    let model = scenario.model_with_seed(seed_of(&args.common, &scenario))?;
    let (report, _) = analyze(&scenario, &model)?;
    if args.json {
        print!("{}", export::to_json(&report)?);
    } else {
        print!("{}", report.table());
    }
    if let Some(dir) = &args.out {
        write_json_to(dir, "analysis.json", &report)?;
    }
    Ok(())
}

fn cmd_certify(args: &CertifyArgs) -> CmdResult {
    let scenario = load(&args.common, args.signal.as_deref())?;
    let model = scenario.model_with_seed(seed_of(&args.common, &scenario))?;
    let (analysis, matrices) = analyze(&scenario, &model)?;
    if !analysis.certifiable() {
        let mut reasons = Vec::new();
        for (name, a) in [
            ("assumption 1", &analysis.assumption1),
            ("assumption 2", &analysis.assumption2),
        ] {
            if !a.holds {
                reasons.push(format!("{name}: {}", a.detail));
            }
        }
        if !analysis.rho_valid {
            reasons.push(format!(
                "gain rho = {} outside the admissible range",
                analysis.rho
            ));
        }
        return Err(Error::AssumptionViolation(reasons.join("; ")).into());
    }
    let certified = certify(
        &scenario,
        &model,
        &matrices,
        args.validate_suffixes.map(Into::into),
    )?;
    let report = &certified.report;
    let calibration = if args.calibrate {
        let target = match (args.target_ratio, args.target_adt) {
            (Some(ratio), Some(adt)) => CalibrationTarget { ratio, adt },
            _ => scenario.certification.calibration_target.ok_or_else(|| {
                Error::Config("--calibrate needs --target-ratio/--target-adt or certification.calibration_target".into())
            })?,
        };
        Some(calibrate_report(&matrices, target)?)
    } else {
        None
    };

    if args.json {
        print!("{}", export::to_json(report)?);
    } else {
        let b = &report.bundle;
        let v = &report.validation;
        println!(
            "stable modes: {:?}",
            analysis
                .stable_modes
                .iter()
                .map(|m| m.0)
                .collect::<Vec<_>>()
        );
        println!("mu = {:.6}, gamma_tilde = {:.6}", b.mu, b.gamma_tilde);
        println!(
            "ratio lower bound = {:.4}, adt lower bound = {:.4}",
            b.ratio_lower_bound, b.adt_lower_bound
        );
        match b.epsilon {
            Some(eps) => println!("epsilon = {eps:.6e}"),
            None => println!("epsilon = unbounded"),
        }
        println!(
            "signal ({} switches, {:?} suffixes): {}",
            report.signal.segments.len().saturating_sub(1),
            report.suffixes,
            if v.ok { "valid" } else { "INVALID" }
        );
        if !v.ok {
            println!(
                "binding suffix: ratio j = {} (slack {:.4e}), dwell j = {} (slack {:.4e})",
                v.worst_j_ratio, v.min_ratio_slack, v.worst_j_adt, v.min_adt_slack
            );
        }
        if let Some(c) = &calibration {
            let cal = &c.calibration;
            println!(
                "calibration: ratio {:.3} vs {} ({:.1}%), adt {:.3} vs {} ({:.1}%)",
                cal.ratio_lower_bound,
                cal.target.ratio,
                100.0 * cal.ratio_rel_err,
                cal.adt_lower_bound,
                cal.target.adt,
                100.0 * cal.adt_rel_err
            );
        }
    }
    if let Some(dir) = &args.out {
        write_json_to(dir, "certificate.json", report)?;
        if let Some(c) = &calibration {
            write_json_to(dir, "calibration.json", c)?;
        }
    }
    if args.strict && !report.validation.ok {
        return Err(Failure {
            code: EXIT_CERTIFICATE,
            message: "switching signal fails validation".into(),
        });
    }
    Ok(())
}

fn simulate_one(
    scenario: &Scenario,
    seed: u64,
    args: &SimulateArgs,
    dir: &Path,
) -> Result<RunOutput, Error> {
    let overrides = RunOverrides {
        seed: Some(seed),
        dt: args.dt,
        cross_check: args.cross_check,
    };
    let out = run_scenario(scenario, &overrides)?;
    write_run(dir, &out.trajectory, out.lyapunov.as_ref(), &out.report)?;
    Ok(out)
}

fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let scenario = load(&args.common, args.signal.as_deref())?;
    let seed = seed_of(&args.common, &scenario);
    let runs: Vec<(u64, PathBuf)> = match args.sweep {
        None => vec![(seed, args.out.clone())],
        Some(n) => (0..n.max(1))
            .map(|i| (seed + i, args.out.join(format!("seed-{}", seed + i))))
            .collect(),
    };
    let results: Vec<Result<RunOutput, Error>> = std::thread::scope(|s| {
        let handles: Vec<_> = runs
            .iter()
            .map(|(seed, dir)| s.spawn(|| simulate_one(&scenario, *seed, args, dir)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });

    let mut summaries = Vec::with_capacity(results.len());
    let mut diverged = false;
    for r in results {
        let out = r?;
        let s = &out.report.summary;
        diverged |= s.diverged_at.is_some();
        println!(
            "seed {}: {} switches, tail sup error {:.4e}, epsilon {}, converged {}, bound respected {}",
            s.seed,
            s.n_switches,
            s.tail_sup_error,
            s.epsilon.map_or("none".into(), |e| format!("{e:.4e}")),
            s.converged,
            s.bound_respected.map_or("n/a".into(), |b| b.to_string()),
        );
        if let Some(t) = s.diverged_at {
            println!("seed {}: diverged at t = {t}", s.seed);
        }
        summaries.push(out.report.summary);
    }
    if args.sweep.is_some() {
        write_json_to(&args.out, "sweep.json", &summaries)?;
    }
    if args.strict && diverged {
        return Err(Failure {
            code: EXIT_DIVERGED,
            message: "simulation diverged".into(),
        });
    }
    Ok(())
}

fn cmd_gen_signal(args: &GenSignalArgs) -> CmdResult {
    let scenario = load(&args.common, None)?;
    if !matches!(scenario.signal, SignalSpec::Generate { .. }) {
        return Err(Error::Config("scenario signal must be of kind \"generate\"".into()).into());
    }
    let model = scenario.model_with_seed(seed_of(&args.common, &scenario))?;
    let (_, matrices) = analyze(&scenario, &model)?;
    let certified = certify(&scenario, &model, &matrices, None)?;
    let sig = &certified.signal;
    let spec = SignalSpec::Explicit {
        t0: sig.t0,
        tf: sig.tf,
        segments: sig.segments.clone(),
    };
    let text = export::to_json(&spec)?;
    match &args.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, text)?;
            let v = &certified.report.validation;
            eprintln!(
                "{} segments over [{}, {}], ratio bound {:.4}, adt bound {:.4}, valid {}",
                sig.segments.len(),
                sig.t0,
                sig.tf,
                v.ratio_lower_bound,
                v.adt_lower_bound,
                v.ok
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::GenSignal(a) => cmd_gen_signal(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
