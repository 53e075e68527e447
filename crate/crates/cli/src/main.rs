use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use netcon::power::{hz_to_rad, ingest_network, power_steady_state, rad_to_hz, PowerNetwork};
use netcon::scenarios::{
    check_case, predict_case, resolve, run_case, stability_case, validate_case, Case, CaseOutput, CheckOutcome,
    Model, Scenario, ScenarioError,
};
use netcon::simulate::RunStatus;
use netcon::stability::classify_power_decentralized;
use netcon::{Error, EXIT_ASSERTION, EXIT_NUMERICAL, EXIT_OK};

#[derive(Parser)]
#[command(name = "netcon", version, about = "Consensus, distributed PI and power-frequency scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Target {
    /// Builtin scenario name (building, satellites, robots, power6) or path to a scenario JSON file.
    scenario: String,
    /// Variant name, e.g. `a=1`.
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trajectory CSV and a JSON sidecar.
    Simulate {
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Integration step (consensus models only).
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
        /// Number of output samples (power models only).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Print the predicted consensus value or power steady state.
    Predict {
        #[command(flatten)]
        target: Target,
    },
    /// Print the stability report as JSON.
    Stability {
        #[command(flatten)]
        target: Target,
    },
    /// Power-network utilities.
    Power {
        #[command(subcommand)]
        command: PowerCommand,
    },
    /// Run the scenario's expected-outcome assertions; exit 0 only if all pass.
    Check {
        /// Scenario name or file; omit with --all.
        #[arg(required_unless_present = "all")]
        scenario: Option<String>,
        #[arg(long, conflicts_with = "all")]
        variant: Option<String>,
        /// Check every builtin scenario.
        #[arg(long)]
        all: bool,
    },
    /// Report gain and interaction assumption checks without running.
    Validate {
        #[command(flatten)]
        target: Target,
    },
}

#[derive(Subcommand)]
enum PowerCommand {
    /// Decentralized steady state `z0` and frequency for a network file (or `sample`).
    SteadyState {
        network: String,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        b: f64,
        /// Reference frequency, Hz.
        #[arg(long, default_value_t = 50.0)]
        omega_ref: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serialises"));
}

fn load(target: &Target) -> Result<(Scenario, Case), Error> {
    let scenario = resolve(&target.scenario)?;
    let case = scenario.single_case(target.variant.as_deref())?;
    Ok((scenario, case))
}

fn dispatch(command: Command) -> Result<i32, Error> {
    match command {
        Command::Simulate { target, out, h, t_end, samples } => simulate(&target, &out, h, t_end, samples),
        Command::Predict { target } => {
            let (_, case) = load(&target)?;
            print_json(&json!({ "case": case.label(), "prediction": predict_case(&case)? }));
            Ok(EXIT_OK)
        }
        Command::Stability { target } => {
            let (_, case) = load(&target)?;
            print_json(&json!({ "case": case.label(), "report": stability_case(&case)? }));
            Ok(EXIT_OK)
        }
        Command::Power { command: PowerCommand::SteadyState { network, a, b, omega_ref } } => {
            steady_state(&network, a, b, omega_ref)
        }
        Command::Check { scenario, variant, all } => check(scenario.as_deref(), variant.as_deref(), all),
        Command::Validate { target } => {
            let scenario = resolve(&target.scenario)?;
            let cases = match &target.variant {
                Some(v) => vec![scenario.case(Some(v))?],
                None => scenario.cases()?,
            };
            let reports = cases.iter().map(validate_case).collect::<Result<Vec<_>, _>>()?;
            let ok = reports.iter().all(|r| r.ok);
            print_json(&serde_json::to_value(&reports).expect("reports serialise"));
            Ok(if ok { EXIT_OK } else { EXIT_ASSERTION })
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| ScenarioError::Io { path: path.to_path_buf(), source }.into()
}

fn simulate(target: &Target, out: &Path, h: Option<f64>, t_end: Option<f64>, samples: Option<usize>) -> Result<i32, Error> {
    let (_, mut case) = load(target)?;
    match &mut case.model {
        Model::Consensus(m) => {
            if samples.is_some() {
                return Err(ScenarioError::Invalid("--samples applies to power models; use --h".into()).into());
            }
            if let Some(h) = h {
                m.run.h = h;
            }
            if let Some(t) = t_end {
                m.run.t_end = t;
            }
        }
        Model::Power(p) => {
            if h.is_some() {
                return Err(ScenarioError::Invalid("--h applies to consensus models; use --samples".into()).into());
            }
            if let Some(t) = t_end {
                p.experiment.t_end = Some(t);
            }
            if let Some(s) = samples {
                p.experiment.samples = s;
            }
        }
    }
    let output = run_case(&case)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let csv_path = out.join(format!("{}.csv", case.slug()));
    let json_path = out.join(format!("{}.json", case.slug()));
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    let mut writer = std::io::BufWriter::new(file);
    let (sidecar, code) = match &output {
        CaseOutput::Consensus { trajectory, .. } => {
            trajectory.write_csv(&mut writer).map_err(io_err(&csv_path))?;
            let code = if matches!(trajectory.status, RunStatus::Failed { .. }) { EXIT_NUMERICAL } else { EXIT_OK };
            let sidecar = json!({
                "case": case.label(),
                "kind": trajectory.kind,
                "status": trajectory.status,
                "final_time": trajectory.final_time(),
                "prediction": trajectory.prediction,
                "model": case.model,
            });
            (sidecar, code)
        }
        CaseOutput::Power { trajectory, .. } => {
            trajectory.write_csv(&mut writer).map_err(io_err(&csv_path))?;
            let sidecar = json!({
                "case": case.label(),
                "metadata": trajectory.metadata,
                "final_frequency_error_hz": trajectory.final_frequency_error_hz(),
                "model": case.model,
            });
            (sidecar, EXIT_OK)
        }
    };
    writer.flush().map_err(io_err(&csv_path))?;
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serialises");
    fs::write(&json_path, text).map_err(io_err(&json_path))?;
    println!("{}: wrote {} and {}", case.label(), csv_path.display(), json_path.display());
    Ok(code)
}

fn steady_state(network: &str, a: f64, b: f64, omega_ref_hz: f64) -> Result<i32, Error> {
    let (net, warnings) = if network == "sample" {
        (PowerNetwork::sample(), Vec::new())
    } else {
        let ingested = ingest_network(Path::new(network))?;
        (ingested.network, ingested.warnings)
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let (z0, omega0) = power_steady_state(&net, b, hz_to_rad(omega_ref_hz))?;
    let report = classify_power_decentralized(&net, a, b)?;
    print_json(&json!({
        "buses": net.n(),
        "z0": z0,
        "omega0_hz": rad_to_hz(omega0[0]),
        "classification": report.classification,
        "margin": report.margin,
    }));
    Ok(EXIT_OK)
}

fn check(scenario: Option<&str>, variant: Option<&str>, all: bool) -> Result<i32, Error> {
    let cases: Vec<Case> = if all {
        let mut cases = Vec::new();
        for s in netcon::scenarios::builtin_scenarios() {
            cases.extend(s.cases()?);
        }
        cases
    } else {
        let s = resolve(scenario.expect("clap requires a scenario without --all"))?;
        match variant {
            Some(v) => vec![s.case(Some(v))?],
            None => s.cases()?,
        }
    };
    // Cases are independent; run them side by side and report in order.
    let results: Vec<Result<Vec<CheckOutcome>, Error>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cases.iter().map(|c| scope.spawn(move || check_case(c))).collect();
        handles.into_iter().map(|h| h.join().expect("check thread panicked")).collect()
    });
    let mut failed = 0;
    for result in results {
        for o in result? {
            let tag = if o.passed { "PASS" } else { "FAIL" };
            let what = serde_json::to_value(&o.expectation).expect("expectation serialises");
            println!("{tag} {} {}: {}", o.case, what["check"].as_str().unwrap_or("?"), o.detail);
            failed += usize::from(!o.passed);
        }
    }
    Ok(if failed == 0 { EXIT_OK } else { EXIT_ASSERTION })
}
