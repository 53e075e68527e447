use serde::Serialize;

use super::{Case, ConsensusModel, Expectation, Model, PowerModel, ProtocolConfig, ScenarioError};
use crate::equilibrium::{power_steady_state, predict_pi_average};
use crate::functions::{GainReport, InteractionReport, Method};
use crate::power::{
    rad_to_hz, step_load_experiment, ControllerMode, LoadStep, PowerNetwork, PowerTrajectory,
};
use crate::protocols::{ProtocolKind, ProtocolSpec};
use crate::simulate::{disagreement_diameter, run, Trajectory};
use crate::stability::{
    classify_pi_double, classify_pi_single, classify_power_centralized, classify_power_decentralized, StabilityError,
    StabilityReport,
};
use crate::Error;

/// Result of running one case.
#[derive(Debug, Clone)]
pub enum CaseOutput {
    Consensus { spec: ProtocolSpec<f64>, trajectory: Trajectory<f64> },
    Power { network: PowerNetwork, steps: Vec<LoadStep>, trajectory: PowerTrajectory },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Prediction {
    /// `quantity` is `x*`, `v*` or `mean(x0)`.
    Consensus { quantity: &'static str, value: f64, residual: f64, method: Method },
    /// Decentralized integral states and bus frequency after all load steps.
    Power { z0: Vec<f64>, omega0_hz: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub case: String,
    pub expectation: Expectation,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub case: String,
    pub connected: bool,
    pub gains: Vec<GainReport<f64>>,
    pub interactions: Vec<InteractionReport<f64>>,
    pub ok: bool,
}

fn consensus_spec(m: &ConsensusModel) -> Result<ProtocolSpec<f64>, Error> {
    m.protocol.build(m.graph.build()?)
}

fn power_parts(case: &Case, p: &PowerModel) -> Result<(PowerNetwork, Vec<LoadStep>), Error> {
    Ok((p.load_network(case.base_dir.as_deref())?, p.load_steps()?))
}

pub fn run_case(case: &Case) -> Result<CaseOutput, Error> {
    match &case.model {
        Model::Consensus(m) => {
            let spec = consensus_spec(m)?;
            let trajectory = run(&spec, &m.x0, m.v0.as_deref(), &m.run)?;
            Ok(CaseOutput::Consensus { spec, trajectory })
        }
        Model::Power(p) => {
            let (network, steps) = power_parts(case, p)?;
            let trajectory = step_load_experiment(&network, &p.controller, &steps, &p.experiment)?;
            Ok(CaseOutput::Power { network, steps, trajectory })
        }
    }
}

fn pi_disturbance_free(m: &ConsensusModel) -> bool {
    match &m.protocol {
        ProtocolConfig::PiSingle { disturbance, .. } | ProtocolConfig::PiDouble { disturbance, .. } => {
            disturbance.as_ref().is_none_or(|d| d.iter().all(|&x| x == 0.0))
        }
        _ => false,
    }
}

/// Consensus value from the conservation laws, or the decentralized power steady state.
pub fn predict_case(case: &Case) -> Result<Prediction, Error> {
    match &case.model {
        Model::Consensus(m) => {
            let spec = consensus_spec(m)?;
            let v0 = m.v0.clone().unwrap_or_else(|| vec![0.0; m.x0.len()]);
            let (quantity, p) = match spec.kind() {
                ProtocolKind::FirstOrderNonlinear => ("x*", crate::equilibrium::predict_first_order(spec.gains(), &m.x0)?),
                ProtocolKind::SecondOrderNonlinear => {
                    ("v*", crate::equilibrium::predict_second_order_velocity(spec.gains(), &v0)?)
                }
                ProtocolKind::SecondOrderDamped => {
                    ("x*", crate::equilibrium::predict_damped_position(spec.gains(), &m.x0, &v0)?)
                }
                ProtocolKind::PiSingle | ProtocolKind::PiDouble => {
                    let anchored = spec.pi_gains().is_some_and(|g| g.delta > 0.0);
                    let at_rest = v0.iter().all(|&v| v == 0.0);
                    if !pi_disturbance_free(m) || !(anchored || at_rest) {
                        return Err(ScenarioError::Invalid(
                            "the PI consensus value is predicted only without disturbance, with delta > 0 or v0 = 0"
                                .into(),
                        )
                        .into());
                    }
                    let value = predict_pi_average(&m.x0);
                    return Ok(Prediction::Consensus { quantity: "mean(x0)", value, residual: 0.0, method: Method::ClosedForm });
                }
            };
            Ok(Prediction::Consensus { quantity, value: p.value, residual: p.residual, method: p.method })
        }
        Model::Power(p) => {
            let (net, steps) = power_parts(case, p)?;
            let (z0, w0) = power_steady_state(&net.with_loads_applied(&steps), p.controller.b, p.controller.omega_ref())?;
            Ok(Prediction::Power { z0, omega0_hz: rad_to_hz(w0[0]) })
        }
    }
}

pub fn stability_case(case: &Case) -> Result<StabilityReport<f64>, Error> {
    match &case.model {
        Model::Consensus(m) => {
            let graph = m.graph.build()?;
            match m.protocol {
                ProtocolConfig::PiSingle { a, b, .. } => Ok(classify_pi_single(&graph, a, b)?),
                ProtocolConfig::PiDouble { a, b, gamma, .. } => Ok(classify_pi_double(&graph, a, b, gamma)?),
                _ => Err(StabilityError::UnsupportedKind(consensus_spec(m)?.kind()).into()),
            }
        }
        Model::Power(p) => {
            let (net, _) = power_parts(case, p)?;
            let c = &p.controller;
            Ok(match c.mode {
                ControllerMode::Centralized => classify_power_centralized(&net, c.a, c.b)?,
                ControllerMode::Decentralized => classify_power_decentralized(&net, c.a, c.b)?,
            })
        }
    }
}

/// Sampled assumption checks on every gain and interaction, plus connectivity.
pub fn validate_case(case: &Case) -> Result<ValidationReport, Error> {
    let label = case.label();
    match &case.model {
        Model::Consensus(m) => {
            let graph = m.graph.build()?;
            let (n, e) = (graph.n(), graph.edge_count());
            let connected = graph.is_connected();
            let (gains, inter) = match &m.protocol {
                ProtocolConfig::FirstOrder { gains, a } => (gains.expand(n, "gains")?, a.expand(e, "a")?),
                ProtocolConfig::SecondOrder { gains, a, b } => {
                    let mut i = a.expand(e, "a")?;
                    i.extend(b.expand(e, "b")?);
                    (gains.expand(n, "gains")?, i)
                }
                ProtocolConfig::Damped { dampings, a } => (dampings.expand(n, "dampings")?, a.expand(e, "a")?),
                ProtocolConfig::PiSingle { .. } | ProtocolConfig::PiDouble { .. } => (Vec::new(), Vec::new()),
            };
            for f in gains.iter().chain(&inter) {
                f.check()?;
            }
            let gains: Vec<_> = gains.iter().map(|g| g.validate_gain_default()).collect();
            let interactions: Vec<_> = inter.iter().map(|f| f.validate_interaction_default()).collect();
            let mut ok = connected && gains.iter().all(|g| g.ok) && interactions.iter().all(InteractionReport::ok);
            if ok && matches!(m.protocol, ProtocolConfig::PiSingle { .. } | ProtocolConfig::PiDouble { .. }) {
                ok = consensus_spec(m).is_ok();
            }
            Ok(ValidationReport { case: label, connected, gains, interactions, ok })
        }
        Model::Power(p) => {
            let (net, _) = power_parts(case, p)?;
            let connected = net.graph().is_connected();
            Ok(ValidationReport { case: label, connected, gains: Vec::new(), interactions: Vec::new(), ok: connected })
        }
    }
}

fn outcome(case: &Case, e: &Expectation, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { case: case.label(), expectation: e.clone(), passed, detail }
}

fn not_applicable(case: &Case, e: &Expectation, what: &str) -> CheckOutcome {
    outcome(case, e, false, format!("not applicable to {what} models"))
}

/// Runs the case once and evaluates every expectation against the result.
pub fn check_case(case: &Case) -> Result<Vec<CheckOutcome>, Error> {
    let out = run_case(case)?;
    case.expect.iter().map(|e| evaluate(case, &out, e)).collect()
}

fn evaluate(case: &Case, out: &CaseOutput, e: &Expectation) -> Result<CheckOutcome, Error> {
    if let Expectation::StabilityClass { class } = e {
        let report = stability_case(case)?;
        let detail = format!("classified {} with margin {:e}", report.classification, report.margin);
        return Ok(outcome(case, e, report.classification == *class, detail));
    }
    match out {
        CaseOutput::Consensus { spec, trajectory } => evaluate_consensus(case, spec, trajectory, e),
        CaseOutput::Power { network, steps, trajectory } => Ok(evaluate_power(case, network, steps, trajectory, e)),
    }
}

fn evaluate_consensus(
    case: &Case,
    spec: &ProtocolSpec<f64>,
    tr: &Trajectory<f64>,
    e: &Expectation,
) -> Result<CheckOutcome, Error> {
    let last = tr.final_state();
    let diam = disagreement_diameter(&last.x);
    Ok(match e {
        Expectation::Converged => {
            outcome(case, e, tr.status.is_converged(), format!("status {:?}, final diameter {diam:e}", tr.status))
        }
        Expectation::Diverged => outcome(case, e, tr.status.is_diverged(), format!("status {:?}", tr.status)),
        Expectation::DiameterAbove { min } => {
            let ok = diam.is_finite() && diam > *min && !tr.status.is_diverged();
            outcome(case, e, ok, format!("final diameter {diam:e}"))
        }
        Expectation::MaxStateAtMost { agents, bound } => {
            if let Some(&bad) = agents.iter().find(|&&a| a == 0 || a > tr.n) {
                return Err(ScenarioError::Invalid(format!("agent {bad} out of range 1..{}", tr.n)).into());
            }
            let peak = tr
                .states
                .iter()
                .flat_map(|s| agents.iter().map(move |&a| s.x[a - 1]))
                .fold(f64::NEG_INFINITY, f64::max);
            outcome(case, e, peak <= *bound, format!("maximum {peak:.6} over {} samples", tr.states.len()))
        }
        Expectation::FinalBelow { bound } => {
            let top = last.x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            outcome(case, e, top < *bound, format!("largest final position {top:.6}"))
        }
        Expectation::MatchesPrediction { tol } => {
            let Prediction::Consensus { value, .. } = predict_case(case)? else { unreachable!("consensus prediction") };
            let finals = match spec.kind() {
                ProtocolKind::SecondOrderNonlinear => last.v.clone().unwrap_or_default(),
                _ => last.x.clone(),
            };
            let err = finals.iter().map(|f| (f - value).abs()).fold(0.0, f64::max);
            outcome(case, e, err <= *tol, format!("prediction {value:.9}, worst final error {err:e}"))
        }
        Expectation::Conserved { channel, rel_tol } => match tr.channel(channel) {
            None => outcome(case, e, false, format!("no `{channel}` channel for {:?}", tr.kind)),
            Some(c) => {
                let c0 = c.samples.first().copied().unwrap_or(0.0);
                let drift = c.max_drift();
                let limit = rel_tol * (1.0 + c0.abs());
                outcome(case, e, drift <= limit, format!("drift {drift:e}, allowed {limit:e}"))
            }
        },
        Expectation::LyapunovNonIncreasing { rel_tol } => match tr.channel("V") {
            None => outcome(case, e, false, format!("no Lyapunov channel for {:?}", tr.kind)),
            Some(c) => {
                let worst = c.worst_increase(*rel_tol);
                outcome(case, e, c.is_non_increasing(*rel_tol), format!("worst excess increase {worst:e}"))
            }
        },
        Expectation::FrequencyRestored { .. } | Expectation::SteadyStateMatches { .. } => {
            not_applicable(case, e, "consensus")
        }
        Expectation::StabilityClass { .. } => unreachable!("handled before dispatch"),
    })
}

fn evaluate_power(
    case: &Case,
    net: &PowerNetwork,
    steps: &[LoadStep],
    tr: &PowerTrajectory,
    e: &Expectation,
) -> CheckOutcome {
    match e {
        Expectation::FrequencyRestored { tol_hz } => {
            let err = tr.final_frequency_error_hz();
            outcome(case, e, err <= *tol_hz, format!("worst final deviation {err:e} Hz at t = {:.4e} s", tr.metadata.t_end))
        }
        Expectation::SteadyStateMatches { tol } => {
            if tr.metadata.mode != ControllerMode::Decentralized {
                return outcome(case, e, false, "closed-form steady state exists for the decentralized controller".into());
            }
            let Model::Power(p) = &case.model else { unreachable!("power output from a power model") };
            let applied: Vec<LoadStep> = steps.iter().copied().filter(|s| s.t_step <= tr.metadata.t_end).collect();
            match power_steady_state(&net.with_loads_applied(&applied), p.controller.b, p.controller.omega_ref()) {
                Err(err) => outcome(case, e, false, err.to_string()),
                Ok((z0, _)) => {
                    let z = tr.aux.last().expect("non-empty trajectory");
                    let err = z.iter().zip(&z0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    outcome(case, e, err <= *tol, format!("worst |z - z0| = {err:e}"))
                }
            }
        }
        _ => not_applicable(case, e, "power"),
    }
}
