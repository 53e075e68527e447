//! Named scenarios: a model, initial conditions, run settings and the outcomes they must show.
//!
//! Scenarios are JSON documents carrying a `version` field. The four built-in ones are
//! embedded from `scenarios/*.json`.

mod check;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::functions::ScalarFn;
use crate::graph::Graph;
use crate::numerics::StabilityClass;
use crate::power::{ingest_network, ExperimentConfig, FreqController, LoadStep, PowerNetwork};
use crate::protocols::ProtocolSpec;
use crate::simulate::RunConfig;
use crate::Error;

pub use check::{check_case, predict_case, run_case, stability_case, validate_case, CaseOutput, CheckOutcome, Prediction, ValidationReport};

pub const CONFIG_VERSION: u32 = 1;

const BUILTIN_SOURCES: [(&str, &str); 4] = [
    ("building", include_str!("../../scenarios/building.json")),
    ("satellites", include_str!("../../scenarios/satellites.json")),
    ("robots", include_str!("../../scenarios/robots.json")),
    ("power6", include_str!("../../scenarios/power6.json")),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported scenario version {found} (expected {CONFIG_VERSION})")]
    Version { found: u32 },
    #[error("no scenario named `{0}` and no such file")]
    Unknown(String),
    #[error("scenario `{scenario}` has no variant `{variant}`")]
    UnknownVariant { scenario: String, variant: String },
    #[error("{0}")]
    Invalid(String),
}

/// A list of functions, or one function used for every agent or edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FnList {
    Uniform(ScalarFn<f64>),
    Each(Vec<ScalarFn<f64>>),
}

impl FnList {
    pub fn expand(&self, count: usize, what: &str) -> Result<Vec<ScalarFn<f64>>, ScenarioError> {
        match self {
            Self::Uniform(f) => Ok(vec![f.clone(); count]),
            Self::Each(v) if v.len() == count => Ok(v.clone()),
            Self::Each(v) => Err(ScenarioError::Invalid(format!("{what}: {} entries for {count} items", v.len()))),
        }
    }
}

/// Undirected graph with 1-based vertex numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Display names, one per vertex.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl GraphConfig {
    pub fn build(&self) -> Result<Graph<f64>, Error> {
        let mut edges = Vec::with_capacity(self.edges.len());
        for &[i, j] in &self.edges {
            if i == 0 || j == 0 {
                return Err(ScenarioError::Invalid(format!("edge ({i},{j}): vertices are numbered from 1")).into());
            }
            edges.push((i - 1, j - 1));
        }
        Ok(match &self.weights {
            Some(w) => Graph::with_weights(self.n, edges, w.clone())?,
            None => Graph::new(self.n, edges)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolConfig {
    FirstOrder {
        gains: FnList,
        a: FnList,
    },
    SecondOrder {
        gains: FnList,
        a: FnList,
        b: FnList,
    },
    Damped {
        dampings: FnList,
        a: FnList,
    },
    PiSingle {
        a: f64,
        b: f64,
        #[serde(default)]
        delta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        disturbance: Option<Vec<f64>>,
    },
    PiDouble {
        a: f64,
        b: f64,
        gamma: f64,
        #[serde(default)]
        delta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        disturbance: Option<Vec<f64>>,
    },
}

impl ProtocolConfig {
    pub fn build(&self, graph: Graph<f64>) -> Result<ProtocolSpec<f64>, Error> {
        let (n, m) = (graph.n(), graph.edge_count());
        let (spec, d) = match self {
            Self::FirstOrder { gains, a } => {
                (ProtocolSpec::first_order(graph, gains.expand(n, "gains")?, a.expand(m, "a")?)?, None)
            }
            Self::SecondOrder { gains, a, b } => (
                ProtocolSpec::second_order(graph, gains.expand(n, "gains")?, a.expand(m, "a")?, b.expand(m, "b")?)?,
                None,
            ),
            Self::Damped { dampings, a } => {
                (ProtocolSpec::damped(graph, dampings.expand(n, "dampings")?, a.expand(m, "a")?)?, None)
            }
            Self::PiSingle { a, b, delta, disturbance } => {
                (ProtocolSpec::pi_single(graph, *a, *b, *delta)?, disturbance.clone())
            }
            Self::PiDouble { a, b, gamma, delta, disturbance } => {
                (ProtocolSpec::pi_double(graph, *a, *b, *gamma, *delta)?, disturbance.clone())
            }
        };
        Ok(match d {
            Some(d) => spec.with_disturbance(d)?,
            None => spec,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusModel {
    pub graph: GraphConfig,
    pub protocol: ProtocolConfig,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<Vec<f64>>,
    pub run: RunConfig,
}

/// Where the power network comes from: `"sample"` or `{"file": "path.csv"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkSource {
    Sample,
    File(PathBuf),
}

/// Load increase at a 1-based bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub bus: usize,
    /// W.
    pub delta_p: f64,
    /// s.
    pub t_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub network: NetworkSource,
    pub controller: FreqController,
    pub steps: Vec<StepConfig>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl PowerModel {
    /// Relative file paths are taken relative to `base`.
    pub fn load_network(&self, base: Option<&Path>) -> Result<PowerNetwork, Error> {
        Ok(match &self.network {
            NetworkSource::Sample => PowerNetwork::sample(),
            NetworkSource::File(p) => {
                let path = match base {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                ingest_network(&path)?.network
            }
        })
    }

    pub fn load_steps(&self) -> Result<Vec<LoadStep>, ScenarioError> {
        self.steps
            .iter()
            .map(|s| {
                if s.bus == 0 {
                    Err(ScenarioError::Invalid("load step buses are numbered from 1".into()))
                } else {
                    Ok(LoadStep { bus: s.bus - 1, delta_p: s.delta_p, t_step: s.t_step })
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Model {
    Consensus(ConsensusModel),
    Power(PowerModel),
}

/// A machine-checkable outcome. Agent numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Expectation {
    /// The diameter (positions, plus velocities if the run's metric says so) stays under tolerance.
    Converged,
    /// The run hits the divergence cap.
    Diverged,
    /// Final position diameter above `min`.
    DiameterAbove { min: f64 },
    /// Classification of the deflated closed loop.
    StabilityClass { class: StabilityClass },
    /// Every recorded position of the listed agents is at most `bound`.
    MaxStateAtMost { agents: Vec<usize>, bound: f64 },
    /// Every final position is below `bound`.
    FinalBelow { bound: f64 },
    /// Final positions (or velocities, for the second-order law) within `tol` of the prediction.
    MatchesPrediction { tol: f64 },
    /// Drift of a conserved channel at most `rel_tol (1 + |initial|)`.
    Conserved { channel: String, rel_tol: f64 },
    /// The Lyapunov channel never increases by more than `rel_tol` relative.
    LyapunovNonIncreasing { rel_tol: f64 },
    /// Every bus within `tol_hz` of the reference at the end of the run.
    FrequencyRestored { tol_hz: f64 },
    /// Final decentralized integral states within `tol` of the closed-form steady state.
    SteadyStateMatches { tol: f64 },
}

/// A named modification of the base model: a JSON merge patch plus extra expectations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub patch: Value,
    #[serde(default)]
    pub expect: Vec<Expectation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub model: Model,
    /// Checked for every case.
    #[serde(default)]
    pub expect: Vec<Expectation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<Variant>,
    /// Variant used by commands that run a single case when none is named.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_variant: Option<String>,
    /// Directory that relative paths in the model are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// One concrete run: the base model with at most one variant applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub scenario: String,
    pub variant: Option<String>,
    pub model: Model,
    pub expect: Vec<Expectation>,
    pub base_dir: Option<PathBuf>,
}

impl Case {
    /// `scenario` or `scenario[variant]`.
    pub fn label(&self) -> String {
        match &self.variant {
            Some(v) => format!("{}[{v}]", self.scenario),
            None => self.scenario.clone(),
        }
    }

    /// File-name-safe form of the label.
    pub fn slug(&self) -> String {
        let raw = match &self.variant {
            Some(v) => format!("{}_{v}", self.scenario),
            None => self.scenario.clone(),
        };
        raw.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
    }
}

/// RFC 7386 merge: objects merge key by key, `null` deletes, anything else replaces.
fn merge_patch(target: &mut Value, patch: &Value) {
    match (target, patch) {
        (Value::Object(t), Value::Object(p)) => {
            for (k, v) in p {
                if v.is_null() {
                    t.remove(k);
                } else {
                    merge_patch(t.entry(k.clone()).or_insert(Value::Null), v);
                }
            }
        }
        (t, p) => *t = p.clone(),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let raw: Value = serde_json::from_str(text)?;
        let version = raw.get("version").and_then(Value::as_u64).ok_or_else(|| {
            ScenarioError::Invalid("missing integer field `version`".into())
        })?;
        if version != u64::from(CONFIG_VERSION) {
            return Err(ScenarioError::Version { found: version.try_into().unwrap_or(u32::MAX) });
        }
        Ok(serde_json::from_value(raw)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        let mut s = Self::from_json(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    pub fn variant_names(&self) -> Vec<&str> {
        self.variants.iter().map(|v| v.name.as_str()).collect()
    }

    /// The base model with `variant` applied.
    pub fn case(&self, variant: Option<&str>) -> Result<Case, ScenarioError> {
        let Some(name) = variant else {
            return Ok(Case {
                scenario: self.name.clone(),
                variant: None,
                model: self.model.clone(),
                expect: self.expect.clone(),
                base_dir: self.base_dir.clone(),
            });
        };
        let v = self.variants.iter().find(|v| v.name == name).ok_or_else(|| ScenarioError::UnknownVariant {
            scenario: self.name.clone(),
            variant: name.to_string(),
        })?;
        let mut model = serde_json::to_value(&self.model)?;
        merge_patch(&mut model, &v.patch);
        let model: Model = serde_json::from_value(model)?;
        let mut expect = self.expect.clone();
        expect.extend(v.expect.iter().cloned());
        Ok(Case {
            scenario: self.name.clone(),
            variant: Some(v.name.clone()),
            model,
            expect,
            base_dir: self.base_dir.clone(),
        })
    }

    /// Every case: the base alone if there are no variants, otherwise one per variant.
    pub fn cases(&self) -> Result<Vec<Case>, ScenarioError> {
        if self.variants.is_empty() {
            Ok(vec![self.case(None)?])
        } else {
            self.variants.iter().map(|v| self.case(Some(&v.name))).collect()
        }
    }

    /// The named variant, else the default variant, else the first one, else the base.
    pub fn single_case(&self, variant: Option<&str>) -> Result<Case, ScenarioError> {
        let pick = variant.or(self.default_variant.as_deref()).or(self.variants.first().map(|v| v.name.as_str()));
        self.case(pick)
    }
}

pub fn builtin_scenarios() -> Vec<Scenario> {
    BUILTIN_SOURCES
        .iter()
        .map(|(name, src)| {
            let s = Scenario::from_json(src).unwrap_or_else(|e| panic!("builtin scenario {name}: {e}"));
            debug_assert_eq!(&s.name, name);
            s
        })
        .collect()
}

pub fn builtin(name: &str) -> Option<Scenario> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}

/// A builtin name or a path to a scenario file.
pub fn resolve(name_or_path: &str) -> Result<Scenario, ScenarioError> {
    if let Some(s) = builtin(name_or_path) {
        return Ok(s);
    }
    let path = Path::new(name_or_path);
    if path.is_file() {
        Scenario::from_path(path)
    } else {
        Err(ScenarioError::Unknown(name_or_path.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn builtins_parse_and_round_trip() {
        let all = builtin_scenarios();
        let names: Vec<_> = all.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["building", "satellites", "robots", "power6"]);
        for s in &all {
            let back = Scenario::from_json(&s.to_json()).unwrap();
            assert_eq!(&back, s);
        }
    }

    #[test]
    fn version_is_enforced() {
        let mut v: Value = serde_json::from_str(&builtin("robots").unwrap().to_json()).unwrap();
        v["version"] = json!(7);
        assert!(matches!(Scenario::from_json(&v.to_string()), Err(ScenarioError::Version { found: 7 })));
        v.as_object_mut().unwrap().remove("version");
        assert!(matches!(Scenario::from_json(&v.to_string()), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn merge_patch_rules() {
        let mut t = json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge_patch(&mut t, &json!({"a": null, "b": {"c": 5}, "e": [1]}));
        assert_eq!(t, json!({"b": {"c": 5, "d": 3}, "e": [1]}));
    }

    #[test]
    fn robots_variants_patch_the_integral_gain() {
        let s = builtin("robots").unwrap();
        assert_eq!(s.variant_names(), ["a=0", "a=1", "a=15", "a=20"]);
        for (name, a_expected) in [("a=0", 0.0), ("a=1", 1.0), ("a=15", 15.0), ("a=20", 20.0)] {
            let c = s.case(Some(name)).unwrap();
            let Model::Consensus(m) = &c.model else { panic!("robots is a consensus model") };
            let ProtocolConfig::PiDouble { a, b, gamma, .. } = m.protocol else { panic!("robots use PiDouble") };
            assert_eq!((a, b, gamma), (a_expected, 5.0, 3.0));
        }
        let c = s.case(Some("a=15")).unwrap();
        assert!(c.expect.contains(&Expectation::StabilityClass { class: StabilityClass::Marginal }));
        assert!(matches!(s.case(Some("a=3")), Err(ScenarioError::UnknownVariant { .. })));
        assert_eq!(s.single_case(None).unwrap().variant.as_deref(), Some("a=1"));
    }

    #[test]
    fn fn_list_expansion() {
        let one = FnList::Uniform(ScalarFn::linear(0.5));
        assert_eq!(one.expand(3, "a").unwrap().len(), 3);
        let each = FnList::Each(vec![ScalarFn::linear(1.0); 2]);
        assert!(each.expand(3, "a").is_err());
    }

    #[test]
    fn unknown_name_is_reported() {
        assert!(matches!(resolve("nosuch"), Err(ScenarioError::Unknown(_))));
    }
}
