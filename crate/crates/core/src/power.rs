//! Linearised swing-equation network with centralized and decentralized PI frequency
//! control.
//!
//! Angular frequencies are rad/s internally; anything facing a user (files, CLI, trajectory
//! output) is in Hz. Simulation runs in the frame rotating at `omega_ref`:
//! `delta' = delta - omega_ref t`, `omega' = omega - omega_ref`.
//!
//! The decentralized controller integrates the frequency error `z_i = int (omega_ref - omega_i)`
//! and applies `u_i = a (omega_ref - omega_i) + b z_i`. With this sign the steady state is
//! `z0 = (b I + L_k)^-1 (D omega_ref 1 - p_m)` and `z_i(t) - z_i(0) = omega_ref t - (delta_i(t) - delta_i(0))`.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError};
use crate::numerics::{expm, solve_linear, Matrix, NumericsError};
use crate::stability::{classify_power_centralized, classify_power_decentralized, StabilityError};

pub const DEFAULT_V_MAG: f64 = 132e3;
pub const DEFAULT_INERTIA: f64 = 1e5;
pub const DEFAULT_DAMPING: f64 = 1.0;
/// E-folds of the slowest mode simulated after the last load step.
pub const HORIZON_EFOLDS: f64 = 35.0;
pub const DEFAULT_SAMPLES: usize = 2001;

/// The six-bus sample network shipped with the crate.
pub const SAMPLE_NETWORK_CSV: &str = include_str!("../data/power6.csv");

pub fn hz_to_rad(f: f64) -> f64 {
    2.0 * PI * f
}

pub fn rad_to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("cannot read network file: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing section `#{0}`")]
    MissingSection(&'static str),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("{what} must be positive (bus/line {index}, got {value})")]
    NonPositive { what: &'static str, index: usize, value: f64 },
    #[error("duplicate bus {0}")]
    DuplicateBus(usize),
    #[error("duplicate line {0}-{1}")]
    DuplicateLine(usize, usize),
    #[error("line {0}-{1} references an unknown bus")]
    UnknownBus(usize, usize),
    #[error("self-loop at bus {0}")]
    SelfLoop(usize),
    #[error("network is not connected")]
    Disconnected,
    #[error("buses must be numbered 1..{n} without gaps")]
    BusNumbering { n: usize },
    #[error("controller gains must be positive (a={a}, b={b})")]
    InvalidController { a: f64, b: f64 },
    #[error("load step at bus {bus}: {reason}")]
    InvalidStep { bus: usize, reason: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
}

impl PowerError {
    /// Stable short identifier for each failure kind.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Io(_) => "io",
            Self::MissingSection(_) => "missing_section",
            Self::Malformed { .. } => "malformed_row",
            Self::NonPositive { .. } => "nonpositive_parameter",
            Self::DuplicateBus(_) => "duplicate_bus",
            Self::DuplicateLine(..) => "duplicate_line",
            Self::UnknownBus(..) => "unknown_bus",
            Self::SelfLoop(_) => "self_loop",
            Self::Disconnected => "disconnected",
            Self::BusNumbering { .. } => "bus_numbering",
            Self::InvalidController { .. } => "invalid_controller",
            Self::InvalidStep { .. } => "invalid_step",
            Self::Graph(_) => "graph",
            Self::Numerics(_) => "numerics",
            Self::Stability(_) => "stability",
        }
    }

    /// Whether the failure lies in the input rather than in the computation.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Self::Numerics(_) | Self::Stability(StabilityError::Numerics(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// Inertia, kg m^2.
    pub m: f64,
    /// Damping, s^-1.
    pub d: f64,
    /// Mechanical power minus load, W.
    pub p_m: f64,
    /// Voltage magnitude, V.
    pub v_mag: f64,
}

/// Line between 0-based buses `i` and `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub i: usize,
    pub j: usize,
    /// Susceptance, S.
    pub susceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerNetwork {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    /// `k_ij = |V_i| |V_j| b_ij` per line.
    k: Vec<f64>,
}

/// A parsed network plus the defaults that had to be filled in.
#[derive(Debug, Clone)]
pub struct IngestedNetwork {
    pub network: PowerNetwork,
    pub warnings: Vec<String>,
}

impl PowerNetwork {
    pub fn new(buses: Vec<Bus>, lines: Vec<Line>) -> Result<Self, PowerError> {
        for (idx, bus) in buses.iter().enumerate() {
            for (what, value) in [("m", bus.m), ("d", bus.d), ("v_mag", bus.v_mag)] {
                if !(value > 0.0) || !value.is_finite() {
                    return Err(PowerError::NonPositive { what, index: idx + 1, value });
                }
            }
            if !bus.p_m.is_finite() {
                return Err(PowerError::Malformed { line: 0, reason: format!("p_m of bus {} is not finite", idx + 1) });
            }
        }
        let n = buses.len();
        let mut seen = HashSet::new();
        for (idx, line) in lines.iter().enumerate() {
            if line.i >= n || line.j >= n {
                return Err(PowerError::UnknownBus(line.i + 1, line.j + 1));
            }
            if line.i == line.j {
                return Err(PowerError::SelfLoop(line.i + 1));
            }
            if !seen.insert((line.i.min(line.j), line.i.max(line.j))) {
                return Err(PowerError::DuplicateLine(line.i + 1, line.j + 1));
            }
            if !(line.susceptance > 0.0) || !line.susceptance.is_finite() {
                return Err(PowerError::NonPositive { what: "susceptance", index: idx + 1, value: line.susceptance });
            }
        }
        let k = lines.iter().map(|l| buses[l.i].v_mag * buses[l.j].v_mag * l.susceptance).collect();
        let net = Self { buses, lines, k };
        if net.n() < 2 {
            return Err(GraphError::TooFewVertices(net.n()).into());
        }
        if !net.graph().is_connected() {
            return Err(PowerError::Disconnected);
        }
        Ok(net)
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    /// Line couplings `k_ij` in W/rad.
    pub fn coupling(&self) -> &[f64] {
        &self.k
    }

    pub fn p_m(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.p_m).collect()
    }

    pub fn graph(&self) -> Graph<f64> {
        let edges = self.lines.iter().map(|l| (l.i, l.j)).collect();
        Graph::with_weights(self.n(), edges, self.k.clone()).expect("validated network")
    }

    /// Weighted Laplacian with edge weights `k_ij`.
    pub fn laplacian_k(&self) -> Matrix<f64> {
        self.graph().laplacian(true)
    }

    pub fn from_reader(reader: impl Read) -> Result<IngestedNetwork, PowerError> {
        parse_network(BufReader::new(reader))
    }

    pub fn from_str_csv(text: &str) -> Result<IngestedNetwork, PowerError> {
        Self::from_reader(text.as_bytes())
    }

    /// The same network with the given load changes already applied to `p_m`.
    pub fn with_loads_applied(&self, steps: &[LoadStep]) -> Self {
        let mut net = self.clone();
        for s in steps {
            if let Some(bus) = net.buses.get_mut(s.bus) {
                bus.p_m -= s.delta_p;
            }
        }
        net
    }

    pub fn sample() -> Self {
        Self::from_str_csv(SAMPLE_NETWORK_CSV).expect("bundled sample network is valid").network
    }

    /// Writes the two-section CSV format read by [`ingest_network`].
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "#buses")?;
        writeln!(out, "bus,m,d,p_m,v_mag")?;
        for (i, b) in self.buses.iter().enumerate() {
            writeln!(out, "{},{},{},{},{}", i + 1, b.m, b.d, b.p_m, b.v_mag)?;
        }
        writeln!(out, "#lines")?;
        writeln!(out, "i,j,susceptance")?;
        for l in &self.lines {
            writeln!(out, "{},{},{}", l.i + 1, l.j + 1, l.susceptance)?;
        }
        Ok(())
    }
}

/// Reads a network file: a `#buses` section with header `bus,m,d,p_m,v_mag` (only `bus`
/// and `p_m` required) followed by a `#lines` section with header `i,j,susceptance`.
/// Bus numbers are 1-based.
pub fn ingest_network(path: &Path) -> Result<IngestedNetwork, PowerError> {
    PowerNetwork::from_reader(std::fs::File::open(path)?)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Buses,
    Lines,
}

fn parse_network(reader: impl BufRead) -> Result<IngestedNetwork, PowerError> {
    let mut section = Section::None;
    let mut header: Option<Vec<String>> = None;
    let mut saw = (false, false);
    let mut buses: Vec<(usize, Bus)> = Vec::new();
    let mut lines = Vec::new();
    let mut warnings = Vec::new();

    for (lineno, raw) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let raw = raw?;
        let text = raw.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(tag) = text.strip_prefix('#') {
            section = match tag.trim().to_ascii_lowercase().as_str() {
                "buses" => {
                    saw.0 = true;
                    Section::Buses
                }
                "lines" => {
                    saw.1 = true;
                    Section::Lines
                }
                other => return Err(PowerError::Malformed { line: lineno, reason: format!("unknown section `#{other}`") }),
            };
            header = None;
            continue;
        }
        let cells: Vec<String> = text.split(',').map(|c| c.trim().to_string()).collect();
        let Some(cols) = &header else {
            header = Some(cells.iter().map(|c| c.to_ascii_lowercase()).collect());
            let cols = header.as_ref().expect("just set");
            let required: &[&str] = match section {
                Section::Buses => &["bus", "p_m"],
                Section::Lines => &["i", "j", "susceptance"],
                Section::None => {
                    return Err(PowerError::Malformed { line: lineno, reason: "data before a section marker".into() })
                }
            };
            for r in required {
                if !cols.iter().any(|c| c == r) {
                    return Err(PowerError::Malformed { line: lineno, reason: format!("missing column `{r}`") });
                }
            }
            if section == Section::Buses {
                for (col, _) in BUS_DEFAULTS {
                    if !cols.iter().any(|c| c == col) {
                        warnings.push(format!("column `{col}` absent; using default {}", default_for(col)));
                    }
                }
            }
            continue;
        };
        if cells.len() != cols.len() {
            return Err(PowerError::Malformed {
                line: lineno,
                reason: format!("expected {} fields, found {}", cols.len(), cells.len()),
            });
        }
        let get = |name: &str| -> Option<&str> {
            cols.iter().position(|c| c == name).map(|k| cells[k].as_str()).filter(|s| !s.is_empty())
        };
        let num = |name: &str, s: &str| -> Result<f64, PowerError> {
            s.parse::<f64>()
                .map_err(|_| PowerError::Malformed { line: lineno, reason: format!("`{name}` is not a number: `{s}`") })
        };
        let idx = |name: &str, s: &str| -> Result<usize, PowerError> {
            match s.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(PowerError::Malformed { line: lineno, reason: format!("`{name}` must be a 1-based index: `{s}`") }),
            }
        };
        match section {
            Section::Buses => {
                let id = idx("bus", get("bus").unwrap_or(""))?;
                let p_m = num("p_m", get("p_m").ok_or_else(|| PowerError::Malformed {
                    line: lineno,
                    reason: "empty `p_m`".into(),
                })?)?;
                let mut vals = [0.0; 3];
                for (k, (col, default)) in BUS_DEFAULTS.iter().enumerate() {
                    vals[k] = match get(col) {
                        Some(s) => num(col, s)?,
                        None => {
                            if cols.iter().any(|c| c == col) {
                                warnings.push(format!("line {lineno}: empty `{col}`; using default {default}"));
                            }
                            *default
                        }
                    };
                }
                buses.push((id, Bus { m: vals[0], d: vals[1], v_mag: vals[2], p_m }));
            }
            Section::Lines => {
                let i = idx("i", get("i").unwrap_or(""))?;
                let j = idx("j", get("j").unwrap_or(""))?;
                let s = get("susceptance")
                    .ok_or_else(|| PowerError::Malformed { line: lineno, reason: "empty `susceptance`".into() })?;
                lines.push(Line { i: i - 1, j: j - 1, susceptance: num("susceptance", s)? });
            }
            Section::None => unreachable!("header check rejects data outside sections"),
        }
    }
    if !saw.0 {
        return Err(PowerError::MissingSection("buses"));
    }
    if !saw.1 {
        return Err(PowerError::MissingSection("lines"));
    }
    buses.sort_by_key(|(id, _)| *id);
    for w in buses.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(PowerError::DuplicateBus(w[0].0));
        }
    }
    let n = buses.len();
    if buses.iter().enumerate().any(|(k, (id, _))| *id != k + 1) {
        return Err(PowerError::BusNumbering { n });
    }
    let network = PowerNetwork::new(buses.into_iter().map(|(_, b)| b).collect(), lines)?;
    Ok(IngestedNetwork { network, warnings })
}

const BUS_DEFAULTS: [(&str, f64); 3] = [("m", DEFAULT_INERTIA), ("d", DEFAULT_DAMPING), ("v_mag", DEFAULT_V_MAG)];

fn default_for(col: &str) -> f64 {
    BUS_DEFAULTS.iter().find(|(c, _)| *c == col).map_or(f64::NAN, |(_, v)| *v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    Centralized,
    Decentralized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqController {
    pub mode: ControllerMode,
    pub a: f64,
    pub b: f64,
    pub omega_ref_hz: f64,
}

impl FreqController {
    pub fn new(mode: ControllerMode, a: f64, b: f64, omega_ref_hz: f64) -> Result<Self, PowerError> {
        if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() || !omega_ref_hz.is_finite() {
            return Err(PowerError::InvalidController { a, b });
        }
        Ok(Self { mode, a, b, omega_ref_hz })
    }

    /// Reference frequency in rad/s.
    pub fn omega_ref(&self) -> f64 {
        hz_to_rad(self.omega_ref_hz)
    }
}

/// Controller state: the shared reference `omega_hat` (rad/s) or the per-bus integrals `z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerState {
    Centralized(f64),
    Decentralized(Vec<f64>),
}

/// Absolute phases (rad), frequencies (rad/s) and controller state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerState {
    pub delta: Vec<f64>,
    pub omega: Vec<f64>,
    pub aux: ControllerState,
}

/// Control input per bus, W.
pub fn control_input(ctrl: &FreqController, state: &PowerState) -> Vec<f64> {
    let w_ref = ctrl.omega_ref();
    match &state.aux {
        ControllerState::Centralized(w_hat) => state.omega.iter().map(|w| ctrl.a * (w_hat - w)).collect(),
        ControllerState::Decentralized(z) => {
            state.omega.iter().zip(z).map(|(w, zi)| ctrl.a * (w_ref - w) + ctrl.b * zi).collect()
        }
    }
}

/// Time derivative of the closed loop in absolute coordinates.
pub fn rhs_power(net: &PowerNetwork, ctrl: &FreqController, state: &PowerState) -> PowerState {
    let n = net.n();
    let w_ref = ctrl.omega_ref();
    let u = control_input(ctrl, state);
    let mut flow = vec![0.0; n];
    for (l, &k) in net.lines.iter().zip(&net.k) {
        let f = k * (state.delta[l.i] - state.delta[l.j]);
        flow[l.i] += f;
        flow[l.j] -= f;
    }
    let omega_dot = (0..n)
        .map(|i| {
            let bus = &net.buses[i];
            (-flow[i] - bus.d * state.omega[i] + bus.p_m + u[i]) / bus.m
        })
        .collect();
    let aux = match &state.aux {
        ControllerState::Centralized(_) => {
            let mean = state.omega.iter().sum::<f64>() / n as f64;
            ControllerState::Centralized(ctrl.b * (w_ref - mean))
        }
        ControllerState::Decentralized(_) => {
            ControllerState::Decentralized(state.omega.iter().map(|w| w_ref - w).collect())
        }
    };
    PowerState { delta: state.omega.clone(), omega: omega_dot, aux }
}

/// Decentralized steady state: `z0 = (b I + L_k)^-1 (D omega_ref 1 - p_m)`, `omega0 = omega_ref 1`.
/// `omega_ref` in rad/s.
pub fn power_steady_state(net: &PowerNetwork, b: f64, omega_ref: f64) -> Result<(Vec<f64>, Vec<f64>), PowerError> {
    if !(b > 0.0) {
        return Err(PowerError::InvalidController { a: f64::NAN, b });
    }
    let rhs: Vec<f64> = net.buses.iter().map(|bus| bus.d * omega_ref - bus.p_m).collect();
    Ok((shifted_laplacian_solve(net, b, &rhs)?, vec![omega_ref; net.n()]))
}

fn shifted_laplacian_solve(net: &PowerNetwork, b: f64, rhs: &[f64]) -> Result<Vec<f64>, PowerError> {
    let a = &net.laplacian_k() + &Matrix::identity(net.n()).scale(b);
    Ok(solve_linear(&a, rhs)?)
}

/// Mean-free solution of `L_k x = rhs` for `rhs` summing to zero.
fn laplacian_solve_mean_free(net: &PowerNetwork, rhs: &[f64]) -> Result<Vec<f64>, PowerError> {
    let n = net.n();
    // L + (scale/n) 11^T is nonsingular on a connected graph and maps mean-free to mean-free.
    let l = net.laplacian_k();
    let scale = l.norm_inf().max(1.0);
    let a = &l + &Matrix::filled(n, n, scale / n as f64);
    Ok(solve_linear(&a, rhs)?)
}

/// Load change at a 0-based bus: the load grows by `delta_p` W (so `p_m` drops) at `t_step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadStep {
    pub bus: usize,
    pub delta_p: f64,
    pub t_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// `None` picks `t_last_step + 35 / |margin|` from the closed-loop spectrum.
    pub t_end: Option<f64>,
    pub samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { t_end: None, samples: DEFAULT_SAMPLES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerMetadata {
    pub mode: ControllerMode,
    pub a: f64,
    pub b: f64,
    pub omega_ref_hz: f64,
    pub t_end: f64,
    pub spectral_margin: f64,
    pub frame: &'static str,
    pub steps: Vec<LoadStep>,
}

/// Sampled closed-loop response.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerTrajectory {
    pub times: Vec<f64>,
    /// Phase in the rotating frame, rad, per sample.
    pub delta: Vec<Vec<f64>>,
    /// Absolute bus frequency, Hz, per sample.
    pub omega_hz: Vec<Vec<f64>>,
    /// Control input, W, per sample.
    pub u: Vec<Vec<f64>>,
    /// `z` per bus (decentralized) or `[omega_hat in Hz]` (centralized), per sample.
    pub aux: Vec<Vec<f64>>,
    pub metadata: PowerMetadata,
}

impl PowerTrajectory {
    /// `max_i |f_i - f_ref|` at the last sample, Hz.
    pub fn final_frequency_error_hz(&self) -> f64 {
        let last = self.omega_hz.last().expect("non-empty trajectory");
        last.iter().map(|f| (f - self.metadata.omega_ref_hz).abs()).fold(0.0, f64::max)
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let n = self.omega_hz.first().map_or(0, Vec::len);
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=n).map(|i| format!("omega_{i}")));
        cols.extend((1..=n).map(|i| format!("u_{i}")));
        match self.metadata.mode {
            ControllerMode::Decentralized => cols.extend((1..=n).map(|i| format!("z_{i}"))),
            ControllerMode::Centralized => cols.push("omega_hat".into()),
        }
        writeln!(out, "{}", cols.join(","))?;
        for k in 0..self.times.len() {
            let mut row = vec![self.times[k]];
            row.extend(&self.omega_hz[k]);
            row.extend(&self.u[k]);
            row.extend(&self.aux[k]);
            let row: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Linear closed loop in the rotating frame: `y' = A y + c(p_m)`.
///
/// Decentralized layout `[delta', omega', z]`; centralized `[omega_hat', delta', omega']`.
struct RotatingModel {
    a: Matrix<f64>,
    n: usize,
    mode: ControllerMode,
}

impl RotatingModel {
    fn new(net: &PowerNetwork, ctrl: &FreqController) -> Self {
        let n = net.n();
        let l = net.laplacian_k();
        let (ca, cb) = (ctrl.a, ctrl.b);
        let mut a = Matrix::zeros(3 * n, 3 * n);
        match ctrl.mode {
            ControllerMode::Decentralized => {
                let (d, w, z) = (0, n, 2 * n);
                for i in 0..n {
                    let bus = &net.buses[i];
                    a[(d + i, w + i)] = 1.0;
                    for j in 0..n {
                        a[(w + i, d + j)] = -l[(i, j)] / bus.m;
                    }
                    a[(w + i, w + i)] = -(bus.d + ca) / bus.m;
                    a[(w + i, z + i)] = cb / bus.m;
                    a[(z + i, w + i)] = -1.0;
                }
            }
            ControllerMode::Centralized => {
                // 3n rows with only n + 1 used for the aux block keeps indexing uniform;
                // the spare rows stay zero and are never read.
                let (h, d, w) = (0, n, 2 * n);
                for i in 0..n {
                    let bus = &net.buses[i];
                    a[(h, w + i)] = -cb / n as f64;
                    a[(d + i, w + i)] = 1.0;
                    a[(w + i, h)] = ca / bus.m;
                    for j in 0..n {
                        a[(w + i, d + j)] = -l[(i, j)] / bus.m;
                    }
                    a[(w + i, w + i)] = -(bus.d + ca) / bus.m;
                }
            }
        }
        Self { a, n, mode: ctrl.mode }
    }

    /// Equilibrium reached from `y` under injections `p_m`, using the conserved
    /// combinations of the two controllers.
    fn equilibrium(&self, net: &PowerNetwork, ctrl: &FreqController, p_m: &[f64], y: &[f64]) -> Result<Vec<f64>, PowerError> {
        let n = self.n;
        let w_ref = ctrl.omega_ref();
        let forcing: Vec<f64> = (0..n).map(|i| p_m[i] - net.buses[i].d * w_ref).collect();
        let mut eq = vec![0.0; 3 * n];
        match self.mode {
            ControllerMode::Decentralized => {
                // delta' + z is constant per bus.
                let c: Vec<f64> = (0..n).map(|i| y[i] + y[2 * n + i]).collect();
                let lc = net.laplacian_k().matvec(&c);
                let rhs: Vec<f64> = (0..n).map(|i| -forcing[i] + lc[i]).collect();
                let z = shifted_laplacian_solve(net, ctrl.b, &rhs)?;
                for i in 0..n {
                    eq[2 * n + i] = z[i];
                    eq[i] = c[i] - z[i];
                }
            }
            ControllerMode::Centralized => {
                // omega_hat' + b mean(delta') is constant.
                let mean_delta = y[n..2 * n].iter().sum::<f64>() / n as f64;
                let k = y[0] + ctrl.b * mean_delta;
                let w_hat = -forcing.iter().sum::<f64>() / (n as f64 * ctrl.a);
                let rhs: Vec<f64> = forcing.iter().map(|f| f + ctrl.a * w_hat).collect();
                let delta = laplacian_solve_mean_free(net, &rhs)?;
                let shift = (k - w_hat) / ctrl.b;
                eq[0] = w_hat;
                for i in 0..n {
                    eq[n + i] = delta[i] + shift;
                }
            }
        }
        Ok(eq)
    }

    /// `delta' + z` per bus (decentralized) or `[omega_hat' + b mean(delta')]` (centralized).
    fn conserved(&self, ctrl: &FreqController, y: &[f64]) -> Vec<f64> {
        let n = self.n;
        match self.mode {
            ControllerMode::Decentralized => (0..n).map(|i| y[i] + y[2 * n + i]).collect(),
            ControllerMode::Centralized => vec![y[0] + ctrl.b * y[n..2 * n].iter().sum::<f64>() / n as f64],
        }
    }

    /// Resets the phase (decentralized) or the reference (centralized) from the conserved values.
    fn impose(&self, ctrl: &FreqController, conserved: &[f64], y: &mut [f64]) {
        let n = self.n;
        match self.mode {
            ControllerMode::Decentralized => {
                for i in 0..n {
                    y[i] = conserved[i] - y[2 * n + i];
                }
            }
            ControllerMode::Centralized => {
                y[0] = conserved[0] - ctrl.b * y[n..2 * n].iter().sum::<f64>() / n as f64;
            }
        }
    }

    fn to_absolute(&self, ctrl: &FreqController, t: f64, y: &[f64]) -> PowerState {
        let n = self.n;
        let w_ref = ctrl.omega_ref();
        match self.mode {
            ControllerMode::Decentralized => PowerState {
                delta: (0..n).map(|i| y[i] + w_ref * t).collect(),
                omega: (0..n).map(|i| y[n + i] + w_ref).collect(),
                aux: ControllerState::Decentralized(y[2 * n..3 * n].to_vec()),
            },
            ControllerMode::Centralized => PowerState {
                delta: (0..n).map(|i| y[n + i] + w_ref * t).collect(),
                omega: (0..n).map(|i| y[2 * n + i] + w_ref).collect(),
                aux: ControllerState::Centralized(y[0] + w_ref),
            },
        }
    }

    fn from_absolute(&self, ctrl: &FreqController, state: &PowerState) -> Vec<f64> {
        let n = self.n;
        let w_ref = ctrl.omega_ref();
        let mut y = vec![0.0; 3 * n];
        match &state.aux {
            ControllerState::Decentralized(z) => {
                for i in 0..n {
                    y[i] = state.delta[i];
                    y[n + i] = state.omega[i] - w_ref;
                    y[2 * n + i] = z[i];
                }
            }
            ControllerState::Centralized(w_hat) => {
                y[0] = w_hat - w_ref;
                for i in 0..n {
                    y[n + i] = state.delta[i];
                    y[2 * n + i] = state.omega[i] - w_ref;
                }
            }
        }
        y
    }
}

/// Operating point under the network's own `p_m`: frequencies at `omega_ref`, controller
/// state at its steady value, absolute phases at `t = 0`.
pub fn pre_step_equilibrium(net: &PowerNetwork, ctrl: &FreqController) -> Result<PowerState, PowerError> {
    let model = RotatingModel::new(net, ctrl);
    let y = model.equilibrium(net, ctrl, &net.p_m(), &vec![0.0; 3 * net.n()])?;
    Ok(model.to_absolute(ctrl, 0.0, &y))
}

fn check_steps(net: &PowerNetwork, steps: &[LoadStep]) -> Result<(), PowerError> {
    for s in steps {
        if s.bus >= net.n() {
            return Err(PowerError::InvalidStep { bus: s.bus + 1, reason: format!("network has {} buses", net.n()) });
        }
        if !(s.t_step >= 0.0) || !s.delta_p.is_finite() {
            return Err(PowerError::InvalidStep { bus: s.bus + 1, reason: "t_step must be >= 0, delta_p finite".into() });
        }
    }
    Ok(())
}

/// Slowest-mode margin of the controller on this network.
pub fn controller_margin(net: &PowerNetwork, ctrl: &FreqController) -> Result<f64, PowerError> {
    let report = match ctrl.mode {
        ControllerMode::Centralized => classify_power_centralized(net, ctrl.a, ctrl.b)?,
        ControllerMode::Decentralized => classify_power_decentralized(net, ctrl.a, ctrl.b)?,
    };
    Ok(report.margin)
}

/// Starts at the pre-step operating point and applies the load steps.
pub fn step_load_experiment(
    net: &PowerNetwork,
    ctrl: &FreqController,
    steps: &[LoadStep],
    config: &ExperimentConfig,
) -> Result<PowerTrajectory, PowerError> {
    let start = pre_step_equilibrium(net, ctrl)?;
    simulate_power(net, ctrl, &start, steps, config)
}

/// Propagates from an arbitrary absolute initial state.
///
/// Between load changes the loop is linear with constant forcing, so each sample interval
/// is advanced exactly as `y_eq + exp(A h) (y - y_eq)` around the current equilibrium.
pub fn simulate_power(
    net: &PowerNetwork,
    ctrl: &FreqController,
    initial: &PowerState,
    steps: &[LoadStep],
    config: &ExperimentConfig,
) -> Result<PowerTrajectory, PowerError> {
    check_steps(net, steps)?;
    let n = net.n();
    let model = RotatingModel::new(net, ctrl);
    let margin = controller_margin(net, ctrl)?;
    let t_last = steps.iter().map(|s| s.t_step).fold(0.0, f64::max);
    let t_end = match config.t_end {
        Some(t) => t,
        None if margin < 0.0 => t_last + HORIZON_EFOLDS / margin.abs(),
        None => {
            return Err(PowerError::InvalidStep { bus: 0, reason: "closed loop is not Hurwitz; give t_end explicitly".into() })
        }
    };
    if !(t_end > 0.0) || config.samples < 2 {
        return Err(NumericsError::InvalidParameter(format!("t_end {t_end}, samples {}", config.samples)).into());
    }
    let mut events: Vec<LoadStep> = steps.to_vec();
    events.sort_by(|a, b| a.t_step.total_cmp(&b.t_step));

    let h = t_end / (config.samples - 1) as f64;
    let phi_h = expm(&model.a.scale(h))?;
    let mut p_m = net.p_m();
    let mut y = model.from_absolute(ctrl, initial);
    let mut next_event = 0;
    // Steps at t = 0 act before the first sample.
    while next_event < events.len() && events[next_event].t_step <= 0.0 {
        p_m[events[next_event].bus] -= events[next_event].delta_p;
        next_event += 1;
    }
    let mut eq = model.equilibrium(net, ctrl, &p_m, &y)?;

    let mut traj = PowerTrajectory {
        times: Vec::with_capacity(config.samples),
        delta: Vec::new(),
        omega_hz: Vec::new(),
        u: Vec::new(),
        aux: Vec::new(),
        metadata: PowerMetadata {
            mode: ctrl.mode,
            a: ctrl.a,
            b: ctrl.b,
            omega_ref_hz: ctrl.omega_ref_hz,
            t_end,
            spectral_margin: margin,
            frame: "rotating at omega_ref; frequencies reported in Hz",
            steps: steps.to_vec(),
        },
    };
    let record = |traj: &mut PowerTrajectory, t: f64, y: &[f64]| {
        let s = model.to_absolute(ctrl, t, y);
        traj.times.push(t);
        traj.u.push(control_input(ctrl, &s));
        traj.omega_hz.push(s.omega.iter().map(|&w| rad_to_hz(w)).collect());
        traj.delta.push(match ctrl.mode {
            ControllerMode::Decentralized => y[0..n].to_vec(),
            ControllerMode::Centralized => y[n..2 * n].to_vec(),
        });
        traj.aux.push(match &s.aux {
            ControllerState::Decentralized(z) => z.clone(),
            ControllerState::Centralized(w_hat) => vec![rad_to_hz(*w_hat)],
        });
    };
    // The conserved combination is fixed by the initial state and survives load steps;
    // re-imposing it after every propagation keeps roundoff from drifting the final state.
    let conserved = model.conserved(ctrl, &y);
    let advance = |phi: &Matrix<f64>, y: &[f64], eq: &[f64]| -> Vec<f64> {
        let dev: Vec<f64> = y.iter().zip(eq).map(|(a, b)| a - b).collect();
        let mut next: Vec<f64> = phi.matvec(&dev).iter().zip(eq).map(|(d, e)| d + e).collect();
        model.impose(ctrl, &conserved, &mut next);
        next
    };

    record(&mut traj, 0.0, &y);
    for k in 1..config.samples {
        let (t0, t1) = ((k - 1) as f64 * h, k as f64 * h);
        let mut t = t0;
        while next_event < events.len() && events[next_event].t_step <= t1 {
            let ev = events[next_event];
            if ev.t_step > t {
                y = advance(&expm(&model.a.scale(ev.t_step - t))?, &y, &eq);
                t = ev.t_step;
            }
            p_m[ev.bus] -= ev.delta_p;
            eq = model.equilibrium(net, ctrl, &p_m, &y)?;
            next_event += 1;
        }
        y = if t == t0 { advance(&phi_h, &y, &eq) } else { advance(&expm(&model.a.scale(t1 - t))?, &y, &eq) };
        record(&mut traj, t1, &y);
    }
    Ok(traj)
}
