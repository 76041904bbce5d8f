//! Scenario files.
//!
//! A scenario is a TOML document with nested sections. Operators are given
//! as a preset name (`identity`, `zero`, `pauli_xx`), as a string of
//! single-qubit factors (`"S01 I"`, `"Z Z X"`), or as a matrix literal whose
//! entries are `[re, im]` pairs. Factor tokens are `I X Y Z P0 P1 S01 S10`,
//! where `S01 = |0><1|` and `P0 = |0><0|`.

use std::fmt;
use std::path::Path;

use cqfb::liouville::{embed_plant, make_generator};
use cqfb::propagate::{decoherence_channel, IntegratorOptions, NoiseModel, SinusoidalDrift, TransientEvent};
use cqfb::protocol::{build_design, steady_candidate, FeedbackProtocol};
use cqfb::qmat::{
    c, identity, kron_all, outer, qubit_ket, random, sigma_x, sigma_y, sigma_z, CMatrix, CVector, DensityMatrix,
    HermitianMatrix,
};
use cqfb::scenario::{product_diagonal, Setup};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub plant: PlantConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub initial_state: StateSpec,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discretize: Option<DiscretizeConfig>,
    #[serde(default)]
    pub expect: Expect,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OpSpec {
    Named(String),
    Literal(Vec<Vec<[f64; 2]>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KetSpec {
    /// Qubit labels such as `"00"`.
    Label(String),
    Literal(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub dim: usize,
    pub hamiltonian: OpSpec,
    pub phi0: KetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub dim: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { dim: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Builtin,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub design: DesignKind,
    pub gamma: f64,
    /// Unit-gain interaction on the composite (custom designs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<OpSpec>,
    /// Unit-gain controller couplings (custom designs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub couplings: Option<Vec<OpSpec>>,
    /// Diagonal controller state in label order (custom designs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller_state: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    #[default]
    Plant,
    Composite,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    pub op: OpSpec,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub on: Support,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub time: f64,
    /// `"decohere"`; mutually exclusive with `kraus`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kraus: Option<Vec<OpSpec>>,
}

fn default_drift_operator() -> OpSpec {
    OpSpec::Named("Z Z X".into())
}

fn default_omega() -> f64 {
    1.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySpec {
    pub bound: f64,
    #[serde(default = "default_drift_operator")]
    pub operator: OpSpec,
    #[serde(default = "default_omega")]
    pub omega: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default, rename = "coupling", skip_serializing_if = "Vec::is_empty")]
    pub couplings: Vec<CouplingSpec>,
    #[serde(default, rename = "event", skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<UncertaintySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    /// `|φ0><φ0| ⊗ ρ_C` of the protocol.
    Target,
    /// Diagonal weights in label order.
    ProductDiagonal { plant: Vec<f64>, controller: Vec<f64> },
    /// Seeded random density matrix.
    Random,
    Matrix { matrix: Vec<Vec<[f64; 2]>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Horizon {
    Fixed(f64),
    /// Must read `"auto"`.
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub t0: f64,
    pub t_end: Horizon,
    /// Output points for a fixed horizon.
    pub samples: usize,
    /// Output spacing for the automatic horizon.
    pub dt: f64,
    pub tail_fraction: f64,
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let opts = IntegratorOptions::default();
        Self {
            t0: 0.0,
            t_end: Horizon::Keyword("auto".into()),
            samples: 501,
            dt: 0.02,
            tail_fraction: 0.2,
            tol_rel: opts.rtol,
            tol_abs: opts.atol,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub gammas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    Left,
    Midpoint,
}

fn both_rules() -> Vec<RuleName> {
    vec![RuleName::Left, RuleName::Midpoint]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizeConfig {
    pub t_end: f64,
    pub cells: Vec<usize>,
    #[serde(default = "both_rules")]
    pub rules: Vec<RuleName>,
}

/// Pass conditions checked after a command finishes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    /// `[t, v]`: `D < v` at every sample before `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_d_before: Option<[f64; 2]>,
    /// `[t, v]`: `D > v` at the first sample at or after `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump_at: Option<[f64; 2]>,
    /// `D < v` at the last sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_d_below: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_order: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub midpoint_order: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gnuplot: Option<String>,
}

/// A validation failure tied to a config field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::new("", e.to_string().trim_end()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    pub fn build(&self) -> Result<Built, ConfigError> {
        build(self)
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Built {
    pub setup: Setup,
    pub gamma: f64,
    /// `None` means the automatic plateau horizon.
    pub t_end: Option<f64>,
}

fn factor(token: &str) -> Option<CMatrix> {
    let ket = |b: &str| qubit_ket(b).expect("valid label");
    Some(match token.to_ascii_uppercase().as_str() {
        "I" => identity(2),
        "X" => sigma_x(),
        "Y" => sigma_y(),
        "Z" => sigma_z(),
        "P0" => outer(&ket("0"), &ket("0")),
        "P1" => outer(&ket("1"), &ket("1")),
        "S01" => outer(&ket("0"), &ket("1")),
        "S10" => outer(&ket("1"), &ket("0")),
        _ => return None,
    })
}

fn literal(rows: &[Vec<[f64; 2]>], dim: usize, field: &str) -> Result<CMatrix, ConfigError> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(ConfigError::new(field, format!("matrix literal must be {dim}x{dim}")));
    }
    Ok(CMatrix::from_fn(dim, dim, |i, j| c(rows[i][j][0], rows[i][j][1])))
}

/// Dense operator of size `dim` from a spec.
pub fn operator(spec: &OpSpec, dim: usize, field: &str) -> Result<CMatrix, ConfigError> {
    let m = match spec {
        OpSpec::Literal(rows) => literal(rows, dim, field)?,
        OpSpec::Named(name) => match name.trim() {
            "identity" => identity(dim),
            "zero" => CMatrix::zeros(dim, dim),
            "pauli_xx" => kron_all(&[sigma_x(), sigma_x()]),
            tokens => {
                let factors = tokens
                    .split_whitespace()
                    .map(|t| factor(t).ok_or_else(|| ConfigError::new(field, format!("unknown operator token {t:?}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                if factors.is_empty() {
                    return Err(ConfigError::new(field, "empty operator"));
                }
                kron_all(&factors)
            }
        },
    };
    if m.nrows() != dim {
        return Err(ConfigError::new(field, format!("operator is {0}x{0}, expected {dim}x{dim}", m.nrows())));
    }
    Ok(m)
}

fn hermitian(spec: &OpSpec, dim: usize, field: &str) -> Result<HermitianMatrix, ConfigError> {
    HermitianMatrix::new(operator(spec, dim, field)?).map_err(|e| ConfigError::new(field, e))
}

fn ket(spec: &KetSpec, dim: usize, field: &str) -> Result<CVector, ConfigError> {
    let v = match spec {
        KetSpec::Label(bits) => qubit_ket(bits).map_err(|e| ConfigError::new(field, e))?,
        KetSpec::Literal(entries) => CVector::from_iterator(entries.len(), entries.iter().map(|z| c(z[0], z[1]))),
    };
    if v.len() != dim {
        return Err(ConfigError::new(field, format!("vector has length {}, expected {dim}", v.len())));
    }
    if (v.norm() - 1.0).abs() > 1e-10 {
        return Err(ConfigError::new(field, format!("vector has norm {}, expected 1", v.norm())));
    }
    Ok(v)
}

fn finite_nonneg(x: f64, field: &str) -> Result<f64, ConfigError> {
    if x.is_finite() && x >= 0.0 {
        Ok(x)
    } else {
        Err(ConfigError::new(field, format!("{x} must be finite and >= 0")))
    }
}

fn protocol(cfg: &ScenarioConfig, phi0: &CVector) -> Result<FeedbackProtocol, ConfigError> {
    let p = &cfg.protocol;
    let (d_p, d_c) = (cfg.plant.dim, cfg.controller.dim);
    finite_nonneg(p.gamma, "protocol.gamma")?;
    match p.design {
        DesignKind::Builtin => {
            if d_c != 2 {
                return Err(ConfigError::new("controller.dim", "the built-in design uses a qubit controller"));
            }
            for (set, name) in [
                (p.interaction.is_some(), "protocol.interaction"),
                (p.couplings.is_some(), "protocol.couplings"),
                (p.controller_state.is_some(), "protocol.controller_state"),
            ] {
                if set {
                    return Err(ConfigError::new(name, "only allowed with design = \"custom\""));
                }
            }
            build_design(phi0, None, p.gamma).map_err(|e| ConfigError::new("protocol", e))
        }
        DesignKind::Custom => {
            let missing = |name: &str| ConfigError::new(format!("protocol.{name}"), "required for custom designs");
            let interaction = hermitian(
                p.interaction.as_ref().ok_or_else(|| missing("interaction"))?,
                d_p * d_c,
                "protocol.interaction",
            )?;
            let couplings = p
                .couplings
                .as_ref()
                .ok_or_else(|| missing("couplings"))?
                .iter()
                .enumerate()
                .map(|(k, s)| operator(s, d_c, &format!("protocol.couplings[{k}]")))
                .collect::<Result<Vec<_>, _>>()?;
            let weights = p.controller_state.as_ref().ok_or_else(|| missing("controller_state"))?;
            let state = diagonal(weights, d_c, "protocol.controller_state")?;
            FeedbackProtocol::custom(phi0, d_c, interaction, couplings, state, p.gamma)
                .map_err(|e| ConfigError::new("protocol", e))
        }
    }
}

fn diagonal(weights: &[f64], dim: usize, field: &str) -> Result<DensityMatrix, ConfigError> {
    if weights.len() != dim {
        return Err(ConfigError::new(field, format!("expected {dim} weights, got {}", weights.len())));
    }
    product_diagonal(weights, &[1.0])
        .map_err(|e| ConfigError::new(field, e))
}

fn noise(cfg: &ScenarioConfig) -> Result<NoiseModel, ConfigError> {
    let (d_p, d_c) = (cfg.plant.dim, cfg.controller.dim);
    let n = &cfg.noise;
    let couplings = n
        .couplings
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let field = format!("noise.coupling[{k}].op");
            let m = match s.on {
                Support::Plant => embed_plant(&operator(&s.op, d_p, &field)?, d_c),
                Support::Composite => operator(&s.op, d_p * d_c, &field)?,
            };
            Ok(m.scale(s.scale))
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let persistent = if couplings.is_empty() {
        None
    } else {
        Some(make_generator(None, couplings).map_err(|e| ConfigError::new("noise.coupling", e))?)
    };
    let mut events = Vec::new();
    for (k, e) in n.events.iter().enumerate() {
        let field = format!("noise.event[{k}]");
        finite_nonneg(e.time, &format!("{field}.time"))?;
        let kraus = match (&e.channel, &e.kraus) {
            (Some(name), None) if name == "decohere" => decoherence_channel(&[d_p, d_c]),
            (Some(name), None) => {
                return Err(ConfigError::new(format!("{field}.channel"), format!("unknown channel {name:?}")))
            }
            (None, Some(ops)) => ops
                .iter()
                .enumerate()
                .map(|(j, s)| operator(s, d_p * d_c, &format!("{field}.kraus[{j}]")))
                .collect::<Result<Vec<_>, _>>()?,
            _ => return Err(ConfigError::new(field, "give exactly one of `channel` and `kraus`")),
        };
        events.push(TransientEvent { time: e.time, kraus });
    }
    let uncertainty = match &n.uncertainty {
        None => None,
        Some(u) => {
            let op = hermitian(&u.operator, d_p * d_c, "noise.uncertainty.operator")?;
            let drift = SinusoidalDrift::with_bound(op, finite_nonneg(u.bound, "noise.uncertainty.bound")?, u.omega)
                .map_err(|e| ConfigError::new("noise.uncertainty", e))?;
            Some(std::sync::Arc::new(drift) as std::sync::Arc<dyn cqfb::propagate::Uncertainty>)
        }
    };
    let model = NoiseModel {
        persistent,
        transient_events: events,
        uncertainty,
    };
    model.validate(d_p * d_c).map_err(|e| ConfigError::new("noise.event", e))?;
    Ok(model)
}

fn initial_state(cfg: &ScenarioConfig, p: &FeedbackProtocol) -> Result<DensityMatrix, ConfigError> {
    let (d_p, d_c) = (cfg.plant.dim, cfg.controller.dim);
    let field = "initial_state";
    match &cfg.initial_state {
        StateSpec::Target => Ok(steady_candidate(p)),
        StateSpec::ProductDiagonal { plant, controller } => {
            if plant.len() != d_p || controller.len() != d_c {
                return Err(ConfigError::new(field, format!("expected {d_p} plant and {d_c} controller weights")));
            }
            product_diagonal(plant, controller).map_err(|e| ConfigError::new(field, e))
        }
        StateSpec::Random => Ok(random::density(&mut ChaCha8Rng::seed_from_u64(cfg.run.seed), d_p * d_c)),
        StateSpec::Matrix { matrix } => {
            DensityMatrix::new(literal(matrix, d_p * d_c, "initial_state.matrix")?)
                .map_err(|e| ConfigError::new("initial_state.matrix", e))
        }
    }
}

fn build(cfg: &ScenarioConfig) -> Result<Built, ConfigError> {
    let d_p = cfg.plant.dim;
    if d_p < 2 {
        return Err(ConfigError::new("plant.dim", "must be at least 2"));
    }
    if cfg.controller.dim < 2 {
        return Err(ConfigError::new("controller.dim", "must be at least 2"));
    }
    let h_p = hermitian(&cfg.plant.hamiltonian, d_p, "plant.hamiltonian")?;
    let phi0 = ket(&cfg.plant.phi0, d_p, "plant.phi0")?;
    let protocol = protocol(cfg, &phi0)?;
    let noise = noise(cfg)?;
    let sigma0 = initial_state(cfg, &protocol)?;
    let r = &cfg.run;
    finite_nonneg(r.t0, "run.t0")?;
    if !(r.tol_rel > 0.0 && r.tol_abs > 0.0) {
        return Err(ConfigError::new("run", "tolerances must be positive"));
    }
    if !(r.tail_fraction > 0.0 && r.tail_fraction <= 1.0) {
        return Err(ConfigError::new("run.tail_fraction", "must lie in (0, 1]"));
    }
    if !(r.dt > 0.0) {
        return Err(ConfigError::new("run.dt", "must be positive"));
    }
    let t_end = match &r.t_end {
        Horizon::Keyword(k) if k == "auto" => None,
        Horizon::Keyword(k) => return Err(ConfigError::new("run.t_end", format!("expected a time or \"auto\", got {k:?}"))),
        Horizon::Fixed(t) if *t > r.t0 && t.is_finite() => {
            if r.samples < 2 {
                return Err(ConfigError::new("run.samples", "need at least 2 samples"));
            }
            Some(*t)
        }
        Horizon::Fixed(t) => return Err(ConfigError::new("run.t_end", format!("{t} must exceed run.t0"))),
    };
    Ok(Built {
        gamma: cfg.protocol.gamma,
        t_end,
        setup: Setup {
            h_p,
            protocol,
            noise,
            sigma0,
            t0: r.t0,
            opts: IntegratorOptions {
                rtol: r.tol_rel,
                atol: r.tol_abs,
                ..Default::default()
            },
        },
    })
}
