//! `key = value` experiment configuration files.
//!
//! Parsing is two-phase: first every line is collected and checked against
//! the known key set (unknown or duplicate keys are rejected with their
//! line number), then values are parsed and cross-field constraints
//! validated before any computation starts.

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::relax::RelaxationFunction;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("config: {0}")]
    Global(String),
}

fn at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Line {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Radon,
    Doping,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Radon => "radon",
            ProblemKind::Doping => "doping",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Lsdk,
    Sdk,
    Llk,
    Lk,
    Cgne,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Lsdk => "lsdk",
            MethodKind::Sdk => "sdk",
            MethodKind::Llk => "llk",
            MethodKind::Lk => "lk",
            MethodKind::Cgne => "cgne",
        }
    }
}

/// A fully validated experiment description. Optional fields fall back to
/// problem-specific defaults at run time.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub variant: MethodKind,
    pub phi: Option<RelaxationFunction>,
    pub tau: Option<f64>,
    pub noise_rel: Option<f64>,
    pub seed: u64,
    pub grid: Option<(usize, usize)>,
    pub n: Option<usize>,
    pub max_cycles: usize,
    pub output_dir: Option<PathBuf>,
    pub phantom: Option<PathBuf>,
    pub refinement: usize,
    pub m: usize,
    pub mu_n: f64,
    pub h: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub truth_profile: Option<PathBuf>,
    pub init_profile: Option<PathBuf>,
    pub contact_weight: Option<Vec<f64>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Radon,
            variant: MethodKind::Lsdk,
            phi: None,
            tau: None,
            noise_rel: None,
            seed: 0,
            grid: None,
            n: None,
            max_cycles: 1000,
            output_dir: None,
            phantom: None,
            refinement: 2,
            m: 31,
            mu_n: 1.0,
            h: 1.0 / 32.0,
            x_min: 0.1,
            x_max: 10.0,
            truth_profile: None,
            init_profile: None,
            contact_weight: None,
        }
    }
}

impl ExperimentConfig {
    /// Loping threshold factor; 2 for tomography, 2.5 for the doping
    /// problem unless set explicitly.
    pub fn resolved_tau(&self) -> f64 {
        self.tau.unwrap_or(match self.problem {
            ProblemKind::Radon => 2.0,
            ProblemKind::Doping => 2.5,
        })
    }

    pub fn resolved_noise_rel(&self) -> f64 {
        self.noise_rel.unwrap_or(match self.problem {
            ProblemKind::Radon => 0.04,
            ProblemKind::Doping => 0.01,
        })
    }

    pub fn resolved_grid(&self) -> (usize, usize) {
        self.grid.unwrap_or((120, 120))
    }

    pub fn resolved_n(&self) -> usize {
        self.n.unwrap_or(match self.problem {
            ProblemKind::Radon => 50,
            ProblemKind::Doping => 11,
        })
    }
}

const KEYS: &[&str] = &[
    "problem",
    "variant",
    "phi",
    "tau",
    "noise_rel",
    "seed",
    "grid",
    "N",
    "max_cycles",
    "output_dir",
    "phantom",
    "refinement",
    "m",
    "mu_n",
    "h",
    "x_min",
    "x_max",
    "truth_profile",
    "init_profile",
    "contact_weight",
];

const RADON_ONLY: &[&str] = &["grid", "phantom", "refinement"];
const DOPING_ONLY: &[&str] = &[
    "m",
    "mu_n",
    "h",
    "x_min",
    "x_max",
    "truth_profile",
    "init_profile",
    "contact_weight",
];

struct Raw {
    line: usize,
    value: String,
}

fn collect(text: &str) -> Result<BTreeMap<String, Raw>, ConfigError> {
    let mut map: BTreeMap<String, Raw> = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw_line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(at(line, format!("expected `key = value`, got {body:?}")));
        };
        let key = key.trim();
        let value = value.trim();
        if !KEYS.contains(&key) {
            return Err(at(line, format!("unknown key {key:?}")));
        }
        if value.is_empty() {
            return Err(at(line, format!("key {key:?} has an empty value")));
        }
        if map.contains_key(key) {
            return Err(at(line, format!("duplicate key {key:?}")));
        }
        map.insert(
            key.to_string(),
            Raw {
                line,
                value: value.to_string(),
            },
        );
    }
    Ok(map)
}

fn parse_num<T: std::str::FromStr>(raw: &Raw, what: &str) -> Result<T, ConfigError> {
    raw.value
        .parse::<T>()
        .map_err(|_| at(raw.line, format!("{what}: cannot parse {:?}", raw.value)))
}

fn parse_grid(raw: &Raw) -> Result<(usize, usize), ConfigError> {
    let parse_side = |s: &str| -> Result<usize, ConfigError> {
        s.trim()
            .parse::<usize>()
            .map_err(|_| at(raw.line, format!("grid: cannot parse {s:?}")))
    };
    let (rows, cols) = match raw.value.split_once(['x', 'X']) {
        Some((r, c)) => (parse_side(r)?, parse_side(c)?),
        None => {
            let side = parse_side(&raw.value)?;
            (side, side)
        }
    };
    if rows < 2 || cols < 2 {
        return Err(at(raw.line, format!("grid must be at least 2x2, got {rows}x{cols}")));
    }
    Ok((rows, cols))
}

fn parse_phi(raw: &Raw) -> Result<RelaxationFunction, ConfigError> {
    let tokens: Vec<&str> = raw.value.split_whitespace().collect();
    let num = |s: &str| -> Result<f64, ConfigError> {
        s.parse::<f64>()
            .map_err(|_| at(raw.line, format!("phi: cannot parse {s:?}")))
    };
    match tokens.as_slice() {
        ["const", a] => {
            let a = num(a)?;
            if !(a > 0.0 && a.is_finite()) {
                return Err(at(raw.line, format!("phi: constant must be positive, got {a}")));
            }
            Ok(RelaxationFunction::Constant(a))
        }
        ["clamped", s, c] => {
            let scale = num(s)?;
            let cap = num(c)?;
            if !(scale > 0.0 && scale <= 1.0) {
                return Err(at(raw.line, format!("phi: clamped scale must lie in (0, 1], got {scale}")));
            }
            if !(cap > 0.0 && cap.is_finite()) {
                return Err(at(raw.line, format!("phi: clamped cap must be positive and finite, got {cap}")));
            }
            Ok(RelaxationFunction::ClampedLinear { scale, cap })
        }
        _ => Err(at(
            raw.line,
            format!("phi must be `const <alpha>` or `clamped <scale> <cap>`, got {:?}", raw.value),
        )),
    }
}

/// Parses and validates a configuration. Empty text yields the all-defaults
/// tomography experiment.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let map = collect(text)?;
    let mut config = ExperimentConfig::default();

    if let Some(raw) = map.get("problem") {
        config.problem = match raw.value.as_str() {
            "radon" => ProblemKind::Radon,
            "doping" => ProblemKind::Doping,
            other => return Err(at(raw.line, format!("problem must be radon or doping, got {other:?}"))),
        };
    }
    if let Some(raw) = map.get("variant") {
        config.variant = match raw.value.as_str() {
            "lsdk" => MethodKind::Lsdk,
            "sdk" => MethodKind::Sdk,
            "llk" => MethodKind::Llk,
            "lk" => MethodKind::Lk,
            "cgne" => MethodKind::Cgne,
            other => {
                return Err(at(
                    raw.line,
                    format!("variant must be one of lsdk, sdk, llk, lk, cgne; got {other:?}"),
                ))
            }
        };
    }
    if let Some(raw) = map.get("phi") {
        config.phi = Some(parse_phi(raw)?);
    }
    if let Some(raw) = map.get("tau") {
        let tau: f64 = parse_num(raw, "tau")?;
        if !(tau >= 2.0) || !tau.is_finite() {
            return Err(at(raw.line, format!("tau must be at least 2, got {tau}")));
        }
        config.tau = Some(tau);
    }
    if let Some(raw) = map.get("noise_rel") {
        let v: f64 = parse_num(raw, "noise_rel")?;
        if !(v >= 0.0) || !v.is_finite() {
            return Err(at(raw.line, format!("noise_rel must be finite and >= 0, got {v}")));
        }
        config.noise_rel = Some(v);
    }
    if let Some(raw) = map.get("seed") {
        config.seed = parse_num(raw, "seed")?;
    }
    if let Some(raw) = map.get("grid") {
        config.grid = Some(parse_grid(raw)?);
    }
    if let Some(raw) = map.get("N") {
        let n: usize = parse_num(raw, "N")?;
        if n < 1 {
            return Err(at(raw.line, "N must be at least 1".to_string()));
        }
        config.n = Some(n);
    }
    if let Some(raw) = map.get("max_cycles") {
        let v: usize = parse_num(raw, "max_cycles")?;
        if v == 0 {
            return Err(at(raw.line, "max_cycles must be at least 1".to_string()));
        }
        config.max_cycles = v;
    }
    if let Some(raw) = map.get("output_dir") {
        config.output_dir = Some(PathBuf::from(&raw.value));
    }
    if let Some(raw) = map.get("phantom") {
        config.phantom = Some(PathBuf::from(&raw.value));
    }
    if let Some(raw) = map.get("refinement") {
        let v: usize = parse_num(raw, "refinement")?;
        if v < 1 {
            return Err(at(raw.line, "refinement must be at least 1".to_string()));
        }
        config.refinement = v;
    }
    if let Some(raw) = map.get("m") {
        let v: usize = parse_num(raw, "m")?;
        if v < 5 {
            return Err(at(raw.line, format!("m must be at least 5, got {v}")));
        }
        config.m = v;
    }
    if let Some(raw) = map.get("mu_n") {
        let v: f64 = parse_num(raw, "mu_n")?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(at(raw.line, format!("mu_n must be positive, got {v}")));
        }
        config.mu_n = v;
    }
    if let Some(raw) = map.get("h") {
        let v: f64 = parse_num(raw, "h")?;
        if !(v > 0.0 && v < 0.5) {
            return Err(at(raw.line, format!("h must lie in (0, 1/2), got {v}")));
        }
        config.h = v;
    }
    if let Some(raw) = map.get("x_min") {
        let v: f64 = parse_num(raw, "x_min")?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(at(raw.line, format!("x_min must be positive, got {v}")));
        }
        config.x_min = v;
    }
    if let Some(raw) = map.get("x_max") {
        let v: f64 = parse_num(raw, "x_max")?;
        if !v.is_finite() || v <= 0.0 {
            return Err(at(raw.line, format!("x_max must be positive and finite, got {v}")));
        }
        config.x_max = v;
    }
    if let Some(raw) = map.get("truth_profile") {
        config.truth_profile = Some(PathBuf::from(&raw.value));
    }
    if let Some(raw) = map.get("init_profile") {
        config.init_profile = Some(PathBuf::from(&raw.value));
    }
    if let Some(raw) = map.get("contact_weight") {
        let values: Vec<f64> = raw
            .value
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| at(raw.line, format!("contact_weight: cannot parse {t:?}")))
            })
            .collect::<Result<_, _>>()?;
        if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(at(raw.line, "contact_weight entries must be positive".to_string()));
        }
        config.contact_weight = Some(values);
    }

    // cross-field checks
    let wrong_side = |keys: &[&str], problem: &str| -> Option<ConfigError> {
        keys.iter()
            .filter_map(|k| map.get(*k).map(|raw| (k, raw.line)))
            .map(|(k, line)| at(line, format!("key {k:?} applies to problem = {problem} only")))
            .next()
    };
    match config.problem {
        ProblemKind::Radon => {
            if let Some(err) = wrong_side(DOPING_ONLY, "doping") {
                return Err(err);
            }
        }
        ProblemKind::Doping => {
            if let Some(err) = wrong_side(RADON_ONLY, "radon") {
                return Err(err);
            }
        }
    }
    if config.x_min >= config.x_max {
        return Err(ConfigError::Global(format!(
            "x_min must be below x_max, got [{}, {}]",
            config.x_min, config.x_max
        )));
    }
    if let Some(phi) = &config.phi {
        let constant = matches!(phi, RelaxationFunction::Constant(_));
        if matches!(config.variant, MethodKind::Llk | MethodKind::Lk) && !constant {
            return Err(ConfigError::Global(format!(
                "variant {} requires `phi = const <alpha>`",
                config.variant.name()
            )));
        }
    }
    if let Some(w) = &config.contact_weight {
        if w.len() != config.m {
            return Err(ConfigError::Global(format!(
                "contact_weight needs m = {} values, got {}",
                config.m,
                w.len()
            )));
        }
    }
    Ok(config)
}
