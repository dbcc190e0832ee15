//! Batch front end: run specifications, configuration merging and the
//! command runners behind the `thermodelay` binary.

mod run;

pub use run::{run, ExitStatus, RunOutcome};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::coercivity::PhysicalParams;
use crate::snapshot::SnapshotFormat;
use crate::spectral::{SweepParam, ZERO_TOL_REL};
use crate::timestepper::{CustomData, InitialData, Scheme};
use crate::ThetaBc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    #[default]
    Simulate,
    Spectrum,
    Resolvent,
    Coercivity,
    Sweep,
    DissipationAudit,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Spectrum => "spectrum",
            Command::Resolvent => "resolvent",
            Command::Coercivity => "coercivity",
            Command::Sweep => "sweep",
            Command::DissipationAudit => "dissipation-audit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridOptions {
    pub n_cells: usize,
    pub n_rho: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    #[default]
    Transport,
    History,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateOptions {
    pub t_final: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub formulation: Formulation,
    /// `sine_mode:K`, `random_smooth:SEED` or `custom`.
    pub preset: String,
    pub custom: Option<CustomData>,
    pub sample_stride: usize,
    /// Start of the decay-fit window; `null` means `T/2`.
    pub fit_start: Option<f64>,
    pub snapshot_times: Vec<f64>,
    pub snapshot_format: SnapshotFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumOptions {
    pub deflate: bool,
    /// Zero-mode tolerance relative to the spectral radius.
    pub zero_tol_factor: f64,
    pub dump_matrix: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventOptions {
    pub s: f64,
    pub b_min: f64,
    pub b_max: f64,
    pub b_count: usize,
    pub symmetric: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoercivityOptions {
    pub a_min: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
    pub n_a: usize,
    pub n_b: usize,
    /// Extra randomized audit draws over parameters and frequencies; needs a seed.
    pub random_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOptions {
    pub axis: Option<SweepAxis>,
    pub deflate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditOptions {
    pub samples: usize,
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub command: Command,
    pub params: PhysicalParams,
    pub grid: GridOptions,
    pub theta_bc: ThetaBc,
    pub seed: Option<u64>,
    pub simulate: SimulateOptions,
    pub spectrum: SpectrumOptions,
    pub resolvent: ResolventOptions,
    pub coercivity: CoercivityOptions,
    pub sweep: SweepOptions,
    pub audit: AuditOptions,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            command: Command::default(),
            params: PhysicalParams::reference(),
            grid: GridOptions { n_cells: 64, n_rho: 32 },
            theta_bc: ThetaBc::Neumann,
            seed: None,
            simulate: SimulateOptions {
                t_final: 20.0,
                dt: 1e-3,
                scheme: Scheme::ImplicitEuler,
                formulation: Formulation::Transport,
                preset: "sine_mode:1".into(),
                custom: None,
                sample_stride: 10,
                fit_start: None,
                snapshot_times: Vec::new(),
                snapshot_format: SnapshotFormat::Json,
            },
            spectrum: SpectrumOptions {
                deflate: true,
                zero_tol_factor: ZERO_TOL_REL,
                dump_matrix: false,
            },
            resolvent: ResolventOptions {
                s: 1e-2,
                b_min: 1.0,
                b_max: 200.0,
                b_count: 60,
                symmetric: true,
            },
            coercivity: CoercivityOptions {
                a_min: 1e-3,
                a_max: 10.0,
                b_min: -1e3,
                b_max: 1e3,
                n_a: 200,
                n_b: 2001,
                random_samples: 0,
            },
            sweep: SweepOptions {
                axis: None,
                deflate: true,
            },
            audit: AuditOptions { samples: 1000 },
        }
    }
}

/// All problems found in a configuration, each prefixed by its field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Splits `"a.b.c": v` keys into nested objects.
fn expand_dotted(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut out = Map::new();
            for (key, v) in map {
                let v = expand_dotted(v);
                let mut parts: Vec<&str> = key.split('.').collect();
                let last = parts.pop().unwrap_or_default().to_string();
                let mut nested = v;
                let mut name = last;
                while let Some(parent) = parts.pop() {
                    let mut m = Map::new();
                    m.insert(name, nested);
                    nested = Value::Object(m);
                    name = parent.to_string();
                }
                merge_into(&mut out, name, nested);
            }
            Value::Object(out)
        }
        other => other,
    }
}

fn merge_into(map: &mut Map<String, Value>, key: String, value: Value) {
    match (map.get_mut(&key), value) {
        (Some(Value::Object(dst)), Value::Object(src)) => {
            for (k, v) in src {
                merge_into(dst, k, v);
            }
        }
        (_, value) => {
            map.insert(key, value);
        }
    }
}

/// Overlays `src` onto `dst`, recording keys that `dst` does not know.
///
/// Only objects present in the defaults are merged key by key; anything
/// else (including `null` defaults) is replaced wholesale.
fn overlay(dst: &mut Map<String, Value>, src: Map<String, Value>, path: &str, errors: &mut Vec<String>) {
    for (key, value) in src {
        let full = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        match dst.get_mut(&key) {
            None => errors.push(format!("{full}: unknown key")),
            Some(Value::Object(d)) => match value {
                Value::Object(s) => overlay(d, s, &full, errors),
                other => errors.push(format!("{full}: expected an object, got {other}")),
            },
            Some(slot) => *slot = value,
        }
    }
}

/// Builds a [`RunSpec`] from defaults, an optional JSON document and
/// flag overrides (dotted key, value), in increasing precedence.
pub fn parse_config(file: Option<&str>, overrides: &[(String, Value)]) -> Result<RunSpec, ConfigErrors> {
    let mut errors = Vec::new();
    let Value::Object(mut merged) = serde_json::to_value(RunSpec::default()).expect("defaults serialize") else {
        unreachable!("RunSpec serializes to an object")
    };
    if let Some(text) = file {
        match serde_json::from_str::<Value>(text) {
            Ok(Value::Object(map)) => {
                if let Value::Object(map) = expand_dotted(Value::Object(map)) {
                    overlay(&mut merged, map, "", &mut errors);
                }
            }
            Ok(_) => errors.push("config: top level must be a JSON object".into()),
            Err(e) => errors.push(format!("config: {e}")),
        }
    }
    let mut flags = Map::new();
    for (key, value) in overrides {
        flags.insert(key.clone(), value.clone());
    }
    if let Value::Object(map) = expand_dotted(Value::Object(flags)) {
        overlay(&mut merged, map, "", &mut errors);
    }

    // Type-check each section separately so one bad field does not hide the rest.
    let defaults = RunSpec::default();
    let mut spec = defaults.clone();
    macro_rules! section {
        ($field:ident) => {
            if let Some(v) = merged.remove(stringify!($field)) {
                match serde_json::from_value(v) {
                    Ok(x) => spec.$field = x,
                    Err(e) => errors.push(format!("{}: {e}", stringify!($field))),
                }
            }
        };
    }
    section!(command);
    section!(params);
    section!(grid);
    section!(theta_bc);
    section!(seed);
    section!(simulate);
    section!(spectrum);
    section!(resolvent);
    section!(coercivity);
    section!(sweep);
    section!(audit);

    errors.extend(validate(&spec));
    if errors.is_empty() {
        Ok(spec)
    } else {
        Err(ConfigErrors(errors))
    }
}

/// Parses `sine_mode:K`, `random_smooth:SEED` or `custom`.
pub fn parse_preset(preset: &str, custom: Option<&CustomData>) -> Result<InitialData, String> {
    let (name, arg) = preset.split_once(':').unwrap_or((preset, ""));
    match name {
        "sine_mode" => arg
            .parse::<u32>()
            .ok()
            .filter(|&k| k >= 1)
            .map(InitialData::SineMode)
            .ok_or_else(|| format!("`{preset}`: expected sine_mode:K with K >= 1")),
        "random_smooth" => arg
            .parse::<u64>()
            .map(InitialData::RandomSmooth)
            .map_err(|_| format!("`{preset}`: expected random_smooth:SEED")),
        "custom" => custom
            .cloned()
            .map(InitialData::Custom)
            .ok_or_else(|| "`custom` needs simulate.custom arrays".to_string()),
        _ => Err(format!("unknown preset `{preset}`")),
    }
}

/// Parses `name=v1,v2,...` or `name=start:stop:count` (linear, inclusive).
pub fn parse_axis(text: &str) -> Result<SweepAxis, String> {
    let (name, rest) = text
        .split_once('=')
        .ok_or_else(|| format!("`{text}`: expected name=values"))?;
    let param: SweepParam = name.trim().parse()?;
    let number = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("`{s}` is not a number"));
    let values = if rest.contains(':') {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("`{rest}`: expected start:stop:count"));
        }
        let (start, stop) = (number(parts[0])?, number(parts[1])?);
        let count: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| format!("`{}` is not a count", parts[2]))?;
        match count {
            0 => return Err("axis count must be >= 1".into()),
            1 => vec![start],
            _ => (0..count)
                .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
                .collect(),
        }
    } else {
        rest.split(',').map(number).collect::<Result<Vec<_>, _>>()?
    };
    Ok(SweepAxis { param, values })
}

fn validate(spec: &RunSpec) -> Vec<String> {
    let mut errors = Vec::new();
    let mut positive = |path: &str, v: f64| {
        if !(v.is_finite() && v > 0.0) {
            errors.push(format!("{path}: must be finite and > 0, got {v}"));
        }
    };
    let p = &spec.params;
    positive("params.alpha", p.alpha);
    positive("params.beta", p.beta);
    positive("params.kappa", p.kappa);
    positive("params.tau", p.tau);
    positive("params.ell", p.ell);
    let r = &spec.resolvent;
    let needs = |c: Command| spec.command == c;
    if needs(Command::Simulate) {
        positive("simulate.t_final", spec.simulate.t_final);
        positive("simulate.dt", spec.simulate.dt);
    }
    if needs(Command::Resolvent) {
        positive("resolvent.s", r.s);
        positive("resolvent.b_min", r.b_min);
        positive("resolvent.b_max", r.b_max);
    }
    if needs(Command::Coercivity) {
        positive("coercivity.a_min", spec.coercivity.a_min);
        positive("coercivity.a_max", spec.coercivity.a_max);
    }
    if needs(Command::Spectrum) {
        positive("spectrum.zero_tol_factor", spec.spectrum.zero_tol_factor);
    }
    if !(p.gamma.is_finite() && p.gamma >= 0.0) {
        errors.push(format!("params.gamma: must be finite and >= 0, got {}", p.gamma));
    }
    if errors.is_empty() {
        if let Err(e) = p.validate() {
            errors.push(format!("params: {e}"));
        }
    }
    if spec.grid.n_cells < 2 {
        errors.push(format!("grid.n_cells: must be >= 2, got {}", spec.grid.n_cells));
    }
    if spec.grid.n_rho < 1 {
        errors.push("grid.n_rho: must be >= 1, got 0".into());
    }
    match spec.command {
        Command::Simulate => {
            let s = &spec.simulate;
            if s.sample_stride == 0 {
                errors.push("simulate.sample_stride: must be >= 1".into());
            }
            if let Err(e) = parse_preset(&s.preset, s.custom.as_ref()) {
                errors.push(format!("simulate.preset: {e}"));
            }
            if s.formulation == Formulation::History && s.scheme != Scheme::ImplicitEuler {
                errors.push("simulate.scheme: the history formulation supports implicit_euler only".into());
            }
            if s.snapshot_times
                .iter()
                .any(|t| !(t.is_finite() && *t >= 0.0 && *t <= s.t_final))
            {
                errors.push("simulate.snapshot_times: must lie in [0, t_final]".into());
            }
        }
        Command::Resolvent => {
            if r.b_max < r.b_min {
                errors.push("resolvent.b_max: must be >= b_min".into());
            }
            if r.b_count < 2 || (r.symmetric && !r.b_count.is_multiple_of(2)) {
                errors.push(format!(
                    "resolvent.b_count: must be >= 2 (and even when symmetric), got {}",
                    r.b_count
                ));
            }
        }
        Command::Coercivity => {
            let c = &spec.coercivity;
            if c.a_max < c.a_min {
                errors.push("coercivity.a_max: must be >= a_min".into());
            }
            if !(c.b_min.is_finite() && c.b_max.is_finite() && c.b_max >= c.b_min) {
                errors.push("coercivity.b_max: must be finite and >= b_min".into());
            }
            if c.n_a == 0 || c.n_b == 0 {
                errors.push("coercivity.n_a, coercivity.n_b: must be >= 1".into());
            }
            if c.random_samples > 0 && spec.seed.is_none() {
                errors.push("seed: required when coercivity.random_samples > 0".into());
            }
        }
        Command::Sweep => match &spec.sweep.axis {
            None => errors.push("sweep.axis: required for the sweep command".into()),
            Some(axis) if axis.values.is_empty() => errors.push("sweep.axis.values: must not be empty".into()),
            Some(axis) if axis.values.iter().any(|v| !v.is_finite()) => {
                errors.push("sweep.axis.values: must be finite".into())
            }
            Some(_) => {}
        },
        Command::DissipationAudit => {
            if spec.seed.is_none() {
                errors.push("seed: required for dissipation-audit".into());
            }
            if spec.audit.samples == 0 {
                errors.push("audit.samples: must be >= 1".into());
            }
        }
        Command::Spectrum => {}
    }
    errors
}
