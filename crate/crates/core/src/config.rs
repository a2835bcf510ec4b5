//! Run configuration: a TOML file with fixed sections, strict keys, and
//! `--set section.key=value` overrides on top.
//!
//! Precedence is override, then file, then built-in default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use toml::de::{DeTable, DeValue};

use crate::anisotropy::Anisotropy;
use crate::elasticity::{ElasticTensor, Mismatch, SlabMesh, SolveOptions};
use crate::energy::RegularizationParams;
use crate::error::{Error, Result};
use crate::evolution::EvolutionParams;
use crate::grid::{fmt_num, GridProfile, GridSpec};
use crate::stepper::{DescentMethod, ResolveCadence, StepParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Simulate,
    StabilityLyapunov,
    StabilityAsymptotic,
    Check,
}

impl Experiment {
    pub fn tag(&self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::StabilityLyapunov => "stability-lyapunov",
            Experiment::StabilityAsymptotic => "stability-asymptotic",
            Experiment::Check => "check",
        }
    }

    fn from_tag(s: &str) -> Option<Self> {
        [
            Experiment::Simulate,
            Experiment::StabilityLyapunov,
            Experiment::StabilityAsymptotic,
            Experiment::Check,
        ]
        .into_iter()
        .find(|e| e.tag() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnisotropyConfig {
    Isotropic,
    Cubic { a: f64 },
    Faceted { beta: f64, gamma: f64, smoothing: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorConfig {
    Lame { lambda: f64, mu: f64 },
    Voigt(Box<[[f64; 6]; 6]>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialConfig {
    Flat { d: f64 },
    Sinusoid { d: f64, amplitude: f64, wavevector: [i32; 2], phase: f64 },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub output_dir: PathBuf,
    /// Field dump cadence in steps; 0 disables dumps.
    pub dump_every: usize,
    pub ell: f64,
    pub n: usize,
    pub layers: usize,
    pub anisotropy: AnisotropyConfig,
    pub tensor: TensorConfig,
    pub mismatch: [f64; 2],
    pub epsilon: f64,
    pub p: f64,
    pub tau: f64,
    pub final_time: f64,
    pub lambda0: f64,
    pub floor_fraction: f64,
    pub stop_on_saturation: bool,
    pub max_retries: usize,
    pub initial: InitialConfig,
    pub method: DescentMethod,
    pub max_iterations: usize,
    pub el_tolerance: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub cadence: ResolveCadence,
    pub cg_tolerance: f64,
    pub sigma_factor: f64,
    pub max_mode: u32,
    pub convexity_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: Experiment::Simulate,
            output_dir: PathBuf::from("out"),
            dump_every: 0,
            ell: 1.0,
            n: 64,
            layers: 8,
            anisotropy: AnisotropyConfig::Isotropic,
            tensor: TensorConfig::Lame { lambda: 1.0, mu: 1.0 },
            mismatch: [0.0, 0.0],
            epsilon: 1e-3,
            p: 3.0,
            tau: 1e-4,
            final_time: 1e-3,
            lambda0: 1.0,
            floor_fraction: 0.5,
            stop_on_saturation: false,
            max_retries: 3,
            initial: InitialConfig::Flat { d: 0.1 },
            method: DescentMethod::QuasiNewton,
            max_iterations: 500,
            el_tolerance: 1e-7,
            armijo: 1e-4,
            shrink: 0.5,
            cadence: ResolveCadence::EveryUpdate,
            cg_tolerance: 1e-10,
            sigma_factor: 10.0,
            max_mode: 4,
            convexity_samples: 2000,
        }
    }
}

/// A scalar read from the file or an override, with its source line.
#[derive(Clone, Debug)]
enum Raw {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    Array(Vec<Raw>),
}

impl Raw {
    fn describe(&self) -> &'static str {
        match self {
            Raw::Str(_) => "a string",
            Raw::Int(_) => "an integer",
            Raw::Float(_) => "a float",
            Raw::Bool(_) => "a boolean",
            Raw::Array(_) => "an array",
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match *self {
            Raw::Float(x) => Some(x),
            Raw::Int(i) => Some(i as f64),
            _ => None,
        }
    }
}

/// Where a value came from, for messages.
#[derive(Clone, Copy, Debug)]
enum Origin {
    Line(usize),
    Override,
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Origin::Line(l) => write!(f, "line {l}"),
            Origin::Override => write!(f, "--set"),
        }
    }
}

const TOP_KEYS: &[&str] = &["experiment", "output_dir", "dump_every"];
const SECTIONS: &[(&str, &[&str])] = &[
    ("grid", &["ell", "n", "layers"]),
    (
        "physics",
        &[
            "anisotropy",
            "cubic_a",
            "facet_beta",
            "facet_gamma",
            "facet_smoothing",
            "lambda",
            "mu",
            "voigt",
            "mismatch",
        ],
    ),
    ("regularization", &["epsilon", "p"]),
    (
        "evolution",
        &["tau", "final_time", "lambda0", "floor_fraction", "stop_on_saturation", "max_retries"],
    ),
    ("initial", &["kind", "d", "amplitude", "wavevector", "phase", "path"]),
    (
        "solver",
        &["method", "max_iterations", "el_tolerance", "armijo", "shrink", "resolve", "cg_tolerance"],
    ),
    ("stability", &["sigma_factor", "max_mode", "convexity_samples"]),
];

type RawMap = BTreeMap<String, (Raw, Origin)>;

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn convert(v: &DeValue<'_>) -> std::result::Result<Raw, String> {
    match v {
        DeValue::String(s) => Ok(Raw::Str(s.to_string())),
        DeValue::Integer(i) => {
            let digits: String = i.as_str().chars().filter(|&c| c != '_').collect();
            let (neg, body) = match digits.strip_prefix('-') {
                Some(rest) => (true, rest.to_string()),
                None => (false, digits.trim_start_matches('+').to_string()),
            };
            let body = if i.radix() == 10 { body.as_str() } else { &body[2..] };
            let val = i64::from_str_radix(body, i.radix()).map_err(|e| format!("bad integer: {e}"))?;
            Ok(Raw::Int(if neg { -val } else { val }))
        }
        DeValue::Float(f) => {
            let s: String = f.as_str().chars().filter(|&c| c != '_').collect();
            let x = match s.trim_start_matches('+') {
                "inf" => f64::INFINITY,
                "-inf" => f64::NEG_INFINITY,
                "nan" | "-nan" => f64::NAN,
                t => t.parse::<f64>().map_err(|e| format!("bad float: {e}"))?,
            };
            Ok(Raw::Float(x))
        }
        DeValue::Boolean(b) => Ok(Raw::Bool(*b)),
        DeValue::Array(a) => a.iter().map(|x| convert(x.get_ref())).collect::<std::result::Result<_, _>>().map(Raw::Array),
        DeValue::Datetime(_) => Err("datetimes are not supported".into()),
        DeValue::Table(_) => Err("nested tables are not supported".into()),
    }
}

fn parse_document(text: &str) -> Result<RawMap> {
    let doc = DeTable::parse(text).map_err(|e| Error::Parse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let mut map = RawMap::new();
    let mut problems = Vec::new();
    for (key, value) in doc.get_ref().iter() {
        let line = line_of(text, key.span().start);
        let name = key.get_ref().as_ref();
        match value.get_ref() {
            DeValue::Table(section) => {
                let Some((_, allowed)) = SECTIONS.iter().find(|(s, _)| *s == name) else {
                    problems.push(format!("line {line}: unknown section [{name}]"));
                    continue;
                };
                for (k, v) in section.iter() {
                    let kl = line_of(text, k.span().start);
                    let kname = k.get_ref().as_ref();
                    if !allowed.contains(&kname) {
                        problems.push(format!("line {kl}: unknown key '{kname}' in [{name}]"));
                        continue;
                    }
                    match convert(v.get_ref()) {
                        Ok(raw) => {
                            map.insert(format!("{name}.{kname}"), (raw, Origin::Line(kl)));
                        }
                        Err(m) => problems.push(format!("line {kl}: {name}.{kname}: {m}")),
                    }
                }
            }
            other => {
                if !TOP_KEYS.contains(&name) {
                    problems.push(format!("line {line}: unknown key '{name}'"));
                    continue;
                }
                match convert(other) {
                    Ok(raw) => {
                        map.insert(name.to_string(), (raw, Origin::Line(line)));
                    }
                    Err(m) => problems.push(format!("line {line}: {name}: {m}")),
                }
            }
        }
    }
    if problems.is_empty() {
        Ok(map)
    } else {
        Err(Error::Config(problems))
    }
}

fn known_key(key: &str) -> bool {
    match key.split_once('.') {
        None => TOP_KEYS.contains(&key),
        Some((s, k)) => SECTIONS.iter().any(|(name, keys)| *name == s && keys.contains(&k)),
    }
}

/// `section.key=value`, the value in TOML syntax or a bare word.
fn apply_overrides(map: &mut RawMap, overrides: &[String]) -> Result<()> {
    let mut problems = Vec::new();
    for item in overrides {
        let Some((key, value)) = item.split_once('=') else {
            problems.push(format!("--set {item}: expected key=value"));
            continue;
        };
        let key = key.trim();
        if !known_key(key) {
            problems.push(format!("--set {item}: unknown key '{key}'"));
            continue;
        }
        let value = value.trim();
        let raw = match DeValue::parse(value) {
            Ok(v) => convert(v.get_ref()),
            Err(_) => Ok(Raw::Str(value.to_string())),
        };
        match raw {
            Ok(raw) => {
                map.insert(key.to_string(), (raw, Origin::Override));
            }
            Err(m) => problems.push(format!("--set {item}: {m}")),
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems))
    }
}

/// Typed extraction that records every problem instead of stopping.
struct Reader<'a> {
    map: &'a RawMap,
    problems: Vec<String>,
}

impl Reader<'_> {
    fn at(&self, key: &str) -> String {
        match self.map.get(key) {
            Some((_, o)) => format!("{o}: {key}"),
            None => key.to_string(),
        }
    }

    fn float(&mut self, key: &str, default: f64) -> f64 {
        match self.map.get(key) {
            None => default,
            Some((raw, o)) => match raw.as_f64() {
                Some(x) => x,
                None => {
                    self.problems.push(format!("{o}: {key} must be a number, got {}", raw.describe()));
                    default
                }
            },
        }
    }

    fn uint(&mut self, key: &str, default: usize) -> usize {
        match self.map.get(key) {
            None => default,
            Some((Raw::Int(i), _)) if *i >= 0 => *i as usize,
            Some((raw, o)) => {
                self.problems
                    .push(format!("{o}: {key} must be a non-negative integer, got {}", raw.describe()));
                default
            }
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.map.get(key) {
            None => default,
            Some((Raw::Bool(b), _)) => *b,
            Some((raw, o)) => {
                self.problems.push(format!("{o}: {key} must be a boolean, got {}", raw.describe()));
                default
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.map.get(key) {
            None => None,
            Some((Raw::Str(s), _)) => Some(s.clone()),
            Some((raw, o)) => {
                self.problems.push(format!("{o}: {key} must be a string, got {}", raw.describe()));
                None
            }
        }
    }

    fn floats<const N: usize>(&mut self, key: &str, default: [f64; N]) -> [f64; N] {
        match self.map.get(key) {
            None => default,
            Some((Raw::Array(items), o)) if items.len() == N => {
                let mut out = default;
                for (slot, item) in out.iter_mut().zip(items) {
                    match item.as_f64() {
                        Some(x) => *slot = x,
                        None => {
                            self.problems.push(format!("{o}: {key} entries must be numbers"));
                            return default;
                        }
                    }
                }
                out
            }
            Some((_, o)) => {
                self.problems.push(format!("{o}: {key} must be an array of {N} numbers"));
                default
            }
        }
    }

    fn ints2(&mut self, key: &str, default: [i32; 2]) -> [i32; 2] {
        match self.map.get(key) {
            None => default,
            Some((Raw::Array(items), o)) if items.len() == 2 => {
                let mut out = default;
                for (slot, item) in out.iter_mut().zip(items) {
                    match item {
                        Raw::Int(i) if i32::try_from(*i).is_ok() => *slot = *i as i32,
                        _ => {
                            self.problems.push(format!("{o}: {key} entries must be integers"));
                            return default;
                        }
                    }
                }
                out
            }
            Some((_, o)) => {
                self.problems.push(format!("{o}: {key} must be an array of 2 integers"));
                default
            }
        }
    }

    fn matrix6(&mut self, key: &str) -> Option<[[f64; 6]; 6]> {
        let (raw, o) = self.map.get(key)?;
        let mut out = [[0.0; 6]; 6];
        let ok = match raw {
            Raw::Array(rows) if rows.len() == 6 => rows.iter().zip(out.iter_mut()).all(|(row, dst)| match row {
                Raw::Array(vals) if vals.len() == 6 => vals.iter().zip(dst.iter_mut()).all(|(v, d)| match v.as_f64() {
                    Some(x) => {
                        *d = x;
                        true
                    }
                    None => false,
                }),
                _ => false,
            }),
            _ => false,
        };
        if ok {
            Some(out)
        } else {
            self.problems.push(format!("{o}: {key} must be a 6x6 array of numbers"));
            None
        }
    }

    fn require(&mut self, ok: bool, key: &str, message: &str) {
        if !ok {
            let at = self.at(key);
            self.problems.push(format!("{at} {message}"));
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_text(&text, overrides)?;
        if let InitialConfig::File { path: p } = &mut cfg.initial {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self> {
        let mut map = parse_document(text)?;
        apply_overrides(&mut map, overrides)?;
        Self::from_map(&map)
    }

    fn from_map(map: &RawMap) -> Result<Self> {
        let d = RunConfig::default();
        let mut r = Reader {
            map,
            problems: Vec::new(),
        };
        let experiment = match r.string("experiment") {
            None => d.experiment,
            Some(s) => Experiment::from_tag(&s).unwrap_or_else(|| {
                let at = r.at("experiment");
                r.problems.push(format!(
                    "{at} must be one of simulate, stability-lyapunov, stability-asymptotic, check; got '{s}'"
                ));
                d.experiment
            }),
        };
        let output_dir = r.string("output_dir").map(PathBuf::from).unwrap_or(d.output_dir);
        let dump_every = r.uint("dump_every", d.dump_every);

        let ell = r.float("grid.ell", d.ell);
        let n = r.uint("grid.n", d.n);
        let layers = r.uint("grid.layers", d.layers);
        r.require(ell > 0.0 && ell.is_finite(), "grid.ell", "must be positive");
        r.require(n >= 8, "grid.n", "must be at least 8");
        r.require(layers >= 4, "grid.layers", "must be at least 4");

        let family = r.string("physics.anisotropy").unwrap_or_else(|| "isotropic".into());
        let anisotropy = match family.as_str() {
            "isotropic" => AnisotropyConfig::Isotropic,
            "cubic" => AnisotropyConfig::Cubic {
                a: r.float("physics.cubic_a", 0.0),
            },
            "faceted" => AnisotropyConfig::Faceted {
                beta: r.float("physics.facet_beta", 0.5),
                gamma: r.float("physics.facet_gamma", 1.0),
                smoothing: r.float("physics.facet_smoothing", 1e-3),
            },
            other => {
                let at = r.at("physics.anisotropy");
                r.problems.push(format!("{at} must be isotropic, cubic or faceted; got '{other}'"));
                AnisotropyConfig::Isotropic
            }
        };
        let tensor = match r.matrix6("physics.voigt") {
            Some(v) => {
                if map.contains_key("physics.lambda") || map.contains_key("physics.mu") {
                    r.problems.push("physics.voigt cannot be combined with physics.lambda/mu".into());
                }
                TensorConfig::Voigt(Box::new(v))
            }
            None => TensorConfig::Lame {
                lambda: r.float("physics.lambda", 1.0),
                mu: r.float("physics.mu", 1.0),
            },
        };
        let mismatch = r.floats("physics.mismatch", d.mismatch);
        let zero = mismatch == [0.0, 0.0];
        r.require(
            zero || (mismatch[0] > 0.0 && mismatch[1] > 0.0),
            "physics.mismatch",
            "components must both be positive (or both zero to disable elasticity)",
        );

        let epsilon = r.float("regularization.epsilon", d.epsilon);
        let p = r.float("regularization.p", d.p);
        r.require(epsilon > 0.0, "regularization.epsilon", "must be positive");
        r.require(p > 2.0, "regularization.p", "must satisfy p > 2");

        let tau = r.float("evolution.tau", d.tau);
        let final_time = r.float("evolution.final_time", d.final_time);
        let lambda0 = r.float("evolution.lambda0", d.lambda0);
        let floor_fraction = r.float("evolution.floor_fraction", d.floor_fraction);
        let stop_on_saturation = r.boolean("evolution.stop_on_saturation", d.stop_on_saturation);
        let max_retries = r.uint("evolution.max_retries", d.max_retries);
        r.require(tau > 0.0, "evolution.tau", "must be positive");
        r.require(final_time >= tau, "evolution.final_time", "must be at least tau");
        r.require(lambda0 > 0.0, "evolution.lambda0", "must be positive");
        r.require(
            floor_fraction > 0.0 && floor_fraction < 1.0,
            "evolution.floor_fraction",
            "must lie in (0, 1)",
        );

        let kind = r.string("initial.kind").unwrap_or_else(|| "flat".into());
        let mean = r.float("initial.d", 0.1);
        let initial = match kind.as_str() {
            "flat" => InitialConfig::Flat { d: mean },
            "sinusoid" => InitialConfig::Sinusoid {
                d: mean,
                amplitude: r.float("initial.amplitude", 0.0),
                wavevector: r.ints2("initial.wavevector", [1, 0]),
                phase: r.float("initial.phase", 0.0),
            },
            "file" => match r.string("initial.path") {
                Some(p) => InitialConfig::File { path: PathBuf::from(p) },
                None => {
                    r.problems.push("initial.path is required when initial.kind = \"file\"".into());
                    InitialConfig::Flat { d: mean }
                }
            },
            other => {
                let at = r.at("initial.kind");
                r.problems.push(format!("{at} must be flat, sinusoid or file; got '{other}'"));
                InitialConfig::Flat { d: mean }
            }
        };
        if !matches!(initial, InitialConfig::File { .. }) {
            r.require(mean > 0.0, "initial.d", "must be positive");
        }

        let method = match r.string("solver.method") {
            None => d.method,
            Some(s) => DescentMethod::from_tag(&s).unwrap_or_else(|| {
                let at = r.at("solver.method");
                r.problems.push(format!("{at} must be projected-gradient or quasi-newton; got '{s}'"));
                d.method
            }),
        };
        let max_iterations = r.uint("solver.max_iterations", d.max_iterations);
        let el_tolerance = r.float("solver.el_tolerance", d.el_tolerance);
        let armijo = r.float("solver.armijo", d.armijo);
        let shrink = r.float("solver.shrink", d.shrink);
        let cadence = match r.string("solver.resolve") {
            None => d.cadence,
            Some(s) => ResolveCadence::from_tag(&s).unwrap_or_else(|| {
                let at = r.at("solver.resolve");
                r.problems
                    .push(format!("{at} must be every-update, every-<k> or inner-convergence; got '{s}'"));
                d.cadence
            }),
        };
        let cg_tolerance = r.float("solver.cg_tolerance", d.cg_tolerance);
        r.require(max_iterations > 0, "solver.max_iterations", "must be positive");
        r.require(el_tolerance > 0.0, "solver.el_tolerance", "must be positive");
        r.require(armijo > 0.0 && armijo < 1.0, "solver.armijo", "must lie in (0, 1)");
        r.require(shrink > 0.0 && shrink < 1.0, "solver.shrink", "must lie in (0, 1)");
        r.require(cg_tolerance > 0.0, "solver.cg_tolerance", "must be positive");

        let sigma_factor = r.float("stability.sigma_factor", d.sigma_factor);
        let max_mode = r.uint("stability.max_mode", d.max_mode as usize);
        let convexity_samples = r.uint("stability.convexity_samples", d.convexity_samples);
        r.require(sigma_factor >= 1.0, "stability.sigma_factor", "must be at least 1");
        r.require((1..=64).contains(&max_mode), "stability.max_mode", "must lie in 1..=64");
        r.require(convexity_samples >= 10, "stability.convexity_samples", "must be at least 10");

        let cfg = RunConfig {
            experiment,
            output_dir,
            dump_every,
            ell,
            n,
            layers,
            anisotropy,
            tensor,
            mismatch,
            epsilon,
            p,
            tau,
            final_time,
            lambda0,
            floor_fraction,
            stop_on_saturation,
            max_retries,
            initial,
            method,
            max_iterations,
            el_tolerance,
            armijo,
            shrink,
            cadence,
            cg_tolerance,
            sigma_factor,
            max_mode: max_mode as u32,
            convexity_samples,
        };
        let mut problems = r.problems;
        if problems.is_empty() {
            // constructors re-validate what the modules own
            if let Err(e) = cfg.anisotropy() {
                problems.push(format!("physics: {e}"));
            }
            if let Err(e) = cfg.tensor() {
                problems.push(format!("physics: {e}"));
            }
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.ell, self.n)
    }

    pub fn mesh(&self) -> Result<SlabMesh> {
        SlabMesh::new(self.grid()?, self.layers)
    }

    pub fn anisotropy(&self) -> Result<Anisotropy> {
        match self.anisotropy {
            AnisotropyConfig::Isotropic => Ok(Anisotropy::Isotropic),
            AnisotropyConfig::Cubic { a } => Anisotropy::cubic(a),
            AnisotropyConfig::Faceted { beta, gamma, smoothing } => Anisotropy::faceted(beta, gamma, smoothing),
        }
    }

    pub fn tensor(&self) -> Result<ElasticTensor> {
        match &self.tensor {
            TensorConfig::Lame { lambda, mu } => ElasticTensor::isotropic(*lambda, *mu),
            TensorConfig::Voigt(v) => ElasticTensor::from_voigt(**v),
        }
    }

    pub fn mismatch(&self) -> Result<Mismatch> {
        if self.mismatch == [0.0, 0.0] {
            Ok(Mismatch::zero())
        } else {
            Mismatch::new(self.mismatch[0], self.mismatch[1])
        }
    }

    pub fn regularization(&self) -> Result<RegularizationParams> {
        RegularizationParams::new(self.epsilon, self.p, self.tau, self.lambda0)
    }

    pub fn step_params(&self) -> Result<StepParams> {
        let mut s = StepParams::new(self.regularization()?);
        s.method = self.method;
        s.max_iterations = self.max_iterations;
        s.el_tolerance = self.el_tolerance;
        s.armijo = self.armijo;
        s.shrink = self.shrink;
        s.cadence = self.cadence;
        s.solve = SolveOptions {
            tolerance: self.cg_tolerance,
            ..SolveOptions::default()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn evolution_params(&self) -> Result<EvolutionParams> {
        let mut e = EvolutionParams::new(self.final_time, self.tau, self.lambda0)?;
        e.floor_fraction = self.floor_fraction;
        e.stop_on_saturation = self.stop_on_saturation;
        e.max_retries = self.max_retries;
        e.validate()?;
        Ok(e)
    }

    /// Mean height of the initial profile, or of the file profile.
    pub fn initial_profile(&self) -> Result<GridProfile> {
        let spec = self.grid()?;
        match &self.initial {
            InitialConfig::Flat { d } => Ok(GridProfile::constant(spec, *d)),
            InitialConfig::Sinusoid {
                d,
                amplitude,
                wavevector,
                phase,
            } => Ok(GridProfile::fourier_mode(spec, *d, *amplitude, *wavevector, *phase)),
            InitialConfig::File { path } => {
                let h = GridProfile::read(path)?;
                spec.check_same(h.spec())?;
                Ok(h)
            }
        }
    }

    /// Canonical TOML text; loading it yields an equal config.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        let q = |x: &str| format!("\"{}\"", x.replace('\\', "\\\\").replace('"', "\\\""));
        let f = |x: f64| fmt_num(x);
        let _ = writeln!(s, "experiment = {}", q(self.experiment.tag()));
        let _ = writeln!(s, "output_dir = {}", q(&self.output_dir.to_string_lossy()));
        let _ = writeln!(s, "dump_every = {}", self.dump_every);
        let _ = writeln!(s, "\n[grid]\nell = {}\nn = {}\nlayers = {}", f(self.ell), self.n, self.layers);
        s.push_str("\n[physics]\n");
        match self.anisotropy {
            AnisotropyConfig::Isotropic => s.push_str("anisotropy = \"isotropic\"\n"),
            AnisotropyConfig::Cubic { a } => {
                let _ = writeln!(s, "anisotropy = \"cubic\"\ncubic_a = {}", f(a));
            }
            AnisotropyConfig::Faceted { beta, gamma, smoothing } => {
                let _ = writeln!(
                    s,
                    "anisotropy = \"faceted\"\nfacet_beta = {}\nfacet_gamma = {}\nfacet_smoothing = {}",
                    f(beta),
                    f(gamma),
                    f(smoothing)
                );
            }
        }
        match &self.tensor {
            TensorConfig::Lame { lambda, mu } => {
                let _ = writeln!(s, "lambda = {}\nmu = {}", f(*lambda), f(*mu));
            }
            TensorConfig::Voigt(v) => {
                let rows: Vec<String> = v
                    .iter()
                    .map(|r| format!("[{}]", r.iter().map(|x| f(*x)).collect::<Vec<_>>().join(", ")))
                    .collect();
                let _ = writeln!(s, "voigt = [{}]", rows.join(", "));
            }
        }
        let _ = writeln!(s, "mismatch = [{}, {}]", f(self.mismatch[0]), f(self.mismatch[1]));
        let _ = writeln!(s, "\n[regularization]\nepsilon = {}\np = {}", f(self.epsilon), f(self.p));
        let _ = writeln!(
            s,
            "\n[evolution]\ntau = {}\nfinal_time = {}\nlambda0 = {}\nfloor_fraction = {}\nstop_on_saturation = {}\nmax_retries = {}",
            f(self.tau),
            f(self.final_time),
            f(self.lambda0),
            f(self.floor_fraction),
            self.stop_on_saturation,
            self.max_retries
        );
        s.push_str("\n[initial]\n");
        match &self.initial {
            InitialConfig::Flat { d } => {
                let _ = writeln!(s, "kind = \"flat\"\nd = {}", f(*d));
            }
            InitialConfig::Sinusoid {
                d,
                amplitude,
                wavevector,
                phase,
            } => {
                let _ = writeln!(
                    s,
                    "kind = \"sinusoid\"\nd = {}\namplitude = {}\nwavevector = [{}, {}]\nphase = {}",
                    f(*d),
                    f(*amplitude),
                    wavevector[0],
                    wavevector[1],
                    f(*phase)
                );
            }
            InitialConfig::File { path } => {
                let _ = writeln!(s, "kind = \"file\"\npath = {}", q(&path.to_string_lossy()));
            }
        }
        let _ = writeln!(
            s,
            "\n[solver]\nmethod = {}\nmax_iterations = {}\nel_tolerance = {}\narmijo = {}\nshrink = {}\nresolve = {}\ncg_tolerance = {}",
            q(self.method.tag()),
            self.max_iterations,
            f(self.el_tolerance),
            f(self.armijo),
            f(self.shrink),
            q(&self.cadence.tag()),
            f(self.cg_tolerance)
        );
        let _ = writeln!(
            s,
            "\n[stability]\nsigma_factor = {}\nmax_mode = {}\nconvexity_samples = {}",
            f(self.sigma_factor),
            self.max_mode,
            self.convexity_samples
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_text("[initial]\nkind = \"flat\"\nd = 0.2\n", &[]).unwrap();
        assert_eq!(cfg.epsilon, 1e-3);
        assert_eq!(cfg.p, 3.0);
        assert_eq!(cfg.layers, 8);
        assert_eq!(cfg.initial, InitialConfig::Flat { d: 0.2 });
    }

    #[test]
    fn collects_every_violation() {
        let text = "[grid]\nell = -1.0\n\n[regularization]\np = 2\n";
        let Err(Error::Config(list)) = RunConfig::from_text(text, &[]) else {
            panic!("expected config error");
        };
        assert_eq!(list.len(), 2, "{list:?}");
        assert!(list[0].contains("line 2") && list[0].contains("grid.ell"));
        assert!(list[1].contains("p > 2") && list[1].contains("line 5"));
    }

    #[test]
    fn unknown_keys_and_sections_rejected() {
        let text = "bogus = 1\n[grid]\nsize = 3\n[extra]\nx = 1\n";
        let Err(Error::Config(list)) = RunConfig::from_text(text, &[]) else {
            panic!("expected config error");
        };
        assert_eq!(list.len(), 3, "{list:?}");
        assert!(list.iter().any(|m| m.contains("line 3") && m.contains("size")));
    }

    #[test]
    fn syntax_error_carries_line() {
        let err = RunConfig::from_text("[grid]\nn = 16\nell = = 2\n", &[]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn override_beats_file_beats_default() {
        let text = "[grid]\nn = 32\n";
        let cfg = RunConfig::from_text(text, &["grid.n=16".into(), "experiment=check".into()]).unwrap();
        assert_eq!(cfg.n, 16);
        assert_eq!(cfg.experiment, Experiment::Check);
        assert_eq!(cfg.ell, 1.0);
        let cfg = RunConfig::from_text(text, &[]).unwrap();
        assert_eq!(cfg.n, 32);
        assert!(RunConfig::from_text(text, &["grid.size=3".into()]).is_err());
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig {
            anisotropy: AnisotropyConfig::Faceted {
                beta: 0.3,
                gamma: 1.1,
                smoothing: 1e-3,
            },
            initial: InitialConfig::Sinusoid {
                d: 0.1,
                amplitude: 0.01 / 3.0,
                wavevector: [2, -1],
                phase: 0.25,
            },
            mismatch: [0.02, 0.01],
            cadence: ResolveCadence::Every(4),
            ..RunConfig::default()
        };
        let back = RunConfig::from_text(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
        let voigt = RunConfig {
            tensor: TensorConfig::Voigt(Box::new(*ElasticTensor::isotropic(1.0, 0.5).unwrap().voigt())),
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_text(&voigt.to_toml(), &[]).unwrap(), voigt);
    }
}
