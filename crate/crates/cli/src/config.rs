//! Flat `section.key = value` configuration files.
//!
//! ```text
//! # comment
//! scenario = sphere
//! grid.n = 128
//! solver.eps = 0.1, 0.05
//! checks.bv = true
//! ```
//!
//! Every key is optional except `scenario`. Unknown or repeated keys are
//! errors. [`RunConfig::to_config_string`] writes every key, and reading that
//! text back gives an identical configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use obstacle_mcf::bvcheck::{DEFAULT_DIST_TOL, DEFAULT_MOTION_TOL, DEFAULT_PER_TOL};
use obstacle_mcf::diagnostics::{DEFAULT_DISS_TOL, DEFAULT_L1_TOL};
use obstacle_mcf::scenario::{ScenarioKind, ScenarioSpec};
use obstacle_mcf::solver::DEFAULT_ENERGY_INCREASE_TOL;

use crate::error::{CliError, CliResult};

/// Overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "OBSTACLE_MCF_OUTPUT_DIR";

const KEYS: [&str; 30] = [
    "scenario",
    "grid.dim",
    "grid.n",
    "solver.eps",
    "solver.t_end",
    "solver.scale",
    "solver.cfl_safety",
    "solver.dt_max",
    "solver.output_every",
    "run.seed",
    "run.threads",
    "output.dir",
    "output.snapshots",
    "checks.energy",
    "checks.energy.tol",
    "checks.ledger",
    "checks.ledger.tol",
    "checks.l1",
    "checks.l1.tol",
    "checks.bounds",
    "checks.time_derivative",
    "checks.bv",
    "checks.bv.fields",
    "checks.bv.motion_tol",
    "checks.bv.per_tol",
    "checks.bv.dist_tol",
    "checks.bv.contact_tol",
    "checks.sphere",
    "checks.sphere.tol",
    "study.n",
];

/// A check toggle with its tolerance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Toggle {
    pub enabled: bool,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BvChecks {
    pub enabled: bool,
    /// Number of seeded test fields for the bulk motion law.
    pub fields: usize,
    pub motion_tol: f64,
    pub per_tol: f64,
    pub dist_tol: f64,
    /// `None` selects the default contact tolerance of the obstacles.
    pub contact_tol: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checks {
    pub energy: Toggle,
    pub ledger: Toggle,
    pub l1: Toggle,
    pub bounds: bool,
    pub time_derivative: bool,
    pub bv: BvChecks,
    pub sphere: Toggle,
}

impl Default for Checks {
    fn default() -> Self {
        Self {
            energy: Toggle { enabled: true, tol: DEFAULT_ENERGY_INCREASE_TOL },
            ledger: Toggle { enabled: true, tol: DEFAULT_DISS_TOL },
            l1: Toggle { enabled: true, tol: DEFAULT_L1_TOL },
            bounds: true,
            time_derivative: true,
            bv: BvChecks {
                enabled: false,
                fields: 20,
                motion_tol: DEFAULT_MOTION_TOL,
                per_tol: DEFAULT_PER_TOL,
                dist_tol: DEFAULT_DIST_TOL,
                contact_tol: None,
            },
            sphere: Toggle { enabled: false, tol: 0.03 },
        }
    }
}

/// Everything a `run`, `audit` or `study` invocation needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub dim: usize,
    pub n: usize,
    /// Strictly decreasing.
    pub eps: Vec<f64>,
    pub t_end: f64,
    pub scale: f64,
    pub cfl_safety: f64,
    pub dt_max: f64,
    pub output_every: usize,
    pub seed: u64,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    pub output_dir: PathBuf,
    pub snapshots: bool,
    pub checks: Checks,
    /// Grid sizes of the `study` verb.
    pub study_n: Vec<usize>,
}

impl RunConfig {
    /// Defaults of a catalog scenario on a `dim`-dimensional grid of `n` points.
    pub fn for_scenario(kind: ScenarioKind, dim: usize, n: usize) -> Self {
        let spec = ScenarioSpec::new(kind, dim, n);
        Self {
            scenario: kind,
            dim,
            n,
            eps: spec.eps_list,
            t_end: spec.t_end,
            scale: spec.scale,
            cfl_safety: spec.cfl_safety,
            dt_max: f64::INFINITY,
            output_every: spec.output_every,
            seed: 0,
            threads: 0,
            output_dir: PathBuf::from("out"),
            snapshots: true,
            checks: Checks::default(),
            study_n: vec![n],
        }
    }

    /// Catalog spec with this configuration's overrides applied.
    pub fn scenario_spec(&self) -> ScenarioSpec {
        let mut spec = ScenarioSpec::new(self.scenario, self.dim, self.n);
        spec.eps_list = self.eps.clone();
        spec.t_end = self.t_end;
        spec.scale = self.scale;
        spec.cfl_safety = self.cfl_safety;
        spec.output_every = self.output_every;
        spec.seed = self.seed;
        spec
    }

    /// Checks ranges and cross-field constraints; errors name the key.
    pub fn validate(&self) -> CliResult<()> {
        let spec = self.scenario_spec();
        spec.validate().map_err(|e| match e {
            obstacle_mcf::Error::Grid(m) => CliError::invalid("grid", m),
            obstacle_mcf::Error::Parameter { name, reason } => CliError::invalid(field_of(name), reason),
            other => CliError::Core(other),
        })?;
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(CliError::invalid("solver.cfl_safety", "must lie in (0, 1]"));
        }
        if !(self.dt_max > 0.0) {
            return Err(CliError::invalid("solver.dt_max", "must be positive"));
        }
        if self.output_every == 0 {
            return Err(CliError::invalid("solver.output_every", "must be at least 1"));
        }
        let c = &self.checks;
        let tols = [
            ("checks.energy.tol", c.energy.tol),
            ("checks.ledger.tol", c.ledger.tol),
            ("checks.l1.tol", c.l1.tol),
            ("checks.bv.motion_tol", c.bv.motion_tol),
            ("checks.bv.per_tol", c.bv.per_tol),
            ("checks.bv.dist_tol", c.bv.dist_tol),
            ("checks.sphere.tol", c.sphere.tol),
        ];
        for (key, tol) in tols {
            if !(tol >= 0.0 && tol.is_finite()) {
                return Err(CliError::invalid(key, format!("must be a nonnegative number, got {tol}")));
            }
        }
        if let Some(tol) = c.bv.contact_tol {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(CliError::invalid("checks.bv.contact_tol", "must be positive or `auto`"));
            }
        }
        if c.sphere.enabled && self.scenario != ScenarioKind::Sphere {
            return Err(CliError::invalid("checks.sphere", "only available for the sphere scenario"));
        }
        if c.sphere.enabled && !(2..=3).contains(&self.dim) {
            return Err(CliError::invalid("checks.sphere", "needs grid.dim 2 or 3"));
        }
        if self.study_n.is_empty() {
            return Err(CliError::invalid("study.n", "must not be empty"));
        }
        for &n in &self.study_n {
            obstacle_mcf::TorusGrid::new(self.dim, n).map_err(|e| CliError::invalid("study.n", e.to_string()))?;
        }
        Ok(())
    }

    /// Text that [`parse_config`] turns back into `self`.
    pub fn to_config_string(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let c = &self.checks;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("scenario", self.scenario.name().into());
        put("grid.dim", self.dim.to_string());
        put("grid.n", self.n.to_string());
        put("solver.eps", list(&self.eps));
        put("solver.t_end", self.t_end.to_string());
        put("solver.scale", self.scale.to_string());
        put("solver.cfl_safety", self.cfl_safety.to_string());
        put("solver.dt_max", self.dt_max.to_string());
        put("solver.output_every", self.output_every.to_string());
        put("run.seed", self.seed.to_string());
        put("run.threads", self.threads.to_string());
        put("output.dir", self.output_dir.display().to_string());
        put("output.snapshots", self.snapshots.to_string());
        put("checks.energy", c.energy.enabled.to_string());
        put("checks.energy.tol", c.energy.tol.to_string());
        put("checks.ledger", c.ledger.enabled.to_string());
        put("checks.ledger.tol", c.ledger.tol.to_string());
        put("checks.l1", c.l1.enabled.to_string());
        put("checks.l1.tol", c.l1.tol.to_string());
        put("checks.bounds", c.bounds.to_string());
        put("checks.time_derivative", c.time_derivative.to_string());
        put("checks.bv", c.bv.enabled.to_string());
        put("checks.bv.fields", c.bv.fields.to_string());
        put("checks.bv.motion_tol", c.bv.motion_tol.to_string());
        put("checks.bv.per_tol", c.bv.per_tol.to_string());
        put("checks.bv.dist_tol", c.bv.dist_tol.to_string());
        put("checks.bv.contact_tol", c.bv.contact_tol.map_or("auto".into(), |t| t.to_string()));
        put("checks.sphere", c.sphere.enabled.to_string());
        put("checks.sphere.tol", c.sphere.tol.to_string());
        put("study.n", self.study_n.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", "));
        out
    }
}

fn field_of(name: &str) -> String {
    match name {
        "eps_list" => "solver.eps".into(),
        "t_end" | "scale" => format!("solver.{name}"),
        "dim" => "grid.dim".into(),
        other => other.into(),
    }
}

/// Value with the position of its first character.
struct Entry {
    value: String,
    line: usize,
    column: usize,
}

/// Parses configuration text; `origin` names the source in error messages.
pub fn parse_config(text: &str, origin: &str) -> CliResult<RunConfig> {
    let err =
        |line: usize, column: usize, message: String| CliError::Parse { path: origin.into(), line, column, message };
    let mut entries: BTreeMap<&str, Entry> = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let lead = content.len() - content.trim_start().len();
        let Some(eq) = content.find('=') else {
            return Err(err(line, lead + 1, "expected `key = value`".into()));
        };
        let key = content[..eq].trim();
        if key.is_empty() {
            return Err(err(line, lead + 1, "missing key before `=`".into()));
        }
        let Some(known) = KEYS.iter().find(|k| **k == key) else {
            return Err(err(line, lead + 1, format!("unknown key `{key}`")));
        };
        let rest = &content[eq + 1..];
        let value = rest.trim();
        let column = eq + 2 + (rest.len() - rest.trim_start().len());
        if value.is_empty() {
            return Err(err(line, column, format!("missing value for `{key}`")));
        }
        if let Some(prev) = entries.get(known) {
            return Err(err(line, lead + 1, format!("duplicate key `{key}` (first set on line {})", prev.line)));
        }
        entries.insert(known, Entry { value: value.to_string(), line, column });
    }

    let scenario = match entries.get("scenario") {
        Some(e) => ScenarioKind::parse(&e.value).map_err(|x| err(e.line, e.column, x.to_string()))?,
        None => return Err(CliError::invalid("scenario", "missing; every config names a catalog scenario")),
    };
    let get = |key: &str| entries.get(key);
    let num = |key: &str| -> CliResult<Option<f64>> {
        get(key)
            .map(|e| {
                e.value
                    .parse::<f64>()
                    .map_err(|_| err(e.line, e.column, format!("`{key}` expects a number, got `{}`", e.value)))
            })
            .transpose()
    };
    let int = |key: &str| -> CliResult<Option<u64>> {
        get(key)
            .map(|e| {
                e.value.parse::<u64>().map_err(|_| {
                    err(e.line, e.column, format!("`{key}` expects a nonnegative integer, got `{}`", e.value))
                })
            })
            .transpose()
    };
    let flag = |key: &str| -> CliResult<Option<bool>> {
        get(key)
            .map(|e| match e.value.as_str() {
                "true" | "on" | "yes" => Ok(true),
                "false" | "off" | "no" => Ok(false),
                v => Err(err(e.line, e.column, format!("`{key}` expects true or false, got `{v}`"))),
            })
            .transpose()
    };
    let usize_of = |key: &str| -> CliResult<Option<usize>> { Ok(int(key)?.map(|v| v as usize)) };

    let dim = usize_of("grid.dim")?.unwrap_or(2);
    let n = usize_of("grid.n")?.unwrap_or(64);
    let mut cfg = RunConfig::for_scenario(scenario, dim, n);
    if let Some(e) = get("solver.eps") {
        cfg.eps = list(e, |s| s.parse::<f64>().ok()).map_err(|(c, m)| err(e.line, c, format!("`solver.eps` {m}")))?;
    }
    if let Some(e) = get("study.n") {
        cfg.study_n =
            list(e, |s| s.parse::<usize>().ok()).map_err(|(c, m)| err(e.line, c, format!("`study.n` {m}")))?;
    }
    macro_rules! set {
        ($slot:expr, $v:expr) => {
            if let Some(v) = $v {
                $slot = v;
            }
        };
    }
    set!(cfg.t_end, num("solver.t_end")?);
    set!(cfg.scale, num("solver.scale")?);
    set!(cfg.cfl_safety, num("solver.cfl_safety")?);
    set!(cfg.dt_max, num("solver.dt_max")?);
    set!(cfg.output_every, usize_of("solver.output_every")?);
    set!(cfg.seed, int("run.seed")?);
    set!(cfg.threads, usize_of("run.threads")?);
    set!(cfg.output_dir, get("output.dir").map(|e| PathBuf::from(&e.value)));
    set!(cfg.snapshots, flag("output.snapshots")?);
    let c = &mut cfg.checks;
    set!(c.energy.enabled, flag("checks.energy")?);
    set!(c.energy.tol, num("checks.energy.tol")?);
    set!(c.ledger.enabled, flag("checks.ledger")?);
    set!(c.ledger.tol, num("checks.ledger.tol")?);
    set!(c.l1.enabled, flag("checks.l1")?);
    set!(c.l1.tol, num("checks.l1.tol")?);
    set!(c.bounds, flag("checks.bounds")?);
    set!(c.time_derivative, flag("checks.time_derivative")?);
    set!(c.bv.enabled, flag("checks.bv")?);
    set!(c.bv.fields, usize_of("checks.bv.fields")?);
    set!(c.bv.motion_tol, num("checks.bv.motion_tol")?);
    set!(c.bv.per_tol, num("checks.bv.per_tol")?);
    set!(c.bv.dist_tol, num("checks.bv.dist_tol")?);
    if let Some(e) = get("checks.bv.contact_tol") {
        c.bv.contact_tol = if e.value == "auto" {
            None
        } else {
            Some(e.value.parse::<f64>().map_err(|_| {
                err(e.line, e.column, format!("`checks.bv.contact_tol` expects a number or `auto`, got `{}`", e.value))
            })?)
        };
    }
    set!(c.sphere.enabled, flag("checks.sphere")?);
    set!(c.sphere.tol, num("checks.sphere.tol")?);
    cfg.validate()?;
    Ok(cfg)
}

/// Comma-separated list; errors carry the column of the bad item.
fn list<V>(e: &Entry, item: impl Fn(&str) -> Option<V>) -> Result<Vec<V>, (usize, String)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for part in e.value.split(',') {
        let lead = part.len() - part.trim_start().len();
        let s = part.trim();
        match item(s) {
            Some(v) => out.push(v),
            None => return Err((e.column + offset + lead, format!("has an invalid entry `{s}`"))),
        }
        offset += part.len() + 1;
    }
    Ok(out)
}

/// Reads and validates a configuration file, then applies the output
/// directory override from [`OUTPUT_DIR_ENV`].
pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))?;
    let mut cfg = parse_config(&text, &path.display().to_string())?;
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
        cfg.output_dir = PathBuf::from(dir);
    }
    Ok(cfg)
}
