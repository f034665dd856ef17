//! Orchestration of the `run`, `audit` and `study` verbs.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use obstacle_mcf::bvcheck::{
    bulk_motion_law_residual, default_band, default_grad_floor, distributional_velocity_residual,
    per_level_dissipation_residual, perimeter, reports_to_csv, sort_reports, BvContext, BvOptions, FieldMode,
    FieldSource, LevelSetProbe, ResidualReport, Sidedness, TestField, TestFieldSpec, Window,
};
use obstacle_mcf::diagnostics::{
    check_bounds, check_energy_monotone, check_l1_monotone, check_ledger, check_time_derivative, penalty_mass,
};
use obstacle_mcf::model::{audit_well_prepared, AuditReport};
use obstacle_mcf::properties::sphere_deviation;
use obstacle_mcf::scalar::deterministic_max;
use obstacle_mcf::scenario::SPHERE_RADIUS;
use obstacle_mcf::solver::{run, RunError};
use obstacle_mcf::{Obstacles, Run};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::snapshot::write_snapshot;

/// Verdict of one named check on one run.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub eps: f64,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub checks: Vec<CheckOutcome>,
    pub residuals: Vec<ResidualReport>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn first_failure(&self) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| !c.pass)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(out, "{} {} eps={} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.eps, c.detail);
        }
        let _ = writeln!(out, "overall: {}", if self.pass() { "PASS" } else { "FAIL" });
        out
    }
}

/// Runs `f` on a pool of `threads` workers (0: rayon's default).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> CliResult<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::invalid("run.threads", e.to_string()))?;
    Ok(pool.install(f))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}", dir.display()), e))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))
}

/// Well-preparedness audit of the configured data.
pub fn audit(cfg: &RunConfig) -> CliResult<AuditReport> {
    let spec = cfg.scenario_spec();
    let obs = spec.obstacles::<f64>()?;
    let g = spec.initial::<f64>()?;
    Ok(audit_well_prepared(&obs, &g)?)
}

fn setup(cfg: &RunConfig) -> CliResult<Obstacles> {
    let report = audit(cfg)?;
    if !report.pass {
        return Err(CliError::invalid("audit", format!("data not well prepared\n{report}")));
    }
    Ok(cfg.scenario_spec().obstacles::<f64>()?)
}

/// One solver run per `eps`; a partial trace is still written on abort.
fn solve(cfg: &RunConfig, obs: &Obstacles, eps: f64, trace_path: Option<&Path>) -> CliResult<Run> {
    let mut sc = cfg.scenario_spec().config::<f64>(eps)?;
    sc.dt_max = cfg.dt_max;
    sc.energy_increase_tol = if cfg.checks.energy.enabled { cfg.checks.energy.tol } else { f64::INFINITY };
    match run(sc, obs) {
        Ok(traj) => Ok(traj),
        Err(e) => {
            if let (Some(path), Some(partial)) = (trace_path, e.partial()) {
                write(path, &partial.trace.to_csv())?;
            }
            Err(match e {
                RunError::EnergyIncrease { .. } => {
                    CliError::Numerical(format!("check energy failed at eps={eps}: {e}"))
                }
                other => other.into(),
            })
        }
    }
}

/// Runs every `eps` of the configuration, writes traces, snapshots,
/// residuals and the summary into the output directory.
pub fn run_experiment(cfg: &RunConfig) -> CliResult<Outcome> {
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    write(&dir.join("effective.cfg"), &cfg.to_config_string())?;
    let obs = setup(cfg)?;
    let mut outcome = Outcome::default();
    for (j, &eps) in cfg.eps.iter().enumerate() {
        let trace_path = dir.join(format!("trace_e{j}.csv"));
        let traj = with_threads(cfg.threads, || solve(cfg, &obs, eps, Some(&trace_path)))??;
        write(&trace_path, &traj.trace.to_csv())?;
        if cfg.snapshots {
            for (k, s) in traj.snapshots.iter().enumerate() {
                write_snapshot(&dir.join(format!("snap_e{j}_{k:04}.bin")), &s.u, s.t)?;
            }
        }
        let (checks, residuals) = with_threads(cfg.threads, || evaluate(cfg, &traj, &obs))??;
        outcome.checks.extend(checks);
        outcome.residuals.extend(residuals);
    }
    sort_reports(&mut outcome.residuals);
    write(&dir.join("residuals.csv"), &reports_to_csv(&outcome.residuals))?;
    write(&dir.join("summary.txt"), &outcome.summary())?;
    Ok(outcome)
}

fn evaluate(cfg: &RunConfig, traj: &Run, obs: &Obstacles) -> CliResult<(Vec<CheckOutcome>, Vec<ResidualReport>)> {
    let c = &cfg.checks;
    let eps = traj.eps;
    let g = &traj.initial().u;
    let mut out = Vec::new();
    let mut push =
        |name: &str, pass: bool, detail: String| out.push(CheckOutcome { name: name.into(), eps, pass, detail });
    if c.energy.enabled {
        let r = check_energy_monotone(&traj.trace, c.energy.tol);
        push("energy", r.pass, format!("max_increase={:e} allowed={:e}", r.max_increase, r.allowed));
    }
    if c.ledger.enabled {
        let r = check_ledger(&traj.trace, c.ledger.tol);
        push(
            "ledger",
            r.pass,
            format!("max_pair_residual={:e} full_run={:e} tol={}", r.max_pair_residual, r.full_run_residual, r.tol),
        );
    }
    if c.l1.enabled {
        let r = check_l1_monotone(&traj.trace, c.l1.tol);
        push(
            "l1",
            r.pass,
            format!("initial={:e} max={:e} max_jump={:e} tol={}", r.initial, r.max_value, r.max_jump, r.tol),
        );
    }
    if c.bounds {
        let r = check_bounds(&traj.trace, obs, g)?;
        push(
            "bounds",
            r.pass,
            format!(
                "inf={:e} sup={:e} range=[{:e}, {:e}] mp_tol={:e} max_grad={:e} grad_limit={:e}",
                r.min_inf, r.max_sup, r.lower, r.upper, r.mp_tol, r.max_grad, r.grad_limit
            ),
        );
    }
    if c.time_derivative {
        let r = check_time_derivative(&traj.trace, g);
        push("time_derivative", r.pass, format!("initial_max_rhs={:e} bound={:e}", r.initial_max_rhs, r.hessian_bound));
    }
    if c.sphere.enabled {
        let s = sphere_deviation(traj, SPHERE_RADIUS)?;
        push(
            "sphere",
            s.max_deviation <= c.sphere.tol,
            format!("max_deviation={:e} tol={}", s.max_deviation, c.sphere.tol),
        );
    }
    let mut residuals = Vec::new();
    if c.bv.enabled {
        residuals = bv_residuals(cfg, traj, obs)?;
        for r in &residuals {
            let label = match (&r.field, r.gamma) {
                (Some(f), _) => format!("{}[{f}]", r.name),
                (None, Some(g)) => format!("{}[gamma={g}]", r.name),
                _ => r.name.clone(),
            };
            push(&label, r.pass, format!("value={:e} tol={} {}", r.value, r.tolerance, r.sided.name()));
        }
    }
    Ok((out, residuals))
}

/// Space-time test functions `(1 + t)(3/2 + sin(2 pi k x_0) cos(2 pi x_1))`.
pub fn zeta(k: usize) -> impl Fn(&[f64], f64) -> (f64, f64) + Sync {
    move |x: &[f64], t: f64| {
        let mut s = (2.0 * PI * k as f64 * x[0]).sin();
        if x.len() > 1 {
            s *= (2.0 * PI * x[1]).cos();
        }
        ((1.0 + t) * (1.5 + s), 1.5 + s)
    }
}

/// Distributional velocity for three test functions, per-level dissipation on
/// three levels, and the bulk motion law for the seeded test fields: two-sided
/// when no snapshot touches an obstacle, one-sided otherwise.
pub fn bv_residuals(cfg: &RunConfig, traj: &Run, obs: &Obstacles) -> CliResult<Vec<ResidualReport>> {
    let bv = &cfg.checks.bv;
    let ctx = BvContext::new(traj, obs, BvOptions { contact_tol: bv.contact_tol, ..Default::default() })?;
    let t0 = traj.initial().t;
    let t1 = traj.last().t;
    let window = Window::new(t0, t1);
    let mut out = Vec::new();
    for k in 1..=3 {
        out.push(distributional_velocity_residual(&ctx, zeta(k), window, bv.dist_tol)?);
    }
    for level in [-0.1, 0.0, 0.1] {
        out.push(per_level_dissipation_residual(&ctx, level * cfg.scale, t0, t1, bv.per_tol)?);
    }
    let free = (0..ctx.snapshot_count()).all(|k| ctx.contact(k).is_empty());
    let sided = if free { Sidedness::TwoSided } else { Sidedness::AtLeast };
    for j in 0..bv.fields as u64 {
        let mode = if j % 4 == 0 { FieldMode::ObstacleAligned } else { FieldMode::RandomMixed };
        let field = TestField::new(TestFieldSpec::new(mode, cfg.seed.wrapping_add(j)), obs);
        out.push(bulk_motion_law_residual(&ctx, FieldSource::Generated(&field), window, bv.motion_tol, sided)?);
    }
    Ok(out)
}

pub const STUDY_HEADER: &str =
    "n,eps,steps,t_end,energy_initial,energy_final,ledger_residual,l1_ratio,penalty_mass,penetration,perimeter,sphere_deviation";

/// Sweeps `study.n` x `solver.eps` and writes one summary row per run to `study.csv`.
pub fn run_study(cfg: &RunConfig) -> CliResult<String> {
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    write(&dir.join("effective.cfg"), &cfg.to_config_string())?;
    let mut csv = String::from(STUDY_HEADER);
    csv.push('\n');
    for &n in &cfg.study_n {
        let sub = RunConfig { n, ..cfg.clone() };
        let obs = setup(&sub)?;
        for &eps in &cfg.eps {
            let row = with_threads(cfg.threads, || study_row(&sub, &obs, eps))??;
            csv.push_str(&row);
            csv.push('\n');
        }
    }
    write(&dir.join("study.csv"), &csv)?;
    Ok(csv)
}

fn study_row(cfg: &RunConfig, obs: &Obstacles, eps: f64) -> CliResult<String> {
    let traj = solve(cfg, obs, eps, None)?;
    let rows = traj.trace.rows();
    let last = traj.last();
    let u = &last.u;
    let ledger = check_ledger(&traj.trace, cfg.checks.ledger.tol);
    let l1 = check_l1_monotone(&traj.trace, cfg.checks.l1.tol);
    let (uv, pv) = (u.values(), obs.phi().values());
    let penetration = deterministic_max(uv.len(), |i| (pv[i] - uv[i]).max(0.0));
    let per = if cfg.dim >= 2 {
        let probe = LevelSetProbe::new(0.0, default_band(u), default_grad_floor(u, eps))?;
        perimeter(u, &probe)?.value
    } else {
        f64::NAN
    };
    let sphere =
        if cfg.checks.sphere.enabled { sphere_deviation(&traj, SPHERE_RADIUS)?.max_deviation } else { f64::NAN };
    let e = |x: f64| format!("{x:.16e}");
    Ok([
        cfg.n.to_string(),
        e(eps),
        traj.steps.to_string(),
        e(last.t),
        e(rows[0].energy),
        e(rows[rows.len() - 1].energy),
        e(ledger.max_pair_residual),
        e(if l1.initial > 0.0 { l1.max_value / l1.initial } else { f64::NAN }),
        e(penalty_mass(u, obs, eps)?),
        e(penetration),
        e(per),
        e(sphere),
    ]
    .join(","))
}
