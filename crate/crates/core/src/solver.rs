//! Explicit time integration of the regularized obstacle flow.

use rayon::prelude::*;
use thiserror::Error;

use crate::diagnostics::{DiagnosticsTrace, TraceRow};
use crate::error::{param, Error, Result};
use crate::grid::{jet_at, regularized_norm, ScalarField, TorusGrid, VectorField, MAX_DIM};
use crate::model::{audit_well_prepared, force_at, stiffness_at, AuditReport, ObstaclePair};
use crate::scalar::{deterministic_max, Real};

/// Allowed per-step energy increase, relative to the initial energy.
pub const DEFAULT_ENERGY_INCREASE_TOL: f64 = 1e-8;

/// Quantities derived from `u` by one stencil pass.
#[derive(Clone, Debug)]
pub struct Derived<T> {
    pub grad: VectorField<T>,
    /// `|grad u|_eps`
    pub norm_eps: ScalarField<T>,
    /// `H_eps = -(a^eps : D^2 u) / |grad u|_eps`
    pub curvature: ScalarField<T>,
    /// `f_eps(u)`
    pub force: ScalarField<T>,
    /// `a^eps : D^2 u + |grad u|_eps f_eps`
    pub rhs: ScalarField<T>,
}

struct PointValues<T> {
    grad: [T; MAX_DIM],
    norm_eps: T,
    curvature: T,
    force: T,
    rhs: T,
}

/// `a^eps : D^2 u` with `a^eps = I - p (x) p / |p|_eps^2`, plus `|p|_eps`.
#[inline]
fn contraction<T: Real>(grid: &TorusGrid, u: &[T], idx: usize, eps: T) -> ([T; MAX_DIM], T, T) {
    let d = grid.dim();
    let jet = jet_at(grid, u, idx);
    let p = jet.grad;
    let norm_eps = regularized_norm(&p[..d], eps);
    let mut trace = T::zero();
    let mut quad = T::zero();
    for i in 0..d {
        trace = trace + jet.hess[i][i];
        for j in 0..d {
            quad = quad + p[i] * jet.hess[i][j] * p[j];
        }
    }
    (p, norm_eps, trace - quad / (norm_eps * norm_eps))
}

fn derive<T: Real>(u: &ScalarField<T>, obs: &ObstaclePair<T>, eps: T) -> Derived<T> {
    let grid = *u.grid();
    let (uv, phi, psi) = (u.values(), obs.phi().values(), obs.psi().values());
    let pts: Vec<PointValues<T>> = (0..grid.len())
        .into_par_iter()
        .with_min_len(512)
        .map(|i| {
            let (grad, norm_eps, a_d2u) = contraction(&grid, uv, i, eps);
            let force = force_at(uv[i], phi[i], psi[i], eps);
            PointValues { grad, norm_eps, curvature: -a_d2u / norm_eps, force, rhs: a_d2u + norm_eps * force }
        })
        .collect();
    let field = |f: fn(&PointValues<T>) -> T| ScalarField::from_vec_unchecked(grid, pts.iter().map(f).collect());
    let comps = (0..grid.dim())
        .map(|a| ScalarField::from_vec_unchecked(grid, pts.iter().map(|p| p.grad[a]).collect()))
        .collect();
    Derived {
        grad: VectorField::new(comps).expect("components share the grid"),
        norm_eps: field(|p| p.norm_eps),
        curvature: field(|p| p.curvature),
        force: field(|p| p.force),
        rhs: field(|p| p.rhs),
    }
}

/// Current solution `u(., t)` of the flow with regularization `eps`.
#[derive(Clone, Debug)]
pub struct FlowState<T> {
    u: ScalarField<T>,
    t: T,
    eps: T,
    cache: Option<Derived<T>>,
}

impl<T: Real> FlowState<T> {
    pub fn new(u: ScalarField<T>, t: T, eps: T) -> Result<Self> {
        if !(eps > T::zero() && eps.is_finite()) {
            return Err(param("eps", format!("must be positive, got {eps}")));
        }
        Ok(Self { u, t, eps, cache: None })
    }

    pub fn u(&self) -> &ScalarField<T> {
        &self.u
    }

    pub fn t(&self) -> T {
        self.t
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    pub fn grid(&self) -> &TorusGrid {
        self.u.grid()
    }

    /// Derived quantities for the current `u`, computed on first use.
    pub fn derived(&mut self, obs: &ObstaclePair<T>) -> &Derived<T> {
        if self.cache.is_none() {
            self.cache = Some(derive(&self.u, obs, self.eps));
        }
        self.cache.as_ref().expect("just filled")
    }

    pub fn cached(&self) -> Option<&Derived<T>> {
        self.cache.as_ref()
    }

    pub fn into_field(self) -> ScalarField<T> {
        self.u
    }
}

/// `H_eps` in the contraction form `-(a^eps : D^2 u) / |grad u|_eps`.
///
/// Sign convention: with `nu = -grad u / |grad u|_eps` pointing out of the
/// superlevel sets, a sphere around a maximum of `u` of radius `r` has
/// `H_eps ~ (d-1)/r`.
pub fn curvature<T: Real>(u: &ScalarField<T>, eps: T) -> Result<ScalarField<T>> {
    if !(eps > T::zero()) {
        return Err(param("eps", "must be positive"));
    }
    let grid = *u.grid();
    let uv = u.values();
    Ok(ScalarField::from_index_fn(grid, |i| {
        let (_, norm_eps, a_d2u) = contraction(&grid, uv, i, eps);
        -a_d2u / norm_eps
    }))
}

/// Right-hand side `a^eps : D^2 u + |grad u|_eps f_eps` of the flow.
pub fn rhs<T: Real>(state: &mut FlowState<T>, obs: &ObstaclePair<T>) -> Result<ScalarField<T>> {
    obs.grid().check_same(state.grid())?;
    Ok(state.derived(obs).rhs.clone())
}

/// Largest explicit step: `cfl * min(h^2 / 2d, 1 / max(|grad u|_eps V''(u)), dt_max)`.
pub fn stable_dt<T: Real>(state: &mut FlowState<T>, obs: &ObstaclePair<T>, cfl: T, dt_max: T) -> T {
    let grid = *state.grid();
    let h = grid.h::<T>();
    let diffusion = h * h / T::from_count(2 * grid.dim());
    let eps = state.eps;
    state.derived(obs);
    let (uv, phi, psi) = (state.u.values(), obs.phi().values(), obs.psi().values());
    let ne = state.cache.as_ref().expect("derived above").norm_eps.values();
    let stiff = deterministic_max(grid.len(), |i| ne[i] * stiffness_at(uv[i], phi[i], psi[i], eps));
    let penalty = if stiff > T::zero() { T::one() / stiff } else { T::infinity() };
    cfl * diffusion.min(penalty).min(dt_max)
}

/// One explicit Euler step `u <- u + dt * rhs`, `t <- t + dt`.
pub fn step<T: Real>(state: &mut FlowState<T>, obs: &ObstaclePair<T>, dt: T) -> Result<()> {
    obs.grid().check_same(state.grid())?;
    let limit = stable_dt(state, obs, T::one(), T::infinity());
    if !(dt > T::zero()) || dt > limit * (T::one() + T::lit(1e-12)) {
        return Err(Error::Unstable { dt: dt.to_f64_lossy(), limit: limit.to_f64_lossy() });
    }
    let rhs = state.derived(obs).rhs.values().to_vec();
    let u = state.u.values();
    let next: Vec<T> = (0..u.len()).into_par_iter().with_min_len(512).map(|i| u[i] + dt * rhs[i]).collect();
    state.u = ScalarField::new(*state.grid(), next)?;
    state.t = state.t + dt;
    state.cache = None;
    Ok(())
}

/// Parameters of a run.
#[derive(Clone, Debug)]
pub struct SolverConfig<T> {
    pub eps: T,
    pub t_end: T,
    pub cfl_safety: T,
    pub dt_max: T,
    /// Store a snapshot every this many steps (the final state is always stored).
    pub output_every: usize,
    /// Times at which a snapshot is stored exactly; steps are shortened to hit them.
    pub sample_times: Vec<T>,
    /// Allowed per-step energy increase relative to `E_eps(g)`.
    pub energy_increase_tol: T,
    /// Run even if the well-preparedness audit fails.
    pub skip_audit: bool,
    pub initial: ScalarField<T>,
}

impl<T: Real> SolverConfig<T> {
    pub fn new(initial: ScalarField<T>, eps: T, t_end: T) -> Self {
        Self {
            eps,
            t_end,
            cfl_safety: T::lit(0.9),
            dt_max: T::infinity(),
            output_every: 50,
            sample_times: Vec::new(),
            energy_increase_tol: T::lit(DEFAULT_ENERGY_INCREASE_TOL),
            skip_audit: false,
            initial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > T::zero() && self.eps.is_finite()) {
            return Err(param("eps", format!("must be positive, got {}", self.eps)));
        }
        if !(self.t_end > T::zero()) {
            return Err(param("t_end", format!("must be positive, got {}", self.t_end)));
        }
        if !(self.cfl_safety > T::zero() && self.cfl_safety <= T::one()) {
            return Err(param("cfl_safety", format!("must lie in (0, 1], got {}", self.cfl_safety)));
        }
        if !(self.dt_max > T::zero()) {
            return Err(param("dt_max", "must be positive"));
        }
        if self.output_every == 0 {
            return Err(param("output_every", "must be at least 1"));
        }
        if !(self.energy_increase_tol >= T::zero()) {
            return Err(param("energy_increase_tol", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Snapshot<T> {
    pub t: T,
    pub u: ScalarField<T>,
}

/// Stored states of a run and its per-step diagnostics.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub eps: T,
    pub snapshots: Vec<Snapshot<T>>,
    pub trace: DiagnosticsTrace<T>,
    pub steps: usize,
}

impl<T: Real> Trajectory<T> {
    pub fn grid(&self) -> &TorusGrid {
        self.snapshots[0].u.grid()
    }

    pub fn initial(&self) -> &Snapshot<T> {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &Snapshot<T> {
        self.snapshots.last().expect("trajectory has its initial snapshot")
    }

    /// Snapshot whose time is closest to `t`.
    pub fn nearest(&self, t: T) -> &Snapshot<T> {
        self.snapshots
            .iter()
            .min_by(|a, b| (a.t - t).abs().partial_cmp(&(b.t - t).abs()).expect("finite times"))
            .expect("non-empty")
    }
}

#[derive(Debug, Error)]
pub enum RunError<T: Real> {
    #[error(transparent)]
    Setup(#[from] Error),
    #[error("initial data not well prepared\n{0}")]
    NotWellPrepared(AuditReport),
    #[error("non-finite value after step {step}")]
    NonFinite { step: usize, partial: Box<Trajectory<T>> },
    #[error("energy increased by {increase:e} at step {step} (allowed {allowed:e})")]
    EnergyIncrease { step: usize, increase: f64, allowed: f64, partial: Box<Trajectory<T>> },
}

impl<T: Real> RunError<T> {
    /// Trajectory recorded up to the abort, if the run got started.
    pub fn partial(&self) -> Option<&Trajectory<T>> {
        match self {
            RunError::NonFinite { partial, .. } | RunError::EnergyIncrease { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

/// Single run advanced step by step; several can be advanced in lockstep.
pub struct Stepper<'a, T: Real> {
    config: SolverConfig<T>,
    obs: &'a ObstaclePair<T>,
    state: FlowState<T>,
    trace: DiagnosticsTrace<T>,
    snapshots: Vec<Snapshot<T>>,
    steps: usize,
    next_sample: usize,
}

impl<'a, T: Real> Stepper<'a, T> {
    pub fn new(config: SolverConfig<T>, obs: &'a ObstaclePair<T>) -> Result<Self, RunError<T>> {
        config.validate()?;
        obs.grid().check_same(config.initial.grid())?;
        if !config.skip_audit {
            let report = audit_well_prepared(obs, &config.initial)?;
            if !report.pass {
                return Err(RunError::NotWellPrepared(report));
            }
        }
        let mut state = FlowState::new(config.initial.clone(), T::zero(), config.eps)?;
        let trace = DiagnosticsTrace::start(&mut state, obs);
        let mut sample_times = config.sample_times.clone();
        sample_times.retain(|&s| s > T::zero() && s <= config.t_end);
        sample_times.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let snapshots = vec![Snapshot { t: T::zero(), u: config.initial.clone() }];
        Ok(Self {
            config: SolverConfig { sample_times, ..config },
            obs,
            state,
            trace,
            snapshots,
            steps: 0,
            next_sample: 0,
        })
    }

    pub fn state(&self) -> &FlowState<T> {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut FlowState<T> {
        &mut self.state
    }

    pub fn trace(&self) -> &DiagnosticsTrace<T> {
        &self.trace
    }

    pub fn obstacles(&self) -> &ObstaclePair<T> {
        self.obs
    }

    pub fn done(&self) -> bool {
        self.state.t >= self.config.t_end
    }

    /// Largest step allowed now: stability, the end time and the next sample time.
    pub fn proposed_dt(&mut self) -> T {
        let mut dt = stable_dt(&mut self.state, self.obs, self.config.cfl_safety, self.config.dt_max);
        let t = self.state.t;
        let mut target = self.config.t_end;
        if let Some(&s) = self.config.sample_times.get(self.next_sample) {
            target = target.min(s);
        }
        if target - t <= dt * T::lit(1.000_001) {
            dt = target - t;
        }
        dt
    }

    /// Advances by `dt` (at most [`Self::proposed_dt`] without the safety factor).
    pub fn advance(&mut self, dt: T) -> Result<(), RunError<T>> {
        let energy_before = self.trace.last().energy;
        let increment = crate::diagnostics::dissipation_rate(&mut self.state, self.obs) * dt;
        if let Err(e) = step(&mut self.state, self.obs, dt) {
            return Err(match e {
                Error::NonFinite { .. } => {
                    RunError::NonFinite { step: self.steps + 1, partial: Box::new(self.snapshot_trajectory()) }
                }
                other => RunError::Setup(other),
            });
        }
        self.steps += 1;
        // Land exactly on the scheduled times.
        let mut sampled = false;
        if let Some(&s) = self.config.sample_times.get(self.next_sample) {
            if (self.state.t - s).abs() <= T::epsilon() * T::lit(16.0) * (T::one() + s.abs()) {
                self.state.t = s;
                self.next_sample += 1;
                sampled = true;
            }
        }
        if (self.state.t - self.config.t_end).abs() <= T::epsilon() * T::lit(16.0) * (T::one() + self.config.t_end) {
            self.state.t = self.config.t_end;
        }
        self.trace.dissipation_ledger_update(increment, dt, &mut self.state, self.obs);
        let row = *self.trace.last();
        let allowed = self.config.energy_increase_tol * self.trace.initial_energy();
        if row.energy - energy_before > allowed {
            return Err(RunError::EnergyIncrease {
                step: self.steps,
                increase: (row.energy - energy_before).to_f64_lossy(),
                allowed: allowed.to_f64_lossy(),
                partial: Box::new(self.snapshot_trajectory()),
            });
        }
        if sampled || self.steps.is_multiple_of(self.config.output_every) || self.done() {
            self.snapshots.push(Snapshot { t: self.state.t, u: self.state.u.clone() });
        }
        Ok(())
    }

    fn snapshot_trajectory(&self) -> Trajectory<T> {
        Trajectory {
            eps: self.config.eps,
            snapshots: self.snapshots.clone(),
            trace: self.trace.clone(),
            steps: self.steps,
        }
    }

    pub fn finish(mut self) -> Trajectory<T> {
        if self.snapshots.last().map(|s| s.t) != Some(self.state.t) {
            self.snapshots.push(Snapshot { t: self.state.t, u: self.state.u.clone() });
        }
        Trajectory { eps: self.config.eps, snapshots: self.snapshots, trace: self.trace, steps: self.steps }
    }
}

/// Integrates `config.initial` to `config.t_end`.
pub fn run<T: Real>(config: SolverConfig<T>, obs: &ObstaclePair<T>) -> Result<Trajectory<T>, RunError<T>> {
    run_observed(config, obs, |_| {})
}

/// Like [`run`], calling `observer` with every diagnostics row as it is recorded.
pub fn run_observed<T, F>(
    config: SolverConfig<T>,
    obs: &ObstaclePair<T>,
    mut observer: F,
) -> Result<Trajectory<T>, RunError<T>>
where
    T: Real,
    F: FnMut(&TraceRow<T>),
{
    let mut stepper = Stepper::new(config, obs)?;
    observer(stepper.trace().last());
    while !stepper.done() {
        let dt = stepper.proposed_dt();
        stepper.advance(dt)?;
        observer(stepper.trace().last());
    }
    Ok(stepper.finish())
}

/// Advances several runs with a common step `min_k proposed_dt_k`, so all
/// of them visit the same time levels. All members must share `t_end`.
pub fn run_lockstep<T: Real>(
    members: Vec<(SolverConfig<T>, &ObstaclePair<T>)>,
) -> Result<Vec<Trajectory<T>>, RunError<T>> {
    let t_end = members.first().map(|m| m.0.t_end).ok_or_else(|| Error::Precondition("no runs".into()))?;
    if members.iter().any(|m| m.0.t_end != t_end) {
        return Err(Error::Precondition("lockstep runs need a common end time".into()).into());
    }
    let mut steppers = members.into_iter().map(|(c, o)| Stepper::new(c, o)).collect::<Result<Vec<_>, _>>()?;
    while !steppers[0].done() {
        let dt = steppers.iter_mut().map(|s| s.proposed_dt()).fold(T::infinity(), |a, b| a.min(b));
        for s in steppers.iter_mut() {
            s.advance(dt)?;
        }
    }
    Ok(steppers.into_iter().map(Stepper::finish).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::{initial_disk, Profile};
    use std::f64::consts::PI;

    fn consts(grid: TorusGrid, lo: f64, hi: f64) -> ObstaclePair<f64> {
        ObstaclePair::from_fields(ScalarField::constant(grid, lo), ScalarField::constant(grid, hi)).unwrap()
    }

    #[test]
    fn curvature_of_constant_and_inflection() {
        let g = TorusGrid::new(1, 64).unwrap();
        assert_eq!(curvature(&ScalarField::constant(g, 2.0), 0.1).unwrap().max_abs(), 0.0);
        let s = ScalarField::from_fn(g, |x: &[f64]| (2.0 * PI * x[0]).sin()).unwrap();
        let h = curvature(&s, 0.1).unwrap();
        // The Hessian of sin vanishes at x = 0 and x = 1/2.
        assert!(h.get(0).abs() < 1e-10 && h.get(32).abs() < 1e-10);
    }

    #[test]
    fn curvature_of_paraboloid_level_circle() {
        // u = -|x - c|^2: circle levels of radius r have H = 1/r in 2-d.
        let n = 256;
        let g = TorusGrid::new(2, n).unwrap();
        let u = ScalarField::from_fn(g, |x: &[f64]| -((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2))).unwrap();
        let h = curvature(&u, 1e-4).unwrap();
        let idx = g.index_of(&[n / 2 + (0.2 * n as f64) as usize, n / 2]);
        let r = 0.2_f64.floor_with(n);
        assert!((h.get(idx) - 1.0 / r).abs() < 0.02 / r, "H = {} vs {}", h.get(idx), 1.0 / r);
    }

    trait FloorWith {
        fn floor_with(self, n: usize) -> f64;
    }
    impl FloorWith for f64 {
        fn floor_with(self, n: usize) -> f64 {
            (self * n as f64).floor() / n as f64
        }
    }

    #[test]
    fn rhs_examples() {
        let g = TorusGrid::new(2, 16).unwrap();
        let obs = consts(g, 0.0, 1.0);
        let mut s = FlowState::new(ScalarField::constant(g, 0.5), 0.0, 0.1).unwrap();
        assert_eq!(rhs(&mut s, &obs).unwrap().max_abs(), 0.0);
        // Above psi: pure relaxation eps * f_eps.
        let mut s = FlowState::new(ScalarField::constant(g, 1.2), 0.0, 0.1).unwrap();
        let r = rhs(&mut s, &obs).unwrap();
        assert!((r.get(7) - 0.1 * -0.32).abs() < 1e-14);
        assert!(r.max() < 0.0);
    }

    #[test]
    fn rhs_identity_with_curvature_and_force() {
        let g = TorusGrid::new(2, 32).unwrap();
        let obs = consts(g, -0.3, 0.3);
        let u = ScalarField::from_fn(g, |x: &[f64]| 0.5 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos()).unwrap();
        let mut s = FlowState::new(u, 0.0, 0.05).unwrap();
        let d = s.derived(&obs).clone();
        let scale = d.rhs.max_abs();
        for i in 0..g.len() {
            let alt = d.norm_eps.get(i) * (-d.curvature.get(i) + d.force.get(i));
            assert!((d.rhs.get(i) - alt).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn stable_dt_examples() {
        let g = TorusGrid::new(2, 64).unwrap();
        let obs = consts(g, -1.0, 1.0);
        let mut s = FlowState::new(ScalarField::constant(g, 0.0), 0.0, 0.05).unwrap();
        let dt = stable_dt(&mut s, &obs, 0.9, f64::INFINITY);
        assert!((dt - 0.9 * (1.0 / 64.0f64).powi(2) / 4.0).abs() < 1e-18);
        assert!((dt - 5.49e-5).abs() < 1e-7);
        assert_eq!(stable_dt(&mut s, &obs, 0.5, 1e-6), 0.5e-6);

        // Violation 0.1 with eps = 0.01 and |grad u|_eps = eps: V'' = 12.
        let obs = consts(g, 0.0, 1.0);
        let mut s = FlowState::new(ScalarField::constant(g, 1.1), 0.0, 0.01).unwrap();
        let dt = stable_dt(&mut s, &obs, 1.0, f64::INFINITY);
        assert!((dt - (1.0 / 64.0f64).powi(2) / 4.0).abs() < 1e-18, "diffusion limit dominates");
        let g8 = TorusGrid::new(1, 8).unwrap();
        let obs8 = consts(g8, 0.0, 1.0);
        let mut s8 = FlowState::new(ScalarField::constant(g8, 1.1), 0.0, 0.01).unwrap();
        let dt8 = stable_dt(&mut s8, &obs8, 1.0, f64::INFINITY);
        // Penalty limit 1 / (0.01 * 12) is far above h^2/2 = 1/128 here too.
        assert!((dt8 - 1.0 / 128.0).abs() < 1e-15);
        let stiffness = 0.01 * stiffness_at(1.1_f64, 0.0, 1.0, 0.01);
        assert!((stiffness - 0.12).abs() < 1e-12);
    }

    #[test]
    fn step_rejects_unstable_dt_and_keeps_constants() {
        let g = TorusGrid::new(2, 16).unwrap();
        let obs = consts(g, -1.0, 1.0);
        let mut s = FlowState::new(ScalarField::constant(g, 0.25), 0.0, 0.1).unwrap();
        let limit = stable_dt(&mut s, &obs, 1.0, f64::INFINITY);
        assert!(matches!(step(&mut s, &obs, 2.0 * limit), Err(Error::Unstable { .. })));
        step(&mut s, &obs, limit).unwrap();
        assert_eq!(s.u().max_abs_diff(&ScalarField::constant(g, 0.25)).unwrap(), 0.0);
        assert_eq!(s.t(), limit);
    }

    #[test]
    fn step_is_first_order_consistent() {
        let g = TorusGrid::new(1, 32).unwrap();
        let obs = consts(g, -2.0, 2.0);
        let u0 = ScalarField::from_fn(g, |x: &[f64]| (2.0 * PI * x[0]).sin()).unwrap();
        let mut base = FlowState::new(u0.clone(), 0.0, 0.1).unwrap();
        let r0 = rhs(&mut base, &obs).unwrap();
        let dt = 0.25 * stable_dt(&mut base, &obs, 1.0, f64::INFINITY);
        let mut one = base.clone();
        step(&mut one, &obs, dt).unwrap();
        // Euler: u1 - u0 = dt * rhs(u0) to rounding.
        let diff = one.u().zip_map(&u0, |a, b| a - b).unwrap();
        let pred = r0.map(|r| dt * r).unwrap();
        assert!(diff.max_abs_diff(&pred).unwrap() < 1e-14);

        // Two half steps against one full step: the gap is O(dt^2).
        let gap = |dt: f64| {
            let mut full = base.clone();
            step(&mut full, &obs, dt).unwrap();
            let mut half = base.clone();
            step(&mut half, &obs, dt / 2.0).unwrap();
            step(&mut half, &obs, dt / 2.0).unwrap();
            full.u().max_abs_diff(half.u()).unwrap()
        };
        let (g1, g2) = (gap(dt), gap(dt / 2.0));
        let order = (g1 / g2).log2();
        assert!((1.8..2.2).contains(&order), "order {order}");
    }

    #[test]
    fn run_keeps_stationary_state() {
        let g = TorusGrid::new(2, 16).unwrap();
        let obs = consts(g, -1.0, 1.0);
        let mut cfg = SolverConfig::new(ScalarField::constant(g, 0.0), 0.05, 0.01);
        cfg.output_every = 10;
        let traj = run(cfg, &obs).unwrap();
        assert_eq!(traj.initial().t, 0.0);
        assert_eq!(traj.last().t, 0.01);
        assert!(traj.snapshots.windows(2).all(|w| w[0].t < w[1].t));
        for s in &traj.snapshots {
            assert_eq!(s.u.max_abs(), 0.0);
        }
    }

    #[test]
    fn run_hits_sample_times_exactly() {
        let g = TorusGrid::new(2, 32).unwrap();
        let obs = consts(g, -10.0, 10.0);
        let init: ScalarField<f64> = Profile::Disk(initial_disk([0.5, 0.5, 0.0], 0.3, 1.0)).sample(g).unwrap();
        let mut cfg = SolverConfig::new(init, 0.05, 0.004);
        cfg.output_every = 1000;
        cfg.sample_times = vec![0.001, 0.0025];
        let traj = run(cfg, &obs).unwrap();
        let times: Vec<f64> = traj.snapshots.iter().map(|s| s.t).collect();
        assert_eq!(times, vec![0.0, 0.001, 0.0025, 0.004]);
    }

    #[test]
    fn run_rejects_bad_config_and_unprepared_data() {
        let g = TorusGrid::new(1, 16).unwrap();
        let obs = consts(g, -1.0, 1.0);
        let cfg = SolverConfig::new(ScalarField::constant(g, 0.0), -0.1, 1.0);
        assert!(matches!(run(cfg, &obs), Err(RunError::Setup(Error::Parameter { name: "eps", .. }))));
        let cfg = SolverConfig::new(ScalarField::constant(g, 2.0), 0.1, 1.0);
        assert!(matches!(run(cfg, &obs), Err(RunError::Setup(Error::WellPrepared(_)))));
        let mut cfg = SolverConfig::new(ScalarField::constant(g, 0.0), 0.1, 1.0);
        cfg.cfl_safety = 1.5;
        assert!(run(cfg, &obs).is_err());
    }

    #[test]
    fn relaxation_passes_zero_energy_allowance() {
        let g = TorusGrid::new(1, 16).unwrap();
        let obs = consts(g, -1.0, 1.0);
        let mut cfg = SolverConfig::new(ScalarField::constant(g, 1.05), 0.1, 0.01);
        cfg.skip_audit = true;
        cfg.energy_increase_tol = 0.0;
        let traj = run(cfg, &obs).unwrap();
        assert!(traj.trace.rows().windows(2).all(|w| w[1].energy <= w[0].energy));
    }

    #[test]
    fn lockstep_runs_share_time_levels() {
        let g = TorusGrid::new(2, 32).unwrap();
        let obs = consts(g, -10.0, 10.0);
        let a: ScalarField<f64> = Profile::Disk(initial_disk([0.5, 0.5, 0.0], 0.3, 1.0)).sample(g).unwrap();
        let b = a.map(|v| v + 0.1).unwrap();
        let mut ca = SolverConfig::new(a, 0.05, 0.003);
        ca.output_every = 7;
        let mut cb = SolverConfig::new(b, 0.05, 0.003);
        cb.output_every = 7;
        let out = run_lockstep(vec![(ca, &obs), (cb, &obs)]).unwrap();
        let ta: Vec<f64> = out[0].snapshots.iter().map(|s| s.t).collect();
        let tb: Vec<f64> = out[1].snapshots.iter().map(|s| s.t).collect();
        assert_eq!(ta, tb);
        // Translation commutes with the obstacle-free flow.
        let shifted = out[0].last().u.map(|v| v + 0.1).unwrap();
        assert!(shifted.max_abs_diff(&out[1].last().u).unwrap() < 1e-12);
    }
}
