//! Behavioral properties of the flow turned into runnable checks: the
//! shrinking-sphere solution, the comparison principle, relabeling
//! invariance and the `eps`-gap of the energies.

use crate::bvcheck::LevelSetProbe;
use crate::bvcheck::{default_band, default_grad_floor, perimeter};
use crate::error::{param, Error, Result};
use crate::grid::ScalarField;
use crate::model::{energy, limit_energy, ObstaclePair};
use crate::scalar::{deterministic_max, Real};
use crate::scenario::{ScenarioKind, ScenarioSpec, SPHERE_RADIUS};
use crate::solver::{run_lockstep, RunError, SolverConfig, Trajectory};

/// Radius of the classical shrinking sphere, or extinction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SphereRadius {
    Radius(f64),
    Extinct,
}

impl SphereRadius {
    pub fn radius(self) -> Option<f64> {
        match self {
            SphereRadius::Radius(r) => Some(r),
            SphereRadius::Extinct => None,
        }
    }
}

/// `R(t) = sqrt(R0^2 - 2 (d - 1) t)`, extinct after `R0^2 / (2 (d - 1))`.
pub fn sphere_oracle(r0: f64, dim: usize, t: f64) -> Result<SphereRadius> {
    if !(r0 > 0.0 && r0.is_finite()) {
        return Err(param("r0", format!("must be positive, got {r0}")));
    }
    if dim < 2 {
        return Err(param("dim", "a sphere needs dimension >= 2"));
    }
    if !(t >= 0.0) {
        return Err(param("t", format!("must be nonnegative, got {t}")));
    }
    let k = 2.0 * (dim - 1) as f64;
    let extinction = r0 * r0 / k;
    if t > extinction {
        return Ok(SphereRadius::Extinct);
    }
    Ok(SphereRadius::Radius((r0 * r0 - k * t).max(0.0).sqrt()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    /// `max_k sup (u1 - u2)_+` over stored snapshots.
    pub max_violation: f64,
    /// `1e-6 + 10 * max_step dt * max|u_t|`.
    pub tolerance: f64,
    /// Largest one-step change `dt * max|u_t|` of either run.
    pub step_change: f64,
    pub pass: bool,
}

/// Runs `lower` and `upper` in lockstep under `base` and compares them.
pub fn comparison_test<T: Real>(
    lower: &ScalarField<T>,
    upper: &ScalarField<T>,
    obs: &ObstaclePair<T>,
    base: &SolverConfig<T>,
) -> Result<ComparisonReport, RunError<T>> {
    lower.grid().check_same(upper.grid())?;
    let (a, b) = (lower.values(), upper.values());
    if let Some(i) = (0..a.len()).find(|&i| a[i] > b[i]) {
        return Err(Error::Precondition(format!("initial data not ordered at index {i}")).into());
    }
    let mk = |g: &ScalarField<T>| SolverConfig { initial: g.clone(), ..base.clone() };
    let runs = run_lockstep(vec![(mk(lower), obs), (mk(upper), obs)])?;
    let max_violation = runs[0]
        .snapshots
        .iter()
        .zip(&runs[1].snapshots)
        .map(|(s1, s2)| {
            let (u1, u2) = (s1.u.values(), s2.u.values());
            deterministic_max(u1.len(), |i| (u1[i] - u2[i]).pos()).to_f64_lossy()
        })
        .fold(0.0, f64::max);
    let step_change = runs
        .iter()
        .flat_map(|r| r.trace.rows().iter())
        .map(|row| (row.dt * row.max_rhs).to_f64_lossy())
        .fold(0.0, f64::max);
    let tolerance = 1e-6 + 10.0 * step_change;
    Ok(ComparisonReport { max_violation, tolerance, step_change, pass: max_violation <= tolerance })
}

/// Ordered pair `(g, clip(g + bump, phi, psi))` for index `k` of a fixed
/// family of nonnegative smooth bumps scaled by `amplitude`.
pub fn ordered_pair<T: Real>(
    g: &ScalarField<T>,
    obs: &ObstaclePair<T>,
    k: usize,
    amplitude: f64,
) -> Result<ScalarField<T>> {
    let grid = *g.grid();
    obs.grid().check_same(&grid)?;
    let d = grid.dim();
    let level = 0.2 + 0.8 * (k % 10) as f64 / 9.0;
    let freq = (k % 3 + 1) as f64;
    let phase = 0.37 * k as f64;
    let bump = ScalarField::<T>::from_fn(grid, |x: &[T]| {
        let s: f64 = (0..d)
            .map(|a| (2.0 * std::f64::consts::PI * freq * x[a].to_f64_lossy() + phase * (a + 1) as f64).sin())
            .sum();
        T::lit(amplitude * level * (1.0 + s / d as f64) * 0.5)
    })?;
    let (gv, bv, lo, hi) = (g.values(), bump.values(), obs.phi().values(), obs.psi().values());
    ScalarField::new(grid, (0..grid.len()).map(|i| (gv[i] + bv[i]).max(lo[i]).min(hi[i])).collect())
}

/// Outcome of comparing `F(u_eps)` with the run started from relabeled data.
#[derive(Clone, Debug, PartialEq)]
pub struct RelabelingReport {
    pub eps: Vec<f64>,
    /// `max_k sup |F(u_eps) - v_eps|` over common snapshots.
    pub deltas: Vec<f64>,
    pub slack: f64,
    /// `deltas[j + 1] <= (1 + slack) deltas[j]`.
    pub pass: bool,
}

/// A monotone relabeling `F` with its derivative. `eps_factor` multiplies
/// `eps` in the relabeled run (`a` for the affine map `a s + b`, which makes
/// the regularized curvature term exactly invariant).
pub struct Relabeling<F, G> {
    pub map: F,
    pub derivative: G,
    pub eps_factor: f64,
}

/// Runs `scenario` and its relabeled counterpart for every `eps` in the list.
pub fn relabeling_test<T, F, G>(
    scenario: &ScenarioSpec,
    relabel: &Relabeling<F, G>,
) -> Result<RelabelingReport, RunError<T>>
where
    T: Real,
    F: Fn(T) -> T + Sync,
    G: Fn(T) -> T + Sync,
{
    scenario.validate()?;
    if !(relabel.eps_factor > 0.0) {
        return Err(param("eps_factor", "must be positive").into());
    }
    let obs = scenario.obstacles::<T>()?;
    let g = scenario.initial::<T>()?;
    let lo = obs.phi().min().min(g.min());
    let hi = obs.psi().max().max(g.max());
    let samples = 1024;
    for j in 0..=samples {
        let s = lo + (hi - lo) * T::from_count(j) / T::from_count(samples);
        let dv = (relabel.derivative)(s);
        if !(dv > T::zero()) {
            return Err(Error::Precondition(format!("relabeling is not increasing at {s} (F' = {dv})")).into());
        }
    }
    let fobs = obs.relabel(&relabel.map, &relabel.derivative)?;
    let fg = g.map(&relabel.map)?;
    let mut deltas = Vec::new();
    for &eps in &scenario.eps_list {
        let base = scenario.config::<T>(eps)?;
        let mut other = scenario.config::<T>(eps * relabel.eps_factor)?;
        other.initial = fg.clone();
        let runs = run_lockstep(vec![(base, &obs), (other, &fobs)])?;
        let delta = runs[0]
            .snapshots
            .iter()
            .zip(&runs[1].snapshots)
            .map(|(a, b)| {
                let (u, v) = (a.u.values(), b.u.values());
                deterministic_max(u.len(), |i| ((relabel.map)(u[i]) - v[i]).abs()).to_f64_lossy()
            })
            .fold(0.0, f64::max);
        deltas.push(delta);
    }
    let slack = 0.1;
    let pass = deltas.windows(2).all(|w| w[1] <= (1.0 + slack) * w[0]);
    Ok(RelabelingReport { eps: scenario.eps_list.clone(), deltas, slack, pass })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GammaLimsupReport {
    pub limit_energy: f64,
    pub eps: Vec<f64>,
    /// `E_eps(u) - E(u)`.
    pub gaps: Vec<f64>,
    pub tolerance: f64,
    /// `0 <= gap <= eps + tolerance` for every entry.
    pub pass: bool,
}

/// Compares the regularized energies of a fixed admissible `u` with its limit energy.
pub fn gamma_limsup_check<T: Real>(
    u: &ScalarField<T>,
    obs: &ObstaclePair<T>,
    eps_list: &[f64],
    tolerance: f64,
) -> Result<GammaLimsupReport> {
    let limit = limit_energy(u, obs)?
        .finite()
        .ok_or_else(|| Error::Inadmissible("u violates the obstacle constraint (infinite limit energy)".into()))?
        .to_f64_lossy();
    let mut gaps = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        gaps.push(energy(u, obs, T::lit(eps))?.to_f64_lossy() - limit);
    }
    let pass = gaps.iter().zip(eps_list).all(|(&g, &e)| g >= 0.0 && g <= e + tolerance);
    Ok(GammaLimsupReport { limit_energy: limit, eps: eps_list.to_vec(), gaps, tolerance, pass })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusSample {
    pub t: f64,
    pub radius: f64,
    pub oracle: f64,
    pub relative_deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SphereStudy {
    pub dim: usize,
    pub n: usize,
    pub eps: f64,
    pub samples: Vec<RadiusSample>,
    pub max_deviation: f64,
    /// First snapshot time skipped because the oracle radius fell below `4h`.
    pub stopped_at: Option<f64>,
}

/// Radius of the zero level set from its perimeter.
pub fn radius_from_perimeter(perimeter: f64, dim: usize) -> f64 {
    match dim {
        2 => perimeter / (2.0 * std::f64::consts::PI),
        3 => (perimeter / (4.0 * std::f64::consts::PI)).sqrt(),
        _ => f64::NAN,
    }
}

/// Compares the zero level set of every stored snapshot with the sphere of
/// initial radius `r0`.
pub fn sphere_deviation<T: Real>(traj: &Trajectory<T>, r0: f64) -> Result<SphereStudy> {
    let grid = *traj.grid();
    let dim = grid.dim();
    if !(2..=3).contains(&dim) {
        return Err(param("dim", "the sphere study needs dimension 2 or 3"));
    }
    let h = grid.h::<f64>();
    let mut samples = Vec::new();
    let mut stopped_at = None;
    for s in &traj.snapshots {
        let t = s.t.to_f64_lossy();
        let oracle = match sphere_oracle(r0, dim, t)?.radius() {
            Some(r) if r >= 4.0 * h => r,
            _ => {
                stopped_at = Some(t);
                break;
            }
        };
        let probe = LevelSetProbe::new(T::zero(), default_band(&s.u), default_grad_floor(&s.u, traj.eps))?;
        let p = perimeter(&s.u, &probe)?.value.to_f64_lossy();
        let radius = radius_from_perimeter(p, dim);
        samples.push(RadiusSample { t, radius, oracle, relative_deviation: (radius - oracle).abs() / oracle });
    }
    let max_deviation = samples.iter().map(|s| s.relative_deviation).fold(0.0, f64::max);
    Ok(SphereStudy { dim, n: grid.n(), eps: traj.eps.to_f64_lossy(), samples, max_deviation, stopped_at })
}

/// Runs the obstacle-free sphere scenario at `eps` with `samples` equally
/// spaced snapshot times and compares the radius with the oracle.
pub fn sphere_convergence_study<T: Real>(
    scenario: &ScenarioSpec,
    eps: f64,
    samples: usize,
) -> Result<SphereStudy, RunError<T>> {
    if scenario.kind != ScenarioKind::Sphere {
        return Err(
            Error::Precondition(format!("sphere study needs the sphere scenario, got {}", scenario.kind)).into()
        );
    }
    let obs = scenario.obstacles::<T>()?;
    let mut cfg = scenario.config::<T>(eps)?;
    cfg.output_every = usize::MAX;
    cfg.sample_times =
        (1..=samples.max(1)).map(|k| T::lit(scenario.t_end * k as f64 / samples.max(1) as f64)).collect();
    let traj = crate::solver::run(cfg, &obs)?;
    Ok(sphere_deviation(&traj, SPHERE_RADIUS)?)
}
