use crate::error::{Error, Result};
use crate::grid::{integrate_with, ScalarField, TorusGrid, VectorField, MAX_DIM};
use crate::model::ObstaclePair;
use crate::scalar::{deterministic_max, Real};
use crate::solver::{FlowState, Trajectory};

use super::fields::{audit_field, contact_sets, default_contact_tol, ContactSets, TestField};
use super::levelset::{default_band, default_grad_floor, delta, LevelSetProbe};
use super::{ResidualReport, Sidedness, Window};

/// Overrides of the defaults used by [`BvContext`].
#[derive(Clone, Copy, Debug, Default)]
pub struct BvOptions<T> {
    pub grad_floor: Option<T>,
    pub band: Option<T>,
    pub contact_tol: Option<T>,
}

struct Frame<T> {
    t: T,
    grad: Vec<[T; MAX_DIM]>,
    gnorm: Vec<T>,
    rhs: Vec<T>,
    masks: ContactSets,
}

/// Per-snapshot geometry of a trajectory (gradient, `u_t`, contact sets)
/// shared by all residual evaluations.
pub struct BvContext<'a, T: Real> {
    traj: &'a Trajectory<T>,
    obs: &'a ObstaclePair<T>,
    grad_floor: T,
    band: T,
    contact_tol: T,
    frames: Vec<Frame<T>>,
}

/// Test field of a residual: generated per snapshot from the contact sets,
/// or a fixed field audited against every snapshot.
#[derive(Clone, Copy)]
pub enum FieldSource<'f, T> {
    Generated(&'f TestField<T>),
    Fixed(&'f VectorField<T>, &'f str),
}

impl<T: Real> FieldSource<'_, T> {
    fn id(&self) -> String {
        match self {
            FieldSource::Generated(f) => f.spec().id(),
            FieldSource::Fixed(_, name) => (*name).to_string(),
        }
    }
}

impl<'a, T: Real> BvContext<'a, T> {
    pub fn new(traj: &'a Trajectory<T>, obs: &'a ObstaclePair<T>, opts: BvOptions<T>) -> Result<Self> {
        obs.grid().check_same(traj.grid())?;
        let g = &traj.initial().u;
        let grad_floor = opts.grad_floor.unwrap_or_else(|| default_grad_floor(g, traj.eps));
        let band = opts.band.unwrap_or_else(|| default_band(g));
        let contact_tol = opts.contact_tol.unwrap_or_else(|| default_contact_tol(obs));
        LevelSetProbe::new(T::zero(), band, grad_floor)?;
        let d = obs.grid().dim();
        let frames = traj
            .snapshots
            .iter()
            .map(|s| {
                let mut state = FlowState::new(s.u.clone(), s.t, traj.eps)?;
                let der = state.derived(obs);
                let grad: Vec<[T; MAX_DIM]> = (0..s.u.grid().len()).map(|i| der.grad.at(i)).collect();
                let gnorm = grad.iter().map(|p| p[..d].iter().fold(T::zero(), |a, &c| a + c * c).sqrt()).collect();
                let rhs = der.rhs.values().to_vec();
                let masks = contact_sets(&s.u, obs, contact_tol)?;
                Ok(Frame { t: s.t, grad, gnorm, rhs, masks })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { traj, obs, grad_floor, band, contact_tol, frames })
    }

    pub fn grad_floor(&self) -> T {
        self.grad_floor
    }

    pub fn band(&self) -> T {
        self.band
    }

    pub fn contact_tol(&self) -> T {
        self.contact_tol
    }

    pub fn probe(&self, gamma: T) -> Result<LevelSetProbe<T>> {
        LevelSetProbe::new(gamma, self.band, self.grad_floor)
    }

    pub fn snapshot_count(&self) -> usize {
        self.frames.len()
    }

    pub fn contact(&self, k: usize) -> &ContactSets {
        &self.frames[k].masks
    }

    fn grid(&self) -> TorusGrid {
        *self.obs.grid()
    }

    fn window_indices(&self, window: Window) -> Result<Vec<usize>> {
        let slack = |t: f64| 1e-12 * t.abs().max(1.0);
        let idx: Vec<usize> = (0..self.frames.len())
            .filter(|&k| {
                let t = self.frames[k].t.to_f64_lossy();
                t >= window.t0 - slack(window.t0) && t <= window.t1 + slack(window.t1)
            })
            .collect();
        if idx.len() < 2 {
            return Err(Error::Precondition(format!(
                "window [{}, {}] holds {} snapshots; need at least two",
                window.t0,
                window.t1,
                idx.len()
            )));
        }
        Ok(idx)
    }

    /// Trapezoid weights over the snapshot times of `idx`.
    fn weights(&self, idx: &[usize]) -> Vec<T> {
        let t: Vec<T> = idx.iter().map(|&k| self.frames[k].t).collect();
        let half = T::lit(0.5);
        (0..t.len())
            .map(|j| {
                let left = if j > 0 { t[j] - t[j - 1] } else { T::zero() };
                let right = if j + 1 < t.len() { t[j + 1] - t[j] } else { T::zero() };
                (left + right) * half
            })
            .collect()
    }

    fn field_at(&self, source: FieldSource<'_, T>, k: usize) -> Result<VectorField<T>> {
        let masks = &self.frames[k].masks;
        let (x, audit) = match source {
            FieldSource::Generated(f) => {
                let a = f.assemble(self.obs, masks)?;
                (a.x, a.audit)
            }
            FieldSource::Fixed(x, _) => {
                self.grid().check_same(x.grid())?;
                (x.clone(), audit_field(x, self.obs, masks))
            }
        };
        if !audit.pass {
            return Err(Error::Inadmissible(format!(
                "{} at t = {}: min X.grad psi on A+ = {:e}, max X.grad phi on A- = {:e}",
                source.id(),
                self.frames[k].t,
                audit.min_plus,
                audit.max_minus
            )));
        }
        Ok(x)
    }

    /// `int w(u - gamma) [(I - nu (x) nu) : grad X + V nu . X] |grad u|` over
    /// `{|grad u| > floor}`, with `w = 1` or the mollified delta.
    fn motion_integrand(&self, k: usize, x: &VectorField<T>, level: Option<(T, T)>) -> (T, T) {
        let grid = self.grid();
        let d = grid.dim();
        let f = &self.frames[k];
        let u = self.traj.snapshots[k].u.values();
        let comps = x.components();
        let inv_2h = T::from_count(grid.n()) * T::lit(0.5);
        let floor = self.grad_floor;
        let weight = |i: usize| match level {
            None => T::one(),
            Some((gamma, a)) => delta(u[i] - gamma, a),
        };
        let value = integrate_with(&grid, |i| {
            let w = weight(i);
            if f.gnorm[i] <= floor || w == T::zero() {
                return T::zero();
            }
            let gn = f.gnorm[i];
            let mut nu = [T::zero(); MAX_DIM];
            for a in 0..d {
                nu[a] = -f.grad[i][a] / gn;
            }
            let mut div = T::zero();
            let mut njn = T::zero();
            let mut nx = T::zero();
            for a in 0..d {
                let xa = comps[a].values();
                nx = nx + nu[a] * xa[i];
                for b in 0..d {
                    let dab = (xa[grid.neighbor(i, b, true)] - xa[grid.neighbor(i, b, false)]) * inv_2h;
                    if a == b {
                        div = div + dab;
                    }
                    njn = njn + nu[a] * dab * nu[b];
                }
            }
            w * ((div - njn) * gn + f.rhs[i] * nx)
        });
        let c1 = x.max_norm() + jacobian_norm(x);
        (value, c1)
    }

    fn perimeter_at(&self, k: usize, gamma: T) -> (T, bool) {
        let grid = self.grid();
        let f = &self.frames[k];
        let u = self.traj.snapshots[k].u.values();
        let a = self.band;
        let p = integrate_with(&grid, |i| delta(u[i] - gamma, a) * f.gnorm[i]);
        let flat = deterministic_max(grid.len(), |i| {
            if (u[i] - gamma).abs() < a && f.gnorm[i] < self.grad_floor {
                T::one()
            } else {
                T::zero()
            }
        });
        (p, flat > T::zero())
    }
}

fn jacobian_norm<T: Real>(x: &VectorField<T>) -> T {
    let grid = *x.grid();
    let d = grid.dim();
    let inv_2h = T::from_count(grid.n()) * T::lit(0.5);
    let comps = x.components();
    deterministic_max(grid.len(), |i| {
        let mut s = T::zero();
        for c in comps.iter().take(d) {
            let v = c.values();
            for b in 0..d {
                let g = (v[grid.neighbor(i, b, true)] - v[grid.neighbor(i, b, false)]) * inv_2h;
                s = s + g * g;
            }
        }
        s.sqrt()
    })
}

/// Outward normal `nu = -grad u / |grad u|` and normal velocity
/// `V = u_t / |grad u|` at snapshot `k`, both zero where `|grad u| <= floor`.
pub fn normal_velocity<T: Real>(ctx: &BvContext<'_, T>, k: usize) -> Result<(VectorField<T>, ScalarField<T>)> {
    let f = ctx.frames.get(k).ok_or_else(|| Error::Precondition(format!("no snapshot {k}")))?;
    let grid = ctx.grid();
    let d = grid.dim();
    let floor = ctx.grad_floor;
    let nu = VectorField::from_index_fn(grid, |i| {
        let mut out = [T::zero(); MAX_DIM];
        if f.gnorm[i] > floor {
            for a in 0..d {
                out[a] = -f.grad[i][a] / f.gnorm[i];
            }
        }
        out
    });
    let v = ScalarField::new(
        grid,
        (0..grid.len()).map(|i| if f.gnorm[i] > floor { f.rhs[i] / f.gnorm[i] } else { T::zero() }).collect(),
    )?;
    Ok((nu, v))
}

/// Space-time integral of `[(I - nu (x) nu) : grad X + V nu . X] |grad u|`
/// over the window, normalized by `||X||_C1 int int |grad u|`.
pub fn bulk_motion_law_residual<T: Real>(
    ctx: &BvContext<'_, T>,
    field: FieldSource<'_, T>,
    window: Window,
    tol: f64,
    sided: Sidedness,
) -> Result<ResidualReport> {
    let idx = ctx.window_indices(window)?;
    let w = ctx.weights(&idx);
    let grid = ctx.grid();
    let mut raw = T::zero();
    let mut mass = T::zero();
    let mut c1 = T::zero();
    let mut cached: Option<(usize, VectorField<T>)> = None;
    for (j, &k) in idx.iter().enumerate() {
        let reuse = matches!(&cached, Some((prev, _)) if ctx.frames[*prev].masks == ctx.frames[k].masks);
        if !reuse {
            cached = Some((k, ctx.field_at(field, k)?));
        }
        let x = &cached.as_ref().expect("filled").1;
        let (v, norm) = ctx.motion_integrand(k, x, None);
        let f = &ctx.frames[k];
        let floor = ctx.grad_floor;
        let tv = integrate_with(&grid, |i| if f.gnorm[i] > floor { f.gnorm[i] } else { T::zero() });
        raw = raw + w[j] * v;
        mass = mass + w[j] * tv;
        c1 = c1.max(norm);
    }
    let window = Window::new(ctx.frames[idx[0]].t.to_f64_lossy(), ctx.frames[idx[idx.len() - 1]].t.to_f64_lossy());
    Ok(ResidualReport::new(
        "bulk_motion_law",
        raw.to_f64_lossy(),
        (c1 * mass).to_f64_lossy(),
        tol,
        sided,
        window,
        None,
        Some(field.id()),
    ))
}

/// Motion law on the single level `gamma`, normalized by `||X||_C1 int P(t) dt`.
pub fn levelset_motion_law_residual<T: Real>(
    ctx: &BvContext<'_, T>,
    gamma: T,
    field: FieldSource<'_, T>,
    window: Window,
    tol: f64,
    sided: Sidedness,
) -> Result<ResidualReport> {
    let idx = ctx.window_indices(window)?;
    let w = ctx.weights(&idx);
    let mut raw = T::zero();
    let mut area = T::zero();
    let mut c1 = T::zero();
    let mut degenerate = false;
    for (j, &k) in idx.iter().enumerate() {
        let x = ctx.field_at(field, k)?;
        let (v, norm) = ctx.motion_integrand(k, &x, Some((gamma, ctx.band)));
        let (p, flat) = ctx.perimeter_at(k, gamma);
        raw = raw + w[j] * v;
        area = area + w[j] * p;
        c1 = c1.max(norm);
        degenerate |= flat;
    }
    let window = Window::new(ctx.frames[idx[0]].t.to_f64_lossy(), ctx.frames[idx[idx.len() - 1]].t.to_f64_lossy());
    let mut r = ResidualReport::new(
        "levelset_motion_law",
        raw.to_f64_lossy(),
        (c1 * area).to_f64_lossy(),
        tol,
        sided,
        window,
        Some(gamma.to_f64_lossy()),
        Some(field.id()),
    );
    r.degenerate = degenerate;
    Ok(r)
}

/// Weak form of `u_t = V |grad u|` against a space-time test function
/// `zeta(x, t)` (returning `(zeta, zeta_t)`), including both time-boundary terms:
/// `int int zeta_t u = -int int zeta V |grad u| + [int u zeta]_{t0}^{t1}`.
/// Here `V |grad u| = u_t` wherever the gradient does not vanish, with no floor.
/// The residual is relative to the larger side.
pub fn distributional_velocity_residual<T, Z>(
    ctx: &BvContext<'_, T>,
    zeta: Z,
    window: Window,
    tol: f64,
) -> Result<ResidualReport>
where
    T: Real,
    Z: Fn(&[f64], f64) -> (f64, f64) + Sync,
{
    let idx = ctx.window_indices(window)?;
    let w = ctx.weights(&idx);
    let grid = ctx.grid();
    let d = grid.dim();
    let mut lhs = T::zero();
    let mut flux = T::zero();
    let mut boundary = T::zero();
    for (j, &k) in idx.iter().enumerate() {
        let f = &ctx.frames[k];
        let t = f.t.to_f64_lossy();
        let u = ctx.traj.snapshots[k].u.values();
        let z: Vec<(T, T)> = (0..grid.len())
            .map(|i| {
                let x = grid.point::<f64>(i);
                let (a, b) = zeta(&x[..d], t);
                (T::lit(a), T::lit(b))
            })
            .collect();
        lhs = lhs + w[j] * integrate_with(&grid, |i| z[i].1 * u[i]);
        flux =
            flux + w[j] * integrate_with(&grid, |i| if f.gnorm[i] > T::zero() { z[i].0 * f.rhs[i] } else { T::zero() });
        if j == 0 || j + 1 == idx.len() {
            let b = integrate_with(&grid, |i| z[i].0 * u[i]);
            boundary = if j == 0 { boundary - b } else { boundary + b };
        }
    }
    let rhs = boundary - flux;
    let raw = (lhs - rhs).to_f64_lossy();
    let scale = lhs.abs().max(rhs.abs()).to_f64_lossy();
    let window = Window::new(ctx.frames[idx[0]].t.to_f64_lossy(), ctx.frames[idx[idx.len() - 1]].t.to_f64_lossy());
    Ok(ResidualReport::new("distributional_velocity", raw, scale, tol, Sidedness::TwoSided, window, None, None))
}

/// `P(t2) + int_{t1}^{t2} int_{u = gamma} V^2 - P(t1)`, relative to `P(t1)`; must be `<= tol`.
pub fn per_level_dissipation_residual<T: Real>(
    ctx: &BvContext<'_, T>,
    gamma: T,
    t1: f64,
    t2: f64,
    tol: f64,
) -> Result<ResidualReport> {
    if !(t1 < t2) {
        return Err(Error::Precondition(format!("need t1 < t2, got {t1} and {t2}")));
    }
    let idx = ctx.window_indices(Window::new(t1, t2))?;
    let first = ctx.frames[idx[0]].t.to_f64_lossy();
    let last = ctx.frames[idx[idx.len() - 1]].t.to_f64_lossy();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);
    if !close(first, t1) || !close(last, t2) {
        return Err(Error::Precondition(format!(
            "t1 = {t1} and t2 = {t2} must be snapshot times (nearest: {first}, {last})"
        )));
    }
    let w = ctx.weights(&idx);
    let grid = ctx.grid();
    let (a, floor) = (ctx.band, ctx.grad_floor);
    let mut dissipation = T::zero();
    let mut degenerate = false;
    for (j, &k) in idx.iter().enumerate() {
        let f = &ctx.frames[k];
        let u = ctx.traj.snapshots[k].u.values();
        dissipation = dissipation
            + w[j]
                * integrate_with(&grid, |i| {
                    if f.gnorm[i] > floor {
                        delta(u[i] - gamma, a) * f.rhs[i] * f.rhs[i] / f.gnorm[i]
                    } else {
                        T::zero()
                    }
                });
        degenerate |= ctx.perimeter_at(k, gamma).1;
    }
    let p1 = ctx.perimeter_at(idx[0], gamma).0;
    let p2 = ctx.perimeter_at(idx[idx.len() - 1], gamma).0;
    let mut r = ResidualReport::new(
        "per_level_dissipation",
        (p2 + dissipation - p1).to_f64_lossy(),
        p1.to_f64_lossy(),
        tol,
        Sidedness::AtMost,
        Window::new(first, last),
        Some(gamma.to_f64_lossy()),
        None,
    );
    r.degenerate = degenerate;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::super::fields::{FieldMode, TestFieldSpec};
    use super::*;
    use crate::library::{initial_disk, Profile};
    use crate::solver::{run, SolverConfig};

    fn constant_run(grid: TorusGrid) -> (Trajectory<f64>, ObstaclePair<f64>) {
        let obs =
            ObstaclePair::from_fields(ScalarField::constant(grid, -1.0), ScalarField::constant(grid, 1.0)).unwrap();
        let mut cfg = SolverConfig::new(ScalarField::constant(grid, 0.25), 0.05, 0.002);
        cfg.output_every = 5;
        (run(cfg, &obs).unwrap(), obs)
    }

    #[test]
    fn stationary_run_has_zero_residuals() {
        let g = TorusGrid::new(2, 16).unwrap();
        let (traj, obs) = constant_run(g);
        let ctx = BvContext::new(&traj, &obs, BvOptions::default()).unwrap();
        let (nu, v) = normal_velocity(&ctx, 1).unwrap();
        assert_eq!(nu.max_norm(), 0.0);
        assert_eq!(v.max_abs(), 0.0);
        let win = Window::new(0.0, 0.002);
        let tf = TestField::new(TestFieldSpec::new(FieldMode::RandomMixed, 1), &obs);
        let r = bulk_motion_law_residual(&ctx, FieldSource::Generated(&tf), win, 0.0, Sidedness::TwoSided).unwrap();
        assert_eq!(r.raw, 0.0);
        assert!(r.pass);
        let r = per_level_dissipation_residual(&ctx, 0.25, 0.0, 0.002, 0.0).unwrap();
        assert_eq!(r.raw, 0.0);
        // u = c: int int zeta_t c = c [int zeta]_{t0}^{t1}, and V = 0.
        let zeta = |x: &[f64], t: f64| {
            let s = (2.0 * std::f64::consts::PI * x[0]).sin();
            ((1.0 + t) * (1.5 + s), 1.5 + s)
        };
        let r = distributional_velocity_residual(&ctx, zeta, win, 1e-12).unwrap();
        assert!(r.pass, "{r}");
        let r = distributional_velocity_residual(&ctx, |_: &[f64], _| (0.0, 0.0), win, 0.0).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn zero_field_gives_zero() {
        let g = TorusGrid::new(2, 32).unwrap();
        let obs = ObstaclePair::from_fields(ScalarField::constant(g, -10.0), ScalarField::constant(g, 10.0)).unwrap();
        let init = Profile::Disk(initial_disk([0.5; 3], 0.3, 1.0)).sample(g).unwrap();
        let mut cfg = SolverConfig::new(init, 0.05, 0.002);
        cfg.output_every = 10;
        let traj = run(cfg, &obs).unwrap();
        let ctx = BvContext::new(&traj, &obs, BvOptions::default()).unwrap();
        let zero = TestField::new(TestFieldSpec::new(FieldMode::Zero, 0), &obs);
        let win = Window::new(0.0, 0.002);
        let r = bulk_motion_law_residual(&ctx, FieldSource::Generated(&zero), win, 0.0, Sidedness::TwoSided).unwrap();
        assert_eq!(r.value, 0.0);
        let r = levelset_motion_law_residual(&ctx, 0.0, FieldSource::Generated(&zero), win, 0.0, Sidedness::TwoSided)
            .unwrap();
        assert_eq!(r.value, 0.0);
        // Empty level.
        let tf = TestField::new(TestFieldSpec::new(FieldMode::RandomMixed, 2), &obs);
        let r = levelset_motion_law_residual(&ctx, 5.0, FieldSource::Generated(&tf), win, 0.0, Sidedness::TwoSided)
            .unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn windows_need_two_snapshots() {
        let g = TorusGrid::new(1, 16).unwrap();
        let (traj, obs) = constant_run(g);
        let ctx = BvContext::new(&traj, &obs, BvOptions::default()).unwrap();
        let tf = TestField::new(TestFieldSpec::new(FieldMode::Zero, 0), &obs);
        let r =
            bulk_motion_law_residual(&ctx, FieldSource::Generated(&tf), Window::new(5.0, 6.0), 0.1, Sidedness::AtLeast);
        assert!(matches!(r, Err(Error::Precondition(_))));
        assert!(per_level_dissipation_residual(&ctx, 0.0, 0.001, 0.0005, 0.1).is_err());
        assert!(normal_velocity(&ctx, 1000).is_err());
    }

    #[test]
    fn inadmissible_fixed_field_is_rejected() {
        let g = TorusGrid::new(1, 32).unwrap();
        let upper = Profile::Sine { amplitude: 0.5, axis: 0 }.sample::<f64>(g).unwrap().map(|v| v + 0.6).unwrap();
        let obs = ObstaclePair::from_fields(ScalarField::constant(g, -1.0), upper.clone()).unwrap();
        let init = upper.map(|v| v.min(0.3)).unwrap();
        let mut cfg = SolverConfig::new(init, 0.05, 0.001);
        cfg.output_every = 4;
        cfg.skip_audit = true;
        let traj = run(cfg, &obs).unwrap();
        let ctx = BvContext::new(&traj, &obs, BvOptions { contact_tol: Some(0.05), ..Default::default() }).unwrap();
        assert!(ctx.contact(0).plus_count() > 0);
        let bad = obs.grad_psi().components().iter().map(|c| c.map(|v| -v).unwrap()).collect();
        let bad = VectorField::new(bad).unwrap();
        let r = bulk_motion_law_residual(
            &ctx,
            FieldSource::Fixed(&bad, "against"),
            Window::new(0.0, 0.001),
            0.1,
            Sidedness::AtLeast,
        );
        assert!(matches!(r, Err(Error::Inadmissible(_))));
    }
}
