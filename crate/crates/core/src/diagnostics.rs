//! Per-step monitors: energy, dissipation ledger, the L1 curvature
//! statistic, penalty mass and the bound trackers.

use std::fmt::Write as _;

use crate::error::Result;
use crate::grid::{gradient, hessian, integrate_with, ScalarField, MAX_DIM};
use crate::model::{penalty_at, ObstaclePair};
use crate::scalar::{deterministic_max, Real};
use crate::solver::FlowState;

pub const DEFAULT_DISS_TOL: f64 = 0.05;
pub const DEFAULT_L1_TOL: f64 = 0.05;

/// Column names of [`DiagnosticsTrace::to_csv`].
pub const CSV_HEADER: &str = "t,dt,energy,dissipation,l1_curvature,penalty_mass,sup_u,inf_u,max_grad_norm,max_rhs";

/// One row of the trace, recorded after every accepted step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow<T> {
    pub t: T,
    pub dt: T,
    pub energy: T,
    /// `int_0^t int (-H + f)^2 |grad u|_eps`
    pub dissipation: T,
    pub l1_curvature: T,
    pub penalty_mass: T,
    pub sup_u: T,
    pub inf_u: T,
    /// `max |grad u|` (unregularized).
    pub max_grad_norm: T,
    pub max_rhs: T,
}

impl<T: Real> TraceRow<T> {
    pub fn csv_line(&self) -> String {
        let cols = [
            self.t,
            self.dt,
            self.energy,
            self.dissipation,
            self.l1_curvature,
            self.penalty_mass,
            self.sup_u,
            self.inf_u,
            self.max_grad_norm,
            self.max_rhs,
        ];
        cols.iter().map(|v| format!("{:.16e}", v.to_f64_lossy())).collect::<Vec<_>>().join(",")
    }
}

/// Append-only time series of [`TraceRow`]s.
#[derive(Clone, Debug)]
pub struct DiagnosticsTrace<T> {
    rows: Vec<TraceRow<T>>,
}

impl<T: Real> DiagnosticsTrace<T> {
    /// Trace holding the row of the initial state.
    pub fn start(state: &mut FlowState<T>, obs: &ObstaclePair<T>) -> Self {
        let row = measure(state, obs, T::zero(), T::zero());
        Self { rows: vec![row] }
    }

    /// Appends the row of `post`, reached with step `dt`, after adding
    /// `increment = dt * int (-H + f)^2 |grad u|_eps` (evaluated at the
    /// state the step started from) to the cumulative dissipation.
    pub fn dissipation_ledger_update(&mut self, increment: T, dt: T, post: &mut FlowState<T>, obs: &ObstaclePair<T>) {
        let cumulative = self.last().dissipation + increment;
        self.rows.push(measure(post, obs, dt, cumulative));
    }

    pub fn rows(&self) -> &[TraceRow<T>] {
        &self.rows
    }

    pub fn last(&self) -> &TraceRow<T> {
        self.rows.last().expect("trace starts with the initial row")
    }

    pub fn initial_energy(&self) -> T {
        self.rows[0].energy
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(200 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.csv_line());
        }
        out
    }
}

fn measure<T: Real>(state: &mut FlowState<T>, obs: &ObstaclePair<T>, dt: T, dissipation: T) -> TraceRow<T> {
    let t = state.t();
    let eps = state.eps();
    let grid = *state.grid();
    let u = state.u().values().to_vec();
    let (phi, psi) = (obs.phi().values(), obs.psi().values());
    let d = state.derived(obs);
    let (ne, h, f, r) = (d.norm_eps.values(), d.curvature.values(), d.force.values(), d.rhs.values());
    let grad = &d.grad;
    let len = grid.len();
    TraceRow {
        t,
        dt,
        energy: integrate_with(&grid, |i| ne[i] + penalty_at(u[i], phi[i], psi[i], eps)),
        dissipation,
        l1_curvature: integrate_with(&grid, |i| (f[i] - h[i]).abs()),
        penalty_mass: integrate_with(&grid, |i| penalty_at(u[i], phi[i], psi[i], eps)),
        sup_u: deterministic_max(len, |i| u[i]),
        inf_u: -deterministic_max(len, |i| -u[i]),
        max_grad_norm: grad.max_norm(),
        max_rhs: deterministic_max(len, |i| r[i].abs()),
    }
}

/// `int |-H_eps + f_eps|`.
pub fn l1_curvature<T: Real>(state: &mut FlowState<T>, obs: &ObstaclePair<T>) -> Result<T> {
    obs.grid().check_same(state.grid())?;
    let grid = *state.grid();
    let d = state.derived(obs);
    let (h, f) = (d.curvature.values(), d.force.values());
    Ok(integrate_with(&grid, |i| (f[i] - h[i]).abs()))
}

/// `int V_eps(u)`.
pub fn penalty_mass<T: Real>(u: &ScalarField<T>, obs: &ObstaclePair<T>, eps: T) -> Result<T> {
    let p = crate::model::penalty(u, obs, eps)?;
    let v = p.values();
    Ok(integrate_with(p.grid(), |i| v[i]))
}

/// `int (-H_eps + f_eps)^2 |grad u|_eps = int rhs^2 / |grad u|_eps`.
pub fn dissipation_rate<T: Real>(state: &mut FlowState<T>, obs: &ObstaclePair<T>) -> T {
    let grid = *state.grid();
    let d = state.derived(obs);
    let (ne, r) = (d.norm_eps.values(), d.rhs.values());
    integrate_with(&grid, |i| r[i] * r[i] / ne[i])
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub initial: f64,
    /// Largest single-step increase of the energy column.
    pub max_increase: f64,
    pub allowed: f64,
    pub pass: bool,
}

/// Energy column non-increasing up to `tol * E(g)` per step.
pub fn check_energy_monotone<T: Real>(trace: &DiagnosticsTrace<T>, tol: f64) -> EnergyReport {
    let initial = trace.initial_energy().to_f64_lossy();
    let max_increase = trace.rows.windows(2).map(|w| (w[1].energy - w[0].energy).to_f64_lossy()).fold(0.0, f64::max);
    let allowed = tol * initial;
    EnergyReport { initial, max_increase, allowed, pass: max_increase <= allowed }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerReport {
    /// `max_{a<b} |E(t_b) + D(t_a, t_b) - E(t_a)| / E(g)`
    pub max_pair_residual: f64,
    /// Same quantity for the pair (first row, last row).
    pub full_run_residual: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Energy-dissipation identity checked over all pairs of rows.
pub fn check_ledger<T: Real>(trace: &DiagnosticsTrace<T>, tol: f64) -> LedgerReport {
    let e0 = trace.initial_energy().to_f64_lossy();
    let r: Vec<f64> = trace.rows.iter().map(|row| (row.energy + row.dissipation).to_f64_lossy()).collect();
    let (mut lo, mut hi, mut worst) = (r[0], r[0], 0.0f64);
    for &v in &r[1..] {
        worst = worst.max((v - lo).abs()).max((v - hi).abs());
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let max_pair_residual = worst / e0;
    let full_run_residual = (r[r.len() - 1] - r[0]).abs() / e0;
    LedgerReport { max_pair_residual, full_run_residual, tol, pass: max_pair_residual <= tol }
}

#[derive(Clone, Debug, PartialEq)]
pub struct L1Report {
    pub initial: f64,
    pub max_value: f64,
    /// Largest uphill jump between consecutive rows.
    pub max_jump: f64,
    pub tol: f64,
    pub pass: bool,
}

/// The statistic stays below `(1 + tol)` times its initial value and never
/// jumps up by more than `tol * (initial + 1)` in one step.
pub fn check_l1_monotone<T: Real>(trace: &DiagnosticsTrace<T>, tol: f64) -> L1Report {
    let vals: Vec<f64> = trace.rows.iter().map(|r| r.l1_curvature.to_f64_lossy()).collect();
    let initial = vals[0];
    let max_value = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_jump = vals.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let pass = max_jump <= tol * (initial + 1.0) && max_value <= initial * (1.0 + tol);
    L1Report { initial, max_value, max_jump, tol, pass }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsReport {
    pub lower: f64,
    pub upper: f64,
    pub min_inf: f64,
    pub max_sup: f64,
    /// Absolute tolerance `10 (dt + h^2) * scale`.
    pub mp_tol: f64,
    pub grad_limit: f64,
    pub max_grad: f64,
    /// Relative tolerance `10 (dt + h^2)` on the gradient bound.
    pub grad_tol: f64,
    pub mp_pass: bool,
    pub grad_pass: bool,
    pub pass: bool,
}

/// Maximum principle `min(min psi, min g) <= u <= max(max phi, max g)` and
/// the gradient bound `max|grad u| <= max(|grad phi|, |grad psi|, |grad g|)`.
pub fn check_bounds<T: Real>(
    trace: &DiagnosticsTrace<T>,
    obs: &ObstaclePair<T>,
    g: &ScalarField<T>,
) -> Result<BoundsReport> {
    obs.grid().check_same(g.grid())?;
    let h = obs.grid().h::<T>().to_f64_lossy();
    let f = |v: T| v.to_f64_lossy();
    let lower = f(obs.psi().min().min(g.min()));
    let upper = f(obs.phi().max().max(g.max()));
    let dt = trace.rows.iter().map(|r| f(r.dt)).fold(0.0, f64::max);
    let rel = 10.0 * (dt + h * h);
    let scale = g.max_abs().to_f64_lossy().max(upper - lower).max(1.0);
    let mp_tol = rel * scale;
    let min_inf = trace.rows.iter().map(|r| f(r.inf_u)).fold(f64::INFINITY, f64::min);
    let max_sup = trace.rows.iter().map(|r| f(r.sup_u)).fold(f64::NEG_INFINITY, f64::max);
    let grad_limit = f(obs.grad_phi().max_norm().max(obs.grad_psi().max_norm()).max(gradient(g).max_norm()));
    let max_grad = trace.rows.iter().map(|r| f(r.max_grad_norm)).fold(0.0, f64::max);
    let mp_pass = min_inf >= lower - mp_tol && max_sup <= upper + mp_tol;
    let grad_pass = max_grad <= grad_limit * (1.0 + rel);
    Ok(BoundsReport {
        lower,
        upper,
        min_inf,
        max_sup,
        mp_tol,
        grad_limit,
        max_grad,
        grad_tol: rel,
        mp_pass,
        grad_pass,
        pass: mp_pass && grad_pass,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeDerivativeReport {
    /// `max_x sum_i |lambda_i(D^2 g)|`
    pub hessian_bound: f64,
    pub initial_max_rhs: f64,
    /// Largest `max|rhs|` over the run divided by the bound (monitored only).
    pub max_ratio_over_run: f64,
    pub pass: bool,
}

/// `max|u_t| <= max|D^2 g|` at `t = 0`, with the nuclear norm of the Hessian
/// as the matrix norm.
pub fn check_time_derivative<T: Real>(trace: &DiagnosticsTrace<T>, g: &ScalarField<T>) -> TimeDerivativeReport {
    let hess = hessian(g);
    let d = g.grid().dim();
    let bound = deterministic_max(g.grid().len(), |i| nuclear_norm(&hess.at(i), d)).to_f64_lossy();
    let initial_max_rhs = trace.rows[0].max_rhs.to_f64_lossy();
    let max_rhs = trace.rows.iter().map(|r| r.max_rhs.to_f64_lossy()).fold(0.0, f64::max);
    let h = g.grid().h::<f64>();
    let dt = trace.rows.iter().map(|r| r.dt.to_f64_lossy()).fold(0.0, f64::max);
    let ratio = if bound > 0.0 {
        max_rhs / bound
    } else if max_rhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    TimeDerivativeReport {
        hessian_bound: bound,
        initial_max_rhs,
        max_ratio_over_run: ratio,
        pass: initial_max_rhs <= bound * (1.0 + 10.0 * (dt + h * h)),
    }
}

/// Sum of absolute eigenvalues of a symmetric `d x d` matrix (`d <= 3`).
pub fn nuclear_norm<T: Real>(m: &[[T; MAX_DIM]; MAX_DIM], d: usize) -> T {
    symmetric_eigenvalues(m, d)[..d].iter().fold(T::zero(), |s, l| s + l.abs())
}

/// Eigenvalues of a symmetric matrix of size `d <= 3` in closed form.
pub fn symmetric_eigenvalues<T: Real>(m: &[[T; MAX_DIM]; MAX_DIM], d: usize) -> [T; MAX_DIM] {
    let two = T::lit(2.0);
    match d {
        1 => [m[0][0], T::zero(), T::zero()],
        2 => {
            let mean = (m[0][0] + m[1][1]) / two;
            let half = (m[0][0] - m[1][1]) / two;
            let r = (half * half + m[0][1] * m[0][1]).sqrt();
            [mean + r, mean - r, T::zero()]
        }
        _ => {
            let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
            let q = (m[0][0] + m[1][1] + m[2][2]) / T::lit(3.0);
            if p1 == T::zero() {
                return [m[0][0], m[1][1], m[2][2]];
            }
            let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + two * p1;
            let p = (p2 / T::lit(6.0)).sqrt();
            let b = |i: usize, j: usize| (m[i][j] - if i == j { q } else { T::zero() }) / p;
            let det = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1))
                - b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0))
                + b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
            let r = (det / two).max(-T::one()).min(T::one());
            let angle = r.acos() / T::lit(3.0);
            let third = T::lit(2.0 * std::f64::consts::PI / 3.0);
            let l1 = q + two * p * angle.cos();
            let l3 = q + two * p * (angle + third).cos();
            [l1, T::lit(3.0) * q - l1 - l3, l3]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use std::f64::consts::PI;

    fn consts(grid: TorusGrid, lo: f64, hi: f64) -> ObstaclePair<f64> {
        ObstaclePair::from_fields(ScalarField::constant(grid, lo), ScalarField::constant(grid, hi)).unwrap()
    }

    #[test]
    fn l1_curvature_examples() {
        let g = TorusGrid::new(2, 16).unwrap();
        let obs = consts(g, 0.0, 1.0);
        let mut s = FlowState::new(ScalarField::constant(g, 0.5), 0.0, 0.1).unwrap();
        assert_eq!(l1_curvature(&mut s, &obs).unwrap(), 0.0);
        let mut s = FlowState::new(ScalarField::constant(g, 1.2), 0.0, 0.1).unwrap();
        assert!((l1_curvature(&mut s, &obs).unwrap() - 0.32).abs() < 1e-12);
    }

    #[test]
    fn l1_curvature_of_sine_matches_fine_reference() {
        let eps = 0.1;
        // Reference: |d/dx (u' / sqrt(eps^2 + u'^2))| integrated with n = 512 samples of the exact derivative.
        let m = 512;
        let reference: f64 = (0..m)
            .map(|i| {
                let x = i as f64 / m as f64;
                let p = 2.0 * PI * (2.0 * PI * x).cos();
                let pp = -4.0 * PI * PI * (2.0 * PI * x).sin();
                (eps * eps * pp / (eps * eps + p * p).powf(1.5)).abs()
            })
            .sum::<f64>()
            / m as f64;
        let g = TorusGrid::new(1, 512).unwrap();
        let obs = consts(g, -2.0, 2.0);
        let u = ScalarField::from_fn(g, |x: &[f64]| (2.0 * PI * x[0]).sin()).unwrap();
        let mut s = FlowState::new(u, 0.0, eps).unwrap();
        let got = l1_curvature(&mut s, &obs).unwrap();
        assert!((got - reference).abs() < 0.01 * reference, "{got} vs {reference}");
    }

    #[test]
    fn penalty_mass_examples() {
        let g = TorusGrid::new(2, 16).unwrap();
        let obs = consts(g, 0.0, 1.0);
        assert_eq!(penalty_mass(&ScalarField::constant(g, 0.3), &obs, 0.1).unwrap(), 0.0);
        let m = penalty_mass(&ScalarField::constant(g, 1.2), &obs, 0.1).unwrap();
        assert!((m - 0.016).abs() < 1e-14);
    }

    #[test]
    fn stationary_trace_has_zero_increments() {
        let g = TorusGrid::new(2, 16).unwrap();
        let obs = consts(g, -1.0, 1.0);
        let mut s = FlowState::new(ScalarField::constant(g, 0.0), 0.0, 0.05).unwrap();
        let mut trace = DiagnosticsTrace::start(&mut s, &obs);
        let inc = dissipation_rate(&mut s, &obs) * 0.01;
        assert_eq!(inc, 0.0);
        trace.dissipation_ledger_update(inc, 0.01, &mut s, &obs);
        assert_eq!(trace.rows().len(), 2);
        assert_eq!(trace.last().dissipation, 0.0);
        assert!((trace.initial_energy() - 0.05).abs() < 1e-15);
        assert!(check_l1_monotone(&trace, 0.0).pass);
        assert!(check_ledger(&trace, 0.0).pass);
        assert!(check_energy_monotone(&trace, 0.0).pass);
    }

    #[test]
    fn ledger_detects_pairwise_drift() {
        let row = |e: f64, d: f64| TraceRow {
            t: 0.0,
            dt: 0.0,
            energy: e,
            dissipation: d,
            l1_curvature: 0.0,
            penalty_mass: 0.0,
            sup_u: 0.0,
            inf_u: 0.0,
            max_grad_norm: 0.0,
            max_rhs: 0.0,
        };
        let trace = DiagnosticsTrace { rows: vec![row(1.0, 0.0), row(0.9, 0.2), row(0.7, 0.3)] };
        let rep = check_ledger(&trace, 0.05);
        assert!((rep.max_pair_residual - 0.1).abs() < 1e-12);
        assert!(rep.full_run_residual.abs() < 1e-12);
        assert!(!rep.pass);
    }

    #[test]
    fn csv_has_header_and_seventeen_digits() {
        let g = TorusGrid::new(1, 8).unwrap();
        let obs = consts(g, -1.0, 1.0);
        let mut s = FlowState::new(ScalarField::constant(g, 0.0), 0.0, 0.1).unwrap();
        let trace = DiagnosticsTrace::start(&mut s, &obs);
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 10);
        assert_eq!(row[2], "1.0000000000000001e-1");
        assert_eq!(row[2].parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn eigenvalues_closed_form() {
        let m: [[f64; 3]; 3] = [[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, -1.0]];
        let mut l = symmetric_eigenvalues(&m, 3);
        l.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in l.iter().zip([-1.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((nuclear_norm(&m, 3) - 5.0).abs() < 1e-12);
        let m2: [[f64; 3]; 3] = [[0.0, 2.0, 0.0], [2.0, 0.0, 0.0], [0.0; 3]];
        assert!((nuclear_norm(&m2, 2) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn time_derivative_bound_holds_at_start() {
        let g = TorusGrid::new(2, 32).unwrap();
        let obs = consts(g, -2.0, 2.0);
        let u = ScalarField::from_fn(g, |x: &[f64]| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos()).unwrap();
        let mut s = FlowState::new(u.clone(), 0.0, 0.05).unwrap();
        let trace = DiagnosticsTrace::start(&mut s, &obs);
        let rep = check_time_derivative(&trace, &u);
        assert!(rep.pass, "{rep:?}");
        assert!(rep.initial_max_rhs > 0.0);
    }
}
