//! Obstacles, the penalty potential and its force, the regularized and
//! limit energies, and the well-preparedness audit of the data.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{self, gradient, hessian, integrate_with, ScalarField, TorusGrid, VectorField};
use crate::library::Profile;
use crate::scalar::{deterministic_max, Real};

/// Power of the positive parts in the penalty potential.
///
/// The force and stiffness below are written for a general power so a
/// quadratic penalty only needs this constant changed.
pub const PENALTY_POWER: i32 = 4;

/// Absolute tolerance of the pointwise constraint check in [`limit_energy`].
pub const CONSTRAINT_TOL: f64 = 1e-12;

/// Multiple of `h * max|D^2 obstacle|` below which an obstacle gradient
/// counts as vanishing in the critical-set audit.
pub const CRITICAL_GRAD_CELLS: f64 = 2.0;

/// `V_eps(u) = ((phi - u)_+^p + (u - psi)_+^p) / eps`.
#[inline]
pub fn penalty_at<T: Real>(u: T, phi: T, psi: T, eps: T) -> T {
    ((phi - u).pos().powi(PENALTY_POWER) + (u - psi).pos().powi(PENALTY_POWER)) / eps
}

/// `f_eps = -V_eps'(u) = p/eps ((phi - u)_+^(p-1) - (u - psi)_+^(p-1))`.
#[inline]
pub fn force_at<T: Real>(u: T, phi: T, psi: T, eps: T) -> T {
    let p = T::from_count(PENALTY_POWER as usize);
    p / eps * ((phi - u).pos().powi(PENALTY_POWER - 1) - (u - psi).pos().powi(PENALTY_POWER - 1))
}

/// `V_eps''(u)`.
#[inline]
pub fn stiffness_at<T: Real>(u: T, phi: T, psi: T, eps: T) -> T {
    let c = T::from_count((PENALTY_POWER * (PENALTY_POWER - 1)) as usize);
    c / eps * ((phi - u).pos().powi(PENALTY_POWER - 2) + (u - psi).pos().powi(PENALTY_POWER - 2))
}

/// Lower obstacle `phi`, upper obstacle `psi` and their metadata.
#[derive(Clone, Debug)]
pub struct ObstaclePair<T> {
    phi: ScalarField<T>,
    psi: ScalarField<T>,
    grad_phi: VectorField<T>,
    grad_psi: VectorField<T>,
    analytic_gradients: bool,
    bound: Option<T>,
    margin: Option<T>,
    critical_plus: Vec<usize>,
    critical_minus: Vec<usize>,
}

impl<T: Real> ObstaclePair<T> {
    /// Obstacles from raw fields; gradients are taken by central differences.
    pub fn from_fields(phi: ScalarField<T>, psi: ScalarField<T>) -> Result<Self> {
        let grad_phi = gradient(&phi);
        let grad_psi = gradient(&psi);
        Self::with_gradients(phi, psi, grad_phi, grad_psi, false)
    }

    /// Obstacles sampled from analytic profiles, with exact gradients and the
    /// profiles' declared critical points.
    pub fn from_profiles(grid: TorusGrid, lower: &Profile, upper: &Profile) -> Result<Self> {
        let phi = lower.sample(grid)?;
        let psi = upper.sample(grid)?;
        let gphi = lower.sample_gradient(grid)?;
        let gpsi = upper.sample_gradient(grid)?;
        let mut pair = Self::with_gradients(phi, psi, gphi, gpsi, true)?;
        pair.critical_minus = lower.declared_critical_points(&grid);
        pair.critical_plus = upper.declared_critical_points(&grid);
        Ok(pair)
    }

    pub fn with_gradients(
        phi: ScalarField<T>,
        psi: ScalarField<T>,
        grad_phi: VectorField<T>,
        grad_psi: VectorField<T>,
        analytic: bool,
    ) -> Result<Self> {
        let grid = *phi.grid();
        grid.check_same(psi.grid())?;
        grid.check_same(grad_phi.grid())?;
        grid.check_same(grad_psi.grid())?;
        let bad: Vec<usize> = (0..grid.len()).filter(|&i| psi.get(i) - phi.get(i) <= T::zero()).collect();
        if !bad.is_empty() {
            return Err(Error::WellPrepared(format!(
                "obstacles not strictly separated (psi - phi <= 0) at {} points: {}",
                bad.len(),
                list_points(&grid, &bad)
            )));
        }
        Ok(Self {
            phi,
            psi,
            grad_phi,
            grad_psi,
            analytic_gradients: analytic,
            bound: None,
            margin: None,
            critical_plus: Vec::new(),
            critical_minus: Vec::new(),
        })
    }

    /// Declares the bound `L` and margin `l` used by the audit instead of the
    /// smallest admissible values.
    pub fn with_bounds(mut self, bound: T, margin: T) -> Self {
        self.bound = Some(bound);
        self.margin = Some(margin);
        self
    }

    /// Declares the expected critical points of `psi` (plus) and `phi` (minus).
    pub fn with_critical_points(mut self, plus: Vec<usize>, minus: Vec<usize>) -> Self {
        self.critical_plus = plus;
        self.critical_minus = minus;
        self
    }

    /// Obstacles `F(phi)`, `F(psi)` for an increasing map with derivative `dmap`.
    pub fn relabel<F, G>(&self, map: F, dmap: G) -> Result<Self>
    where
        F: Fn(T) -> T + Sync,
        G: Fn(T) -> T + Sync,
    {
        let grid = *self.grid();
        let phi = self.phi.map(&map)?;
        let psi = self.psi.map(&map)?;
        let scale = |g: &VectorField<T>, base: &ScalarField<T>| {
            let comps =
                g.components().iter().map(|c| c.zip_map(base, |gc, b| gc * dmap(b))).collect::<Result<Vec<_>>>()?;
            VectorField::new(comps)
        };
        let grad_phi = scale(&self.grad_phi, &self.phi)?;
        let grad_psi = scale(&self.grad_psi, &self.psi)?;
        let mut out = Self::with_gradients(phi, psi, grad_phi, grad_psi, self.analytic_gradients)?;
        out.critical_plus = self.critical_plus.clone();
        out.critical_minus = self.critical_minus.clone();
        debug_assert_eq!(*out.grid(), grid);
        Ok(out)
    }

    #[inline]
    pub fn grid(&self) -> &TorusGrid {
        self.phi.grid()
    }

    pub fn phi(&self) -> &ScalarField<T> {
        &self.phi
    }

    pub fn psi(&self) -> &ScalarField<T> {
        &self.psi
    }

    pub fn grad_phi(&self) -> &VectorField<T> {
        &self.grad_phi
    }

    pub fn grad_psi(&self) -> &VectorField<T> {
        &self.grad_psi
    }

    pub fn has_analytic_gradients(&self) -> bool {
        self.analytic_gradients
    }

    pub fn critical_plus(&self) -> &[usize] {
        &self.critical_plus
    }

    pub fn critical_minus(&self) -> &[usize] {
        &self.critical_minus
    }

    /// `min (psi - phi)` over the grid.
    pub fn separation(&self) -> T {
        let (a, b) = (self.phi.values(), self.psi.values());
        -deterministic_max(a.len(), |i| a[i] - b[i])
    }
}

fn list_points(grid: &TorusGrid, idx: &[usize]) -> String {
    const SHOWN: usize = 8;
    let mut s: Vec<String> =
        idx.iter().take(SHOWN).map(|&i| format!("{:?}", &grid.multi_index(i)[..grid.dim()])).collect();
    if idx.len() > SHOWN {
        s.push(format!("... ({} more)", idx.len() - SHOWN));
    }
    s.join(", ")
}

pub fn penalty<T: Real>(u: &ScalarField<T>, obs: &ObstaclePair<T>, eps: T) -> Result<ScalarField<T>> {
    check_eps(eps)?;
    obs.grid().check_same(u.grid())?;
    let (uv, phi, psi) = (u.values(), obs.phi.values(), obs.psi.values());
    Ok(ScalarField::from_index_fn(*u.grid(), |i| penalty_at(uv[i], phi[i], psi[i], eps)))
}

pub fn penalty_force<T: Real>(u: &ScalarField<T>, obs: &ObstaclePair<T>, eps: T) -> Result<ScalarField<T>> {
    check_eps(eps)?;
    obs.grid().check_same(u.grid())?;
    let (uv, phi, psi) = (u.values(), obs.phi.values(), obs.psi.values());
    Ok(ScalarField::from_index_fn(*u.grid(), |i| force_at(uv[i], phi[i], psi[i], eps)))
}

/// `E_eps(u) = integral of |grad u|_eps + V_eps(u)`.
pub fn energy<T: Real>(u: &ScalarField<T>, obs: &ObstaclePair<T>, eps: T) -> Result<T> {
    check_eps(eps)?;
    obs.grid().check_same(u.grid())?;
    let grid = *u.grid();
    let (uv, phi, psi) = (u.values(), obs.phi.values(), obs.psi.values());
    Ok(integrate_with(&grid, |i| {
        let p = grid::gradient_at(&grid, uv, i);
        grid::regularized_norm(&p[..grid.dim()], eps) + penalty_at(uv[i], phi[i], psi[i], eps)
    }))
}

/// Value of the unregularized energy: total variation if the constraint
/// holds, `+inf` otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LimitEnergy<T> {
    Finite(T),
    Infinite,
}

impl<T: Real> LimitEnergy<T> {
    pub fn finite(self) -> Option<T> {
        match self {
            LimitEnergy::Finite(v) => Some(v),
            LimitEnergy::Infinite => None,
        }
    }
}

impl<T: Real> fmt::Display for LimitEnergy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LimitEnergy::Finite(v) => write!(f, "{v}"),
            LimitEnergy::Infinite => f.write_str("inf"),
        }
    }
}

pub fn limit_energy<T: Real>(u: &ScalarField<T>, obs: &ObstaclePair<T>) -> Result<LimitEnergy<T>> {
    obs.grid().check_same(u.grid())?;
    let tol = T::lit(CONSTRAINT_TOL);
    let (uv, phi, psi) = (u.values(), obs.phi.values(), obs.psi.values());
    let violation = deterministic_max(uv.len(), |i| (phi[i] - uv[i]).max(uv[i] - psi[i]));
    if violation > tol {
        return Ok(LimitEnergy::Infinite);
    }
    let grid = *u.grid();
    Ok(LimitEnergy::Finite(integrate_with(&grid, |i| {
        let p = grid::gradient_at(&grid, uv, i);
        grid::regularized_norm(&p[..grid.dim()], T::zero())
    })))
}

fn check_eps<T: Real>(eps: T) -> Result<()> {
    if eps > T::zero() && eps.is_finite() {
        Ok(())
    } else {
        Err(crate::error::param("eps", format!("must be positive and finite, got {eps}")))
    }
}

/// Outcome of [`audit_well_prepared`].
#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub separation: f64,
    pub bound: f64,
    pub margin: f64,
    pub max_abs_g: f64,
    pub max_phi: f64,
    pub min_psi: f64,
    pub bounds_hold: bool,
    /// Connected components of `{phi >= -(L+l), |grad phi| < tol}`.
    pub critical_minus_components: usize,
    /// Connected components of `{psi <= L+l, |grad psi| < tol}`.
    pub critical_plus_components: usize,
    pub declared_minus: usize,
    pub declared_plus: usize,
    pub grad_tol_phi: f64,
    pub grad_tol_psi: f64,
    pub pass: bool,
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "separation min(psi - phi) = {:.6e}", self.separation)?;
        writeln!(
            f,
            "bounds: L = {:.6e}, l = {:.6e}, max|g| = {:.6e}, max phi = {:.6e}, min psi = {:.6e} ({})",
            self.bound,
            self.margin,
            self.max_abs_g,
            self.max_phi,
            self.min_psi,
            if self.bounds_hold { "ok" } else { "violated" }
        )?;
        writeln!(
            f,
            "critical components: phi {} (declared {}, grad tol {:.3e}), psi {} (declared {}, grad tol {:.3e})",
            self.critical_minus_components,
            self.declared_minus,
            self.grad_tol_phi,
            self.critical_plus_components,
            self.declared_plus,
            self.grad_tol_psi
        )?;
        write!(f, "verdict: {}", if self.pass { "pass" } else { "fail" })
    }
}

/// Checks that `(phi, psi, g)` are well-prepared data.
///
/// Hard failures (separation, ordering `phi <= g <= psi`) are errors listing
/// the offending points; the bound and critical-set checks are reported in
/// the verdict.
pub fn audit_well_prepared<T: Real>(obs: &ObstaclePair<T>, g: &ScalarField<T>) -> Result<AuditReport> {
    let grid = *obs.grid();
    grid.check_same(g.grid())?;
    let separation = obs.separation();
    if separation <= T::zero() {
        let bad: Vec<usize> = (0..grid.len()).filter(|&i| obs.psi.get(i) <= obs.phi.get(i)).collect();
        return Err(Error::WellPrepared(format!(
            "psi - phi <= 0 at {} points: {}",
            bad.len(),
            list_points(&grid, &bad)
        )));
    }
    let bad: Vec<usize> = (0..grid.len()).filter(|&i| g.get(i) < obs.phi.get(i) || g.get(i) > obs.psi.get(i)).collect();
    if !bad.is_empty() {
        return Err(Error::WellPrepared(format!(
            "ordering phi <= g <= psi fails at {} points: {}",
            bad.len(),
            list_points(&grid, &bad)
        )));
    }

    let max_abs_g = g.max_abs();
    let max_phi = obs.phi.max();
    let min_psi = obs.psi.min();
    let smallest = max_abs_g.max(max_phi).max(-min_psi).max(T::zero());
    let bound = obs.bound.unwrap_or(smallest);
    let margin = obs.margin.unwrap_or(bound);
    let bounds_hold = max_abs_g <= bound && max_phi <= bound && min_psi >= -bound;
    let level = bound + margin;

    let h = grid.h::<T>();
    let cells = T::lit(CRITICAL_GRAD_CELLS);
    let tol_phi = cells * h * hessian(&obs.phi).max_frobenius();
    let tol_psi = cells * h * hessian(&obs.psi).max_frobenius();
    let gphi = obs.grad_phi.norm();
    let gpsi = obs.grad_psi.norm();
    let minus_mask: Vec<bool> = (0..grid.len()).map(|i| obs.phi.get(i) >= -level && gphi.get(i) < tol_phi).collect();
    let plus_mask: Vec<bool> = (0..grid.len()).map(|i| obs.psi.get(i) <= level && gpsi.get(i) < tol_psi).collect();
    let critical_minus_components = connected_components(&grid, &minus_mask);
    let critical_plus_components = connected_components(&grid, &plus_mask);

    let pass = bounds_hold
        && critical_minus_components <= obs.critical_minus.len()
        && critical_plus_components <= obs.critical_plus.len();
    Ok(AuditReport {
        separation: separation.to_f64_lossy(),
        bound: bound.to_f64_lossy(),
        margin: margin.to_f64_lossy(),
        max_abs_g: max_abs_g.to_f64_lossy(),
        max_phi: max_phi.to_f64_lossy(),
        min_psi: min_psi.to_f64_lossy(),
        bounds_hold,
        critical_minus_components,
        critical_plus_components,
        declared_minus: obs.critical_minus.len(),
        declared_plus: obs.critical_plus.len(),
        grad_tol_phi: tol_phi.to_f64_lossy(),
        grad_tol_psi: tol_psi.to_f64_lossy(),
        pass,
    })
}

/// Number of face-connected components of a mask on the torus.
pub fn connected_components(grid: &TorusGrid, mask: &[bool]) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut queue = VecDeque::new();
    let mut count = 0;
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for axis in 0..grid.dim() {
                for fwd in [true, false] {
                    let j = grid.neighbor(i, axis, fwd);
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::integrate;
    use crate::library::{obstacle_disk, Profile};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn constant_pair(grid: TorusGrid, lo: f64, hi: f64) -> ObstaclePair<f64> {
        ObstaclePair::from_fields(ScalarField::constant(grid, lo), ScalarField::constant(grid, hi)).unwrap()
    }

    #[test]
    fn penalty_and_force_examples() {
        assert_eq!(penalty_at(0.5_f64, 0.0, 1.0, 0.1), 0.0);
        assert!((penalty_at(1.2_f64, 0.0, 1.0, 0.1) - 0.016).abs() < 1e-15);
        assert!((penalty_at(-0.1_f64, 0.0, 1.0, 0.01) - 0.01).abs() < 1e-15);
        assert_eq!(force_at(0.3_f64, 0.0, 1.0, 0.1), 0.0);
        assert!((force_at(1.2_f64, 0.0, 1.0, 0.1) + 0.32).abs() < 1e-14);
        assert!((force_at(-0.1_f64, 0.0, 1.0, 0.01) - 0.4).abs() < 1e-14);
    }

    #[test]
    fn field_penalty_requires_positive_eps() {
        let g = TorusGrid::new(1, 8).unwrap();
        let obs = constant_pair(g, 0.0, 1.0);
        let u = ScalarField::constant(g, 0.5);
        assert!(penalty(&u, &obs, 0.0).is_err());
        assert!(energy(&u, &obs, -1.0).is_err());
        assert_eq!(integrate(&penalty(&u, &obs, 0.1).unwrap()), 0.0);
        assert_eq!(integrate(&penalty_force(&u, &obs, 0.1).unwrap()), 0.0);
    }

    #[test]
    fn energy_of_admissible_constant_is_eps() {
        let g = TorusGrid::new(2, 16).unwrap();
        let obs = constant_pair(g, -1.0, 1.0);
        let u = ScalarField::constant(g, 0.3);
        assert!((energy(&u, &obs, 0.05).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(limit_energy(&u, &obs).unwrap(), LimitEnergy::Finite(0.0));
    }

    #[test]
    fn energy_of_sine_is_total_variation() {
        let g = TorusGrid::new(1, 128).unwrap();
        let obs = constant_pair(g, -2.0, 2.0);
        let u = ScalarField::from_fn(g, |x: &[f64]| (2.0 * PI * x[0]).sin()).unwrap();
        // Analytic: integral of 2 pi |cos(2 pi x)| over [0,1] is 4.
        let e = energy(&u, &obs, 1e-6).unwrap();
        assert!((e - 4.0).abs() < 0.04, "{e}");
        let lim = limit_energy(&u, &obs).unwrap().finite().unwrap();
        assert!((lim - 4.0).abs() < 0.04, "{lim}");
    }

    #[test]
    fn energy_counts_violating_cells() {
        let g = TorusGrid::new(1, 64).unwrap();
        let obs = constant_pair(g, 0.0, 1.0);
        let violating = 16usize;
        let vals: Vec<f64> = (0..64).map(|i| if i < violating { 1.2 } else { 0.5 }).collect();
        let u = ScalarField::new(g, vals).unwrap();
        // Hand sum: alpha * 0.016 from the penalty, plus the gradient part.
        let alpha = violating as f64 / 64.0;
        let grad_part = integrate(&gradient(&u).norm().map(|p| (0.01 + p * p).sqrt()).unwrap());
        let e = energy(&u, &obs, 0.1).unwrap();
        assert!((e - grad_part - alpha * 0.016).abs() < 1e-14);
    }

    #[test]
    fn limit_energy_flags_violation() {
        let g = TorusGrid::new(1, 16).unwrap();
        let obs = constant_pair(g, 0.0, 1.0);
        let mut v = vec![0.5; 16];
        v[3] = 1.5;
        assert_eq!(limit_energy(&ScalarField::new(g, v).unwrap(), &obs).unwrap(), LimitEnergy::Infinite);
    }

    #[test]
    fn audit_constant_data_passes() {
        let g = TorusGrid::new(2, 16).unwrap();
        let obs = constant_pair(g, -1.0, 1.0);
        let r = audit_well_prepared(&obs, &ScalarField::constant(g, 0.0)).unwrap();
        assert_eq!(r.separation, 2.0);
        assert_eq!(r.critical_minus_components + r.critical_plus_components, 0);
        assert!(r.pass);
    }

    #[test]
    fn audit_remark_bump_has_single_center_component() {
        let g = TorusGrid::new(2, 64).unwrap();
        let bump = Profile::RemarkBump { center: [0.5, 0.5, 0.0], bound: 1.0 };
        let obs = ObstaclePair::from_profiles(g, &Profile::Constant(-3.0), &bump).unwrap();
        let r = audit_well_prepared(&obs, &ScalarField::constant(g, -1.0)).unwrap();
        assert_eq!(r.bound, 1.0);
        assert_eq!(r.critical_plus_components, 1);
        assert_eq!(r.critical_minus_components, 0);
        assert!(r.pass, "{r}");
    }

    #[test]
    fn audit_reports_ordering_violation() {
        let g = TorusGrid::new(1, 16).unwrap();
        let obs = constant_pair(g, -1.0, 1.0);
        let mut v = vec![0.0; 16];
        v[5] = 1.1;
        let err = audit_well_prepared(&obs, &ScalarField::new(g, v).unwrap()).unwrap_err();
        assert!(matches!(&err, Error::WellPrepared(m) if m.contains("[5]")), "{err}");
    }

    #[test]
    fn touching_obstacles_rejected() {
        let g = TorusGrid::new(1, 16).unwrap();
        let r = ObstaclePair::from_fields(ScalarField::constant(g, 0.0), ScalarField::constant(g, 0.0));
        assert!(matches!(r, Err(Error::WellPrepared(_))));
    }

    #[test]
    fn audit_counts_undeclared_components() {
        let g = TorusGrid::new(2, 64).unwrap();
        let lower = Profile::MultiDisk(vec![
            obstacle_disk([0.3, 0.5, 0.0], 0.05, 1.0, 1.0),
            obstacle_disk([0.7, 0.5, 0.0], 0.05, 1.0, 1.0),
        ]);
        let obs = ObstaclePair::from_profiles(g, &lower, &Profile::Constant(5.0)).unwrap();
        let u0 = ScalarField::constant(g, 0.5);
        let r = audit_well_prepared(&obs, &u0).unwrap();
        assert_eq!(r.critical_minus_components, 2, "{r}");
        assert!(r.pass);
        let stripped = obs.clone().with_critical_points(vec![], vec![0]);
        assert!(!audit_well_prepared(&stripped, &u0).unwrap().pass);
    }

    #[test]
    fn components_wrap_periodically() {
        let g = TorusGrid::new(1, 8).unwrap();
        let mask = [true, false, false, true, false, false, false, true];
        assert_eq!(connected_components(&g, &mask), 2);
    }

    fn lagrangian(p: &[f64; 2], z: f64, phi: f64, psi: f64, eps: f64) -> f64 {
        grid::regularized_norm(p, eps) + penalty_at(z, phi, psi, eps)
    }

    proptest! {
        #[test]
        fn penalty_nonnegative_and_zero_iff_admissible(u in -3.0f64..3.0, phi in -2.0f64..0.0, gap in 0.01f64..2.0, eps in 0.01f64..1.0) {
            let psi = phi + gap;
            let v = penalty_at(u, phi, psi, eps);
            prop_assert!(v >= 0.0);
            prop_assert_eq!(v == 0.0, phi <= u && u <= psi);
            let f = force_at(u, phi, psi, eps);
            if u <= psi { prop_assert!(f >= 0.0); }
            if u >= phi { prop_assert!(f <= 0.0); }
        }

        #[test]
        fn force_is_negative_derivative(u in -3.0f64..3.0, phi in -1.0f64..0.0, gap in 0.1f64..1.0, eps in 0.01f64..1.0) {
            let psi = phi + gap;
            let h = 1e-6;
            let fd = (penalty_at(u + h, phi, psi, eps) - penalty_at(u - h, phi, psi, eps)) / (2.0 * h);
            let f = force_at(u, phi, psi, eps);
            prop_assert!((fd + f).abs() <= 1e-6 * (1.0 + f.abs()), "fd {} force {}", fd, f);
            let fd2 = (force_at(u + h, phi, psi, eps) - force_at(u - h, phi, psi, eps)) / (2.0 * h);
            let s = stiffness_at(u, phi, psi, eps);
            prop_assert!((fd2 + s).abs() <= 1e-5 * (1.0 + s.abs()));
        }

        #[test]
        fn integrand_jointly_convex(
            p in proptest::array::uniform2(-5.0f64..5.0), q in proptest::array::uniform2(-5.0f64..5.0),
            z in -2.0f64..2.0, w in -2.0f64..2.0, lambda in 0.0f64..1.0, eps in 0.01f64..1.0,
        ) {
            let (phi, psi) = (-0.5, 0.5);
            let mix = [lambda * p[0] + (1.0 - lambda) * q[0], lambda * p[1] + (1.0 - lambda) * q[1]];
            let lhs = lagrangian(&mix, lambda * z + (1.0 - lambda) * w, phi, psi, eps);
            let rhs = lambda * lagrangian(&p, z, phi, psi, eps) + (1.0 - lambda) * lagrangian(&q, w, phi, psi, eps);
            prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn gamma_limsup_bound(a in 0.0f64..1.5, eps in 0.001f64..0.5) {
            let g = TorusGrid::new(1, 64).unwrap();
            let obs = constant_pair(g, -2.0, 2.0);
            let u = ScalarField::from_fn(g, |x: &[f64]| a * (2.0 * PI * x[0]).sin()).unwrap();
            let gap = energy(&u, &obs, eps).unwrap() - limit_energy(&u, &obs).unwrap().finite().unwrap();
            prop_assert!(gap >= 0.0 && gap <= eps + 1e-12);
        }
    }
}
