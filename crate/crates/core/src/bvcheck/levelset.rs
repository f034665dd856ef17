use crate::error::{param, Result};
use crate::grid::{gradient_at, hessian, integrate_with, regularized_norm, ScalarField};
use crate::scalar::{deterministic_max, Real};

/// Quartic bump `(15/16)(1 - s^2)^2` on `[-1, 1]`: C^1, unit mass.
pub fn mollifier(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        15.0 / 16.0 * q * q
    }
}

/// `delta_a(s) = mollifier(s / a) / a`.
#[inline]
pub(crate) fn delta<T: Real>(s: T, a: T) -> T {
    let r = s / a;
    if r.abs() >= T::one() {
        T::zero()
    } else {
        let q = T::one() - r * r;
        T::lit(15.0 / 16.0) * q * q / a
    }
}

/// Level `gamma`, delta width `band` (in units of `u`) and the gradient
/// floor below which a cell counts as flat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelSetProbe<T> {
    gamma: T,
    band: T,
    grad_floor: T,
}

impl<T: Real> LevelSetProbe<T> {
    pub fn new(gamma: T, band: T, grad_floor: T) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(param("gamma", "must be finite"));
        }
        if !(band > T::zero() && band.is_finite()) {
            return Err(param("band", format!("must be positive, got {band}")));
        }
        if !(grad_floor > T::zero() && grad_floor.is_finite()) {
            return Err(param("grad_floor", format!("must be positive, got {grad_floor}")));
        }
        Ok(Self { gamma, band, grad_floor })
    }

    /// Probe with the default band and floor for `u` computed at regularization `eps`.
    pub fn for_field(u: &ScalarField<T>, gamma: T, eps: T) -> Result<Self> {
        Self::new(gamma, default_band(u), default_grad_floor(u, eps))
    }

    pub fn at_level(self, gamma: T) -> Self {
        Self { gamma, ..self }
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn band(&self) -> T {
        self.band
    }

    pub fn grad_floor(&self) -> T {
        self.grad_floor
    }
}

/// `4 h * max(1, max|grad u|)`: four cells across the band at the steepest slope.
pub fn default_band<T: Real>(u: &ScalarField<T>) -> T {
    let grid = *u.grid();
    let d = grid.dim();
    let v = u.values();
    let g = deterministic_max(grid.len(), |i| regularized_norm(&gradient_at(&grid, v, i)[..d], T::zero()));
    T::lit(4.0) * grid.h::<T>() * g.max(T::one())
}

/// `max(10 eps, h * max|D^2 u|)`.
pub fn default_grad_floor<T: Real>(u: &ScalarField<T>, eps: T) -> T {
    let h = u.grid().h::<T>();
    (T::lit(10.0) * eps).max(h * hessian(u).max_frobenius())
}

/// Surface integral estimate and whether the band met flat cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coarea<T> {
    pub value: T,
    pub degenerate: bool,
}

/// `int_{u = gamma} g dH^{d-1}` as `int g delta_a(u - gamma) |grad u| dx`.
pub fn coarea_surface_integral<T: Real>(
    u: &ScalarField<T>,
    g: &ScalarField<T>,
    probe: &LevelSetProbe<T>,
) -> Result<Coarea<T>> {
    u.grid().check_same(g.grid())?;
    let grid = *u.grid();
    let d = grid.dim();
    let (uv, gv) = (u.values(), g.values());
    let (gamma, a, floor) = (probe.gamma, probe.band, probe.grad_floor);
    let value = integrate_with(&grid, |i| {
        let w = delta(uv[i] - gamma, a);
        if w == T::zero() {
            return T::zero();
        }
        gv[i] * w * regularized_norm(&gradient_at(&grid, uv, i)[..d], T::zero())
    });
    let flat = deterministic_max(grid.len(), |i| {
        if (uv[i] - gamma).abs() < a && regularized_norm(&gradient_at(&grid, uv, i)[..d], T::zero()) < floor {
            T::one()
        } else {
            T::zero()
        }
    });
    Ok(Coarea { value, degenerate: flat > T::zero() })
}

/// `H^{d-1}({u = gamma})`.
pub fn perimeter<T: Real>(u: &ScalarField<T>, probe: &LevelSetProbe<T>) -> Result<Coarea<T>> {
    coarea_surface_integral(u, &ScalarField::constant(*u.grid(), T::one()), probe)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoareaConsistency {
    pub levels: usize,
    /// `sum_k perimeter(gamma_k) * d_gamma`
    pub level_sum: f64,
    /// `int |grad u|`
    pub total_variation: f64,
    pub relative_error: f64,
}

/// Compares `sum_k perimeter(gamma_k) d_gamma` over a level grid of spacing
/// `band / 4` covering the range of `u` with `int |grad u|`.
pub fn coarea_consistency<T: Real>(u: &ScalarField<T>, band: T) -> Result<CoareaConsistency> {
    if !(band > T::zero()) {
        return Err(param("band", "must be positive"));
    }
    let grid = *u.grid();
    let d = grid.dim();
    let step = band / T::lit(4.0);
    let lo = u.min() - band;
    let hi = u.max() + band;
    let levels = ((hi - lo) / step).ceil().to_usize().unwrap_or(0) + 1;
    let mut acc = crate::scalar::CompensatedSum::new();
    for k in 0..levels {
        let probe = LevelSetProbe::new(lo + step * T::from_count(k), band, T::epsilon())?;
        acc.add(perimeter(u, &probe)?.value * step);
    }
    let v = u.values();
    let tv = integrate_with(&grid, |i| regularized_norm(&gradient_at(&grid, v, i)[..d], T::zero())).to_f64_lossy();
    let level_sum = acc.value().to_f64_lossy();
    Ok(CoareaConsistency {
        levels,
        level_sum,
        total_variation: tv,
        relative_error: if tv > 0.0 { (level_sum - tv).abs() / tv } else { level_sum.abs() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use crate::library::Profile;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn cone(g: TorusGrid, r: f64) -> ScalarField<f64> {
        ScalarField::from_fn(g, |x: &[f64]| {
            let s: f64 = x.iter().map(|c| (c - 0.5).powi(2)).sum::<f64>().sqrt();
            r - s
        })
        .unwrap()
    }

    #[test]
    fn mollifier_has_unit_mass() {
        let m = 100_000;
        let mass: f64 =
            (0..m).map(|i| mollifier(-1.0 + (i as f64 + 0.5) * 2.0 / m as f64)).sum::<f64>() * 2.0 / m as f64;
        assert!((mass - 1.0).abs() < 1e-9);
        assert_eq!(mollifier(1.0), 0.0);
        assert_eq!(delta(0.0_f64, 0.5), 15.0 / 8.0);
    }

    #[test]
    fn probe_validation() {
        assert!(LevelSetProbe::new(0.0, 0.0, 1.0).is_err());
        assert!(LevelSetProbe::new(0.0, 0.1, 0.0).is_err());
        assert!(LevelSetProbe::new(f64::NAN, 0.1, 0.1).is_err());
    }

    #[test]
    fn circle_length_from_cone() {
        let n = 128;
        let g = TorusGrid::new(2, n).unwrap();
        let u = cone(g, 0.25);
        let probe = LevelSetProbe::new(0.0, 4.0 / n as f64, 0.1).unwrap();
        let p = perimeter(&u, &probe).unwrap();
        let exact = 2.0 * PI * 0.25;
        assert!((p.value - exact).abs() < 0.02 * exact, "{} vs {exact}", p.value);
        assert!(!p.degenerate);
    }

    #[test]
    fn empty_level_has_zero_perimeter() {
        let g = TorusGrid::new(2, 64).unwrap();
        let u = cone(g, 0.25);
        let probe = LevelSetProbe::new(1.0, 4.0 / 64.0, 0.1).unwrap();
        assert_eq!(perimeter(&u, &probe).unwrap().value, 0.0);
    }

    #[test]
    fn sphere_area_in_three_dimensions() {
        let n = 96;
        let g = TorusGrid::new(3, n).unwrap();
        let r = 0.3;
        let u = cone(g, r);
        let probe = LevelSetProbe::new(0.0, 4.0 / n as f64, 0.1).unwrap();
        let p = perimeter(&u, &probe).unwrap().value;
        let exact = 4.0 * PI * r * r;
        assert!((p - exact).abs() < 0.04 * exact, "{p} vs {exact}");
    }

    #[test]
    fn flat_band_is_flagged() {
        let g = TorusGrid::new(2, 32).unwrap();
        let u = ScalarField::constant(g, 0.0);
        let probe = LevelSetProbe::new(0.0, 0.1, 0.1).unwrap();
        let c = perimeter(&u, &probe).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn weighted_integral_and_relabeling() {
        let n = 128;
        let g = TorusGrid::new(2, n).unwrap();
        let u = cone(g, 0.25);
        let weight = ScalarField::from_fn(g, |x: &[f64]| 1.0 + (2.0 * PI * x[0]).cos()).unwrap();
        let probe = LevelSetProbe::new(0.0, 4.0 / n as f64, 0.1).unwrap();
        let base = coarea_surface_integral(&u, &weight, &probe).unwrap().value;
        // On the circle of radius 1/4 about (1/2, 1/2): mean of 1 + cos(2 pi x) is 1 + J0(pi/2) * cos(pi).
        let j0 = 0.472_001_215_768_235_5;
        let exact = 2.0 * PI * 0.25 * (1.0 - j0);
        assert!((base - exact).abs() < 0.02 * exact, "{base} vs {exact}");
        type Map = fn(f64) -> f64;
        let maps: [(Map, Map); 2] = [(|s| 2.0 * s + 1.0, |_| 2.0), (|s| s * s * s + s, |s| 3.0 * s * s + 1.0)];
        for (f, df) in maps {
            let fu = u.map(f).unwrap();
            let scaled = LevelSetProbe::new(f(0.0), df(0.0) * 4.0 / n as f64, 0.1).unwrap();
            let got = coarea_surface_integral(&fu, &weight, &scaled).unwrap().value;
            assert!((got - base).abs() < 0.01 * base, "{got} vs {base}");
        }
    }

    #[test]
    fn coarea_formula_holds_on_smooth_fields() {
        let g = TorusGrid::new(2, 128).unwrap();
        let u: ScalarField<f64> = Profile::Sine { amplitude: 0.5, axis: 0 }
            .sample::<f64>(g)
            .unwrap()
            .zip_map(&ScalarField::from_fn(g, |x: &[f64]| 0.3 * (2.0 * PI * x[1]).cos()).unwrap(), |a, b| a + b)
            .unwrap();
        let c = coarea_consistency(&u, default_band(&u)).unwrap();
        assert!(c.relative_error < 0.02, "{c:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn perimeter_is_invariant_under_relabeling(a in 0.5f64..3.0, b in -1.0f64..1.0, r in 0.15f64..0.35) {
            let n = 64;
            let g = TorusGrid::new(2, n).unwrap();
            let u = cone(g, r);
            let probe = LevelSetProbe::new(0.0, 4.0 / n as f64, 0.1).unwrap();
            let p = perimeter(&u, &probe).unwrap().value;
            let fu = u.map(|s| a * s + b).unwrap();
            let q = perimeter(&fu, &LevelSetProbe::new(b, a * 4.0 / n as f64, 0.1).unwrap()).unwrap().value;
            prop_assert!((p - q).abs() <= 1e-10 * p);
        }
    }
}
