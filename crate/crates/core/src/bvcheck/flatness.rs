use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{gradient_at, integrate_with, TorusGrid, MAX_DIM};
use crate::scalar::Real;
use crate::solver::Trajectory;

use super::Window;

/// Gaps between consecutive runs of an `eps` sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatnessReport {
    pub eps: Vec<f64>,
    /// `gradient_gaps[m][p] = |int int (|grad u_p| - |grad u_{p+1}|) eta_m|`.
    pub gradient_gaps: Vec<Vec<f64>>,
    /// `normal_gaps[p] = int int |nu_p - nu_{p+1}|^2` where both gradients exceed the floor.
    pub normal_gaps: Vec<f64>,
    /// Share of dictionary entries whose gaps never increase along the sequence.
    pub decreasing_fraction: f64,
    pub normals_decreasing: bool,
}

/// Fixed dictionary of smooth test functions: 1 and `cos`, `sin` of a few low
/// wave vectors.
fn dictionary(dim: usize) -> Vec<(usize, [i64; MAX_DIM], bool)> {
    let mut waves: Vec<[i64; MAX_DIM]> = Vec::new();
    for a in 0..dim {
        let mut k = [0; MAX_DIM];
        k[a] = 1;
        waves.push(k);
        k[a] = 2;
        waves.push(k);
    }
    if dim >= 2 {
        waves.push([1, 1, 0]);
        waves.push([1, -1, 0]);
    }
    let mut out = vec![(0, [0; MAX_DIM], true)];
    for (j, k) in waves.into_iter().enumerate() {
        out.push((j + 1, k, true));
        out.push((j + 1, k, false));
    }
    out
}

/// Compares runs of one problem at decreasing `eps` on common snapshot times.
pub fn weak_star_flatness<T: Real>(runs: &[&Trajectory<T>], window: Window, grad_floor: T) -> Result<FlatnessReport> {
    if runs.len() < 2 {
        return Err(Error::Precondition("need at least two runs".into()));
    }
    let grid = *runs[0].grid();
    for r in runs {
        grid.check_same(r.grid())?;
    }
    let eps: Vec<f64> = runs.iter().map(|r| r.eps.to_f64_lossy()).collect();
    if eps.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Precondition("runs must be ordered by decreasing eps".into()));
    }
    let times: Vec<f64> = runs[0]
        .snapshots
        .iter()
        .map(|s| s.t.to_f64_lossy())
        .filter(|&t| t >= window.t0 - 1e-12 && t <= window.t1 + 1e-12)
        .collect();
    if times.len() < 2 {
        return Err(Error::Precondition("window holds fewer than two snapshots".into()));
    }
    for r in &runs[1..] {
        let other: Vec<f64> = r
            .snapshots
            .iter()
            .map(|s| s.t.to_f64_lossy())
            .filter(|&t| t >= window.t0 - 1e-12 && t <= window.t1 + 1e-12)
            .collect();
        if other.len() != times.len() || other.iter().zip(&times).any(|(a, b)| (a - b).abs() > 1e-12 * b.abs().max(1.0))
        {
            return Err(Error::Precondition("runs must share snapshot times (run them in lockstep)".into()));
        }
    }
    let weights: Vec<f64> = (0..times.len())
        .map(|j| {
            let left = if j > 0 { times[j] - times[j - 1] } else { 0.0 };
            let right = if j + 1 < times.len() { times[j + 1] - times[j] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect();

    let d = grid.dim();
    let dict = dictionary(d);
    let eta: Vec<Vec<T>> = dict
        .iter()
        .map(|(_, k, cosine)| {
            (0..grid.len())
                .map(|i| {
                    let x = grid.point::<f64>(i);
                    let phase = 2.0 * PI * (0..d).map(|a| k[a] as f64 * x[a]).sum::<f64>();
                    T::lit(if *cosine { phase.cos() } else { phase.sin() })
                })
                .collect()
        })
        .collect();

    let pairs = runs.len() - 1;
    let mut gradient_gaps = vec![vec![0.0; pairs]; dict.len()];
    let mut normal_gaps = vec![0.0; pairs];
    let first = |r: &Trajectory<T>| {
        r.snapshots.iter().position(|s| s.t.to_f64_lossy() >= window.t0 - 1e-12).expect("window checked")
    };
    for p in 0..pairs {
        let (a, b) = (runs[p], runs[p + 1]);
        let (fa, fb) = (first(a), first(b));
        let mut sums = vec![0.0; dict.len()];
        let mut nsum = 0.0;
        for (j, w) in weights.iter().enumerate() {
            let ua = a.snapshots[fa + j].u.values();
            let ub = b.snapshots[fb + j].u.values();
            let ga: Vec<[T; MAX_DIM]> = (0..grid.len()).map(|i| gradient_at(&grid, ua, i)).collect();
            let gb: Vec<[T; MAX_DIM]> = (0..grid.len()).map(|i| gradient_at(&grid, ub, i)).collect();
            let norm = |g: &[T; MAX_DIM]| g[..d].iter().fold(T::zero(), |s, &c| s + c * c).sqrt();
            let diff: Vec<T> = (0..grid.len()).map(|i| norm(&ga[i]) - norm(&gb[i])).collect();
            for (m, e) in eta.iter().enumerate() {
                sums[m] += w * integrate_with(&grid, |i| diff[i] * e[i]).to_f64_lossy();
            }
            nsum += w * normal_gap(&grid, &ga, &gb, grad_floor).to_f64_lossy();
        }
        for m in 0..dict.len() {
            gradient_gaps[m][p] = sums[m].abs();
        }
        normal_gaps[p] = nsum;
    }
    let nonincreasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    let decreasing = gradient_gaps.iter().filter(|g| nonincreasing(g)).count();
    Ok(FlatnessReport {
        eps,
        decreasing_fraction: decreasing as f64 / dict.len() as f64,
        normals_decreasing: nonincreasing(&normal_gaps),
        gradient_gaps,
        normal_gaps,
    })
}

fn normal_gap<T: Real>(grid: &TorusGrid, ga: &[[T; MAX_DIM]], gb: &[[T; MAX_DIM]], floor: T) -> T {
    let d = grid.dim();
    integrate_with(grid, |i| {
        let na = ga[i][..d].iter().fold(T::zero(), |s, &c| s + c * c).sqrt();
        let nb = gb[i][..d].iter().fold(T::zero(), |s, &c| s + c * c).sqrt();
        if na <= floor || nb <= floor {
            return T::zero();
        }
        (0..d).fold(T::zero(), |s, k| {
            let e = ga[i][k] / na - gb[i][k] / nb;
            s + e * e
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ScalarField;
    use crate::library::{initial_disk, Profile};
    use crate::model::ObstaclePair;
    use crate::solver::{run, run_lockstep, SolverConfig};

    #[test]
    fn identical_runs_have_zero_gaps() {
        let g = TorusGrid::new(2, 32).unwrap();
        let obs = ObstaclePair::from_fields(ScalarField::constant(g, -10.0), ScalarField::constant(g, 10.0)).unwrap();
        let init = Profile::Disk(initial_disk([0.5; 3], 0.3, 1.0)).sample(g).unwrap();
        let mut cfg = SolverConfig::new(init, 0.05, 0.002);
        cfg.output_every = 10;
        let a = run(cfg.clone(), &obs).unwrap();
        let b = run(cfg, &obs).unwrap();
        let rep = weak_star_flatness(&[&a, &b], Window::new(0.0, 0.002), 0.1).unwrap();
        assert!(rep.gradient_gaps.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(rep.normal_gaps, vec![0.0]);
        assert_eq!(rep.decreasing_fraction, 1.0);
    }

    #[test]
    fn constant_runs_have_zero_gaps() {
        let g = TorusGrid::new(2, 16).unwrap();
        let obs = ObstaclePair::from_fields(ScalarField::constant(g, -1.0), ScalarField::constant(g, 1.0)).unwrap();
        let cfgs: Vec<_> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&e| {
                let mut c = SolverConfig::new(ScalarField::constant(g, 0.2), e, 0.001);
                c.output_every = 3;
                (c, &obs)
            })
            .collect();
        let runs = run_lockstep(cfgs).unwrap();
        let refs: Vec<&Trajectory<f64>> = runs.iter().collect();
        let rep = weak_star_flatness(&refs, Window::new(0.0, 0.001), 0.1).unwrap();
        assert!(rep.gradient_gaps.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(rep.eps, vec![0.1, 0.05, 0.025]);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let g = TorusGrid::new(2, 16).unwrap();
        let h = TorusGrid::new(2, 32).unwrap();
        let mk = |grid: TorusGrid, eps: f64| {
            let obs =
                ObstaclePair::from_fields(ScalarField::constant(grid, -1.0), ScalarField::constant(grid, 1.0)).unwrap();
            run(SolverConfig::new(ScalarField::constant(grid, 0.0), eps, 0.001), &obs).unwrap()
        };
        let (a, b) = (mk(g, 0.1), mk(h, 0.05));
        assert!(matches!(weak_star_flatness(&[&a, &b], Window::new(0.0, 0.001), 0.1), Err(Error::GridMismatch { .. })));
        assert!(weak_star_flatness(&[&a], Window::new(0.0, 0.001), 0.1).is_err());
    }
}
