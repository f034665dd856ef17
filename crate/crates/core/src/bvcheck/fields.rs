use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{param, Error, Result};
use crate::grid::{ScalarField, TorusGrid, VectorField, MAX_DIM};
use crate::model::ObstaclePair;
use crate::scalar::{deterministic_max, Real};

/// Contact masks `A+ = {psi - u < tol}` and `A- = {u - phi < tol}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactSets {
    pub plus: Vec<bool>,
    pub minus: Vec<bool>,
    pub tol: f64,
}

impl ContactSets {
    pub fn empty(len: usize) -> Self {
        Self { plus: vec![false; len], minus: vec![false; len], tol: 0.0 }
    }

    pub fn plus_count(&self) -> usize {
        self.plus.iter().filter(|&&b| b).count()
    }

    pub fn minus_count(&self) -> usize {
        self.minus.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.plus_count() == 0 && self.minus_count() == 0
    }
}

/// `min(psi - phi) / 10`.
pub fn default_contact_tol<T: Real>(obs: &ObstaclePair<T>) -> T {
    obs.separation() / T::lit(10.0)
}

pub fn contact_sets<T: Real>(u: &ScalarField<T>, obs: &ObstaclePair<T>, tol: T) -> Result<ContactSets> {
    obs.grid().check_same(u.grid())?;
    if !(tol > T::zero()) {
        return Err(param("contact_tol", format!("must be positive, got {tol}")));
    }
    let (uv, phi, psi) = (u.values(), obs.phi().values(), obs.psi().values());
    let plus: Vec<bool> = (0..uv.len()).map(|i| psi[i] - uv[i] < tol).collect();
    let minus: Vec<bool> = (0..uv.len()).map(|i| uv[i] - phi[i] < tol).collect();
    let count = plus.iter().zip(&minus).filter(|(a, b)| **a && **b).count();
    if count > 0 {
        return Err(Error::ContactOverlap { count });
    }
    Ok(ContactSets { plus, minus, tol: tol.to_f64_lossy() })
}

/// Family a generated test field belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FieldMode {
    /// `X = 0`.
    Zero,
    /// `X = grad psi` near `A+`, `-grad phi` near `A-`, zero elsewhere.
    ObstacleAligned,
    /// Obstacle-aligned near the contact sets, a seeded trigonometric field elsewhere.
    RandomMixed,
}

impl FieldMode {
    pub fn name(self) -> &'static str {
        match self {
            FieldMode::Zero => "zero",
            FieldMode::ObstacleAligned => "obstacle-aligned",
            FieldMode::RandomMixed => "random-mixed",
        }
    }
}

impl fmt::Display for FieldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FieldMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(FieldMode::Zero),
            "obstacle-aligned" => Ok(FieldMode::ObstacleAligned),
            "random-mixed" => Ok(FieldMode::RandomMixed),
            other => Err(param(
                "field_mode",
                format!("unknown mode `{other}`; expected zero, obstacle-aligned or random-mixed"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TestFieldSpec {
    pub mode: FieldMode,
    pub seed: u64,
}

impl TestFieldSpec {
    pub fn new(mode: FieldMode, seed: u64) -> Self {
        Self { mode, seed }
    }

    pub fn id(&self) -> String {
        format!("{}#{}", self.mode, self.seed)
    }
}

/// Outcome of checking `X . grad psi >= 0` on `A+` and `X . grad phi <= 0` on `A-`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldAudit {
    /// `min_{A+} X . grad psi` (`+inf` if `A+` is empty).
    pub min_plus: f64,
    /// `max_{A-} X . grad phi` (`-inf` if `A-` is empty).
    pub max_minus: f64,
    pub pass: bool,
}

const AUDIT_TOL: f64 = 1e-12;

pub fn audit_field<T: Real>(x: &VectorField<T>, obs: &ObstaclePair<T>, masks: &ContactSets) -> FieldAudit {
    let d = obs.grid().dim();
    let dot = |a: [T; MAX_DIM], b: [T; MAX_DIM]| (0..d).fold(T::zero(), |s, k| s + a[k] * b[k]);
    let len = obs.grid().len();
    let min_plus =
        -deterministic_max(
            len,
            |i| {
                if masks.plus[i] {
                    -dot(x.at(i), obs.grad_psi().at(i))
                } else {
                    T::neg_infinity()
                }
            },
        )
        .to_f64_lossy();
    let max_minus =
        deterministic_max(len, |i| if masks.minus[i] { dot(x.at(i), obs.grad_phi().at(i)) } else { T::neg_infinity() })
            .to_f64_lossy();
    FieldAudit { min_plus, max_minus, pass: min_plus >= -AUDIT_TOL && max_minus <= AUDIT_TOL }
}

/// Generated field together with its audit.
#[derive(Clone, Debug)]
pub struct AdmissibleField<T> {
    pub x: VectorField<T>,
    pub audit: FieldAudit,
}

/// A test field prepared for one obstacle pair; [`TestField::assemble`]
/// adapts it to the contact sets of a particular time.
#[derive(Clone, Debug)]
pub struct TestField<T> {
    spec: TestFieldSpec,
    w: Option<VectorField<T>>,
    s_plus: T,
    s_minus: T,
}

/// Largest frequency per axis of the random trigonometric series.
const MODES: i64 = 2;
/// Cells over which the cutoffs fall from 1 to 0 (when the masks are far enough apart).
const CUTOFF_CELLS: f64 = 3.0;

impl<T: Real> TestField<T> {
    pub fn new(spec: TestFieldSpec, obs: &ObstaclePair<T>) -> Self {
        let grid = *obs.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let unit = |g: &VectorField<T>| {
            let m = g.max_norm();
            if m > T::zero() {
                T::one() / m
            } else {
                T::zero()
            }
        };
        let (plus, minus) = (unit(obs.grad_psi()), unit(obs.grad_phi()));
        match spec.mode {
            FieldMode::Zero => Self { spec, w: None, s_plus: T::zero(), s_minus: T::zero() },
            FieldMode::ObstacleAligned => Self { spec, w: None, s_plus: plus, s_minus: minus },
            FieldMode::RandomMixed => {
                let cp = T::lit(rng.gen_range(0.5..1.5));
                let cm = T::lit(rng.gen_range(0.5..1.5));
                let w = trigonometric_field(grid, &mut rng);
                Self { spec, w: Some(w), s_plus: cp * plus, s_minus: cm * minus }
            }
        }
    }

    pub fn spec(&self) -> TestFieldSpec {
        self.spec
    }

    /// `X = chi+ s+ grad psi - chi- s- grad phi + (1 - chi+ - chi-) W`.
    pub fn assemble(&self, obs: &ObstaclePair<T>, masks: &ContactSets) -> Result<AdmissibleField<T>> {
        let grid = *obs.grid();
        if masks.plus.len() != grid.len() || masks.minus.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.describe(),
                found: format!("{} mask cells", masks.plus.len()),
            });
        }
        if self.spec.mode == FieldMode::Zero {
            let x = VectorField::zeros(grid);
            let audit = audit_field(&x, obs, masks);
            return Ok(AdmissibleField { x, audit });
        }
        let (chi_p, chi_m) = cutoffs::<T>(&grid, masks);
        let (gp, gm) = (obs.grad_psi(), obs.grad_phi());
        let x = VectorField::from_index_fn(grid, |i| {
            let (a, b) = (gp.at(i), gm.at(i));
            let rest = T::one() - chi_p[i] - chi_m[i];
            let w = self.w.as_ref().map(|w| w.at(i)).unwrap_or([T::zero(); MAX_DIM]);
            let mut out = [T::zero(); MAX_DIM];
            for k in 0..grid.dim() {
                out[k] = chi_p[i] * self.s_plus * a[k] - chi_m[i] * self.s_minus * b[k] + rest * w[k];
            }
            out
        });
        let audit = audit_field(&x, obs, masks);
        Ok(AdmissibleField { x, audit })
    }
}

/// Admissible test field for the contact sets `masks`.
pub fn admissible_field<T: Real>(
    obs: &ObstaclePair<T>,
    masks: &ContactSets,
    mode: FieldMode,
    seed: u64,
) -> Result<AdmissibleField<T>> {
    let field = TestField::new(TestFieldSpec::new(mode, seed), obs).assemble(obs, masks)?;
    if !field.audit.pass {
        return Err(Error::Inadmissible(format!("{:?}", field.audit)));
    }
    Ok(field)
}

/// `sum_k (a_k cos(2 pi k.x) + b_k sin(2 pi k.x)) / (1 + |k|^2)` per component,
/// `|k_i| <= MODES`, normalized to `max|W| = 1`.
fn trigonometric_field<T: Real>(grid: TorusGrid, rng: &mut ChaCha8Rng) -> VectorField<T> {
    let d = grid.dim();
    let mut waves: Vec<[i64; MAX_DIM]> = Vec::new();
    let span = 2 * MODES + 1;
    for code in 0..span.pow(d as u32) {
        let mut k = [0i64; MAX_DIM];
        let mut c = code;
        for slot in k.iter_mut().take(d) {
            *slot = c % span - MODES;
            c /= span;
        }
        waves.push(k);
    }
    let coeffs: Vec<[[f64; 2]; MAX_DIM]> = waves
        .iter()
        .map(|k| {
            let damp = 1.0 / (1.0 + k.iter().map(|v| (v * v) as f64).sum::<f64>());
            let mut c = [[0.0; 2]; MAX_DIM];
            for comp in c.iter_mut().take(d) {
                *comp = [rng.gen_range(-1.0..1.0) * damp, rng.gen_range(-1.0..1.0) * damp];
            }
            c
        })
        .collect();
    let raw = VectorField::from_index_fn(grid, |i| {
        let x = grid.point::<f64>(i);
        let mut out = [T::zero(); MAX_DIM];
        let mut acc = [0.0f64; MAX_DIM];
        for (k, c) in waves.iter().zip(&coeffs) {
            let phase = 2.0 * std::f64::consts::PI * (0..d).map(|a| k[a] as f64 * x[a]).sum::<f64>();
            let (s, co) = phase.sin_cos();
            for a in 0..d {
                acc[a] += c[a][0] * co + c[a][1] * s;
            }
        }
        for a in 0..d {
            out[a] = T::lit(acc[a]);
        }
        out
    });
    let m = raw.max_norm();
    if m > T::zero() {
        let comps = raw.components().iter().map(|c| c.map(|v| v / m).expect("finite")).collect();
        VectorField::new(comps).expect("same grid")
    } else {
        raw
    }
}

/// Smooth cutoffs equal to 1 on each mask and 0 beyond `m` cells from it,
/// with `m <= 3` shrunk so the two supports stay disjoint.
fn cutoffs<T: Real>(grid: &TorusGrid, masks: &ContactSets) -> (Vec<T>, Vec<T>) {
    let reach = 2.0 * CUTOFF_CELLS;
    let offsets = ball_offsets(grid.dim(), reach);
    let dist_p = paint_distance(grid, &masks.plus, &offsets);
    let dist_m = paint_distance(grid, &masks.minus, &offsets);
    let gap = (0..grid.len()).filter(|&i| masks.minus[i]).map(|i| dist_p[i]).fold(f64::INFINITY, f64::min);
    let m = (gap / 2.0).min(CUTOFF_CELLS);
    let chi = |dist: &[f64]| -> Vec<T> {
        dist.iter()
            .map(|&r| {
                if r == 0.0 {
                    T::one()
                } else if r >= m {
                    T::zero()
                } else {
                    T::lit(smoothstep(1.0 - r / m))
                }
            })
            .collect()
    };
    (chi(&dist_p), chi(&dist_m))
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

fn ball_offsets(dim: usize, reach: f64) -> Vec<([i64; MAX_DIM], f64)> {
    let r = reach.floor() as i64;
    let mut out = Vec::new();
    let span = 2 * r + 1;
    for code in 0..span.pow(dim as u32) {
        let mut o = [0i64; MAX_DIM];
        let mut c = code;
        for slot in o.iter_mut().take(dim) {
            *slot = c % span - r;
            c /= span;
        }
        let dist = (o.iter().map(|v| (v * v) as f64).sum::<f64>()).sqrt();
        if dist <= reach {
            out.push((o, dist));
        }
    }
    out
}

/// Distance in cells to the nearest mask point, `+inf` beyond the offset ball.
fn paint_distance(grid: &TorusGrid, mask: &[bool], offsets: &[([i64; MAX_DIM], f64)]) -> Vec<f64> {
    let n = grid.n() as i64;
    let d = grid.dim();
    let mut dist = vec![f64::INFINITY; grid.len()];
    for (i, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
        let base = grid.multi_index(i);
        for (o, r) in offsets {
            let mut coords = [0usize; MAX_DIM];
            for a in 0..d {
                coords[a] = (base[a] as i64 + o[a]).rem_euclid(n) as usize;
            }
            let j = grid.index_of(&coords[..d]);
            if *r < dist[j] {
                dist[j] = *r;
            }
        }
    }
    dist
}
