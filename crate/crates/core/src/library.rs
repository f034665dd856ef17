//! Analytic profiles used for obstacles and initial data.
//!
//! Every profile evaluates its value and exact gradient in `f64`; fields in
//! any [`Real`] type are sampled from those. Radial profiles use the
//! minimum-image distance on the torus and are flat (a plateau) before the
//! distance reaches 1/2, so the sampled functions are smooth across the
//! periodic boundary.

use std::f64::consts::PI;

use crate::error::{param, Result};
use crate::grid::{torus_displacement, ScalarField, TorusGrid, VectorField, MAX_DIM};
use crate::scalar::Real;

/// Radially symmetric disk profile.
///
/// With `v(r) = sqrt(radius^2 + s^2) - sqrt(r^2 + s^2)` (a cone of slope 1
/// with its apex rounded at scale `s`), the profile is
/// `sign * scale * clamp(v)`, where `clamp` is the identity up to
/// `r = outer_start` and then bends monotonically onto `plateau` at
/// `r = outer_end` with a C^2 quintic Hermite join.
///
/// `sign = +1` gives a lower obstacle / initial datum, positive inside the
/// disk; `sign = -1` gives an upper obstacle, negative inside the disk.
/// The zero level set is the circle (sphere) of radius `radius`.
#[derive(Clone, Debug, PartialEq)]
pub struct Disk {
    pub center: [f64; MAX_DIM],
    pub radius: f64,
    pub scale: f64,
    pub smoothing: f64,
    pub outer_start: f64,
    pub outer_end: f64,
    pub plateau: f64,
    pub sign: f64,
}

impl Disk {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.scale > 0.0 && self.smoothing > 0.0) {
            return Err(param("disk", "radius, scale and smoothing must be positive"));
        }
        if !(self.radius < self.outer_start && self.outer_start < self.outer_end && self.outer_end < 0.5) {
            return Err(param("disk", "need radius < outer_start < outer_end < 1/2"));
        }
        let (va, vb) = (self.cone(self.outer_start), self.cone(self.outer_end));
        // Quintic join is monotone when the drop to the plateau is at least 0.4 of the bend.
        if va - self.plateau < 0.4 * (va - vb) {
            return Err(param("disk", format!("plateau {} too high for a monotone join", self.plateau)));
        }
        if self.sign.abs() != 1.0 {
            return Err(param("disk", "sign must be +1 or -1"));
        }
        Ok(())
    }

    #[inline]
    fn cone(&self, r: f64) -> f64 {
        let s2 = self.smoothing * self.smoothing;
        (self.radius * self.radius + s2).sqrt() - (r * r + s2).sqrt()
    }

    /// `clamp(v)` and `clamp'(v)`.
    fn clamp(&self, v: f64) -> (f64, f64) {
        let va = self.cone(self.outer_start);
        let vb = self.cone(self.outer_end);
        if v >= va {
            return (v, 1.0);
        }
        if v <= vb {
            return (self.plateau, 0.0);
        }
        let w = va - vb;
        let t = (v - vb) / w;
        let (t2, t3, t4, t5) = (t * t, t * t * t, t.powi(4), t.powi(5));
        let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
        let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
        let h5 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
        let d0 = -30.0 * t2 + 60.0 * t3 - 30.0 * t4;
        let d4 = -12.0 * t2 + 28.0 * t3 - 15.0 * t4;
        let d5 = 30.0 * t2 - 60.0 * t3 + 30.0 * t4;
        let m1 = w; // d clamp / dt at t = 1
        let value = self.plateau * h0 + m1 * h4 + va * h5;
        let slope = (self.plateau * d0 + m1 * d4 + va * d5) / w;
        (value, slope)
    }

    fn eval(&self, x: &[f64], dim: usize) -> (f64, [f64; MAX_DIM]) {
        let d = torus_displacement(x, &self.center, dim);
        let r2: f64 = d[..dim].iter().map(|c| c * c).sum();
        let root = (r2 + self.smoothing * self.smoothing).sqrt();
        let v = (self.radius * self.radius + self.smoothing * self.smoothing).sqrt() - root;
        let (c, dc) = self.clamp(v);
        let k = self.sign * self.scale;
        let mut g = [0.0; MAX_DIM];
        for a in 0..dim {
            g[a] = -k * dc * d[a] / root;
        }
        (k * c, g)
    }
}

/// Catalog of analytic profiles.
#[derive(Clone, Debug, PartialEq)]
pub enum Profile {
    Constant(f64),
    Disk(Disk),
    /// Several disks sharing one plateau: `plateau + sum_i (disk_i - plateau)`.
    /// Exact superposition as long as the disks' outer radii do not overlap.
    MultiDisk(Vec<Disk>),
    /// Radial bump `psi(|x - c|)` with `psi(s) = (128 L / 3)(s^2 - 1/64)` for
    /// `s < 1/4`, rising with a cubic Hermite join to the constant `3L` at `s = 3/8`.
    RemarkBump {
        center: [f64; MAX_DIM],
        bound: f64,
    },
    /// `scale * (-cos(2 pi x_last) / (2 pi) + amplitude * cos(2 pi x_0))`: a band
    /// around `x_last = 1/2` whose two boundaries are waves in `x_0`.
    WavyBand {
        scale: f64,
        amplitude: f64,
    },
    /// `amplitude * sin(2 pi x_axis)`.
    Sine {
        amplitude: f64,
        axis: usize,
    },
    /// `scale * (sqrt(radius^2 + s^2) - sqrt(S(x) + s^2))` with the periodic
    /// squared distance `S(x) = sum_a sigma(x_a - c_a)`, `sigma(d) = d^2 + O(d^8)`.
    /// Its only critical points are the nondegenerate extrema and saddles of
    /// `S` at `c + {0, 1/2}^d`; the zero level set is close to the
    /// sphere of `radius <= 0.3` (within 3%).
    PeriodicCone {
        center: [f64; MAX_DIM],
        radius: f64,
        scale: f64,
        smoothing: f64,
    },
}

/// `sigma(d) = c (1 + c/6 + 2c^2/45) / (2 pi^2)` with `c = 1 - cos(2 pi d)`, and `sigma'(d)`.
fn periodic_square(d: f64) -> (f64, f64) {
    let t = 2.0 * PI * d;
    let c = 1.0 - t.cos();
    let v = c * (1.0 + c / 6.0 + 2.0 * c * c / 45.0) / (2.0 * PI * PI);
    let dv = t.sin() * (1.0 + c / 3.0 + 2.0 * c * c / 15.0) / PI;
    (v, dv)
}

impl Profile {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Profile::Disk(d) => d.validate(),
            Profile::MultiDisk(ds) => {
                if ds.is_empty() {
                    return Err(param("multi-disk", "needs at least one disk"));
                }
                for d in ds {
                    d.validate()?;
                    if (d.plateau * d.scale * d.sign - ds[0].plateau * ds[0].scale * ds[0].sign).abs() > 0.0 {
                        return Err(param("multi-disk", "disks must share one plateau value"));
                    }
                }
                Ok(())
            }
            Profile::RemarkBump { bound, .. } if *bound <= 0.0 => Err(param("remark-bump", "bound L must be positive")),
            Profile::WavyBand { .. } if dim < 2 => Err(param("wavy-band", "needs dimension >= 2")),
            Profile::Sine { axis, .. } if *axis >= dim => Err(param("sine", "axis out of range")),
            Profile::PeriodicCone { radius, scale, smoothing, .. }
                if !(*radius > 0.0 && *scale > 0.0 && *smoothing > 0.0) =>
            {
                Err(param("periodic-cone", "radius, scale and smoothing must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Value and gradient at `x` (first `dim` coordinates used).
    pub fn eval(&self, x: &[f64], dim: usize) -> (f64, [f64; MAX_DIM]) {
        match self {
            Profile::Constant(c) => (*c, [0.0; MAX_DIM]),
            Profile::Disk(d) => d.eval(x, dim),
            Profile::MultiDisk(ds) => {
                let base = ds[0].sign * ds[0].scale * ds[0].plateau;
                let mut value = base;
                let mut grad = [0.0; MAX_DIM];
                for d in ds {
                    let (v, g) = d.eval(x, dim);
                    value += v - base;
                    for a in 0..dim {
                        grad[a] += g[a];
                    }
                }
                (value, grad)
            }
            Profile::RemarkBump { center, bound } => {
                let d = torus_displacement(x, center, dim);
                let s = d[..dim].iter().map(|c| c * c).sum::<f64>().sqrt();
                let (v, dv) = remark_radial(s, *bound);
                let mut g = [0.0; MAX_DIM];
                if s > 0.0 {
                    for a in 0..dim {
                        g[a] = dv * d[a] / s;
                    }
                }
                (v, g)
            }
            Profile::WavyBand { scale, amplitude } => {
                let y = x[dim - 1];
                let tx = 2.0 * PI * x[0];
                let ty = 2.0 * PI * y;
                let value = scale * (-ty.cos() / (2.0 * PI) + amplitude * tx.cos());
                let mut g = [0.0; MAX_DIM];
                g[0] = -scale * amplitude * 2.0 * PI * tx.sin();
                g[dim - 1] += scale * ty.sin();
                (value, g)
            }
            Profile::Sine { amplitude, axis } => {
                let t = 2.0 * PI * x[*axis];
                let mut g = [0.0; MAX_DIM];
                g[*axis] = amplitude * 2.0 * PI * t.cos();
                (amplitude * t.sin(), g)
            }
            Profile::PeriodicCone { center, radius, scale, smoothing } => {
                let s2 = smoothing * smoothing;
                let mut sq = 0.0;
                let mut ds = [0.0; MAX_DIM];
                for a in 0..dim {
                    let (v, dv) = periodic_square(x[a] - center[a]);
                    sq += v;
                    ds[a] = dv;
                }
                let root = (sq + s2).sqrt();
                let mut g = [0.0; MAX_DIM];
                for a in 0..dim {
                    g[a] = -scale * ds[a] / (2.0 * root);
                }
                (scale * ((radius * radius + s2).sqrt() - root), g)
            }
        }
    }

    pub fn sample<T: Real>(&self, grid: TorusGrid) -> Result<ScalarField<T>> {
        self.validate(grid.dim())?;
        let d = grid.dim();
        ScalarField::from_fn(grid, |x: &[T]| {
            let xf: Vec<f64> = x.iter().map(|c| c.to_f64_lossy()).collect();
            T::lit(self.eval(&xf, d).0)
        })
    }

    pub fn sample_gradient<T: Real>(&self, grid: TorusGrid) -> Result<VectorField<T>> {
        self.validate(grid.dim())?;
        let d = grid.dim();
        VectorField::from_fn(grid, |x: &[T]| {
            let xf: Vec<f64> = x.iter().map(|c| c.to_f64_lossy()).collect();
            let g = self.eval(&xf, d).1;
            [T::lit(g[0]), T::lit(g[1]), T::lit(g[2])]
        })
    }

    /// Grid points nearest to the profile's isolated critical points that lie
    /// off its plateau (the apex of each disk, the bump centre).
    pub fn declared_critical_points(&self, grid: &TorusGrid) -> Vec<usize> {
        let nearest = |c: &[f64; MAX_DIM]| {
            let n = grid.n() as f64;
            let coords: Vec<usize> =
                (0..grid.dim()).map(|a| ((c[a].rem_euclid(1.0) * n).round() as usize) % grid.n()).collect();
            grid.index_of(&coords)
        };
        match self {
            Profile::Disk(d) => vec![nearest(&d.center)],
            Profile::MultiDisk(ds) => ds.iter().map(|d| nearest(&d.center)).collect(),
            Profile::RemarkBump { center, .. } | Profile::PeriodicCone { center, .. } => vec![nearest(center)],
            _ => Vec::new(),
        }
    }
}

/// Radial profile of [`Profile::RemarkBump`] and its derivative.
fn remark_radial(s: f64, bound: f64) -> (f64, f64) {
    let l = bound;
    if s < 0.25 {
        let k = 128.0 * l / 3.0;
        (k * (s * s - 1.0 / 64.0), 2.0 * k * s)
    } else if s < 0.375 {
        // Cubic Hermite from (1/4, 2L, slope 64L/3) to (3/8, 3L, slope 0).
        let w = 0.125;
        let t = (s - 0.25) / w;
        let (p0, p1, m0, m1) = (2.0 * l, 3.0 * l, 64.0 * l / 3.0 * w, 0.0);
        let h00 = 2.0 * t.powi(3) - 3.0 * t * t + 1.0;
        let h10 = t.powi(3) - 2.0 * t * t + t;
        let h01 = -2.0 * t.powi(3) + 3.0 * t * t;
        let h11 = t.powi(3) - t * t;
        let d00 = 6.0 * t * t - 6.0 * t;
        let d10 = 3.0 * t * t - 4.0 * t + 1.0;
        let d01 = -6.0 * t * t + 6.0 * t;
        let d11 = 3.0 * t * t - 2.0 * t;
        (p0 * h00 + m0 * h10 + p1 * h01 + m1 * h11, (p0 * d00 + m0 * d10 + p1 * d01 + m1 * d11) / w)
    } else {
        (3.0 * l, 0.0)
    }
}

/// Disk profile with the library's default rounding and plateau for a
/// lower obstacle (`sign = +1`) or upper obstacle (`sign = -1`).
///
/// The plateau sits at `-1` (times `scale`), well below the bound used by
/// the well-preparedness audit, so the plateau is never a critical set.
pub fn obstacle_disk(center: [f64; MAX_DIM], radius: f64, scale: f64, sign: f64) -> Disk {
    let outer_start = radius + 0.05;
    Disk {
        center,
        radius,
        scale,
        smoothing: 0.05_f64.max(radius * 0.6),
        outer_start,
        outer_end: (outer_start + 0.25).min(0.45),
        plateau: -1.0,
        sign,
    }
}

/// Cone-like initial datum whose zero level set is the sphere of `radius`,
/// saturating halfway through its outer bend.
pub fn initial_disk(center: [f64; MAX_DIM], radius: f64, scale: f64) -> Disk {
    let mut d =
        Disk { center, radius, scale, smoothing: 0.1, outer_start: 0.38, outer_end: 0.48, plateau: 0.0, sign: 1.0 };
    d.plateau = 0.5 * (d.cone(d.outer_start) + d.cone(d.outer_end));
    d
}
