//! Fixed catalog of named test problems.

use std::fmt;

use crate::error::{param, Error, Result};
use crate::grid::{ScalarField, TorusGrid, MAX_DIM};
use crate::library::{initial_disk, obstacle_disk, Profile};
use crate::model::ObstaclePair;
use crate::scalar::Real;
use crate::solver::SolverConfig;

/// Names accepted by [`ScenarioSpec::named`].
pub const CATALOG: [&str; 4] = ["stationary", "sphere", "clamping", "sandwich"];

/// Initial radius of the shrinking sphere and the clamping datum.
pub const SPHERE_RADIUS: f64 = 0.3;
/// Radius of the inner obstacle of the clamping scenario.
pub const CLAMP_RADIUS: f64 = 0.15;
/// Default level scale of the clamping scenario.
pub const CLAMP_SCALE: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    /// `g = 0`, `phi = -1`, `psi = 1`.
    Stationary,
    /// Shrinking sphere of radius 0.3, obstacles far away.
    Sphere,
    /// Shrinking sphere around an inner obstacle disk of radius 0.15.
    Clamping,
    /// Wavy band squeezed between a lower and an upper obstacle disk.
    Sandwich,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Stationary => "stationary",
            ScenarioKind::Sphere => "sphere",
            ScenarioKind::Clamping => "clamping",
            ScenarioKind::Sandwich => "sandwich",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "stationary" => Ok(ScenarioKind::Stationary),
            "sphere" => Ok(ScenarioKind::Sphere),
            "clamping" => Ok(ScenarioKind::Clamping),
            "sandwich" => Ok(ScenarioKind::Sandwich),
            other => Err(Error::Precondition(format!("unknown scenario `{other}`; available: {}", CATALOG.join(", ")))),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A catalog problem on a concrete grid, with its list of `eps` values.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub dim: usize,
    pub n: usize,
    /// Strictly decreasing.
    pub eps_list: Vec<f64>,
    pub t_end: f64,
    /// Multiplies the initial datum and the obstacles.
    pub scale: f64,
    pub cfl_safety: f64,
    pub output_every: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Catalog entry with its default horizon on a `dim`-dimensional grid of `n` points per axis.
    pub fn named(name: &str, dim: usize, n: usize) -> Result<Self> {
        let kind = ScenarioKind::parse(name)?;
        Ok(Self::new(kind, dim, n))
    }

    pub fn new(kind: ScenarioKind, dim: usize, n: usize) -> Self {
        let extinction = SPHERE_RADIUS * SPHERE_RADIUS / (2.0 * (dim.max(2) - 1) as f64);
        let (t_end, scale) = match kind {
            ScenarioKind::Stationary => (0.01, 1.0),
            ScenarioKind::Sphere => (0.8 * extinction, 1.0),
            ScenarioKind::Clamping => (0.06, CLAMP_SCALE),
            ScenarioKind::Sandwich => (0.03, 1.0),
        };
        Self { kind, dim, n, eps_list: vec![0.05], t_end, scale, cfl_safety: 0.9, output_every: 20, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        TorusGrid::new(self.dim, self.n)?;
        if self.eps_list.is_empty() {
            return Err(param("eps_list", "must not be empty"));
        }
        if self.eps_list.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(param("eps_list", "entries must be positive"));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(param("eps_list", "must be strictly decreasing"));
        }
        if !(self.t_end > 0.0) {
            return Err(param("t_end", "must be positive"));
        }
        if !(self.scale > 0.0) {
            return Err(param("scale", "must be positive"));
        }
        if self.kind == ScenarioKind::Sandwich && self.dim < 2 {
            return Err(param("dim", "the sandwich scenario needs dimension >= 2"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.dim, self.n)
    }

    /// Midpoint of the central cell, so no grid node sits on the center of
    /// the radial profiles.
    pub fn center(&self) -> [f64; MAX_DIM] {
        [0.5 + 0.5 / self.n.max(1) as f64; MAX_DIM]
    }

    pub fn initial_profile(&self) -> Profile {
        let k = self.scale;
        match self.kind {
            ScenarioKind::Stationary => Profile::Constant(0.0),
            ScenarioKind::Sphere => Profile::Disk(initial_disk(self.center(), SPHERE_RADIUS, k)),
            ScenarioKind::Clamping => {
                Profile::PeriodicCone { center: self.center(), radius: SPHERE_RADIUS, scale: k, smoothing: 0.1 }
            }
            ScenarioKind::Sandwich => Profile::WavyBand { scale: k, amplitude: 0.1 },
        }
    }

    pub fn lower_profile(&self) -> Profile {
        let k = self.scale;
        match self.kind {
            ScenarioKind::Stationary => Profile::Constant(-k),
            ScenarioKind::Sphere => Profile::Constant(-10.0 * k),
            ScenarioKind::Clamping => Profile::Disk(obstacle_disk(self.center(), CLAMP_RADIUS, k, 1.0)),
            ScenarioKind::Sandwich => Profile::Disk(obstacle_disk([0.0, 0.72, 0.5], 0.08, k, 1.0)),
        }
    }

    pub fn upper_profile(&self) -> Profile {
        let k = self.scale;
        match self.kind {
            ScenarioKind::Stationary => Profile::Constant(k),
            ScenarioKind::Sphere | ScenarioKind::Clamping => Profile::Constant(10.0 * k),
            ScenarioKind::Sandwich => Profile::Disk(obstacle_disk([0.5, 0.78, 0.5], 0.08, k, -1.0)),
        }
    }

    pub fn obstacles<T: Real>(&self) -> Result<ObstaclePair<T>> {
        self.validate()?;
        ObstaclePair::from_profiles(self.grid()?, &self.lower_profile(), &self.upper_profile())
    }

    pub fn initial<T: Real>(&self) -> Result<ScalarField<T>> {
        self.validate()?;
        self.initial_profile().sample(self.grid()?)
    }

    /// Solver configuration for one entry of the `eps` list.
    pub fn config<T: Real>(&self, eps: f64) -> Result<SolverConfig<T>> {
        let mut cfg = SolverConfig::new(self.initial()?, T::lit(eps), T::lit(self.t_end));
        cfg.cfl_safety = T::lit(self.cfl_safety);
        cfg.output_every = self.output_every;
        Ok(cfg)
    }

    /// Extinction time of the sphere for the sphere-type scenarios.
    pub fn extinction_time(&self) -> Option<f64> {
        match self.kind {
            ScenarioKind::Sphere | ScenarioKind::Clamping if self.dim >= 2 => {
                Some(SPHERE_RADIUS * SPHERE_RADIUS / (2.0 * (self.dim - 1) as f64))
            }
            _ => None,
        }
    }
}
