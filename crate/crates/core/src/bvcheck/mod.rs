//! Level-set quantities of a computed trajectory and the residuals of the
//! inequalities that characterize the limit flow.
//!
//! Surface integrals over a level set `{u = gamma}` are evaluated through
//! the coarea formula with a mollified delta,
//! `int g delta_a(u - gamma) |grad u| dx`; the time derivative `u_t` is the
//! PDE right-hand side at each snapshot.

mod fields;
mod flatness;
mod levelset;
mod residuals;

use std::fmt::{self, Write as _};

pub use fields::{
    admissible_field, audit_field, contact_sets, default_contact_tol, AdmissibleField, ContactSets, FieldAudit,
    FieldMode, TestField, TestFieldSpec,
};
pub use flatness::{weak_star_flatness, FlatnessReport};
pub use levelset::{
    coarea_consistency, coarea_surface_integral, default_band, default_grad_floor, mollifier, perimeter, Coarea,
    CoareaConsistency, LevelSetProbe,
};
pub use residuals::{
    bulk_motion_law_residual, distributional_velocity_residual, levelset_motion_law_residual, normal_velocity,
    per_level_dissipation_residual, BvContext, BvOptions, FieldSource,
};

/// Default tolerance of the motion-law residuals (relative to `||X||_C1` times the perimeter integral).
pub const DEFAULT_MOTION_TOL: f64 = 0.05;
/// Default tolerance of the per-level dissipation inequality (relative to the initial perimeter).
pub const DEFAULT_PER_TOL: f64 = 0.05;
/// Default tolerance of the distributional velocity identity (relative).
pub const DEFAULT_DIST_TOL: f64 = 0.03;

/// Closed time interval `[t0, t1]` selecting snapshots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub t0: f64,
    pub t1: f64,
}

impl Window {
    pub fn new(t0: f64, t1: f64) -> Self {
        Self { t0, t1 }
    }
}

/// How a residual is compared with its tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sidedness {
    /// Identity: `|value| <= tol`.
    TwoSided,
    /// Inequality `value >= 0`: pass iff `value >= -tol`.
    AtLeast,
    /// Inequality `value <= 0`: pass iff `value <= tol`.
    AtMost,
}

impl Sidedness {
    pub fn accepts(self, value: f64, tol: f64) -> bool {
        match self {
            Sidedness::TwoSided => value.abs() <= tol,
            Sidedness::AtLeast => value >= -tol,
            Sidedness::AtMost => value <= tol,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sidedness::TwoSided => "two-sided",
            Sidedness::AtLeast => "at-least",
            Sidedness::AtMost => "at-most",
        }
    }
}

/// Outcome of one residual evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    pub name: String,
    /// Normalized residual compared against `tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub sided: Sidedness,
    pub pass: bool,
    /// Unnormalized residual and the normalization it was divided by.
    pub raw: f64,
    pub scale: f64,
    pub gamma: Option<f64>,
    pub window: Window,
    pub field: Option<String>,
    /// The level's band met cells with gradient below the floor.
    pub degenerate: bool,
}

impl ResidualReport {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        name: &str,
        raw: f64,
        scale: f64,
        tolerance: f64,
        sided: Sidedness,
        window: Window,
        gamma: Option<f64>,
        field: Option<String>,
    ) -> Self {
        let value = if scale > 0.0 {
            raw / scale
        } else if raw == 0.0 {
            0.0
        } else {
            raw.signum() * f64::INFINITY
        };
        Self {
            name: name.to_string(),
            value,
            tolerance,
            sided,
            pass: sided.accepts(value, tolerance),
            raw,
            scale,
            gamma,
            window,
            field,
            degenerate: false,
        }
    }

    fn key(&self) -> (String, String, i64, i64) {
        let q = |x: f64| (x * 1e12).round() as i64;
        (self.name.clone(), self.field.clone().unwrap_or_default(), q(self.gamma.unwrap_or(0.0)), q(self.window.t0))
    }
}

impl fmt::Display for ResidualReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<28}", self.name)?;
        if let Some(field) = &self.field {
            write!(f, " [{field}]")?;
        }
        if let Some(g) = self.gamma {
            write!(f, " gamma={g}")?;
        }
        write!(
            f,
            " t=[{}, {}] value={:.4e} tol={:.1e} ({}) {}",
            self.window.t0,
            self.window.t1,
            self.value,
            self.tolerance,
            self.sided.name(),
            if self.pass { "PASS" } else { "FAIL" }
        )?;
        if self.degenerate {
            f.write_str(" (degenerate level)")?;
        }
        Ok(())
    }
}

pub const REPORT_CSV_HEADER: &str = "name,field,gamma,t0,t1,kind,value,tolerance,pass,raw,scale,degenerate";

/// Sorts by (name, field, level, window start) so merged report lists are deterministic.
pub fn sort_reports(reports: &mut [ResidualReport]) {
    reports.sort_by_key(|r| r.key());
}

pub fn reports_to_csv(reports: &[ResidualReport]) -> String {
    let e = |x: f64| format!("{x:.16e}");
    let mut out = String::new();
    out.push_str(REPORT_CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.name,
            r.field.as_deref().unwrap_or(""),
            r.gamma.map(e).unwrap_or_default(),
            e(r.window.t0),
            e(r.window.t1),
            r.sided.name(),
            e(r.value),
            e(r.tolerance),
            r.pass,
            e(r.raw),
            e(r.scale),
            r.degenerate
        );
    }
    out
}

/// One line per report followed by the overall verdict.
pub fn summary(reports: &[ResidualReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(out, "{r}");
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    let _ = writeln!(out, "{} residuals, {} failed", reports.len(), failed);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidedness_rules() {
        assert!(Sidedness::TwoSided.accepts(-0.01, 0.02));
        assert!(!Sidedness::TwoSided.accepts(0.03, 0.02));
        assert!(Sidedness::AtLeast.accepts(5.0, 0.0));
        assert!(!Sidedness::AtLeast.accepts(-0.1, 0.05));
        assert!(Sidedness::AtMost.accepts(-5.0, 0.0));
        assert!(!Sidedness::AtMost.accepts(0.1, 0.05));
    }

    #[test]
    fn zero_scale_reports() {
        let w = Window::new(0.0, 1.0);
        let r = ResidualReport::new("x", 0.0, 0.0, 0.0, Sidedness::TwoSided, w, None, None);
        assert_eq!(r.value, 0.0);
        assert!(r.pass);
        let r = ResidualReport::new("x", -1.0, 0.0, 0.5, Sidedness::AtLeast, w, None, None);
        assert!(!r.pass);
    }

    #[test]
    fn csv_is_sorted_and_complete() {
        let w = Window::new(0.0, 0.5);
        let mut reps = vec![
            ResidualReport::new("b", 1.0, 2.0, 1.0, Sidedness::TwoSided, w, Some(0.1), None),
            ResidualReport::new("a", 1.0, 2.0, 1.0, Sidedness::AtLeast, w, None, Some("zero#0".into())),
        ];
        sort_reports(&mut reps);
        let csv = reports_to_csv(&reps);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], REPORT_CSV_HEADER);
        assert!(lines[1].starts_with("a,zero#0,,"));
        assert!(lines[2].starts_with("b,,1.0000000000000001e-1,"));
        assert_eq!(lines[1].split(',').count(), 12);
        assert!(summary(&reps).ends_with("2 residuals, 0 failed\n"));
    }
}
