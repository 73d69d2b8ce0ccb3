//! Ambient spaces: `R^n` or the extended space `R^n x R` (time stored as the
//! last coordinate), together with the validity box every field declares.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Region removed from a domain: a spherical shell `| |x - c(t)| - radius | <
/// half_width`, whose centre may translate with constant velocity when the
/// domain is extended.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SphericalShell {
    pub center: Vec<f64>,
    pub velocity: Vec<f64>,
    pub radius: f64,
    pub half_width: f64,
}

impl SphericalShell {
    /// Signed clearance of `x` from the shell (positive outside it).
    pub fn clearance(&self, x: &[f64]) -> f64 {
        let n = self.center.len();
        let t = if x.len() > n { x[n] } else { 0.0 };
        let r2: f64 = (0..n)
            .map(|i| {
                let d = x[i] - self.center[i] - self.velocity[i] * t;
                d * d
            })
            .sum();
        (r2.sqrt() - self.radius).abs() - self.half_width
    }
}

/// Axis-aligned validity box with optional excluded shells.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Domain {
    lo: Vec<f64>,
    hi: Vec<f64>,
    exclusions: Vec<SphericalShell>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), found: hi.len() });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidArgument(format!("empty domain box {lo:?}..{hi:?}")));
        }
        Ok(Self { lo, hi, exclusions: Vec::new() })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self { lo: vec![f64::NEG_INFINITY; dim], hi: vec![f64::INFINITY; dim], exclusions: Vec::new() }
    }

    pub fn cube(dim: usize, half: f64) -> Self {
        Self { lo: vec![-half; dim], hi: vec![half; dim], exclusions: Vec::new() }
    }

    pub fn with_shell(mut self, shell: SphericalShell) -> Self {
        self.exclusions.push(shell);
        self
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn shells(&self) -> &[SphericalShell] {
        &self.exclusions
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len()
            && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
            && self.exclusions.iter().all(|s| s.clearance(x) > 0.0)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.lo.len() {
            return Err(Error::DimensionMismatch { expected: self.lo.len(), found: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(x.to_vec()));
        }
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutsideDomain { point: x.to_vec() })
        }
    }

    /// Distance from `x` to the nearest box face or excluded shell.
    pub fn clearance(&self, x: &[f64]) -> f64 {
        let box_gap = x
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (a, b))| (v - a).min(b - v))
            .fold(f64::INFINITY, f64::min);
        self.exclusions.iter().map(|s| s.clearance(x)).fold(box_gap, f64::min)
    }

    pub fn intersect(&self, other: &Domain) -> Result<Domain> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        let lo = self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect();
        let hi = self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect();
        let mut exclusions = self.exclusions.clone();
        for s in &other.exclusions {
            if !exclusions.contains(s) {
                exclusions.push(s.clone());
            }
        }
        Ok(Domain { lo, hi, exclusions })
    }

    /// Appends a time axis `[t_lo, t_hi]`.
    pub fn with_time(&self, t_lo: f64, t_hi: f64) -> Domain {
        let mut d = self.clone();
        d.lo.push(t_lo);
        d.hi.push(t_hi);
        d
    }

    /// Drops the last (time) axis; moving shells are frozen at `t = 0`.
    pub fn without_time(&self) -> Domain {
        let n = self.dim().saturating_sub(1);
        Domain { lo: self.lo[..n].to_vec(), hi: self.hi[..n].to_vec(), exclusions: self.exclusions.clone() }
    }

    /// A shrunken box `[lo + margin, hi - margin]` (shells unchanged).
    pub fn shrink(&self, margin: f64) -> Result<Domain> {
        let lo: Vec<f64> = self.lo.iter().map(|a| a + margin).collect();
        let hi: Vec<f64> = self.hi.iter().map(|b| b - margin).collect();
        let mut d = Domain::new(lo, hi)?;
        d.exclusions = self.exclusions.clone();
        Ok(d)
    }

    /// Uniform rejection sample keeping at least `margin` clearance from the
    /// box faces and every shell. The box must be finite.
    pub fn sample<R: Rng>(&self, rng: &mut R, margin: f64) -> Result<Vec<f64>> {
        if self.lo.iter().chain(&self.hi).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("cannot sample an unbounded domain".into()));
        }
        for _ in 0..100_000 {
            let x: Vec<f64> =
                self.lo.iter().zip(&self.hi).map(|(a, b)| rng.gen_range((a + margin)..(b - margin))).collect();
            if self.clearance(&x) > margin {
                return Ok(x);
            }
        }
        Err(Error::InvalidArgument("domain sampling rejected every candidate".into()))
    }
}

/// Coordinates and validity box shared by fields and forms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Space {
    spatial_dim: usize,
    extended: bool,
    vars: Vec<String>,
    domain: Domain,
}

fn default_names(n: usize) -> Vec<String> {
    match n {
        1 => vec!["x".into()],
        2 => vec!["x".into(), "y".into()],
        3 => vec!["x".into(), "y".into(), "z".into()],
        _ => (1..=n).map(|i| format!("x{i}")).collect(),
    }
}

impl Space {
    /// `R^n` with default coordinate names (`x y z`, or `x1 .. xn`).
    pub fn euclidean(n: usize) -> Self {
        Self { spatial_dim: n, extended: false, vars: default_names(n), domain: Domain::unbounded(n) }
    }

    /// `R^n x R`; the time coordinate is named `t` and stored last.
    pub fn extended(n: usize) -> Self {
        let mut vars = default_names(n);
        vars.push("t".into());
        Self { spatial_dim: n, extended: true, vars, domain: Domain::unbounded(n + 1) }
    }

    pub fn with_domain(mut self, domain: Domain) -> Result<Self> {
        if domain.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: domain.dim() });
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn with_vars(mut self, vars: &[&str]) -> Result<Self> {
        if vars.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: vars.len() });
        }
        self.vars = vars.iter().map(|s| s.to_string()).collect();
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.spatial_dim + usize::from(self.extended)
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial_dim
    }

    pub fn is_extended(&self) -> bool {
        self.extended
    }

    pub fn time_axis(&self) -> Option<usize> {
        self.extended.then_some(self.spatial_dim)
    }

    pub fn vars(&self) -> Vec<&str> {
        self.vars.iter().map(String::as_str).collect()
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// The extended space over this spatial one, time restricted to `[t_lo, t_hi]`.
    pub fn to_extended(&self, t_lo: f64, t_hi: f64) -> Result<Space> {
        if self.extended {
            return Err(Error::InvalidArgument("space is already extended".into()));
        }
        let mut vars = self.vars.clone();
        vars.push("t".into());
        Ok(Space { spatial_dim: self.spatial_dim, extended: true, vars, domain: self.domain.with_time(t_lo, t_hi) })
    }

    /// The spatial factor of an extended space.
    pub fn spatial(&self) -> Space {
        if !self.extended {
            return self.clone();
        }
        Space {
            spatial_dim: self.spatial_dim,
            extended: false,
            vars: self.vars[..self.spatial_dim].to_vec(),
            domain: self.domain.without_time(),
        }
    }

    pub(crate) fn same_shape(&self, other: &Space) -> bool {
        self.spatial_dim == other.spatial_dim && self.extended == other.extended
    }

    /// Combined space of two operands (box intersection).
    pub(crate) fn join(&self, other: &Space) -> Result<Space> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        Ok(Space { domain: self.domain.intersect(&other.domain)?, ..self.clone() })
    }
}
