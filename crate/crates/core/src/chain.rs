//! Parametrised cube chains, their boundary, quadrature of forms over them,
//! and integral-invariant checks along flows.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::field::VectorField;
use crate::flow::{advect_chain_with, FlowMap, StepRule};
use crate::form::{exterior_derivative, lie_derivative, DifferentialForm};
use crate::quadrature::GaussLegendre;
use crate::space::Space;
use crate::tensor::{binomial, eval_on_vectors, Vector};

/// Default Gauss–Legendre nodes per axis.
pub const DEFAULT_QUAD_ORDER: usize = 12;
/// Parameter step for tangent vectors.
pub const TANGENT_STEP: f64 = 1e-5;
/// Cycle test threshold on boundary integrals of probe forms.
pub const CYCLE_TOL: f64 = 1e-9;
/// Default pass threshold on invariant drift.
pub const DEFAULT_DRIFT_TOL: f64 = 1e-5;

/// Parametrisation `[0,1]^k -> R^n` of a cell.
pub trait CellMap: Send + Sync {
    fn eval(&self, u: &[f64]) -> Result<Vec<f64>>;
}

struct FnMap<F>(F);

impl<F> CellMap for FnMap<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    fn eval(&self, u: &[f64]) -> Result<Vec<f64>> {
        let x = (self.0)(u);
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(x));
        }
        Ok(x)
    }
}

/// Face of a cube cell with parameter `axis` frozen at `side` (0 or 1).
struct FaceMap {
    base: Arc<dyn CellMap>,
    axis: usize,
    side: f64,
}

impl CellMap for FaceMap {
    fn eval(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut full = Vec::with_capacity(u.len() + 1);
        full.extend_from_slice(&u[..self.axis]);
        full.push(self.side);
        full.extend_from_slice(&u[self.axis..]);
        self.base.eval(&full)
    }
}

#[derive(Clone)]
pub struct Cell {
    degree: usize,
    map: Arc<dyn CellMap>,
    weight: i32,
    quad_order: usize,
}

impl fmt::Debug for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cell(k={}, weight={}, order={})", self.degree, self.weight, self.quad_order)
    }
}

impl Cell {
    pub fn new(degree: usize, map: Arc<dyn CellMap>, weight: i32) -> Result<Self> {
        if weight == 0 {
            return Err(Error::InvalidArgument("cell weight must be non-zero".into()));
        }
        Ok(Self { degree, map, weight, quad_order: DEFAULT_QUAD_ORDER })
    }

    pub fn from_fn<F>(degree: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self { degree, map: Arc::new(FnMap(f)), weight: 1, quad_order: DEFAULT_QUAD_ORDER }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn weight(&self) -> i32 {
        self.weight
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    pub fn map(&self) -> &Arc<dyn CellMap> {
        &self.map
    }

    pub fn point(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.map.eval(u)
    }

    /// Tangent vectors `d map / d u_i` by central differences at steps `h`
    /// and `h/2` combined to cancel the `h^2` term.
    pub fn tangents(&self, u: &[f64]) -> Result<Vec<Vector>> {
        let mut probe = u.to_vec();
        let mut central = |i: usize, h: f64| -> Result<Vec<f64>> {
            probe[i] = u[i] + h;
            let plus = self.map.eval(&probe)?;
            probe[i] = u[i] - h;
            let minus = self.map.eval(&probe)?;
            probe[i] = u[i];
            let span = (u[i] + h) - (u[i] - h);
            Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / span).collect())
        };
        (0..self.degree)
            .map(|i| {
                let coarse = central(i, TANGENT_STEP)?;
                let fine = central(i, 0.5 * TANGENT_STEP)?;
                Ok(Vector::from(fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect::<Vec<_>>()))
            })
            .collect()
    }
}

/// Formal weighted sum of `k`-cells in `R^n` (or `R^n x R`).
#[derive(Clone, Debug)]
pub struct Chain {
    degree: usize,
    ambient_dim: usize,
    extended: bool,
    cells: Vec<Cell>,
}

impl Chain {
    pub fn new(degree: usize, space: &Space, cells: Vec<Cell>) -> Result<Self> {
        if let Some(c) = cells.iter().find(|c| c.degree != degree) {
            return Err(Error::InvalidDegree(format!("cell of degree {} in a {degree}-chain", c.degree)));
        }
        if degree > space.dim() {
            return Err(Error::DegreeOverflow { degree, dim: space.dim() });
        }
        Ok(Self { degree, ambient_dim: space.dim(), extended: space.is_extended(), cells })
    }

    /// Single cell given by a closure on `[0,1]^k`.
    pub fn from_fn<F>(space: &Space, degree: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self::new(degree, space, vec![Cell::from_fn(degree, f)])
    }

    pub fn point(space: &Space, x: Vec<f64>) -> Result<Self> {
        if x.len() != space.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), found: x.len() });
        }
        Self::from_fn(space, 0, move |_| x.clone())
    }

    /// Straight segment from `a` to `b`.
    pub fn segment(space: &Space, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        Self::parallelepiped(space, a.clone(), vec![b.iter().zip(&a).map(|(p, q)| p - q).collect()])
    }

    /// `origin + sum_i u_i edges[i]`.
    pub fn parallelepiped(space: &Space, origin: Vec<f64>, edges: Vec<Vec<f64>>) -> Result<Self> {
        let n = space.dim();
        if origin.len() != n || edges.iter().any(|e| e.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, found: origin.len() });
        }
        let k = edges.len();
        Self::from_fn(space, k, move |u| {
            let mut x = origin.clone();
            for (ui, e) in u.iter().zip(&edges) {
                for (xj, ej) in x.iter_mut().zip(e) {
                    *xj += ui * ej;
                }
            }
            x
        })
    }

    /// Counter-clockwise circle in the `(axes.0, axes.1)` coordinate plane,
    /// split into `segments` arcs.
    pub fn circle(space: &Space, center: Vec<f64>, radius: f64, axes: (usize, usize), segments: usize) -> Result<Self> {
        let n = space.dim();
        if center.len() != n || axes.0 >= n || axes.1 >= n || axes.0 == axes.1 {
            return Err(Error::InvalidArgument(format!("bad circle in dimension {n}: axes {axes:?}")));
        }
        let segments = segments.max(1);
        let cells = (0..segments)
            .map(|j| {
                let center = center.clone();
                Cell::from_fn(1, move |u| {
                    let theta = std::f64::consts::TAU * (j as f64 + u[0]) / segments as f64;
                    let mut x = center.clone();
                    x[axes.0] += radius * theta.cos();
                    x[axes.1] += radius * theta.sin();
                    x
                })
            })
            .collect();
        Self::new(1, space, cells)
    }

    /// Disc bounded by [`Chain::circle`] with the same orientation, as one
    /// polar 2-cell `(u, w) -> center + r u (cos 2 pi w, sin 2 pi w)`.
    pub fn disc(space: &Space, center: Vec<f64>, radius: f64, axes: (usize, usize)) -> Result<Self> {
        let n = space.dim();
        if center.len() != n || axes.0 >= n || axes.1 >= n || axes.0 == axes.1 {
            return Err(Error::InvalidArgument(format!("bad disc in dimension {n}: axes {axes:?}")));
        }
        Self::from_fn(space, 2, move |u| {
            let theta = std::f64::consts::TAU * u[1];
            let mut x = center.clone();
            x[axes.0] += radius * u[0] * theta.cos();
            x[axes.1] += radius * u[0] * theta.sin();
            x
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn is_extended(&self) -> bool {
        self.extended
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn with_quad_order(mut self, order: usize) -> Self {
        for c in &mut self.cells {
            c.quad_order = order.max(1);
        }
        self
    }

    pub fn negate(mut self) -> Self {
        for c in &mut self.cells {
            c.weight = -c.weight;
        }
        self
    }

    /// Formal sum of two chains of the same degree.
    pub fn plus(&self, other: &Chain) -> Result<Chain> {
        if self.degree != other.degree || self.ambient_dim != other.ambient_dim {
            return Err(Error::InvalidDegree(format!(
                "cannot add a {}-chain in R^{} to a {}-chain in R^{}",
                self.degree, self.ambient_dim, other.degree, other.ambient_dim
            )));
        }
        let mut cells = self.cells.clone();
        cells.extend(other.cells.iter().cloned());
        Ok(Chain { cells, ..self.clone() })
    }

    pub(crate) fn map_cells(&self, f: impl Fn(Arc<dyn CellMap>) -> Arc<dyn CellMap>) -> Chain {
        let cells = self.cells.iter().map(|c| Cell { map: f(c.map.clone()), ..c.clone() }).collect();
        Chain { cells, ..self.clone() }
    }

    /// Parameter points `(cell index, u)` on a `per_axis^k` grid of interior
    /// points, used for pointwise diagnostics.
    pub fn sample_params(&self, per_axis: usize) -> Vec<(usize, Vec<f64>)> {
        let per_axis = per_axis.max(1);
        let k = self.degree;
        let total = per_axis.pow(k as u32);
        let mut out = Vec::new();
        for (ci, _) in self.cells.iter().enumerate() {
            for flat in 0..total {
                let mut rem = flat;
                let u: Vec<f64> = (0..k)
                    .map(|_| {
                        let i = rem % per_axis;
                        rem /= per_axis;
                        (i as f64 + 0.5) / per_axis as f64
                    })
                    .collect();
                out.push((ci, u));
            }
        }
        out
    }

    pub fn sample_points(&self, per_axis: usize) -> Result<Vec<Vec<f64>>> {
        self.sample_params(per_axis).iter().map(|(ci, u)| self.cells[*ci].point(u)).collect()
    }
}

/// Alternating-face boundary `sum_i sum_s (-1)^(i+s) face(i, s)` with
/// 1-based axis `i`.
pub fn boundary(c: &Chain) -> Result<Chain> {
    if c.degree == 0 {
        return Err(Error::InvalidDegree("boundary of a 0-chain".into()));
    }
    let k = c.degree;
    let mut cells = Vec::with_capacity(2 * k * c.cells.len());
    for cell in &c.cells {
        for axis in 0..k {
            for side in [0usize, 1] {
                let sign = if (axis + 1 + side) % 2 == 0 { 1 } else { -1 };
                cells.push(Cell {
                    degree: k - 1,
                    map: Arc::new(FaceMap { base: cell.map.clone(), axis, side: side as f64 }),
                    weight: sign * cell.weight,
                    quad_order: cell.quad_order,
                });
            }
        }
    }
    Ok(Chain { degree: k - 1, ambient_dim: c.ambient_dim, extended: c.extended, cells })
}

/// `integral_c a` by tensor Gauss–Legendre quadrature on each cell.
pub fn integrate(a: &DifferentialForm, c: &Chain) -> Result<f64> {
    integrate_with(Exec::default(), a, c)
}

pub fn integrate_with(exec: Exec, a: &DifferentialForm, c: &Chain) -> Result<f64> {
    if a.degree() != c.degree {
        return Err(Error::InvalidDegree(format!("cannot integrate a {}-form over a {}-chain", a.degree(), c.degree)));
    }
    if a.dim() != c.ambient_dim {
        return Err(Error::DimensionMismatch { expected: c.ambient_dim, found: a.dim() });
    }
    let k = c.degree;
    // (cell, node weight, parameter point)
    let mut tasks: Vec<(usize, f64, Vec<f64>)> = Vec::new();
    for (ci, cell) in c.cells.iter().enumerate() {
        if k == 0 {
            tasks.push((ci, 1.0, Vec::new()));
            continue;
        }
        let rule = GaussLegendre::new(cell.quad_order);
        let m = rule.len();
        for flat in 0..m.pow(k as u32) {
            let mut rem = flat;
            let mut u = Vec::with_capacity(k);
            let mut w = 1.0;
            for _ in 0..k {
                let i = rem % m;
                rem /= m;
                u.push(rule.nodes[i]);
                w *= rule.weights[i];
            }
            tasks.push((ci, w, u));
        }
    }
    let values = exec.try_map(&tasks, |(ci, w, u)| {
        let cell = &c.cells[*ci];
        let x = cell.point(u)?;
        let value = a.eval(&x)?;
        let tangents = cell.tangents(u)?;
        Ok(f64::from(cell.weight) * w * eval_on_vectors(&value, &tangents)?)
    })?;
    Ok(values.iter().sum())
}

/// Probe forms of the given degree used by the cycle test: smooth, generic
/// and deterministic.
pub fn probe_forms(space: &Space, degree: usize) -> Result<Vec<DifferentialForm>> {
    let n = space.dim();
    let comps = binomial(n, degree);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_cafe);
    let mut probes = Vec::new();
    for p in 0..3 {
        let coeffs: Vec<(f64, Vec<f64>, f64)> = (0..comps)
            .map(|_| {
                let amp = rng.gen_range(0.5..1.5);
                let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (amp, dir, rng.gen_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        let label = format!("probe{p}");
        probes.push(DifferentialForm::native(space, degree, &label, move |x| {
            coeffs
                .iter()
                .map(|(amp, dir, phase)| {
                    let s: f64 = dir.iter().zip(x).map(|(d, xi)| d * xi).sum();
                    match p {
                        0 => amp * (0.7 * s + phase).sin(),
                        1 => amp * (1.0 + 0.3 * s * s),
                        _ => amp * s,
                    }
                })
                .collect()
        })?);
    }
    Ok(probes)
}

fn unbounded_space(c: &Chain) -> Space {
    if c.extended {
        Space::extended(c.ambient_dim - 1)
    } else {
        Space::euclidean(c.ambient_dim)
    }
}

/// Fails with [`Error::NotACycle`] unless every probe form integrates to
/// below [`CYCLE_TOL`] over the boundary.
pub fn verify_cycle(c: &Chain) -> Result<()> {
    if c.degree == 0 {
        return Ok(());
    }
    let b = boundary(c)?;
    for probe in probe_forms(&unbounded_space(c), c.degree - 1)? {
        let value = integrate(&probe, &b)?;
        if value.abs() >= CYCLE_TOL {
            return Err(Error::NotACycle { probe: probe.label().to_string(), value });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantKind {
    Absolute,
    Relative,
    TubeOfSolutions,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvariantSample {
    pub t: f64,
    pub value: f64,
    pub drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvariantReport {
    pub kind: InvariantKind,
    pub samples: Vec<InvariantSample>,
    pub max_drift: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Largest `|L_v a|` at sample points of the initial chain (absolute and
    /// relative checks) or largest `|i_xi d sigma|` (tube of solutions).
    pub differential_residual: Option<f64>,
    /// Integral of the exterior derivative over the swept tube, if computed.
    pub sweep_integral: Option<f64>,
}

impl InvariantReport {
    fn from_values(kind: InvariantKind, values: Vec<(f64, f64)>, tolerance: f64) -> Self {
        let reference = values.first().map_or(0.0, |v| v.1);
        let samples: Vec<InvariantSample> =
            values.iter().map(|&(t, value)| InvariantSample { t, value, drift: (value - reference).abs() }).collect();
        let max_drift = samples.iter().fold(0.0f64, |m, s| m.max(s.drift));
        InvariantReport {
            kind,
            samples,
            max_drift,
            tolerance,
            pass: max_drift < tolerance,
            differential_residual: None,
            sweep_integral: None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InvariantOptions {
    pub tolerance: f64,
    pub exec: Exec,
    /// Sample points per cell axis for the differential cross-check.
    pub residual_samples: usize,
    /// Threshold on `|i_xi d sigma|` for the tube-of-solutions precondition.
    pub solution_tol: f64,
}

impl Default for InvariantOptions {
    fn default() -> Self {
        Self { tolerance: DEFAULT_DRIFT_TOL, exec: Exec::default(), residual_samples: 3, solution_tol: 1e-5 }
    }
}

fn integrals_along_flow(
    v: &VectorField,
    a: &DifferentialForm,
    c: &Chain,
    ts: &[f64],
    exec: Exec,
) -> Result<Vec<(f64, f64)>> {
    // parallel over times; each integral runs sequentially inside
    exec.try_map(ts, |&t| {
        let moved = advect_chain_with(&FlowMap::new(v, t), c)?;
        Ok((t, integrate_with(Exec::Sequential, a, &moved)?))
    })
}

fn max_norm_at(form: &DifferentialForm, points: &[Vec<f64>], exec: Exec) -> Result<f64> {
    Ok(exec.try_map(points, |x| Ok(form.eval(x)?.norm()))?.into_iter().fold(0.0, f64::max))
}

/// Integrates `a` over `Phi_t(c)` for each `t` and reports the drift, with
/// `|L_v a|` at sample points as the differential cross-check.
pub fn check_absolute_invariant(
    v: &VectorField,
    a: &DifferentialForm,
    c: &Chain,
    ts: &[f64],
    opts: &InvariantOptions,
) -> Result<InvariantReport> {
    let values = integrals_along_flow(v, a, c, ts, opts.exec)?;
    let mut report = InvariantReport::from_values(InvariantKind::Absolute, values, opts.tolerance);
    let lie = lie_derivative(v, a)?;
    report.differential_residual = Some(max_norm_at(&lie, &c.sample_points(opts.residual_samples)?, opts.exec)?);
    Ok(report)
}

/// Drift of `oint_{Phi_t(c)} a` for a cycle `c`.
pub fn check_relative_invariant(
    v: &VectorField,
    a: &DifferentialForm,
    cycle: &Chain,
    ts: &[f64],
    opts: &InvariantOptions,
) -> Result<InvariantReport> {
    verify_cycle(cycle)?;
    let values = integrals_along_flow(v, a, cycle, ts, opts.exec)?;
    let mut report = InvariantReport::from_values(InvariantKind::Relative, values, opts.tolerance);
    if a.degree() < a.dim() {
        // i_v da is exact exactly when the circulation is invariant
        let ivda = exterior_derivative(a)?.interior(v)?;
        let d_ivda = exterior_derivative(&ivda)?;
        if d_ivda.degree() <= d_ivda.dim() {
            report.differential_residual =
                Some(max_norm_at(&d_ivda, &cycle.sample_points(opts.residual_samples)?, opts.exec)?);
        }
    }
    Ok(report)
}

/// A second cycle on the tube of solutions through `c1`, and the swept
/// surface between them.
#[derive(Clone, Debug)]
pub struct SolutionTube {
    pub c2: Chain,
    pub sweep: Chain,
}

struct TubeMap {
    base: Arc<dyn CellMap>,
    flow: FlowMap,
    duration: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    /// scale the duration by the last parameter (swept cell)
    swept: bool,
}

impl CellMap for TubeMap {
    fn eval(&self, u: &[f64]) -> Result<Vec<f64>> {
        let (base_u, scale) = if self.swept { (&u[..u.len() - 1], u[u.len() - 1]) } else { (u, 1.0) };
        let x = self.base.eval(base_u)?;
        let tau = (self.duration)(&x) * scale;
        self.flow.with_duration(tau).apply(&x)
    }
}

/// Moves each point `x` of `c1` along `xi` for its own duration
/// `duration(x)`, producing `c2` and the swept `(k+1)`-chain `Sigma` with
/// `boundary(Sigma) = c1 - c2` up to cancelling trajectory faces.
pub fn solution_tube<F>(xi: &VectorField, c1: &Chain, duration: F) -> Result<SolutionTube>
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    solution_tube_with(xi, c1, duration, StepRule::default())
}

/// [`solution_tube`] with an explicit step rule for the flow of `xi`.
pub fn solution_tube_with<F>(xi: &VectorField, c1: &Chain, duration: F, rule: StepRule) -> Result<SolutionTube>
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    if xi.dim() != c1.ambient_dim {
        return Err(Error::DimensionMismatch { expected: c1.ambient_dim, found: xi.dim() });
    }
    let duration: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> = Arc::new(duration);
    let flow = FlowMap::new(xi, 0.0).with_rule(rule);
    let k = c1.degree;
    let c2 =
        c1.map_cells(|base| Arc::new(TubeMap { base, flow: flow.clone(), duration: duration.clone(), swept: false }));
    let sign = if (k + 1) % 2 == 0 { 1 } else { -1 };
    let cells = c1
        .cells
        .iter()
        .map(|cell| Cell {
            degree: k + 1,
            map: Arc::new(TubeMap {
                base: cell.map.clone(),
                flow: flow.clone(),
                duration: duration.clone(),
                swept: true,
            }),
            weight: sign * cell.weight,
            quad_order: cell.quad_order,
        })
        .collect();
    let sweep = Chain { degree: k + 1, ambient_dim: c1.ambient_dim, extended: c1.extended, cells };
    Ok(SolutionTube { c2, sweep })
}

/// Compares `oint_{c1} sigma` with `oint_{c2} sigma` for two cycles around
/// one tube of integral curves of `xi`; with `sweep` given, also integrates
/// `d sigma` over it.
pub fn check_tube_of_solutions(
    xi: &VectorField,
    sigma: &DifferentialForm,
    c1: &Chain,
    c2: &Chain,
    sweep: Option<&Chain>,
    opts: &InvariantOptions,
) -> Result<InvariantReport> {
    let dsigma = exterior_derivative(sigma)?;
    let residual_form = dsigma.interior(xi)?;
    let mut points = c1.sample_points(opts.residual_samples)?;
    points.extend(c2.sample_points(opts.residual_samples)?);
    let residual = max_norm_at(&residual_form, &points, opts.exec)?;
    if residual > opts.solution_tol {
        return Err(Error::NotASolution { residual });
    }
    verify_cycle(c1)?;
    verify_cycle(c2)?;
    let i1 = integrate_with(opts.exec, sigma, c1)?;
    let i2 = integrate_with(opts.exec, sigma, c2)?;
    let mut report =
        InvariantReport::from_values(InvariantKind::TubeOfSolutions, vec![(0.0, i1), (1.0, i2)], opts.tolerance);
    report.differential_residual = Some(residual);
    if let Some(s) = sweep {
        let flux = integrate_with(opts.exec, &dsigma, s)?;
        report.sweep_integral = Some(flux);
        report.pass &= flux.abs() < opts.tolerance;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::AltTensor;

    fn plane() -> Space {
        Space::euclidean(2)
    }

    #[test]
    fn unit_square_area() {
        let sq = Chain::parallelepiped(&plane(), vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let area = DifferentialForm::basis(&plane(), &[0, 1]).unwrap();
        assert!((integrate(&area, &sq).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn square_boundary_has_four_edges() {
        let sq = Chain::parallelepiped(&plane(), vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = boundary(&sq).unwrap();
        assert_eq!(b.cells().len(), 4);
        assert_eq!(b.degree(), 1);
        let dx = DifferentialForm::basis(&plane(), &[0]).unwrap();
        assert!(integrate(&dx, &b).unwrap().abs() < 1e-12);
        // x dy over the boundary is the area
        let xdy = DifferentialForm::one_form(&plane(), &["0", "x"]).unwrap();
        assert!((integrate(&xdy, &b).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn boundary_of_boundary_integrates_to_zero() {
        let s = Space::euclidean(3);
        let cube =
            Chain::from_fn(&s, 3, |u| vec![u[0] + 0.1 * u[1] * u[2], u[1] * (1.0 + u[0]), u[2] + u[0] * u[1]]).unwrap();
        let bb = boundary(&boundary(&cube).unwrap()).unwrap();
        for probe in probe_forms(&s, 1).unwrap() {
            assert!(integrate(&probe, &bb).unwrap().abs() < 1e-9);
        }
        assert!(matches!(boundary(&Chain::point(&s, vec![0.0; 3]).unwrap()), Err(Error::InvalidDegree(_))));
    }

    #[test]
    fn exact_form_over_loop() {
        let s = plane();
        let f = DifferentialForm::scalar(&s, "sin(x) * y^2 + x^3").unwrap();
        let df = exterior_derivative(&f).unwrap();
        let loop_ = Chain::from_fn(&s, 1, |u| {
            let t = std::f64::consts::TAU * u[0];
            vec![0.3 + (1.0 + 0.2 * (3.0 * t).cos()) * t.cos(), -0.1 + 0.8 * t.sin()]
        })
        .unwrap();
        let circle = Chain::circle(&s, vec![0.2, 0.1], 0.7, (0, 1), 4).unwrap();
        let a = integrate(&df, &loop_.with_quad_order(48)).unwrap();
        let b = integrate(&df, &circle).unwrap();
        assert!(a.abs() < 1e-8 && b.abs() < 1e-8, "{a} {b}");
    }

    #[test]
    fn rigid_rotation_circulation() {
        let s = Space::euclidean(3);
        let v = VectorField::analytic(&s, &["-y", "x", "0"]).unwrap();
        let c = Chain::circle(&s, vec![0.0; 3], 1.0, (0, 1), 8).unwrap();
        let circ = integrate(&DifferentialForm::flat(&v), &c).unwrap();
        assert!((circ - std::f64::consts::TAU).abs() < 1e-8);
    }

    #[test]
    fn stokes_on_curved_cell() {
        let s = plane();
        let a = DifferentialForm::one_form(&s, &["x^2*y - y^3", "x*y + 2*x^3"]).unwrap();
        let da = exterior_derivative(&a).unwrap();
        let cell =
            Chain::from_fn(&s, 2, |u| vec![u[0] + 0.3 * (u[1] * 2.0).sin(), u[1] * (1.0 + 0.5 * u[0] * u[0])]).unwrap();
        let lhs = integrate(&da, &cell).unwrap();
        let rhs = integrate(&a, &boundary(&cell).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-6, "{lhs} vs {rhs}");
    }

    #[test]
    fn disc_is_bounded_by_circle() {
        let s = Space::euclidean(3);
        let disc = Chain::disc(&s, vec![0.0; 3], 0.5, (0, 1)).unwrap();
        let flux = DifferentialForm::constant(&s, AltTensor::basis(3, &[0, 1]).unwrap().scale(2.0)).unwrap();
        let f = integrate(&flux, &disc).unwrap();
        assert!((f - 2.0 * std::f64::consts::PI * 0.25).abs() < 1e-10, "{}", f - 2.0 * std::f64::consts::PI * 0.25);
    }

    #[test]
    fn degree_mismatch() {
        let s = plane();
        let sq = Chain::parallelepiped(&s, vec![0.0, 0.0], vec![vec![1.0, 0.0]]).unwrap();
        let area = DifferentialForm::basis(&s, &[0, 1]).unwrap();
        assert!(matches!(integrate(&area, &sq), Err(Error::InvalidDegree(_))));
    }

    #[test]
    fn area_is_absolute_invariant_of_rotation() {
        let s = plane();
        let v = VectorField::analytic(&s, &["-y", "x"]).unwrap();
        let area = DifferentialForm::basis(&s, &[0, 1]).unwrap();
        let blob = Chain::from_fn(&s, 2, |u| vec![0.5 + u[0] + 0.2 * u[1] * u[1], u[1] - 0.3 * u[0]]).unwrap();
        let r =
            check_absolute_invariant(&v, &area, &blob, &[0.0, 0.5, 1.0, 2.0], &InvariantOptions::default()).unwrap();
        assert!(r.max_drift < 1e-7 && r.pass, "{r:?}");
        assert!(r.differential_residual.unwrap() < 1e-8);
    }

    #[test]
    fn expansion_is_not_invariant() {
        let s = Space::euclidean(1);
        let v = VectorField::analytic(&s, &["x"]).unwrap();
        let dx = DifferentialForm::basis(&s, &[0]).unwrap();
        let seg = Chain::segment(&s, vec![0.0], vec![1.0]).unwrap();
        let ts = [0.0, 0.5, 1.0];
        let r = check_absolute_invariant(&v, &dx, &seg, &ts, &InvariantOptions::default()).unwrap();
        assert!(!r.pass);
        for sample in &r.samples {
            assert!((sample.drift - (sample.t.exp() - 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_form_is_trivially_relative_invariant() {
        let s = plane();
        let v = VectorField::analytic(&s, &["x - y", "x*y"]).unwrap();
        let df = exterior_derivative(&DifferentialForm::scalar(&s, "x*y^2").unwrap()).unwrap();
        let c = Chain::circle(&s, vec![0.0, 0.0], 0.5, (0, 1), 4).unwrap();
        let r = check_relative_invariant(&v, &df, &c, &[0.0, 0.3, 0.6], &InvariantOptions::default()).unwrap();
        for sample in &r.samples {
            assert!(sample.value.abs() < 1e-8);
        }
    }

    #[test]
    fn relative_check_rejects_open_chain() {
        let s = plane();
        let v = VectorField::analytic(&s, &["-y", "x"]).unwrap();
        let a = DifferentialForm::one_form(&s, &["-y", "x"]).unwrap();
        let seg = Chain::segment(&s, vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        match check_relative_invariant(&v, &a, &seg, &[0.0], &InvariantOptions::default()) {
            Err(Error::NotACycle { probe, .. }) => assert!(probe.starts_with("probe")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quad_order_doubling_is_stable() {
        let s = Space::euclidean(3);
        let v = VectorField::analytic(&s, &["sin(z) + cos(y)", "sin(x) + cos(z)", "sin(y) + cos(x)"]).unwrap();
        let c = Chain::circle(&s, vec![0.1, 0.2, 0.3], 1.0, (0, 2), 8).unwrap();
        let a = DifferentialForm::flat(&v);
        let i12 = integrate(&a, &c).unwrap();
        let i24 = integrate(&a, &c.clone().with_quad_order(24)).unwrap();
        assert!((i12 - i24).abs() < 1e-8);
    }

    #[test]
    fn exec_policies_agree() {
        let s = plane();
        let a = DifferentialForm::one_form(&s, &["sin(x*y)", "exp(x) - y"]).unwrap();
        let c = Chain::circle(&s, vec![0.1, 0.0], 0.8, (0, 1), 6).unwrap();
        let p = integrate_with(Exec::Parallel, &a, &c).unwrap();
        let q = integrate_with(Exec::Sequential, &a, &c).unwrap();
        assert_eq!(p.to_bits(), q.to_bits());
    }
}
