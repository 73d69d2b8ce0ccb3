//! The kernel distribution `D = ker(w -> i_w da)`: numerical rank, frames,
//! Frobenius residuals, vortex lines, integral surfaces and generalised
//! tubes.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::chain::{boundary, integrate_with, probe_forms, Chain, CYCLE_TOL};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::field::VectorField;
use crate::flow::{advect_chain_with, FlowMap, StepRule};
use crate::form::{lie_derivative, DifferentialForm};
use crate::geometry::{hausdorff, max_principal_angle, polyline_length};
use crate::space::Space;
use crate::tensor::{dot, interior, norm, Vector};

/// Singular values below `RANK_TOL * sigma_max` count as zero.
pub const RANK_TOL: f64 = 1e-8;
/// Forms with a smaller component norm at a point are treated as vanishing.
pub const DEGENERATE_NORM: f64 = 1e-8;
/// Default arc-length step for line tracing.
pub const LINE_STEP: f64 = 5e-3;
/// Finite-difference step for Lie brackets of frame fields.
pub const BRACKET_STEP: f64 = 1e-4;

/// Kernel of `w -> i_w form` at a point, intersected with the kernels of
/// the constraint forms.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelFrame {
    pub point: Vec<f64>,
    /// Orthonormal; each vector's largest component is positive.
    pub basis: Vec<Vector>,
    pub rank_form: usize,
    /// Rank added by the constraint rows on top of `rank_form`.
    pub constraint_rank: usize,
    /// Singular values of the contraction map of the form, descending.
    pub singular_values: Vec<f64>,
    /// The form vanishes at the point; the kernel is everything the
    /// constraints allow.
    pub degenerate: bool,
}

impl KernelFrame {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Orthogonal projection onto the kernel.
    pub fn project(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; w.len()];
        for b in &self.basis {
            let c = dot(w, b.comps());
            out.iter_mut().zip(b.comps()).for_each(|(o, bi)| *o += c * bi);
        }
        out
    }
}

fn sorted_svd(m: DMatrix<f64>) -> (Vec<f64>, Option<DMatrix<f64>>) {
    let n = m.ncols();
    // pad so the SVD returns a full set of right singular vectors
    let m = if m.nrows() < n { m.resize_vertically(n, 0.0) } else { m };
    let svd = m.svd(false, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let v_t = svd.v_t.map(|vt| DMatrix::from_fn(n, n, |r, c| vt[(order[r], c)]));
    (values, v_t)
}

fn numerical_rank(values: &[f64]) -> usize {
    let top = values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    values.iter().filter(|s| **s > RANK_TOL * top).count()
}

fn canonical_sign(mut w: Vec<f64>) -> Vec<f64> {
    let lead = w.iter().copied().fold(0.0f64, |m, c| if c.abs() > m.abs() + 1e-12 { c } else { m });
    if lead < 0.0 {
        w.iter_mut().for_each(|c| *c = -*c);
    }
    w
}

/// Numerical kernel of `w -> i_w form(x)` with optional constraint forms
/// (for example `dt`) stacked below. Each block is normalised before the
/// singular-value decomposition so constraints do not swamp a weak form.
pub fn kernel_at(form: &DifferentialForm, x: &[f64], constraints: &[DifferentialForm]) -> Result<KernelFrame> {
    if form.degree() == 0 {
        return Err(Error::InvalidDegree("kernel of a 0-form".into()));
    }
    let n = form.dim();
    if let Some(c) = constraints.iter().find(|c| c.dim() != n || c.degree() == 0) {
        return Err(Error::InvalidArgument(format!(
            "bad constraint form {} (degree {}, dim {})",
            c.label(),
            c.degree(),
            c.dim()
        )));
    }
    let value = form.eval(x)?;
    let degenerate = value.norm() < DEGENERATE_NORM;
    let form_matrix = value.contraction_matrix()?;
    let form_scale = form_matrix.norm();

    let mut blocks = Vec::new();
    if !degenerate {
        blocks.push(&form_matrix / form_scale);
    }
    for c in constraints {
        let m = c.eval(x)?.contraction_matrix()?;
        let scale = m.norm();
        if scale > 0.0 {
            blocks.push(m / scale);
        }
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut stacked = DMatrix::zeros(rows, n);
    let mut r0 = 0;
    for b in &blocks {
        stacked.view_mut((r0, 0), (b.nrows(), n)).copy_from(b);
        r0 += b.nrows();
    }
    let (values, v_t) = sorted_svd(stacked);
    let singular_values = if constraints.is_empty() && !degenerate {
        // the stacked matrix is the form matrix rescaled
        values.iter().map(|v| v * form_scale).collect()
    } else {
        sorted_svd(form_matrix).0
    };
    let rank_form = if degenerate { 0 } else { numerical_rank(&singular_values) };
    let rank_total = numerical_rank(&values);
    let v_t = v_t.expect("right singular vectors requested");
    let basis = (rank_total..n).map(|r| Vector::from(canonical_sign(v_t.row(r).iter().copied().collect()))).collect();
    Ok(KernelFrame {
        point: x.to_vec(),
        basis,
        rank_form,
        constraint_rank: rank_total.saturating_sub(rank_form),
        singular_values,
        degenerate,
    })
}

/// Projects `seeds` onto the kernel at `x` and orthonormalises them in
/// order. Fails if the kernel dimension differs from the seed count.
pub fn projected_frame(
    form: &DifferentialForm,
    constraints: &[DifferentialForm],
    seeds: &[Vec<f64>],
    x: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let frame = kernel_at(form, x, constraints)?;
    if frame.dim() != seeds.len() {
        return Err(Error::RankInstability { expected: seeds.len(), found: frame.dim(), point: x.to_vec() });
    }
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(seeds.len());
    for s in seeds {
        let mut w = frame.project(s);
        for q in &out {
            let c = dot(&w, q);
            w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
        }
        let len = norm(&w);
        if len < 1e-6 * norm(s) {
            return Err(Error::RankInstability { expected: seeds.len(), found: out.len(), point: x.to_vec() });
        }
        w.iter_mut().for_each(|c| *c /= len);
        out.push(w);
    }
    Ok(out)
}

/// Largest of `|i_w f(x)| / (|w| |f(x)|)` over the form and the
/// constraints; vanishing forms are skipped.
pub fn annihilation_residual(
    form: &DifferentialForm,
    constraints: &[DifferentialForm],
    x: &[f64],
    w: &[f64],
) -> Result<f64> {
    let len = norm(w);
    if len == 0.0 {
        return Ok(0.0);
    }
    let w = Vector::from(w.iter().map(|c| c / len).collect::<Vec<_>>());
    let mut worst = 0.0f64;
    for f in std::iter::once(form).chain(constraints) {
        let value = f.eval(x)?;
        let scale = value.norm();
        if scale >= DEGENERATE_NORM {
            worst = worst.max(interior(&w, &value)?.norm() / scale);
        }
    }
    Ok(worst)
}

/// Largest relative Lie derivative `|L_v form| / |form|` over `points`.
pub fn lie_invariance_residual(
    v: &VectorField,
    form: &DifferentialForm,
    points: &[Vec<f64>],
    exec: Exec,
) -> Result<f64> {
    let lie = lie_derivative(v, form)?;
    let values = exec.try_map(points, |x| {
        let scale = form.eval(x)?.norm();
        if scale < DEGENERATE_NORM {
            return Ok(0.0);
        }
        Ok(lie.eval(x)?.norm() / scale)
    })?;
    Ok(values.into_iter().fold(0.0, f64::max))
}

/// Largest principal angle between `ker(a; ca)` and `ker(b; cb)` at `x`.
pub fn kernel_angle(
    a: &DifferentialForm,
    ca: &[DifferentialForm],
    b: &DifferentialForm,
    cb: &[DifferentialForm],
    x: &[f64],
) -> Result<f64> {
    let ka = kernel_at(a, x, ca)?;
    let kb = kernel_at(b, x, cb)?;
    Ok(max_principal_angle(&ka.basis, &kb.basis))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankSample {
    pub point: Vec<f64>,
    pub rank_form: usize,
    pub kernel_dim: usize,
    pub degenerate: bool,
    pub singular_values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimensionReport {
    pub ambient_dim: usize,
    pub form_degree: usize,
    pub samples: Vec<RankSample>,
    /// Kernel dimension if it is the same at every sample.
    pub kernel_dim: Option<usize>,
    pub constant_rank: bool,
    /// `ambient_dim - form_degree`: the largest kernel a non-vanishing form
    /// of this degree can have.
    pub bound: usize,
    pub bound_holds: bool,
    pub bound_attained: bool,
}

pub fn dimension_report(
    form: &DifferentialForm,
    points: &[Vec<f64>],
    constraints: &[DifferentialForm],
    exec: Exec,
) -> Result<DimensionReport> {
    let samples = exec.try_map(points, |x| {
        let f = kernel_at(form, x, constraints)?;
        Ok(RankSample {
            point: x.clone(),
            rank_form: f.rank_form,
            kernel_dim: f.dim(),
            degenerate: f.degenerate,
            singular_values: f.singular_values,
        })
    })?;
    let n = form.dim();
    let bound = n.saturating_sub(form.degree());
    let first = samples.first().map(|s| (s.rank_form, s.kernel_dim));
    let constant_rank = samples.iter().all(|s| Some((s.rank_form, s.kernel_dim)) == first);
    let regular = || samples.iter().filter(|s| !s.degenerate);
    Ok(DimensionReport {
        ambient_dim: n,
        form_degree: form.degree(),
        kernel_dim: if constant_rank { first.map(|f| f.1) } else { None },
        constant_rank,
        bound,
        bound_holds: regular().all(|s| s.kernel_dim <= bound),
        bound_attained: regular().any(|s| s.kernel_dim == bound),
        samples,
    })
}

/// Largest component of `[W_i, W_j]` orthogonal to `D(x)`, relative to
/// `max(1, |[W_i, W_j]|)`, for the frame fields obtained by projecting the
/// kernel basis at `x` onto nearby kernels. Zero when `dim D < 2`.
pub fn frobenius_residual(form: &DifferentialForm, x: &[f64], constraints: &[DifferentialForm]) -> Result<f64> {
    let frame = kernel_at(form, x, constraints)?;
    if frame.degenerate {
        return Err(Error::DegenerateForm { point: x.to_vec() });
    }
    let m = frame.dim();
    if m < 2 {
        return Ok(0.0);
    }
    let n = x.len();
    let seeds: Vec<Vec<f64>> = frame.basis.iter().map(|b| b.comps().to_vec()).collect();
    // jac[i][(r, c)] = d W_i^r / d x^c
    let mut jac = vec![DMatrix::<f64>::zeros(n, n); m];
    let mut probe = x.to_vec();
    for c in 0..n {
        let h = BRACKET_STEP * x[c].abs().max(1.0);
        probe[c] = x[c] + h;
        let plus = projected_frame(form, constraints, &seeds, &probe)?;
        probe[c] = x[c] - h;
        let minus = projected_frame(form, constraints, &seeds, &probe)?;
        probe[c] = x[c];
        let span = (x[c] + h) - (x[c] - h);
        for i in 0..m {
            for r in 0..n {
                jac[i][(r, c)] = (plus[i][r] - minus[i][r]) / span;
            }
        }
    }
    let mut worst = 0.0f64;
    for i in 0..m {
        for j in i + 1..m {
            let wi = nalgebra::DVector::from_column_slice(&seeds[i]);
            let wj = nalgebra::DVector::from_column_slice(&seeds[j]);
            let bracket: Vec<f64> = (&jac[j] * &wi - &jac[i] * &wj).iter().copied().collect();
            let along = frame.project(&bracket);
            let off: Vec<f64> = bracket.iter().zip(&along).map(|(b, a)| b - a).collect();
            worst = worst.max(norm(&off) / norm(&bracket).max(1.0));
        }
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

#[derive(Clone, Debug)]
pub struct TraceOptions {
    pub step: f64,
    pub constraints: Vec<DifferentialForm>,
    /// Initial orientation; without it the seed's kernel vector keeps its
    /// canonical sign (largest component positive).
    pub reference: Option<Vec<f64>>,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { step: LINE_STEP, constraints: Vec::new(), reference: None }
    }
}

/// Integral curve of a one-dimensional kernel, parametrised by arc length.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VortexLine {
    pub points: Vec<Vec<f64>>,
    pub arc: Vec<f64>,
    /// Unit kernel vector at each node, oriented continuously.
    pub tangents: Vec<Vec<f64>>,
    /// Largest annihilation residual of the polyline's own tangents.
    pub residual: f64,
    pub complete: bool,
    pub stop_reason: Option<String>,
}

fn oriented_kernel(
    form: &DifferentialForm,
    constraints: &[DifferentialForm],
    x: &[f64],
    prev: &[f64],
) -> Result<Vec<f64>> {
    let frame = kernel_at(form, x, constraints)?;
    if frame.degenerate {
        return Err(Error::DegenerateForm { point: x.to_vec() });
    }
    if frame.dim() != 1 {
        return Err(Error::KernelDimension { expected: 1, found: frame.dim(), point: x.to_vec() });
    }
    let mut w = frame.basis[0].comps().to_vec();
    if dot(&w, prev) < 0.0 {
        w.iter_mut().for_each(|c| *c = -*c);
    }
    Ok(w)
}

fn axpy(x: &[f64], s: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + s * b).collect()
}

/// Second-order tangents `d/ds` of nodes sampled at uniform parameter
/// spacing `ds`.
pub(crate) fn polyline_tangents(points: &[Vec<f64>], ds: f64) -> Vec<Vec<f64>> {
    let n = points.len();
    if n < 3 {
        let d: Vec<f64> =
            if n == 2 { points[1].iter().zip(&points[0]).map(|(a, b)| (a - b) / ds).collect() } else { Vec::new() };
        return vec![d; n];
    }
    (0..n)
        .map(|i| {
            let dim = points[i].len();
            (0..dim)
                .map(|c| match i {
                    0 => (-3.0 * points[0][c] + 4.0 * points[1][c] - points[2][c]) / (2.0 * ds),
                    _ if i == n - 1 => (3.0 * points[i][c] - 4.0 * points[i - 1][c] + points[i - 2][c]) / (2.0 * ds),
                    _ => (points[i + 1][c] - points[i - 1][c]) / (2.0 * ds),
                })
                .collect()
        })
        .collect()
}

/// Traces the integral curve of the one-dimensional kernel of `form` from
/// `seed` with arc-length RK4. Rank changes, vanishing points and domain
/// exits along the way end the line early with a reason; at the seed they
/// are errors.
pub fn trace_vortex_line(
    form: &DifferentialForm,
    seed: &[f64],
    length: f64,
    direction: Direction,
    opts: &TraceOptions,
) -> Result<VortexLine> {
    if !(length.is_finite() && length >= 0.0) || opts.step <= 0.0 {
        return Err(Error::InvalidArgument(format!("bad trace length {length} or step {}", opts.step)));
    }
    let cs = &opts.constraints;
    let frame = kernel_at(form, seed, cs)?;
    if frame.degenerate {
        return Err(Error::DegenerateForm { point: seed.to_vec() });
    }
    if frame.dim() != 1 {
        return Err(Error::KernelDimension { expected: 1, found: frame.dim(), point: seed.to_vec() });
    }
    let mut t0 = frame.basis[0].comps().to_vec();
    if let Some(r) = &opts.reference {
        if dot(&t0, r) < 0.0 {
            t0.iter_mut().for_each(|c| *c = -*c);
        }
    }
    if direction == Direction::Backward {
        t0.iter_mut().for_each(|c| *c = -*c);
    }
    let steps = (length / opts.step).ceil().max(1.0) as usize;
    let ds = length / steps as f64;
    let mut points = vec![seed.to_vec()];
    let mut tangents = vec![t0];
    let mut stop_reason = None;
    for _ in 0..steps {
        let y = points.last().unwrap();
        let prev = tangents.last().unwrap();
        let step = (|| -> Result<(Vec<f64>, Vec<f64>)> {
            let k1 = oriented_kernel(form, cs, y, prev)?;
            let k2 = oriented_kernel(form, cs, &axpy(y, 0.5 * ds, &k1), &k1)?;
            let k3 = oriented_kernel(form, cs, &axpy(y, 0.5 * ds, &k2), &k2)?;
            let k4 = oriented_kernel(form, cs, &axpy(y, ds, &k3), &k3)?;
            let next: Vec<f64> =
                (0..y.len()).map(|i| y[i] + ds / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
            let t = oriented_kernel(form, cs, &next, &k4)?;
            Ok((next, t))
        })();
        match step {
            Ok((next, t)) => {
                points.push(next);
                tangents.push(t);
            }
            Err(e) => {
                stop_reason = Some(e.to_string());
                break;
            }
        }
    }
    let arc = (0..points.len()).map(|i| i as f64 * ds).collect();
    let poly = if points.len() >= 3 { polyline_tangents(&points, ds) } else { tangents.clone() };
    let mut residual = 0.0f64;
    for (p, t) in points.iter().zip(&poly) {
        residual = residual.max(annihilation_residual(form, cs, p, t)?);
    }
    Ok(VortexLine { points, arc, tangents, residual, complete: stop_reason.is_none(), stop_reason })
}

#[derive(Clone, Debug)]
pub struct LineAdvectionOptions {
    pub trace: TraceOptions,
    /// Threshold on `|L_v form| / |form|` for the precondition.
    pub lie_tol: f64,
    pub tolerance: f64,
    pub exec: Exec,
}

impl Default for LineAdvectionOptions {
    fn default() -> Self {
        Self { trace: TraceOptions::default(), lie_tol: 1e-4, tolerance: 1e-4, exec: Exec::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineAdvectionReport {
    pub t: f64,
    pub lie_residual: f64,
    /// Hausdorff distance between the advected line and the line retraced
    /// from the advected seed.
    pub distance: f64,
    /// Annihilation residual of the advected line's tangents.
    pub residual: f64,
    pub advected: Vec<Vec<f64>>,
    pub retraced: Vec<Vec<f64>>,
    pub tolerance: f64,
    pub pass: bool,
}

/// Helmholtz line check: trace a line at `seed` and push every node through
/// the flow of `v` for time `t` (path A); retrace from the image of the seed
/// (path B); compare.
pub fn check_lines_move_with_fluid(
    v: &VectorField,
    form: &DifferentialForm,
    seed: &[f64],
    t: f64,
    length: f64,
    opts: &LineAdvectionOptions,
) -> Result<LineAdvectionReport> {
    let line = trace_vortex_line(form, seed, length, Direction::Forward, &opts.trace)?;
    let stride = (line.points.len() / 10).max(1);
    let probes: Vec<Vec<f64>> = line.points.iter().step_by(stride).cloned().collect();
    let lie_residual = lie_invariance_residual(v, form, &probes, opts.exec)?;
    if lie_residual > opts.lie_tol {
        return Err(Error::NotLieInvariant { residual: lie_residual });
    }
    let flow = FlowMap::new(v, t);
    let advected = opts.exec.try_map(&line.points, |p| flow.apply(p))?;
    let ds = line.arc.get(1).copied().unwrap_or(1.0);
    let pushed = polyline_tangents(&advected, ds);
    let mut residual = 0.0f64;
    for (p, w) in advected.iter().zip(&pushed) {
        residual = residual.max(annihilation_residual(form, &opts.trace.constraints, p, w)?);
    }
    // the identity flow leaves the line as traced
    let length_b = if t == 0.0 { length } else { polyline_length(&advected) };
    let trace_b = TraceOptions { reference: pushed.first().cloned(), ..opts.trace.clone() };
    let retraced = trace_vortex_line(form, &advected[0], length_b, Direction::Forward, &trace_b)?;
    let distance = hausdorff(&advected, &retraced.points);
    Ok(LineAdvectionReport {
        t,
        lie_residual,
        distance,
        residual,
        advected,
        retraced: retraced.points,
        tolerance: opts.tolerance,
        pass: distance < opts.tolerance && residual < opts.tolerance,
    })
}

/// A generalised tube: the `(k+1)`-chain `transversal` with boundary
/// `seed_cycle`, swept along a field `field` lying in the kernel.
#[derive(Clone, Debug)]
pub struct TubeSpec {
    pub seed_cycle: Chain,
    pub transversal: Chain,
    pub field: VectorField,
}

impl TubeSpec {
    /// Checks `boundary(transversal) = seed_cycle` with probe forms.
    pub fn new(seed_cycle: Chain, transversal: Chain, field: VectorField) -> Result<Self> {
        if transversal.degree() != seed_cycle.degree() + 1 {
            return Err(Error::InvalidDegree(format!(
                "transversal of degree {} for a {}-cycle",
                transversal.degree(),
                seed_cycle.degree()
            )));
        }
        let diff = boundary(&transversal)?.plus(&seed_cycle.clone().negate())?;
        let space = if transversal.is_extended() {
            Space::extended(transversal.ambient_dim() - 1)
        } else {
            Space::euclidean(transversal.ambient_dim())
        };
        for probe in probe_forms(&space, seed_cycle.degree())? {
            let value = integrate_with(Exec::Sequential, &probe, &diff)?;
            if value.abs() >= CYCLE_TOL {
                return Err(Error::NotACycle { probe: probe.label().to_string(), value });
            }
        }
        Ok(Self { seed_cycle, transversal, field })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TubeOptions {
    pub tolerance: f64,
    /// Threshold on the relative `|i_W form|` for the precondition.
    pub kernel_tol: f64,
    pub samples: usize,
    /// Step rule for the flow along the kernel field.
    pub rule: StepRule,
    pub exec: Exec,
}

impl Default for TubeOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            kernel_tol: 1e-6,
            samples: 3,
            rule: StepRule { max_step: 1e-2, min_steps: 10 },
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TubeReport {
    pub s: f64,
    pub flux_start: f64,
    pub flux_end: f64,
    pub difference: f64,
    pub kernel_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Flux of `form` through the transversal and through its image under the
/// flow of the tube field for parameter `s`.
pub fn check_tube_strength(form: &DifferentialForm, tube: &TubeSpec, s: f64, opts: &TubeOptions) -> Result<TubeReport> {
    let flow = FlowMap::new(&tube.field, s).with_rule(opts.rule);
    let end = advect_chain_with(&flow, &tube.transversal)?;
    let mut points = tube.transversal.sample_points(opts.samples)?;
    points.extend(end.sample_points(opts.samples)?);
    let checks = opts.exec.try_map(&points, |x| {
        let w = tube.field.eval(x)?;
        let r = annihilation_residual(form, &[], x, w.comps())?;
        let frame = kernel_at(form, x, &[])?;
        Ok((r, frame.rank_form, x.clone()))
    })?;
    let kernel_residual = checks.iter().fold(0.0f64, |m, c| m.max(c.0));
    if kernel_residual > opts.kernel_tol {
        return Err(Error::NotInKernel { residual: kernel_residual });
    }
    if let Some(bad) = checks.iter().find(|c| c.1 != checks[0].1) {
        return Err(Error::RankInstability { expected: checks[0].1, found: bad.1, point: bad.2.clone() });
    }
    let flux_start = integrate_with(opts.exec, form, &tube.transversal)?;
    let flux_end = integrate_with(opts.exec, form, &end)?;
    let difference = (flux_end - flux_start).abs();
    Ok(TubeReport {
        s,
        flux_start,
        flux_end,
        difference,
        kernel_residual,
        tolerance: opts.tolerance,
        pass: difference < opts.tolerance,
    })
}

#[derive(Clone, Debug)]
pub struct SurfaceOptions {
    pub per_axis: usize,
    pub constraints: Vec<DifferentialForm>,
    pub rule: StepRule,
    /// Parameter step for mesh tangents.
    pub tangent_step: f64,
    pub exec: Exec,
}

impl Default for SurfaceOptions {
    fn default() -> Self {
        Self {
            per_axis: 9,
            constraints: Vec::new(),
            rule: StepRule { max_step: 1e-2, min_steps: 10 },
            tangent_step: 1e-4,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurfaceNode {
    pub params: Vec<f64>,
    pub point: Vec<f64>,
    pub tangents: Vec<Vec<f64>>,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntegralSurface {
    pub dim: usize,
    pub extent: f64,
    pub per_axis: usize,
    pub nodes: Vec<SurfaceNode>,
    pub frobenius: f64,
    pub max_residual: f64,
    /// False if some nodes could not be reached (rank change, domain exit).
    pub complete: bool,
    pub failures: Vec<String>,
}

struct FrameFlows {
    flows: Vec<FlowMap>,
}

impl FrameFlows {
    /// `Phi^{W_m}_{u_m} o ... o Phi^{W_1}_{u_1}(seed)`
    fn compose(&self, seed: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut x = seed.to_vec();
        for (flow, ui) in self.flows.iter().zip(u) {
            if *ui != 0.0 {
                x = flow.with_duration(*ui).apply(&x)?;
            }
        }
        Ok(x)
    }
}

/// Grows the integral manifold of `D` through `seed` on the parameter grid
/// `[-extent, extent]^m` by composing the flows of the frame fields in
/// order.
pub fn trace_integral_surface(
    form: &DifferentialForm,
    seed: &[f64],
    extent: f64,
    opts: &SurfaceOptions,
) -> Result<IntegralSurface> {
    let cs = &opts.constraints;
    let frame = kernel_at(form, seed, cs)?;
    if frame.degenerate {
        return Err(Error::DegenerateForm { point: seed.to_vec() });
    }
    let m = frame.dim();
    if m == 0 {
        return Err(Error::KernelDimension { expected: 1, found: 0, point: seed.to_vec() });
    }
    let frobenius = frobenius_residual(form, seed, cs)?;
    let seeds: Vec<Vec<f64>> = frame.basis.iter().map(|b| b.comps().to_vec()).collect();
    let flows = (0..m)
        .map(|i| Ok(FlowMap::new(&VectorField::kernel_frame(form, cs, seeds.clone(), i)?, 0.0).with_rule(opts.rule)))
        .collect::<Result<Vec<_>>>()?;
    let frame_flows = FrameFlows { flows };
    let per_axis = opts.per_axis.max(2);
    let grid: Vec<Vec<f64>> = (0..per_axis.pow(m as u32))
        .map(|flat| {
            let mut rem = flat;
            (0..m)
                .map(|_| {
                    let i = rem % per_axis;
                    rem /= per_axis;
                    -extent + 2.0 * extent * i as f64 / (per_axis - 1) as f64
                })
                .collect()
        })
        .collect();
    let results = opts.exec.map(&grid, |u| -> Result<SurfaceNode> {
        let point = frame_flows.compose(seed, u)?;
        let mut tangents = Vec::with_capacity(m);
        for i in 0..m {
            if i == m - 1 {
                tangents.push(frame_flows.flows[i].field().eval_raw(&point)?);
                continue;
            }
            let h = opts.tangent_step;
            let mut up = u.clone();
            up[i] = u[i] + h;
            let plus = frame_flows.compose(seed, &up)?;
            up[i] = u[i] - h;
            let minus = frame_flows.compose(seed, &up)?;
            let span = (u[i] + h) - (u[i] - h);
            tangents.push(plus.iter().zip(&minus).map(|(a, b)| (a - b) / span).collect());
        }
        let mut residual = 0.0f64;
        for t in &tangents {
            residual = residual.max(annihilation_residual(form, cs, &point, t)?);
        }
        Ok(SurfaceNode { params: u.clone(), point, tangents, residual })
    });
    let mut nodes = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(node) => nodes.push(node),
            Err(e) => failures.push(e.to_string()),
        }
    }
    let max_residual = nodes.iter().fold(0.0f64, |acc, n| acc.max(n.residual));
    Ok(IntegralSurface {
        dim: m,
        extent,
        per_axis,
        nodes,
        frobenius,
        max_residual,
        complete: failures.is_empty(),
        failures,
    })
}

#[derive(Clone, Debug)]
pub struct SurfaceAdvectionOptions {
    pub constraints: Vec<DifferentialForm>,
    pub tolerance: f64,
    pub angle_tol: f64,
    pub lie_tol: f64,
    pub exec: Exec,
}

impl Default for SurfaceAdvectionOptions {
    fn default() -> Self {
        Self { constraints: Vec::new(), tolerance: 1e-5, angle_tol: 1e-4, lie_tol: 1e-4, exec: Exec::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurfaceAdvectionReport {
    pub t: f64,
    pub nodes: usize,
    pub lie_residual: f64,
    /// Largest annihilation residual of the pushed-forward mesh tangents.
    pub max_residual: f64,
    /// Largest principal angle between pushed-forward tangent spans and the
    /// kernel at the image point.
    pub max_angle: f64,
    pub images: Vec<Vec<f64>>,
    pub tolerance: f64,
    pub pass: bool,
}

/// Pushes an integral surface through the flow of `v` and checks that it
/// is still an integral surface of the kernel.
pub fn check_surface_advection(
    v: &VectorField,
    form: &DifferentialForm,
    surface: &IntegralSurface,
    t: f64,
    opts: &SurfaceAdvectionOptions,
) -> Result<SurfaceAdvectionReport> {
    let points: Vec<Vec<f64>> = surface.nodes.iter().map(|n| n.point.clone()).collect();
    let lie_residual = lie_invariance_residual(v, form, &points, opts.exec)?;
    if lie_residual > opts.lie_tol {
        return Err(Error::NotLieInvariant { residual: lie_residual });
    }
    let flow = FlowMap::new(v, t);
    let per_node = opts.exec.try_map(&surface.nodes, |node| {
        let image = flow.apply(&node.point)?;
        let jac = flow.jacobian(&node.point)?;
        let pushed: Vec<Vector> = node
            .tangents
            .iter()
            .map(|w| Vector::from((&jac * nalgebra::DVector::from_column_slice(w)).iter().copied().collect::<Vec<_>>()))
            .collect();
        let mut residual = 0.0f64;
        for w in &pushed {
            residual = residual.max(annihilation_residual(form, &opts.constraints, &image, w.comps())?);
        }
        let frame = kernel_at(form, &image, &opts.constraints)?;
        let angle = max_principal_angle(&pushed, &frame.basis);
        Ok((image, residual, angle))
    })?;
    let max_residual = per_node.iter().fold(0.0f64, |m, n| m.max(n.1));
    let max_angle = per_node.iter().fold(0.0f64, |m, n| m.max(n.2));
    Ok(SurfaceAdvectionReport {
        t,
        nodes: per_node.len(),
        lie_residual,
        max_residual,
        max_angle,
        images: per_node.into_iter().map(|n| n.0).collect(),
        tolerance: opts.tolerance,
        pass: max_residual < opts.tolerance && max_angle < opts.angle_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::form::exterior_derivative;
    use crate::tensor::AltTensor;
    use proptest::prelude::*;

    fn abc() -> (Space, VectorField, DifferentialForm) {
        let s = Space::euclidean(3);
        let v = VectorField::analytic(&s, &["sin(z) + cos(y)", "sin(x) + cos(z)", "sin(y) + cos(x)"]).unwrap();
        let dv = exterior_derivative(&DifferentialForm::flat(&v)).unwrap();
        (s, v, dv)
    }

    fn r5() -> (Space, DifferentialForm) {
        let s = Space::euclidean(5);
        (s.clone(), DifferentialForm::basis(&s, &[0, 1, 2]).unwrap())
    }

    fn parallel(a: &[f64], b: &[f64]) -> f64 {
        max_principal_angle(&[Vector::from(a.to_vec())], &[Vector::from(b.to_vec())])
    }

    #[test]
    fn area_form_in_three_dimensions() {
        let s = Space::euclidean(3);
        let f = DifferentialForm::basis(&s, &[0, 1]).unwrap();
        let k = kernel_at(&f, &[0.3, -1.0, 2.0], &[]).unwrap();
        assert_eq!(k.rank_form, 2);
        assert_eq!(k.basis.len(), 1);
        assert_eq!(k.basis[0].comps(), &[0.0, 0.0, 1.0]);
        assert!(!k.degenerate);
    }

    #[test]
    fn oscillator_kernel_is_the_flow_direction() {
        let s = Space::extended(2).with_vars(&["q", "p", "t"]).unwrap();
        let sigma = DifferentialForm::one_form(&s, &["p", "0", "-(q^2 + p^2)/2"]).unwrap();
        let ds = exterior_derivative(&sigma).unwrap();
        let k = kernel_at(&ds, &[1.0, 0.0, 0.0], &[]).unwrap();
        assert_eq!((k.rank_form, k.dim()), (2, 1));
        assert!(parallel(k.basis[0].comps(), &[0.0, -1.0, 1.0]) < 1e-9);
    }

    #[test]
    fn abc_kernel_is_vorticity() {
        let (_, v, dv) = abc();
        for x in [[0.1, 0.7, -0.4], [1.3, -2.0, 0.5], [2.2, 0.0, 3.1]] {
            let k = kernel_at(&dv, &x, &[]).unwrap();
            assert_eq!(k.dim(), 1);
            let p = parallel(k.basis[0].comps(), v.eval(&x).unwrap().comps());
            assert!(p < 1e-8, "{p}");
        }
    }

    #[test]
    fn constraint_rows_cut_the_kernel() {
        let s = Space::extended(2).with_vars(&["q", "p", "t"]).unwrap();
        let sigma = DifferentialForm::one_form(&s, &["p", "0", "-(q^2 + p^2)/2"]).unwrap();
        let ds = exterior_derivative(&sigma).unwrap();
        let dt = DifferentialForm::dt(&s).unwrap();
        let k = kernel_at(&ds, &[1.0, 0.0, 0.0], &[dt]).unwrap();
        assert_eq!((k.rank_form, k.constraint_rank, k.dim()), (2, 1, 0));
    }

    #[test]
    fn vanishing_form_is_flagged() {
        let s = Space::euclidean(3);
        let f = DifferentialForm::analytic(&s, 2, &["x", "0", "0"]).unwrap();
        let k = kernel_at(&f, &[0.0, 1.0, 1.0], &[]).unwrap();
        assert!(k.degenerate);
        assert_eq!((k.rank_form, k.dim()), (0, 3));
    }

    proptest! {
        #[test]
        fn rank_nullity_and_kernel_quality(comps in proptest::collection::vec(-2.0f64..2.0, 10), lowrank in any::<bool>()) {
            // random 2-form on R^5, optionally decomposable
            let value = if lowrank {
                let a = AltTensor::covector(comps[..5].to_vec());
                let b = AltTensor::covector(comps[5..].to_vec());
                crate::tensor::wedge(&a, &b).unwrap()
            } else {
                AltTensor::from_comps(5, 2, comps.clone()).unwrap()
            };
            prop_assume!(value.norm() > 1e-3);
            let s = Space::euclidean(5);
            let f = DifferentialForm::constant(&s, value.clone()).unwrap();
            let k = kernel_at(&f, &[0.0; 5], &[]).unwrap();
            prop_assert_eq!(k.dim() + k.rank_form + k.constraint_rank, 5);
            prop_assert!(k.rank_form % 2 == 0);
            for w in &k.basis {
                prop_assert!(interior(w, &value).unwrap().norm() <= 1e-6 * value.norm());
                prop_assert!((w.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decomposable_dimension_report() {
        let (_, f) = r5();
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.3; 5]).collect();
        let r = dimension_report(&f, &pts, &[], Exec::Sequential).unwrap();
        assert_eq!(r.kernel_dim, Some(2));
        assert!(r.constant_rank && r.bound_holds && r.bound_attained);
        assert_eq!(r.bound, 2);
        assert_eq!(r.samples[0].rank_form, 3);
    }

    #[test]
    fn rank_jump_is_flagged() {
        let s = Space::euclidean(5);
        // x1 dx1^dx2^dx3 vanishes on the hyperplane x1 = 0
        let mut comps = vec!["0"; 10];
        comps[0] = "x1";
        let f = DifferentialForm::analytic(&s, 3, &comps).unwrap();
        let pts = vec![vec![1.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 0.5, 0.5, 0.0, 0.0]];
        let r = dimension_report(&f, &pts, &[], Exec::Sequential).unwrap();
        assert!(!r.constant_rank);
        assert_eq!(r.kernel_dim, None);
        assert_eq!(r.samples[1].rank_form, 0);
        assert!(r.samples[1].degenerate);
    }

    #[test]
    fn frobenius_of_coordinate_distribution() {
        let (_, f) = r5();
        assert!(frobenius_residual(&f, &[0.2, -0.1, 0.4, 1.0, 2.0], &[]).unwrap() < 1e-8);
        let (_, _, dv) = abc();
        assert_eq!(frobenius_residual(&dv, &[0.1, 0.2, 0.3], &[]).unwrap(), 0.0);
    }

    #[test]
    fn frobenius_detects_contact_structure() {
        // dz - y dx has non-integrable kernel; i_w (dz - y dx) as a 1-form
        let s = Space::euclidean(3);
        let contact = DifferentialForm::one_form(&s, &["-y", "0", "1"]).unwrap();
        let r = frobenius_residual(&contact, &[0.1, 0.2, 0.3], &[]).unwrap();
        assert!(r > 0.1, "{r}");
    }

    #[test]
    fn rigid_rotation_vortex_line_is_vertical() {
        let s = Space::euclidean(3);
        let v = VectorField::analytic(&s, &["-y", "x", "0"]).unwrap();
        let dv = exterior_derivative(&DifferentialForm::flat(&v)).unwrap();
        let line = trace_vortex_line(&dv, &[1.0, 0.0, 0.0], 1.0, Direction::Forward, &TraceOptions::default()).unwrap();
        assert!(line.complete);
        for p in &line.points {
            assert!((p[0] - 1.0).abs() < 1e-9 && p[1].abs() < 1e-9);
        }
        assert!((line.points.last().unwrap()[2] - 1.0).abs() < 1e-9);
        assert!(line.residual < 1e-8);
        let back =
            trace_vortex_line(&dv, &[1.0, 0.0, 0.0], 1.0, Direction::Backward, &TraceOptions::default()).unwrap();
        assert!((back.points.last().unwrap()[2] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn abc_vortex_lines_are_streamlines() {
        let (_, v, dv) = abc();
        let seed = [0.3, -0.2, 0.9];
        let line = trace_vortex_line(&dv, &seed, 2.0, Direction::Forward, &TraceOptions::default()).unwrap();
        assert!(line.residual < 1e-5, "{}", line.residual);
        // streamline by unit-speed field
        let s = v.space().clone();
        let vc = v.clone();
        let unit = VectorField::native(&s, "unit v", move |x| {
            let w = vc.eval_raw(x).unwrap();
            let n = norm(&w);
            w.iter().map(|c| c / n).collect()
        });
        let flow = FlowMap::new(&unit, 0.0);
        let stream: Vec<Vec<f64>> = line.arc.iter().map(|a| flow.with_duration(*a).apply(&seed).unwrap()).collect();
        assert!(hausdorff(&stream, &line.points) < 1e-5);
    }

    #[test]
    fn zero_vorticity_seed_is_rejected() {
        let s = Space::euclidean(3);
        // vorticity (0, 0, 2(x^2 + y^2)) vanishes on the axis
        let v = VectorField::analytic(&s, &["-y*(x^2 + y^2)/2", "x*(x^2 + y^2)/2", "0"]).unwrap();
        let dv = exterior_derivative(&DifferentialForm::flat(&v)).unwrap();
        let r = trace_vortex_line(&dv, &[0.0, 0.0, 0.0], 1.0, Direction::Forward, &TraceOptions::default());
        assert!(matches!(r, Err(Error::DegenerateForm { .. })), "{r:?}");
    }

    #[test]
    fn helmholtz_lines_abc() {
        let (_, v, dv) = abc();
        let r = check_lines_move_with_fluid(&v, &dv, &[0.3, -0.2, 0.9], 0.5, 1.0, &LineAdvectionOptions::default())
            .unwrap();
        assert!(r.pass, "distance {} residual {}", r.distance, r.residual);
        let r0 = check_lines_move_with_fluid(&v, &dv, &[0.3, -0.2, 0.9], 0.0, 1.0, &LineAdvectionOptions::default())
            .unwrap();
        assert_eq!(r0.distance, 0.0);
    }

    #[test]
    fn strain_field_fails_lie_precondition() {
        let s = Space::euclidean(3);
        let v = VectorField::analytic(&s, &["x", "-y", "x"]).unwrap();
        let dv = exterior_derivative(&DifferentialForm::flat(&v)).unwrap();
        let r = check_lines_move_with_fluid(&v, &dv, &[0.3, 0.2, 0.1], 0.5, 0.5, &LineAdvectionOptions::default());
        assert!(matches!(r, Err(Error::NotLieInvariant { .. })), "{r:?}");
    }

    #[test]
    fn rigid_rotation_tube() {
        let s = Space::euclidean(3);
        let v = VectorField::analytic(&s, &["-y", "x", "0"]).unwrap();
        let dv = exterior_derivative(&DifferentialForm::flat(&v)).unwrap();
        let disc = Chain::disc(&s, vec![0.0; 3], 0.5, (0, 1)).unwrap();
        let circle = Chain::circle(&s, vec![0.0; 3], 0.5, (0, 1), 1).unwrap();
        let tube = TubeSpec::new(circle, disc, VectorField::coordinate(&s, 2).unwrap()).unwrap();
        let r = check_tube_strength(&dv, &tube, 1.0, &TubeOptions::default()).unwrap();
        let exact = 2.0 * std::f64::consts::PI * 0.25;
        assert!((r.flux_start - exact).abs() < 1e-6 && r.difference < 1e-7, "{r:?}");
        let r0 = check_tube_strength(&dv, &tube, 0.0, &TubeOptions::default()).unwrap();
        assert_eq!(r0.difference, 0.0);
        // a field with a component across the vortex lines is rejected
        let bad = TubeSpec { field: VectorField::coordinate(&s, 0).unwrap(), ..tube };
        assert!(matches!(check_tube_strength(&dv, &bad, 1.0, &TubeOptions::default()), Err(Error::NotInKernel { .. })));
    }

    #[test]
    fn tube_needs_matching_boundary() {
        let s = Space::euclidean(3);
        let disc = Chain::disc(&s, vec![0.0; 3], 0.5, (0, 1)).unwrap();
        let circle = Chain::circle(&s, vec![0.0; 3], 0.4, (0, 1), 1).unwrap();
        let r = TubeSpec::new(circle, disc, VectorField::coordinate(&s, 2).unwrap());
        assert!(matches!(r, Err(Error::NotACycle { .. })));
    }

    #[test]
    fn flat_integral_surface() {
        let (_, f) = r5();
        let surf = trace_integral_surface(&f, &[0.0; 5], 0.5, &SurfaceOptions::default()).unwrap();
        assert_eq!(surf.dim, 2);
        assert!(surf.complete);
        for n in &surf.nodes {
            assert!(n.point[..3].iter().all(|c| c.abs() < 1e-6));
        }
        assert!(surf.max_residual < 1e-6);
    }

    #[test]
    fn curved_integral_surface_lies_on_graph() {
        let s = Space::euclidean(4);
        // d(x3 + x1 x2) ^ dx4
        let f = DifferentialForm::analytic(&s, 2, &["0", "0", "x2", "0", "x1", "1"]).unwrap();
        let surf = trace_integral_surface(&f, &[0.0; 4], 0.5, &SurfaceOptions::default()).unwrap();
        assert_eq!(surf.dim, 2);
        assert!(surf.frobenius < 1e-6);
        for n in &surf.nodes {
            let p = &n.point;
            assert!((p[2] + p[0] * p[1]).abs() < 1e-5 && p[3].abs() < 1e-12, "{p:?}");
        }
        assert!(surf.max_residual < 1e-5, "{}", surf.max_residual);
    }

    #[test]
    fn one_dimensional_surface_matches_line() {
        let (_, _, dv) = abc();
        let seed = [0.3, -0.2, 0.9];
        let opts =
            SurfaceOptions { per_axis: 3, rule: StepRule { max_step: 5e-3, min_steps: 1 }, ..Default::default() };
        let surf = trace_integral_surface(&dv, &seed, 0.4, &opts).unwrap();
        let line = trace_vortex_line(&dv, &seed, 0.4, Direction::Forward, &TraceOptions::default()).unwrap();
        let end = &surf.nodes.last().unwrap().point;
        let d: f64 = end.iter().zip(line.points.last().unwrap()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-8, "{d}");
    }

    #[test]
    fn surface_advection_in_r5() {
        let (s, f) = r5();
        let v = VectorField::coordinate(&s, 3).unwrap();
        let surf = trace_integral_surface(&f, &[0.1, 0.2, 0.3, 0.0, 0.0], 0.5, &SurfaceOptions::default()).unwrap();
        let r = check_surface_advection(&v, &f, &surf, 0.7, &SurfaceAdvectionOptions::default()).unwrap();
        assert!(r.pass && r.max_residual < 1e-5, "{r:?}");
    }
}
