//! Flow maps of vector fields by fixed-step classical RK4.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::chain::{CellMap, Chain};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::form::fd_step;
use crate::tensor::Point;

/// Step selection: `h = t / N` with `N = max(ceil(|t| / max_step), min_steps)`,
/// i.e. `h = min(max_step, t / min_steps)` rounded to divide `t` evenly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepRule {
    pub max_step: f64,
    pub min_steps: usize,
}

impl Default for StepRule {
    fn default() -> Self {
        Self { max_step: 1e-3, min_steps: 100 }
    }
}

impl StepRule {
    pub fn steps(&self, duration: f64) -> usize {
        if duration == 0.0 {
            return 0;
        }
        ((duration.abs() / self.max_step).ceil() as usize).max(self.min_steps)
    }
}

/// `Phi_t` for a vector field.
#[derive(Clone, Debug)]
pub struct FlowMap {
    field: VectorField,
    duration: f64,
    rule: StepRule,
}

impl FlowMap {
    pub fn new(field: &VectorField, duration: f64) -> Self {
        Self { field: field.clone(), duration, rule: StepRule::default() }
    }

    pub fn with_rule(mut self, rule: StepRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn rule(&self) -> StepRule {
        self.rule
    }

    /// Same field and rule, different duration.
    pub fn with_duration(&self, duration: f64) -> Self {
        Self { duration, ..self.clone() }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        integrate(&self.field, x, self.duration, self.rule, None)
    }

    /// Central-difference Jacobian `d Phi_t^i / d x^j`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = x.len();
        let mut jac = DMatrix::zeros(n, n);
        if self.duration == 0.0 {
            jac.fill_with_identity();
            return Ok(jac);
        }
        let mut probe = x.to_vec();
        for j in 0..n {
            let h = fd_step(1, x[j]);
            probe[j] = x[j] + h;
            let plus = self.apply(&probe)?;
            probe[j] = x[j] - h;
            let minus = self.apply(&probe)?;
            probe[j] = x[j];
            let span = (x[j] + h) - (x[j] - h);
            for i in 0..n {
                jac[(i, j)] = (plus[i] - minus[i]) / span;
            }
        }
        Ok(jac)
    }

    /// The RK4 nodes of the trajectory starting at `x`.
    pub fn trajectory(&self, x: &[f64]) -> Result<Trajectory> {
        let mut samples = vec![(0.0, x.to_vec())];
        integrate(&self.field, x, self.duration, self.rule, Some(&mut samples))?;
        if self.duration < 0.0 {
            samples.reverse();
        }
        Ok(Trajectory { samples })
    }
}

fn rk4_step(field: &VectorField, x: &[f64], h: f64, elapsed: f64) -> Result<Vec<f64>> {
    let wrap = |e: Error, at: &[f64]| match e {
        Error::OutsideDomain { .. } => Error::DomainExit { location: at.to_vec(), time: elapsed },
        Error::NonFinite(_) => Error::StepFailure { time: elapsed },
        other => other,
    };
    let eval = |p: &[f64]| field.eval_raw(p).map_err(|e| wrap(e, p));
    let n = x.len();
    let k1 = eval(x)?;
    let p2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k1[i]).collect();
    let k2 = eval(&p2)?;
    let p3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k2[i]).collect();
    let k3 = eval(&p3)?;
    let p4: Vec<f64> = (0..n).map(|i| x[i] + h * k3[i]).collect();
    let k4 = eval(&p4)?;
    let next: Vec<f64> = (0..n).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
    if next.iter().any(|c| !c.is_finite()) {
        return Err(Error::StepFailure { time: elapsed });
    }
    Ok(next)
}

fn integrate(
    field: &VectorField,
    x: &[f64],
    duration: f64,
    rule: StepRule,
    mut record: Option<&mut Vec<(f64, Vec<f64>)>>,
) -> Result<Vec<f64>> {
    if x.len() != field.dim() {
        return Err(Error::DimensionMismatch { expected: field.dim(), found: x.len() });
    }
    if !duration.is_finite() {
        return Err(Error::InvalidArgument(format!("flow duration {duration}")));
    }
    let steps = rule.steps(duration);
    if steps == 0 {
        return Ok(x.to_vec());
    }
    let h = duration / steps as f64;
    if h == 0.0 || !h.is_finite() {
        return Err(Error::StepFailure { time: 0.0 });
    }
    let unit_time = field.has_unit_time();
    let t_axis = x.len() - 1;
    let t0 = x[t_axis];
    let mut cur = x.to_vec();
    for i in 0..steps {
        let elapsed = h * i as f64;
        cur = rk4_step(field, &cur, h, elapsed)?;
        let done = if i + 1 == steps { duration } else { h * (i + 1) as f64 };
        if unit_time {
            cur[t_axis] = t0 + done;
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.push((done, cur.clone()));
        }
    }
    Ok(cur)
}

/// Samples `(flow time, point)` along a trajectory, times increasing.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub samples: Vec<(f64, Vec<f64>)>,
}

impl Trajectory {
    /// Largest deviation between a centred difference of the samples and the
    /// field at interior samples.
    pub fn residual(&self, field: &VectorField) -> Result<f64> {
        let mut worst = 0.0f64;
        for w in self.samples.windows(3) {
            let (t0, a) = &w[0];
            let (_, b) = &w[1];
            let (t2, c) = &w[2];
            let v = field.eval_raw(b)?;
            for i in 0..a.len() {
                worst = worst.max(((c[i] - a[i]) / (t2 - t0) - v[i]).abs());
            }
        }
        Ok(worst)
    }
}

/// `Phi_t(x)`.
pub fn advect_point(v: &VectorField, x: &Point, t: f64) -> Result<Point> {
    Point::new(FlowMap::new(v, t).apply(x.coords())?)
}

/// Jacobian of `Phi_t` at `x`.
pub fn flow_map_jacobian(v: &VectorField, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
    FlowMap::new(v, t).jacobian(x)
}

/// Cell map composed with a flow; nodes are advected on demand.
pub(crate) struct AdvectedMap {
    pub base: Arc<dyn CellMap>,
    pub flow: FlowMap,
}

impl CellMap for AdvectedMap {
    fn eval(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.flow.apply(&self.base.eval(u)?)
    }
}

/// `Phi_t(c)`: every cell is composed lazily with the flow; orientation and
/// weights are preserved.
pub fn advect_chain(v: &VectorField, c: &Chain, t: f64) -> Result<Chain> {
    advect_chain_with(&FlowMap::new(v, t), c)
}

pub fn advect_chain_with(flow: &FlowMap, c: &Chain) -> Result<Chain> {
    if flow.field().dim() != c.ambient_dim() {
        return Err(Error::DimensionMismatch { expected: c.ambient_dim(), found: flow.field().dim() });
    }
    if flow.duration() == 0.0 {
        return Ok(c.clone());
    }
    Ok(c.map_cells(|base| Arc::new(AdvectedMap { base, flow: flow.clone() })))
}
