//! Differential forms as evaluable fields, built compositionally.
//!
//! Derived forms (`d a`, `i_v a`, `phi^* a`, ...) are nodes in an immutable
//! expression tree and recompute everything on each evaluation. Partial
//! derivatives are central differences; the step grows with the number of
//! finite-difference operators already nested inside the differentiated
//! form, so that rounding noise from inner stencils is not amplified past
//! the truncation error of the outer one.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::VectorField;
use crate::flow::FlowMap;
use crate::space::Space;
use crate::tensor::{self, binomial, combination_index, combinations, AltTensor, Vector};

type NativeForm = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Base relative step for a first derivative.
pub const BASE_STEP: f64 = 1e-5;

/// Central-difference step for the `order`-th nested derivative at a
/// coordinate of magnitude `x`: `1e-5` for first derivatives and
/// `eps^(1/(order+2))` beyond.
pub fn fd_step(order: usize, x: f64) -> f64 {
    let base = if order <= 1 { BASE_STEP } else { f64::EPSILON.powf(1.0 / (order as f64 + 2.0)) };
    base * x.abs().max(1.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Differencing {
    #[default]
    Central,
    /// Central differences at `h` and `h/2` combined to cancel the `h^2` term.
    Richardson,
}

#[derive(Clone)]
enum FormKind {
    Exprs(Vec<Expr>),
    Native(NativeForm),
    Constant(AltTensor),
    Sum(Vec<(f64, DifferentialForm)>),
    Wedge(DifferentialForm, DifferentialForm),
    Exterior {
        form: DifferentialForm,
        spatial: bool,
        scheme: Differencing,
    },
    Interior {
        field: VectorField,
        form: DifferentialForm,
    },
    Pullback {
        flow: FlowMap,
        form: DifferentialForm,
    },
    /// pullback by the projection `M x R -> M`
    Lift(DifferentialForm),
    /// drops every component containing `dt`
    SpatialPart(DifferentialForm),
    /// `v . dr` for the Euclidean metric
    Flat(VectorField),
}

struct FormNode {
    space: Space,
    degree: usize,
    kind: FormKind,
    label: String,
}

/// A degree-`k` differential form on `R^n` or `R^n x R`.
#[derive(Clone)]
pub struct DifferentialForm(Arc<FormNode>);

impl fmt::Debug for DifferentialForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DifferentialForm({}, degree {}, dim {})", self.0.label, self.degree(), self.dim())
    }
}

fn check_degree(space: &Space, degree: usize) -> Result<()> {
    if degree > space.dim() {
        return Err(Error::DegreeOverflow { degree, dim: space.dim() });
    }
    Ok(())
}

impl DifferentialForm {
    fn node(space: Space, degree: usize, kind: FormKind, label: impl Into<String>) -> Self {
        Self(Arc::new(FormNode { space, degree, kind, label: label.into() }))
    }

    /// Components as expressions, one per increasing index combination in
    /// lexicographic order.
    pub fn analytic(space: &Space, degree: usize, comps: &[&str]) -> Result<Self> {
        check_degree(space, degree)?;
        let expected = binomial(space.dim(), degree);
        if comps.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: comps.len() });
        }
        let vars = space.vars();
        let exprs = comps.iter().map(|c| Expr::parse(c, &vars)).collect::<Result<Vec<_>>>()?;
        Ok(Self::node(space.clone(), degree, FormKind::Exprs(exprs), comps.join(" | ")))
    }

    /// Scalar function (0-form) from an expression.
    pub fn scalar(space: &Space, expr: &str) -> Result<Self> {
        Self::analytic(space, 0, &[expr])
    }

    /// 1-form `sum_i c_i dx^i` from expressions.
    pub fn one_form(space: &Space, comps: &[&str]) -> Result<Self> {
        Self::analytic(space, 1, comps)
    }

    pub fn native<F>(space: &Space, degree: usize, label: &str, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        check_degree(space, degree)?;
        Ok(Self::node(space.clone(), degree, FormKind::Native(Arc::new(f)), label))
    }

    pub fn constant(space: &Space, value: AltTensor) -> Result<Self> {
        if value.dim() != space.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), found: value.dim() });
        }
        let degree = value.degree();
        Ok(Self::node(space.clone(), degree, FormKind::Constant(value), "const"))
    }

    pub fn zero(space: &Space, degree: usize) -> Result<Self> {
        Self::constant(space, AltTensor::zeros(space.dim(), degree)?)
    }

    /// `dx^{i_1} ^ .. ^ dx^{i_k}`
    pub fn basis(space: &Space, indices: &[usize]) -> Result<Self> {
        Self::constant(space, AltTensor::basis(space.dim(), indices)?)
    }

    /// The 1-form `dt` of an extended space.
    pub fn dt(space: &Space) -> Result<Self> {
        let t = space.time_axis().ok_or(Error::NotExtended)?;
        Self::basis(space, &[t])
    }

    /// Velocity 1-form `v . dr` (Euclidean flat).
    pub fn flat(v: &VectorField) -> Self {
        Self::node(v.space().clone(), 1, FormKind::Flat(v.clone()), format!("flat {}", v.label()))
    }

    pub fn with_label(&self, label: &str) -> Self {
        Self::node(self.0.space.clone(), self.0.degree, self.0.kind.clone(), label)
    }

    pub fn space(&self) -> &Space {
        &self.0.space
    }

    pub fn dim(&self) -> usize {
        self.0.space.dim()
    }

    pub fn degree(&self) -> usize {
        self.0.degree
    }

    pub fn is_extended(&self) -> bool {
        self.0.space.is_extended()
    }

    pub fn label(&self) -> &str {
        &self.0.label
    }

    pub(crate) fn fd_depth(&self) -> usize {
        match &self.0.kind {
            FormKind::Exprs(_) | FormKind::Native(_) | FormKind::Constant(_) => 0,
            FormKind::Sum(ts) => ts.iter().map(|(_, f)| f.fd_depth()).max().unwrap_or(0),
            FormKind::Wedge(a, b) => a.fd_depth().max(b.fd_depth()),
            FormKind::Exterior { form, .. } => form.fd_depth() + 1,
            FormKind::Interior { field, form } => field.fd_depth().max(form.fd_depth()),
            FormKind::Pullback { flow, form } => (flow.field().fd_depth() + 1).max(form.fd_depth()),
            FormKind::Lift(f) | FormKind::SpatialPart(f) => f.fd_depth(),
            FormKind::Flat(v) => v.fd_depth(),
        }
    }

    // ---- algebra ------------------------------------------------------

    pub fn sum(terms: &[(f64, DifferentialForm)]) -> Result<Self> {
        let (_, first) = terms.first().ok_or_else(|| Error::InvalidArgument("empty sum".into()))?;
        let mut space = first.space().clone();
        for (_, f) in &terms[1..] {
            if f.degree() != first.degree() {
                return Err(Error::InvalidDegree(format!(
                    "cannot add forms of degree {} and {}",
                    first.degree(),
                    f.degree()
                )));
            }
            space = space.join(f.space())?;
        }
        Ok(Self::node(space, first.degree(), FormKind::Sum(terms.to_vec()), "sum"))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::sum(&[(1.0, self.clone()), (1.0, other.clone())])
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Self::sum(&[(1.0, self.clone()), (-1.0, other.clone())])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::node(self.0.space.clone(), self.0.degree, FormKind::Sum(vec![(s, self.clone())]), "scaled")
    }

    pub fn wedge(&self, other: &Self) -> Result<Self> {
        let space = self.space().join(other.space())?;
        let degree = self.degree() + other.degree();
        check_degree(&space, degree)?;
        let label = format!("({}) ^ ({})", self.label(), other.label());
        Ok(Self::node(space, degree, FormKind::Wedge(self.clone(), other.clone()), label))
    }

    pub fn interior(&self, v: &VectorField) -> Result<Self> {
        if !v.space().same_shape(self.space()) {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: v.dim() });
        }
        if self.degree() == 0 {
            return Err(Error::InvalidDegree("interior product of a 0-form".into()));
        }
        let space = self.space().join(v.space())?;
        let label = format!("i_[{}] ({})", v.label(), self.label());
        Ok(Self::node(space, self.degree() - 1, FormKind::Interior { field: v.clone(), form: self.clone() }, label))
    }

    /// Pullback `pi^*` of a form on `M` to `M x R`.
    pub fn lift(&self, extended: &Space) -> Result<Self> {
        if self.is_extended() || !extended.is_extended() || extended.spatial_dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim() + 1, found: extended.dim() });
        }
        Ok(Self::node(extended.clone(), self.degree(), FormKind::Lift(self.clone()), format!("lift {}", self.label())))
    }

    /// The part of the form free of `dt`.
    pub fn spatial_part(&self) -> Result<Self> {
        if !self.is_extended() {
            return Err(Error::NotExtended);
        }
        Ok(Self::node(
            self.space().clone(),
            self.degree(),
            FormKind::SpatialPart(self.clone()),
            format!("spatial {}", self.label()),
        ))
    }

    // ---- evaluation ---------------------------------------------------

    pub fn eval(&self, x: &[f64]) -> Result<AltTensor> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: x.len() });
        }
        let k = self.degree();
        let out = match &self.0.kind {
            FormKind::Exprs(es) => {
                self.0.space.domain().check(x)?;
                AltTensor::from_comps(n, k, es.iter().map(|e| e.eval(x)).collect())?
            }
            FormKind::Native(f) => {
                self.0.space.domain().check(x)?;
                AltTensor::from_comps(n, k, f(x))?
            }
            FormKind::Constant(c) => {
                self.0.space.domain().check(x)?;
                c.clone()
            }
            FormKind::Sum(ts) => {
                let mut acc = AltTensor::zeros(n, k)?;
                for (s, f) in ts {
                    acc = acc.axpy(*s, &f.eval(x)?)?;
                }
                acc
            }
            FormKind::Wedge(a, b) => tensor::wedge(&a.eval(x)?, &b.eval(x)?)?,
            FormKind::Interior { field, form } => tensor::interior(&field.eval(x)?, &form.eval(x)?)?,
            FormKind::Exterior { form, spatial, scheme } => self.eval_exterior(form, *spatial, *scheme, x)?,
            FormKind::Pullback { flow, form } => {
                let y = flow.apply(x)?;
                let jac = flow.jacobian(x)?;
                tensor::pullback_linear(&form.eval(&y)?, &jac)?
            }
            FormKind::Lift(inner) => {
                self.0.space.domain().check(x)?;
                let a = inner.eval(&x[..n - 1])?;
                let mut out = AltTensor::zeros(n, k)?;
                for (i, idx) in combinations(n - 1, k).iter().enumerate() {
                    out.comps_mut()[combination_index(n, idx)] = a.comps()[i];
                }
                out
            }
            FormKind::SpatialPart(inner) => {
                let mut a = inner.eval(x)?;
                let t = n - 1;
                for (i, idx) in combinations(n, k).iter().enumerate() {
                    if idx.contains(&t) {
                        a.comps_mut()[i] = 0.0;
                    }
                }
                a
            }
            FormKind::Flat(v) => AltTensor::covector(v.eval_raw(x)?),
        };
        if out.comps().iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(x.to_vec()));
        }
        Ok(out)
    }

    fn eval_exterior(
        &self,
        inner: &DifferentialForm,
        spatial: bool,
        scheme: Differencing,
        x: &[f64],
    ) -> Result<AltTensor> {
        let n = self.dim();
        let k = inner.degree();
        let time_axis = self.space().time_axis();
        if spatial {
            let t = time_axis.ok_or(Error::NotExtended)?;
            let a = inner.eval(x)?;
            let stray = combinations(n, k)
                .iter()
                .enumerate()
                .filter(|(_, idx)| idx.contains(&t))
                .fold(0.0f64, |m, (i, _)| m.max(a.comps()[i].abs()));
            if stray > 1e-12 * a.max_abs().max(1.0) {
                return Err(Error::NotSpatial(stray));
            }
        }
        let order = inner.fd_depth() + 1;
        let axes: Vec<usize> = (0..n).filter(|&m| !(spatial && Some(m) == time_axis)).collect();
        let mut partials: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut probe = x.to_vec();
        for &m in &axes {
            let h = fd_step(order, x[m]);
            let mut central = |h: f64| -> Result<Vec<f64>> {
                probe[m] = x[m] + h;
                let plus = inner.eval(&probe)?;
                probe[m] = x[m] - h;
                let minus = inner.eval(&probe)?;
                probe[m] = x[m];
                // divide by the realised spacing, not the nominal step
                let span = (x[m] + h) - (x[m] - h);
                Ok(plus.comps().iter().zip(minus.comps()).map(|(p, q)| (p - q) / span).collect())
            };
            let d = match scheme {
                Differencing::Central => central(h)?,
                Differencing::Richardson => {
                    let coarse = central(h)?;
                    let fine = central(h / 2.0)?;
                    fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect()
                }
            };
            partials[m] = Some(d);
        }
        let mut out = AltTensor::zeros(n, k + 1)?;
        for (i, idx) in combinations(n, k + 1).iter().enumerate() {
            let mut acc = 0.0;
            for (j, &m) in idx.iter().enumerate() {
                let Some(dm) = &partials[m] else { continue };
                let rest: Vec<usize> = idx.iter().copied().filter(|&q| q != m).collect();
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * dm[combination_index(n, &rest)];
            }
            out.comps_mut()[i] = acc;
        }
        Ok(out)
    }

    /// Evaluates at a point of `R^n`.
    pub fn eval_at(&self, p: &crate::tensor::Point) -> Result<AltTensor> {
        self.eval(p.coords())
    }

    /// Evaluates at a point of `R^n x R`.
    pub fn eval_extended(&self, p: &crate::tensor::ExtendedPoint) -> Result<AltTensor> {
        if !self.is_extended() {
            return Err(Error::NotExtended);
        }
        self.eval(&p.to_flat())
    }
}

/// `d a`. A form of top degree has no successor and is rejected.
pub fn exterior_derivative(a: &DifferentialForm) -> Result<DifferentialForm> {
    exterior_derivative_with(a, Differencing::Central)
}

pub fn exterior_derivative_with(a: &DifferentialForm, scheme: Differencing) -> Result<DifferentialForm> {
    if a.degree() >= a.dim() {
        return Err(Error::DegreeOverflow { degree: a.degree() + 1, dim: a.dim() });
    }
    Ok(DifferentialForm::node(
        a.space().clone(),
        a.degree() + 1,
        FormKind::Exterior { form: a.clone(), spatial: false, scheme },
        format!("d({})", a.label()),
    ))
}

/// `L_v a = i_v da + d(i_v a)`.
pub fn lie_derivative(v: &VectorField, a: &DifferentialForm) -> Result<DifferentialForm> {
    lie_derivative_with(v, a, Differencing::Central)
}

pub fn lie_derivative_with(v: &VectorField, a: &DifferentialForm, scheme: Differencing) -> Result<DifferentialForm> {
    if !v.space().same_shape(a.space()) {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: v.dim() });
    }
    let mut terms = Vec::new();
    if a.degree() < a.dim() {
        terms.push((1.0, exterior_derivative_with(a, scheme)?.interior(v)?));
    }
    if a.degree() > 0 {
        terms.push((1.0, exterior_derivative_with(&a.interior(v)?, scheme)?));
    }
    Ok(DifferentialForm::sum(&terms)?.with_label(&format!("L_[{}] ({})", v.label(), a.label())))
}

/// `phi^* a` with the flow Jacobian by central differences.
pub fn pullback(phi: &FlowMap, a: &DifferentialForm) -> Result<DifferentialForm> {
    if !phi.field().space().same_shape(a.space()) {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: phi.field().dim() });
    }
    let label = format!("pullback t={} ({})", phi.duration(), a.label());
    Ok(DifferentialForm::node(
        phi.field().space().clone(),
        a.degree(),
        FormKind::Pullback { flow: phi.clone(), form: a.clone() },
        label,
    ))
}

/// `a = dt ^ s_hat + r_hat` with both parts free of `dt`.
#[derive(Clone, Debug)]
pub struct SpatialSplit {
    pub s_hat: Option<DifferentialForm>,
    pub r_hat: DifferentialForm,
}

impl SpatialSplit {
    /// `dt ^ s_hat + r_hat`
    pub fn reconstruct(&self) -> Result<DifferentialForm> {
        match &self.s_hat {
            Some(s) => DifferentialForm::dt(s.space())?.wedge(s)?.add(&self.r_hat),
            None => Ok(self.r_hat.clone()),
        }
    }
}

/// Splits a form on `M x R`; `s_hat = i_{d/dt} a` (absent for 0-forms) and
/// `r_hat` keeps the `dt`-free components.
pub fn split_extended(a: &DifferentialForm) -> Result<SpatialSplit> {
    if !a.is_extended() {
        return Err(Error::NotExtended);
    }
    let s_hat = if a.degree() == 0 {
        None
    } else {
        let dt_field = VectorField::time_unit(a.space())?;
        Some(a.interior(&dt_field)?.with_label(&format!("s_hat({})", a.label())))
    };
    Ok(SpatialSplit { s_hat, r_hat: a.spatial_part()?.with_label(&format!("r_hat({})", a.label())) })
}

/// `d_hat a`: differentiates a spatial form along the spatial coordinates
/// only. Evaluation fails with [`Error::NotSpatial`] if `a` has a `dt` part.
pub fn spatial_exterior_derivative(a: &DifferentialForm) -> Result<DifferentialForm> {
    if !a.is_extended() {
        return Err(Error::NotExtended);
    }
    if a.degree() >= a.space().spatial_dim() {
        return Err(Error::DegreeOverflow { degree: a.degree() + 1, dim: a.space().spatial_dim() });
    }
    Ok(DifferentialForm::node(
        a.space().clone(),
        a.degree() + 1,
        FormKind::Exterior { form: a.clone(), spatial: true, scheme: Differencing::Central },
        format!("d_hat({})", a.label()),
    ))
}

/// `L_{d/dt} a` on an extended space.
pub fn time_derivative(a: &DifferentialForm) -> Result<DifferentialForm> {
    lie_derivative(&VectorField::time_unit(a.space())?, a)
}

/// Interior product of a vector with a form at a point.
pub fn contract_at(w: &Vector, a: &DifferentialForm, x: &[f64]) -> Result<AltTensor> {
    tensor::interior(w, &a.eval(x)?)
}
