//! Vector fields on `R^n` or `R^n x R`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::form::DifferentialForm;
use crate::kernel;
use crate::space::Space;
use crate::tensor::{dot, Vector};

type NativeField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
enum FieldKind {
    Exprs(Vec<Expr>),
    Native(NativeField),
    Constant(Vec<f64>),
    /// steady field on `M` viewed on `M x R` (zero time component)
    Lift(VectorField),
    /// `d/dt + v` for a spatial field `v` on `M x R`
    Xi(VectorField),
    Sum(Vec<(f64, VectorField)>),
    /// unit vector spanning a one-dimensional kernel, oriented along `reference`
    Kernel {
        form: DifferentialForm,
        constraints: Vec<DifferentialForm>,
        reference: Vec<f64>,
    },
    /// `index`-th member of the kernel frame obtained by projecting the fixed
    /// `seeds` onto the kernel and orthonormalising in order
    Frame {
        form: DifferentialForm,
        constraints: Vec<DifferentialForm>,
        seeds: Vec<Vec<f64>>,
        index: usize,
    },
}

struct FieldNode {
    space: Space,
    kind: FieldKind,
    label: String,
}

/// An evaluable map from points to tangent vectors. Immutable and cheap to
/// clone; evaluation is pure.
#[derive(Clone)]
pub struct VectorField(Arc<FieldNode>);

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VectorField({}, dim {})", self.0.label, self.dim())
    }
}

impl VectorField {
    fn node(space: Space, kind: FieldKind, label: impl Into<String>) -> Self {
        Self(Arc::new(FieldNode { space, kind, label: label.into() }))
    }

    /// Components given as expressions in the space's coordinate names.
    pub fn analytic(space: &Space, comps: &[&str]) -> Result<Self> {
        if comps.len() != space.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), found: comps.len() });
        }
        let vars = space.vars();
        let exprs = comps.iter().map(|c| Expr::parse(c, &vars)).collect::<Result<Vec<_>>>()?;
        Ok(Self::node(space.clone(), FieldKind::Exprs(exprs), format!("({})", comps.join(", "))))
    }

    pub fn native<F>(space: &Space, label: &str, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self::node(space.clone(), FieldKind::Native(Arc::new(f)), label)
    }

    pub fn constant(space: &Space, comps: Vec<f64>) -> Result<Self> {
        if comps.len() != space.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), found: comps.len() });
        }
        let label = format!("{comps:?}");
        Ok(Self::node(space.clone(), FieldKind::Constant(comps), label))
    }

    pub fn zero(space: &Space) -> Self {
        Self::node(space.clone(), FieldKind::Constant(vec![0.0; space.dim()]), "0")
    }

    /// Coordinate field `d/dx^axis`.
    pub fn coordinate(space: &Space, axis: usize) -> Result<Self> {
        if axis >= space.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), found: axis + 1 });
        }
        let mut c = vec![0.0; space.dim()];
        c[axis] = 1.0;
        Ok(Self::node(space.clone(), FieldKind::Constant(c), format!("d/d{}", space.vars()[axis])))
    }

    /// The pure time field `d/dt` on an extended space.
    pub fn time_unit(space: &Space) -> Result<Self> {
        if !space.is_extended() {
            return Err(Error::NotExtended);
        }
        Self::xi(&Self::zero(space))
    }

    /// Views a steady field on `M` as a spatial field on `M x R`.
    pub fn lift(&self, extended: &Space) -> Result<Self> {
        if self.is_extended() {
            return Err(Error::InvalidArgument("field is already extended".into()));
        }
        if !extended.is_extended() || extended.spatial_dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim() + 1, found: extended.dim() });
        }
        Ok(Self::node(extended.clone(), FieldKind::Lift(self.clone()), format!("lift {}", self.label())))
    }

    /// `xi = d/dt + v` for a spatial field `v` on `M x R` (or a steady field
    /// on `M`, which is lifted first with an unbounded time axis).
    pub fn xi(v: &VectorField) -> Result<Self> {
        let spatial = if v.is_extended() {
            v.clone()
        } else {
            let ext = v.space().to_extended(f64::NEG_INFINITY, f64::INFINITY)?;
            v.lift(&ext)?
        };
        Ok(Self::node(spatial.space().clone(), FieldKind::Xi(spatial.clone()), format!("d/dt + {}", spatial.label())))
    }

    pub fn sum(terms: &[(f64, VectorField)]) -> Result<Self> {
        let first = terms.first().ok_or_else(|| Error::InvalidArgument("empty sum".into()))?;
        let mut space = first.1.space().clone();
        for (_, f) in &terms[1..] {
            space = space.join(f.space())?;
        }
        Ok(Self::node(space, FieldKind::Sum(terms.to_vec()), "sum"))
    }

    /// Unit field spanning the one-dimensional kernel of `w -> i_w form`
    /// (intersected with the kernels of `constraints`), oriented to have a
    /// non-negative inner product with `reference`.
    pub fn kernel_direction(
        form: &DifferentialForm,
        constraints: &[DifferentialForm],
        reference: Vec<f64>,
    ) -> Result<Self> {
        if reference.len() != form.dim() {
            return Err(Error::DimensionMismatch { expected: form.dim(), found: reference.len() });
        }
        Ok(Self::node(
            form.space().clone(),
            FieldKind::Kernel { form: form.clone(), constraints: constraints.to_vec(), reference },
            format!("ker {}", form.label()),
        ))
    }

    /// Smooth local frame field of a kernel distribution: the `index`-th
    /// vector of the Gram–Schmidt orthonormalisation of the seeds projected
    /// onto the kernel at each point.
    pub fn kernel_frame(
        form: &DifferentialForm,
        constraints: &[DifferentialForm],
        seeds: Vec<Vec<f64>>,
        index: usize,
    ) -> Result<Self> {
        if index >= seeds.len() {
            return Err(Error::InvalidArgument(format!("frame index {index} out of {} seeds", seeds.len())));
        }
        if let Some(s) = seeds.iter().find(|s| s.len() != form.dim()) {
            return Err(Error::DimensionMismatch { expected: form.dim(), found: s.len() });
        }
        Ok(Self::node(
            form.space().clone(),
            FieldKind::Frame { form: form.clone(), constraints: constraints.to_vec(), seeds, index },
            format!("frame[{index}] ker {}", form.label()),
        ))
    }

    pub fn with_label(&self, label: &str) -> Self {
        Self::node(self.0.space.clone(), self.0.kind.clone(), label)
    }

    pub fn space(&self) -> &Space {
        &self.0.space
    }

    pub fn dim(&self) -> usize {
        self.0.space.dim()
    }

    pub fn is_extended(&self) -> bool {
        self.0.space.is_extended()
    }

    pub fn label(&self) -> &str {
        &self.0.label
    }

    /// True for fields whose time component is identically one, so flows
    /// advance the time coordinate exactly.
    pub fn has_unit_time(&self) -> bool {
        matches!(self.0.kind, FieldKind::Xi(_))
    }

    /// Nesting depth of finite-difference operators inside this field.
    pub(crate) fn fd_depth(&self) -> usize {
        match &self.0.kind {
            FieldKind::Exprs(_) | FieldKind::Native(_) | FieldKind::Constant(_) => 0,
            FieldKind::Lift(f) | FieldKind::Xi(f) => f.fd_depth(),
            FieldKind::Sum(ts) => ts.iter().map(|(_, f)| f.fd_depth()).max().unwrap_or(0),
            FieldKind::Kernel { form, constraints, .. } | FieldKind::Frame { form, constraints, .. } => {
                constraints.iter().map(|c| c.fd_depth()).fold(form.fd_depth(), usize::max)
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vector> {
        Ok(Vector::from(self.eval_raw(x)?))
    }

    pub(crate) fn eval_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: x.len() });
        }
        let out = match &self.0.kind {
            FieldKind::Exprs(es) => {
                self.0.space.domain().check(x)?;
                es.iter().map(|e| e.eval(x)).collect()
            }
            FieldKind::Native(f) => {
                self.0.space.domain().check(x)?;
                let v = f(x);
                if v.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, found: v.len() });
                }
                v
            }
            FieldKind::Constant(c) => {
                self.0.space.domain().check(x)?;
                c.clone()
            }
            FieldKind::Lift(f) => {
                self.0.space.domain().check(x)?;
                let mut v = f.eval_raw(&x[..n - 1])?;
                v.push(0.0);
                v
            }
            FieldKind::Xi(f) => {
                let mut v = f.eval_raw(x)?;
                v[n - 1] = 1.0;
                v
            }
            FieldKind::Sum(ts) => {
                let mut acc = vec![0.0; n];
                for (s, f) in ts {
                    for (a, b) in acc.iter_mut().zip(f.eval_raw(x)?) {
                        *a += s * b;
                    }
                }
                acc
            }
            FieldKind::Kernel { form, constraints, reference } => {
                let frame = kernel::kernel_at(form, x, constraints)?;
                if frame.basis.len() != 1 {
                    return Err(Error::KernelDimension { expected: 1, found: frame.basis.len(), point: x.to_vec() });
                }
                let mut w = frame.basis[0].comps().to_vec();
                if dot(&w, reference) < 0.0 {
                    w.iter_mut().for_each(|c| *c = -*c);
                }
                w
            }
            FieldKind::Frame { form, constraints, seeds, index } => {
                kernel::projected_frame(form, constraints, seeds, x)?.swap_remove(*index)
            }
        };
        if out.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(x.to_vec()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Domain;

    #[test]
    fn analytic_and_domain() {
        let s = Space::euclidean(2).with_domain(Domain::cube(2, 2.0)).unwrap();
        let v = VectorField::analytic(&s, &["-y", "x"]).unwrap();
        assert_eq!(v.eval(&[1.0, 0.5]).unwrap().comps(), &[-0.5, 1.0]);
        assert!(matches!(v.eval(&[3.0, 0.0]), Err(Error::OutsideDomain { .. })));
        assert!(VectorField::analytic(&s, &["x"]).is_err());
    }

    #[test]
    fn xi_has_unit_time() {
        let s = Space::euclidean(2);
        let v = VectorField::analytic(&s, &["y", "-x"]).unwrap();
        let xi = VectorField::xi(&v).unwrap();
        assert!(xi.is_extended());
        assert!(xi.has_unit_time());
        assert_eq!(xi.eval(&[1.0, 0.0, 3.0]).unwrap().comps(), &[0.0, -1.0, 1.0]);
        let dt = VectorField::time_unit(xi.space()).unwrap();
        assert_eq!(dt.eval(&[1.0, 2.0, 3.0]).unwrap().comps(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sums_scale() {
        let s = Space::euclidean(2);
        let a = VectorField::coordinate(&s, 0).unwrap();
        let b = VectorField::analytic(&s, &["x", "y"]).unwrap();
        let c = VectorField::sum(&[(2.0, a), (-1.0, b)]).unwrap();
        assert_eq!(c.eval(&[1.0, 3.0]).unwrap().comps(), &[1.0, -3.0]);
    }
}
