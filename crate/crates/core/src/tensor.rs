//! Alternating tensors at a point, stored densely over strictly increasing
//! index combinations in lexicographic order.
//!
//! A degree-`k` tensor on `R^n` is `sum_I a_I dx^{i_1} ^ ... ^ dx^{i_k}`, and
//! evaluation on vectors uses the determinant convention
//! `(dx^1 ^ dx^2)(e_1, e_2) = 1`.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CACHED_DIM: usize = 12;

/// Binomial coefficient `C(n, k)`; zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

fn generate(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(binomial(n, k));
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        // advance to the next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < n - k + i {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn table() -> &'static Vec<Vec<Vec<Vec<usize>>>> {
    static TABLE: OnceLock<Vec<Vec<Vec<Vec<usize>>>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..=CACHED_DIM).map(|n| (0..=n).map(|k| generate(n, k)).collect()).collect())
}

/// Strictly increasing `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> std::borrow::Cow<'static, [Vec<usize>]> {
    if n <= CACHED_DIM && k <= n {
        std::borrow::Cow::Borrowed(&table()[n][k])
    } else {
        std::borrow::Cow::Owned(generate(n, k))
    }
}

/// Lexicographic position of a strictly increasing combination.
pub fn combination_index(n: usize, combo: &[usize]) -> usize {
    let k = combo.len();
    let mut rank = 0;
    let mut start = 0;
    for (i, &c) in combo.iter().enumerate() {
        for j in start..c {
            rank += binomial(n - j - 1, k - i - 1);
        }
        start = c + 1;
    }
    rank
}

/// Sign of the permutation that sorts the concatenation of two disjoint
/// increasing index lists, or `None` when they overlap.
fn merge_sign(a: &[usize], b: &[usize]) -> Option<f64> {
    let mut inversions = 0usize;
    for &i in a {
        for &j in b {
            if i == j {
                return None;
            }
            if i > j {
                inversions += 1;
            }
        }
    }
    Some(if inversions % 2 == 0 { 1.0 } else { -1.0 })
}

fn merged(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut m: Vec<usize> = a.iter().chain(b).copied().collect();
    m.sort_unstable();
    m
}

/// A tangent vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    comps: Vec<f64>,
}

impl Vector {
    pub fn new(comps: Vec<f64>) -> Result<Self> {
        if comps.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(comps));
        }
        Ok(Self { comps })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { comps: vec![0.0; dim] }
    }

    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut comps = vec![0.0; dim];
        comps[axis] = 1.0;
        Self { comps }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn comps(&self) -> &[f64] {
        &self.comps
    }

    pub fn into_comps(self) -> Vec<f64> {
        self.comps
    }

    pub fn norm(&self) -> f64 {
        norm(&self.comps)
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        dot(&self.comps, &other.comps)
    }
}

impl From<Vec<f64>> for Vector {
    fn from(comps: Vec<f64>) -> Self {
        Self { comps }
    }
}

/// A point of `R^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidArgument("a point needs at least one coordinate".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(coords));
        }
        Ok(Self { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

/// A point of `R^n x R`; the time coordinate is stored last when flattened.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedPoint {
    pub spatial: Point,
    pub time: f64,
}

impl ExtendedPoint {
    pub fn new(spatial: Point, time: f64) -> Result<Self> {
        if !time.is_finite() {
            return Err(Error::NonFinite(vec![time]));
        }
        Ok(Self { spatial, time })
    }

    /// Splits flat coordinates `(x_1, .., x_n, t)`.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        let (t, x) = coords.split_last().ok_or_else(|| Error::InvalidArgument("empty coordinates".into()))?;
        Self::new(Point::new(x.to_vec())?, *t)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.spatial.coords.clone();
        v.push(self.time);
        v
    }
}

/// Pointwise value of a `k`-form on `R^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AltTensor {
    dim: usize,
    degree: usize,
    comps: Vec<f64>,
}

impl AltTensor {
    pub fn zeros(dim: usize, degree: usize) -> Result<Self> {
        if degree > dim {
            return Err(Error::DegreeOverflow { degree, dim });
        }
        Ok(Self { dim, degree, comps: vec![0.0; binomial(dim, degree)] })
    }

    pub fn scalar(dim: usize, value: f64) -> Self {
        Self { dim, degree: 0, comps: vec![value] }
    }

    pub fn from_comps(dim: usize, degree: usize, comps: Vec<f64>) -> Result<Self> {
        if degree > dim {
            return Err(Error::DegreeOverflow { degree, dim });
        }
        let expected = binomial(dim, degree);
        if comps.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: comps.len() });
        }
        Ok(Self { dim, degree, comps })
    }

    /// `dx^{i_1} ^ ... ^ dx^{i_k}` for a strictly increasing index list.
    pub fn basis(dim: usize, indices: &[usize]) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) || indices.iter().any(|&i| i >= dim) {
            return Err(Error::InvalidArgument(format!(
                "basis indices {indices:?} must be strictly increasing and below {dim}"
            )));
        }
        let mut t = Self::zeros(dim, indices.len())?;
        t.comps[combination_index(dim, indices)] = 1.0;
        Ok(t)
    }

    /// The 1-form `sum_i c_i dx^i`.
    pub fn covector(comps: Vec<f64>) -> Self {
        Self { dim: comps.len(), degree: 1, comps }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn comps(&self) -> &[f64] {
        &self.comps
    }

    pub fn comps_mut(&mut self) -> &mut [f64] {
        &mut self.comps
    }

    pub fn into_comps(self) -> Vec<f64> {
        self.comps
    }

    /// Component for an increasing index list.
    pub fn get(&self, indices: &[usize]) -> f64 {
        self.comps[combination_index(self.dim, indices)]
    }

    pub fn norm(&self) -> f64 {
        norm(&self.comps)
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { dim: self.dim, degree: self.degree, comps: self.comps.iter().map(|c| c * s).collect() }
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        if self.degree != other.degree {
            return Err(Error::InvalidDegree(format!("cannot combine degrees {} and {}", self.degree, other.degree)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let comps = self.comps.iter().zip(&other.comps).map(|(a, b)| a + s * b).collect();
        Ok(Self { dim: self.dim, degree: self.degree, comps })
    }

    /// Matrix of the linear map `w -> i_w self`: one column per basis vector,
    /// one row per component of the resulting `(k-1)`-tensor.
    pub fn contraction_matrix(&self) -> Result<DMatrix<f64>> {
        let rows = binomial(self.dim, self.degree.saturating_sub(1));
        let mut m = DMatrix::zeros(rows, self.dim);
        for axis in 0..self.dim {
            let col = interior(&Vector::basis(self.dim, axis), self)?;
            for (r, c) in col.comps.iter().enumerate() {
                m[(r, axis)] = *c;
            }
        }
        Ok(m)
    }
}

/// Exterior product.
pub fn wedge(a: &AltTensor, b: &AltTensor) -> Result<AltTensor> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch { expected: a.dim, found: b.dim });
    }
    let n = a.dim;
    let degree = a.degree + b.degree;
    if degree > n {
        return Err(Error::DegreeOverflow { degree, dim: n });
    }
    let mut out = AltTensor::zeros(n, degree)?;
    let ca = combinations(n, a.degree);
    let cb = combinations(n, b.degree);
    for (i, ia) in ca.iter().enumerate() {
        let va = a.comps[i];
        if va == 0.0 {
            continue;
        }
        for (j, jb) in cb.iter().enumerate() {
            let vb = b.comps[j];
            if vb == 0.0 {
                continue;
            }
            if let Some(sign) = merge_sign(ia, jb) {
                out.comps[combination_index(n, &merged(ia, jb))] += sign * va * vb;
            }
        }
    }
    Ok(out)
}

/// Interior product `i_w a`, contracting the first slot.
pub fn interior(w: &Vector, a: &AltTensor) -> Result<AltTensor> {
    if w.dim() != a.dim {
        return Err(Error::DimensionMismatch { expected: a.dim, found: w.dim() });
    }
    if a.degree == 0 {
        return Err(Error::InvalidDegree("interior product of a 0-form".into()));
    }
    let n = a.dim;
    let mut out = AltTensor::zeros(n, a.degree - 1)?;
    for (i, idx) in combinations(n, a.degree).iter().enumerate() {
        let v = a.comps[i];
        if v == 0.0 {
            continue;
        }
        for (pos, &m) in idx.iter().enumerate() {
            let wm = w.comps[m];
            if wm == 0.0 {
                continue;
            }
            let rest: Vec<usize> = idx.iter().copied().filter(|&j| j != m).collect();
            let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
            out.comps[combination_index(n, &rest)] += sign * wm * v;
        }
    }
    Ok(out)
}

/// `a(v_1, .., v_k)`.
pub fn eval_on_vectors(a: &AltTensor, vs: &[Vector]) -> Result<f64> {
    if vs.len() != a.degree {
        return Err(Error::WrongVectorCount { expected: a.degree, found: vs.len() });
    }
    if let Some(v) = vs.iter().find(|v| v.dim() != a.dim) {
        return Err(Error::DimensionMismatch { expected: a.dim, found: v.dim() });
    }
    if a.degree == 0 {
        return Ok(a.comps[0]);
    }
    let k = a.degree;
    let mut total = 0.0;
    let mut minor = vec![0.0; k * k];
    for (i, idx) in combinations(a.dim, k).iter().enumerate() {
        let c = a.comps[i];
        if c == 0.0 {
            continue;
        }
        for (r, &row) in idx.iter().enumerate() {
            for (col, v) in vs.iter().enumerate() {
                minor[r * k + col] = v.comps[row];
            }
        }
        total += c * determinant(&mut minor, k);
    }
    Ok(total)
}

/// Pullback of a tensor by a linear map with matrix `jac` (`jac[(i, j)] =
/// d phi^i / d x^j`): `(phi^* a)(u_1, ..) = a(J u_1, ..)`.
pub fn pullback_linear(a: &AltTensor, jac: &DMatrix<f64>) -> Result<AltTensor> {
    if jac.nrows() != a.dim {
        return Err(Error::DimensionMismatch { expected: a.dim, found: jac.nrows() });
    }
    let source_dim = jac.ncols();
    let k = a.degree;
    if k > source_dim {
        return Err(Error::DegreeOverflow { degree: k, dim: source_dim });
    }
    let mut out = AltTensor::zeros(source_dim, k)?;
    if k == 0 {
        out.comps[0] = a.comps[0];
        return Ok(out);
    }
    let columns: Vec<Vector> =
        (0..source_dim).map(|j| Vector::from(jac.column(j).iter().copied().collect::<Vec<_>>())).collect();
    for (i, idx) in combinations(source_dim, k).iter().enumerate() {
        let vs: Vec<Vector> = idx.iter().map(|&j| columns[j].clone()).collect();
        out.comps[i] = eval_on_vectors(a, &vs)?;
    }
    Ok(out)
}

/// Determinant of a row-major `k x k` matrix by partial-pivot elimination
/// (the buffer is overwritten).
pub(crate) fn determinant(m: &mut [f64], k: usize) -> f64 {
    match k {
        0 => 1.0,
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        _ => {
            let mut det = 1.0;
            for col in 0..k {
                let pivot =
                    (col..k).max_by(|&a, &b| m[a * k + col].abs().total_cmp(&m[b * k + col].abs())).unwrap_or(col);
                if m[pivot * k + col] == 0.0 {
                    return 0.0;
                }
                if pivot != col {
                    for j in 0..k {
                        m.swap(col * k + j, pivot * k + j);
                    }
                    det = -det;
                }
                let p = m[col * k + col];
                det *= p;
                for r in col + 1..k {
                    let f = m[r * k + col] / p;
                    for j in col..k {
                        m[r * k + j] -= f * m[col * k + j];
                    }
                }
            }
            det
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
