//! Distances between polylines and angles between subspaces.

use nalgebra::DMatrix;

use crate::tensor::{dot, norm, Vector};

fn point_segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let ap: Vec<f64> = p.iter().zip(a).map(|(x, y)| x - y).collect();
    let len2 = dot(&ab, &ab);
    let s = if len2 > 0.0 { (dot(&ap, &ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let d: Vec<f64> = ap.iter().zip(&ab).map(|(x, y)| x - s * y).collect();
    norm(&d)
}

/// Largest distance from a node of `a` to the polyline `b`.
pub fn directed_hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() { 0.0 } else { f64::INFINITY };
    }
    a.iter()
        .map(|p| {
            if b.len() == 1 {
                return point_segment_distance(p, &b[0], &b[0]);
            }
            b.windows(2).map(|s| point_segment_distance(p, &s[0], &s[1])).fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between two polylines, measured from nodes
/// to segments.
pub fn hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    directed_hausdorff(a, b).max(directed_hausdorff(b, a))
}

pub fn polyline_length(p: &[Vec<f64>]) -> f64 {
    p.windows(2).map(|s| norm(&s[1].iter().zip(&s[0]).map(|(x, y)| x - y).collect::<Vec<_>>())).sum()
}

/// Orthonormal basis for the span of `vs` (modified Gram–Schmidt, dropping
/// vectors whose remainder falls below `tol` times their norm).
pub fn orthonormalize(vs: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vs {
        let scale = norm(v);
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &out {
                let c = dot(&w, q);
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
        }
        let n = norm(&w);
        if n > tol * scale && n > 0.0 {
            w.iter_mut().for_each(|c| *c /= n);
            out.push(w);
        }
    }
    out
}

/// Sines of the principal angles between `span(a)` and `span(b)`, descending.
/// Subspaces of different dimension get `1` for each unmatched direction.
pub fn principal_angle_sines(a: &[Vector], b: &[Vector]) -> Vec<f64> {
    let qa = orthonormalize(&a.iter().map(|v| v.comps().to_vec()).collect::<Vec<_>>(), 1e-12);
    let qb = orthonormalize(&b.iter().map(|v| v.comps().to_vec()).collect::<Vec<_>>(), 1e-12);
    let (small, big) = if qa.len() <= qb.len() { (qa, qb) } else { (qb, qa) };
    let extra = big.len() - small.len();
    if small.is_empty() {
        return vec![1.0; extra];
    }
    let n = small[0].len();
    // residual of the smaller basis after projecting onto the larger span
    let mut r = DMatrix::zeros(n.max(small.len()), small.len());
    for (j, v) in small.iter().enumerate() {
        let mut w = v.clone();
        for q in &big {
            let c = dot(&w, q);
            w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
        }
        for (i, wi) in w.iter().enumerate() {
            r[(i, j)] = *wi;
        }
    }
    let mut sines: Vec<f64> = r.singular_values().iter().map(|s| s.min(1.0)).collect();
    sines.truncate(small.len());
    sines.sort_by(|x, y| y.total_cmp(x));
    let mut out = vec![1.0; extra];
    out.extend(sines);
    out
}

/// Largest principal angle in radians.
pub fn max_principal_angle(a: &[Vector], b: &[Vector]) -> f64 {
    principal_angle_sines(a, b).first().copied().unwrap_or(0.0).asin()
}
