//! Dense symmetric generalized eigenproblem `S u = λ M u`.
//!
//! `M` is diagonalised first and directions with negligible mass are dropped,
//! which keeps the reduction stable when a trained basis becomes nearly
//! linearly dependent. Both eigendecompositions use cyclic Jacobi rotations.

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default relative truncation threshold for the mass spectrum.
pub const DEFAULT_STABILIZATION: f64 = 1e-12;
/// Default relative gap below which neighbouring eigenvalues form a cluster.
pub const DEFAULT_CLUSTER_TOL: f64 = 1e-6;

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi.
/// Returns ascending eigenvalues and the matching orthonormal eigenvectors
/// as the columns of the second matrix.
pub fn symmetric_eigen<T: Real>(a: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
    let n = a.rows();
    assert_eq!(n, a.cols(), "symmetric_eigen needs a square matrix");
    let mut a = a.clone();
    a.symmetrize();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    let tol = T::tol(1e-13) * scale;

    for _ in 0..MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= tol || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // Skip rotations that cannot change the diagonal in floating point.
                let tiny = T::epsilon() * T::lit(1e-2);
                if apq.abs() <= tiny * app.abs().min(aqq.abs()) {
                    a[(p, q)] = T::zero();
                    a[(q, p)] = T::zero();
                    continue;
                }
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s, t);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<T> = (0..n).map(|i| a[(i, i)]).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, col)] = v[(src, r)];
        }
    }
    (values, vectors)
}

fn off_diagonal_norm<T: Real>(a: &Matrix<T>) -> T {
    let n = a.rows();
    let mut s = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Applies the rotation to rows and columns `p`, `q` of `a` and to rows
/// `p`, `q` of `vt`, which holds eigenvectors as rows.
#[allow(clippy::too_many_arguments)]
fn rotate<T: Real>(a: &mut Matrix<T>, vt: &mut Matrix<T>, p: usize, q: usize, c: T, s: T, t: T) {
    let n = a.rows();
    let apq = a[(p, q)];
    let app = a[(p, p)] - t * apq;
    let aqq = a[(q, q)] + t * apq;
    rotate_rows(a.as_mut_slice(), n, p, q, c, s);
    for r in 0..n {
        let (np, nq) = (a[(p, r)], a[(q, r)]);
        a[(r, p)] = np;
        a[(r, q)] = nq;
    }
    a[(p, p)] = app;
    a[(q, q)] = aqq;
    a[(p, q)] = T::zero();
    a[(q, p)] = T::zero();
    rotate_rows(vt.as_mut_slice(), n, p, q, c, s);
}

fn rotate_rows<T: Real>(data: &mut [T], n: usize, p: usize, q: usize, c: T, s: T) {
    let (lo, hi) = data.split_at_mut(q * n);
    let rp = &mut lo[p * n..(p + 1) * n];
    let rq = &mut hi[..n];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenResult<T> {
    /// Ascending.
    pub values: Vec<T>,
    /// `vectors[k]` is the M-orthonormal coefficient vector of pair `k`.
    pub vectors: Vec<Vec<T>>,
    /// Smallest retained eigenvalue of `M`.
    pub min_retained_mass: T,
    /// Number of mass directions dropped by the stabilization.
    pub discarded: usize,
    /// Set when more than half of the directions were dropped.
    pub excessive_discards: bool,
}

impl<T: Real> EigenResult<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index ranges of eigenvalues whose consecutive relative gaps fall
    /// below `rel_tol`. Singletons are included.
    pub fn clusters(&self, rel_tol: T) -> Vec<std::ops::Range<usize>> {
        clusters(&self.values, rel_tol)
    }
}

/// Groups ascending values into runs whose consecutive relative gap is below
/// `rel_tol`.
pub fn clusters<T: Real>(values: &[T], rel_tol: T) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=values.len() {
        let split = k == values.len() || {
            let (a, b) = (values[k - 1], values[k]);
            let scale = a.abs().max(b.abs()).max(T::min_positive_value());
            (b - a).abs() >= rel_tol * scale
        };
        if split {
            out.push(start..k);
            start = k;
        }
    }
    out
}

/// Solves `S u = λ M u` for symmetric `S` and symmetric positive
/// semidefinite `M`. Mass directions with eigenvalue `≤ τ·max` are dropped;
/// the result then has fewer than `p` pairs.
pub fn solve_generalized<T: Real>(
    s: &Matrix<T>,
    m: &Matrix<T>,
    stabilization: T,
) -> Result<EigenResult<T>> {
    let p = s.rows();
    if s.cols() != p || m.rows() != p || m.cols() != p {
        return Err(Error::InvalidArgument("S and M must be square and equal-sized".into()));
    }
    if !s.is_finite() {
        return Err(Error::NonFinite("stiffness matrix"));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("mass matrix"));
    }
    let (mvals, mvecs) = symmetric_eigen(m);
    let max_mass = mvals.iter().fold(T::zero(), |a, &b| a.max(b));
    if !(max_mass > T::min_positive_value()) {
        return Err(Error::SingularMass);
    }
    let cut = stabilization * max_mass;
    let kept: Vec<usize> = (0..p).filter(|&i| mvals[i] > cut).collect();
    let r = kept.len();
    let discarded = p - r;

    // B = V_r Λ_r^{-1/2}, p × r
    let mut b = Matrix::zeros(p, r);
    for (c, &i) in kept.iter().enumerate() {
        let inv = T::one() / mvals[i].sqrt();
        for row in 0..p {
            b[(row, c)] = mvecs[(row, i)] * inv;
        }
    }
    let mut reduced = b.transpose().matmul(&s.matmul(&b));
    reduced.symmetrize();
    let (vals, w) = symmetric_eigen(&reduced);
    let u = b.matmul(&w);

    let mut vectors = Vec::with_capacity(r);
    for k in 0..r {
        let mut col = u.column(k);
        // Re-normalize against M to absorb rounding from the reduction.
        let norm = m.bilinear(&col, &col).sqrt();
        if norm > T::zero() {
            col.iter_mut().for_each(|v| *v /= norm);
        }
        let pivot = col
            .iter()
            .copied()
            .fold(T::zero(), |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < T::zero() {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        vectors.push(col);
    }
    Ok(EigenResult {
        values: vals,
        vectors,
        min_retained_mass: kept.first().map_or(T::zero(), |&i| mvals[i]),
        discarded,
        excessive_discards: 2 * discarded > p,
    })
}

/// Derivative of a simple eigenvalue along `(dS, dM)`:
/// `uᵀ (dS − λ dM) u` for M-normalized `u`.
pub fn eigenvalue_sensitivity<T: Real>(
    lambda: T,
    u: &[T],
    ds: &Matrix<T>,
    dm: &Matrix<T>,
) -> T {
    ds.bilinear(u, u) - lambda * dm.bilinear(u, u)
}

/// [`eigenvalue_sensitivity`] for pair `k`, refusing eigenvalues that sit
/// in a cluster.
pub fn checked_sensitivity<T: Real>(
    result: &EigenResult<T>,
    k: usize,
    ds: &Matrix<T>,
    dm: &Matrix<T>,
    cluster_tol: T,
) -> Result<T> {
    let cl = result.clusters(cluster_tol);
    let c = cl
        .iter()
        .find(|r| r.contains(&k))
        .ok_or(Error::OutOfRange {
            index: k,
            len: result.len(),
        })?;
    if c.len() > 1 {
        return Err(Error::ClusteredEigenvalue { index: k });
    }
    Ok(eigenvalue_sensitivity(
        result.values[k],
        &result.vectors[k],
        ds,
        dm,
    ))
}

/// Derivative of `Σ_{k∈cluster} λ_k`, well defined when the eigenvalues in
/// the cluster are degenerate: `Σ U_kᵀ (dS − λ̄ dM) U_k` with `λ̄` the
/// cluster mean.
pub fn subspace_trace_sensitivity<T: Real>(
    cluster: std::ops::Range<usize>,
    result: &EigenResult<T>,
    ds: &Matrix<T>,
    dm: &Matrix<T>,
) -> T {
    let n = T::from_usize_lossy(cluster.len().max(1));
    let mean = cluster.clone().map(|k| result.values[k]).sum::<T>() / n;
    cluster
        .map(|k| {
            let u = &result.vectors[k];
            ds.bilinear(u, u) - mean * dm.bilinear(u, u)
        })
        .sum()
}
