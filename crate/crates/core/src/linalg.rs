//! Dense subspace algebra for small matrices.
//!
//! Subspaces are stored as orthonormal bases. Numerical rank is decided by the
//! SVD with a relative threshold; bases of column spaces are then extracted by
//! pivoted Gram-Schmidt so that tiny but genuine components keep their relative
//! accuracy.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Numerical thresholds shared by every routine.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative singular value threshold for rank decisions.
    pub rank: f64,
    /// Allowed deviation of an orthonormal basis from orthonormality.
    pub orth: f64,
    /// Residual threshold for equations such as P² = P.
    pub residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rank: 1e-9, orth: 1e-10, residual: 1e-9 }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !(ok(self.rank) && ok(self.orth) && ok(self.residual)) {
            return Err(Error::InvalidInput("tolerances must be finite and positive".into()));
        }
        if self.rank >= 1.0 {
            return Err(Error::InvalidInput("rank tolerance must be below 1".into()));
        }
        Ok(())
    }

    /// Threshold used when comparing subspaces for containment or equality.
    pub fn subspace(&self) -> f64 {
        1e3 * self.residual
    }
}

pub(crate) fn check_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

struct SortedSvd {
    s: Vec<f64>,
    v_t: Matrix,
}

fn svd_sorted(a: &Matrix) -> SortedSvd {
    let svd = a.clone().svd(false, true);
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let vt = svd.v_t.expect("requested right singular vectors");
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let v_t = Matrix::from_fn(idx.len(), vt.ncols(), |r, c| vt[(idx[r], c)]);
    SortedSvd { s: idx.iter().map(|&i| s[i]).collect(), v_t }
}

/// Singular values (descending) and matching right singular vectors as rows.
pub fn svd_right(a: &Matrix) -> (Vec<f64>, Matrix) {
    let svd = svd_sorted(a);
    (svd.s, svd.v_t)
}

/// Singular values in descending order.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Spectral norm; zero for empty matrices.
pub fn norm2(a: &Matrix) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Smallest singular value over the column count (zero if rank deficient).
pub fn min_singular(a: &Matrix) -> f64 {
    if a.ncols() == 0 {
        return f64::INFINITY;
    }
    if a.nrows() < a.ncols() {
        return 0.0;
    }
    singular_values(a).last().copied().unwrap_or(0.0)
}

pub fn rank_of(a: &Matrix, tol: &Tolerances) -> usize {
    let s = singular_values(a);
    let smax = s.first().copied().unwrap_or(0.0);
    s.iter().filter(|&&x| x > tol.rank * smax).count()
}

/// Kernel with the rank threshold taken relative to `scale` instead of σ_max.
pub fn kernel_scaled(a: &Matrix, scale: f64, tol: &Tolerances) -> Subspace {
    let (r, c) = a.shape();
    if c == 0 {
        return Subspace::zero(0);
    }
    if r == 0 {
        return Subspace::full(c);
    }
    let padded = if r < c {
        let mut m = Matrix::zeros(c, c);
        m.rows_mut(0, r).copy_from(a);
        m
    } else {
        a.clone()
    };
    let svd = svd_sorted(&padded);
    let thr = tol.rank * scale;
    let rank = svd.s.iter().filter(|&&x| x > thr).count();
    let basis = svd.v_t.rows(rank, c - rank).transpose();
    Subspace { basis }
}

pub fn kernel_of(a: &Matrix, tol: &Tolerances) -> Subspace {
    kernel_scaled(a, norm2(a), tol)
}

fn gram_schmidt(a: &Matrix, rank: usize) -> Matrix {
    let n = a.nrows();
    let mut cols: Vec<Vector> = a.column_iter().map(|c| c.into_owned()).collect();
    let mut q: Vec<Vector> = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut best = None;
        let mut best_norm = 0.0;
        for (j, c) in cols.iter().enumerate() {
            let nc = c.norm();
            if nc > best_norm {
                best_norm = nc;
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        let mut v = cols[j].clone();
        for _ in 0..2 {
            for qi in &q {
                let c = qi.dot(&v);
                v.axpy(-c, qi, 1.0);
            }
        }
        let nv = v.norm();
        if nv == 0.0 {
            break;
        }
        v /= nv;
        for col in cols.iter_mut() {
            let c = v.dot(col);
            col.axpy(-c, &v, 1.0);
        }
        q.push(v);
    }
    if q.is_empty() {
        Matrix::zeros(n, 0)
    } else {
        Matrix::from_columns(&q)
    }
}

/// Column space of `a`, rank decided against `tol.rank * scale`.
pub fn column_space_scaled(a: &Matrix, scale: f64, tol: &Tolerances) -> Subspace {
    let n = a.nrows();
    if a.ncols() == 0 || n == 0 {
        return Subspace::zero(n);
    }
    let thr = tol.rank * scale;
    let rank = singular_values(a).iter().filter(|&&x| x > thr).count();
    Subspace { basis: gram_schmidt(a, rank) }
}

/// Orthonormal-basis subspace of ℝⁿ.
#[derive(Clone, Debug, PartialEq)]
pub struct Subspace {
    basis: Matrix,
}

impl Subspace {
    pub fn zero(n: usize) -> Self {
        Subspace { basis: Matrix::zeros(n, 0) }
    }

    pub fn full(n: usize) -> Self {
        Subspace { basis: Matrix::identity(n, n) }
    }

    /// Span of the given coordinate axes.
    pub fn axes(n: usize, idx: &[usize]) -> Self {
        let mut b = Matrix::zeros(n, idx.len());
        for (c, &i) in idx.iter().enumerate() {
            b[(i, c)] = 1.0;
        }
        Subspace { basis: b }
    }

    /// Span of the columns of `vectors`.
    pub fn span(vectors: &Matrix, tol: &Tolerances) -> Self {
        column_space_scaled(vectors, norm2(vectors), tol)
    }

    /// Span of a list of vectors, each given as a slice.
    pub fn span_of(n: usize, vectors: &[Vec<f64>], tol: &Tolerances) -> Result<Self> {
        if vectors.iter().any(|v| v.len() != n) {
            return Err(Error::DimensionMismatch(format!("basis vectors must have length {n}")));
        }
        let m = Matrix::from_fn(n, vectors.len(), |r, c| vectors[c][r]);
        check_finite(&m, "basis vectors")?;
        Ok(Self::span(&m, tol))
    }

    /// Wraps a basis that is already orthonormal, checking it within `tol.orth`.
    pub fn from_orthonormal(basis: Matrix, tol: &Tolerances) -> Result<Self> {
        check_finite(&basis, "subspace basis")?;
        let d = basis.ncols();
        let gram = basis.transpose() * &basis - Matrix::identity(d, d);
        if d > basis.nrows() || gram.amax() > tol.orth {
            return Err(Error::InvalidInput("basis is not orthonormal".into()));
        }
        Ok(Subspace { basis })
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    /// Orthogonal projector onto the subspace.
    pub fn projector(&self) -> Matrix {
        &self.basis * self.basis.transpose()
    }

    pub fn orthogonal_complement(&self, tol: &Tolerances) -> Subspace {
        let n = self.ambient_dim();
        if self.dim() == 0 {
            return Subspace::full(n);
        }
        kernel_scaled(&self.basis.transpose(), 1.0, tol)
    }

    /// Norm of the part of `other` that lies outside `self`.
    pub fn excess(&self, other: &Subspace) -> f64 {
        let b = other.basis();
        norm2(&(b - self.projector() * b))
    }

    pub fn contains(&self, other: &Subspace, tol: &Tolerances) -> bool {
        self.ambient_dim() == other.ambient_dim() && self.excess(other) <= tol.subspace()
    }

    pub fn sum(&self, other: &Subspace, tol: &Tolerances) -> Subspace {
        let n = self.ambient_dim();
        let mut m = Matrix::zeros(n, self.dim() + other.dim());
        m.columns_mut(0, self.dim()).copy_from(&self.basis);
        m.columns_mut(self.dim(), other.dim()).copy_from(&other.basis);
        column_space_scaled(&m, 1.0, tol)
    }

    pub fn intersection(&self, other: &Subspace, tol: &Tolerances) -> Subspace {
        let n = self.ambient_dim();
        if self.dim() == 0 || other.dim() == 0 {
            return Subspace::zero(n);
        }
        let m = &self.basis - other.projector() * &self.basis;
        let k = kernel_scaled(&m, 1.0, tol);
        Subspace { basis: &self.basis * k.basis() }
    }

    /// A(S) as a subspace, rank judged relative to |A|.
    pub fn image(&self, a: &Matrix, tol: &Tolerances) -> Result<Subspace> {
        if a.ncols() != self.ambient_dim() {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} columns, subspace lives in dimension {}",
                a.ncols(),
                self.ambient_dim()
            )));
        }
        Ok(column_space_scaled(&(a * &self.basis), norm2(a), tol))
    }
}

/// {x : A x ∈ S}.
pub fn preimage(a: &Matrix, s: &Subspace, tol: &Tolerances) -> Result<Subspace> {
    if s.ambient_dim() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} rows, subspace lives in dimension {}",
            a.nrows(),
            s.ambient_dim()
        )));
    }
    let perp = s.orthogonal_complement(tol);
    let scale = norm2(a);
    if perp.dim() == 0 || scale == 0.0 {
        return Ok(Subspace::full(a.ncols()));
    }
    let m = perp.basis().transpose() * a;
    Ok(kernel_scaled(&m, scale, tol))
}

/// A complement of `s` inside `within` (default the whole space) containing `containing`.
///
/// The default choice is `containing` plus the orthogonal complement of `s + containing`
/// inside `within`.
pub fn complement(
    s: &Subspace,
    within: Option<&Subspace>,
    containing: Option<&Subspace>,
    tol: &Tolerances,
) -> Result<Subspace> {
    let n = s.ambient_dim();
    let full = Subspace::full(n);
    let within = within.unwrap_or(&full);
    let zero = Subspace::zero(n);
    let c0 = containing.unwrap_or(&zero);
    if within.ambient_dim() != n || c0.ambient_dim() != n {
        return Err(Error::DimensionMismatch("complement operands".into()));
    }
    if !within.contains(s, tol) || !within.contains(c0, tol) {
        return Err(Error::InvalidInput("subspace not contained in `within`".into()));
    }
    let sc = s.sum(c0, tol);
    if sc.dim() != s.dim() + c0.dim() {
        return Err(Error::ContainingIntersects);
    }
    let rest = within.basis() - sc.projector() * within.basis();
    let fill = column_space_scaled(&rest, 1.0, tol);
    let c = c0.sum(&fill, tol);
    if c.dim() + s.dim() != within.dim() {
        return Err(Error::NotAComplement("could not complete the complement".into()));
    }
    Ok(c)
}

/// Sine of the minimal angle between two subspaces (0 when they meet).
pub fn minimal_angle_sin(a: &Subspace, b: &Subspace) -> f64 {
    if a.dim() == 0 || b.dim() == 0 {
        return 1.0;
    }
    let m = a.basis() - b.projector() * a.basis();
    let s = singular_values(&m);
    s.last().copied().unwrap_or(1.0).min(1.0)
}

/// The projection with the given range and nullspace.
pub fn make_projection(range: &Subspace, nullsp: &Subspace, tol: &Tolerances) -> Result<Matrix> {
    let n = range.ambient_dim();
    if nullsp.ambient_dim() != n {
        return Err(Error::DimensionMismatch("range and nullspace ambient dimensions".into()));
    }
    let r = range.dim();
    if r + nullsp.dim() != n {
        return Err(Error::NotAComplement(format!(
            "dimensions {} + {} do not add up to {n}",
            r,
            nullsp.dim()
        )));
    }
    if r == 0 {
        return Ok(Matrix::zeros(n, n));
    }
    if r == n {
        return Ok(Matrix::identity(n, n));
    }
    let mut t = Matrix::zeros(n, n);
    t.columns_mut(0, r).copy_from(range.basis());
    t.columns_mut(r, n - r).copy_from(nullsp.basis());
    if min_singular(&t) <= tol.rank {
        return Err(Error::NotAComplement("range and nullspace intersect".into()));
    }
    let inv = t
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::NotAComplement("singular splitting".into()))?;
    Ok(range.basis() * inv.rows(0, r))
}

/// Norm of P² − P relative to max(1, |P|²).
pub fn idempotency_residual(p: &Matrix) -> f64 {
    let np = norm2(p);
    norm2(&(p * p - p)) / np.powi(2).max(1.0)
}

pub fn range_of_projection(p: &Matrix, tol: &Tolerances) -> Subspace {
    Subspace::span(p, tol)
}

pub fn nullspace_of_projection(p: &Matrix, tol: &Tolerances) -> Subspace {
    let n = p.nrows();
    Subspace::span(&(Matrix::identity(n, n) - p), tol)
}

/// Gap metric: spectral norm of the difference of the orthogonal projectors.
pub fn subspace_distance(a: &Subspace, b: &Subspace) -> Result<f64> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(Error::DimensionMismatch("subspace ambient dimensions differ".into()));
    }
    Ok(norm2(&(a.projector() - b.projector())))
}
