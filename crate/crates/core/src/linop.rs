//! Dense complex operator algebra over tensor-product spaces.
//!
//! Basis convention: for an ordered vertex list the basis index is
//! lexicographic in the vertex digits with the last vertex fastest, i.e.
//! vertex at position `p` of `k` has stride `d^(k-1-p)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Largest full Hilbert-space dimension any dense construction accepts.
pub const MAX_DIM: usize = 1 << 13;

/// Hermiticity tolerance on inputs to the spectral routines.
pub const HERMITIAN_TOL: f64 = 1e-10;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

pub fn checked_dim(local_dim: usize, n: usize) -> Result<usize> {
    let mut dim = 1usize;
    for _ in 0..n {
        dim = dim
            .checked_mul(local_dim)
            .filter(|&d| d <= MAX_DIM)
            .ok_or(Error::DimensionLimit { dim: usize::MAX, limit: MAX_DIM })?;
    }
    Ok(dim)
}

fn pow(d: usize, k: usize) -> usize {
    d.pow(k as u32)
}

/// Offsets in the index space of `full` of every basis configuration of
/// `sub` (both sorted, `sub ⊆ full`), enumerated in `sub`'s own order.
pub fn subset_offsets(full: &[usize], sub: &[usize], d: usize) -> Vec<usize> {
    let n = full.len();
    let strides: Vec<usize> = sub
        .iter()
        .map(|v| {
            let p = full.iter().position(|u| u == v).expect("sub must be contained in full");
            pow(d, n - 1 - p)
        })
        .collect();
    let mut out = vec![0usize];
    for &s in &strides {
        let mut next = Vec::with_capacity(out.len() * d);
        for &o in &out {
            for digit in 0..d {
                next.push(o + digit * s);
            }
        }
        out = next;
    }
    out
}

fn sorted_difference(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().copied().filter(|v| !b.contains(v)).collect()
}

fn sorted_union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut u: Vec<usize> = a.iter().chain(b).copied().collect();
    u.sort_unstable();
    u.dedup();
    u
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Pauli matrix for `I`, `X`, `Y` or `Z`.
pub fn pauli(c: char) -> Result<CMat> {
    let m = match c.to_ascii_uppercase() {
        'I' => [ONE, ZERO, ZERO, ONE],
        'X' => [ZERO, ONE, ONE, ZERO],
        'Y' => [ZERO, -I, I, ZERO],
        'Z' => [ONE, ZERO, ZERO, -ONE],
        other => return Err(Error::InvalidArgument(format!("unknown Pauli letter {other:?}"))),
    };
    Ok(CMat::from_row_slice(2, 2, &m))
}

/// Tensor product of Pauli letters, first letter on the first vertex.
pub fn pauli_string(s: &str) -> Result<CMat> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("empty Pauli string".into()));
    }
    let mut acc = CMat::identity(1, 1);
    for c in s.chars() {
        acc = kron(&acc, &pauli(c)?);
    }
    Ok(acc)
}

/// Largest entrywise deviation `|A - A†|`.
pub fn hermitian_deviation(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    dev
}

fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).norm()))
}

pub fn is_hermitian(a: &CMat, tol: f64) -> bool {
    a.is_square() && hermitian_deviation(a) <= tol * max_abs(a).max(1.0)
}

fn require_hermitian(a: &CMat) -> Result<()> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), found: a.ncols() });
    }
    let dev = hermitian_deviation(a);
    if dev > HERMITIAN_TOL * max_abs(a).max(1.0) {
        return Err(Error::NotHermitian { deviation: dev });
    }
    Ok(())
}

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and
/// the matching orthonormal eigenvectors as columns.
pub fn eig_hermitian(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    require_hermitian(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok((vec![], CMat::zeros(0, 0)));
    }
    let sym = (a + a.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    if eig.eigenvalues.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("eigensolver produced non-finite values".into()));
    }
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Eigenvalues only, ascending.
pub fn eigvals_hermitian(a: &CMat) -> Result<Vec<f64>> {
    require_hermitian(a)?;
    let sym = (a + a.adjoint()).scale(0.5);
    let mut v: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// `V f(Λ) V†` for Hermitian `a`.
pub fn herm_apply(a: &CMat, f: impl Fn(f64) -> C64) -> Result<CMat> {
    let (vals, vecs) = eig_hermitian(a)?;
    Ok(reassemble(&vals, &vecs, f))
}

pub fn reassemble(vals: &[f64], vecs: &CMat, f: impl Fn(f64) -> C64) -> CMat {
    let n = vals.len();
    let mut scaled = vecs.clone();
    for (c, &x) in vals.iter().enumerate() {
        let fx = f(x);
        for r in 0..n {
            scaled[(r, c)] *= fx;
        }
    }
    scaled * vecs.adjoint()
}

fn is_diagonal(a: &CMat) -> bool {
    let n = a.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)] == ZERO))
}

/// `exp(scalar · a)` for Hermitian `a`; exact on diagonal inputs.
pub fn herm_exp(a: &CMat, scalar: C64) -> Result<CMat> {
    require_hermitian(a)?;
    if is_diagonal(a) {
        let n = a.nrows();
        return Ok(CMat::from_fn(n, n, |i, j| {
            if i == j {
                (scalar * a[(i, i)].re).exp()
            } else {
                ZERO
            }
        }));
    }
    herm_apply(a, |x| (scalar * x).exp())
}

/// Moore–Penrose inverse of a Hermitian PSD matrix. Eigenvalues with
/// magnitude below `kernel_tol` (default `1e-10·‖a‖`) are treated as kernel.
pub fn pseudo_inverse(a: &CMat, kernel_tol: Option<f64>) -> Result<CMat> {
    let (vals, vecs) = eig_hermitian(a)?;
    let scale = vals.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = kernel_tol.unwrap_or(1e-10 * scale);
    if let Some(&low) = vals.first() {
        if low < -tol {
            return Err(Error::NotPositive { eigenvalue: low });
        }
    }
    Ok(reassemble(&vals, &vecs, |x| if x.abs() <= tol { ZERO } else { real(1.0 / x) }))
}

/// Inverse of a Hermitian positive-definite matrix.
pub fn inverse_positive(a: &CMat) -> Result<CMat> {
    let (vals, vecs) = eig_hermitian(a)?;
    let scale = vals.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    match vals.first() {
        Some(&low) if low <= 1e-14 * scale.max(1.0) => Err(Error::Singular { eigenvalue: low }),
        _ => Ok(reassemble(&vals, &vecs, |x| real(1.0 / x))),
    }
}

/// Operator norm (largest singular value), via the spectrum of `A†A`.
pub fn op_norm(a: &CMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = a.adjoint() * a;
    let gram = (&gram + gram.adjoint()).scale(0.5);
    gram.symmetric_eigenvalues().iter().fold(0.0f64, |m, &x| m.max(x)).sqrt()
}

/// Operator norm of a Hermitian matrix, `max |λ|`.
pub fn herm_norm(a: &CMat) -> Result<f64> {
    Ok(eigvals_hermitian(a)?.iter().fold(0.0f64, |m, x| m.max(x.abs())))
}

/// Sum of singular values.
pub fn trace_norm(a: &CMat) -> f64 {
    a.clone().svd(false, false).singular_values.iter().sum()
}

pub fn vec_norm(v: &CVec) -> f64 {
    v.norm()
}

/// Row-major, re/im interleaved matrix serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&CMat> for MatrixData {
    fn from(m: &CMat) -> Self {
        let mut data = Vec::with_capacity(2 * m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)].re);
                data.push(m[(r, c)].im);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl TryFrom<&MatrixData> for CMat {
    type Error = Error;

    fn try_from(m: &MatrixData) -> Result<CMat> {
        if m.data.len() != 2 * m.rows * m.cols {
            return Err(Error::DimensionMismatch {
                expected: 2 * m.rows * m.cols,
                found: m.data.len(),
            });
        }
        Ok(CMat::from_fn(m.rows, m.cols, |r, c| {
            let k = 2 * (r * m.cols + c);
            C64::new(m.data[k], m.data[k + 1])
        }))
    }
}

/// A matrix acting on an ordered (sorted) set of vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOperator {
    support: Vec<usize>,
    local_dim: usize,
    matrix: CMat,
}

impl LocalOperator {
    /// `support` may be given in any order; the matrix is interpreted in
    /// that order and permuted into the canonical sorted order.
    pub fn new(support: Vec<usize>, local_dim: usize, matrix: CMat) -> Result<Self> {
        let k = support.len();
        let dim = checked_dim(local_dim, k)?;
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: matrix.nrows() });
        }
        let mut sorted = support.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != k {
            return Err(Error::InvalidArgument(format!("repeated vertex in support {support:?}")));
        }
        if sorted == support {
            return Ok(Self { support, local_dim, matrix });
        }
        // position of each sorted vertex in the given order
        let orig_pos: Vec<usize> =
            sorted.iter().map(|v| support.iter().position(|u| u == v).unwrap_or(0)).collect();
        let perm: Vec<usize> = (0..dim)
            .map(|idx| {
                let mut rest = idx;
                let mut orig = 0;
                for p in (0..k).rev() {
                    let digit = rest % local_dim;
                    rest /= local_dim;
                    orig += digit * pow(local_dim, k - 1 - orig_pos[p]);
                }
                orig
            })
            .collect();
        let permuted = CMat::from_fn(dim, dim, |r, c| matrix[(perm[r], perm[c])]);
        Ok(Self { support: sorted, local_dim, matrix: permuted })
    }

    pub fn identity(support: Vec<usize>, local_dim: usize) -> Result<Self> {
        let dim = checked_dim(local_dim, support.len())?;
        Self::new(support, local_dim, CMat::identity(dim, dim))
    }

    pub fn zero(support: Vec<usize>, local_dim: usize) -> Result<Self> {
        let dim = checked_dim(local_dim, support.len())?;
        Self::new(support, local_dim, CMat::zeros(dim, dim))
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Tensor with identities on `target \ support`. `target` must be a
    /// sorted superset of the support.
    pub fn extend_to(&self, target: &[usize]) -> Result<Self> {
        if !target.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(format!("target support {target:?} not sorted")));
        }
        if let Some(v) = self.support.iter().find(|v| !target.contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "vertex {v} of {:?} missing from target {target:?}",
                self.support
            )));
        }
        if target == self.support.as_slice() {
            return Ok(self.clone());
        }
        let d = self.local_dim;
        let dim = checked_dim(d, target.len())?;
        let inner = subset_offsets(target, &self.support, d);
        let complement = sorted_difference(target, &self.support);
        let outer = subset_offsets(target, &complement, d);
        let mut out = CMat::zeros(dim, dim);
        for &o in &outer {
            for (a, &ia) in inner.iter().enumerate() {
                for (b, &ib) in inner.iter().enumerate() {
                    out[(o + ia, o + ib)] = self.matrix[(a, b)];
                }
            }
        }
        Ok(Self { support: target.to_vec(), local_dim: d, matrix: out })
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.local_dim != other.local_dim {
            return Err(Error::DimensionMismatch { expected: self.local_dim, found: other.local_dim });
        }
        Ok(())
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let u = sorted_union(&self.support, &other.support);
        let a = self.extend_to(&u)?;
        let b = other.extend_to(&u)?;
        Ok(Self { support: u, local_dim: self.local_dim, matrix: a.matrix * b.matrix })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let u = sorted_union(&self.support, &other.support);
        let a = self.extend_to(&u)?;
        let b = other.extend_to(&u)?;
        Ok(Self { support: u, local_dim: self.local_dim, matrix: a.matrix + b.matrix })
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { support: self.support.clone(), local_dim: self.local_dim, matrix: self.matrix.scale_c(c) }
    }

    pub fn adjoint(&self) -> Self {
        Self { support: self.support.clone(), local_dim: self.local_dim, matrix: self.matrix.adjoint() }
    }

    pub fn map_matrix(&self, f: impl FnOnce(&CMat) -> Result<CMat>) -> Result<Self> {
        let m = f(&self.matrix)?;
        Ok(Self { support: self.support.clone(), local_dim: self.local_dim, matrix: m })
    }

    pub fn herm_exp(&self, scalar: C64) -> Result<Self> {
        self.map_matrix(|m| herm_exp(m, scalar))
    }

    /// `‖[A, B]‖` computed on the union of the supports.
    pub fn commutator_norm(&self, other: &Self) -> Result<f64> {
        let ab = self.mul(other)?;
        let ba = other.mul(self)?;
        Ok(op_norm(&(ab.matrix - ba.matrix)))
    }

    /// Renames the support vertices; the matrix follows the new order.
    pub fn relabel(&self, map: impl Fn(usize) -> usize) -> Result<Self> {
        let support = self.support.iter().map(|&v| map(v)).collect();
        Self::new(support, self.local_dim, self.matrix.clone())
    }

    /// `embed(self) · v` on a space of `n_vertices` vertices, without
    /// forming the full matrix.
    pub fn apply(&self, v: &CVec, n_vertices: usize) -> Result<CVec> {
        let plan = TermSum::new(std::slice::from_ref(self), n_vertices, self.local_dim)?;
        if plan.dim() != v.len() {
            return Err(Error::DimensionMismatch { expected: plan.dim(), found: v.len() });
        }
        Ok(plan.apply(v))
    }

    /// Embeds into the full space of `n_vertices` vertices.
    pub fn embed_n(&self, n_vertices: usize) -> Result<GlobalOperator> {
        if let Some(&v) = self.support.iter().find(|&&v| v >= n_vertices) {
            return Err(Error::InvalidArgument(format!("vertex {v} outside {n_vertices} vertices")));
        }
        let all: Vec<usize> = (0..n_vertices).collect();
        let full = self.extend_to(&all)?;
        Ok(GlobalOperator::new(full.matrix))
    }
}

trait ScaleC {
    fn scale_c(&self, c: C64) -> CMat;
}

impl ScaleC for CMat {
    fn scale_c(&self, c: C64) -> CMat {
        self.map(|z| z * c)
    }
}

/// An operator on the whole lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalOperator {
    pub matrix: CMat,
    pub hermitian: bool,
}

impl GlobalOperator {
    pub fn new(matrix: CMat) -> Self {
        let hermitian = is_hermitian(&matrix, HERMITIAN_TOL);
        Self { matrix, hermitian }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { matrix: CMat::zeros(dim, dim), hermitian: true }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eig(&self) -> Result<(Vec<f64>, CMat)> {
        eig_hermitian(&self.matrix)
    }

    pub fn norm(&self) -> f64 {
        op_norm(&self.matrix)
    }
}

/// `embed(op)` on the lattice's full space in canonical vertex order.
pub fn embed(op: &LocalOperator, lat: &Lattice) -> Result<GlobalOperator> {
    if op.local_dim() != lat.local_dim() {
        return Err(Error::DimensionMismatch { expected: lat.local_dim(), found: op.local_dim() });
    }
    checked_dim(lat.local_dim(), lat.n_vertices())?;
    op.embed_n(lat.n_vertices())
}

/// Dense sum of embedded local terms.
pub fn embed_sum(terms: &[LocalOperator], n_vertices: usize, local_dim: usize) -> Result<CMat> {
    let dim = checked_dim(local_dim, n_vertices)?;
    let all: Vec<usize> = (0..n_vertices).collect();
    let mut out = CMat::zeros(dim, dim);
    for t in terms {
        let d = t.local_dim();
        let inner = subset_offsets(&all, t.support(), d);
        let outer = subset_offsets(&all, &sorted_difference(&all, t.support()), d);
        for &o in &outer {
            for (a, &ia) in inner.iter().enumerate() {
                for (b, &ib) in inner.iter().enumerate() {
                    out[(o + ia, o + ib)] += t.matrix()[(a, b)];
                }
            }
        }
    }
    Ok(out)
}

struct TermPlan {
    matrix: CMat,
    inner: Vec<usize>,
    outer: Vec<usize>,
}

/// Matrix-free action of `Σ_k embed(T_k)` on full-space vectors. Terms with
/// identical support are merged up front.
pub struct TermSum {
    dim: usize,
    plans: Vec<TermPlan>,
}

impl TermSum {
    pub fn new(terms: &[LocalOperator], n_vertices: usize, local_dim: usize) -> Result<Self> {
        let dim = checked_dim(local_dim, n_vertices)?;
        let all: Vec<usize> = (0..n_vertices).collect();
        let mut merged: Vec<(Vec<usize>, CMat)> = Vec::new();
        for t in terms {
            if t.local_dim() != local_dim {
                return Err(Error::DimensionMismatch { expected: local_dim, found: t.local_dim() });
            }
            if let Some(&v) = t.support().iter().find(|&&v| v >= n_vertices) {
                return Err(Error::InvalidArgument(format!("vertex {v} out of range")));
            }
            match merged.iter_mut().find(|(s, _)| s.as_slice() == t.support()) {
                Some((_, m)) => *m += t.matrix(),
                None => merged.push((t.support().to_vec(), t.matrix().clone())),
            }
        }
        let plans = merged
            .into_iter()
            .map(|(support, matrix)| TermPlan {
                inner: subset_offsets(&all, &support, local_dim),
                outer: subset_offsets(&all, &sorted_difference(&all, &support), local_dim),
                matrix,
            })
            .collect();
        Ok(Self { dim, plans })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, v: &CVec) -> CVec {
        let mut out = CVec::zeros(self.dim);
        let mut gathered = Vec::new();
        for plan in &self.plans {
            let k = plan.inner.len();
            gathered.resize(k, ZERO);
            for &o in &plan.outer {
                for (a, &ia) in plan.inner.iter().enumerate() {
                    gathered[a] = v[o + ia];
                }
                for (a, &ia) in plan.inner.iter().enumerate() {
                    let mut acc = ZERO;
                    for (b, g) in gathered.iter().enumerate() {
                        acc += plan.matrix[(a, b)] * g;
                    }
                    out[o + ia] += acc;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> CMat {
        let mut out = CMat::zeros(self.dim, self.dim);
        for plan in &self.plans {
            for &o in &plan.outer {
                for (a, &ia) in plan.inner.iter().enumerate() {
                    for (b, &ib) in plan.inner.iter().enumerate() {
                        out[(o + ia, o + ib)] += plan.matrix[(a, b)];
                    }
                }
            }
        }
        out
    }
}

/// Seeded random matrices and states for experiments and tests.
pub mod random {
    use super::*;
    use rand::Rng;

    pub fn complex<R: Rng>(rng: &mut R) -> C64 {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    pub fn matrix<R: Rng>(rng: &mut R, n: usize) -> CMat {
        CMat::from_fn(n, n, |_, _| complex(rng))
    }

    pub fn hermitian<R: Rng>(rng: &mut R, n: usize) -> CMat {
        let a = matrix(rng, n);
        (&a + a.adjoint()).scale(0.5)
    }

    pub fn unitary<R: Rng>(rng: &mut R, n: usize) -> CMat {
        let h = hermitian(rng, n);
        herm_exp(&h, I * 3.0).expect("random Hermitian input")
    }

    pub fn state<R: Rng>(rng: &mut R, n: usize) -> CVec {
        let v = CVec::from_fn(n, |_, _| complex(rng));
        let norm = v.norm();
        v / real(norm)
    }

    /// Hermitian PSD matrix with eigenvalues in `[lo, hi]` and a kernel of
    /// the given dimension.
    pub fn psd_with_kernel<R: Rng>(rng: &mut R, n: usize, kernel: usize, lo: f64, hi: f64) -> CMat {
        let u = unitary(rng, n);
        let vals: Vec<f64> =
            (0..n).map(|k| if k < kernel { 0.0 } else { rng.gen_range(lo..hi) }).collect();
        reassemble(&vals, &u, real)
    }
}
