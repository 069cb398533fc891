//! Dense complex linear algebra underneath the tensor-network code.
//!
//! Everything is complex (`Complex64`) even where the model Hamiltonians are
//! real; the concurrence needs an entrywise conjugation that is only
//! meaningful with a single complex code path.
//!
//! LAPACK (through `ndarray-linalg`) provides the raw SVD, QR and Hermitian
//! eigendecompositions. Truncation policy, gauge fixing and the Lanczos
//! solver live here.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::{Eigh, JobSvd, Norm, QR, SVD, SVDDC, UPLO};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::ops::Deref;
use thiserror::Error;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Largest Krylov basis kept before a Lanczos restart.
pub const KRYLOV_CAP: usize = 200;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix declared {rows}x{cols} but holds {len} entries")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("empty matrix")]
    Empty,
    #[error("SVD failed to converge on a {rows}x{cols} matrix")]
    SvdFailed { rows: usize, cols: usize },
    #[error("QR failed on a {rows}x{cols} matrix")]
    QrFailed { rows: usize, cols: usize },
    #[error("Hermitian eigendecomposition failed on a {dim}x{dim} matrix")]
    EighFailed { dim: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("linear map is not Hermitian: |<u,Av> - <Au,v>| = {mismatch:e}")]
    NotHermitian { mismatch: f64 },
    #[error(
        "Lanczos stopped after {iterations} applications with residual {residual:e} \
         (eigenvalue estimate {eigenvalue})"
    )]
    LanczosNotConverged {
        iterations: usize,
        residual: f64,
        eigenvalue: f64,
        eigenvector: Box<Array1<C64>>,
    },
}

/// Row-major complex matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix(Array2<C64>);

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<C64>) -> Result<Self, LinalgError> {
        if rows * cols != entries.len() {
            return Err(LinalgError::Shape { rows, cols, len: entries.len() });
        }
        let arr = Array2::from_shape_vec((rows, cols), entries).expect("shape checked above");
        Self::from_array(arr)
    }

    pub fn from_array(arr: Array2<C64>) -> Result<Self, LinalgError> {
        if let Some(((row, col), _)) = arr.indexed_iter().find(|(_, z)| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LinalgError::NonFinite { row, col });
        }
        Ok(Self(arr))
    }

    pub(crate) fn from_array_unchecked(arr: Array2<C64>) -> Self {
        Self(arr)
    }

    pub fn from_real(arr: &Array2<f64>) -> Result<Self, LinalgError> {
        Self::from_array(arr.mapv(|x| C64::new(x, 0.0)))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn into_inner(self) -> Array2<C64> {
        self.0
    }
}

impl Deref for DenseMatrix {
    type Target = Array2<C64>;

    fn deref(&self) -> &Array2<C64> {
        &self.0
    }
}

/// Output of [`truncated_svd`]: `m ≈ left · diag(singular_values) · right`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub left: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub right: DenseMatrix,
    /// Discarded squared weight divided by total squared weight.
    pub truncation_error: f64,
}

/// Truncated singular value decomposition.
///
/// Keeps at most `chi_max` values and drops every value whose squared
/// normalized weight `s²/Σs²` is below `eps`; at least one value is always
/// kept. Ties in magnitude keep LAPACK's (descending) index order.
pub fn truncated_svd(m: &DenseMatrix, chi_max: usize, eps: f64) -> Result<SvdResult, LinalgError> {
    if chi_max == 0 {
        return Err(LinalgError::InvalidArgument("chi_max must be at least 1".into()));
    }
    if !(eps >= 0.0) {
        return Err(LinalgError::InvalidArgument(format!("eps must be non-negative, got {eps}")));
    }
    let (u, s, vt, err) = svd_truncate(m.view(), chi_max, eps)?;
    Ok(SvdResult {
        left: DenseMatrix::from_array_unchecked(u),
        singular_values: s,
        right: DenseMatrix::from_array_unchecked(vt),
        truncation_error: err,
    })
}

/// Array-level SVD used by the tensor code. Returns `(U, s, V†, truncation_error)`.
pub(crate) fn svd_truncate(
    m: ArrayView2<C64>,
    chi_max: usize,
    eps: f64,
) -> Result<(Array2<C64>, Vec<f64>, Array2<C64>, f64), LinalgError> {
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return Err(LinalgError::Empty);
    }
    let (u, s, vt) = full_svd(m)?;

    // LAPACK already sorts descending; the stable sort pins tie order anyway.
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));

    let total: f64 = s.iter().map(|x| x * x).sum();
    let mut keep = 0;
    for &idx in order.iter().take(chi_max) {
        let w = if total > 0.0 { s[idx] * s[idx] / total } else { 0.0 };
        if keep > 0 && w < eps {
            break;
        }
        keep += 1;
    }
    let kept: Vec<usize> = order[..keep].to_vec();
    let discarded: f64 = order[keep..].iter().map(|&i| s[i] * s[i]).fold(0.0, |a, b| a + b);
    let truncation_error = if total > 0.0 { (discarded / total).clamp(0.0, 1.0) } else { 0.0 };

    let u_k = u.select(Axis(1), &kept);
    let vt_k = vt.select(Axis(0), &kept);
    let s_k = kept.iter().map(|&i| s[i].max(0.0)).collect();
    Ok((c_order(u_k), s_k, c_order(vt_k), truncation_error))
}

/// Row-major copy unless already row-major; tensor code reshapes freely.
pub(crate) fn c_order(a: Array2<C64>) -> Array2<C64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn full_svd(m: ArrayView2<C64>) -> Result<(Array2<C64>, Vec<f64>, Array2<C64>), LinalgError> {
    let (rows, cols) = m.dim();
    let owned = m.to_owned();
    if let Ok((Some(u), s, Some(vt))) = owned.svddc(JobSvd::Some) {
        if s.iter().all(|x| x.is_finite()) {
            return Ok((u, s.to_vec(), vt));
        }
    }
    // gesdd occasionally fails where the slower QR-iteration driver succeeds.
    let k = rows.min(cols);
    match owned.svd(true, true) {
        Ok((Some(u), s, Some(vt))) => Ok((
            u.slice(s![.., ..k]).to_owned(),
            s.to_vec(),
            vt.slice(s![..k, ..]).to_owned(),
        )),
        _ => Err(LinalgError::SvdFailed { rows, cols }),
    }
}

/// Thin QR with the phases fixed so that `R` has a real non-negative
/// diagonal. Makes the factorization of an isometry return the isometry
/// itself, which is what keeps repeated canonicalization stable.
pub(crate) fn qr_positive(m: &Array2<C64>) -> Result<(Array2<C64>, Array2<C64>), LinalgError> {
    let (rows, cols) = m.dim();
    let (mut q, mut r) = m.qr().map_err(|_| LinalgError::QrFailed { rows, cols })?;
    let k = q.ncols().min(r.nrows());
    for j in 0..k {
        let d = r[[j, j]];
        let mag = d.norm();
        if mag > 0.0 {
            let phase = d / mag;
            q.column_mut(j).mapv_inplace(|z| z * phase);
            r.row_mut(j).mapv_inplace(|z| z * phase.conj());
        }
    }
    Ok((c_order(q), c_order(r)))
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix.
pub fn eigh_hermitian(m: &Array2<C64>) -> Result<(Array1<f64>, Array2<C64>), LinalgError> {
    let dim = m.nrows();
    if dim == 0 || m.ncols() != dim {
        return Err(LinalgError::InvalidArgument(format!("expected square matrix, got {:?}", m.dim())));
    }
    m.eigh(UPLO::Lower).map_err(|_| LinalgError::EighFailed { dim })
}

pub(crate) fn eigh_real(m: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>), LinalgError> {
    let dim = m.nrows();
    m.eigh(UPLO::Lower).map_err(|_| LinalgError::EighFailed { dim })
}

pub fn dagger(m: &Array2<C64>) -> Array2<C64> {
    c_order(m.t().mapv(|z| z.conj()))
}

pub fn inner(a: ArrayView1<C64>, b: ArrayView1<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn vec_norm(a: ArrayView1<C64>) -> f64 {
    a.norm_l2()
}

/// Result of a converged [`lanczos_lowest`] run.
#[derive(Clone, Debug)]
pub struct LanczosOutcome {
    pub eigenvalue: f64,
    pub eigenvector: Array1<C64>,
    /// Number of applications of the linear map.
    pub iterations: usize,
    pub residual: f64,
}

/// Lowest eigenpair of a Hermitian linear map.
///
/// Lanczos with full reorthogonalization against the stored Krylov basis.
/// The basis is capped at [`KRYLOV_CAP`] vectors; on reaching the cap the
/// iteration restarts from the current Ritz vector. Convergence is declared
/// when the residual `‖Av − λv‖` drops below `tol · ‖A‖_est`, where the norm
/// estimate is the largest Ritz value magnitude seen.
pub fn lanczos_lowest<F>(
    mut apply: F,
    v0: &Array1<C64>,
    tol: f64,
    max_iter: usize,
) -> Result<LanczosOutcome, LinalgError>
where
    F: FnMut(&Array1<C64>) -> Array1<C64>,
{
    let dim = v0.len();
    if dim == 0 {
        return Err(LinalgError::Empty);
    }
    let n0 = vec_norm(v0.view());
    if !(n0 > 0.0) || !n0.is_finite() {
        return Err(LinalgError::InvalidArgument("start vector must be nonzero and finite".into()));
    }
    if max_iter == 0 {
        return Err(LinalgError::InvalidArgument("max_iter must be at least 1".into()));
    }

    let mut x = v0 / C64::new(n0, 0.0);
    let mut applications = 0usize;
    let mut anorm = 0.0f64;
    let mut best: Option<(f64, Array1<C64>, f64)> = None;

    loop {
        let cap = KRYLOV_CAP.min(dim);
        let mut basis: Vec<Array1<C64>> = Vec::with_capacity(cap);
        let mut alphas: Vec<f64> = Vec::with_capacity(cap);
        let mut betas: Vec<f64> = Vec::with_capacity(cap);
        basis.push(x.clone());

        let mut last: Option<(f64, Array1<f64>, f64)> = None;
        loop {
            let k = basis.len() - 1;
            let mut w = apply(&basis[k]);
            applications += 1;
            let alpha = inner(basis[k].view(), w.view()).re;
            alphas.push(alpha);
            // Classical Gram-Schmidt against the whole basis, repeated once
            // when cancellation shrinks the vector by more than 1/√2.
            let mut before = vec_norm(w.view());
            let mut beta = before;
            for _ in 0..2 {
                for v in &basis {
                    let c = inner(v.view(), w.view());
                    w.scaled_add(-c, v);
                }
                beta = vec_norm(w.view());
                if beta > std::f64::consts::FRAC_1_SQRT_2 * before {
                    break;
                }
                before = beta;
            }

            let m = alphas.len();
            let check = m <= 40 || m % 4 == 0 || beta == 0.0 || m == cap || applications >= max_iter;
            if check {
                let (theta, y) = tridiagonal_lowest(&alphas, &betas)?;
                anorm = anorm.max(theta.abs()).max(alpha.abs()).max(beta);
                let resid = beta * y[m - 1].abs();
                last = Some((theta, y.clone(), resid));
                let scale = if anorm > 0.0 { anorm } else { 1.0 };
                let exhausted = beta <= 1e-14 * scale || m == dim;
                if resid <= tol * scale || exhausted {
                    let v = ritz_vector(&basis, &y);
                    return Ok(LanczosOutcome { eigenvalue: theta, eigenvector: v, iterations: applications, residual: resid });
                }
                if applications >= max_iter {
                    let v = ritz_vector(&basis, &y);
                    keep_best(&mut best, theta, v, resid);
                    let (eigenvalue, eigenvector, residual) = best.expect("just stored");
                    return Err(LinalgError::LanczosNotConverged {
                        iterations: applications,
                        residual,
                        eigenvalue,
                        eigenvector: Box::new(eigenvector),
                    });
                }
            }
            if m == cap {
                break;
            }
            betas.push(beta);
            basis.push(w / C64::new(beta, 0.0));
        }

        let (theta, y, resid) = last.expect("checked on reaching the cap");
        x = ritz_vector(&basis, &y);
        keep_best(&mut best, theta, x.clone(), resid);
    }
}

fn keep_best(best: &mut Option<(f64, Array1<C64>, f64)>, theta: f64, v: Array1<C64>, resid: f64) {
    let better = match best {
        Some((_, _, r)) => resid < *r,
        None => true,
    };
    if better {
        *best = Some((theta, v, resid));
    }
}

fn ritz_vector(basis: &[Array1<C64>], y: &Array1<f64>) -> Array1<C64> {
    let mut v = Array1::<C64>::zeros(basis[0].len());
    for (b, &c) in basis.iter().zip(y.iter()) {
        v.scaled_add(C64::new(c, 0.0), b);
    }
    let n = vec_norm(v.view());
    v / C64::new(n, 0.0)
}

fn tridiagonal_lowest(alphas: &[f64], betas: &[f64]) -> Result<(f64, Array1<f64>), LinalgError> {
    let m = alphas.len();
    let mut t = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        t[[i, i]] = alphas[i];
        if i + 1 < m {
            t[[i, i + 1]] = betas[i];
            t[[i + 1, i]] = betas[i];
        }
    }
    let (vals, vecs) = eigh_real(&t)?;
    Ok((vals[0], vecs.column(0).to_owned()))
}

/// Probabilistic Hermiticity test: `⟨u, Av⟩ = ⟨Au, v⟩` on random pairs.
pub fn check_hermitian<F>(mut apply: F, dim: usize, trials: usize, seed: u64) -> Result<(), LinalgError>
where
    F: FnMut(&Array1<C64>) -> Array1<C64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let u = random_unit_vector(dim, &mut rng);
        let v = random_unit_vector(dim, &mut rng);
        let au = apply(&u);
        let av = apply(&v);
        let lhs = inner(u.view(), av.view());
        let rhs = inner(au.view(), v.view());
        let scale = vec_norm(au.view()).max(vec_norm(av.view())).max(1.0);
        let mismatch = (lhs - rhs).norm();
        if mismatch > 1e-10 * scale {
            return Err(LinalgError::NotHermitian { mismatch });
        }
    }
    Ok(())
}

/// [`lanczos_lowest`] preceded by a two-pair [`check_hermitian`] test.
pub fn lanczos_lowest_checked<F>(
    mut apply: F,
    v0: &Array1<C64>,
    tol: f64,
    max_iter: usize,
) -> Result<LanczosOutcome, LinalgError>
where
    F: FnMut(&Array1<C64>) -> Array1<C64>,
{
    check_hermitian(&mut apply, v0.len(), 2, 0x5eed)?;
    lanczos_lowest(apply, v0, tol, max_iter)
}

pub fn random_unit_vector<R: rand::Rng>(dim: usize, rng: &mut R) -> Array1<C64> {
    let v: Array1<C64> = (0..dim)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re, im)
        })
        .collect();
    let n = vec_norm(v.view());
    v / C64::new(n, 0.0)
}

/// Haar-ish random unitary from the QR of a complex Gaussian matrix.
pub fn random_unitary<R: rand::Rng>(dim: usize, rng: &mut R) -> Array2<C64> {
    let g = Array2::from_shape_fn((dim, dim), |_| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    });
    qr_positive(&g).expect("Gaussian matrices have full rank").0
}

pub fn frobenius(m: &Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Kronecker product of two dense matrices.
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::<C64>::zeros((ar * br, ac * bc));
    for ((i, j), &x) in a.indexed_iter() {
        if x == ZERO {
            continue;
        }
        let mut blk = out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
        blk.zip_mut_with(b, |o, &y| *o = x * y);
    }
    out
}
