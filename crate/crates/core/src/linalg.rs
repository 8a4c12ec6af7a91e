//! Dense complex linear-algebra kernels shared by every module.
//!
//! Eigendecompositions go through LAPACK's divide-and-conquer routines
//! (`zheevd`/`zgesdd`) directly; the row-major/column-major mismatch is
//! absorbed by conjugation identities so no transposition of the input is
//! ever needed.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use thiserror::Error;

pub type CMat = Array2<C64>;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("LAPACK {routine} failed with info = {info}")]
    Lapack { routine: &'static str, info: i32 },
}

fn check_square(m: &CMat) -> Result<usize, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(m.nrows())
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
///
/// Returns `(w, u)` with `h = u diag(w) u†` and the j-th eigenvector in
/// column `u[.., j]`. Exactly diagonal inputs (common for classical models)
/// bypass LAPACK.
pub fn eigh(h: &CMat) -> Result<(Array1<f64>, CMat), LinalgError> {
    check_square(h)?;
    if let Some(diag) = exact_diagonal(h) {
        return Ok(sorted_diagonal_eig(&diag, true));
    }
    let (w, u) = zheevd(h, true)?;
    Ok((w, u.unwrap()))
}

/// Eigenvalues only (ascending) of a Hermitian matrix.
pub fn eigvalsh(h: &CMat) -> Result<Array1<f64>, LinalgError> {
    check_square(h)?;
    if let Some(diag) = exact_diagonal(h) {
        return Ok(sorted_diagonal_eig(&diag, false).0);
    }
    let (w, _) = zheevd(h, false)?;
    Ok(w)
}

/// Diagonal entries when every off-diagonal entry is exactly zero.
///
/// Tensor products of diagonal local terms assemble with bit-exact zeros, so
/// an exact test is the right detector for classical Hamiltonians.
fn exact_diagonal(h: &CMat) -> Option<Array1<f64>> {
    for ((i, j), v) in h.indexed_iter() {
        if i != j && (v.re != 0.0 || v.im != 0.0) {
            return None;
        }
    }
    Some(h.diag().mapv(|z| z.re))
}

fn sorted_diagonal_eig(diag: &Array1<f64>, vectors: bool) -> (Array1<f64>, CMat) {
    let n = diag.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]));
    let w = Array1::from_iter(order.iter().map(|&i| diag[i]));
    let mut u = CMat::zeros((if vectors { n } else { 0 }, if vectors { n } else { 0 }));
    if vectors {
        for (col, &i) in order.iter().enumerate() {
            u[(i, col)] = C64::new(1.0, 0.0);
        }
    }
    (w, u)
}

fn zheevd(h: &CMat, vectors: bool) -> Result<(Array1<f64>, Option<CMat>), LinalgError> {
    let n = h.nrows();
    if n == 0 {
        return Ok((Array1::zeros(0), if vectors { Some(CMat::zeros((0, 0))) } else { None }));
    }
    // Row-major H handed to column-major LAPACK is read as H^T = conj(H);
    // conj(H) has the same (real) spectrum and conjugated eigenvectors.
    let mut a: Vec<C64> = h.iter().cloned().collect();
    let mut w = vec![0.0f64; n];
    let jobz = if vectors { b'V' } else { b'N' } as std::ffi::c_char;
    let uplo = b'L' as std::ffi::c_char;
    let ni = n as i32;
    let mut info = 0i32;
    unsafe {
        let mut wkopt = C64::new(0.0, 0.0);
        let mut rwkopt = 0.0f64;
        let mut iwkopt = 0i32;
        let m1 = -1i32;
        lapack_sys::zheevd_(
            &jobz,
            &uplo,
            &ni,
            a.as_mut_ptr() as *mut _,
            &ni,
            w.as_mut_ptr(),
            &mut wkopt as *mut C64 as *mut _,
            &m1,
            &mut rwkopt,
            &m1,
            &mut iwkopt,
            &m1,
            &mut info,
        );
        if info != 0 {
            return Err(LinalgError::Lapack { routine: "zheevd(query)", info });
        }
        let lwork = wkopt.re as i32;
        let lrwork = rwkopt as i32;
        let liwork = iwkopt;
        let mut work = vec![C64::new(0.0, 0.0); lwork.max(1) as usize];
        let mut rwork = vec![0.0f64; lrwork.max(1) as usize];
        let mut iwork = vec![0i32; liwork.max(1) as usize];
        lapack_sys::zheevd_(
            &jobz,
            &uplo,
            &ni,
            a.as_mut_ptr() as *mut _,
            &ni,
            w.as_mut_ptr(),
            work.as_mut_ptr() as *mut _,
            &lwork,
            rwork.as_mut_ptr(),
            &lrwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(LinalgError::Lapack { routine: "zheevd", info });
    }
    let vecs = if vectors {
        // LAPACK wrote eigenvectors of conj(H) as column-major columns, i.e.
        // rows of our row-major buffer; conjugate to recover those of H.
        let buf = CMat::from_shape_vec((n, n), a).expect("shape");
        let mut u = CMat::zeros((n, n));
        for j in 0..n {
            for i in 0..n {
                u[(i, j)] = buf[(j, i)].conj();
            }
        }
        Some(u)
    } else {
        None
    };
    Ok((Array1::from(w), vecs))
}

/// Singular values (descending) via LAPACK `zgesdd`.
pub fn singular_values(m: &CMat) -> Result<Array1<f64>, LinalgError> {
    let (rows, cols) = (m.nrows(), m.ncols());
    if rows == 0 || cols == 0 {
        return Ok(Array1::zeros(0));
    }
    // Column-major LAPACK sees our row-major buffer as M^T; the singular
    // values of M^T equal those of M.
    let (lr, lc) = (cols as i32, rows as i32);
    let mut a: Vec<C64> = m.iter().cloned().collect();
    let mn = rows.min(cols);
    let mut s = vec![0.0f64; mn];
    let jobz = b'N' as std::ffi::c_char;
    let mut info = 0i32;
    let ldu = 1i32;
    let ldvt = 1i32;
    unsafe {
        let mut wkopt = C64::new(0.0, 0.0);
        let m1 = -1i32;
        let mut rwork = vec![0.0f64; (7 * mn).max(5 * mn * mn + 5 * mn).max(1)];
        let mut iwork = vec![0i32; 8 * mn];
        lapack_sys::zgesdd_(
            &jobz,
            &lr,
            &lc,
            a.as_mut_ptr() as *mut _,
            &lr,
            s.as_mut_ptr(),
            std::ptr::null_mut(),
            &ldu,
            std::ptr::null_mut(),
            &ldvt,
            &mut wkopt as *mut C64 as *mut _,
            &m1,
            rwork.as_mut_ptr(),
            iwork.as_mut_ptr(),
            &mut info,
        );
        if info != 0 {
            return Err(LinalgError::Lapack { routine: "zgesdd(query)", info });
        }
        let lwork = wkopt.re as i32;
        let mut work = vec![C64::new(0.0, 0.0); lwork.max(1) as usize];
        lapack_sys::zgesdd_(
            &jobz,
            &lr,
            &lc,
            a.as_mut_ptr() as *mut _,
            &lr,
            s.as_mut_ptr(),
            std::ptr::null_mut(),
            &ldu,
            std::ptr::null_mut(),
            &ldvt,
            work.as_mut_ptr() as *mut _,
            &lwork,
            rwork.as_mut_ptr(),
            iwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(LinalgError::Lapack { routine: "zgesdd", info });
    }
    Ok(Array1::from(s))
}

/// Operator (spectral) norm: the largest singular value.
pub fn op_norm(m: &CMat) -> f64 {
    singular_values(m).map(|s| s.first().copied().unwrap_or(0.0)).unwrap_or(f64::NAN)
}

/// Schatten-1 (trace) norm: the sum of singular values.
pub fn trace_norm(m: &CMat) -> f64 {
    singular_values(m).map(|s| s.sum()).unwrap_or(f64::NAN)
}

pub fn dagger(m: &CMat) -> CMat {
    let mut out = CMat::zeros((m.ncols(), m.nrows()));
    for ((i, j), v) in m.indexed_iter() {
        out[(j, i)] = v.conj();
    }
    out
}

/// `(M + M†)/2`.
pub fn hermitize(m: &CMat) -> CMat {
    let md = dagger(m);
    (m + &md).mapv(|z| z * 0.5)
}

/// Max entrywise deviation from Hermiticity, `max |M - M†|`.
pub fn hermiticity_defect(m: &CMat) -> f64 {
    if m.nrows() != m.ncols() {
        return f64::INFINITY;
    }
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..=i {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            worst = worst.max(d);
        }
    }
    worst
}

pub fn trace(m: &CMat) -> C64 {
    m.diag().sum()
}

/// Apply a real function to a Hermitian matrix through its eigenbasis.
pub fn func_hermitian(h: &CMat, f: impl Fn(f64) -> f64) -> Result<CMat, LinalgError> {
    let (w, u) = eigh(h)?;
    Ok(recompose(&w.mapv(f), &u))
}

/// `exp(scale * H)` for Hermitian `H`.
pub fn expm_hermitian(h: &CMat, scale: f64) -> Result<CMat, LinalgError> {
    func_hermitian(h, |x| (scale * x).exp())
}

/// `u diag(w) u†`.
pub fn recompose(w: &Array1<f64>, u: &CMat) -> CMat {
    let n = u.nrows();
    let mut scaled = CMat::zeros((n, n));
    for j in 0..n {
        let wj = C64::new(w[j], 0.0);
        for i in 0..n {
            scaled[(i, j)] = u[(i, j)] * wj;
        }
    }
    scaled.dot(&dagger(u))
}

/// `exp(M)` for a general square matrix by scaling-and-squaring Taylor.
///
/// Accuracy is driven by the 1-norm scaling target 0.25; adequate for the
/// small-step propagator products used here.
pub fn expm(m: &CMat) -> CMat {
    let n = m.nrows();
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let squarings = if norm1 > 0.25 { (norm1 / 0.25).log2().ceil() as u32 } else { 0 };
    let scaled = m.mapv(|z| z / C64::new((2.0f64).powi(squarings as i32), 0.0));
    let mut result = CMat::eye(n);
    let mut term = CMat::eye(n);
    for k in 1..=24u32 {
        term = term.dot(&scaled).mapv(|z| z / C64::new(k as f64, 0.0));
        result += &term;
        let tnorm: f64 = term.iter().map(|z| z.norm()).sum();
        if tnorm < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

/// `log(sum_i exp(x_i))` without overflow.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Gauss-Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    // Newton iteration on Legendre polynomials; standard construction.
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    for i in 0..n {
        nodes[i] = mid + half * nodes[i];
        weights[i] *= half;
    }
    (nodes, weights)
}
