//! Dense linear algebra: a small column-major complex matrix type plus the
//! LAPACK bindings used by the spectral solver (system OpenBLAS).

use crate::error::{QgError, Result};
use num_complex::Complex64;
use std::ffi::c_char;

pub type C64 = Complex64;

extern "C" {
    fn dsyevd_(
        jobz: *const c_char,
        uplo: *const c_char,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        w: *mut f64,
        work: *mut f64,
        lwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
    );
    fn zheevd_(
        jobz: *const c_char,
        uplo: *const c_char,
        n: *const i32,
        a: *mut C64,
        lda: *const i32,
        w: *mut f64,
        work: *mut C64,
        lwork: *const i32,
        rwork: *mut f64,
        lrwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
    );
    fn zgesvd_(
        jobu: *const c_char,
        jobvt: *const c_char,
        m: *const i32,
        n: *const i32,
        a: *mut C64,
        lda: *const i32,
        s: *mut f64,
        u: *mut C64,
        ldu: *const i32,
        vt: *mut C64,
        ldvt: *const i32,
        work: *mut C64,
        lwork: *const i32,
        rwork: *mut f64,
        info: *mut i32,
    );
    fn zgesv_(
        n: *const i32,
        nrhs: *const i32,
        a: *mut C64,
        lda: *const i32,
        ipiv: *mut i32,
        b: *mut C64,
        ldb: *const i32,
        info: *mut i32,
    );
}

/// Eigendecomposition of a real symmetric matrix stored column-major.
/// `a` is overwritten with the eigenvectors (one per column); eigenvalues are
/// returned ascending.
pub fn eigh_real(a: &mut [f64], n: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    let ni = n as i32;
    let mut w = vec![0.0f64; n];
    let mut info: i32 = 0;
    let jobz = b'V' as c_char;
    let uplo = b'L' as c_char;
    let m1: i32 = -1;
    let (mut wkopt, mut iwkopt) = (0.0f64, 0i32);
    unsafe {
        dsyevd_(&jobz, &uplo, &ni, a.as_mut_ptr(), &ni, w.as_mut_ptr(), &mut wkopt, &m1, &mut iwkopt, &m1, &mut info);
    }
    let lwork = wkopt as i32;
    let liwork = iwkopt.max(1);
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork as usize];
    unsafe {
        dsyevd_(&jobz, &uplo, &ni, a.as_mut_ptr(), &ni, w.as_mut_ptr(), work.as_mut_ptr(), &lwork, iwork.as_mut_ptr(), &liwork, &mut info);
    }
    if info != 0 {
        return Err(QgError::Lapack { routine: "dsyevd", info });
    }
    Ok(w)
}

/// Eigendecomposition of a complex hermitian matrix stored column-major.
pub fn eigh_complex(a: &mut [C64], n: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    let ni = n as i32;
    let mut w = vec![0.0f64; n];
    let mut info: i32 = 0;
    let jobz = b'V' as c_char;
    let uplo = b'L' as c_char;
    let m1: i32 = -1;
    let mut wkopt = C64::new(0.0, 0.0);
    let (mut rwkopt, mut iwkopt) = (0.0f64, 0i32);
    unsafe {
        zheevd_(
            &jobz, &uplo, &ni, a.as_mut_ptr(), &ni, w.as_mut_ptr(), &mut wkopt, &m1, &mut rwkopt, &m1, &mut iwkopt,
            &m1, &mut info,
        );
    }
    let lwork = wkopt.re as i32;
    let lrwork = rwkopt as i32;
    let liwork = iwkopt.max(1);
    let mut work = vec![C64::new(0.0, 0.0); lwork.max(1) as usize];
    let mut rwork = vec![0.0f64; lrwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork as usize];
    unsafe {
        zheevd_(
            &jobz, &uplo, &ni, a.as_mut_ptr(), &ni, w.as_mut_ptr(), work.as_mut_ptr(), &lwork, rwork.as_mut_ptr(),
            &lrwork, iwork.as_mut_ptr(), &liwork, &mut info,
        );
    }
    if info != 0 {
        return Err(QgError::Lapack { routine: "zheevd", info });
    }
    Ok(w)
}

/// Dense complex matrix, column-major (LAPACK layout).
#[derive(Clone, PartialEq)]
pub struct CMat {
    pub nrows: usize,
    pub ncols: usize,
    pub data: Vec<C64>,
}

impl std::fmt::Debug for CMat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "CMat {}x{} [", self.nrows, self.ncols)?;
        for i in 0..self.nrows {
            write!(f, "  ")?;
            for j in 0..self.ncols {
                let z = self[(i, j)];
                write!(f, "{:+.4}{:+.4}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i + j * self.nrows]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i + j * self.nrows]
    }
}

impl CMat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CMat { nrows, ncols, data: vec![C64::new(0.0, 0.0); nrows * ncols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    /// Build from row slices (each row an array of complex entries).
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let nrows = rows.len();
        let ncols = if nrows > 0 { rows[0].len() } else { 0 };
        let mut m = CMat::zeros(nrows, ncols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), ncols);
            for (j, &v) in r.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Self {
        CMat::from_rows(&rows.iter().map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect()).collect::<Vec<_>>())
    }

    pub fn col(&self, j: usize) -> &[C64] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn adjoint(&self) -> CMat {
        let mut out = CMat::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn matmul(&self, other: &CMat) -> CMat {
        assert_eq!(self.ncols, other.nrows);
        let mut out = CMat::zeros(self.nrows, other.ncols);
        for j in 0..other.ncols {
            for k in 0..self.ncols {
                let b = other[(k, j)];
                if b == C64::new(0.0, 0.0) {
                    continue;
                }
                let col = self.col(k);
                let dst = &mut out.data[j * self.nrows..(j + 1) * self.nrows];
                for i in 0..self.nrows {
                    dst[i] += col[i] * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(self.ncols, x.len());
        let mut y = vec![C64::new(0.0, 0.0); self.nrows];
        for (k, &xk) in x.iter().enumerate() {
            let col = self.col(k);
            for i in 0..self.nrows {
                y[i] += col[i] * xk;
            }
        }
        y
    }

    pub fn add(&self, other: &CMat) -> CMat {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        out
    }

    pub fn scale(&self, c: C64) -> CMat {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= c;
        }
        out
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.data.iter().all(|z| z.im.abs() <= tol)
    }

    /// Horizontal concatenation [self | other].
    pub fn hcat(&self, other: &CMat) -> CMat {
        assert_eq!(self.nrows, other.nrows);
        let mut out = CMat::zeros(self.nrows, self.ncols + other.ncols);
        out.data[..self.data.len()].copy_from_slice(&self.data);
        out.data[self.data.len()..].copy_from_slice(&other.data);
        out
    }

    /// Residual of hermiticity, ||A - A^dag||_F.
    pub fn herm_residual(&self) -> f64 {
        self.sub(&self.adjoint()).norm_fro()
    }

    /// Solve A x = b for square A (LU with partial pivoting). A and b are copied.
    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>> {
        assert_eq!(self.nrows, self.ncols);
        assert_eq!(b.len(), self.nrows);
        let n = self.nrows as i32;
        let nrhs: i32 = 1;
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        let mut ipiv = vec![0i32; self.nrows];
        let mut info: i32 = 0;
        unsafe {
            zgesv_(&n, &nrhs, a.as_mut_ptr(), &n, ipiv.as_mut_ptr(), x.as_mut_ptr(), &n, &mut info);
        }
        if info != 0 {
            return Err(QgError::Lapack { routine: "zgesv", info });
        }
        Ok(x)
    }

    /// Inverse via LU; errors if singular.
    pub fn inverse(&self) -> Result<CMat> {
        assert_eq!(self.nrows, self.ncols);
        let n = self.nrows as i32;
        let nrhs = self.ncols as i32;
        let mut a = self.data.clone();
        let mut b = CMat::identity(self.nrows);
        let mut ipiv = vec![0i32; self.nrows];
        let mut info: i32 = 0;
        unsafe {
            zgesv_(&n, &nrhs, a.as_mut_ptr(), &n, ipiv.as_mut_ptr(), b.data.as_mut_ptr(), &n, &mut info);
        }
        if info != 0 {
            return Err(QgError::Lapack { routine: "zgesv", info });
        }
        Ok(b)
    }

    /// Hermitian eigendecomposition; returns (eigenvalues ascending, eigenvectors as columns).
    pub fn eigh(&self) -> Result<(Vec<f64>, CMat)> {
        assert_eq!(self.nrows, self.ncols);
        let mut a = self.data.clone();
        let w = eigh_complex(&mut a, self.nrows)?;
        Ok((w, CMat { nrows: self.nrows, ncols: self.ncols, data: a }))
    }
}

/// Full SVD A = U diag(s) V^dag. Returns (U, s, V^dag).
pub fn svd(a: &CMat) -> Result<(CMat, Vec<f64>, CMat)> {
    let (m, n) = (a.nrows, a.ncols);
    let (mi, ni) = (m as i32, n as i32);
    let mn = m.min(n);
    let mut work_a = a.data.clone();
    let mut s = vec![0.0f64; mn];
    let mut u = CMat::zeros(m, m);
    let mut vt = CMat::zeros(n, n);
    let mut rwork = vec![0.0f64; 5 * mn.max(1)];
    let mut info: i32 = 0;
    let jobu = b'A' as c_char;
    let jobvt = b'A' as c_char;
    let m1: i32 = -1;
    let mut wkopt = C64::new(0.0, 0.0);
    unsafe {
        zgesvd_(
            &jobu, &jobvt, &mi, &ni, work_a.as_mut_ptr(), &mi, s.as_mut_ptr(), u.data.as_mut_ptr(), &mi,
            vt.data.as_mut_ptr(), &ni, &mut wkopt, &m1, rwork.as_mut_ptr(), &mut info,
        );
    }
    let lwork = wkopt.re as i32;
    let mut work = vec![C64::new(0.0, 0.0); lwork.max(1) as usize];
    unsafe {
        zgesvd_(
            &jobu, &jobvt, &mi, &ni, work_a.as_mut_ptr(), &mi, s.as_mut_ptr(), u.data.as_mut_ptr(), &mi,
            vt.data.as_mut_ptr(), &ni, work.as_mut_ptr(), &lwork, rwork.as_mut_ptr(), &mut info,
        );
    }
    if info != 0 {
        return Err(QgError::Lapack { routine: "zgesvd", info });
    }
    Ok((u, s, vt))
}

/// Numerical rank at relative tolerance `tol_rel * s_max`.
pub fn rank(a: &CMat, tol_rel: f64) -> Result<usize> {
    let (_, s, _) = svd(a)?;
    let smax = s.first().copied().unwrap_or(0.0);
    Ok(s.iter().filter(|&&x| x > tol_rel * smax).count())
}

/// Orthonormal basis (columns) of the null space of `a`, at relative tolerance.
pub fn null_space(a: &CMat, tol_rel: f64) -> Result<CMat> {
    let (_, s, vt) = svd(a)?;
    let smax = s.first().copied().unwrap_or(0.0);
    let r = s.iter().filter(|&&x| x > tol_rel * smax).count();
    let n = a.ncols;
    let mut basis = CMat::zeros(n, n - r);
    for (jj, row) in (r..n).enumerate() {
        for i in 0..n {
            basis[(i, jj)] = vt[(row, i)].conj();
        }
    }
    Ok(basis)
}

/// Orthogonal projector onto the column space of `cols`.
pub fn column_space_projector(cols: &CMat, tol_rel: f64) -> Result<CMat> {
    let m = cols.nrows;
    if cols.ncols == 0 {
        return Ok(CMat::zeros(m, m));
    }
    let (u, s, _) = svd(cols)?;
    let smax = s.first().copied().unwrap_or(0.0);
    let r = s.iter().filter(|&&x| x > tol_rel * smax).count();
    let mut p = CMat::zeros(m, m);
    for k in 0..r {
        let uk = u.col(k).to_vec();
        for j in 0..m {
            let c = uk[j].conj();
            for i in 0..m {
                p[(i, j)] += uk[i] * c;
            }
        }
    }
    Ok(p)
}

/// Reduced row echelon form with partial pivoting; pivots normalized to 1.
/// Entries below `tol_rel * max_abs` are treated as zero. Used to canonicalize
/// coupling matrices (defined only modulo an invertible left factor).
pub fn rref(a: &CMat, tol_rel: f64) -> CMat {
    let mut m = a.clone();
    let tol = tol_rel * m.max_abs().max(1e-300);
    let mut pivot_row = 0;
    for col in 0..m.ncols {
        if pivot_row >= m.nrows {
            break;
        }
        let (mut best, mut best_abs) = (pivot_row, 0.0f64);
        for i in pivot_row..m.nrows {
            let v = m[(i, col)].norm();
            if v > best_abs {
                best = i;
                best_abs = v;
            }
        }
        if best_abs <= tol {
            for i in pivot_row..m.nrows {
                m[(i, col)] = C64::new(0.0, 0.0);
            }
            continue;
        }
        if best != pivot_row {
            for j in 0..m.ncols {
                let tmp = m[(pivot_row, j)];
                m[(pivot_row, j)] = m[(best, j)];
                m[(best, j)] = tmp;
            }
        }
        let inv = C64::new(1.0, 0.0) / m[(pivot_row, col)];
        for j in 0..m.ncols {
            m[(pivot_row, j)] *= inv;
        }
        m[(pivot_row, col)] = C64::new(1.0, 0.0);
        for i in 0..m.nrows {
            if i == pivot_row {
                continue;
            }
            let f = m[(i, col)];
            if f.norm() > 0.0 {
                for j in 0..m.ncols {
                    let sub = f * m[(pivot_row, j)];
                    m[(i, j)] -= sub;
                }
                m[(i, col)] = C64::new(0.0, 0.0);
            }
        }
        pivot_row += 1;
    }
    m
}

/// Random unitary matrix via modified Gram-Schmidt on a complex Gaussian sample.
pub fn random_unitary<R: rand::Rng>(n: usize, rng: &mut R) -> CMat {
    use rand_distr::{Distribution, StandardNormal};
    let mut m = CMat::zeros(n, n);
    for v in m.data.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *v = C64::new(re, im);
    }
    for j in 0..n {
        for k in 0..j {
            let mut proj = C64::new(0.0, 0.0);
            for i in 0..n {
                proj += m[(i, k)].conj() * m[(i, j)];
            }
            for i in 0..n {
                let sub = proj * m[(i, k)];
                m[(i, j)] -= sub;
            }
        }
        let norm = m.col(j).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for i in 0..n {
            m[(i, j)] /= norm;
        }
    }
    m
}

/// Trapezoidal quadrature with uniform spacing.
pub fn trapezoid_uniform(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    h * (0.5 * values[0] + inner + 0.5 * values[values.len() - 1])
}
