//! Vertex couplings `A f(v) + B f'(v) = 0`: self-adjointness checks, the
//! orthogonal projector decomposition (Dirichlet / Neumann / Robin parts with
//! Robin strength operator), standard couplings, and the vertex scattering
//! matrix of a star graph.
//!
//! Conventions fixed here and audited by tests:
//! - f'(v) collects derivatives pointing away from the vertex into each edge;
//! - admissible boundary data satisfies P_D f = 0, P_N f' = 0, P_R f' = L P_R f;
//! - the quadratic form carries `+<L P_R f, P_R f>`;
//! - G(k) = -(A + ikB)^{-1} (A - ikB) = -P_D + P_N - (L - ik)^{-1}(L + ik) P_R.
//!   (The two expressions agree; the Robin factor orientation is pinned by the
//!   resolvent-kernel boundary-condition test in `propagation`.)

use crate::error::{QgError, Result};
use crate::linalg::{self, null_space, rank, rref, svd, CMat, C64};

pub const RANK_TOL: f64 = 1e-10;
pub const PROJECTOR_TOL: f64 = 1e-10;

/// Result of the self-adjointness test for a coupling pair.
#[derive(Debug, Clone)]
pub struct SelfAdjointReport {
    pub pass: bool,
    pub rank: usize,
    pub hermiticity_residual: f64,
}

/// Checks the two conditions for `A f + B f' = 0` to define a self-adjoint
/// vertex: maximal rank of (A|B) and hermitian A B^dag.
pub fn check_self_adjoint(a: &CMat, b: &CMat) -> Result<SelfAdjointReport> {
    if a.nrows != a.ncols || b.nrows != b.ncols || a.nrows != b.nrows {
        return Err(QgError::Coupling(format!(
            "coupling matrices must be square and equal-sized, got {}x{} and {}x{}",
            a.nrows, a.ncols, b.nrows, b.ncols
        )));
    }
    let n = a.nrows;
    let ab = a.hcat(b);
    let r = rank(&ab, RANK_TOL)?;
    let abh = a.matmul(&b.adjoint());
    let herm = abh.herm_residual() / (1.0 + abh.norm_fro());
    Ok(SelfAdjointReport { pass: r == n && herm <= 1e-10, rank: r, hermiticity_residual: herm })
}

/// The three mutually orthogonal boundary projectors plus the Robin strength
/// operator (stored full-size, zero off the Robin range).
#[derive(Debug, Clone)]
pub struct ProjectorDecomposition {
    pub p_d: CMat,
    pub p_n: CMat,
    pub p_r: CMat,
    /// Robin strength as an operator on C^n supported on range(p_r).
    pub lambda: CMat,
    /// Orthonormal basis of range(p_r), one column per Robin direction.
    pub robin_basis: CMat,
    /// Robin strength on the `robin_basis` coordinates (hermitian, invertible).
    pub lambda_small: CMat,
}

impl ProjectorDecomposition {
    pub fn robin_rank(&self) -> usize {
        self.robin_basis.ncols
    }
}

/// Compute (P_D, P_N, P_R, Lambda) from a validated coupling pair.
///
/// Route: the null space N = [N_f; N_p] of (A|B) spans the admissible boundary
/// pairs (f, f'). P_D projects onto the orthogonal complement of the reachable
/// f-values (range N_f), P_N likewise for f' (range N_p), P_R is the rest.
/// Lambda on range(P_R) is -(W^dag B W)^{-1} (W^dag A W) for an orthonormal
/// Robin basis W; the sign makes `P_R f' = Lambda P_R f` hold on admissible
/// pairs with the outward-derivative convention.
pub fn projector_decomposition(a: &CMat, b: &CMat) -> Result<ProjectorDecomposition> {
    let report = check_self_adjoint(a, b)?;
    if !report.pass {
        return Err(QgError::Coupling(format!(
            "coupling is not self-adjoint (rank {}, hermiticity residual {:.3e})",
            report.rank, report.hermiticity_residual
        )));
    }
    let n = a.nrows;
    let ab = a.hcat(b);
    let ns = null_space(&ab, RANK_TOL)?;
    debug_assert_eq!(ns.ncols, n);
    let mut n_f = CMat::zeros(n, n);
    let mut n_p = CMat::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            n_f[(i, j)] = ns[(i, j)];
            n_p[(i, j)] = ns[(n + i, j)];
        }
    }
    let p_d = CMat::identity(n).sub(&linalg::column_space_projector(&n_f, RANK_TOL)?);
    let p_n = CMat::identity(n).sub(&linalg::column_space_projector(&n_p, RANK_TOL)?);
    let p_r = CMat::identity(n).sub(&p_d).sub(&p_n);

    for (name, p) in [("P_D", &p_d), ("P_N", &p_n), ("P_R", &p_r)] {
        let idem = p.matmul(p).sub(p).norm_fro();
        let herm = p.herm_residual();
        if idem > PROJECTOR_TOL || herm > PROJECTOR_TOL {
            return Err(QgError::Coupling(format!(
                "{name} failed projector validation (idempotency {idem:.2e}, hermiticity {herm:.2e})"
            )));
        }
    }
    let ortho = p_d.matmul(&p_n).norm_fro().max(p_d.matmul(&p_r).norm_fro()).max(p_n.matmul(&p_r).norm_fro());
    if ortho > PROJECTOR_TOL {
        return Err(QgError::Coupling(format!("projectors are not mutually orthogonal (residual {ortho:.2e})")));
    }

    // Orthonormal basis of range(P_R) from its SVD.
    let (u, s, _) = svd(&p_r)?;
    let rr = s.iter().filter(|&&x| x > 0.5).count();
    let mut w = CMat::zeros(n, rr);
    for j in 0..rr {
        for i in 0..n {
            w[(i, j)] = u[(i, j)];
        }
    }
    let (lambda, lambda_small) = if rr == 0 {
        (CMat::zeros(n, n), CMat::zeros(0, 0))
    } else {
        let wa = w.adjoint().matmul(&a.matmul(&w));
        let wb = w.adjoint().matmul(&b.matmul(&w));
        let wb_inv = wb
            .inverse()
            .map_err(|_| QgError::Coupling("Robin part has singular B-restriction; Lambda undefined".into()))?;
        let mut lam_s = wb_inv.matmul(&wa).scale(C64::new(-1.0, 0.0));
        let herm = lam_s.herm_residual() / (1.0 + lam_s.norm_fro());
        if herm > 1e-8 {
            return Err(QgError::Coupling(format!("Robin strength operator not hermitian (residual {herm:.2e})")));
        }
        let t = lam_s.adjoint();
        lam_s = lam_s.add(&t).scale(C64::new(0.5, 0.0));
        let (evals, _) = lam_s.eigh()?;
        let min_abs = evals.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
        if min_abs <= 1e-10 {
            return Err(QgError::Coupling(format!("Robin strength operator nearly singular (min |eig| {min_abs:.2e})")));
        }
        let lam_full = w.matmul(&lam_s.matmul(&w.adjoint()));
        (lam_full, lam_s)
    };
    Ok(ProjectorDecomposition { p_d, p_n, p_r, lambda, robin_basis: w, lambda_small })
}

/// Built-in coupling families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplingKind {
    Kirchhoff,
    Dirichlet,
    /// Continuity at the vertex plus `sum_j f'_j(v) = alpha f(v)`.
    Delta { alpha: f64 },
    /// Derivative continuity plus `sum_j f_j(v) = beta f'(v)`.
    DeltaPrime { beta: f64 },
}

/// A validated, canonicalized vertex coupling with its projector data.
#[derive(Debug, Clone)]
pub struct VertexCoupling {
    pub a: CMat,
    pub b: CMat,
    pub degree: usize,
    pub projectors: ProjectorDecomposition,
    pub kind: Option<CouplingKind>,
}

impl VertexCoupling {
    /// Validate, canonicalize (row-reduce (A|B)), and decompose.
    pub fn new(a: CMat, b: CMat) -> Result<Self> {
        let report = check_self_adjoint(&a, &b)?;
        if !report.pass {
            return Err(QgError::Coupling(format!(
                "coupling rejected: rank {} of {}, hermiticity residual {:.3e}",
                report.rank,
                a.nrows,
                report.hermiticity_residual
            )));
        }
        let n = a.nrows;
        let canon = rref(&a.hcat(&b), 1e-12);
        let mut ac = CMat::zeros(n, n);
        let mut bc = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                ac[(i, j)] = canon[(i, j)];
                bc[(i, j)] = canon[(i, n + j)];
            }
        }
        let projectors = projector_decomposition(&ac, &bc)?;
        Ok(VertexCoupling { a: ac, b: bc, degree: n, projectors, kind: None })
    }

    /// Canonical (A, B) pair for a standard coupling of the given vertex degree.
    pub fn standard(kind: CouplingKind, degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(QgError::Coupling("vertex degree must be at least 1".into()));
        }
        let n = degree;
        let (a, b) = match kind {
            CouplingKind::Dirichlet => (CMat::identity(n), CMat::zeros(n, n)),
            CouplingKind::Kirchhoff => delta_pair(0.0, n),
            CouplingKind::Delta { alpha } => delta_pair(alpha, n),
            CouplingKind::DeltaPrime { beta } => {
                if beta == 0.0 {
                    return Err(QgError::Coupling("delta-prime coupling needs beta != 0".into()));
                }
                let mut a = CMat::zeros(n, n);
                let mut b = CMat::zeros(n, n);
                for i in 0..n.saturating_sub(1) {
                    b[(i, i)] = C64::new(1.0, 0.0);
                    b[(i, i + 1)] = C64::new(-1.0, 0.0);
                }
                for j in 0..n {
                    a[(n - 1, j)] = C64::new(1.0, 0.0);
                }
                b[(n - 1, 0)] = C64::new(-beta, 0.0);
                (a, b)
            }
        };
        let mut c = VertexCoupling::new(a, b)?;
        c.kind = Some(kind);
        Ok(c)
    }

    pub fn delta_alpha(&self) -> Option<f64> {
        match self.kind {
            Some(CouplingKind::Delta { alpha }) => Some(alpha),
            Some(CouplingKind::Kirchhoff) => Some(0.0),
            _ => None,
        }
    }

    /// True when the coupling has no Robin part.
    pub fn robin_free(&self) -> bool {
        self.projectors.robin_rank() == 0
    }
}

fn delta_pair(alpha: f64, n: usize) -> (CMat, CMat) {
    let mut a = CMat::zeros(n, n);
    let mut b = CMat::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        a[(i, i)] = C64::new(1.0, 0.0);
        a[(i, i + 1)] = C64::new(-1.0, 0.0);
    }
    a[(n - 1, 0)] = C64::new(-alpha, 0.0);
    for j in 0..n {
        b[(n - 1, j)] = C64::new(1.0, 0.0);
    }
    (a, b)
}

/// Vertex scattering matrix `G(k) = -(A + ikB)^{-1} (A - ikB)`.
/// Errors with `SpectralPoint` when A + ikB is (numerically) singular.
pub fn scattering_matrix(k: C64, a: &CMat, b: &CMat) -> Result<CMat> {
    let ik = C64::new(0.0, 1.0) * k;
    let m1 = a.add(&b.scale(ik));
    let m2 = a.sub(&b.scale(ik));
    let (_, s, _) = svd(&m1)?;
    let smax = s.first().copied().unwrap_or(0.0);
    let smin = s.last().copied().unwrap_or(0.0);
    if smin <= 1e-12 * smax.max(1e-300) {
        return Err(QgError::SpectralPoint { k: k.re });
    }
    Ok(m1.inverse()?.matmul(&m2).scale(C64::new(-1.0, 0.0)))
}

/// Scattering matrix from the projector data:
/// `G(k) = -P_D + P_N - (Lambda - ik)^{-1} (Lambda + ik) P_R`.
pub fn scattering_matrix_projector(k: C64, pd: &ProjectorDecomposition) -> Result<CMat> {
    let n = pd.p_d.nrows;
    let mut g = pd.p_n.sub(&pd.p_d);
    let rr = pd.robin_rank();
    if rr > 0 {
        let ik = C64::new(0.0, 1.0) * k;
        let mut minus = pd.lambda_small.clone();
        let mut plus = pd.lambda_small.clone();
        for i in 0..rr {
            minus[(i, i)] -= ik;
            plus[(i, i)] += ik;
        }
        let factor = minus.inverse()?.matmul(&plus).scale(C64::new(-1.0, 0.0));
        let w = &pd.robin_basis;
        let robin = w.matmul(&factor.matmul(&w.adjoint()));
        g = g.add(&robin);
    }
    debug_assert_eq!(g.nrows, n);
    Ok(g)
}

/// Number of eigenvalues of the hermitian matrix `A B^dag` strictly above
/// `1e-10 * ||A B^dag||`; for a star graph this predicts the number of
/// negative eigenvalues of the Hamiltonian.
pub fn count_negative_eigs_predicted(a: &CMat, b: &CMat) -> Result<usize> {
    let report = check_self_adjoint(a, b)?;
    if !report.pass {
        return Err(QgError::Coupling("predicted count requires a self-adjoint coupling".into()));
    }
    let abh = a.matmul(&b.adjoint());
    let sym = abh.add(&abh.adjoint()).scale(C64::new(0.5, 0.0));
    let (evals, _) = sym.eigh()?;
    let norm = evals.iter().map(|x| x.abs()).fold(0.0, f64::max);
    Ok(evals.iter().filter(|&&x| x > 1e-10 * norm).count())
}

/// Random self-adjoint coupling pair `A = I - U`, `B = i (I + U)` for a Haar-ish
/// unitary U: always maximal rank with hermitian A B^dag. Used by property
/// tests and experiments.
pub fn random_self_adjoint_coupling<R: rand::Rng>(n: usize, rng: &mut R) -> (CMat, CMat) {
    let u = linalg::random_unitary(n, rng);
    let a = CMat::identity(n).sub(&u);
    let b = CMat::identity(n).add(&u).scale(C64::new(0.0, 1.0));
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn kirchhoff3_raw() -> (CMat, CMat) {
        let a = CMat::from_real_rows(&[vec![1.0, -1.0, 0.0], vec![0.0, 1.0, -1.0], vec![0.0, 0.0, 0.0]]);
        let b = CMat::from_real_rows(&[vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]]);
        (a, b)
    }

    #[test]
    fn self_adjoint_examples() {
        let (a, b) = kirchhoff3_raw();
        let rep = check_self_adjoint(&a, &b).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.rank, 3);

        let rep = check_self_adjoint(&CMat::identity(3), &CMat::zeros(3, 3)).unwrap();
        assert!(rep.pass);

        let rep = check_self_adjoint(&CMat::zeros(2, 2), &CMat::zeros(2, 2)).unwrap();
        assert!(!rep.pass);
        assert_eq!(rep.rank, 0);

        assert!(check_self_adjoint(&CMat::zeros(2, 2), &CMat::zeros(3, 3)).is_err());
    }

    #[test]
    fn projectors_for_standard_couplings() {
        // Kirchhoff: P_N = J/3, P_D = I - J/3, P_R = 0
        let c = VertexCoupling::standard(CouplingKind::Kirchhoff, 3).unwrap();
        let third = C64::new(1.0 / 3.0, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(c.projectors.p_n[(i, j)].re, third.re, epsilon = 1e-10);
                let expect = if i == j { 1.0 - third.re } else { -third.re };
                assert_relative_eq!(c.projectors.p_d[(i, j)].re, expect, epsilon = 1e-10);
            }
        }
        assert!(c.projectors.p_r.norm_fro() < 1e-10);
        assert!(c.robin_free());

        // Dirichlet: P_D = I
        let c = VertexCoupling::standard(CouplingKind::Dirichlet, 3).unwrap();
        assert!(c.projectors.p_d.sub(&CMat::identity(3)).norm_fro() < 1e-10);
        assert!(c.projectors.p_n.norm_fro() < 1e-10);

        // delta(alpha): P_D = I - J/3, P_N = 0, P_R = J/3, Lambda = alpha/3 on range
        let alpha = 1.7;
        let c = VertexCoupling::standard(CouplingKind::Delta { alpha }, 3).unwrap();
        assert!(c.projectors.p_n.norm_fro() < 1e-10);
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(c.projectors.p_r[(i, j)].re, third.re, epsilon = 1e-10);
            }
        }
        assert_eq!(c.projectors.robin_rank(), 1);
        assert_relative_eq!(c.projectors.lambda_small[(0, 0)].re, alpha / 3.0, epsilon = 1e-10);

        // delta-prime(beta): P_D = 0, P_N = I - J/n, Lambda = n/beta on range
        let beta = 2.5;
        let c = VertexCoupling::standard(CouplingKind::DeltaPrime { beta }, 3).unwrap();
        assert!(c.projectors.p_d.norm_fro() < 1e-10);
        assert_relative_eq!(c.projectors.lambda_small[(0, 0)].re, 3.0 / beta, epsilon = 1e-10);
    }

    #[test]
    fn delta_two_edge_conditions() {
        // A=[[1,-1],[-1,0]], B=[[0,0],[1,1]] encodes f1=f2 and f'1+f'2=f1
        let a = CMat::from_real_rows(&[vec![1.0, -1.0], vec![-1.0, 0.0]]);
        let b = CMat::from_real_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        assert!(check_self_adjoint(&a, &b).unwrap().pass);
        // (f, f') = ((1,1), (0.5, 0.5)) satisfies both conditions
        let f = vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)];
        let fp = vec![C64::new(0.5, 0.0), C64::new(0.5, 0.0)];
        let mut residual: f64 = 0.0;
        for i in 0..2 {
            let mut r = C64::new(0.0, 0.0);
            for j in 0..2 {
                r += a[(i, j)] * f[j] + b[(i, j)] * fp[j];
            }
            residual = residual.max(r.norm());
        }
        assert!(residual < 1e-14);
        // matches the standard constructor up to canonicalization
        let c = VertexCoupling::standard(CouplingKind::Delta { alpha: 1.0 }, 2).unwrap();
        let c2 = VertexCoupling::new(a, b).unwrap();
        assert!(c.a.sub(&c2.a).norm_fro() < 1e-12);
        assert!(c.b.sub(&c2.b).norm_fro() < 1e-12);
    }

    #[test]
    fn scattering_standard_cases() {
        let c = VertexCoupling::standard(CouplingKind::Kirchhoff, 3).unwrap();
        for &k in &[0.3, 1.0, 7.5] {
            let g = scattering_matrix(C64::new(k, 0.0), &c.a, &c.b).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 2.0 / 3.0 - 1.0 } else { 2.0 / 3.0 };
                    assert_relative_eq!(g[(i, j)].re, expect, epsilon = 1e-10);
                    assert!(g[(i, j)].im.abs() < 1e-10);
                }
            }
        }
        let c = VertexCoupling::standard(CouplingKind::Dirichlet, 2).unwrap();
        let g = scattering_matrix(C64::new(2.0, 0.0), &c.a, &c.b).unwrap();
        assert!(g.add(&CMat::identity(2)).norm_fro() < 1e-12);

        // delta(alpha) at large k approaches the Kirchhoff matrix
        let c = VertexCoupling::standard(CouplingKind::Delta { alpha: 1.0 }, 3).unwrap();
        let g = scattering_matrix(C64::new(1e8, 0.0), &c.a, &c.b).unwrap();
        let ck = VertexCoupling::standard(CouplingKind::Kirchhoff, 3).unwrap();
        let gk = scattering_matrix(C64::new(1.0, 0.0), &ck.a, &ck.b).unwrap();
        assert!(g.sub(&gk).max_abs() < 1e-6);
    }

    #[test]
    fn predicted_negative_counts() {
        let c = VertexCoupling::standard(CouplingKind::Delta { alpha: -1.0 }, 3).unwrap();
        assert_eq!(count_negative_eigs_predicted(&c.a, &c.b).unwrap(), 1);
        let c = VertexCoupling::standard(CouplingKind::Kirchhoff, 5).unwrap();
        assert_eq!(count_negative_eigs_predicted(&c.a, &c.b).unwrap(), 0);
        let c = VertexCoupling::standard(CouplingKind::Delta { alpha: 1.0 }, 3).unwrap();
        assert_eq!(count_negative_eigs_predicted(&c.a, &c.b).unwrap(), 0);
    }

    #[test]
    fn hundred_random_couplings_scattering_properties() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..100 {
            let n = 2 + (trial % 4);
            let (a, b) = random_self_adjoint_coupling(n, &mut rng);
            let rep = check_self_adjoint(&a, &b).unwrap();
            assert!(rep.pass, "trial {trial}");
            let k = C64::new(0.2 + 3.0 * (trial as f64 % 7.0) / 7.0, 0.0);
            let g = match scattering_matrix(k, &a, &b) {
                Ok(g) => g,
                Err(QgError::SpectralPoint { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            // unitarity for real k
            let unit = g.adjoint().matmul(&g).sub(&CMat::identity(n)).norm_fro();
            assert!(unit <= 1e-9, "trial {trial}: unitarity residual {unit:.2e}");
            // agreement of both formulas
            let pd = projector_decomposition(&a, &b).unwrap();
            let g2 = scattering_matrix_projector(k, &pd).unwrap();
            let diff = g.sub(&g2).max_abs();
            assert!(diff <= 1e-10, "trial {trial}: formula disagreement {diff:.2e}");
        }
    }

    #[test]
    fn robin_free_scattering_is_k_independent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        // Build Robin-free couplings by zeroing the Robin channel: use
        // Kirchhoff-like mixtures P_D f = 0 on a random subspace, P_N f' = 0 on
        // its complement. A = P, B = I - P for an orthogonal projector P is
        // self-adjoint with no Robin part.
        for _ in 0..20 {
            let n = 3;
            let u = linalg::random_unitary(n, &mut rng);
            let mut p = CMat::zeros(n, n);
            for k in 0..2 {
                let col = u.col(k).to_vec();
                for j in 0..n {
                    let c = col[j].conj();
                    for i in 0..n {
                        p[(i, j)] += col[i] * c;
                    }
                }
            }
            let a = p.clone();
            let b = CMat::identity(n).sub(&p);
            let pd = projector_decomposition(&a, &b).unwrap();
            assert_eq!(pd.robin_rank(), 0);
            let kgrid = [0.1, 0.7, 2.0, 9.0];
            let gs: Vec<CMat> =
                kgrid.iter().map(|&k| scattering_matrix(C64::new(k, 0.0), &a, &b).unwrap()).collect();
            for g in &gs[1..] {
                assert!(g.sub(&gs[0]).max_abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn boundary_reconstruction_both_directions() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for trial in 0..100 {
            let n = 2 + (trial % 3);
            let (a, b) = random_self_adjoint_coupling(n, &mut rng);
            let pd = projector_decomposition(&a, &b).unwrap();
            // direction 1: projector-compatible data solves A f + B f' = 0
            let mut f = vec![C64::new(0.0, 0.0); n];
            for v in f.iter_mut() {
                *v = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
            // force P_D f = 0
            let pdv = pd.p_d.matvec(&f);
            for i in 0..n {
                f[i] -= pdv[i];
            }
            // f' = Lambda P_R f + (free Dirichlet-range part)
            let prf = pd.p_r.matvec(&f);
            let mut fp = pd.lambda.matvec(&prf);
            let mut z = vec![C64::new(0.0, 0.0); n];
            for v in z.iter_mut() {
                *v = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
            let zd = pd.p_d.matvec(&z);
            for i in 0..n {
                fp[i] += zd[i];
            }
            let mut res: f64 = 0.0;
            for i in 0..n {
                let mut r = C64::new(0.0, 0.0);
                for j in 0..n {
                    r += a[(i, j)] * f[j] + b[(i, j)] * fp[j];
                }
                res = res.max(r.norm());
            }
            let scale: f64 = f.iter().chain(&fp).map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert!(res <= 1e-9 * (1.0 + scale), "trial {trial}: residual {res:.2e}");

            // direction 2: null-space pairs satisfy the projector conditions
            let ns = null_space(&a.hcat(&b), RANK_TOL).unwrap();
            for c in 0..ns.ncols {
                let fv: Vec<C64> = (0..n).map(|i| ns[(i, c)]).collect();
                let pv: Vec<C64> = (0..n).map(|i| ns[(n + i, c)]).collect();
                let d1 = pd.p_d.matvec(&fv).iter().map(|v| v.norm()).fold(0.0, f64::max);
                let d2 = pd.p_n.matvec(&pv).iter().map(|v| v.norm()).fold(0.0, f64::max);
                let lprf = pd.lambda.matvec(&pd.p_r.matvec(&fv));
                let prp = pd.p_r.matvec(&pv);
                let d3 = lprf.iter().zip(&prp).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
                assert!(d1.max(d2).max(d3) <= 1e-9, "trial {trial}: {d1:.2e} {d2:.2e} {d3:.2e}");
            }
        }
    }
}
