//! Discrete self-adjoint Laplacian on a meshed metric graph, assembled from
//! the quadratic form (P1 stiffness + Robin vertex terms, trapezoidal mass),
//! its eigendecomposition, the point/continuous split, the form norm, and an
//! exact inertia-based negative-eigenvalue counter.
//!
//! Constrained space: raw DOFs with `P_D f(v) = 0` at every vertex and zero
//! values at Dirichlet-truncated far ends. The eigensolver works in a basis
//! that is orthonormal under the (diagonal, trapezoidal) mass matrix, turning
//! the generalized problem into a standard hermitian one.

use crate::coupling::VertexCoupling;
use crate::error::{QgError, Result};

use crate::linalg::{self, CMat, C64};
use crate::mesh::{FarEnd, GridFunction, Mesh};
use std::sync::Arc;

/// Default threshold below which eigenvalues count as point spectrum.
pub const TOL_NEG: f64 = 1e-8;

#[derive(Debug, Clone)]
struct VertexBlock {
    /// Raw DOFs of the vertex slots, in the graph's slot order.
    slot_dofs: Vec<usize>,
    /// Edge index and spacing for each slot.
    slot_edges: Vec<usize>,
    /// Admissible slot combinations (columns), orthonormal in slot coordinates.
    basis_plain: CMat,
    /// Same combinations orthonormalized under the slot mass weights.
    basis_mass: CMat,
    /// Robin term as a matrix on slot coordinates.
    robin: CMat,
    /// First column index of this block in the constrained ordering.
    col_offset: usize,
}

/// The assembled discrete operator: holds the constrained basis and enough
/// structure to evaluate the energy form, build dense matrices, and count
/// eigenvalues below a shift without a dense solve.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub mesh: Arc<Mesh>,
    pub couplings: Vec<VertexCoupling>,
    /// Raw DOFs kept verbatim (chain interiors and Neumann far ends), in raw order.
    interiors: Vec<usize>,
    /// raw dof -> interior position.
    interior_index: Vec<Option<usize>>,
    vertex_blocks: Vec<VertexBlock>,
    pub n_constrained: usize,
    pub is_real: bool,
}

/// Eigenvectors in raw-DOF coordinates, column-major; a real fast path is used
/// when every coupling is real.
#[derive(Debug, Clone)]
pub enum BasisData {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

/// Full eigendecomposition of the constrained operator. Eigenvectors are
/// orthonormal under the trapezoidal mass weights.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub mesh: Arc<Mesh>,
    pub eigenvalues: Vec<f64>,
    pub n_modes: usize,
    data: BasisData,
    /// Indices of eigenvalues below `-tol_neg` (the discrete point spectrum).
    pub point_modes: Vec<usize>,
    /// Shift making `m_shift ||f||^2 + E(f,f)` positive definite.
    pub m_shift: f64,
    pub tol_neg: f64,
}

/// Assemble the discrete operator; couplings are per vertex and must match
/// the vertex degrees.
pub fn assemble(mesh: &Arc<Mesh>, couplings: Vec<VertexCoupling>) -> Result<DiscreteOperator> {
    let graph = &mesh.graph;
    if couplings.len() != graph.n_vertices {
        return Err(QgError::Operator(format!(
            "need one coupling per vertex: got {} for {} vertices",
            couplings.len(),
            graph.n_vertices
        )));
    }
    for (v, c) in couplings.iter().enumerate() {
        let deg = graph.degree(v);
        if c.degree != deg {
            return Err(QgError::Operator(format!(
                "coupling at vertex {v} has degree {} but the vertex has {deg} incident edge-ends",
                c.degree
            )));
        }
    }
    if mesh.weights.iter().any(|&w| !(w > 0.0)) {
        return Err(QgError::Operator("mass matrix is not positive definite".into()));
    }

    let mut is_slot = vec![false; mesh.n_dofs];
    let mut vertex_blocks = Vec::with_capacity(graph.n_vertices);
    for (v, c) in couplings.iter().enumerate() {
        let slots = graph.vertex_slots(v);
        let slot_dofs: Vec<usize> = slots.iter().map(|&(e, end)| mesh.end_dof(e, end)).collect();
        let slot_edges: Vec<usize> = slots.iter().map(|&(e, _)| e).collect();
        for &d in &slot_dofs {
            is_slot[d] = true;
        }
        // admissible slot space: null(P_D) = range(I - P_D)
        let n = c.degree;
        let complement = CMat::identity(n).sub(&c.projectors.p_d);
        let (u, s, _) = linalg::svd(&complement)?;
        let m = s.iter().filter(|&&x| x > 0.5).count();
        let mut basis_plain = CMat::zeros(n, m);
        for j in 0..m {
            for i in 0..n {
                basis_plain[(i, j)] = u[(i, j)];
            }
        }
        let w_slots: Vec<f64> = slot_dofs.iter().map(|&d| mesh.weights[d]).collect();
        let basis_mass = mass_orthonormalize(&basis_plain, &w_slots)?;
        let robin = c.projectors.lambda.clone();
        vertex_blocks.push(VertexBlock {

            slot_dofs,
            slot_edges,
            basis_plain,
            basis_mass,
            robin,
            col_offset: 0,
        });
    }

    let mut drop = vec![false; mesh.n_dofs];
    if mesh.far_end == FarEnd::Dirichlet {
        for d in mesh.far_end_dofs() {
            drop[d] = true;
        }
    }
    let mut interiors = Vec::new();
    let mut interior_index = vec![None; mesh.n_dofs];
    for d in 0..mesh.n_dofs {
        if !is_slot[d] && !drop[d] {
            interior_index[d] = Some(interiors.len());
            interiors.push(d);
        }
    }
    let mut off = interiors.len();
    for b in vertex_blocks.iter_mut() {
        b.col_offset = off;
        off += b.basis_plain.ncols;
    }
    let n_constrained = off;

    let is_real = couplings.iter().all(|c| {
        c.a.is_real(1e-14) && c.b.is_real(1e-14) && c.projectors.lambda.is_real(1e-12)
    }) && vertex_blocks.iter().all(|b| b.basis_plain.is_real(1e-12));

    Ok(DiscreteOperator {
        mesh: Arc::clone(mesh),
        couplings,
        interiors,
        interior_index,
        vertex_blocks,
        n_constrained,
        is_real,
    })
}

fn mass_orthonormalize(basis: &CMat, w: &[f64]) -> Result<CMat> {
    let mut b = basis.clone();
    let n = b.nrows;
    for j in 0..b.ncols {
        for k in 0..j {
            let mut proj = C64::new(0.0, 0.0);
            for i in 0..n {
                proj += b[(i, k)].conj() * b[(i, j)] * w[i];
            }
            for i in 0..n {
                let sub = proj * b[(i, k)];
                b[(i, j)] -= sub;
            }
        }
        let norm: f64 = (0..n).map(|i| b[(i, j)].norm_sqr() * w[i]).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(QgError::Operator("degenerate vertex constraint basis".into()));
        }
        for i in 0..n {
            b[(i, j)] /= norm;
        }
    }
    Ok(b)
}

impl DiscreteOperator {
    /// Energy form `E(f, f) = sum_e int |f'|^2 + sum_v <Lambda P_R f(v), P_R f(v)>`
    /// evaluated with P1 elements on the raw values of `f`.
    pub fn form_value(&self, f: &GridFunction) -> f64 {
        let mut acc = 0.0;
        for g in &self.mesh.grids {
            let v = &f.values[g.offset..g.offset + g.n_nodes];
            let inv_h = 1.0 / g.h;
            for i in 0..g.n_nodes - 1 {
                acc += (v[i + 1] - v[i]).norm_sqr() * inv_h;
            }
        }
        for b in &self.vertex_blocks {
            let fv: Vec<C64> = b.slot_dofs.iter().map(|&d| f.values[d]).collect();
            let lf = b.robin.matvec(&fv);
            let term: C64 = fv.iter().zip(&lf).map(|(x, y)| x.conj() * y).sum();
            acc += term.re;
        }
        acc
    }

    /// Mass-weighted L2 norm of the raw values (same quadrature as `lp_norm(.,2)`).
    pub fn mass_norm(&self, f: &GridFunction) -> f64 {
        f.values
            .iter()
            .zip(&self.mesh.weights)
            .map(|(v, &w)| v.norm_sqr() * w)
            .sum::<f64>()
            .sqrt()
    }

    fn interior_stiff_diag(&self, dof: usize) -> f64 {
        let (e, i) = self.mesh.locate(dof);
        let g = &self.mesh.grids[e];
        let mut d = 0.0;
        if i > 0 {
            d += 1.0 / g.h;
        }
        if i + 1 < g.n_nodes {
            d += 1.0 / g.h;
        }
        d
    }

    /// Dense constrained pair (K, M): stiffness with Robin terms and the
    /// (block-diagonal) lumped mass, in the plain-orthonormal constrained basis.
    pub fn dense_pair(&self) -> (CMat, CMat) {
        let n = self.n_constrained;
        let mut k = CMat::zeros(n, n);
        let mut m = CMat::zeros(n, n);
        self.assemble_into(
            false,
            &mut |i, j, val| k[(i, j)] += val,
        );
        for (pos, &dof) in self.interiors.iter().enumerate() {
            m[(pos, pos)] = C64::new(self.mesh.weights[dof], 0.0);
        }
        for b in &self.vertex_blocks {
            let w: Vec<f64> = b.slot_dofs.iter().map(|&d| self.mesh.weights[d]).collect();
            for c1 in 0..b.basis_plain.ncols {
                for c2 in 0..b.basis_plain.ncols {
                    let mut acc = C64::new(0.0, 0.0);
                    for s in 0..b.slot_dofs.len() {
                        acc += b.basis_plain[(s, c1)].conj() * b.basis_plain[(s, c2)] * w[s];
                    }
                    m[(b.col_offset + c1, b.col_offset + c2)] = acc;
                }
            }
        }
        (k, m)
    }

    /// Emit all stiffness entries in the chosen constrained basis
    /// (`mass_ortho = true` scales interiors by 1/sqrt(w) and uses the
    /// mass-orthonormal vertex combinations, so the mass becomes the identity).
    fn assemble_into(&self, mass_ortho: bool, add: &mut dyn FnMut(usize, usize, C64)) {
        let scale = |dof: usize| -> f64 {
            if mass_ortho {
                1.0 / self.mesh.weights[dof].sqrt()
            } else {
                1.0
            }
        };
        // interior-interior
        for (pos, &dof) in self.interiors.iter().enumerate() {
            add(pos, pos, C64::new(self.interior_stiff_diag(dof) * scale(dof) * scale(dof), 0.0));
            let (e, i) = self.mesh.locate(dof);
            let g = &self.mesh.grids[e];
            if i + 1 < g.n_nodes {
                if let Some(pos2) = self.interior_index[dof + 1] {
                    let val = C64::new(-1.0 / g.h * scale(dof) * scale(dof + 1), 0.0);
                    add(pos, pos2, val);
                    add(pos2, pos, val);
                }
            }
        }
        // vertex blocks
        for b in &self.vertex_blocks {
            let basis = if mass_ortho { &b.basis_mass } else { &b.basis_plain };
            let nv = b.slot_dofs.len();
            // combo-combo: diag(1/h_e) + Robin, in slot coordinates
            for c1 in 0..basis.ncols {
                for c2 in 0..basis.ncols {
                    let mut acc = C64::new(0.0, 0.0);
                    for s in 0..nv {
                        let h = self.mesh.grids[b.slot_edges[s]].h;
                        acc += basis[(s, c1)].conj() * basis[(s, c2)] / h;
                        for s2 in 0..nv {
                            acc += basis[(s, c1)].conj() * b.robin[(s, s2)] * basis[(s2, c2)];
                        }
                    }
                    add(b.col_offset + c1, b.col_offset + c2, acc);
                }
            }
            // combo-interior: the node adjacent to each slot along its edge
            for s in 0..nv {
                let dof = b.slot_dofs[s];
                let (e, i) = self.mesh.locate(dof);
                let g = &self.mesh.grids[e];
                let neighbor = if i == 0 { dof + 1 } else { dof - 1 };
                if let Some(pos) = self.interior_index[neighbor] {
                    for c in 0..basis.ncols {
                        let val = basis[(s, c)] * (-1.0 / g.h) * scale(neighbor);
                        add(pos, b.col_offset + c, val);
                        add(b.col_offset + c, pos, val.conj());
                    }
                }
            }
        }
    }

    /// Number of constrained eigenvalues strictly below `shift` (which must be
    /// negative), computed exactly by Haynsworth inertia: per-edge tridiagonal
    /// LDL sweeps plus a small vertex Schur complement. No dense solve.
    pub fn negative_count(&self, shift: f64) -> Result<usize> {
        assert!(shift < 0.0, "inertia count is defined for negative shifts");
        let n_combo = self.n_constrained - self.interiors.len();
        let combo_base = self.interiors.len();
        let mut schur = CMat::zeros(n_combo, n_combo);
        // base block: vertex stiffness minus shift times identity
        self.assemble_into(true, &mut |i, j, v| {
            if i >= combo_base && j >= combo_base {
                schur[(i - combo_base, j - combo_base)] += v;
            }
        });
        for c in 0..n_combo {
            schur[(c, c)] -= C64::new(shift, 0.0);
        }

        // per-edge chains: LDL of (T - shift) and corrections from the ends
        for (e, g) in self.mesh.grids.iter().enumerate() {
            // contiguous run of interior positions on this edge
            let mut chain: Vec<usize> = Vec::new();
            for i in 0..g.n_nodes {
                let dof = g.offset + i;
                if self.interior_index[dof].is_some() {
                    chain.push(dof);
                }
            }
            if chain.is_empty() {
                continue;
            }
            let m = chain.len();
            let diag: Vec<f64> = chain
                .iter()
                .map(|&d| self.interior_stiff_diag(d) / self.mesh.weights[d] - shift)
                .collect();
            let mut off = vec![0.0f64; m.saturating_sub(1)];
            for i in 0..m.saturating_sub(1) {
                // consecutive chain nodes are grid neighbors
                off[i] = -1.0 / g.h / (self.mesh.weights[chain[i]] * self.mesh.weights[chain[i + 1]]).sqrt();
            }
            // attachments: (chain position, coupling value base, vertex block, slot row)
            let mut attach: Vec<(usize, usize, usize)> = Vec::new(); // (chain pos, block idx, slot row)
            for (bi, b) in self.vertex_blocks.iter().enumerate() {
                for (s, &sd) in b.slot_dofs.iter().enumerate() {
                    if b.slot_edges[s] != e {
                        continue;
                    }
                    let (_, node) = self.mesh.locate(sd);
                    let neighbor = if node == 0 { sd + 1 } else { sd - 1 };
                    if let Some(&first) = chain.first() {
                        if neighbor == first {
                            attach.push((0, bi, s));
                            continue;
                        }
                    }
                    if let Some(&last) = chain.last() {
                        if neighbor == last {
                            attach.push((m - 1, bi, s));
                        }
                    }
                }
            }
            // solve (T - shift) x = e_pos for each distinct attachment position
            let mut solves: Vec<(usize, Vec<f64>)> = Vec::new();
            for &(pos, _, _) in &attach {
                if solves.iter().any(|(p, _)| *p == pos) {
                    continue;
                }
                let mut rhs = vec![0.0f64; m];
                rhs[pos] = 1.0;
                let x = tridiag_solve_pd(&diag, &off, &rhs)?;
                solves.push((pos, x));
            }
            for &(pa, ba, sa) in &attach {
                for &(pb, bb, sb) in &attach {
                    let xb = &solves.iter().find(|(p, _)| *p == pb).unwrap().1;
                    let green = xb[pa];
                    let blk_a = &self.vertex_blocks[ba];
                    let blk_b = &self.vertex_blocks[bb];
                    let na = blk_a.slot_dofs[sa];
                    let nb = blk_b.slot_dofs[sb];
                    let wa = self.mesh.weights[chain[pa]].sqrt();
                    let wb = self.mesh.weights[chain[pb]].sqrt();
                    let _ = (na, nb);
                    for ca in 0..blk_a.basis_mass.ncols {
                        for cb in 0..blk_b.basis_mass.ncols {
                            let ga = blk_a.basis_mass[(sa, ca)] * (-1.0 / g.h) / wa;
                            let gb = blk_b.basis_mass[(sb, cb)] * (-1.0 / g.h) / wb;
                            let corr = ga.conj() * gb * green;
                            schur[(blk_a.col_offset - combo_base + ca, blk_b.col_offset - combo_base + cb)] -= corr;
                        }
                    }
                }
            }
        }
        if n_combo == 0 {
            return Ok(0);
        }
        let (evals, _) = schur.eigh()?;
        Ok(evals.iter().filter(|&&x| x < 0.0).count())
    }
}

/// LDL-style solve for a positive-definite symmetric tridiagonal system; also
/// verifies positivity of the pivots (guaranteed for negative shifts).
fn tridiag_solve_pd(diag: &[f64], off: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = diag.len();
    let mut d = vec![0.0f64; m];
    let mut l = vec![0.0f64; m.saturating_sub(1)];
    d[0] = diag[0];
    for i in 0..m - 1 {
        if d[i] <= 0.0 {
            return Err(QgError::Operator("inertia sweep lost positivity (shift too high?)".into()));
        }
        l[i] = off[i] / d[i];
        d[i + 1] = diag[i + 1] - off[i] * l[i];
    }
    if d[m - 1] <= 0.0 {
        return Err(QgError::Operator("inertia sweep lost positivity (shift too high?)".into()));
    }
    let mut x = rhs.to_vec();
    for i in 0..m - 1 {
        let t = l[i] * x[i];
        x[i + 1] -= t;
    }
    for i in 0..m {
        x[i] /= d[i];
    }
    for i in (0..m - 1).rev() {
        let t = l[i] * x[i + 1];
        x[i] -= t;
    }
    Ok(x)
}

/// Full eigendecomposition with the default point-spectrum threshold.
pub fn eigendecompose(op: &DiscreteOperator) -> Result<SpectralDecomposition> {
    eigendecompose_with(op, TOL_NEG)
}

pub fn eigendecompose_with(op: &DiscreteOperator, tol_neg: f64) -> Result<SpectralDecomposition> {
    let n = op.n_constrained;
    let n_raw = op.mesh.n_dofs;
    let (eigenvalues, data) = if op.is_real {
        let mut h = vec![0.0f64; n * n];
        op.assemble_into(true, &mut |i, j, v| h[i + j * n] += v.re);
        let w = linalg::eigh_real(&mut h, n)?;
        // map constrained eigenvectors to raw DOFs
        let mut raw = vec![0.0f64; n_raw * n];
        for k in 0..n {
            let col = &h[k * n..(k + 1) * n];
            let dst = &mut raw[k * n_raw..(k + 1) * n_raw];
            for (pos, &dof) in op.interiors.iter().enumerate() {
                dst[dof] = col[pos] / op.mesh.weights[dof].sqrt();
            }
            for b in &op.vertex_blocks {
                for (s, &sd) in b.slot_dofs.iter().enumerate() {
                    let mut acc = 0.0;
                    for c in 0..b.basis_mass.ncols {
                        acc += b.basis_mass[(s, c)].re * col[b.col_offset + c];
                    }
                    dst[sd] = acc;
                }
            }
            // exact unit mass norm
            let norm: f64 =
                dst.iter().zip(&op.mesh.weights).map(|(v, &wt)| v * v * wt).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in dst.iter_mut() {
                    *v /= norm;
                }
            }
        }
        (w, BasisData::Real(raw))
    } else {
        let mut h = vec![C64::new(0.0, 0.0); n * n];
        op.assemble_into(true, &mut |i, j, v| h[i + j * n] += v);
        let w = linalg::eigh_complex(&mut h, n)?;
        let mut raw = vec![C64::new(0.0, 0.0); n_raw * n];
        for k in 0..n {
            let col = &h[k * n..(k + 1) * n];
            let dst = &mut raw[k * n_raw..(k + 1) * n_raw];
            for (pos, &dof) in op.interiors.iter().enumerate() {
                dst[dof] = col[pos] / op.mesh.weights[dof].sqrt();
            }
            for b in &op.vertex_blocks {
                for (s, &sd) in b.slot_dofs.iter().enumerate() {
                    let mut acc = C64::new(0.0, 0.0);
                    for c in 0..b.basis_mass.ncols {
                        acc += b.basis_mass[(s, c)] * col[b.col_offset + c];
                    }
                    dst[sd] = acc;
                }
            }
            let norm: f64 =
                dst.iter().zip(&op.mesh.weights).map(|(v, &wt)| v.norm_sqr() * wt).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in dst.iter_mut() {
                    *v /= norm;
                }
            }
        }
        (w, BasisData::Complex(raw))
    };
    let point_modes: Vec<usize> =
        eigenvalues.iter().enumerate().filter(|(_, &l)| l < -tol_neg).map(|(k, _)| k).collect();
    let lambda_min = eigenvalues.first().copied().unwrap_or(0.0);
    let m_shift = 1.0 + (-lambda_min).max(0.0);
    Ok(SpectralDecomposition {
        mesh: Arc::clone(&op.mesh),
        eigenvalues,
        n_modes: n,
        data,
        point_modes,
        m_shift,
        tol_neg,
    })
}

impl SpectralDecomposition {
    /// Mass-weighted coefficients `c_k = <phi_k, f>_M`.
    pub fn coeffs(&self, f: &[C64]) -> Vec<C64> {
        let n_raw = self.mesh.n_dofs;
        assert_eq!(f.len(), n_raw);
        let w = &self.mesh.weights;
        match &self.data {
            BasisData::Real(phi) => {
                let gre: Vec<f64> = f.iter().zip(w).map(|(v, &wi)| v.re * wi).collect();
                let gim: Vec<f64> = f.iter().zip(w).map(|(v, &wi)| v.im * wi).collect();
                (0..self.n_modes)
                    .map(|k| {
                        let col = &phi[k * n_raw..(k + 1) * n_raw];
                        let mut re = 0.0;
                        let mut im = 0.0;
                        for i in 0..n_raw {
                            re += col[i] * gre[i];
                            im += col[i] * gim[i];
                        }
                        C64::new(re, im)
                    })
                    .collect()
            }
            BasisData::Complex(phi) => {
                let g: Vec<C64> = f.iter().zip(w).map(|(v, &wi)| v * wi).collect();
                (0..self.n_modes)
                    .map(|k| {
                        let col = &phi[k * n_raw..(k + 1) * n_raw];
                        let mut acc = C64::new(0.0, 0.0);
                        for i in 0..n_raw {
                            acc += col[i].conj() * g[i];
                        }
                        acc
                    })
                    .collect()
            }
        }
    }

    /// Raw-space field from coefficients.
    pub fn reconstruct(&self, c: &[C64]) -> Vec<C64> {
        assert_eq!(c.len(), self.n_modes);
        let n_raw = self.mesh.n_dofs;
        let mut out = vec![C64::new(0.0, 0.0); n_raw];
        match &self.data {
            BasisData::Real(phi) => {
                let mut out_re = vec![0.0f64; n_raw];
                let mut out_im = vec![0.0f64; n_raw];
                for k in 0..self.n_modes {
                    let (cre, cim) = (c[k].re, c[k].im);
                    if cre == 0.0 && cim == 0.0 {
                        continue;
                    }
                    let col = &phi[k * n_raw..(k + 1) * n_raw];
                    for i in 0..n_raw {
                        out_re[i] += col[i] * cre;
                        out_im[i] += col[i] * cim;
                    }
                }
                for i in 0..n_raw {
                    out[i] = C64::new(out_re[i], out_im[i]);
                }
            }
            BasisData::Complex(phi) => {
                for k in 0..self.n_modes {
                    if c[k] == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let col = &phi[k * n_raw..(k + 1) * n_raw];
                    for i in 0..n_raw {
                        out[i] += col[i] * c[k];
                    }
                }
            }
        }
        out
    }

    /// Single eigenvector as a grid function.
    pub fn mode(&self, k: usize) -> GridFunction {
        let mut c = vec![C64::new(0.0, 0.0); self.n_modes];
        c[k] = C64::new(1.0, 0.0);
        GridFunction { mesh: Arc::clone(&self.mesh), values: self.reconstruct(&c) }
    }

    /// Remove the point-spectrum components: `f - sum_point <phi_k, f> phi_k`.
    pub fn project_continuous(&self, f: &GridFunction) -> GridFunction {
        if self.point_modes.is_empty() {
            return f.clone();
        }
        let c = self.coeffs(&f.values);
        let n_raw = self.mesh.n_dofs;
        let mut out = f.values.clone();
        for &k in &self.point_modes {
            let ck = c[k];
            match &self.data {
                BasisData::Real(phi) => {
                    let col = &phi[k * n_raw..(k + 1) * n_raw];
                    for i in 0..n_raw {
                        out[i] -= col[i] * ck;
                    }
                }
                BasisData::Complex(phi) => {
                    let col = &phi[k * n_raw..(k + 1) * n_raw];
                    for i in 0..n_raw {
                        out[i] -= col[i] * ck;
                    }
                }
            }
        }
        GridFunction { mesh: Arc::clone(&self.mesh), values: out }
    }

    /// M-orthogonal projection onto the constrained subspace.
    pub fn project_constrained(&self, f: &GridFunction) -> GridFunction {
        let c = self.coeffs(&f.values);
        GridFunction { mesh: Arc::clone(&self.mesh), values: self.reconstruct(&c) }
    }
}

/// Form (energy) norm `sqrt(m_shift ||f||_M^2 + E(f,f))`; errors on a negative
/// radicand, which would indicate a wrong shift.
pub fn form_norm(sd: &SpectralDecomposition, op: &DiscreteOperator, f: &GridFunction) -> Result<f64> {
    let m2 = op.mass_norm(f).powi(2);
    let radicand = sd.m_shift * m2 + op.form_value(f);
    if radicand < -1e-10 * (1.0 + m2) {
        return Err(QgError::Operator(format!("negative form-norm radicand {radicand:.3e}; m_shift is wrong")));
    }
    Ok(radicand.max(0.0).sqrt())
}
