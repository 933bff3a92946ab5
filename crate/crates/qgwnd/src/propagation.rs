//! Deterministic Schrodinger group, exact stochastic propagator, free-line
//! propagator, star-graph derivative identity, resolvent kernel, and the
//! dispersive-decay ratio.
//!
//! Sign conventions (audited in tests below): the group is
//! `U(t) = exp(it Laplacian) = exp(-itH)` with `H = -Laplacian`, so an
//! eigenpair `(lambda, phi)` of H evolves as `exp(-it lambda) phi`. The
//! free-line kernel is `(4 pi i t)^{-1/2} exp(i|x-y|^2 / 4t)` which matches
//! the same convention on the real line.

use crate::coupling::{scattering_matrix, VertexCoupling};
use crate::error::{QgError, Result};
use crate::linalg::C64;
use crate::mesh::GridFunction;
use crate::operator::{DiscreteOperator, SpectralDecomposition};
use std::sync::Arc;

/// Relative strength of the Gaussian damping in the free-line quadrature
/// (damping exponent eps = FREE_LINE_DAMPING * |t|).
pub const FREE_LINE_DAMPING: f64 = 1e-8;

/// Star-graph data used by the derivative identity.
#[derive(Debug, Clone)]
pub struct StarData {
    pub n_edges: usize,
    pub coupling: VertexCoupling,
}

/// Shared context for propagator applications.
#[derive(Debug, Clone)]
pub struct PropagatorContext {
    pub op: Arc<DiscreteOperator>,
    pub decomp: Arc<SpectralDecomposition>,
    /// Spectral content bound used by the pre-reflection window check.
    pub window_k_max: f64,
    pub star: Option<StarData>,
}

impl PropagatorContext {
    pub fn new(op: Arc<DiscreteOperator>, decomp: Arc<SpectralDecomposition>) -> Self {
        let g = &op.mesh.graph;
        let star = if g.n_vertices == 1 && g.edges.iter().all(|e| e.is_external()) {
            Some(StarData { n_edges: g.edges.len(), coupling: op.couplings[0].clone() })
        } else {
            None
        };
        PropagatorContext { op, decomp, window_k_max: 2.0, star }
    }

    /// Truncation span of the external edges (the observation window limit).
    pub fn l_trunc(&self) -> f64 {
        self.op
            .mesh
            .grids
            .iter()
            .filter(|g| g.external)
            .map(|g| g.span)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Apply the Schrodinger group at time `t`:
/// `sum_k exp(-it lambda_k) <phi_k, f> phi_k`. Data outside the constrained
/// subspace is projected into it (an O(sqrt h) boundary effect).
pub fn schrodinger_group(ctx: &PropagatorContext, t: f64, f: &GridFunction) -> GridFunction {
    let sd = &ctx.decomp;
    let mut c = sd.coeffs(&f.values);
    apply_phases(&sd.eigenvalues, t, &mut c);
    GridFunction { mesh: Arc::clone(&sd.mesh), values: sd.reconstruct(&c) }
}

/// Multiply coefficients by the evolution phases `exp(-i t lambda_k)`.
pub fn apply_phases(eigenvalues: &[f64], t: f64, c: &mut [C64]) {
    for (ck, &l) in c.iter_mut().zip(eigenvalues) {
        let phase = C64::from_polar(1.0, -t * l);
        *ck *= phase;
    }
}

/// One application of the stochastic flow over a driver increment:
/// `exp(i (beta(t) - beta(s)) Laplacian)`, an exact L2 isometry.
pub fn stochastic_propagator(ctx: &PropagatorContext, delta_beta: f64, f: &GridFunction) -> GridFunction {
    schrodinger_group(ctx, delta_beta, f)
}

/// Uniformly sampled function on a segment of the real line.
#[derive(Debug, Clone)]
pub struct LineField {
    /// Coordinate of the first sample.
    pub x0: f64,
    pub h: f64,
    pub values: Vec<C64>,
}

impl LineField {
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + self.h * i as f64
    }
}

/// Free-line Schrodinger propagation of a compactly sampled source, evaluated
/// on `n_targets` points starting at `target_x0` with the source spacing.
/// Direct damped quadrature of the oscillatory kernel.
pub fn free_line_propagate(
    t: f64,
    source: &LineField,
    target_x0: f64,
    n_targets: usize,
    damping_rel: f64,
) -> Vec<C64> {
    let h = source.h;
    let ns = source.values.len();
    if t == 0.0 {
        // identity; resample onto the target points (zero off the source range)
        let mut out = vec![C64::new(0.0, 0.0); n_targets];
        for (i, o) in out.iter_mut().enumerate() {
            let x = target_x0 + i as f64 * h;
            let j = ((x - source.x0) / h).round();
            if j >= 0.0 && (j as usize) < ns && ((x - source.x0) / h - j).abs() < 1e-9 {
                *o = source.values[j as usize];
            }
        }
        return out;
    }
    let eps = damping_rel * t.abs();
    let z = C64::new(eps, t);
    let pref = (C64::new(4.0 * std::f64::consts::PI, 0.0) * z).sqrt().inv();
    let inv4z = (C64::new(4.0, 0.0) * z).inv();
    // kernel per offset index d = i - j + (ns - 1)
    let base = target_x0 - source.x0;
    let n_off = n_targets + ns - 1;
    let kernel: Vec<C64> = (0..n_off)
        .map(|d| {
            let s = base + (d as f64 - (ns as f64 - 1.0)) * h;
            pref * (-C64::new(s * s, 0.0) * inv4z).exp()
        })
        .collect();
    let mut out = vec![C64::new(0.0, 0.0); n_targets];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (j, &g) in source.values.iter().enumerate() {
            let w = if j == 0 || j == ns - 1 { 0.5 } else { 1.0 };
            acc += kernel[i + (ns - 1) - j] * g * w;
        }
        *o = acc * h;
    }
    out
}

/// Convenience wrapper evaluating on the source grid itself.
pub fn free_line_propagator(t: f64, source: &LineField) -> LineField {
    let values = free_line_propagate(t, source, source.x0, source.values.len(), FREE_LINE_DAMPING);
    LineField { x0: source.x0, h: source.h, values }
}

/// Resolvent kernel of the star Hamiltonian at spectral parameter `z^2`
/// (Im z > 0): `r(z; x_i, y_j) = (i/2z)(exp(iz|x-y|) delta_ij
/// + exp(izx) G(z)_{ij} exp(izy))`.
pub fn resolvent_kernel(
    z: C64,
    coupling: &VertexCoupling,
    i: usize,
    j: usize,
    x: f64,
    y: f64,
) -> Result<C64> {
    let g = scattering_matrix(z, &coupling.a, &coupling.b)?;
    let iz = C64::new(0.0, 1.0) * z;
    let pref = C64::new(0.0, 1.0) / (z * 2.0);
    let mut r = pref * (iz * (x + y)).exp() * g[(i, j)];
    if i == j {
        r += pref * (iz * (x - y).abs()).exp();
    }
    Ok(r)
}

/// Right-hand side of the derivative-commuting identity on a star graph:
///
/// `d/dx U(t) v = -U(t) P_c v' + 2 e^{it Laplacian_R} (zero-extended v')
///  + sum_l <phi_l, v> e^{-it lambda_l} phi_l'  (+ delta-coupling term)`.
///
/// The delta term is `(2 alpha v(0)/n) e^{it Laplacian_R} psi` with the
/// one-sided profile `psi(y) = e^{(alpha/n) y}` supported on `y <= 0` for
/// `alpha > 0` and (with a negated prefactor) on `y >= 0` for `alpha < 0`.
/// Requires a Robin-free coupling or a delta coupling.
pub fn star_derivative_rhs(ctx: &PropagatorContext, t: f64, v: &GridFunction) -> Result<GridFunction> {
    let star = ctx
        .star
        .as_ref()
        .ok_or_else(|| QgError::Propagation("derivative identity requires a star graph".into()))?;
    let coupling = &star.coupling;
    let delta_alpha = coupling.delta_alpha();
    if !coupling.robin_free() && delta_alpha.is_none() {
        return Err(QgError::Propagation(
            "derivative identity supports Robin-free or delta couplings only".into(),
        ));
    }
    let mesh = &ctx.op.mesh;
    let sd = &ctx.decomp;
    let n = star.n_edges as f64;

    let vp = v.edge_derivative();
    let pc_vp = sd.project_continuous(&vp);
    let mut rhs = schrodinger_group(ctx, t, &pc_vp).scale(C64::new(-1.0, 0.0));

    // free-line propagation of the zero-extended per-edge derivative
    for g in mesh.grids.iter() {
        let src = LineField {
            x0: 0.0,
            h: g.h,
            values: vp.values[g.offset..g.offset + g.n_nodes].to_vec(),
        };
        let prop = free_line_propagate(t, &src, 0.0, g.n_nodes, FREE_LINE_DAMPING);
        for (i, val) in prop.into_iter().enumerate() {
            rhs.values[g.offset + i] += val * 2.0;
        }
    }

    // point-spectrum terms
    for &k in &sd.point_modes {
        let phi = sd.mode(k);
        let phi_p = phi.edge_derivative();
        let coef = phi.inner(v) * C64::from_polar(1.0, -t * sd.eigenvalues[k]);
        for (r, p) in rhs.values.iter_mut().zip(&phi_p.values) {
            *r += coef * p;
        }
    }

    // delta-coupling boundary term
    if let Some(alpha) = delta_alpha {
        if alpha != 0.0 {
            let v0 = v.values[mesh.end_dof(0, crate::graph::EdgeEnd::Start)];
            let kappa = alpha / n;
            // one-sided exponential profile, truncated where it falls below 1e-16
            let extent = (16.0 * std::f64::consts::LN_10 / kappa.abs()).min(1e6);
            for g in mesh.grids.iter() {
                let h = g.h;
                let m = (extent / h).ceil() as usize + 1;
                let (src, prefactor) = if alpha > 0.0 {
                    // support on y <= 0
                    let values: Vec<C64> = (0..m)
                        .map(|i| {
                            let y = -((m - 1 - i) as f64) * h;
                            C64::new((kappa * y).exp(), 0.0)
                        })
                        .collect();
                    (
                        LineField { x0: -((m - 1) as f64) * h, h, values },
                        C64::new(2.0 * alpha / n, 0.0),
                    )
                } else {
                    // support on y >= 0, negated prefactor
                    let values: Vec<C64> =
                        (0..m).map(|i| C64::new((kappa * (i as f64) * h).exp(), 0.0)).collect();
                    (LineField { x0: 0.0, h, values }, C64::new(-2.0 * alpha / n, 0.0))
                };
                let prop = free_line_propagate(t, &src, 0.0, g.n_nodes, FREE_LINE_DAMPING);
                for (i, val) in prop.into_iter().enumerate() {
                    rhs.values[g.offset + i] += prefactor * v0 * val;
                }
            }
        }
    }
    Ok(rhs)
}

/// Result of a decay measurement; `flagged` marks a violated pre-reflection
/// window (4 t k_max >= L_trunc).
#[derive(Debug, Clone, Copy)]
pub struct DecayRatio {
    pub ratio: f64,
    pub flagged: bool,
}

/// Dispersive-decay ratio `||U(t) P_c f||_inf * sqrt(t) / ||f||_1`.
pub fn decay_ratio(ctx: &PropagatorContext, f: &GridFunction, t: f64) -> Result<DecayRatio> {
    if !(t > 0.0) {
        return Err(QgError::Propagation("decay ratio needs t > 0".into()));
    }
    let flagged = 4.0 * t * ctx.window_k_max >= ctx.l_trunc();
    let pc = ctx.decomp.project_continuous(f);
    let evolved = schrodinger_group(ctx, t, &pc);
    let sup = crate::mesh::lp_norm(&evolved, f64::INFINITY);
    let l1 = crate::mesh::lp_norm(f, 1.0);
    Ok(DecayRatio { ratio: sup * t.sqrt() / l1, flagged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::CouplingKind;
    use crate::graph::MetricGraph;
    use crate::mesh::{discretize, lp_norm};
    use crate::operator::{assemble, eigendecompose};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;

    fn star_ctx(kind: CouplingKind, n: usize, h: f64, l: f64) -> PropagatorContext {
        let g = Arc::new(MetricGraph::star(n).unwrap());
        let mesh = Arc::new(discretize(&g, h, l).unwrap());
        let c = VertexCoupling::standard(kind, n).unwrap();
        let op = Arc::new(assemble(&mesh, vec![c]).unwrap());
        let sd = Arc::new(eigendecompose(&op).unwrap());
        PropagatorContext::new(op, sd)
    }

    fn random_constrained(ctx: &PropagatorContext, rng: &mut impl Rng) -> GridFunction {
        let sd = &ctx.decomp;
        let mut c = vec![C64::new(0.0, 0.0); sd.n_modes];
        for (k, v) in c.iter_mut().enumerate() {
            let damp = (-(k as f64) / 30.0).exp();
            *v = C64::new((rng.gen::<f64>() - 0.5) * damp, (rng.gen::<f64>() - 0.5) * damp);
        }
        GridFunction { mesh: Arc::clone(&sd.mesh), values: sd.reconstruct(&c) }
    }

    #[test]
    fn unitarity_group_law_and_identity() {
        let ctx = star_ctx(CouplingKind::Kirchhoff, 3, 0.1, 10.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let f = random_constrained(&ctx, &mut rng);
            let t = 4.0 * (rng.gen::<f64>() - 0.5);
            let uf = schrodinger_group(&ctx, t, &f);
            let r = lp_norm(&uf, 2.0) / lp_norm(&f, 2.0);
            assert!((r - 1.0).abs() <= 1e-10, "unitarity ratio {r}");
            // group law
            let s = 2.0 * (rng.gen::<f64>() - 0.5);
            let two = schrodinger_group(&ctx, s, &uf);
            let one = schrodinger_group(&ctx, t + s, &f);
            assert!(lp_norm(&two.sub(&one), 2.0) <= 1e-10 * lp_norm(&f, 2.0));
        }
        // t = 0 is the identity on constrained data
        let f = random_constrained(&ctx, &mut rng);
        let u0 = schrodinger_group(&ctx, 0.0, &f);
        assert!(lp_norm(&u0.sub(&f), 2.0) <= 1e-11);
    }

    #[test]
    fn eigenvector_evolves_by_phase() {
        let ctx = star_ctx(CouplingKind::Delta { alpha: -1.0 }, 3, 0.1, 10.0);
        let sd = &ctx.decomp;
        let k = 4;
        let phi = sd.mode(k);
        let t = 0.9;
        let evolved = schrodinger_group(&ctx, t, &phi);
        let expect = phi.scale(C64::from_polar(1.0, -t * sd.eigenvalues[k]));
        assert!(lp_norm(&evolved.sub(&expect), 2.0) <= 1e-10);
    }

    #[test]
    fn stochastic_propagator_contracts() {
        let ctx = star_ctx(CouplingKind::Kirchhoff, 3, 0.1, 10.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let f = random_constrained(&ctx, &mut rng);
        // zero increment is the identity
        let u = stochastic_propagator(&ctx, 0.0, &f);
        assert!(lp_norm(&u.sub(&f), 2.0) <= 1e-11);
        // isometry
        let u = stochastic_propagator(&ctx, 0.37, &f);
        assert_relative_eq!(lp_norm(&u, 2.0), lp_norm(&f, 2.0), epsilon = 1e-10);
        // composition over increments equals a single application
        let inc = [0.2, -0.5, 0.1];
        let mut g = f.clone();
        for &db in &inc {
            g = stochastic_propagator(&ctx, db, &g);
        }
        let total = stochastic_propagator(&ctx, inc.iter().sum(), &f);
        assert!(lp_norm(&g.sub(&total), 2.0) <= 1e-10);
    }

    #[test]
    fn free_line_gaussian_oracle() {
        // closed form: exp(it d^2/dx^2) e^{-x^2} = (1+4it)^{-1/2} exp(-x^2/(1+4it))
        let h = 0.01;
        let half = 12.0;
        let n = (2.0 * half / h) as usize + 1;
        let src = LineField {
            x0: -half,
            h,
            values: (0..n).map(|i| C64::new((-(-half + i as f64 * h).powi(2)).exp(), 0.0)).collect(),
        };
        let zero = LineField { x0: -half, h, values: vec![C64::new(0.0, 0.0); n] };
        let out0 = free_line_propagator(0.4, &zero);
        assert!(out0.values.iter().all(|v| v.norm() == 0.0));

        let t = 0.3;
        let out = free_line_propagator(t, &src);
        let denom = C64::new(1.0, 4.0 * t);
        let mut max_err: f64 = 0.0;
        for i in 0..n {
            let x = src.x(i);
            let exact = denom.sqrt().inv() * (-C64::new(x * x, 0.0) / denom).exp();
            max_err = max_err.max((out.values[i] - exact).norm());
        }
        assert!(max_err <= 1e-6, "free-line Gaussian error {max_err:.3e}");
        // unitarity up to quadrature tolerance
        let n2 = |f: &LineField| (f.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * f.h).sqrt();
        assert!((n2(&out) - n2(&src)).abs() <= 1e-6 * n2(&src));
    }

    #[test]
    fn resolvent_kernel_solves_ode_and_vertex_conditions() {
        // (-d^2/dx^2 - z^2) r(z; x, y) = 0 away from x = y, and the columns
        // satisfy A r(0) + B r'(0) = 0. This pins the orientation of G.
        for kind in [CouplingKind::Kirchhoff, CouplingKind::Delta { alpha: 0.7 }, CouplingKind::Dirichlet] {
            let c = VertexCoupling::standard(kind, 3).unwrap();
            let z = C64::new(0.8, 0.6);
            let y = 1.3;
            let jj = 1; // source edge
            let dx = 1e-4;
            let r = |x: f64, i: usize| resolvent_kernel(z, &c, i, jj, x, y).unwrap();
            // interior ODE check on edge 0 (away from the diagonal x = y)
            let x0 = 0.7;
            let second = (r(x0 + dx, 0) - r(x0, 0) * 2.0 + r(x0 - dx, 0)) / (dx * dx);
            let residual = (-second - z * z * r(x0, 0)).norm() / r(x0, 0).norm().max(1e-12);
            assert!(residual < 1e-4, "{kind:?}: ODE residual {residual:.2e}");
            // vertex conditions with outward derivatives at x=0
            let mut fv = Vec::new();
            let mut fpv = Vec::new();
            for i in 0..3 {
                fv.push(r(0.0, i));
                fpv.push((r(dx, i) * 4.0 - r(2.0 * dx, i) - r(0.0, i) * 3.0) / (2.0 * dx));
            }
            let mut res: f64 = 0.0;
            for row in 0..3 {
                let mut acc = C64::new(0.0, 0.0);
                for col in 0..3 {
                    acc += c.a[(row, col)] * fv[col] + c.b[(row, col)] * fpv[col];
                }
                res = res.max(acc.norm());
            }
            let scale: f64 = fv.iter().chain(&fpv).map(|v| v.norm()).fold(0.0, f64::max);
            assert!(res <= 1e-6 * scale.max(1e-12), "{kind:?}: vertex residual {res:.2e}");
        }
    }

    #[test]
    fn star_derivative_identity_at_t0() {
        for kind in [CouplingKind::Kirchhoff, CouplingKind::Dirichlet, CouplingKind::Delta { alpha: -1.0 }] {
            let ctx = star_ctx(kind, 3, 0.02, 12.0);
            // continuous-at-vertex field with nonzero boundary value
            let v = match kind {
                CouplingKind::Dirichlet => GridFunction::from_edge_fn(&ctx.op.mesh, |_, x| {
                    C64::new((-(x - 2.0).powi(2)).exp() - (-4.0f64).exp() * (-x).exp(), 0.0)
                }),
                _ => GridFunction::from_edge_fn(&ctx.op.mesh, |_, x| {
                    C64::new((-(x - 1.0).powi(2)).exp(), 0.0)
                }),
            };
            let rhs = star_derivative_rhs(&ctx, 0.0, &v).unwrap();
            let vp = v.edge_derivative();
            let err = lp_norm(&rhs.sub(&vp), 2.0) / lp_norm(&vp, 2.0);
            assert!(err < 2e-2, "{kind:?}: t=0 identity error {err:.3e}");
        }
    }

    #[test]
    fn star_derivative_matches_finite_difference() {
        // inbound wave packet with machine-zero vertex contact at t=0; by
        // t=0.5 it has scattered off the vertex, so every term is exercised
        let t = 0.5;
        for kind in
            [CouplingKind::Kirchhoff, CouplingKind::Delta { alpha: 1.0 }, CouplingKind::Delta { alpha: -1.0 }]
        {
            let ctx = star_ctx(kind, 3, 0.02, 14.0);
            let v = GridFunction::from_edge_fn(&ctx.op.mesh, |_, x| {
                C64::from_polar((-((x - 2.8) / 0.55).powi(2)).exp(), -3.0 * x)
            });
            let lhs = schrodinger_group(&ctx, t, &v).edge_derivative();
            let rhs = star_derivative_rhs(&ctx, t, &v).unwrap();
            let err = lp_norm(&rhs.sub(&lhs), 2.0) / lp_norm(&lhs, 2.0);
            assert!(err < 2e-3, "{kind:?}: relative error {err:.3e}");
        }
    }

    #[test]
    fn delta_bound_state_derivative_is_pure_phase() {
        let ctx = star_ctx(CouplingKind::Delta { alpha: -1.0 }, 3, 0.02, 30.0);
        let sd = &ctx.decomp;
        let k = sd.point_modes[0];
        let phi = sd.mode(k);
        let t = 0.5;
        let rhs = star_derivative_rhs(&ctx, t, &phi).unwrap();
        let expect = phi.edge_derivative().scale(C64::from_polar(1.0, -t * sd.eigenvalues[k]));
        let err = lp_norm(&rhs.sub(&expect), 2.0) / lp_norm(&expect, 2.0);
        assert!(err < 1e-4, "bound-state derivative error {err:.3e}");
    }

    #[test]
    fn decay_ratio_properties() {
        let ctx = star_ctx(CouplingKind::Delta { alpha: -1.0 }, 3, 0.05, 20.0);
        let f = GridFunction::gaussian_bump(&ctx.op.mesh, 0, 3.0, 1.0, 1.0, 0.0);
        let r1 = decay_ratio(&ctx, &f, 1.0).unwrap();
        let r2 = decay_ratio(&ctx, &f.scale(C64::new(2.0, 0.0)), 1.0).unwrap();
        assert_relative_eq!(r1.ratio, r2.ratio, epsilon = 1e-12);
        assert!(!r1.flagged);
        // beyond the window the result is flagged
        let rl = decay_ratio(&ctx, &f, 4.0).unwrap();
        assert!(rl.flagged);
        // the bound state is annihilated by P_c
        let phi = ctx.decomp.mode(ctx.decomp.point_modes[0]);
        let rb = decay_ratio(&ctx, &phi, 1.0).unwrap();
        assert!(rb.ratio < 1e-7, "bound-state ratio {}", rb.ratio);
        assert!(decay_ratio(&ctx, &f, 0.0).is_err());
    }
}
