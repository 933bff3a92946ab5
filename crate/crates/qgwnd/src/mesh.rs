//! Discretization: per-edge uniform 1-D grids, trapezoidal quadrature weights,
//! grid functions, and the L^p / space-time norms.

use crate::error::{QgError, Result};
use crate::graph::{Edge, EdgeEnd, MetricGraph};
use crate::linalg::C64;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Far-end boundary condition applied where external edges are truncated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FarEnd {
    Dirichlet,
    Neumann,
}

/// Uniform grid on a single edge.
#[derive(Debug, Clone)]
pub struct EdgeGrid {
    /// Index of the first node in the global DOF vector.
    pub offset: usize,
    pub n_nodes: usize,
    /// Actual spacing after snapping to an integer subdivision.
    pub h: f64,
    /// Grid span: the edge length, or the truncation length for external edges.
    pub span: f64,
    pub external: bool,
}

impl EdgeGrid {
    pub fn node_x(&self, i: usize) -> f64 {
        self.h * i as f64
    }
}

/// Mesh over a metric graph. DOFs are raw per-edge node values; vertex values
/// appear once per incident edge-end (identification is imposed later through
/// the coupling constraints, not in the mesh).
#[derive(Debug, Clone)]
pub struct Mesh {
    pub graph: Arc<MetricGraph>,
    pub grids: Vec<EdgeGrid>,
    pub n_dofs: usize,
    /// Trapezoidal quadrature weight per DOF.
    pub weights: Vec<f64>,
    pub far_end: FarEnd,
}

impl Mesh {
    /// Global DOF of an edge-end.
    pub fn end_dof(&self, edge: usize, end: EdgeEnd) -> usize {
        let g = &self.grids[edge];
        match end {
            EdgeEnd::Start => g.offset,
            EdgeEnd::End => g.offset + g.n_nodes - 1,
        }
    }

    /// (edge, node) pair for a global DOF.
    pub fn locate(&self, dof: usize) -> (usize, usize) {
        for (e, g) in self.grids.iter().enumerate() {
            if dof < g.offset + g.n_nodes {
                return (e, dof - g.offset);
            }
        }
        panic!("dof {dof} out of range");
    }

    /// Far-end DOFs of truncated external edges.
    pub fn far_end_dofs(&self) -> Vec<usize> {
        self.grids
            .iter()
            .filter(|g| g.external)
            .map(|g| g.offset + g.n_nodes - 1)
            .collect()
    }
}

/// Discretize with the default Dirichlet far-end condition.
pub fn discretize(graph: &Arc<MetricGraph>, h: f64, l_trunc: f64) -> Result<Mesh> {
    discretize_with(graph, h, l_trunc, FarEnd::Dirichlet, &BTreeMap::new())
}

/// Discretize with explicit far-end condition and optional per-edge spacing
/// overrides.
pub fn discretize_with(
    graph: &Arc<MetricGraph>,
    h: f64,
    l_trunc: f64,
    far_end: FarEnd,
    h_overrides: &BTreeMap<usize, f64>,
) -> Result<Mesh> {
    if !(h > 0.0) {
        return Err(QgError::Mesh(format!("grid spacing must be positive, got {h}")));
    }
    if l_trunc < 10.0 * h {
        return Err(QgError::Mesh(format!("truncation length {l_trunc} must be at least 10*h = {}", 10.0 * h)));
    }
    let mut grids = Vec::with_capacity(graph.edges.len());
    let mut offset = 0usize;
    for (i, e) in graph.edges.iter().enumerate() {
        let he_req = h_overrides.get(&i).copied().unwrap_or(h);
        let (span, external) = match *e {
            Edge::Internal { length, .. } => (length, false),
            Edge::External { .. } => (l_trunc, true),
        };
        if !external && he_req > span / 3.0 + 1e-12 {
            return Err(QgError::Mesh(format!(
                "spacing {he_req} too coarse for internal edge {i} of length {span}: fewer than 3 interior nodes"
            )));
        }
        let n_sub = (span / he_req).round().max(2.0) as usize;
        let he = span / n_sub as f64;
        grids.push(EdgeGrid { offset, n_nodes: n_sub + 1, h: he, span, external });
        offset += n_sub + 1;
    }
    let n_dofs = offset;
    let mut weights = vec![0.0f64; n_dofs];
    for g in &grids {
        for i in 0..g.n_nodes {
            let w = if i == 0 || i == g.n_nodes - 1 { 0.5 * g.h } else { g.h };
            weights[g.offset + i] = w;
        }
    }
    Ok(Mesh { graph: Arc::clone(graph), grids, n_dofs, weights, far_end })
}

/// Complex-valued grid function: one value per global DOF.
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub mesh: Arc<Mesh>,
    pub values: Vec<C64>,
}

impl GridFunction {
    pub fn zeros(mesh: &Arc<Mesh>) -> Self {
        GridFunction { mesh: Arc::clone(mesh), values: vec![C64::new(0.0, 0.0); mesh.n_dofs] }
    }

    pub fn from_values(mesh: &Arc<Mesh>, values: Vec<C64>) -> Result<Self> {
        if values.len() != mesh.n_dofs {
            return Err(QgError::Mesh(format!(
                "value vector length {} does not match DOF count {}",
                values.len(),
                mesh.n_dofs
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(QgError::Mesh("grid function contains non-finite entries".into()));
        }
        Ok(GridFunction { mesh: Arc::clone(mesh), values })
    }

    /// Sample `f(edge_index, x)` on every node.
    pub fn from_edge_fn<F: FnMut(usize, f64) -> C64>(mesh: &Arc<Mesh>, mut f: F) -> Self {
        let mut values = vec![C64::new(0.0, 0.0); mesh.n_dofs];
        for (e, g) in mesh.grids.iter().enumerate() {
            for i in 0..g.n_nodes {
                values[g.offset + i] = f(e, g.node_x(i));
            }
        }
        GridFunction { mesh: Arc::clone(mesh), values }
    }

    /// Gaussian wave packet `amp * exp(-((x-center)/width)^2) * exp(i k x)` on
    /// a single edge, zero elsewhere.
    pub fn gaussian_bump(
        mesh: &Arc<Mesh>,
        edge: usize,
        center: f64,
        width: f64,
        amplitude: f64,
        wavenumber: f64,
    ) -> Self {
        GridFunction::from_edge_fn(mesh, |e, x| {
            if e == edge {
                let g = (-((x - center) / width).powi(2)).exp();
                C64::from_polar(amplitude * g, wavenumber * x)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            *v *= c;
        }
        out
    }

    pub fn add(&self, other: &GridFunction) -> Self {
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &GridFunction) -> Self {
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a -= b;
        }
        out
    }

    /// Quadrature-weighted inner product <self, other> (conjugate-linear in self).
    pub fn inner(&self, other: &GridFunction) -> C64 {
        let w = &self.mesh.weights;
        self.values
            .iter()
            .zip(&other.values)
            .zip(w)
            .map(|((a, b), &wi)| a.conj() * b * wi)
            .sum()
    }

    pub fn norm_l2(&self) -> f64 {
        lp_norm(self, 2.0)
    }

    /// Per-edge spatial derivative by second-order finite differences
    /// (one-sided at edge endpoints).
    pub fn edge_derivative(&self) -> GridFunction {
        let mut out = GridFunction::zeros(&self.mesh);
        for g in &self.mesh.grids {
            let n = g.n_nodes;
            let h = g.h;
            let v = &self.values[g.offset..g.offset + n];
            let d = &mut out.values[g.offset..g.offset + n];
            d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
            for i in 1..n - 1 {
                d[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
            }
            d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
        }
        out
    }
}

/// `||f||_{L^p}` over the whole graph by trapezoidal quadrature; `p = inf`
/// returns the max modulus over nodes.
pub fn lp_norm(f: &GridFunction, p: f64) -> f64 {
    assert!(p >= 1.0, "lp_norm needs p >= 1, got {p}");
    if p.is_infinite() {
        return f.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    }
    let mut acc = 0.0;
    for (v, &w) in f.values.iter().zip(&f.mesh.weights) {
        acc += v.norm().powf(p) * w;
    }
    acc.powf(1.0 / p)
}

/// Mixed space-time norm `( integral_0^T ||X(t)||_p^r dt )^{1/r}` from sampled
/// per-time L^p values on a uniform time grid; `r = inf` takes the max.
pub fn space_time_norm_from_samples(times: &[f64], lp_values: &[f64], r: f64) -> Result<f64> {
    if times.is_empty() || lp_values.is_empty() {
        return Err(QgError::Mesh("space-time norm of an empty trajectory".into()));
    }
    assert_eq!(times.len(), lp_values.len());
    if r.is_infinite() {
        return Ok(lp_values.iter().copied().fold(0.0, f64::max));
    }
    if times.len() == 1 {
        return Ok(0.0);
    }
    let dt = times[1] - times[0];
    let powered: Vec<f64> = lp_values.iter().map(|v| v.powf(r)).collect();
    Ok(crate::linalg::trapezoid_uniform(&powered, dt).powf(1.0 / r))
}
