//! Experiment configuration: JSON-facing document types, validation, and
//! construction of the discrete setting (graph, mesh, couplings, operator,
//! decomposition, propagator context).

use crate::coupling::{CouplingKind, VertexCoupling};
use crate::dynamics::SolverConfig;
use crate::error::{QgError, Result};
use crate::graph::{build_graph, GraphSpec};
use crate::linalg::{CMat, C64};
use crate::mesh::{discretize_with, FarEnd, GridFunction, Mesh};
use crate::operator::{assemble, eigendecompose_with, DiscreteOperator, SpectralDecomposition, TOL_NEG};
use crate::propagation::PropagatorContext;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Spectrum,
    Propagate,
    DecayFit,
    Strichartz,
    NlseWnd,
    NlseRandom,
    Invariance,
    ConvergeEps,
    DriverContinuity,
    StarFormula,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::Propagate => "propagate",
            ExperimentKind::DecayFit => "decay_fit",
            ExperimentKind::Strichartz => "strichartz",
            ExperimentKind::NlseWnd => "nlse_wnd",
            ExperimentKind::NlseRandom => "nlse_random",
            ExperimentKind::Invariance => "invariance",
            ExperimentKind::ConvergeEps => "converge_eps",
            ExperimentKind::DriverContinuity => "driver_continuity",
            ExperimentKind::StarFormula => "star_formula",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "spectrum" => ExperimentKind::Spectrum,
            "propagate" => ExperimentKind::Propagate,
            "decay_fit" => ExperimentKind::DecayFit,
            "strichartz" => ExperimentKind::Strichartz,
            "nlse_wnd" => ExperimentKind::NlseWnd,
            "nlse_random" => ExperimentKind::NlseRandom,
            "invariance" => ExperimentKind::Invariance,
            "converge_eps" => ExperimentKind::ConvergeEps,
            "driver_continuity" => ExperimentKind::DriverContinuity,
            "star_formula" => ExperimentKind::StarFormula,
            other => return Err(QgError::Config(format!("unknown experiment kind {other:?}"))),
        })
    }
}

/// Coupling entry: a named family with parameters, or explicit (A, B)
/// matrices with complex entries written as [re, im] pairs.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct CouplingSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertex: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<[f64; 2]>>>,
}

fn matrix_from_spec(rows: &[Vec<[f64; 2]>]) -> CMat {
    let data: Vec<Vec<C64>> =
        rows.iter().map(|r| r.iter().map(|&[re, im]| C64::new(re, im)).collect()).collect();
    CMat::from_rows(&data)
}

impl CouplingSpec {
    pub fn kirchhoff() -> Self {
        CouplingSpec { kind: Some("kirchhoff".into()), ..Default::default() }
    }

    pub fn build(&self, degree: usize) -> Result<VertexCoupling> {
        if let (Some(a), Some(b)) = (&self.a, &self.b) {
            let (am, bm) = (matrix_from_spec(a), matrix_from_spec(b));
            if am.nrows != degree {
                return Err(QgError::Config(format!(
                    "custom coupling is {}x{} but the vertex has degree {degree}",
                    am.nrows, am.ncols
                )));
            }
            return VertexCoupling::new(am, bm);
        }
        let kind = match self.kind.as_deref() {
            Some("kirchhoff") | None => CouplingKind::Kirchhoff,
            Some("dirichlet") => CouplingKind::Dirichlet,
            Some("delta") => CouplingKind::Delta {
                alpha: self.alpha.ok_or_else(|| QgError::Config("delta coupling needs `alpha`".into()))?,
            },
            Some("delta_prime") => CouplingKind::DeltaPrime {
                beta: self.beta.ok_or_else(|| QgError::Config("delta_prime coupling needs `beta`".into()))?,
            },
            Some(other) => return Err(QgError::Config(format!("unknown coupling kind {other:?}"))),
        };
        VertexCoupling::standard(kind, degree)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeSpacingOverride {
    pub edge: usize,
    pub h: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshSpec {
    pub h: f64,
    pub l_trunc: f64,
    #[serde(default = "default_far_end")]
    pub far_end: FarEnd,
    #[serde(default)]
    pub h_overrides: Vec<EdgeSpacingOverride>,
}

fn default_far_end() -> FarEnd {
    FarEnd::Dirichlet
}

fn default_amplitude() -> f64 {
    1.0
}

/// Initial datum builders.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialSpec {
    /// Gaussian wave packet on one edge (or replicated on all edges).
    GaussianBump {
        #[serde(default)]
        edge: usize,
        center: f64,
        width: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default)]
        wavenumber: f64,
        #[serde(default)]
        all_edges: bool,
    },
    Constant { value: [f64; 2] },
    Eigenmode { index: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: crate::dynamics::NoiseKind,
    /// Sampling step of the driver path.
    pub dt: f64,
}

/// Kind-specific knobs; unset fields fall back to per-experiment defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KindParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_window: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_times: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observable: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<(usize, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mollify_widths: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_neg: Option<f64>,
    #[serde(default)]
    pub dump_vectors: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_samples: Option<usize>,
}

fn default_trials() -> usize {
    1
}

/// One experiment: graph + couplings + mesh + solver + initial datum + noise
/// + kind-specific parameters, all reproducible from `seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    pub graph: GraphSpec,
    #[serde(default)]
    pub couplings: Vec<CouplingSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub default_coupling: Option<CouplingSpec>,
    pub mesh: MeshSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: KindParams,
}

impl ExperimentConfig {
    pub fn from_json(doc: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let doc = std::fs::read_to_string(path)?;
        Self::from_json(&doc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(QgError::Config("trial count must be at least 1".into()));
        }
        if let Some(solver) = &self.solver {
            solver.validate()?;
        }
        Ok(())
    }
}

/// The fully built discrete setting an experiment runs on.
pub struct Setting {
    pub mesh: Arc<Mesh>,
    pub op: Arc<DiscreteOperator>,
    pub decomp: Arc<SpectralDecomposition>,
    pub ctx: PropagatorContext,
}

/// Build graph, mesh, couplings, operator, and decomposition from a config.
pub fn build_setting(cfg: &ExperimentConfig) -> Result<Setting> {
    let graph = Arc::new(build_graph(&cfg.graph)?);
    let mut overrides = BTreeMap::new();
    for o in &cfg.mesh.h_overrides {
        overrides.insert(o.edge, o.h);
    }
    let mesh = Arc::new(discretize_with(&graph, cfg.mesh.h, cfg.mesh.l_trunc, cfg.mesh.far_end, &overrides)?);
    let mut per_vertex: Vec<Option<&CouplingSpec>> = vec![None; graph.n_vertices];
    for c in &cfg.couplings {
        let v = c.vertex.ok_or_else(|| QgError::Config("coupling list entries need a `vertex` id".into()))?;
        if v >= graph.n_vertices {
            return Err(QgError::Config(format!("coupling references missing vertex {v}")));
        }
        per_vertex[v] = Some(c);
    }
    let default = cfg.default_coupling.clone().unwrap_or_else(CouplingSpec::kirchhoff);
    let couplings: Vec<VertexCoupling> = (0..graph.n_vertices)
        .map(|v| {
            let spec = per_vertex[v].unwrap_or(&default);
            spec.build(graph.degree(v))
        })
        .collect::<Result<_>>()?;
    let op = Arc::new(assemble(&mesh, couplings)?);
    let tol_neg = cfg.params.tol_neg.unwrap_or(TOL_NEG);
    let decomp = Arc::new(eigendecompose_with(&op, tol_neg)?);
    let mut ctx = PropagatorContext::new(Arc::clone(&op), Arc::clone(&decomp));
    if let Some(k_max) = cfg.params.k_max {
        ctx.window_k_max = k_max;
    }
    Ok(Setting { mesh, op, decomp, ctx })
}

/// Build the initial datum; it is projected onto the constrained subspace so
/// conservation statements hold exactly at the discrete level.
pub fn build_initial(setting: &Setting, spec: &InitialSpec) -> Result<GridFunction> {
    let raw = match spec {
        InitialSpec::GaussianBump { edge, center, width, amplitude, wavenumber, all_edges } => {
            if *all_edges {
                GridFunction::from_edge_fn(&setting.mesh, |_, x| {
                    C64::from_polar(amplitude * (-((x - center) / width).powi(2)).exp(), wavenumber * x)
                })
            } else {
                if *edge >= setting.mesh.grids.len() {
                    return Err(QgError::Config(format!("initial datum references missing edge {edge}")));
                }
                GridFunction::gaussian_bump(&setting.mesh, *edge, *center, *width, *amplitude, *wavenumber)
            }
        }
        InitialSpec::Constant { value } => {
            let v = C64::new(value[0], value[1]);
            GridFunction::from_edge_fn(&setting.mesh, |_, _| v)
        }
        InitialSpec::Eigenmode { index } => {
            if *index >= setting.decomp.n_modes {
                return Err(QgError::Config(format!("eigenmode index {index} out of range")));
            }
            return Ok(setting.decomp.mode(*index));
        }
    };
    Ok(setting.decomp.project_constrained(&raw))
}
