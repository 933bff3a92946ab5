//! Metric graph topology: vertices, internal edges with finite length, and
//! external (semi-infinite) edges, with an orientation map assigning each
//! internal edge an ordered vertex pair and each external edge a single vertex.

use crate::error::{QgError, Result};
use serde::{Deserialize, Serialize};

pub type VertexId = usize;

/// One edge of the graph. Internal edges are identified with `[0, length]`
/// where 0 corresponds to `from`; external edges with `[0, +inf)` anchored at
/// `from`.
#[derive(Debug, Clone, PartialEq)]
pub enum Edge {
    Internal { from: VertexId, to: VertexId, length: f64 },
    External { vertex: VertexId },
}

impl Edge {
    pub fn is_external(&self) -> bool {
        matches!(self, Edge::External { .. })
    }

    /// Vertex at the x=0 end.
    pub fn start(&self) -> VertexId {
        match *self {
            Edge::Internal { from, .. } => from,
            Edge::External { vertex } => vertex,
        }
    }
}

/// Which end of an edge meets a vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeEnd {
    /// x = 0 end.
    Start,
    /// x = length end (internal edges only).
    End,
}

#[derive(Debug, Clone)]
pub struct MetricGraph {
    pub n_vertices: usize,
    pub edges: Vec<Edge>,
}

impl MetricGraph {
    /// Validate and construct. Rejects empty, disconnected, or degenerate input.
    pub fn new(n_vertices: usize, edges: Vec<Edge>) -> Result<Self> {
        if n_vertices == 0 {
            return Err(QgError::Graph("graph needs at least one vertex".into()));
        }
        if edges.is_empty() {
            return Err(QgError::Graph("graph needs at least one edge".into()));
        }
        for (i, e) in edges.iter().enumerate() {
            match *e {
                Edge::Internal { from, to, length } => {
                    if from >= n_vertices || to >= n_vertices {
                        return Err(QgError::Graph(format!("edge {i} references a missing vertex")));
                    }
                    if from == to {
                        return Err(QgError::Graph(format!("edge {i} is a self-loop (unsupported)")));
                    }
                    if !(length > 0.0) || !length.is_finite() {
                        return Err(QgError::Graph(format!("edge {i} has nonpositive length {length}")));
                    }
                }
                Edge::External { vertex } => {
                    if vertex >= n_vertices {
                        return Err(QgError::Graph(format!("edge {i} references a missing vertex")));
                    }
                }
            }
        }
        let g = MetricGraph { n_vertices, edges };
        if !g.is_connected() {
            return Err(QgError::Graph("graph is disconnected".into()));
        }
        Ok(g)
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_vertices];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for e in &self.edges {
                if let Edge::Internal { from, to, .. } = *e {
                    if from == v && !seen[to] {
                        seen[to] = true;
                        stack.push(to);
                    }
                    if to == v && !seen[from] {
                        seen[from] = true;
                        stack.push(from);
                    }
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Edge-ends incident to `v`, in (edge index, end) order. This fixes the
    /// ordering of boundary-value vectors f(v), f'(v) used by the couplings.
    pub fn vertex_slots(&self, v: VertexId) -> Vec<(usize, EdgeEnd)> {
        let mut slots = Vec::new();
        for (i, e) in self.edges.iter().enumerate() {
            match *e {
                Edge::Internal { from, to, .. } => {
                    if from == v {
                        slots.push((i, EdgeEnd::Start));
                    }
                    if to == v {
                        slots.push((i, EdgeEnd::End));
                    }
                }
                Edge::External { vertex } => {
                    if vertex == v {
                        slots.push((i, EdgeEnd::Start));
                    }
                }
            }
        }
        slots
    }

    pub fn degree(&self, v: VertexId) -> usize {
        self.vertex_slots(v).len()
    }

    /// Star graph: `n` external edges attached to a single vertex.
    pub fn star(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(QgError::Graph("star graph needs at least one edge".into()));
        }
        MetricGraph::new(1, (0..n).map(|_| Edge::External { vertex: 0 }).collect())
    }

    /// Real line with point defects at the given (strictly increasing)
    /// positions: one vertex per defect, internal edges between consecutive
    /// defects, and external edges on both outer sides.
    pub fn line_with_defects(positions: &[f64]) -> Result<Self> {
        if positions.is_empty() {
            return Err(QgError::Graph("line_with_defects needs at least one defect point".into()));
        }
        if positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(QgError::Graph("defect positions must be strictly increasing".into()));
        }
        let p = positions.len();
        let mut edges = vec![Edge::External { vertex: 0 }];
        for i in 0..p - 1 {
            edges.push(Edge::Internal { from: i, to: i + 1, length: positions[i + 1] - positions[i] });
        }
        edges.push(Edge::External { vertex: p - 1 });
        MetricGraph::new(p, edges)
    }

    /// Balanced binary tree: `levels` generations of internal edges below the
    /// root, and two external edges on each last-generation vertex. With
    /// `levels = 0` this is the 2-edge star.
    pub fn binary_tree(levels: usize, edge_length: f64) -> Result<Self> {
        if !(edge_length > 0.0) {
            return Err(QgError::Graph("binary tree edge length must be positive".into()));
        }
        let mut edges = Vec::new();
        let mut current = vec![0usize];
        let mut next_id = 1usize;
        for _ in 0..levels {
            let mut next = Vec::new();
            for &v in &current {
                for _ in 0..2 {
                    edges.push(Edge::Internal { from: v, to: next_id, length: edge_length });
                    next.push(next_id);
                    next_id += 1;
                }
            }
            current = next;
        }
        for &v in &current {
            edges.push(Edge::External { vertex: v });
            edges.push(Edge::External { vertex: v });
        }
        MetricGraph::new(next_id, edges)
    }
}

/// Length entry in the JSON edge schema: a number for internal edges or the
/// string "external".
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LengthSpec {
    Length(f64),
    Marker(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: VertexId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to: Option<VertexId>,
    pub length: LengthSpec,
}

/// Graph factories exposed in the config schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphFactory {
    Star { edges: usize },
    LineDefects { positions: Vec<f64> },
    BinaryTree { levels: usize, edge_length: f64 },
}

/// JSON-facing graph description: either an explicit vertex/edge list or a
/// factory shortcut.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<VertexId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<EdgeSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factory: Option<GraphFactory>,
}

/// Build a validated graph from a spec document.
pub fn build_graph(spec: &GraphSpec) -> Result<MetricGraph> {
    if let Some(f) = &spec.factory {
        return match f {
            GraphFactory::Star { edges } => MetricGraph::star(*edges),
            GraphFactory::LineDefects { positions } => MetricGraph::line_with_defects(positions),
            GraphFactory::BinaryTree { levels, edge_length } => MetricGraph::binary_tree(*levels, *edge_length),
        };
    }
    let vertices = spec
        .vertices
        .as_ref()
        .ok_or_else(|| QgError::Graph("graph spec needs either `factory` or `vertices`+`edges`".into()))?;
    let edge_specs =
        spec.edges.as_ref().ok_or_else(|| QgError::Graph("graph spec with `vertices` needs `edges`".into()))?;
    let n = vertices.len();
    if vertices.iter().enumerate().any(|(i, &v)| v != i) {
        return Err(QgError::Graph("vertex ids must be 0..n in order".into()));
    }
    let mut edges = Vec::with_capacity(edge_specs.len());
    for es in edge_specs {
        match &es.length {
            LengthSpec::Length(l) => {
                let to = es
                    .to
                    .ok_or_else(|| QgError::Graph("internal edge needs a `to` vertex".into()))?;
                edges.push(Edge::Internal { from: es.from, to, length: *l });
            }
            LengthSpec::Marker(m) if m == "external" => {
                if es.to.is_some() {
                    return Err(QgError::Graph("external edge must not have a `to` vertex".into()));
                }
                edges.push(Edge::External { vertex: es.from });
            }
            LengthSpec::Marker(m) => {
                return Err(QgError::Graph(format!("unknown length marker {m:?} (expected \"external\")")));
            }
        }
    }
    MetricGraph::new(n, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_has_one_vertex_and_external_edges() {
        let g = MetricGraph::star(3).unwrap();
        assert_eq!(g.n_vertices, 1);
        assert_eq!(g.edges.len(), 3);
        assert!(g.edges.iter().all(|e| e.is_external()));
        assert_eq!(g.degree(0), 3);
    }

    #[test]
    fn half_line_is_smallest_valid_graph() {
        let g = MetricGraph::star(1).unwrap();
        assert_eq!(g.n_vertices, 1);
        assert_eq!(g.edges.len(), 1);
    }

    #[test]
    fn line_with_two_symmetric_defects() {
        let a = 1.5;
        let g = MetricGraph::line_with_defects(&[-a, a]).unwrap();
        assert_eq!(g.n_vertices, 2);
        let internals: Vec<_> = g.edges.iter().filter(|e| !e.is_external()).collect();
        assert_eq!(internals.len(), 1);
        match internals[0] {
            Edge::Internal { length, .. } => assert!((length - 2.0 * a).abs() < 1e-15),
            _ => unreachable!(),
        }
        assert_eq!(g.edges.iter().filter(|e| e.is_external()).count(), 2);
    }

    #[test]
    fn rejects_disconnected_graph() {
        let edges = vec![
            Edge::Internal { from: 0, to: 1, length: 1.0 },
            Edge::Internal { from: 2, to: 3, length: 1.0 },
        ];
        assert!(MetricGraph::new(4, edges).is_err());
    }

    #[test]
    fn rejects_nonpositive_length_and_dangling_endpoint() {
        assert!(MetricGraph::new(2, vec![Edge::Internal { from: 0, to: 1, length: 0.0 }]).is_err());
        assert!(MetricGraph::new(1, vec![Edge::Internal { from: 0, to: 1, length: 1.0 }]).is_err());
    }

    #[test]
    fn binary_tree_counts() {
        let g = MetricGraph::binary_tree(2, 1.0).unwrap();
        // root + 2 + 4 vertices; 6 internal edges; 8 external on the 4 leaves
        assert_eq!(g.n_vertices, 7);
        assert_eq!(g.edges.iter().filter(|e| !e.is_external()).count(), 6);
        assert_eq!(g.edges.iter().filter(|e| e.is_external()).count(), 8);
    }

    #[test]
    fn graph_spec_roundtrip() {
        let doc = r#"{
            "vertices": [0, 1],
            "edges": [
                {"from": 0, "to": 1, "length": 2.0},
                {"from": 0, "length": "external"},
                {"from": 1, "length": "external"}
            ]
        }"#;
        let spec: GraphSpec = serde_json::from_str(doc).unwrap();
        let g = build_graph(&spec).unwrap();
        assert_eq!(g.n_vertices, 2);
        assert_eq!(g.edges.len(), 3);
        let doc2 = r#"{"factory": {"kind": "star", "edges": 3}}"#;
        let spec2: GraphSpec = serde_json::from_str(doc2).unwrap();
        assert_eq!(build_graph(&spec2).unwrap().edges.len(), 3);
    }
}
