//! Labeled architecture DAGs.
//!
//! Nodes are neurons (MLP) or cell positions (CNN cell); an edge `(src,
//! dst, label)` is a directed connection tagged with an operation label.
//! Label 0 marks a zeroized operation: the edge is structurally present
//! but must never influence anything downstream.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Operation labels for CNN cell edges. MLP edges always carry label 1.
pub const LABEL_ZEROIZE: u8 = 0;
pub const LABEL_CONV_1X1: u8 = 1;
pub const LABEL_CONV_3X3: u8 = 2;
pub const LABEL_AVG_POOL_3X3: u8 = 3;
pub const NUM_EDGE_LABELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Mlp,
    CnnCell,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureGraph {
    kind: GraphKind,
    num_nodes: usize,
    edges: Vec<(usize, usize, u8)>,
}

impl ArchitectureGraph {
    pub fn new(kind: GraphKind, num_nodes: usize, edges: Vec<(usize, usize, u8)>) -> Result<Self> {
        let g = ArchitectureGraph {
            kind,
            num_nodes,
            edges,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 {
            return Err(Error::InvalidGraph("num_nodes must be positive".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &(src, dst, label) in &self.edges {
            if src >= self.num_nodes || dst >= self.num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({src},{dst}) out of range for {} nodes",
                    self.num_nodes
                )));
            }
            if src == dst {
                return Err(Error::InvalidGraph(format!("self-loop at node {src}")));
            }
            if !seen.insert((src, dst)) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({src},{dst})")));
            }
            match self.kind {
                GraphKind::Mlp if label != 1 => {
                    return Err(Error::InvalidGraph(format!(
                        "mlp edge ({src},{dst}) must have label 1, got {label}"
                    )));
                }
                GraphKind::CnnCell if label as usize >= NUM_EDGE_LABELS => {
                    return Err(Error::InvalidGraph(format!(
                        "cnn_cell edge label {label} outside 0..{NUM_EDGE_LABELS}"
                    )));
                }
                _ => {}
            }
        }
        self.check_acyclic()
    }

    fn check_acyclic(&self) -> Result<()> {
        // Kahn's algorithm; leftover nodes mean a cycle.
        let mut indeg = vec![0usize; self.num_nodes];
        let mut succ = vec![Vec::new(); self.num_nodes];
        for &(src, dst, _) in &self.edges {
            indeg[dst] += 1;
            succ[src].push(dst);
        }
        let mut queue: Vec<usize> = (0..self.num_nodes).filter(|&i| indeg[i] == 0).collect();
        let mut visited = 0usize;
        while let Some(n) = queue.pop() {
            visited += 1;
            for &dst in &succ[n] {
                indeg[dst] -= 1;
                if indeg[dst] == 0 {
                    queue.push(dst);
                }
            }
        }
        if visited != self.num_nodes {
            return Err(Error::InvalidGraph("graph contains a cycle".into()));
        }
        Ok(())
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize, u8)] {
        &self.edges
    }

    /// Edges that participate in message passing (label != zeroize).
    pub fn effective_edges(&self) -> impl Iterator<Item = (usize, usize, u8)> + '_ {
        self.edges
            .iter()
            .copied()
            .filter(|&(_, _, label)| label != LABEL_ZEROIZE)
    }

    pub fn num_effective_edges(&self) -> usize {
        self.effective_edges().count()
    }

    /// (in-degree, out-degree) per node over effective edges.
    pub fn effective_degrees(&self) -> Vec<(usize, usize)> {
        let mut deg = vec![(0usize, 0usize); self.num_nodes];
        for (src, dst, _) in self.effective_edges() {
            deg[src].1 += 1;
            deg[dst].0 += 1;
        }
        deg
    }

    /// Copy of the graph with nodes renamed by `perm` (node i becomes
    /// perm[i]). Used by invariance tests.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes {
            return Err(Error::InvalidGraph("permutation length mismatch".into()));
        }
        let edges = self
            .edges
            .iter()
            .map(|&(s, d, l)| (perm[s], perm[d], l))
            .collect();
        ArchitectureGraph::new(self.kind, self.num_nodes, edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_edge() {
        let err = ArchitectureGraph::new(GraphKind::Mlp, 2, vec![(0, 5, 1)]).unwrap_err();
        assert!(err.to_string().contains("out of range"));
    }

    #[test]
    fn rejects_duplicate_edge() {
        let err =
            ArchitectureGraph::new(GraphKind::Mlp, 3, vec![(0, 1, 1), (0, 1, 1)]).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn rejects_mlp_label_other_than_one() {
        let err = ArchitectureGraph::new(GraphKind::Mlp, 2, vec![(0, 1, 2)]).unwrap_err();
        assert!(err.to_string().contains("label 1"));
    }

    #[test]
    fn rejects_cycle() {
        let err = ArchitectureGraph::new(
            GraphKind::CnnCell,
            3,
            vec![(0, 1, 1), (1, 2, 1), (2, 0, 1)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("cycle"));
    }

    #[test]
    fn zeroize_edges_do_not_count_toward_degrees() {
        let g = ArchitectureGraph::new(GraphKind::CnnCell, 3, vec![(0, 1, 0), (1, 2, 2)]).unwrap();
        assert_eq!(g.num_effective_edges(), 1);
        assert_eq!(g.effective_degrees(), vec![(0, 0), (0, 1), (1, 0)]);
    }
}
