//! Architecture-graph abstraction consumed by the performance predictor.
//!
//! A genotype maps to a directed graph whose nodes are the input, the N
//! operation positions, the output, and a global node connected to everything
//! else. Node features are 16-dimensional: a 7-slot role one-hot followed by
//! a 9-slot function descriptor; the global node instead carries normalized
//! input-data statistics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::design_space::{FunctionChoice, Genotype, OperationKind, SampleFn};
use crate::scalar::Scalar;
use crate::{Error, Result, ENCODING_VERSION};

/// Width of every node-feature row: 7 role slots + 9 function slots.
pub const FEATURE_DIM: usize = 16;

/// Input-data descriptor attached to every evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphStats {
    pub num_points: usize,
    pub neighbors_per_node: usize,
    pub input_feature_dim: usize,
    pub batch_size: usize,
    /// Bytes per weight/feature element.
    pub weight_precision: u32,
    /// Bytes per edge-index element.
    pub index_precision: u32,
}

impl Default for GraphStats {
    fn default() -> Self {
        GraphStats {
            num_points: 1024,
            neighbors_per_node: 20,
            input_feature_dim: 3,
            batch_size: 1,
            weight_precision: 4,
            index_precision: 8,
        }
    }
}

impl GraphStats {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("num_points", self.num_points),
            ("neighbors_per_node", self.neighbors_per_node),
            ("input_feature_dim", self.input_feature_dim),
            ("batch_size", self.batch_size),
        ] {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        for (name, value) in [
            ("weight_precision", self.weight_precision),
            ("index_precision", self.index_precision),
        ] {
            if ![2, 4, 8].contains(&value) {
                return Err(Error::Config(format!(
                    "{name} must be one of 2, 4 or 8 bytes, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Edge count of one sampled graph: `N * K`.
    pub fn num_edges(&self) -> u64 {
        self.num_points as u64 * self.neighbors_per_node as u64
    }
}

/// Role of one architecture-graph node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Input,
    Output,
    Global,
    Operation,
}

/// Directed architecture graph with node features.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchGraph<T: Scalar> {
    /// 0/1 adjacency, row = source, column = destination.
    pub adjacency: Array2<u8>,
    /// One feature row per node.
    pub features: Array2<T>,
    pub node_roles: Vec<NodeRole>,
    pub encoding_version: u32,
}

impl<T: Scalar> ArchGraph<T> {
    pub fn num_nodes(&self) -> usize {
        self.node_roles.len()
    }

    /// Index of the single global node.
    pub fn global_index(&self) -> usize {
        self.node_roles
            .iter()
            .position(|r| *r == NodeRole::Global)
            .expect("graph has a global node")
    }

    /// Debug export as an edge list plus feature rows.
    pub fn to_json(&self) -> serde_json::Value {
        let edges: Vec<[usize; 2]> = self
            .adjacency
            .indexed_iter()
            .filter(|(_, v)| **v != 0)
            .map(|((src, dst), _)| [src, dst])
            .collect();
        let features: Vec<Vec<f64>> = self
            .features
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|v| v.to_real()).collect())
            .collect();
        json!({
            "encoding_version": self.encoding_version,
            "num_nodes": self.num_nodes(),
            "node_roles": self.node_roles,
            "edges": edges,
            "features": features,
        })
    }
}

fn role_slot(role: NodeRole, kind: Option<OperationKind>) -> usize {
    match (role, kind) {
        (NodeRole::Input, _) => 0,
        (NodeRole::Output, _) => 1,
        (NodeRole::Global, _) => 2,
        (NodeRole::Operation, Some(OperationKind::Connect)) => 3,
        (NodeRole::Operation, Some(OperationKind::Aggregate)) => 4,
        (NodeRole::Operation, Some(OperationKind::Combine)) => 5,
        (NodeRole::Operation, Some(OperationKind::Sample)) => 6,
        (NodeRole::Operation, None) => unreachable!("operation nodes carry a kind"),
    }
}

/// Encode one operation position into its 16-dimensional feature row.
///
/// Slots 0-6 are the role one-hot (input, output, global, connect, aggregate,
/// combine, sample). The function descriptor occupies slots 7-15: aggregator
/// one-hot, message-type index / 6, log2(combine_dim) / 8, skip-connect flag,
/// KNN flag, one reserved zero. Slots that do not apply to the operation are
/// zero.
pub fn encode_position<T: Scalar>(
    op: OperationKind,
    function: &FunctionChoice,
) -> Result<[T; FEATURE_DIM]> {
    if function.kind() != op {
        return Err(Error::InvalidInput(format!(
            "function {function:?} does not parameterize operation {op:?}"
        )));
    }
    let mut row = [0.0f64; FEATURE_DIM];
    row[role_slot(NodeRole::Operation, Some(op))] = 1.0;
    let fslots = &mut row[7..];
    match function {
        FunctionChoice::Connect(connect) => {
            if *connect == crate::design_space::ConnectFn::SkipConnect {
                fslots[6] = 1.0;
            }
        }
        FunctionChoice::Aggregate {
            aggregator,
            message_type,
        } => {
            fslots[aggregator.index()] = 1.0;
            fslots[4] = message_type.index() as f64 / 6.0;
        }
        FunctionChoice::Combine { output_dim } => {
            fslots[5] = (*output_dim as f64).log2() / 8.0;
        }
        FunctionChoice::Sample(sample) => {
            if *sample == SampleFn::Knn {
                fslots[7] = 1.0;
            }
        }
    }
    Ok(row.map(T::from_real))
}

/// Global-node feature row: normalized input-data statistics, each slot
/// clamped to [0, 1].
pub fn global_features<T: Scalar>(stats: &GraphStats) -> [T; FEATURE_DIM] {
    let n = stats.num_points as f64;
    let k = stats.neighbors_per_node as f64;
    let mut row = [0.0f64; FEATURE_DIM];
    row[0] = n.log2() / 16.0;
    row[1] = k / 64.0;
    row[2] = (stats.input_feature_dim as f64 + 1.0).log2() / 8.0;
    row[3] = stats.batch_size as f64 / 64.0;
    row[4] = k / (n - 1.0).max(1.0);
    row[5] = stats.weight_precision as f64 / 8.0;
    row[6] = stats.index_precision as f64 / 8.0;
    row.map(|v| T::from_real(v.clamp(0.0, 1.0)))
}

/// Abstract a genotype into its architecture graph.
///
/// Nodes are ordered input, op_1..op_N, output, global. The operation chain
/// carries directed edges; the global node has edges in both directions with
/// every other node.
pub fn build_arch_graph<T: Scalar>(g: &Genotype, stats: &GraphStats) -> Result<ArchGraph<T>> {
    stats.validate()?;
    let n = g.num_positions();
    if n == 0 {
        return Err(Error::InvalidInput("genotype has no positions".into()));
    }
    let m = n + 3;
    let output = n + 1;
    let global = n + 2;

    let mut adjacency = Array2::<u8>::zeros((m, m));
    adjacency[[0, 1]] = 1;
    for i in 1..=n {
        adjacency[[i, i + 1]] = 1;
    }
    for other in 0..m {
        if other != global {
            adjacency[[global, other]] = 1;
            adjacency[[other, global]] = 1;
        }
    }

    let mut features = Array2::<T>::zeros((m, FEATURE_DIM));
    for (idx, kind) in g.positions.iter().enumerate() {
        let row = encode_position::<T>(*kind, &g.function_choice_at(idx))?;
        for (slot, value) in row.into_iter().enumerate() {
            features[[idx + 1, slot]] = value;
        }
    }
    for (slot, value) in global_features::<T>(stats).into_iter().enumerate() {
        features[[global, slot]] = value;
    }

    let mut node_roles = vec![NodeRole::Operation; m];
    node_roles[0] = NodeRole::Input;
    node_roles[output] = NodeRole::Output;
    node_roles[global] = NodeRole::Global;

    Ok(ArchGraph {
        adjacency,
        features,
        node_roles,
        encoding_version: ENCODING_VERSION,
    })
}
