//! Distribution-network topology and bus-admittance construction.
//!
//! Node and line tables are read from CSV, validated (single slack, no
//! duplicate lines, connected graph) and turned into the PQ/slack partition
//! of the admittance matrix that the power-flow solvers consume.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("no slack node in node table")]
    MissingSlack,
    #[error("more than one slack node: {0:?}")]
    MultipleSlack(Vec<usize>),
    #[error("network is disconnected: node {0} is unreachable from the slack node")]
    DisconnectedGraph(usize),
    #[error("line {row}: duplicate line between nodes {from} and {to}")]
    DuplicateLine { row: usize, from: usize, to: usize },
    #[error("{file} row {row}: {reason}")]
    MalformedRow {
        file: String,
        row: usize,
        reason: String,
    },
    #[error("admittance block of the PQ nodes is singular (islanded PQ subgraph?)")]
    SingularPartition,
    #[error("io error on {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Slack,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    pub base_kv: f64,
}

/// A series branch in per-unit. `current_limit` is `f64::INFINITY` when the
/// table gives none.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from_node: usize,
    pub to_node: usize,
    pub resistance: f64,
    pub reactance: f64,
    pub current_limit: f64,
}

impl Line {
    pub fn admittance(&self) -> Complex64 {
        Complex64::new(self.resistance, self.reactance).inv()
    }
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    /// Canonical order: slack first, then PQ nodes by ascending id.
    pub nodes: Vec<Node>,
    pub lines: Vec<Line>,
    pub slack_voltage: Complex64,
}

impl NetworkModel {
    /// Validates and canonicalizes a node/line set.
    pub fn new(nodes: Vec<Node>, lines: Vec<Line>) -> Result<Self, NetworkError> {
        let slacks: Vec<usize> = nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Slack)
            .map(|n| n.id)
            .collect();
        match slacks.len() {
            0 => return Err(NetworkError::MissingSlack),
            1 => {}
            _ => return Err(NetworkError::MultipleSlack(slacks)),
        }
        if nodes.len() < 2 {
            return Err(NetworkError::MalformedRow {
                file: "nodes".into(),
                row: nodes.len(),
                reason: "a network needs at least two nodes".into(),
            });
        }

        let mut ids = HashSet::new();
        for (row, n) in nodes.iter().enumerate() {
            if !ids.insert(n.id) {
                return Err(NetworkError::MalformedRow {
                    file: "nodes".into(),
                    row: row + 1,
                    reason: format!("duplicate node id {}", n.id),
                });
            }
        }

        let mut seen = HashSet::new();
        for (row, l) in lines.iter().enumerate() {
            let bad = |reason: String| NetworkError::MalformedRow {
                file: "lines".into(),
                row: row + 1,
                reason,
            };
            if l.from_node == l.to_node {
                return Err(bad(format!("line connects node {} to itself", l.from_node)));
            }
            for end in [l.from_node, l.to_node] {
                if !ids.contains(&end) {
                    return Err(bad(format!("unknown node {end}")));
                }
            }
            if !(l.resistance >= 0.0) || !l.reactance.is_finite() || !l.resistance.is_finite() {
                return Err(bad("resistance must be finite and >= 0".into()));
            }
            if l.resistance == 0.0 && l.reactance == 0.0 {
                return Err(bad("zero series impedance".into()));
            }
            if !(l.current_limit > 0.0) {
                return Err(bad("current limit must be positive".into()));
            }
            let key = (l.from_node.min(l.to_node), l.from_node.max(l.to_node));
            if !seen.insert(key) {
                return Err(NetworkError::DuplicateLine {
                    row: row + 1,
                    from: l.from_node,
                    to: l.to_node,
                });
            }
        }

        let mut nodes = nodes;
        nodes.sort_by_key(|n| (n.kind != NodeKind::Slack, n.id));

        let model = NetworkModel {
            nodes,
            lines,
            slack_voltage: Complex64::new(1.0, 0.0),
        };
        model.check_connected()?;
        Ok(model)
    }

    fn check_connected(&self) -> Result<(), NetworkError> {
        let index = self.index_map();
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for l in &self.lines {
            let (a, b) = (index[&l.from_node], index[&l.to_node]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut visited = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(n) = queue.pop_front() {
            for &m in &adj[n] {
                if !visited[m] {
                    visited[m] = true;
                    queue.push_back(m);
                }
            }
        }
        match visited.iter().position(|v| !v) {
            Some(i) => Err(NetworkError::DisconnectedGraph(self.nodes[i].id)),
            None => Ok(()),
        }
    }

    /// Node id → canonical row (slack is row 0).
    pub fn index_map(&self) -> BTreeMap<usize, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, i))
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn slack_id(&self) -> usize {
        self.nodes[0].id
    }

    /// PQ node ids in canonical order.
    pub fn pq_ids(&self) -> Vec<usize> {
        self.nodes[1..].iter().map(|n| n.id).collect()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.nodes.iter().any(|n| n.id == id)
    }
}

#[derive(Debug, Deserialize)]
struct NodeRow {
    node_id: usize,
    kind: NodeKind,
    base_kv: f64,
}

#[derive(Debug, Deserialize)]
struct LineRow {
    from_node: usize,
    to_node: usize,
    r_pu: Option<f64>,
    x_pu: Option<f64>,
    r_ohm: Option<f64>,
    x_ohm: Option<f64>,
    i_max_pu: Option<f64>,
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>, NetworkError> {
    let file = std::fs::File::open(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Loads a network from node and line CSV tables.
///
/// Lines may be given in per-unit (`r_pu,x_pu`) or in ohms (`r_ohm,x_ohm`);
/// ohmic values are converted with the sending node's `base_kv` and
/// `base_mva`.
pub fn load_network(
    node_table: &Path,
    line_table: &Path,
    base_mva: f64,
) -> Result<NetworkModel, NetworkError> {
    let node_file = node_table.display().to_string();
    let mut nodes = Vec::new();
    for (row, rec) in open_csv(node_table)?.deserialize::<NodeRow>().enumerate() {
        let r = rec.map_err(|e| NetworkError::MalformedRow {
            file: node_file.clone(),
            row: row + 1,
            reason: e.to_string(),
        })?;
        nodes.push(Node {
            id: r.node_id,
            kind: r.kind,
            base_kv: r.base_kv,
        });
    }
    let base_kv: BTreeMap<usize, f64> = nodes.iter().map(|n| (n.id, n.base_kv)).collect();

    let line_file = line_table.display().to_string();
    let mut lines = Vec::new();
    for (row, rec) in open_csv(line_table)?.deserialize::<LineRow>().enumerate() {
        let bad = |reason: String| NetworkError::MalformedRow {
            file: line_file.clone(),
            row: row + 1,
            reason,
        };
        let r = rec.map_err(|e| bad(e.to_string()))?;
        let (res, reac) = match (r.r_pu, r.x_pu, r.r_ohm, r.x_ohm) {
            (Some(rp), Some(xp), _, _) => (rp, xp),
            (_, _, Some(ro), Some(xo)) => {
                let kv = *base_kv
                    .get(&r.from_node)
                    .ok_or_else(|| bad(format!("unknown node {}", r.from_node)))?;
                let z_base = kv * kv / base_mva;
                (ro / z_base, xo / z_base)
            }
            _ => return Err(bad("missing r_pu/x_pu or r_ohm/x_ohm".into())),
        };
        lines.push(Line {
            from_node: r.from_node,
            to_node: r.to_node,
            resistance: res,
            reactance: reac,
            current_limit: r.i_max_pu.unwrap_or(f64::INFINITY),
        });
    }
    NetworkModel::new(nodes, lines)
}

/// A line expressed in canonical matrix rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from_row: usize,
    pub to_row: usize,
    pub admittance: Complex64,
    pub resistance: f64,
    pub reactance: f64,
}

/// Slack/PQ partition of the bus admittance matrix.
///
/// Row 0 of the full matrix is the slack node; `y_dd` and `y_ds` cover rows
/// `1..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittancePartition {
    pub y_dd: DMatrix<Complex64>,
    pub y_ds: Vec<Complex64>,
    pub y_ss: Complex64,
    pub ordering: BTreeMap<usize, usize>,
    pub branches: Vec<Branch>,
    pub slack_voltage: Complex64,
}

impl AdmittancePartition {
    pub fn pq_count(&self) -> usize {
        self.y_ds.len()
    }

    /// Reassembles the full `n × n` admittance matrix.
    pub fn full_matrix(&self) -> DMatrix<Complex64> {
        let n = self.pq_count() + 1;
        let mut y = DMatrix::zeros(n, n);
        y[(0, 0)] = self.y_ss;
        for i in 0..n - 1 {
            y[(i + 1, 0)] = self.y_ds[i];
            y[(0, i + 1)] = self.y_ds[i];
            for j in 0..n - 1 {
                y[(i + 1, j + 1)] = self.y_dd[(i, j)];
            }
        }
        y
    }
}

pub fn build_admittance(model: &NetworkModel) -> Result<AdmittancePartition, NetworkError> {
    let ordering = model.index_map();
    let n = model.node_count();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    let mut branches = Vec::with_capacity(model.lines.len());
    for l in &model.lines {
        let (a, b) = (ordering[&l.from_node], ordering[&l.to_node]);
        let ys = l.admittance();
        y[(a, a)] += ys;
        y[(b, b)] += ys;
        y[(a, b)] -= ys;
        y[(b, a)] -= ys;
        branches.push(Branch {
            from_row: a,
            to_row: b,
            admittance: ys,
            resistance: l.resistance,
            reactance: l.reactance,
        });
    }
    let y_dd = y.view((1, 1), (n - 1, n - 1)).into_owned();
    let y_ds = (1..n).map(|i| y[(i, 0)]).collect();

    if y_dd.clone().lu().determinant().norm() == 0.0 || !is_well_conditioned(&y_dd) {
        return Err(NetworkError::SingularPartition);
    }

    Ok(AdmittancePartition {
        y_dd,
        y_ds,
        y_ss: y[(0, 0)],
        ordering,
        branches,
        slack_voltage: model.slack_voltage,
    })
}

fn is_well_conditioned(y_dd: &DMatrix<Complex64>) -> bool {
    match y_dd.clone().lu().try_inverse() {
        Some(inv) => {
            let norm = |m: &DMatrix<Complex64>| m.iter().map(|c| c.norm()).fold(0.0, f64::max);
            let cond = norm(y_dd) * norm(&inv) * y_dd.nrows() as f64;
            cond.is_finite() && cond < 1e14
        }
        None => false,
    }
}
