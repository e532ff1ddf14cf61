//! Coding vectors, the topology graph over them, and the two quantizer
//! losses with analytic gradients.
//!
//! The quantizer keeps one coding vector (CV) per trained class. An
//! undirected strength-weighted graph over the CVs tracks which classes
//! occupy neighboring regions of feature space: every incoming feature
//! links its closest CV to the next `k - 1` closest ones, previously
//! created links decay, and links that fall below a threshold are pruned.
//! Graph neighbors of a class are the classes it is most likely to be
//! confused with, and both losses lean on that neighborhood structure.
//!
//! All loss evaluations are pure functions of an immutable
//! `(CodingVectorSet, TopologyGraph)` snapshot; mutation happens only in
//! [`update_topology`], [`insert_class_cvs`], [`freeze_old_cvs`], and the
//! optimizer step.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::{add_scaled, distance, distance_grad};

/// One learnable reference vector per trained class, plus per-class freeze
/// flags. Class ids are contiguous: inserting classes always extends the
/// id range `0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingVectorSet {
    dim: usize,
    vectors: Vec<Vec<f64>>,
    frozen: Vec<bool>,
}

impl CodingVectorSet {
    pub fn new(dim: usize) -> Self {
        CodingVectorSet {
            dim,
            vectors: Vec::new(),
            frozen: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, id: usize) -> Result<&[f64]> {
        self.vectors
            .get(id)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::contract(format!("unknown class id {id}")))
    }

    pub fn is_frozen(&self, id: usize) -> bool {
        self.frozen.get(id).copied().unwrap_or(false)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.vectors.iter().enumerate().map(|(i, v)| (i, v.as_slice()))
    }

    /// Applies one gradient-descent step to every unfrozen CV present in
    /// `grads`. Frozen vectors are skipped entirely, which is the single
    /// enforcement point of the freeze invariant.
    pub fn apply_gradients(&mut self, grads: &BTreeMap<usize, Vec<f64>>, lr: f64) -> Result<()> {
        for (&id, g) in grads {
            if id >= self.vectors.len() {
                return Err(Error::contract(format!("gradient for unknown class id {id}")));
            }
            if g.len() != self.dim {
                return Err(Error::contract(format!(
                    "gradient dim {} != cv dim {} for class {id}",
                    g.len(),
                    self.dim
                )));
            }
            if self.frozen[id] {
                continue;
            }
            add_scaled(&mut self.vectors[id], g, -lr);
        }
        Ok(())
    }

    /// Shifts one component of one vector, ignoring freezing. This is an
    /// instrumentation hook for finite-difference gradient checks, where
    /// the loss surface must be probed around frozen vectors too; it is
    /// not a training update.
    pub fn nudge(&mut self, id: usize, component: usize, delta: f64) {
        self.vectors[id][component] += delta;
    }
}

/// Topology hyperparameters: connectivity factor `k`, edge decay
/// multiplier `epsilon`, and the pruning threshold `e_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyParams {
    pub k: usize,
    pub epsilon: f64,
    pub e_min: f64,
}

impl Default for TopologyParams {
    fn default() -> Self {
        TopologyParams {
            k: 15,
            epsilon: 0.9,
            e_min: 0.05,
        }
    }
}

impl TopologyParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::config("k", format!("must be >= 2, got {}", self.k)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config(
                "epsilon",
                format!("must lie in (0, 1), got {}", self.epsilon),
            ));
        }
        if !(self.e_min > 0.0 && self.e_min < 1.0) {
            return Err(Error::config(
                "e_min",
                format!("must lie in (0, 1), got {}", self.e_min),
            ));
        }
        Ok(())
    }
}

/// Symmetric edge-strength matrix over coding-vector ids. Strengths are 0
/// (no edge) or values in `[e_min, 1]`; the diagonal is always zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyGraph {
    len: usize,
    strengths: Vec<f64>,
    params: TopologyParams,
}

impl TopologyGraph {
    pub fn new(len: usize, params: TopologyParams) -> Result<Self> {
        params.validate()?;
        Ok(TopologyGraph {
            len,
            strengths: vec![0.0; len * len],
            params,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn params(&self) -> &TopologyParams {
        &self.params
    }

    /// Re-points the connectivity factor; the harness clamps it to the
    /// current CV count at every task boundary.
    pub fn set_connectivity(&mut self, k: usize) -> Result<()> {
        if k < 2 {
            return Err(Error::config("k", format!("must be >= 2, got {k}")));
        }
        self.params.k = k;
        Ok(())
    }

    pub fn strength(&self, i: usize, j: usize) -> f64 {
        self.strengths[i * self.len + j]
    }

    pub(crate) fn set_strength(&mut self, i: usize, j: usize, v: f64) {
        self.strengths[i * self.len + j] = v;
        self.strengths[j * self.len + i] = v;
    }

    /// Extends the matrix with zero rows/columns for newly inserted ids.
    /// Existing strengths are untouched.
    pub fn grow(&mut self, new_len: usize) {
        debug_assert!(new_len >= self.len);
        let mut next = vec![0.0; new_len * new_len];
        for i in 0..self.len {
            for j in 0..self.len {
                next[i * new_len + j] = self.strengths[i * self.len + j];
            }
        }
        self.len = new_len;
        self.strengths = next;
    }

    /// Checks symmetry, zero diagonal, and the `[e_min, 1]` range of every
    /// nonzero strength.
    pub fn check_invariants(&self) -> Result<()> {
        for i in 0..self.len {
            if self.strength(i, i) != 0.0 {
                return Err(Error::Numeric(format!("self edge on node {i}")));
            }
            for j in (i + 1)..self.len {
                let e = self.strength(i, j);
                if e != self.strength(j, i) {
                    return Err(Error::Numeric(format!("asymmetric edge ({i}, {j})")));
                }
                if e != 0.0 && !(e >= self.params.e_min && e <= 1.0) {
                    return Err(Error::Numeric(format!(
                        "edge ({i}, {j}) strength {e} outside [{}, 1]",
                        self.params.e_min
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Distances from a feature vector to every CV, with the ascending rank
/// order. Ties are broken by lower class id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedDistances {
    /// Distance to CV `i`, indexed by class id.
    pub distances: Vec<f64>,
    /// Class ids sorted by ascending distance.
    pub order: Vec<usize>,
}

/// Computes the distance from `z` to every CV and ranks the CVs by
/// ascending distance (ties broken by lower class id).
pub fn rank_coding_vectors(z: &[f64], cvs: &CodingVectorSet) -> Result<RankedDistances> {
    if cvs.is_empty() {
        return Err(Error::EmptyModel);
    }
    if z.len() != cvs.dim() {
        return Err(Error::contract(format!(
            "feature dim {} != cv dim {}",
            z.len(),
            cvs.dim()
        )));
    }
    let distances: Vec<f64> = cvs.iter().map(|(_, m)| distance(z, m)).collect();
    let mut order: Vec<usize> = (0..cvs.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    Ok(RankedDistances { distances, order })
}

/// One topology step for a single feature vector: the edges incident to
/// the closest CV decay by `epsilon`, fresh edges of strength 1 connect it
/// to the next `k - 1` closest CVs, and any strength that fell below
/// `e_min` is pruned. Decay runs before creation so fresh edges always
/// carry full strength.
///
/// `label`, when given, is only validated; edge formation is unsupervised.
pub fn update_topology(
    z: &[f64],
    label: Option<usize>,
    cvs: &CodingVectorSet,
    graph: &mut TopologyGraph,
) -> Result<()> {
    if graph.len() != cvs.len() {
        return Err(Error::contract(format!(
            "graph size {} != cv count {}",
            graph.len(),
            cvs.len()
        )));
    }
    if let Some(y) = label {
        if y >= cvs.len() {
            return Err(Error::contract(format!("unknown class id {y}")));
        }
    }
    let k = graph.params().k;
    if k > cvs.len() {
        return Err(Error::config(
            "k",
            format!("connectivity {k} exceeds cv count {}", cvs.len()),
        ));
    }
    let ranked = rank_coding_vectors(z, cvs)?;
    let winner = ranked.order[0];
    let epsilon = graph.params().epsilon;
    let e_min = graph.params().e_min;

    for j in 0..graph.len() {
        let e = graph.strength(winner, j);
        if e > 0.0 {
            graph.set_strength(winner, j, e * epsilon);
        }
    }
    for &next in &ranked.order[1..k] {
        graph.set_strength(winner, next, 1.0);
    }
    for j in 0..graph.len() {
        let e = graph.strength(winner, j);
        if e > 0.0 && e < e_min {
            graph.set_strength(winner, j, 0.0);
        }
    }
    Ok(())
}

/// Direct graph neighbors of class `y`: the classes most likely to be
/// confused with it. Returned sorted ascending.
pub fn confusing_neighbors(
    y: usize,
    graph: &TopologyGraph,
    cvs: &CodingVectorSet,
) -> Result<Vec<usize>> {
    if y >= cvs.len() || graph.len() != cvs.len() {
        return Err(Error::contract(format!("unknown class id {y}")));
    }
    Ok((0..graph.len())
        .filter(|&i| i != y && graph.strength(y, i) > 0.0)
        .collect())
}

/// Softmax weights `exp(-beta * d_i) / sum_j exp(-beta * d_j)` over the
/// given neighbors, computed with max-shifted exponentials. The result is
/// parallel to `neighbors`; entries are positive and sum to 1.
pub fn neighbor_weights(
    z: &[f64],
    neighbors: &[usize],
    cvs: &CodingVectorSet,
    beta: f64,
) -> Result<Vec<f64>> {
    if neighbors.is_empty() {
        return Err(Error::contract("empty neighbor set".to_string()));
    }
    if beta <= 0.0 {
        return Err(Error::config("beta", format!("must be > 0, got {beta}")));
    }
    let mut scores = Vec::with_capacity(neighbors.len());
    for &i in neighbors {
        scores.push(-beta * distance(z, cvs.vector(i)?));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// A scalar loss with its gradient with respect to the input feature and
/// sparse gradients with respect to the involved CVs. Gradients of frozen
/// CVs are reported too; the optimizer step masks them.
#[derive(Debug, Clone)]
pub struct LossTerm {
    pub loss: f64,
    pub grad_z: Vec<f64>,
    pub grad_cvs: BTreeMap<usize, Vec<f64>>,
}

impl LossTerm {
    fn inactive(dim: usize) -> Self {
        LossTerm {
            loss: 0.0,
            grad_z: vec![0.0; dim],
            grad_cvs: BTreeMap::new(),
        }
    }
}

/// Neighborhood-adaptation hinge: `max(0, d(z, m_y) - d_neigh)` where
/// `d_neigh` is the weight-averaged distance from `z` to the confusing
/// neighbors of `y`. Pulls `z` toward its own CV while pushing it away
/// from the neighbors, but only when `z` sits farther from its CV than
/// from the neighborhood.
///
/// Returns zero loss and zero gradients when `y` has no graph neighbors
/// or the hinge is inactive. Gradients flow through the neighbor weights
/// as functions of `z` and the CVs.
pub fn loss_na(
    z: &[f64],
    y: usize,
    cvs: &CodingVectorSet,
    graph: &TopologyGraph,
    beta: f64,
) -> Result<LossTerm> {
    if z.len() != cvs.dim() {
        return Err(Error::contract(format!(
            "feature dim {} != cv dim {}",
            z.len(),
            cvs.dim()
        )));
    }
    if y >= cvs.len() {
        return Err(Error::contract(format!("unknown class id {y}")));
    }
    let neighbors = confusing_neighbors(y, graph, cvs)?;
    if neighbors.is_empty() {
        return Ok(LossTerm::inactive(z.len()));
    }
    let weights = neighbor_weights(z, &neighbors, cvs, beta)?;
    let d_y = distance(z, cvs.vector(y)?);
    let dists: Vec<f64> = neighbors
        .iter()
        .map(|&i| cvs.vector(i).map(|m| distance(z, m)))
        .collect::<Result<_>>()?;
    let d_neigh: f64 = weights.iter().zip(&dists).map(|(w, d)| w * d).sum();
    let margin = d_y - d_neigh;
    if margin <= 0.0 {
        return Ok(LossTerm::inactive(z.len()));
    }

    let mut grad_z = vec![0.0; z.len()];
    let mut grad_cvs = BTreeMap::new();

    // d(z, m_y) term.
    let m_y = cvs.vector(y)?;
    let gy = distance_grad(z, m_y, d_y);
    add_scaled(&mut grad_z, &gy, 1.0);
    grad_cvs.insert(y, gy.iter().map(|v| -v).collect::<Vec<f64>>());

    // -d_neigh term. With w = softmax(-beta * d) the weighted mean
    // g(d) = sum_i w_i d_i has  dg/dd_k = w_k * (1 - beta * (d_k - g)).
    for ((&i, &w), &d_i) in neighbors.iter().zip(&weights).zip(&dists) {
        let coeff = -w * (1.0 - beta * (d_i - d_neigh));
        let gi = distance_grad(z, cvs.vector(i)?, d_i);
        add_scaled(&mut grad_z, &gi, coeff);
        let entry = grad_cvs.entry(i).or_insert_with(|| vec![0.0; z.len()]);
        add_scaled(entry, &gi, -coeff);
    }

    Ok(LossTerm {
        loss: margin,
        grad_z,
        grad_cvs,
    })
}

/// Distance-based class posterior `p(i | x) ∝ exp(-d(z, m_i) / tau)` over
/// the restricted id set (all trained classes when `restrict` is `None`).
/// Components are positive and sum to 1.
pub fn class_posterior(
    z: &[f64],
    cvs: &CodingVectorSet,
    tau: f64,
    restrict: Option<&[usize]>,
) -> Result<Vec<f64>> {
    let ids: Vec<usize> = match restrict {
        Some(ids) => ids.to_vec(),
        None => (0..cvs.len()).collect(),
    };
    if ids.is_empty() {
        return Err(if cvs.is_empty() && restrict.is_none() {
            Error::EmptyModel
        } else {
            Error::contract("empty restriction set".to_string())
        });
    }
    if tau <= 0.0 {
        return Err(Error::config("tau", format!("must be > 0, got {tau}")));
    }
    let mut scores = Vec::with_capacity(ids.len());
    for &i in &ids {
        scores.push(-distance(z, cvs.vector(i)?) / tau);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Distance-based cross-entropy `-log p(y | x)` over all trained classes,
/// with analytic gradients through the softmax and the smoothed Euclidean
/// distance.
pub fn loss_dce(z: &[f64], y: usize, cvs: &CodingVectorSet, tau: f64) -> Result<LossTerm> {
    if z.len() != cvs.dim() {
        return Err(Error::contract(format!(
            "feature dim {} != cv dim {}",
            z.len(),
            cvs.dim()
        )));
    }
    if y >= cvs.len() {
        return Err(Error::contract(format!("unknown class id {y}")));
    }
    let dists: Vec<f64> = cvs.iter().map(|(_, m)| distance(z, m)).collect();
    let scores: Vec<f64> = dists.iter().map(|d| -d / tau).collect();
    if tau <= 0.0 {
        return Err(Error::config("tau", format!("must be > 0, got {tau}")));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - scores[y];
    let probs: Vec<f64> = scores.iter().map(|s| (s - log_sum).exp()).collect();

    let mut grad_z = vec![0.0; z.len()];
    let mut grad_cvs = BTreeMap::new();
    for (i, m) in cvs.iter() {
        // dL/dd_i = (delta_iy - p_i) / tau
        let dl_dd = ((i == y) as u8 as f64 - probs[i]) / tau;
        let gi = distance_grad(z, m, dists[i]);
        add_scaled(&mut grad_z, &gi, dl_dd);
        grad_cvs.insert(i, gi.iter().map(|v| -dl_dd * v).collect());
    }
    Ok(LossTerm {
        loss,
        grad_z,
        grad_cvs,
    })
}

/// Appends one freshly initialized CV per new class id (drawn i.i.d. from
/// a zero-mean Gaussian of the given scale) and extends the graph with
/// edgeless nodes. New ids must extend the contiguous id range.
pub fn insert_class_cvs(
    cvs: &mut CodingVectorSet,
    graph: &mut TopologyGraph,
    new_class_ids: &[usize],
    init_scale: f64,
    rng: &mut impl Rng,
) -> Result<()> {
    if graph.len() != cvs.len() {
        return Err(Error::contract(format!(
            "graph size {} != cv count {}",
            graph.len(),
            cvs.len()
        )));
    }
    for (offset, &id) in new_class_ids.iter().enumerate() {
        let expected = cvs.len() + offset;
        if id < cvs.len() {
            return Err(Error::contract(format!("class id {id} already present")));
        }
        if id != expected {
            return Err(Error::contract(format!(
                "class ids must extend contiguously: expected {expected}, got {id}"
            )));
        }
    }
    let normal = Normal::new(0.0, init_scale)
        .map_err(|e| Error::config("cv_init_scale", e.to_string()))?;
    for _ in new_class_ids {
        let v: Vec<f64> = (0..cvs.dim).map(|_| normal.sample(rng)).collect();
        cvs.vectors.push(v);
        cvs.frozen.push(false);
    }
    graph.grow(cvs.len());
    Ok(())
}

/// Marks the given classes as frozen. Frozen CVs are skipped by every
/// parameter update but keep participating in topology updates and loss
/// terms. Idempotent.
pub fn freeze_old_cvs(cvs: &mut CodingVectorSet, old_class_ids: &[usize]) -> Result<()> {
    for &id in old_class_ids {
        if id >= cvs.len() {
            return Err(Error::contract(format!("unknown class id {id}")));
        }
        cvs.frozen[id] = true;
    }
    Ok(())
}

/// Serializable snapshot of the quantizer: every CV with its freeze flag,
/// plus every positive edge listed once with `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    pub frozen: bool,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    pub strength: f64,
}

pub fn export_graph(cvs: &CodingVectorSet, graph: &TopologyGraph) -> GraphExport {
    let nodes = cvs
        .iter()
        .map(|(id, v)| GraphNode {
            id,
            frozen: cvs.is_frozen(id),
            vector: v.to_vec(),
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..graph.len() {
        for j in (i + 1)..graph.len() {
            let strength = graph.strength(i, j);
            if strength > 0.0 {
                edges.push(GraphEdge { i, j, strength });
            }
        }
    }
    GraphExport { nodes, edges }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cvs_from(vectors: &[&[f64]]) -> CodingVectorSet {
        let dim = vectors[0].len();
        let mut set = CodingVectorSet::new(dim);
        for v in vectors {
            set.vectors.push(v.to_vec());
            set.frozen.push(false);
        }
        set
    }

    fn params(k: usize) -> TopologyParams {
        TopologyParams {
            k,
            epsilon: 0.5,
            e_min: 0.05,
        }
    }

    #[test]
    fn rank_orders_by_distance() {
        let cvs = cvs_from(&[&[1.0, 0.0], &[2.0, 0.0], &[0.0, 3.0]]);
        let r = rank_coding_vectors(&[0.0, 0.0], &cvs).unwrap();
        assert_eq!(r.order, vec![0, 1, 2]);
        assert!((r.distances[0] - 1.0).abs() < 1e-9);
        assert!((r.distances[1] - 2.0).abs() < 1e-9);
        assert!((r.distances[2] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn rank_breaks_ties_by_lower_id() {
        let cvs = cvs_from(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let r = rank_coding_vectors(&[0.0, 0.0], &cvs).unwrap();
        assert_eq!(r.order, vec![0, 1]);
    }

    #[test]
    fn rank_rejects_dim_mismatch_and_empty() {
        let cvs = cvs_from(&[&[1.0, 0.0]]);
        assert!(matches!(
            rank_coding_vectors(&[0.0], &cvs),
            Err(Error::Contract(_))
        ));
        let empty = CodingVectorSet::new(2);
        assert!(matches!(
            rank_coding_vectors(&[0.0, 0.0], &empty),
            Err(Error::EmptyModel)
        ));
    }

    #[test]
    fn topology_creates_edge_to_runner_up() {
        let cvs = cvs_from(&[&[0.0, 0.0], &[1.0, 0.0], &[5.0, 5.0]]);
        let mut graph = TopologyGraph::new(3, params(2)).unwrap();
        update_topology(&[0.1, 0.0], None, &cvs, &mut graph).unwrap();
        assert_eq!(graph.strength(0, 1), 1.0);
        assert_eq!(graph.strength(1, 0), 1.0);
        assert_eq!(graph.strength(0, 2), 0.0);
    }

    #[test]
    fn topology_decays_stale_edges() {
        let cvs = cvs_from(&[&[0.0, 0.0], &[1.0, 0.0], &[5.0, 5.0]]);
        let mut graph = TopologyGraph::new(3, params(2)).unwrap();
        graph.set_strength(0, 2, 1.0); // stale edge, node 2 not among the 2 closest
        update_topology(&[0.1, 0.0], None, &cvs, &mut graph).unwrap();
        assert_eq!(graph.strength(0, 2), 0.5);
    }

    #[test]
    fn topology_prunes_below_threshold() {
        let cvs = cvs_from(&[&[0.0, 0.0], &[1.0, 0.0], &[5.0, 5.0]]);
        let mut graph = TopologyGraph::new(3, params(2)).unwrap();
        graph.set_strength(0, 2, 0.06);
        update_topology(&[0.1, 0.0], None, &cvs, &mut graph).unwrap();
        // 0.06 * 0.5 = 0.03 < e_min = 0.05 -> pruned.
        assert_eq!(graph.strength(0, 2), 0.0);
        graph.check_invariants().unwrap();
    }

    #[test]
    fn topology_rejects_oversized_connectivity() {
        let cvs = cvs_from(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let mut graph = TopologyGraph::new(2, params(3)).unwrap();
        assert!(matches!(
            update_topology(&[0.0, 0.0], None, &cvs, &mut graph),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn confusing_neighbors_reads_positive_edges() {
        let cvs = cvs_from(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let mut graph = TopologyGraph::new(3, params(2)).unwrap();
        graph.set_strength(0, 1, 0.7);
        graph.set_strength(0, 2, 0.2);
        graph.set_strength(1, 2, 1.0);
        assert_eq!(confusing_neighbors(0, &graph, &cvs).unwrap(), vec![1, 2]);
    }

    #[test]
    fn isolated_node_has_no_neighbors() {
        let cvs = cvs_from(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let graph = TopologyGraph::new(2, params(2)).unwrap();
        assert!(confusing_neighbors(0, &graph, &cvs).unwrap().is_empty());
        assert!(matches!(
            confusing_neighbors(5, &graph, &cvs),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn weights_split_evenly_when_equidistant() {
        let cvs = cvs_from(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let w = neighbor_weights(&[0.0, 0.0], &[0, 1], &cvs, 1.0).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12);
        assert!((w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_neighbor_gets_full_weight() {
        let cvs = cvs_from(&[&[3.0, 4.0]]);
        let w = neighbor_weights(&[0.0, 0.0], &[0], &cvs, 2.0).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weights_match_hand_substitution() {
        // beta = ln 2, distances (1, 2) -> weights (2/3, 1/3).
        let cvs = cvs_from(&[&[1.0, 0.0], &[2.0, 0.0]]);
        let w = neighbor_weights(&[0.0, 0.0], &[0, 1], &cvs, 2f64.ln()).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-9);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn weights_reject_empty_neighbor_set() {
        let cvs = cvs_from(&[&[1.0, 0.0]]);
        assert!(matches!(
            neighbor_weights(&[0.0, 0.0], &[], &cvs, 1.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn na_hinge_inactive_at_own_cv() {
        let cvs = cvs_from(&[&[2.0, 0.0], &[2.0, 1.0]]);
        let mut graph = TopologyGraph::new(2, params(2)).unwrap();
        graph.set_strength(0, 1, 1.0);
        let term = loss_na(&[2.0, 0.0], 0, &cvs, &graph, 1.0).unwrap();
        assert_eq!(term.loss, 0.0);
        assert!(term.grad_z.iter().all(|g| *g == 0.0));
        assert!(term.grad_cvs.is_empty());
    }

    #[test]
    fn na_zero_without_neighbors() {
        let cvs = cvs_from(&[&[2.0, 0.0], &[0.0, 1.0]]);
        let graph = TopologyGraph::new(2, params(2)).unwrap();
        let term = loss_na(&[0.0, 0.0], 0, &cvs, &graph, 1.0).unwrap();
        assert_eq!(term.loss, 0.0);
        assert!(term.grad_cvs.is_empty());
    }

    #[test]
    fn na_active_case_matches_hand_value_and_finite_differences() {
        // m_y = (2, 0), single neighbor (0, 1), z = (0, 0), beta = 1:
        // loss = max(0, 2 - 1) = 1.
        let cvs = cvs_from(&[&[2.0, 0.0], &[0.0, 1.0]]);
        let mut graph = TopologyGraph::new(2, params(2)).unwrap();
        graph.set_strength(0, 1, 1.0);
        let z = [0.0, 0.0];
        let term = loss_na(&z, 0, &cvs, &graph, 1.0).unwrap();
        assert!((term.loss - 1.0).abs() < 1e-9);

        let h = 1e-5;
        let eval = |z: &[f64], cvs: &CodingVectorSet| loss_na(z, 0, cvs, &graph, 1.0).unwrap().loss;
        for d in 0..2 {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[d] += h;
            zm[d] -= h;
            let num = (eval(&zp, &cvs) - eval(&zm, &cvs)) / (2.0 * h);
            let ana = term.grad_z[d];
            assert!(
                (num - ana).abs() / num.abs().max(ana.abs()).max(1e-4) < 1e-4,
                "grad_z[{d}]: analytic {ana} vs numeric {num}"
            );
        }
        for id in 0..2 {
            for d in 0..2 {
                let mut cp = cvs.clone();
                let mut cm = cvs.clone();
                cp.vectors[id][d] += h;
                cm.vectors[id][d] -= h;
                let num = (eval(&z, &cp) - eval(&z, &cm)) / (2.0 * h);
                let ana = term.grad_cvs[&id][d];
                assert!(
                    (num - ana).abs() / num.abs().max(ana.abs()).max(1e-4) < 1e-4,
                    "grad_cvs[{id}][{d}]: analytic {ana} vs numeric {num}"
                );
            }
        }
    }

    #[test]
    fn posterior_normalizes() {
        let single = cvs_from(&[&[1.0, 1.0]]);
        let p = class_posterior(&[0.0, 0.0], &single, 0.5, None).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15);

        let pair = cvs_from(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        for tau in [0.1, 1.0, 7.0] {
            let p = class_posterior(&[0.0, 0.0], &pair, tau, None).unwrap();
            assert!((p[0] - 0.5).abs() < 1e-12);
            assert!((p[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_matches_direct_evaluation() {
        // distances (1, 2), tau = 1 -> normalized (e^-1, e^-2).
        let cvs = cvs_from(&[&[1.0, 0.0], &[2.0, 0.0]]);
        let p = class_posterior(&[0.0, 0.0], &cvs, 1.0, None).unwrap();
        let e1 = (-1.0f64).exp();
        let e2 = (-2.0f64).exp();
        assert!((p[0] - e1 / (e1 + e2)).abs() < 1e-9);
        assert!((p[1] - e2 / (e1 + e2)).abs() < 1e-9);
    }

    #[test]
    fn posterior_rejects_empty_restriction() {
        let cvs = cvs_from(&[&[1.0, 0.0]]);
        assert!(matches!(
            class_posterior(&[0.0, 0.0], &cvs, 1.0, Some(&[])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn dce_confident_case_is_near_zero() {
        let cvs = cvs_from(&[&[1.0, 1.0], &[50.0, 50.0]]);
        let term = loss_dce(&[1.0, 1.0], 0, &cvs, 1.0).unwrap();
        assert!(term.loss < 1e-6);
    }

    #[test]
    fn dce_equidistant_case_is_ln_two() {
        let cvs = cvs_from(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let term = loss_dce(&[0.0, 0.0], 0, &cvs, 0.7).unwrap();
        assert!((term.loss - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn dce_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 4;
        let classes = 5;
        let mut cvs = CodingVectorSet::new(dim);
        for _ in 0..classes {
            cvs.vectors
                .push((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
            cvs.frozen.push(false);
        }
        let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tau = 0.6;
        let term = loss_dce(&z, 2, &cvs, tau).unwrap();
        let h = 1e-5;
        for d in 0..dim {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[d] += h;
            zm[d] -= h;
            let num = (loss_dce(&zp, 2, &cvs, tau).unwrap().loss
                - loss_dce(&zm, 2, &cvs, tau).unwrap().loss)
                / (2.0 * h);
            let ana = term.grad_z[d];
            assert!((num - ana).abs() / num.abs().max(ana.abs()).max(1e-4) < 1e-4);
        }
        for id in 0..classes {
            for d in 0..dim {
                let mut cp = cvs.clone();
                let mut cm = cvs.clone();
                cp.vectors[id][d] += h;
                cm.vectors[id][d] -= h;
                let num = (loss_dce(&z, 2, &cp, tau).unwrap().loss
                    - loss_dce(&z, 2, &cm, tau).unwrap().loss)
                    / (2.0 * h);
                let ana = term.grad_cvs[&id][d];
                assert!((num - ana).abs() / num.abs().max(ana.abs()).max(1e-4) < 1e-4);
            }
        }
    }

    #[test]
    fn insert_extends_shapes_and_leaves_existing_strengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cvs = cvs_from(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let mut graph = TopologyGraph::new(3, params(2)).unwrap();
        graph.set_strength(0, 1, 0.8);
        graph.set_strength(1, 2, 0.3);
        insert_class_cvs(&mut cvs, &mut graph, &[3, 4], 0.1, &mut rng).unwrap();
        assert_eq!(cvs.len(), 5);
        assert_eq!(graph.len(), 5);
        assert_eq!(graph.strength(0, 1), 0.8);
        assert_eq!(graph.strength(1, 2), 0.3);
        for j in 0..5 {
            assert_eq!(graph.strength(3, j), 0.0);
            assert_eq!(graph.strength(4, j), 0.0);
        }
    }

    #[test]
    fn insert_is_deterministic_under_seed() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut cvs = CodingVectorSet::new(4);
            let mut graph = TopologyGraph::new(0, params(2)).unwrap();
            insert_class_cvs(&mut cvs, &mut graph, &[0, 1, 2], 0.1, &mut rng).unwrap();
            cvs
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn insert_rejects_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cvs = cvs_from(&[&[0.0, 0.0]]);
        let mut graph = TopologyGraph::new(1, params(2)).unwrap();
        assert!(matches!(
            insert_class_cvs(&mut cvs, &mut graph, &[0], 0.1, &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn frozen_vectors_ignore_gradient_steps() {
        let mut cvs = cvs_from(&[&[1.0, 2.0], &[3.0, 4.0]]);
        freeze_old_cvs(&mut cvs, &[0]).unwrap();
        freeze_old_cvs(&mut cvs, &[0]).unwrap(); // idempotent
        let before = cvs.vectors[0].clone();
        let mut grads = BTreeMap::new();
        grads.insert(0, vec![10.0, -10.0]);
        grads.insert(1, vec![1.0, 1.0]);
        for _ in 0..100 {
            cvs.apply_gradients(&grads, 0.1).unwrap();
        }
        assert_eq!(cvs.vectors[0], before);
        assert!(cvs.vectors[1] != vec![3.0, 4.0]);
    }

    #[test]
    fn frozen_vectors_still_gain_and_lose_edges() {
        let mut cvs = cvs_from(&[&[0.0, 0.0], &[1.0, 0.0], &[5.0, 5.0]]);
        freeze_old_cvs(&mut cvs, &[0]).unwrap();
        let mut graph = TopologyGraph::new(3, params(2)).unwrap();
        update_topology(&[0.1, 0.0], None, &cvs, &mut graph).unwrap();
        assert_eq!(graph.strength(0, 1), 1.0);
        graph.set_strength(0, 2, 0.06);
        update_topology(&[0.1, 0.0], None, &cvs, &mut graph).unwrap();
        assert_eq!(graph.strength(0, 2), 0.0);
    }

    #[test]
    fn freeze_rejects_unknown_id() {
        let mut cvs = cvs_from(&[&[0.0, 0.0]]);
        assert!(matches!(
            freeze_old_cvs(&mut cvs, &[7]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn export_lists_positive_edges_once() {
        let mut cvs = cvs_from(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        freeze_old_cvs(&mut cvs, &[1]).unwrap();
        let mut graph = TopologyGraph::new(3, params(2)).unwrap();
        graph.set_strength(0, 1, 0.25);
        let export = export_graph(&cvs, &graph);
        assert_eq!(export.nodes.len(), 3);
        assert!(export.nodes[1].frozen);
        assert_eq!(export.edges.len(), 1);
        assert_eq!((export.edges[0].i, export.edges[0].j), (0, 1));
        let json = serde_json::to_string(&export).unwrap();
        let back: GraphExport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, export);
    }
}
