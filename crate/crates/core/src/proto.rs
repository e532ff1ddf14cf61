//! Class-mean prototypes and neighborhood-aware prototype augmentation.
//!
//! After a task finishes, the mean feature vector of every class trained
//! in it is stored once and never recomputed. During later tasks, old
//! classes are replayed through augmented prototypes: points sampled on
//! the line through the class mean and the mean of a randomly chosen
//! graph neighbor, `a_i = α·μ_i + (1−α)·μ_j` with `α ~ N(0.5, 1)`. The
//! prototypes feed the same two quantizer losses as real features, but
//! gradients stop at the coding vectors — a prototype is a sampled
//! constant, not an extractor output.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::add_scaled;
use crate::vq::{loss_dce, loss_na, CodingVectorSet, TopologyGraph};

/// Per-class mean feature vectors with the task index each mean was
/// captured at. Entries are write-once: a class mean is computed at the
/// end of the task that introduced the class and never refreshed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeStore {
    dim: usize,
    means: BTreeMap<usize, Vec<f64>>,
    captured_at_task: BTreeMap<usize, usize>,
}

impl PrototypeStore {
    pub fn new(dim: usize) -> Self {
        PrototypeStore {
            dim,
            means: BTreeMap::new(),
            captured_at_task: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn mean(&self, class_id: usize) -> Option<&[f64]> {
        self.means.get(&class_id).map(|v| v.as_slice())
    }

    pub fn captured_at(&self, class_id: usize) -> Option<usize> {
        self.captured_at_task.get(&class_id).copied()
    }

    pub fn class_ids(&self) -> Vec<usize> {
        self.means.keys().copied().collect()
    }

    /// Stores freshly computed means for a completed task. Re-inserting a
    /// class that already has a mean is a contract violation (means are
    /// write-once).
    pub fn insert_task_means(
        &mut self,
        means: BTreeMap<usize, Vec<f64>>,
        task: usize,
    ) -> Result<()> {
        for (&id, mean) in &means {
            if self.means.contains_key(&id) {
                return Err(Error::contract(format!(
                    "class {id} already has a stored mean; means are write-once"
                )));
            }
            if mean.len() != self.dim {
                return Err(Error::contract(format!(
                    "mean dim {} != store dim {} for class {id}",
                    mean.len(),
                    self.dim
                )));
            }
        }
        for (id, mean) in means {
            self.means.insert(id, mean);
            self.captured_at_task.insert(id, task);
        }
        Ok(())
    }
}

/// Arithmetic mean of the features of every id in `class_ids`, computed
/// with a running-mean update. A requested class with no samples is an
/// error.
pub fn compute_class_means(
    features: &[(Vec<f64>, usize)],
    class_ids: &[usize],
) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut means: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (z, y) in features {
        if !class_ids.contains(y) {
            continue;
        }
        let (mean, count) = means
            .entry(*y)
            .or_insert_with(|| (vec![0.0; z.len()], 0));
        if mean.len() != z.len() {
            return Err(Error::contract(format!(
                "inconsistent feature dims for class {y}"
            )));
        }
        *count += 1;
        let inv = 1.0 / *count as f64;
        for (m, x) in mean.iter_mut().zip(z) {
            *m += (x - *m) * inv;
        }
    }
    for &id in class_ids {
        if !means.contains_key(&id) {
            return Err(Error::MissingClass(id));
        }
    }
    Ok(means.into_iter().map(|(id, (m, _))| (id, m)).collect())
}

/// One Gaussian mixing-coefficient draw, mean 0.5 and standard deviation
/// 1, deliberately unclipped: coefficients outside `[0, 1]` extrapolate
/// past the class means and are kept.
pub fn sample_alpha(rng: &mut impl Rng) -> f64 {
    Normal::new(0.5, 1.0).unwrap().sample(rng)
}

/// A single augmented prototype: the mixed vector, the old-class label it
/// carries, the mixing coefficient, and the neighbor whose mean it was
/// mixed with (`None` when the class was isolated and the bare mean was
/// emitted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPrototype {
    pub vector: Vec<f64>,
    pub class_id: usize,
    pub alpha: f64,
    pub neighbor: Option<usize>,
}

/// A batch of augmented prototypes for the old classes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentedBatch {
    pub prototypes: Vec<AugmentedPrototype>,
}

impl AugmentedBatch {
    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }
}

/// `α·μ_i + (1−α)·μ_j`.
pub fn mix_means(mu_i: &[f64], mu_j: &[f64], alpha: f64) -> Vec<f64> {
    mu_i.iter()
        .zip(mu_j)
        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect()
}

/// Samples one augmented prototype for old class `i`: picks a graph
/// neighbor `j` uniformly among those with stored means, draws the mixing
/// coefficient, and mixes the two means. The result is always labeled
/// `i`. An isolated class falls back to its bare mean instead of failing.
pub fn augment_prototype(
    i: usize,
    store: &PrototypeStore,
    graph: &TopologyGraph,
    rng: &mut impl Rng,
    clip_alpha: bool,
) -> Result<AugmentedPrototype> {
    let mu_i = store.mean(i).ok_or(Error::MissingClass(i))?;
    let eligible: Vec<usize> = (0..graph.len())
        .filter(|&j| j != i && graph.strength(i, j) > 0.0 && store.mean(j).is_some())
        .collect();
    if eligible.is_empty() {
        return Ok(AugmentedPrototype {
            vector: mu_i.to_vec(),
            class_id: i,
            alpha: 1.0,
            neighbor: None,
        });
    }
    let j = eligible[rng.random_range(0..eligible.len())];
    let mut alpha = sample_alpha(rng);
    if clip_alpha {
        alpha = alpha.clamp(0.0, 1.0);
    }
    let mu_j = store.mean(j).expect("eligible neighbor has a mean");
    Ok(AugmentedPrototype {
        vector: mix_means(mu_i, mu_j, alpha),
        class_id: i,
        alpha,
        neighbor: Some(j),
    })
}

/// Builds `per_class` augmented prototypes for every old class, in the
/// given class order. A pure function of `(store, graph, rng state)`.
pub fn build_prototype_batch(
    old_class_ids: &[usize],
    store: &PrototypeStore,
    graph: &TopologyGraph,
    rng: &mut impl Rng,
    per_class: usize,
    clip_alpha: bool,
) -> Result<AugmentedBatch> {
    if per_class == 0 {
        return Err(Error::config("protos_per_class", "must be >= 1".to_string()));
    }
    let mut prototypes = Vec::with_capacity(old_class_ids.len() * per_class);
    for &i in old_class_ids {
        for _ in 0..per_class {
            prototypes.push(augment_prototype(i, store, graph, rng, clip_alpha)?);
        }
    }
    Ok(AugmentedBatch { prototypes })
}

/// A summed batch loss whose gradients touch only coding vectors: the
/// inputs are sampled constants, so nothing flows back to the extractor.
#[derive(Debug, Clone, Default)]
pub struct CvBatchLoss {
    pub loss: f64,
    pub grad_cvs: BTreeMap<usize, Vec<f64>>,
}

impl CvBatchLoss {
    fn accumulate(&mut self, loss: f64, grads: BTreeMap<usize, Vec<f64>>) {
        self.loss += loss;
        for (id, g) in grads {
            match self.grad_cvs.get_mut(&id) {
                Some(acc) => add_scaled(acc, &g, 1.0),
                None => {
                    self.grad_cvs.insert(id, g);
                }
            }
        }
    }
}

/// Distance cross-entropy summed over a prototype batch. An empty batch
/// contributes zero.
pub fn loss_hat_dce(
    batch: &AugmentedBatch,
    cvs: &CodingVectorSet,
    tau: f64,
) -> Result<CvBatchLoss> {
    let mut out = CvBatchLoss::default();
    for p in &batch.prototypes {
        let term = loss_dce(&p.vector, p.class_id, cvs, tau)?;
        out.accumulate(term.loss, term.grad_cvs);
    }
    Ok(out)
}

/// Neighborhood-adaptation hinge summed over a prototype batch. An empty
/// batch contributes zero.
pub fn loss_hat_na(
    batch: &AugmentedBatch,
    cvs: &CodingVectorSet,
    graph: &TopologyGraph,
    beta: f64,
) -> Result<CvBatchLoss> {
    let mut out = CvBatchLoss::default();
    for p in &batch.prototypes {
        let term = loss_na(&p.vector, p.class_id, cvs, graph, beta)?;
        out.accumulate(term.loss, term.grad_cvs);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use crate::vq::TopologyParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(means: &[(usize, &[f64])]) -> PrototypeStore {
        let mut store = PrototypeStore::new(means[0].1.len());
        let map: BTreeMap<usize, Vec<f64>> =
            means.iter().map(|(id, v)| (*id, v.to_vec())).collect();
        store.insert_task_means(map, 0).unwrap();
        store
    }

    fn graph_with_edges(len: usize, edges: &[(usize, usize)]) -> TopologyGraph {
        let mut graph = TopologyGraph::new(len, TopologyParams::default()).unwrap();
        for &(i, j) in edges {
            graph.set_strength(i, j, 1.0);
        }
        graph
    }

    #[test]
    fn mean_of_two_points() {
        let feats = vec![(vec![0.0, 0.0], 3), (vec![2.0, 2.0], 3)];
        let means = compute_class_means(&feats, &[3]).unwrap();
        assert_eq!(means[&3], vec![1.0, 1.0]);
    }

    #[test]
    fn mean_of_single_sample_is_the_sample() {
        let feats = vec![(vec![0.25, -7.5], 0)];
        let means = compute_class_means(&feats, &[0]).unwrap();
        assert_eq!(means[&0], vec![0.25, -7.5]);
    }

    #[test]
    fn mean_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut feats = Vec::new();
        for _ in 0..1000 {
            let y = rng.random_range(0..4usize);
            let z: Vec<f64> = (0..6).map(|_| rng.random_range(-10.0..10.0)).collect();
            feats.push((z, y));
        }
        let means = compute_class_means(&feats, &[0, 1, 2, 3]).unwrap();
        for y in 0..4 {
            let rows: Vec<&Vec<f64>> =
                feats.iter().filter(|(_, c)| *c == y).map(|(z, _)| z).collect();
            let mut oracle = vec![0.0; 6];
            for row in &rows {
                for (o, x) in oracle.iter_mut().zip(row.iter()) {
                    *o += x;
                }
            }
            for o in &mut oracle {
                *o /= rows.len() as f64;
            }
            for (a, b) in means[&y].iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_class_is_an_error() {
        let feats = vec![(vec![1.0], 0)];
        assert!(matches!(
            compute_class_means(&feats, &[0, 1]),
            Err(Error::MissingClass(1))
        ));
    }

    #[test]
    fn alpha_statistics_match_declared_distribution() {
        let mut rng = derive_rng(99, "alpha-stats");
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_alpha(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((0.48..=0.52).contains(&mean), "mean {mean}");
        assert!((0.98..=1.02).contains(&var.sqrt()), "std {}", var.sqrt());
    }

    #[test]
    fn alpha_sequence_is_deterministic() {
        let a: Vec<f64> = {
            let mut rng = derive_rng(3, "alpha");
            (0..16).map(|_| sample_alpha(&mut rng)).collect()
        };
        let b: Vec<f64> = {
            let mut rng = derive_rng(3, "alpha");
            (0..16).map(|_| sample_alpha(&mut rng)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn mixing_endpoints_and_midpoint() {
        let mu_i = [1.0, -2.0];
        let mu_j = [5.0, 6.0];
        assert_eq!(mix_means(&mu_i, &mu_j, 1.0), vec![1.0, -2.0]);
        assert_eq!(mix_means(&mu_i, &mu_j, 0.0), vec![5.0, 6.0]);
        assert_eq!(mix_means(&[0.0, 0.0], &[2.0, 4.0], 0.5), vec![1.0, 2.0]);
    }

    #[test]
    fn isolated_class_falls_back_to_its_mean() {
        let store = store_with(&[(0, &[3.0, 3.0]), (1, &[9.0, 9.0])]);
        let graph = TopologyGraph::new(2, TopologyParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = augment_prototype(0, &store, &graph, &mut rng, false).unwrap();
        assert_eq!(p.vector, vec![3.0, 3.0]);
        assert_eq!(p.class_id, 0);
        assert_eq!(p.neighbor, None);
        assert_eq!(p.alpha, 1.0);
    }

    #[test]
    fn neighbor_is_always_a_positive_edge() {
        let store = store_with(&[(0, &[0.0, 0.0]), (1, &[1.0, 0.0]), (2, &[0.0, 1.0])]);
        let graph = graph_with_edges(3, &[(0, 2)]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..32 {
            let p = augment_prototype(0, &store, &graph, &mut rng, false).unwrap();
            assert_eq!(p.neighbor, Some(2));
            assert_eq!(p.class_id, 0);
        }
    }

    #[test]
    fn missing_mean_is_an_error() {
        let store = store_with(&[(0, &[0.0, 0.0])]);
        let graph = TopologyGraph::new(2, TopologyParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            augment_prototype(1, &store, &graph, &mut rng, false),
            Err(Error::MissingClass(1))
        ));
    }

    #[test]
    fn batch_has_one_prototype_per_old_class() {
        let store = store_with(&[(0, &[0.0, 0.0]), (1, &[1.0, 0.0]), (2, &[0.0, 1.0])]);
        let graph = graph_with_edges(3, &[(0, 1), (1, 2), (0, 2)]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch =
            build_prototype_batch(&[0, 1, 2], &store, &graph, &mut rng, 1, false).unwrap();
        assert_eq!(batch.len(), 3);
        let labels: Vec<usize> = batch.prototypes.iter().map(|p| p.class_id).collect();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn empty_old_class_set_gives_empty_batch() {
        let store = store_with(&[(0, &[0.0, 0.0])]);
        let graph = TopologyGraph::new(1, TopologyParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = build_prototype_batch(&[], &store, &graph, &mut rng, 1, false).unwrap();
        assert!(batch.is_empty());
    }

    #[test]
    fn prototypes_lie_on_the_mean_to_mean_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 5;
        let ids: Vec<usize> = (0..10).collect();
        let means: Vec<(usize, Vec<f64>)> = ids
            .iter()
            .map(|&i| (i, (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect()))
            .collect();
        let mut store = PrototypeStore::new(dim);
        store
            .insert_task_means(means.iter().cloned().collect(), 0)
            .unwrap();
        let edges: Vec<(usize, usize)> = (0..10).map(|i| (i, (i + 1) % 10)).collect();
        let graph = graph_with_edges(10, &edges);
        let batch = build_prototype_batch(&ids, &store, &graph, &mut rng, 4, false).unwrap();
        assert_eq!(batch.len(), 40);
        for p in &batch.prototypes {
            let j = p.neighbor.expect("every class has neighbors here");
            let mu_i = store.mean(p.class_id).unwrap();
            let mu_j = store.mean(j).unwrap();
            // Projection residual onto the line through mu_i and mu_j,
            // independent of the recorded alpha.
            let dir: Vec<f64> = mu_j.iter().zip(mu_i).map(|(b, a)| b - a).collect();
            let rel: Vec<f64> = p.vector.iter().zip(mu_i).map(|(v, a)| v - a).collect();
            let t = crate::vecmath::dot(&rel, &dir) / crate::vecmath::dot(&dir, &dir);
            let residual: f64 = rel
                .iter()
                .zip(&dir)
                .map(|(r, d)| (r - t * d).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(residual < 1e-10, "off-line residual {residual}");
            // And the recorded alpha reconstructs the point exactly.
            let rebuilt = mix_means(mu_i, mu_j, p.alpha);
            for (a, b) in rebuilt.iter().zip(&p.vector) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_is_deterministic_under_seed() {
        let store = store_with(&[(0, &[0.0, 0.0]), (1, &[1.0, 0.0]), (2, &[0.0, 1.0])]);
        let graph = graph_with_edges(3, &[(0, 1), (1, 2), (0, 2)]);
        let build = || {
            let mut rng = derive_rng(17, "proto");
            build_prototype_batch(&[0, 1, 2], &store, &graph, &mut rng, 3, false).unwrap()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn clipping_keeps_alpha_in_unit_interval() {
        let store = store_with(&[(0, &[0.0, 0.0]), (1, &[1.0, 0.0])]);
        let graph = graph_with_edges(2, &[(0, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch =
            build_prototype_batch(&[0, 1], &store, &graph, &mut rng, 200, true).unwrap();
        assert!(batch
            .prototypes
            .iter()
            .all(|p| (0.0..=1.0).contains(&p.alpha)));
        // Unclipped sampling does stray outside [0, 1] with sd 1.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let wild = build_prototype_batch(&[0, 1], &store, &graph, &mut rng, 200, false).unwrap();
        assert!(wild
            .prototypes
            .iter()
            .any(|p| !(0.0..=1.0).contains(&p.alpha)));
    }

    #[test]
    fn zero_per_class_is_rejected() {
        let store = store_with(&[(0, &[0.0, 0.0])]);
        let graph = TopologyGraph::new(1, TopologyParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            build_prototype_batch(&[0], &store, &graph, &mut rng, 0, false),
            Err(Error::Config { .. })
        ));
    }

    fn demo_cvs() -> CodingVectorSet {
        let mut cvs = CodingVectorSet::new(2);
        let mut graph = TopologyGraph::new(0, TopologyParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        crate::vq::insert_class_cvs(&mut cvs, &mut graph, &[0, 1, 2], 0.1, &mut rng).unwrap();
        cvs
    }

    #[test]
    fn hat_dce_confident_and_empty_cases() {
        // Prototype sits exactly on its CV with the other CV far away.
        let mut spread = CodingVectorSet::new(2);
        let mut g = TopologyGraph::new(0, TopologyParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        crate::vq::insert_class_cvs(&mut spread, &mut g, &[0, 1], 0.1, &mut rng).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert(1, vec![-500.0, -500.0]);
        spread.apply_gradients(&grads, 0.1).unwrap();
        let confident = AugmentedBatch {
            prototypes: vec![AugmentedPrototype {
                vector: spread.vector(0).unwrap().to_vec(),
                class_id: 0,
                alpha: 1.0,
                neighbor: None,
            }],
        };
        assert!(loss_hat_dce(&confident, &spread, 0.1).unwrap().loss < 1e-6);

        let empty = AugmentedBatch::default();
        let out = loss_hat_dce(&empty, &demo_cvs(), 0.1).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_cvs.is_empty());
    }

    #[test]
    fn hat_losses_match_per_prototype_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dim = 3;
        let mut cvs = CodingVectorSet::new(dim);
        let mut graph = TopologyGraph::new(0, TopologyParams::default()).unwrap();
        crate::vq::insert_class_cvs(&mut cvs, &mut graph, &[0, 1, 2, 3], 1.0, &mut rng).unwrap();
        let graph = graph_with_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let batch = AugmentedBatch {
            prototypes: (0..12)
                .map(|k| AugmentedPrototype {
                    vector: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    class_id: k % 4,
                    alpha: 0.5,
                    neighbor: None,
                })
                .collect(),
        };

        let dce = loss_hat_dce(&batch, &cvs, 0.4).unwrap();
        let mut dce_sum = 0.0;
        for p in &batch.prototypes {
            dce_sum += loss_dce(&p.vector, p.class_id, &cvs, 0.4).unwrap().loss;
        }
        assert_eq!(dce.loss, dce_sum);

        let na = loss_hat_na(&batch, &cvs, &graph, 1.0).unwrap();
        let mut na_sum = 0.0;
        let mut na_grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for p in &batch.prototypes {
            let term = loss_na(&p.vector, p.class_id, &cvs, &graph, 1.0).unwrap();
            na_sum += term.loss;
            for (id, g) in term.grad_cvs {
                match na_grads.get_mut(&id) {
                    Some(acc) => add_scaled(acc, &g, 1.0),
                    None => {
                        na_grads.insert(id, g);
                    }
                }
            }
        }
        assert_eq!(na.loss, na_sum);
        assert_eq!(na.grad_cvs, na_grads);
    }

    #[test]
    fn hat_na_is_zero_without_neighbors() {
        let cvs = demo_cvs();
        let graph = TopologyGraph::new(3, TopologyParams::default()).unwrap();
        let batch = AugmentedBatch {
            prototypes: vec![AugmentedPrototype {
                vector: vec![5.0, 5.0],
                class_id: 0,
                alpha: 1.0,
                neighbor: None,
            }],
        };
        let out = loss_hat_na(&batch, &cvs, &graph, 1.0).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_cvs.is_empty());
    }

    #[test]
    fn store_round_trips_through_json_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut store = PrototypeStore::new(4);
        let means: BTreeMap<usize, Vec<f64>> = (0..5)
            .map(|i| {
                (
                    i,
                    (0..4)
                        .map(|_| rng.random_range(-1.0..1.0f64) * 1e3 / 3.0)
                        .collect(),
                )
            })
            .collect();
        store.insert_task_means(means, 2).unwrap();
        let json = serde_json::to_string(&store).unwrap();
        let back: PrototypeStore = serde_json::from_str(&json).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.captured_at(3), Some(2));
    }

    #[test]
    fn means_are_write_once() {
        let mut store = PrototypeStore::new(2);
        let mut first = BTreeMap::new();
        first.insert(0usize, vec![1.0, 1.0]);
        store.insert_task_means(first.clone(), 0).unwrap();
        assert!(matches!(
            store.insert_task_means(first, 1),
            Err(Error::Contract(_))
        ));
    }
}
