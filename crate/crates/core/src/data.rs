//! Synthetic dataset generation and the class-incremental task schedule.
//!
//! The benchmark generator produces Gaussian-mixture streams at desk
//! scale: class means on a circle, at uniform random positions, or as
//! random square-grid templates (the grid mode exists to exercise
//! rotation augmentation). Generation is a pure function of the
//! `SyntheticSpec` and the seed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// One sample: a feature/input vector with its class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledVector {
    pub x: Vec<f64>,
    pub y: usize,
}

/// A full train/test dataset over contiguous class ids `0..num_classes`.
/// `grid_side` is set when every vector is a flattened square grid, which
/// is what rotation augmentation requires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub input_dim: usize,
    pub num_classes: usize,
    pub grid_side: Option<usize>,
    pub train: Vec<LabeledVector>,
    pub test: Vec<LabeledVector>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if let Some(side) = self.grid_side {
            if side * side != self.input_dim {
                return Err(Error::contract(format!(
                    "grid side {side} inconsistent with input dim {}",
                    self.input_dim
                )));
            }
        }
        for s in self.train.iter().chain(&self.test) {
            if s.x.len() != self.input_dim {
                return Err(Error::contract(format!(
                    "sample dim {} != dataset dim {}",
                    s.x.len(),
                    self.input_dim
                )));
            }
            if s.y >= self.num_classes {
                return Err(Error::contract(format!(
                    "label {} outside 0..{}",
                    s.y, self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn train_of<'a>(&'a self, classes: &[usize]) -> Vec<&'a LabeledVector> {
        self.train.iter().filter(|s| classes.contains(&s.y)).collect()
    }

    pub fn test_of<'a>(&'a self, classes: &[usize]) -> Vec<&'a LabeledVector> {
        self.test.iter().filter(|s| classes.contains(&s.y)).collect()
    }
}

/// The ordered class partition of a run: which classes arrive at which
/// task. Class sets are pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSchedule {
    tasks: Vec<Vec<usize>>,
}

impl TaskSchedule {
    pub fn new(tasks: Vec<Vec<usize>>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::contract("schedule needs at least one task".to_string()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (t, classes) in tasks.iter().enumerate() {
            if classes.is_empty() {
                return Err(Error::contract(format!("task {t} has no classes")));
            }
            for &c in classes {
                if !seen.insert(c) {
                    return Err(Error::contract(format!(
                        "class {c} appears in more than one task"
                    )));
                }
            }
        }
        Ok(TaskSchedule { tasks })
    }

    /// Partitions `0..num_classes` into `t` ordered tasks. With
    /// `first_task_classes = 0` the split is equal; otherwise the first
    /// task takes that many classes and the remainder splits equally.
    pub fn split_classes(num_classes: usize, t: usize, first_task_classes: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::config("tasks", "must be >= 1".to_string()));
        }
        let sizes: Vec<usize> = if first_task_classes == 0 {
            if num_classes % t != 0 {
                return Err(Error::config(
                    "tasks",
                    format!("{num_classes} classes do not divide into {t} equal tasks"),
                ));
            }
            vec![num_classes / t; t]
        } else {
            if first_task_classes >= num_classes && t > 1 {
                return Err(Error::config(
                    "first_task_classes",
                    format!(
                        "{first_task_classes} leaves no classes for the remaining {} tasks",
                        t - 1
                    ),
                ));
            }
            if t == 1 {
                if first_task_classes != num_classes {
                    return Err(Error::config(
                        "first_task_classes",
                        format!("must equal {num_classes} when tasks = 1"),
                    ));
                }
                vec![num_classes]
            } else {
                let rest = num_classes - first_task_classes;
                if rest % (t - 1) != 0 {
                    return Err(Error::config(
                        "first_task_classes",
                        format!(
                            "remaining {rest} classes do not divide into {} equal tasks",
                            t - 1
                        ),
                    ));
                }
                let mut sizes = vec![first_task_classes];
                sizes.extend(std::iter::repeat(rest / (t - 1)).take(t - 1));
                sizes
            }
        };
        let mut tasks = Vec::with_capacity(t);
        let mut next = 0;
        for size in sizes {
            tasks.push((next..next + size).collect());
            next += size;
        }
        TaskSchedule::new(tasks)
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn classes(&self, t: usize) -> &[usize] {
        &self.tasks[t]
    }

    /// All classes introduced up to and including task `t`.
    pub fn seen_classes(&self, t: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.tasks[..=t].iter().flatten().copied().collect();
        out.sort_unstable();
        out
    }

    /// Cumulative class count after task `t`.
    pub fn cumulative(&self, t: usize) -> usize {
        self.tasks[..=t].iter().map(|c| c.len()).sum()
    }

    pub fn total_classes(&self) -> usize {
        self.cumulative(self.tasks.len() - 1)
    }
}

/// Parameters of the synthetic Gaussian-mixture benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// "circle" (means on a circle of `radius`), "random" (means uniform
    /// in `[-scale, scale]^dim`), or "grid" (random `grid_side`² pixel
    /// templates; `dim` is ignored).
    pub layout: String,
    pub radius: f64,
    pub scale: f64,
    pub sigma: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub grid_side: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 10,
            dim: 2,
            layout: "circle".to_string(),
            radius: 5.0,
            scale: 5.0,
            sigma: 0.5,
            train_per_class: 200,
            test_per_class: 100,
            grid_side: 4,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("num_classes", "must be >= 1".to_string()));
        }
        match self.layout.as_str() {
            "circle" => {
                if self.dim < 2 {
                    return Err(Error::config(
                        "dim",
                        "circle layout needs at least 2 dimensions".to_string(),
                    ));
                }
                if self.radius <= 0.0 {
                    return Err(Error::config("radius", "must be > 0".to_string()));
                }
            }
            "random" => {
                if self.dim == 0 {
                    return Err(Error::config("dim", "must be >= 1".to_string()));
                }
                if self.scale <= 0.0 {
                    return Err(Error::config("scale", "must be > 0".to_string()));
                }
            }
            "grid" => {
                if self.grid_side == 0 {
                    return Err(Error::config("grid_side", "must be >= 1".to_string()));
                }
            }
            other => {
                return Err(Error::config(
                    "layout",
                    format!("unknown layout {other:?} (expected circle, random, or grid)"),
                ));
            }
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::config("sigma", "must be finite and >= 0".to_string()));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::config(
                "train_per_class",
                "train and test counts must be >= 1".to_string(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        if self.layout == "grid" {
            self.grid_side * self.grid_side
        } else {
            self.dim
        }
    }
}

/// Generates the synthetic stream: per-class means by the chosen layout,
/// then i.i.d. Gaussian samples around each mean, split into train and
/// test. Deterministic under `(spec, seed)`.
pub fn generate_synthetic_stream(
    spec: &SyntheticSpec,
    tasks: usize,
    first_task_classes: usize,
    seed: u64,
) -> Result<(Dataset, TaskSchedule)> {
    spec.validate()?;
    let schedule = TaskSchedule::split_classes(spec.num_classes, tasks, first_task_classes)?;
    let mut rng = derive_rng(seed, "data");
    let dim = spec.input_dim();

    let means: Vec<Vec<f64>> = match spec.layout.as_str() {
        "circle" => (0..spec.num_classes)
            .map(|i| {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / spec.num_classes as f64;
                let mut m = vec![0.0; dim];
                m[0] = spec.radius * angle.cos();
                m[1] = spec.radius * angle.sin();
                m
            })
            .collect(),
        "random" => (0..spec.num_classes)
            .map(|_| {
                (0..dim)
                    .map(|_| rng.random_range(-spec.scale..spec.scale))
                    .collect()
            })
            .collect(),
        "grid" => (0..spec.num_classes)
            .map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect(),
        _ => unreachable!("validated above"),
    };

    let noise = Normal::new(0.0, 1.0).map_err(|e| Error::Numeric(e.to_string()))?;
    let draw = |mean: &[f64], rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        mean.iter()
            .map(|m| m + spec.sigma * noise.sample(rng))
            .collect()
    };

    let mut train = Vec::with_capacity(spec.num_classes * spec.train_per_class);
    let mut test = Vec::with_capacity(spec.num_classes * spec.test_per_class);
    for (y, mean) in means.iter().enumerate() {
        for _ in 0..spec.train_per_class {
            train.push(LabeledVector {
                x: draw(mean, &mut rng),
                y,
            });
        }
        for _ in 0..spec.test_per_class {
            test.push(LabeledVector {
                x: draw(mean, &mut rng),
                y,
            });
        }
    }

    let dataset = Dataset {
        input_dim: dim,
        num_classes: spec.num_classes,
        grid_side: (spec.layout == "grid").then_some(spec.grid_side),
        train,
        test,
    };
    dataset.validate()?;
    Ok((dataset, schedule))
}
