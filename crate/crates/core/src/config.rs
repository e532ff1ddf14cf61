//! Run configuration: every hyperparameter of the method and the
//! experiment harness, with validated defaults.
//!
//! The struct deserializes from a key-value document (the CLI uses TOML);
//! unknown keys are rejected and every ranged parameter is checked before
//! a run starts.

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::LossWeights;
use crate::vq::TopologyParams;

/// Where the data comes from: the synthetic generator or an external
/// feature table (comma-separated, last column = label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Table(TableSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub path: String,
    /// Fraction of each class held out for testing.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.25
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticSpec::default())
    }
}

/// Full experiment configuration. All fields have defaults; the default
/// dataset is the 10-class 2-dimensional circle-of-Gaussians stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    /// Number of tasks T.
    pub tasks: usize,
    /// Classes in the first task; 0 means an equal split.
    pub first_task_classes: usize,
    /// Topology connectivity factor K (clamped to the class count at
    /// each task boundary).
    pub k: usize,
    /// Edge decay multiplier ε.
    pub epsilon: f64,
    /// Edge pruning threshold.
    pub e_min: f64,
    /// Neighbor-weight softmax sharpness β.
    pub beta: f64,
    /// Distance-softmax temperature τ.
    pub tau: f64,
    /// Weight of the prototype cross-entropy term.
    pub lambda1: f64,
    /// Weight of the distillation term.
    pub lambda2: f64,
    /// Learning rate of the feature extractor.
    pub lr_theta: f64,
    /// Learning rate of the coding vectors (and the baseline head).
    pub lr_cvs: f64,
    pub epochs_per_task: usize,
    pub batch_size: usize,
    /// Hidden layer widths of the extractor.
    pub hidden: Vec<usize>,
    /// Feature dimensionality n.
    pub feature_dim: usize,
    /// Rotation pseudo-class augmentation (requires grid data).
    pub rotation: bool,
    /// Augmented prototypes per old class per mini-batch.
    pub protos_per_class: usize,
    /// Clamp the mixing coefficient to [0, 1] instead of keeping the raw
    /// Gaussian draw.
    pub clip_alpha: bool,
    /// Noise scale of the Gaussian prototype-augmentation variant.
    pub gaussian_pa_sigma: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Scale of the Gaussian initialization of new coding vectors.
    pub cv_init_scale: f64,
    pub seed: u64,
    /// Force single-threaded fixed-order execution for bitwise
    /// reproducibility.
    pub deterministic: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSpec::default(),
            tasks: 5,
            first_task_classes: 0,
            k: 15,
            epsilon: 0.9,
            e_min: 0.05,
            beta: 1.0,
            tau: 2.0,
            lambda1: 0.3,
            lambda2: 1.0,
            lr_theta: 0.002,
            lr_cvs: 0.2,
            epochs_per_task: 20,
            batch_size: 32,
            hidden: vec![96, 96],
            feature_dim: 24,
            rotation: false,
            protos_per_class: 1,
            clip_alpha: false,
            gaussian_pa_sigma: 1.0,
            grad_clip: 0.0,
            cv_init_scale: 0.1,
            seed: 0,
            deterministic: true,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn topology_params(&self) -> TopologyParams {
        TopologyParams {
            k: self.k,
            epsilon: self.epsilon,
            e_min: self.e_min,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.topology_params().validate()?;
        self.loss_weights().validate()?;
        if self.tasks == 0 {
            return Err(Error::config("tasks", "must be >= 1".to_string()));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::config("beta", format!("must be > 0, got {}", self.beta)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::config("tau", format!("must be > 0, got {}", self.tau)));
        }
        for (key, lr) in [("lr_theta", self.lr_theta), ("lr_cvs", self.lr_cvs)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::config(key, format!("must be > 0, got {lr}")));
            }
        }
        if self.epochs_per_task == 0 {
            return Err(Error::config("epochs_per_task", "must be >= 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1".to_string()));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim", "must be >= 1".to_string()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden", "layer widths must be >= 1".to_string()));
        }
        if self.protos_per_class == 0 {
            return Err(Error::config("protos_per_class", "must be >= 1".to_string()));
        }
        if !(self.gaussian_pa_sigma.is_finite() && self.gaussian_pa_sigma >= 0.0) {
            return Err(Error::config(
                "gaussian_pa_sigma",
                "must be finite and >= 0".to_string(),
            ));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(Error::config(
                "grad_clip",
                "must be finite and >= 0 (0 disables)".to_string(),
            ));
        }
        if !(self.cv_init_scale.is_finite() && self.cv_init_scale > 0.0) {
            return Err(Error::config("cv_init_scale", "must be > 0".to_string()));
        }
        match &self.dataset {
            DatasetSpec::Synthetic(spec) => {
                spec.validate()?;
                if self.rotation && spec.layout != "grid" {
                    return Err(Error::config(
                        "rotation",
                        "rotation augmentation requires the grid layout".to_string(),
                    ));
                }
            }
            DatasetSpec::Table(t) => {
                if t.path.is_empty() {
                    return Err(Error::config("dataset.path", "must not be empty".to_string()));
                }
                if !(t.test_fraction > 0.0 && t.test_fraction < 1.0) {
                    return Err(Error::config(
                        "dataset.test_fraction",
                        format!("must lie in (0, 1), got {}", t.test_fraction),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pass_validation() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn defaults_describe_the_reference_stream() {
        let c = RunConfig::default();
        assert_eq!(c.tasks, 5);
        assert_eq!(c.k, 15);
        assert_eq!(c.feature_dim, 24);
        match &c.dataset {
            DatasetSpec::Synthetic(s) => {
                assert_eq!(s.num_classes, 10);
                assert_eq!(s.dim, 2);
                assert_eq!(s.layout, "circle");
                assert_eq!(s.train_per_class, 200);
                assert_eq!(s.test_per_class, 100);
            }
            _ => panic!("default dataset must be synthetic"),
        }
    }

    #[test]
    fn out_of_range_values_name_the_key() {
        let mut c = RunConfig::default();
        c.epsilon = 1.5;
        match c.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "epsilon"),
            other => panic!("expected config error, got {other:?}"),
        }
        let mut c = RunConfig::default();
        c.tau = 0.0;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "tau"));
        let mut c = RunConfig::default();
        c.k = 1;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "k"));
    }

    #[test]
    fn rotation_needs_grid_data() {
        let mut c = RunConfig::default();
        c.rotation = true;
        assert!(c.validate().is_err());
        if let DatasetSpec::Synthetic(ref mut s) = c.dataset {
            s.layout = "grid".to_string();
        }
        c.validate().unwrap();
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut c = RunConfig::default();
        c.seed = 1234;
        c.hidden = vec![32, 16, 8];
        c.dataset = DatasetSpec::Table(TableSpec {
            path: "features.csv".to_string(),
            test_fraction: 0.3,
        });
        let json = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }
}
