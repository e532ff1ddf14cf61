//! Class-incremental evaluation metrics: the accuracy matrix, pooled
//! average accuracy, average forgetting, and confusion matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower-triangular record of per-task accuracies: `acc(t, j)` is the
/// accuracy on task `j`'s test classes measured after training task `t`.
/// Per-task test-set sizes are kept alongside so pooled accuracies are
/// recomputable exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
    test_counts: Vec<usize>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        AccuracyMatrix {
            rows: Vec::new(),
            test_counts: Vec::new(),
        }
    }

    /// Appends the evaluation row after training task `t`; the row holds
    /// one accuracy per seen task. The first row also fixes the test-set
    /// size of each task via `test_count` for the newly arrived task.
    pub fn push_row(&mut self, row: Vec<f64>, new_task_test_count: usize) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::contract(format!(
                "row after task {} must have {} entries, got {}",
                self.rows.len(),
                self.rows.len() + 1,
                row.len()
            )));
        }
        if let Some(bad) = row.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::contract(format!("accuracy {bad} outside [0, 1]")));
        }
        if new_task_test_count == 0 {
            return Err(Error::contract("task with empty test set".to_string()));
        }
        self.rows.push(row);
        self.test_counts.push(new_task_test_count);
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn accuracy(&self, t: usize, j: usize) -> f64 {
        self.rows[t][j]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t]
    }

    pub fn test_count(&self, j: usize) -> usize {
        self.test_counts[j]
    }

    fn check_complete(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::contract("empty accuracy matrix".to_string()));
        }
        for (t, row) in self.rows.iter().enumerate() {
            if row.len() != t + 1 {
                return Err(Error::contract(format!(
                    "accuracy matrix row {t} has {} entries, expected {}",
                    row.len(),
                    t + 1
                )));
            }
        }
        if self.test_counts.len() != self.rows.len() {
            return Err(Error::contract(
                "test-count record does not match matrix".to_string(),
            ));
        }
        Ok(())
    }

    /// Accuracy over the pooled test set of every class seen by task `t`:
    /// per-task accuracies weighted by test-set size.
    pub fn pooled_accuracy(&self, t: usize) -> f64 {
        let total: usize = self.test_counts[..=t].iter().sum();
        self.rows[t]
            .iter()
            .zip(&self.test_counts)
            .map(|(a, c)| a * *c as f64)
            .sum::<f64>()
            / total as f64
    }

    /// Mean over tasks of the pooled accuracy, including the initial
    /// task.
    pub fn average_accuracy(&self) -> Result<f64> {
        self.check_complete()?;
        let t = self.rows.len();
        Ok((0..t).map(|i| self.pooled_accuracy(i)).sum::<f64>() / t as f64)
    }

    /// Forgetting at step `t`: for each earlier task `j < t`, the drop
    /// from its best accuracy so far to its accuracy now, averaged. Zero
    /// when `t = 0`.
    pub fn forgetting_at(&self, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        for j in 0..t {
            let peak = (j..t)
                .map(|s| self.rows[s][j])
                .fold(f64::NEG_INFINITY, f64::max);
            total += peak - self.rows[t][j];
        }
        total / t as f64
    }

    /// Average forgetting at the end of the final task. A single-task
    /// run has nothing to forget and reports 0.
    pub fn average_forgetting(&self) -> Result<f64> {
        self.check_complete()?;
        Ok(self.forgetting_at(self.rows.len() - 1))
    }
}

impl Default for AccuracyMatrix {
    fn default() -> Self {
        Self::new()
    }
}

/// Row = true class, column = predicted class.
pub fn confusion_matrix(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut matrix = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= num_classes || y >= num_classes {
            return Err(Error::contract(format!(
                "prediction {p} or label {y} outside 0..{num_classes}"
            )));
        }
        matrix[y][p] += 1;
    }
    Ok(matrix)
}
