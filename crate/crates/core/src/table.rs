//! Ingestion of externally extracted feature tables.
//!
//! Format: comma-separated text with a header row; every column but the
//! last is a real-valued feature, the last is an integer class label.
//! Labels are remapped to a contiguous 0-based id space (ascending
//! original order) and the mapping is kept for reporting.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledVector};
use crate::error::{Error, Result};
use crate::ioutil;
use crate::rng::derive_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub feature_names: Vec<String>,
    pub label_name: String,
    /// Rows with remapped contiguous labels.
    pub rows: Vec<LabeledVector>,
    /// `label_mapping[new_id]` = original label value.
    pub label_mapping: Vec<i64>,
}

impl FeatureTable {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.label_mapping.len()
    }

    /// Parses table text. `origin` only labels error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.into(),
            line: Some(line),
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| err(1, "empty file".to_string()))?;
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        if columns.len() < 2 {
            return Err(err(
                1,
                "need at least one feature column and the label column".to_string(),
            ));
        }
        let feature_names: Vec<String> =
            columns[..columns.len() - 1].iter().map(|s| s.to_string()).collect();
        let label_name = columns[columns.len() - 1].to_string();

        let mut raw_rows: Vec<(Vec<f64>, i64)> = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != columns.len() {
                return Err(err(
                    idx + 1,
                    format!("expected {} fields, found {}", columns.len(), fields.len()),
                ));
            }
            let mut features = Vec::with_capacity(fields.len() - 1);
            for (c, field) in fields[..fields.len() - 1].iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    err(
                        idx + 1,
                        format!("column {:?}: {field:?} is not a number", feature_names[c]),
                    )
                })?;
                if !v.is_finite() {
                    return Err(err(idx + 1, format!("non-finite feature {field:?}")));
                }
                features.push(v);
            }
            let label: i64 = fields[fields.len() - 1].parse().map_err(|_| {
                err(
                    idx + 1,
                    format!("label {:?} is not an integer", fields[fields.len() - 1]),
                )
            })?;
            raw_rows.push((features, label));
        }
        if raw_rows.is_empty() {
            return Err(err(1, "table has no data rows".to_string()));
        }

        let mut label_mapping: Vec<i64> = raw_rows.iter().map(|(_, l)| *l).collect();
        label_mapping.sort_unstable();
        label_mapping.dedup();
        let rows = raw_rows
            .into_iter()
            .map(|(x, l)| LabeledVector {
                x,
                y: label_mapping.binary_search(&l).expect("label collected above"),
            })
            .collect();
        Ok(FeatureTable {
            feature_names,
            label_name,
            rows,
            label_mapping,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = ioutil::read_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Serializes back to table text with the original label values and
    /// shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.feature_names.join(","));
        out.push(',');
        out.push_str(&self.label_name);
        out.push('\n');
        for row in &self.rows {
            for v in &row.x {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{}\n", self.label_mapping[row.y]));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ioutil::write_string(path, &self.to_csv())
    }

    /// Splits into a train/test dataset: per class, a seeded shuffle
    /// followed by a fractional holdout (at least one test and one train
    /// sample per class).
    pub fn into_dataset(self, test_fraction: f64, seed: u64) -> Result<Dataset> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::config(
                "test_fraction",
                format!("must lie in (0, 1), got {test_fraction}"),
            ));
        }
        let dim = self.dim();
        let num_classes = self.num_classes();
        let mut rng = derive_rng(seed, "table-split");
        let mut train = Vec::new();
        let mut test = Vec::new();
        for y in 0..num_classes {
            let mut members: Vec<&LabeledVector> =
                self.rows.iter().filter(|r| r.y == y).collect();
            if members.len() < 2 {
                return Err(Error::contract(format!(
                    "class {} (original label {}) needs at least 2 samples to split",
                    y, self.label_mapping[y]
                )));
            }
            members.shuffle(&mut rng);
            let n_test = ((members.len() as f64 * test_fraction).round() as usize)
                .clamp(1, members.len() - 1);
            for (i, m) in members.into_iter().enumerate() {
                if i < n_test {
                    test.push((*m).clone());
                } else {
                    train.push((*m).clone());
                }
            }
        }
        let dataset = Dataset {
            input_dim: dim,
            num_classes,
            grid_side: None,
            train,
            test,
        };
        dataset.validate()?;
        Ok(dataset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_shape_and_values() {
        let text = "f0,f1,label\n1.5,2.5,0\n-3.0,0.25,1\n0,0,0\n";
        let t = FeatureTable::parse(text, "inline").unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[0].x, vec![1.5, 2.5]);
        assert_eq!(t.label_name, "label");
    }

    #[test]
    fn labels_remap_to_contiguous_ids() {
        let text = "a,label\n1,9\n2,5\n3,9\n";
        let t = FeatureTable::parse(text, "inline").unwrap();
        assert_eq!(t.label_mapping, vec![5, 9]);
        let ys: Vec<usize> = t.rows.iter().map(|r| r.y).collect();
        assert_eq!(ys, vec![1, 0, 1]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let ragged = "a,b,label\n1,2,0\n1,2\n";
        match FeatureTable::parse(ragged, "inline") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, Some(3)),
            other => panic!("expected parse error, got {other:?}"),
        }
        let non_numeric = "a,label\nx,0\n";
        match FeatureTable::parse(non_numeric, "inline") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, Some(2)),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            FeatureTable::parse("", "inline"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            FeatureTable::parse("a,label\n", "inline"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let text = "f0,f1,label\n0.1,0.30000000000000004,7\n-1e-300,5.5,3\n";
        let t = FeatureTable::parse(text, "inline").unwrap();
        let again = FeatureTable::parse(&t.to_csv(), "inline").unwrap();
        assert_eq!(again, t);
        // And the written doubles are bit-exact.
        assert_eq!(again.rows[0].x[1], 0.30000000000000004);
    }

    #[test]
    fn split_respects_fraction_and_determinism() {
        let mut text = String::from("a,b,label\n");
        for i in 0..20 {
            text.push_str(&format!("{}.5,{},{}\n", i, i * 2, i % 2));
        }
        let t = FeatureTable::parse(&text, "inline").unwrap();
        let d1 = t.clone().into_dataset(0.3, 5).unwrap();
        let d2 = t.clone().into_dataset(0.3, 5).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1.train.len() + d1.test.len(), 20);
        assert_eq!(d1.test.iter().filter(|s| s.y == 0).count(), 3);
        let tiny = FeatureTable::parse("a,label\n1,0\n", "inline").unwrap();
        assert!(tiny.into_dataset(0.5, 0).is_err());
    }
}
