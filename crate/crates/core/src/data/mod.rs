//! Datasets: synthetic mixtures, IDX ingestion and known/unknown partitioning.

pub mod idx;
pub mod partition;
pub mod synthetic;

use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use idx::{load_idx, IdxArray, IdxError};
pub use partition::{partition, PartitionSpec, Split, TRAIN_FRACTION};
pub use synthetic::gen_gaussian_mixture;

/// Feature rows with their original class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rank() != 2 || features.rows() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for features of shape {:?}",
                labels.len(),
                features.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: class_count,
            });
        }
        Ok(LabeledDataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Keeps the first `max_per_class` samples of every class, in file order.
    pub fn subset_per_class(&self, max_per_class: usize) -> LabeledDataset {
        let mut seen = vec![0usize; self.class_count];
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let y = self.labels[i];
                seen[y] += 1;
                seen[y] <= max_per_class
            })
            .collect();
        LabeledDataset {
            features: self.features.select_rows(&keep),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// CSV with one row per sample: `label,f0,f1,...`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let m = self.feature_dim();
        let header: Vec<String> = std::iter::once("label".to_string())
            .chain((0..m).map(|j| format!("f{j}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (i, y) in self.labels.iter().enumerate() {
            write!(out, "{y}")?;
            for v in self.features.row(i) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_validates() {
        assert!(LabeledDataset::new(Tensor::zeros(&[2, 3]), vec![0], 1).is_err());
        assert!(LabeledDataset::new(Tensor::zeros(&[1, 3]), vec![2], 2).is_err());
    }

    #[test]
    fn csv_export() {
        let ds = LabeledDataset::new(
            Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 3.25]]).unwrap(),
            vec![1, 0],
            2,
        )
        .unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "label,f0,f1\n1,0.5,-1\n0,2,3.25\n");
    }

    #[test]
    fn subset_keeps_file_order() {
        let ds = LabeledDataset::new(
            Tensor::new(vec![5, 1], vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![0, 1, 0, 0, 1],
            2,
        )
        .unwrap();
        let sub = ds.subset_per_class(1);
        assert_eq!(sub.labels, vec![0, 1]);
        assert_eq!(sub.features.data(), &[0.0, 1.0]);
    }
}
