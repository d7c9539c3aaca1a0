use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure_shape, Error, Result};
use crate::numerics::Matrix;
use crate::preprocess::GridSpec;

/// Aligned spectra with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    class_names: Vec<String>,
    axis: Option<GridSpec>,
}

/// Read access to the feature rows of a dataset. Protocols fetch features
/// only through [`SampleSource::gather`], which makes access auditable.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn input_len(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn labels(&self) -> &[usize];
    /// Feature rows for `indices`, in order.
    fn gather(&self, indices: &[usize]) -> Matrix;
}

impl LabeledDataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        class_names: Vec<String>,
        axis: Option<GridSpec>,
    ) -> Result<Self> {
        ensure_shape("label count", features.rows(), labels.len())?;
        let classes = class_names.len();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: classes,
            });
        }
        let counts = class_counts(&labels, classes);
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyDataset(format!(
                "class {:?} has no samples",
                class_names[c]
            )));
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset("no samples".into()));
        }
        if !features.is_finite() {
            return Err(Error::InvalidSpectrum("dataset contains non-finite values".into()));
        }
        if let Some(axis) = &axis {
            ensure_shape("grid points", axis.num_points, features.cols())?;
        }
        Ok(Self {
            features,
            labels,
            class_names,
            axis,
        })
    }

    /// Build from per-row label strings. Classes are indexed in sorted name order.
    pub fn from_named<S: AsRef<str>>(features: Matrix, names: &[S], axis: Option<GridSpec>) -> Result<Self> {
        let table: BTreeMap<&str, usize> = names.iter().map(|n| (n.as_ref(), 0)).collect();
        let class_names: Vec<String> = table.keys().map(|&k| String::from(k)).collect();
        let labels = names
            .iter()
            .map(|n| class_names.binary_search_by(|c| c.as_str().cmp(n.as_ref())).expect("present"))
            .collect();
        Self::new(features, labels, class_names, axis)
    }

    /// Map per-row label strings through an existing class table (e.g. the one
    /// stored in a checkpoint). Unknown names are an error.
    pub fn with_class_table<S: AsRef<str>>(
        features: Matrix,
        names: &[S],
        class_names: &[String],
        axis: Option<GridSpec>,
    ) -> Result<Self> {
        ensure_shape("label count", features.rows(), names.len())?;
        let labels = names
            .iter()
            .map(|n| {
                class_names
                    .iter()
                    .position(|c| c == n.as_ref())
                    .ok_or_else(|| Error::Config(format!("unknown class {:?}", n.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        ensure_shape("label count", features.rows(), labels.len())?;
        let classes = class_names.len();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, num_classes: classes });
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset("no samples".into()));
        }
        // evaluation sets may lack some classes, so no per-class presence check
        Ok(Self {
            features,
            labels,
            class_names: class_names.to_vec(),
            axis,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn axis(&self) -> Option<&GridSpec> {
        self.axis.as_ref()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.class_names.len())
    }

    /// Rows `indices` as a new dataset sharing this one's class table.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            axis: self.axis,
        }
    }
}

impl SampleSource for LabeledDataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn input_len(&self) -> usize {
        self.features.cols()
    }

    fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn gather(&self, indices: &[usize]) -> Matrix {
        self.features.select_rows(indices)
    }
}

pub fn class_counts(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredDataset {
    pub dataset: LabeledDataset,
    /// Dropped classes with their sample counts.
    pub dropped: Vec<(String, usize)>,
}

/// Keep only classes with at least `min_n` samples, relabeled contiguously in
/// their original order.
pub fn filter_min_class_size(dataset: &LabeledDataset, min_n: usize) -> Result<FilteredDataset> {
    if min_n == 0 {
        return Err(Error::Config("minimum class size must be at least 1".into()));
    }
    let counts = dataset.class_counts();
    let mut remap = vec![None; counts.len()];
    let mut kept_names = Vec::new();
    let mut dropped = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        if n >= min_n {
            remap[c] = Some(kept_names.len());
            kept_names.push(dataset.class_names[c].clone());
        } else {
            dropped.push((dataset.class_names[c].clone(), n));
        }
    }
    if kept_names.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no class has at least {min_n} samples"
        )));
    }
    let keep: Vec<usize> = (0..dataset.labels.len())
        .filter(|&i| remap[dataset.labels[i]].is_some())
        .collect();
    let labels = keep
        .iter()
        .map(|&i| remap[dataset.labels[i]].expect("kept"))
        .collect();
    let filtered = LabeledDataset::new(
        dataset.features.select_rows(&keep),
        labels,
        kept_names,
        dataset.axis,
    )?;
    Ok(FilteredDataset {
        dataset: filtered,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sized(sizes: &[usize]) -> LabeledDataset {
        let n: usize = sizes.iter().sum();
        let labels: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| core::iter::repeat(c).take(k))
            .collect();
        let names = (0..sizes.len()).map(|c| format!("class{c}")).collect();
        let features = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        LabeledDataset::new(features, labels, names, None).unwrap()
    }

    #[test]
    fn small_classes_are_dropped_and_relabeled() {
        let out = filter_min_class_size(&sized(&[12, 9, 40]), 10).unwrap();
        assert_eq!(out.dataset.num_classes(), 2);
        assert_eq!(out.dataset.class_names(), &["class0", "class2"]);
        assert_eq!(out.dataset.class_counts(), vec![12, 40]);
        assert_eq!(out.dropped, vec![("class1".into(), 9)]);
        // rows of the dropped class are gone, others keep their features
        assert_eq!(out.dataset.features()[(12, 0)], 21.0);
    }

    #[test]
    fn min_size_one_is_identity() {
        let d = sized(&[1, 3, 2]);
        let out = filter_min_class_size(&d, 1).unwrap();
        assert_eq!(out.dataset, d);
        assert!(out.dropped.is_empty());
    }

    #[test]
    fn filtering_everything_is_an_error() {
        assert!(filter_min_class_size(&sized(&[2, 3]), 4).is_err());
        assert!(filter_min_class_size(&sized(&[2, 3]), 0).is_err());
    }

    #[test]
    fn named_labels_are_sorted() {
        let f = Matrix::zeros(4, 2);
        let d = LabeledDataset::from_named(f.clone(), &["b", "a", "c", "a"], None).unwrap();
        assert_eq!(d.class_names(), &["a", "b", "c"]);
        assert_eq!(d.labels(), &[1, 0, 2, 0]);
        let table: Vec<String> = ["c", "a", "b"].map(String::from).to_vec();
        let e = LabeledDataset::with_class_table(f.clone(), &["b", "a", "c", "a"], &table, None).unwrap();
        assert_eq!(e.labels(), &[2, 1, 0, 1]);
        assert!(LabeledDataset::with_class_table(f, &["b", "a", "z", "a"], &table, None).is_err());
    }

    #[test]
    fn invariants_are_checked() {
        let f = Matrix::zeros(2, 1);
        assert!(LabeledDataset::new(f.clone(), vec![0, 2], vec!["a".into(), "b".into()], None).is_err());
        assert!(LabeledDataset::new(f.clone(), vec![0, 0], vec!["a".into(), "b".into()], None).is_err());
        assert!(LabeledDataset::new(f, vec![0], vec!["a".into()], None).is_err());
    }
}
