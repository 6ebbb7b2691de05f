//! Datasets, synthetic generation, splits and client partitions.

mod partition;
mod synthetic;
mod table;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

pub use partition::{
    assign_by_proportions, base_novel_split, dirichlet_partition, domain_partition, kshot_iid_partition, mean_label_entropy, PartitionPlan,
    PartitionScheme, SplitMode,
};
pub use synthetic::{apply_domain_shift, generate_synthetic_dataset, DomainTransform, SyntheticSpec};
pub use table::{load_feature_table, parse_feature_table, save_feature_table, write_feature_table};

use crate::error::{data, Error, Result};
use crate::numerics::Matrix;
use crate::rng::{self, tags};
use crate::vlm::{synth_local_features, Sample};

/// Labelled unit image features.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterDataset {
    features: Matrix,
    labels: Vec<usize>,
    classes: usize,
    domains: Option<Vec<String>>,
    local_maps: Option<Vec<Matrix>>,
    /// Index of each row in the dataset it was first built as.
    ids: Vec<usize>,
}

impl MasterDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize, domains: Option<Vec<String>>) -> Result<Self> {
        if features.rows() != labels.len() {
            return data(format!("{} feature rows for {} labels", features.rows(), labels.len()));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= classes) {
            return data(format!("label {bad} outside {classes} classes"));
        }
        if !features.is_finite() {
            return data("features contain non-finite values");
        }
        if domains.as_ref().is_some_and(|d| d.len() != labels.len()) {
            return data("domain tag count differs from sample count");
        }
        let ids = (0..labels.len()).collect();
        Ok(Self { features, labels, classes, domains, local_maps: None, ids })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn domains(&self) -> Option<&[String]> {
        self.domains.as_deref()
    }

    pub fn local_maps(&self) -> Option<&[Matrix]> {
        self.local_maps.as_deref()
    }

    /// Indices of each class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Attaches `regions` perturbed local features per sample, keyed by
    /// `(seed, sample index)`.
    pub fn with_local_maps(mut self, regions: usize, perturbation: f64, seed: u64) -> Result<Self> {
        let maps = (0..self.len())
            .map(|i| {
                let mut r = rng::stream(&[tags::LOCALS, seed, i as u64]);
                synth_local_features(self.features.row(i), regions, perturbation, &mut r)
            })
            .collect::<Result<Vec<_>>>()?;
        self.local_maps = Some(maps);
        Ok(self)
    }

    /// New dataset of the given rows (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Self {
        let d = self.dim();
        let mut values = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            values.extend_from_slice(self.features.row(i));
        }
        Self {
            features: Matrix::from_vec(indices.len(), d, values).expect("rows have the dataset width"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            domains: self.domains.as_ref().map(|t| indices.iter().map(|&i| t[i].clone()).collect()),
            local_maps: self.local_maps.as_ref().map(|m| indices.iter().map(|&i| m[i].clone()).collect()),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    /// Samples of `classes` only, relabelled to their position in `classes`.
    pub fn restrict_to_classes(&self, classes: &[usize]) -> Self {
        let mut position = vec![usize::MAX; self.classes];
        for (p, &c) in classes.iter().enumerate() {
            position[c] = p;
        }
        let keep: Vec<usize> = (0..self.len()).filter(|&i| position[self.labels[i]] != usize::MAX).collect();
        let mut out = self.subset(&keep);
        out.labels = out.labels.iter().map(|&l| position[l]).collect();
        out.classes = classes.len();
        out
    }

    /// Concatenates datasets sharing width and class count.
    pub fn concat(parts: &[MasterDataset]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return data("nothing to concatenate");
        };
        if parts.iter().any(|p| p.dim() != first.dim() || p.classes != first.classes) {
            return data("datasets differ in width or class count");
        }
        let tagged = parts.iter().all(|p| p.domains.is_some());
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut domains = Vec::new();
        for p in parts {
            values.extend_from_slice(p.features.as_slice());
            labels.extend_from_slice(&p.labels);
            if let Some(t) = &p.domains {
                domains.extend(t.iter().cloned());
            }
        }
        let features = Matrix::from_vec(labels.len(), first.dim(), values)?;
        Self::new(features, labels, first.classes, tagged.then_some(domains))
    }

    /// Replaces every domain tag.
    pub fn with_domain(mut self, tag: &str) -> Self {
        self.domains = Some(vec![tag.to_string(); self.len()]);
        self
    }

    /// Original index of each row.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Trainer views of `indices`; sample ids are original indices.
    pub fn samples_of(&self, indices: &[usize]) -> Vec<Sample<'_>> {
        indices
            .iter()
            .map(|&i| Sample {
                id: self.ids[i],
                feature: self.features.row(i),
                locals: self.local_maps.as_ref().map(|m| &m[i]),
                label: self.labels[i],
            })
            .collect()
    }

    pub fn samples(&self) -> Vec<Sample<'_>> {
        self.samples_of(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Mean unit feature of each class.
    pub fn class_means(&self) -> Result<Vec<Vec<f64>>> {
        let mut sums = vec![vec![0.0; self.dim()]; self.classes];
        let mut counts = vec![0usize; self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            crate::numerics::axpy(1.0, self.features.row(i), &mut sums[l]);
            counts[l] += 1;
        }
        sums.iter()
            .zip(&counts)
            .enumerate()
            .map(|(c, (s, n))| {
                if *n == 0 {
                    return data(format!("class {c} has no samples"));
                }
                crate::numerics::normalize(s).map(|(u, _)| u)
            })
            .collect()
    }
}

/// Train/validation/test parts of a master dataset.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: MasterDataset,
    pub val: MasterDataset,
    pub test: MasterDataset,
}

/// Stratified 70/10/20 split; each class is shuffled independently.
pub fn stratified_split<R: Rng + ?Sized>(ds: &MasterDataset, rng: &mut R) -> DataSplit {
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut idx in ds.class_indices() {
        idx.shuffle(rng);
        let n = idx.len();
        let n_train = (n * 7).div_ceil(10);
        let n_val = (n / 10).min(n - n_train);
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..n_train + n_val]);
        test.extend_from_slice(&idx[n_train + n_val..]);
    }
    DataSplit { train: ds.subset(&train), val: ds.subset(&val), test: ds.subset(&test) }
}

/// Exactly `per_class` uniformly drawn samples of every class.
pub fn balanced_subsample<R: Rng + ?Sized>(ds: &MasterDataset, per_class: usize, rng: &mut R) -> Result<MasterDataset> {
    let mut keep = Vec::with_capacity(per_class * ds.classes());
    for (c, idx) in ds.class_indices().into_iter().enumerate() {
        if idx.len() < per_class {
            return Err(Error::Data(format!("class {c} has {} samples, fewer than the {per_class} requested", idx.len())));
        }
        keep.extend(idx.choose_multiple(rng, per_class).copied());
    }
    Ok(ds.subset(&keep))
}
