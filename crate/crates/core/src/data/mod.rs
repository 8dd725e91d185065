//! Datasets, loaders, augmentation and checkpoints.

mod augment;
mod checkpoint;
mod cifar;
mod mnist;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

pub use augment::{augment, AugmentPolicy, ChannelStats};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MaskRecord, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use cifar::{load_cifar10, load_cifar100, parse_cifar_records, CIFAR_IMAGE_BYTES};
pub use mnist::{load_mnist, parse_idx_images, parse_idx_labels, to_lenet_input};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Images stored as bytes (`N×C×H×W`) with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<u8>,
    labels: Vec<usize>,
    shape: [usize; 3],
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        images: Vec<u8>,
        labels: Vec<usize>,
        shape: [usize; 3],
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let per = shape.iter().product::<usize>();
        if per == 0 {
            return Err(Error::Shape(format!("empty sample shape {shape:?}")));
        }
        if images.len() != labels.len() * per {
            return Err(Error::Shape(format!(
                "{} image bytes do not hold {} samples of shape {shape:?}",
                images.len(),
                labels.len()
            )));
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {y} at sample {i} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            shape,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.sample_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn raw_images(&self) -> &[u8] {
        &self.images
    }

    /// Samples `idx` as a float batch scaled to `[0, 1]`, plus their labels.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(idx.len() * n);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                )));
            }
            data.extend(self.image(i).iter().map(|&b| b as f32 / 255.0));
            labels.push(self.labels[i]);
        }
        let [c, h, w] = self.shape;
        Ok((Tensor::from_vec(&[idx.len(), c, h, w], data)?, labels))
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let n = self.sample_len();
        let mut images = Vec::with_capacity(idx.len() * n);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                )));
            }
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(images, labels, self.shape, self.num_classes, self.split)
    }

    /// First `n` samples (or all of them if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n * self.sample_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            shape: self.shape,
            num_classes: self.num_classes,
            split: self.split,
        }
    }
}

/// Indices of `⌊f·N⌋` samples drawn uniformly, distinct unless
/// `with_replacement` is set.
pub fn bootstrap_indices(n: usize, fraction: f64, seed: u64, with_replacement: bool) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subset fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let k = (fraction * n as f64).floor() as usize;
    let mut rng = seed::rng(seed);
    Ok(if with_replacement {
        (0..k).map(|_| rng.random_range(0..n)).collect()
    } else {
        index::sample(&mut rng, n, k).into_vec()
    })
}

pub fn bootstrap_subset(dataset: &Dataset, fraction: f64, seed: u64, with_replacement: bool) -> Result<Dataset> {
    dataset.subset(&bootstrap_indices(dataset.len(), fraction, seed, with_replacement)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Cifar10,
    Cifar100,
    Mnist,
}

impl DatasetKind {
    pub fn num_classes(self) -> usize {
        match self {
            DatasetKind::Cifar100 => 100,
            _ => 10,
        }
    }

    pub fn load(self, dir: &Path) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetKind::Cifar10 => load_cifar10(dir),
            DatasetKind::Cifar100 => load_cifar100(dir),
            DatasetKind::Mnist => load_mnist(dir),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
            DatasetKind::Mnist => "mnist",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "cifar10" => Ok(DatasetKind::Cifar10),
            "cifar100" => Ok(DatasetKind::Cifar100),
            "mnist" => Ok(DatasetKind::Mnist),
            _ => Err(Error::Config(format!(
                "unknown dataset '{s}' (expected cifar10, cifar100 or mnist)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn toy(n: usize) -> Dataset {
        let images = (0..n * 4).map(|i| (i % 251) as u8).collect();
        let labels = (0..n).map(|i| i % 3).collect();
        Dataset::new(images, labels, [1, 2, 2], 3, Split::Train).unwrap()
    }

    #[test]
    fn validates_construction() {
        assert!(Dataset::new(vec![0; 7], vec![0, 1], [1, 2, 2], 3, Split::Train).is_err());
        assert!(Dataset::new(vec![0; 8], vec![0, 3], [1, 2, 2], 3, Split::Train).is_err());
    }

    #[test]
    fn batch_scales_to_unit_range() {
        let d = Dataset::new(vec![0, 255, 51, 102], vec![1], [1, 2, 2], 2, Split::Test).unwrap();
        let (x, y) = d.batch(&[0]).unwrap();
        assert_eq!(x.shape(), &[1, 1, 2, 2]);
        assert_eq!(x.data(), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(y, vec![1]);
        assert!(d.batch(&[1]).is_err());
    }

    #[test]
    fn full_fraction_is_permutation() {
        let mut idx = bootstrap_indices(100, 1.0, 4, false).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn ninety_percent_of_fifty_thousand() {
        let idx = bootstrap_indices(50_000, 0.9, 1, false).unwrap();
        assert_eq!(idx.len(), 45_000);
        assert_eq!(idx.iter().collect::<HashSet<_>>().len(), 45_000);
    }

    #[test]
    fn seeds_give_different_subsets() {
        for s in 0..20u64 {
            let a = bootstrap_indices(1000, 0.9, 2 * s, false).unwrap();
            let b = bootstrap_indices(1000, 0.9, 2 * s + 1, false).unwrap();
            let sa: HashSet<_> = a.into_iter().collect();
            let sb: HashSet<_> = b.into_iter().collect();
            assert_ne!(sa, sb);
        }
        assert_eq!(
            bootstrap_indices(1000, 0.9, 7, false).unwrap(),
            bootstrap_indices(1000, 0.9, 7, false).unwrap()
        );
    }

    #[test]
    fn subset_copies_samples() {
        let d = toy(10);
        let s = bootstrap_subset(&d, 0.5, 3, false).unwrap();
        assert_eq!(s.len(), 5);
        let idx = bootstrap_indices(10, 0.5, 3, false).unwrap();
        for (j, &i) in idx.iter().enumerate() {
            assert_eq!(s.image(j), d.image(i));
            assert_eq!(s.labels()[j], d.labels()[i]);
        }
        assert!(bootstrap_indices(10, 0.0, 3, false).is_err());
        assert_eq!(bootstrap_indices(10, 0.9, 3, true).unwrap().len(), 9);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("CIFAR-10".parse::<DatasetKind>().unwrap(), DatasetKind::Cifar10);
        assert_eq!("mnist".parse::<DatasetKind>().unwrap().num_classes(), 10);
        assert!("svhn".parse::<DatasetKind>().is_err());
    }
}
