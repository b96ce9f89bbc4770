//! Dataset ingestion and preprocessing.

pub mod cifar;
pub mod idx;
pub mod preprocess;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cifar::load_cifar100_binary;
pub use idx::{load_idx, write_idx};
pub use preprocess::{preprocess, Geometry, NormStats, PreprocessPolicy, Processed};

use crate::error::{Error, Result};

/// Raw 8-bit images, `(N, H, W, C)` interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    name: String,
    pixels: Vec<u8>,
    height: usize,
    width: usize,
    channels: usize,
    labels: Vec<usize>,
    class_count: usize,
}

impl ImageSet {
    pub fn new(
        name: String,
        pixels: Vec<u8>,
        height: usize,
        width: usize,
        channels: usize,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        let per = height * width * channels;
        if per == 0 && !labels.is_empty() {
            return Err(Error::Config("images with a zero dimension".into()));
        }
        let n = pixels.len().checked_div(per).unwrap_or(0);
        if n * per != pixels.len() || n != labels.len() {
            return Err(Error::CountMismatch {
                images: n,
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelRange {
                label: bad,
                class_count,
            });
        }
        Ok(ImageSet {
            name,
            pixels,
            height,
            width,
            channels,
            labels,
            class_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let per = self.height * self.width * self.channels;
        &self.pixels[i * per..(i + 1) * per]
    }

    /// Swaps rows and columns of every image.
    pub fn transposed(mut self) -> Self {
        let (h, w, c) = (self.height, self.width, self.channels);
        let per = h * w * c;
        let mut out = vec![0u8; self.pixels.len()];
        for (src, dst) in self.pixels.chunks_exact(per).zip(out.chunks_exact_mut(per)) {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        dst[(x * h + y) * c + ch] = src[(y * w + x) * c + ch];
                    }
                }
            }
        }
        self.pixels = out;
        std::mem::swap(&mut self.height, &mut self.width);
        self
    }

    /// Relabels with `f` and sets a new class count.
    pub fn map_labels(mut self, class_count: usize, f: impl Fn(usize) -> usize) -> Result<Self> {
        for l in &mut self.labels {
            *l = f(*l);
            if *l >= class_count {
                return Err(Error::LabelRange { label: *l, class_count });
            }
        }
        self.class_count = class_count;
        Ok(self)
    }

    /// Keeps the first `per_class` samples of every class, in file order.
    pub fn take_per_class(&self, per_class: usize) -> ImageSet {
        let mut seen = vec![0usize; self.class_count];
        let per = self.height * self.width * self.channels;
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if seen[l] < per_class {
                seen[l] += 1;
                pixels.extend_from_slice(&self.pixels[i * per..(i + 1) * per]);
                labels.push(l);
            }
        }
        ImageSet {
            name: self.name.clone(),
            pixels,
            labels,
            ..*self
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// Datasets the harness knows how to find in a data directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetId {
    Mnist,
    FashionMnist,
    EmnistLetters,
    Cifar100,
}

impl DatasetId {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::FashionMnist => "fashion_mnist",
            DatasetId::EmnistLetters => "emnist_letters",
            DatasetId::Cifar100 => "cifar100",
        }
    }

    /// `(train, test)` file locations relative to the data directory.
    pub fn files(self, root: &Path) -> Vec<PathBuf> {
        let idx = |dir: &str, prefix: &str| {
            let d = root.join(dir);
            vec![
                d.join(format!("{prefix}train-images-idx3-ubyte")),
                d.join(format!("{prefix}train-labels-idx1-ubyte")),
                d.join(format!("{prefix}test-images-idx3-ubyte")),
                d.join(format!("{prefix}test-labels-idx1-ubyte")),
            ]
        };
        match self {
            DatasetId::Mnist | DatasetId::FashionMnist => {
                let dir = if self == DatasetId::Mnist { "mnist" } else { "fashion-mnist" };
                let d = root.join(dir);
                vec![
                    d.join("train-images-idx3-ubyte"),
                    d.join("train-labels-idx1-ubyte"),
                    d.join("t10k-images-idx3-ubyte"),
                    d.join("t10k-labels-idx1-ubyte"),
                ]
            }
            DatasetId::EmnistLetters => idx("emnist", "emnist-letters-"),
            DatasetId::Cifar100 => {
                let d = root.join("cifar-100-binary");
                vec![d.join("train.bin"), d.join("test.bin")]
            }
        }
    }

    pub fn is_available(self, root: &Path) -> bool {
        self.files(root).iter().all(|p| p.is_file())
    }

    /// Loads `(train, test)` from `root`.
    pub fn load(self, root: &Path) -> Result<(ImageSet, ImageSet)> {
        let f = self.files(root);
        let name = self.as_str();
        match self {
            DatasetId::Mnist | DatasetId::FashionMnist => Ok((
                load_idx(&f[0], &f[1])?.with_name(name),
                load_idx(&f[2], &f[3])?.with_name(name),
            )),
            // stored transposed with labels 1..=26
            DatasetId::EmnistLetters => {
                let fix = |s: ImageSet| s.transposed().with_name(name).map_labels(26, |l| l.saturating_sub(1));
                Ok((fix(load_idx(&f[0], &f[1])?)?, fix(load_idx(&f[2], &f[3])?)?))
            }
            DatasetId::Cifar100 => Ok((
                load_cifar100_binary(&f[0])?.with_name(name),
                load_cifar100_binary(&f[1])?.with_name(name),
            )),
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetId::Mnist),
            "fashion_mnist" | "fashion-mnist" => Ok(DatasetId::FashionMnist),
            "emnist_letters" | "emnist-letters" => Ok(DatasetId::EmnistLetters),
            "cifar100" | "cifar-100" => Ok(DatasetId::Cifar100),
            other => Err(Error::Config(format!("unknown dataset `{other}`"))),
        }
    }
}

/// Train and test splits preprocessed with the training split's statistics.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub name: String,
    pub class_count: usize,
    pub train: Processed,
    pub test: Processed,
}

impl PreparedDataset {
    pub fn new(train: &ImageSet, test: &ImageSet, policy: PreprocessPolicy) -> Result<Self> {
        if train.class_count() != test.class_count() {
            return Err(Error::Config(format!(
                "{}: train has {} classes, test has {}",
                train.name(),
                train.class_count(),
                test.class_count()
            )));
        }
        let train_p = preprocess(train, &policy)?;
        let test_p = preprocess(test, &policy.with_stats(train_p.stats))?;
        Ok(PreparedDataset {
            name: train.name().to_string(),
            class_count: train.class_count(),
            train: train_p,
            test: test_p,
        })
    }

    pub fn dim(&self) -> usize {
        self.train.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_swaps_axes() {
        let set = ImageSet::new("t".into(), vec![1, 2, 3, 4, 5, 6], 2, 3, 1, vec![0], 1).unwrap();
        let t = set.transposed();
        assert_eq!((t.height(), t.width()), (3, 2));
        assert_eq!(t.image(0), &[1, 4, 2, 5, 3, 6]);
    }

    #[test]
    fn label_range_checked() {
        assert!(matches!(
            ImageSet::new("x".into(), vec![0; 4], 2, 2, 1, vec![5], 3),
            Err(Error::LabelRange { label: 5, .. })
        ));
    }

    #[test]
    fn per_class_subset() {
        let set = ImageSet::new("x".into(), (0..6).collect(), 1, 1, 1, vec![0, 1, 0, 1, 0, 2], 3).unwrap();
        let s = set.take_per_class(1);
        assert_eq!(s.labels(), &[0, 1, 2]);
        assert_eq!(s.pixels(), &[0, 1, 5]);
        assert_eq!(set.class_histogram(), vec![3, 2, 1]);
    }
}
