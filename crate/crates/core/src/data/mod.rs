//! Dataset ingest, preprocessing, splitting and synthetic generation.

pub mod archive;
pub mod image;
pub mod split;
pub mod synth;

use std::path::Path;

pub use archive::{read_dataset_archive, write_dataset_archive};
pub use image::{load_image, normalize_pixels, resize_bilinear, to_rgb};
pub use split::{stratified_split, SplitIndices, DEFAULT_TEST_FRACTION};
pub use synth::generate_synthetic_dataset;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Labeled square images, `N×S×S×channels`, pixel values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    /// Where the samples came from: file paths, an archive or `synthetic:<seed>`.
    pub source: Vec<String>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, class_names: Vec<String>, source: Vec<String>) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != shape[2] {
            return Err(Error::shape("dataset", format!("expected N×S×S×C images, got {shape:?}")));
        }
        if labels.len() != shape[0] {
            return Err(Error::invalid(format!("{} labels for {} images", labels.len(), shape[0])));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::invalid(format!("label {l} outside 0..{}", class_names.len())));
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { images, labels, class_names, source })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn size(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[3]
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        self.labels.iter().for_each(|&l| counts[l] += 1);
        counts
    }

    /// Gathers the given samples into a `batch×S×S×C` tensor.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let per = self.images.len() / self.len();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("sample index {i} outside 0..{}", self.len())));
            }
            data.extend(self.images.data()[i * per..(i + 1) * per].iter().map(|&v| T::from_f64_lossy(v as f64)));
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Tensor::new(shape, data)
    }

    /// Reads `root/<class>/*.pgm|*.ppm`, classes in sorted directory order,
    /// each image resized to `size×size` and converted to RGB.
    pub fn from_directory(root: &Path, size: usize) -> Result<Self> {
        let mut classes: Vec<_> = std::fs::read_dir(root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        classes.sort();
        if classes.is_empty() {
            return Err(Error::invalid(format!("no class directories under {}", root.display())));
        }
        let (mut pixels, mut labels, mut source) = (Vec::new(), Vec::new(), Vec::new());
        for (label, class) in classes.iter().enumerate() {
            let mut files: Vec<_> = std::fs::read_dir(root.join(class))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .and_then(|x| x.to_str())
                        .is_some_and(|x| x.eq_ignore_ascii_case("pgm") || x.eq_ignore_ascii_case("ppm"))
                })
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::EmptyClass(label));
            }
            for f in files {
                let img = load_image(&f).map_err(|e| Error::invalid(format!("{}: {e}", f.display())))?;
                let img = to_rgb(resize_bilinear(&img, (size, size))?)?;
                pixels.extend_from_slice(img.data());
                labels.push(label);
                source.push(f.display().to_string());
            }
        }
        let n = labels.len();
        Self::new(Tensor::new(vec![n, size, size, 3], pixels)?, labels, classes, source)
    }
}
