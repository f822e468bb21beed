//! Labeled datasets, stratified splitting, the CIFAR-10 binary loader and the
//! synthetic Gaussian generator.

mod cifar;
mod split;
mod synthetic;

pub use cifar::{load_cifar10, load_cifar10_batch, CIFAR10_CLASSES, CIFAR10_RECORD_BYTES};
pub use split::{largest_remainder, split, split_indices, SplitSpec, Splits};
pub use synthetic::{generate_synthetic, read_sdst, write_sdst, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Borrowed view of one labeled example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<'a> {
    pub input: &'a [f32],
    pub label: u32,
}

/// Per-channel affine normalization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

/// An ordered collection of samples sharing one input shape.
///
/// Inputs are stored contiguously; `input(i)` is a slice of length
/// `sample_len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    shape: Vec<usize>,
    inputs: Vec<f32>,
    labels: Vec<u32>,
    class_names: Vec<String>,
    normalization: Option<Normalization>,
}

impl LabeledDataset {
    pub fn new(
        shape: Vec<usize>,
        inputs: Vec<f32>,
        labels: Vec<u32>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || len == 0 {
            return Err(Error::InvalidArgument(format!("bad sample shape {shape:?}")));
        }
        if inputs.len() != len * labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} input values for {} samples of shape {shape:?}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= class_names.len()) {
            return Err(Error::InvalidLabel {
                label: bad,
                reason: format!("dataset has {} classes", class_names.len()),
            });
        }
        Ok(Self {
            shape,
            inputs,
            labels,
            class_names,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_id(&self, name: &str) -> Option<u32> {
        self.class_names.iter().position(|n| n == name).map(|i| i as u32)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn input(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.inputs[i * n..(i + 1) * n]
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample {
            input: self.input(i),
            label: self.labels[i],
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample<'_>> + '_ {
        (0..self.len()).map(move |i| self.sample(i))
    }

    pub fn raw_inputs(&self) -> &[f32] {
        &self.inputs
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    /// Per-class sample counts, indexed by class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Sample indices of each class in ascending order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }

    /// New dataset holding the given samples in the given order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let n = self.sample_len();
        let mut inputs = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            shape: self.shape.clone(),
            inputs,
            labels,
            class_names: self.class_names.clone(),
            normalization: self.normalization.clone(),
        }
    }

    /// Stack the selected inputs into a `(batch, ..shape)` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.input(i));
        }
        let mut dims = vec![indices.len()];
        dims.extend_from_slice(&self.shape);
        Tensor::from_vec(dims, data).expect("batch dims match data")
    }

    fn channels(&self) -> usize {
        if self.shape.len() == 3 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Per-channel mean and standard deviation over every sample.
    pub fn fit_normalization(&self) -> Normalization {
        let c = self.channels();
        let per = self.sample_len() / c;
        let mut sum = vec![0f64; c];
        let mut sq = vec![0f64; c];
        for i in 0..self.len() {
            for (ch, plane) in self.input(i).chunks(per).enumerate() {
                for &v in plane {
                    sum[ch] += f64::from(v);
                    sq[ch] += f64::from(v) * f64::from(v);
                }
            }
        }
        let count = (self.len() * per).max(1) as f64;
        let mut mean = Vec::with_capacity(c);
        let mut std = Vec::with_capacity(c);
        for ch in 0..c {
            let m = sum[ch] / count;
            let var = (sq[ch] / count - m * m).max(0.0);
            mean.push(m as f32);
            std.push(if var > 1e-12 { var.sqrt() as f32 } else { 1.0 });
        }
        Normalization { mean, std }
    }

    /// Apply `norm` to every input and record it in the dataset header.
    pub fn normalize(&mut self, norm: &Normalization) -> Result<()> {
        let c = self.channels();
        if norm.mean.len() != c || norm.std.len() != c {
            return Err(Error::InvalidArgument(format!(
                "normalization has {} channels, dataset has {c}",
                norm.mean.len()
            )));
        }
        let per = self.sample_len() / c;
        for (j, v) in self.inputs.iter_mut().enumerate() {
            let ch = (j / per) % c;
            *v = (*v - norm.mean[ch]) / norm.std[ch];
        }
        self.normalization = Some(norm.clone());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledDataset {
        LabeledDataset::new(
            vec![2],
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            vec![0, 1, 0],
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn rejects_label_out_of_range() {
        let err = LabeledDataset::new(vec![1], vec![0.0], vec![2], vec!["a".into(), "b".into()]);
        assert!(matches!(err, Err(Error::InvalidLabel { label: 2, .. })));
    }

    #[test]
    fn subset_and_batch() {
        let ds = tiny();
        let sub = ds.subset(&[2, 0]);
        assert_eq!(sub.labels(), &[0, 0]);
        assert_eq!(sub.input(0), &[4.0, 5.0]);
        let b = ds.batch(&[1]);
        assert_eq!(b.dims(), &[1, 2]);
        assert_eq!(b.data(), &[2.0, 3.0]);
        assert_eq!(ds.class_counts(), vec![2, 1]);
        assert_eq!(ds.indices_by_class(), vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn normalization_centers_training_data() {
        let mut ds = tiny();
        let norm = ds.fit_normalization();
        ds.normalize(&norm).unwrap();
        let mean: f32 = ds.raw_inputs().iter().sum::<f32>() / 6.0;
        assert!(mean.abs() < 1e-6);
        assert_eq!(ds.normalization(), Some(&norm));
    }
}
