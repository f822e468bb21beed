use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{streams, DetRng, RngState};

const SDST_MAGIC: &[u8; 4] = b"SDST";
const SDST_VERSION: u32 = 1;

/// Parameters of a synthetic Gaussian-blob classification dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub classes: usize,
    pub shape: Vec<usize>,
    pub separation: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<LabeledDataset> {
        generate_synthetic(self.n_per_class, self.classes, &self.shape, self.separation, self.seed)
    }
}

fn class_means(rng: &mut DetRng, classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let scale = separation / std::f64::consts::SQRT_2;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        if basis.len() < dim {
            // Gram-Schmidt against earlier directions: pairwise distance is exact
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    basis
        .into_iter()
        .map(|v| v.into_iter().map(|x| x * scale).collect())
        .collect()
}

/// Draw `n_per_class` samples for each of `classes` isotropic unit-variance
/// Gaussians. When the input dimension is at least `classes`, class centres
/// are mutually orthogonal and exactly `separation` apart; otherwise they are
/// random directions of the same radius. Samples are ordered class-major.
pub fn generate_synthetic(
    n_per_class: usize,
    classes: usize,
    shape: &[usize],
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
    }
    if n_per_class < 1 {
        return Err(Error::InvalidArgument("n_per_class must be at least 1".into()));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(Error::InvalidArgument(format!("separation must be >= 0, got {separation}")));
    }
    let dim: usize = shape.iter().product();
    if shape.is_empty() || dim == 0 {
        return Err(Error::InvalidArgument(format!("bad sample shape {shape:?}")));
    }
    let mut rng = RngState::new(seed).derive(streams::SYNTHETIC).rng();
    let means = class_means(&mut rng, classes, dim, separation);
    let mut inputs = Vec::with_capacity(n_per_class * classes * dim);
    let mut labels = Vec::with_capacity(n_per_class * classes);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            inputs.extend(mean.iter().map(|m| (m + rng.normal()) as f32));
            labels.push(c as u32);
        }
    }
    let names = (0..classes).map(|c| format!("class_{c}")).collect();
    LabeledDataset::new(shape.to_vec(), inputs, labels, names)
}

/// Serialize a dataset in the single-file `SDST` layout.
pub fn write_sdst(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(17 + ds.len() * (4 + 4 * ds.sample_len()));
    out.extend_from_slice(SDST_MAGIC);
    out.extend_from_slice(&SDST_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.num_classes() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    out.push(ds.shape().len() as u8);
    for &d in ds.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in ds.samples() {
        out.extend_from_slice(&s.label.to_le_bytes());
        for v in s.input {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                offset: self.pos as u64,
                reason: format!("unexpected end of file (need {n} bytes)"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Read a dataset written by [`write_sdst`].
pub fn read_sdst(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut cur = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(4)? != SDST_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: "bad magic".into(),
        });
    }
    let version = cur.u32()?;
    if version != SDST_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: SDST_VERSION,
        });
    }
    let classes = cur.u32()? as usize;
    let n = cur.u32()? as usize;
    let rank = cur.take(1)?[0] as usize;
    let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let dim: usize = shape.iter().product();
    let mut labels = Vec::with_capacity(n);
    let mut inputs = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let offset = cur.pos;
        let label = cur.u32()?;
        if label as usize >= classes {
            return Err(Error::CorruptRecord {
                path: path.to_path_buf(),
                offset: offset as u64,
                reason: format!("label {label} >= class count {classes}"),
            });
        }
        labels.push(label);
        for chunk in cur.take(4 * dim)?.chunks_exact(4) {
            inputs.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: cur.pos as u64,
            reason: "trailing bytes".into(),
        });
    }
    let names = (0..classes).map(|c| format!("class_{c}")).collect();
    LabeledDataset::new(shape, inputs, labels, names)
}
