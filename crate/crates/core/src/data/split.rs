use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{streams, RngState};

/// Train/validation/test fractions plus the shuffling seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(rename = "train")]
    pub train_frac: f64,
    #[serde(rename = "val")]
    pub val_frac: f64,
    #[serde(rename = "test")]
    pub test_frac: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64, seed: u64) -> Self {
        Self {
            train_frac,
            val_frac,
            test_frac,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::InvalidArgument(format!("split fractions must be >= 0, got {fr:?}")));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self::new(0.7, 0.1, 0.2, 0)
    }
}

/// Apportion `total` units proportionally to `weights` with the
/// largest-remainder method. Ties on the remainder go to the lower index.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // stable sort keeps lower indices first among equal remainders
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Stratified split of sample indices by label. Each class is shuffled with a
/// stream derived from the spec seed and cut by largest-remainder rounding of
/// the three fractions. Returned index lists are sorted ascending.
pub fn split_indices(labels: &[u32], num_classes: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    spec.validate()?;
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        let slot = by_class.get_mut(l as usize).ok_or_else(|| Error::InvalidLabel {
            label: l,
            reason: format!("split over {num_classes} classes"),
        })?;
        slot.push(i);
    }
    let root = RngState::new(spec.seed).derive(streams::SPLIT);
    let fracs = [spec.train_frac, spec.val_frac, spec.test_frac];
    let mut out: [Vec<usize>; 3] = Default::default();
    for (c, mut idx) in by_class.into_iter().enumerate() {
        let mut rng = root.derive(c as u64).rng();
        idx.shuffle(&mut rng);
        let counts = largest_remainder(idx.len(), &fracs);
        let mut start = 0;
        for (part, n) in counts.into_iter().enumerate() {
            out[part].extend_from_slice(&idx[start..start + n]);
            start += n;
        }
    }
    for part in &mut out {
        part.sort_unstable();
    }
    Ok(out)
}

/// The three stratified partitions of a dataset.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

impl Splits {
    /// Fit per-channel statistics on the training split and apply them to all
    /// three splits.
    pub fn normalize_from_train(&mut self) -> Result<()> {
        let norm = self.train.fit_normalization();
        self.train.normalize(&norm)?;
        self.val.normalize(&norm)?;
        self.test.normalize(&norm)?;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }
}

/// Stratified train/validation/test split of `ds`.
pub fn split(ds: &LabeledDataset, spec: &SplitSpec) -> Result<Splits> {
    let [tr, va, te] = split_indices(ds.labels(), ds.num_classes(), spec)?;
    Ok(Splits {
        train: ds.subset(&tr),
        val: ds.subset(&va),
        test: ds.subset(&te),
    })
}
