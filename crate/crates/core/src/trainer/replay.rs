use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::largest_remainder;
use crate::error::{Error, Result};
use crate::partition::SliceLayout;
use crate::rng::DetRng;

/// Samples from earlier slices of a shard mixed into one slice's training set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    /// Slice this buffer is replayed into.
    pub slice_index: usize,
    pub indices: Vec<usize>,
    /// Slice each entry of `indices` was drawn from.
    pub source_slices: Vec<usize>,
}

impl ReplayBuffer {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Drop every entry labeled `class`.
    pub fn purge(&mut self, class: u32, labels: &[u32]) {
        let (idx, src): (Vec<usize>, Vec<usize>) = self
            .indices
            .iter()
            .zip(&self.source_slices)
            .filter(|(&i, _)| labels[i] != class)
            .map(|(&i, &s)| (i, s))
            .unzip();
        self.indices = idx;
        self.source_slices = src;
    }
}

/// Draw `round(ratio * |slices before slice_index|)` samples from the earlier
/// slices, apportioned over classes in proportion to availability
/// (largest remainder) and uniform without replacement within each class.
pub fn sample_replay(
    layout: &SliceLayout,
    slice_index: usize,
    ratio: f64,
    labels: &[u32],
    rng: &mut DetRng,
) -> Result<ReplayBuffer> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("replay ratio must lie in [0, 1], got {ratio}")));
    }
    if slice_index > layout.slices.len() {
        return Err(Error::InvalidArgument(format!(
            "slice {slice_index} outside a layout of {} slices",
            layout.slices.len()
        )));
    }
    let mut by_class: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for (s, slice) in layout.slices[..slice_index].iter().enumerate() {
        for &i in slice {
            by_class.entry(labels[i]).or_default().push((i, s));
        }
    }
    let available: usize = by_class.values().map(Vec::len).sum();
    let total = (ratio * available as f64).round() as usize;
    let mut buffer = ReplayBuffer {
        slice_index,
        ..Default::default()
    };
    if total == 0 {
        return Ok(buffer);
    }
    let weights: Vec<f64> = by_class.values().map(|v| v.len() as f64).collect();
    let counts = largest_remainder(total, &weights);
    for (pool, take) in by_class.values().zip(counts) {
        let mut picked = index::sample(rng, pool.len(), take).into_vec();
        picked.sort_unstable();
        for p in picked {
            buffer.indices.push(pool[p].0);
            buffer.source_slices.push(pool[p].1);
        }
    }
    Ok(buffer)
}
