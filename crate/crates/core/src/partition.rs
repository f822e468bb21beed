//! Class-cohesive sharding, slice layouts and the class location table.
//!
//! Every class lives in exactly one shard. Within a shard, samples are cut into
//! `L` slices either *balanced* (each slice stratified over the shard's
//! classes) or *sequential by class* (classes concatenated in id order, so a
//! class occupies a contiguous run of slices). The [`MetadataTable`] records
//! where each class lives and drives every unlearning request.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardAssignment {
    pub shard_id: usize,
    /// Sorted ascending.
    pub class_ids: Vec<u32>,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlicingPolicy {
    Balanced,
    SequentialClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceLayout {
    pub shard_id: usize,
    pub policy: SlicingPolicy,
    /// Training-set sample indices of each slice, in training order.
    pub slices: Vec<Vec<usize>>,
}

impl SliceLayout {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn sample_count(&self) -> usize {
        self.slices.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLocation {
    pub shard_id: usize,
    pub first_slice: usize,
    /// Every slice holding at least one sample of the class, ascending.
    pub slices: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataTable {
    pub entries: BTreeMap<u32, ClassLocation>,
}

impl MetadataTable {
    pub fn locate(&self, class: u32) -> Option<&ClassLocation> {
        self.entries.get(&class)
    }

    pub fn shard_of(&self, class: u32) -> Option<usize> {
        self.entries.get(&class).map(|l| l.shard_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub policy: SlicingPolicy,
    pub assignments: Vec<ShardAssignment>,
    pub layouts: Vec<SliceLayout>,
    pub metadata: MetadataTable,
    pub imbalance_ratio: f64,
}

/// Greedy largest-first load balancing: classes sorted by size (descending,
/// ties by class id) each go to the currently lightest shard (ties to the lower
/// shard id). Returns the assignments and `max / min` shard size.
pub fn plan_shards(class_sizes: &BTreeMap<u32, usize>, k: usize) -> Result<(Vec<ShardAssignment>, f64)> {
    if k == 0 {
        return Err(Error::InvalidArgument("shard count K must be at least 1".into()));
    }
    if k > class_sizes.len() {
        return Err(Error::InvalidArgument(format!(
            "K exceeds class count ({k} > {})",
            class_sizes.len()
        )));
    }
    let mut order: Vec<(u32, usize)> = class_sizes.iter().map(|(&c, &n)| (c, n)).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut shards: Vec<ShardAssignment> = (0..k)
        .map(|shard_id| ShardAssignment {
            shard_id,
            class_ids: Vec::new(),
            sample_count: 0,
        })
        .collect();
    for (class, n) in order {
        let lightest = shards
            .iter_mut()
            .min_by_key(|s| (s.sample_count, s.shard_id))
            .expect("k >= 1");
        lightest.class_ids.push(class);
        lightest.sample_count += n;
    }
    for s in &mut shards {
        s.class_ids.sort_unstable();
    }
    let max = shards.iter().map(|s| s.sample_count).max().unwrap_or(0);
    let min = shards.iter().map(|s| s.sample_count).min().unwrap_or(0);
    if min == 0 {
        return Err(Error::InvalidArgument(
            "a shard would hold no samples; drop empty classes or lower K".into(),
        ));
    }
    Ok((shards, max as f64 / min as f64))
}

/// Cut a shard's samples into `l` slices whose sizes differ by at most one.
///
/// `per_class_indices[c]` lists the training indices of class `c`.
pub fn plan_slices(
    shard: &ShardAssignment,
    l: usize,
    policy: SlicingPolicy,
    per_class_indices: &[Vec<usize>],
) -> Result<SliceLayout> {
    if l == 0 {
        return Err(Error::InvalidArgument("slice count L must be at least 1".into()));
    }
    let mut ordered = Vec::with_capacity(shard.sample_count);
    for &c in &shard.class_ids {
        let idx = per_class_indices
            .get(c as usize)
            .ok_or(Error::MissingClass(c))?;
        ordered.extend_from_slice(idx);
    }
    if l > ordered.len() {
        return Err(Error::InvalidArgument(format!(
            "L = {l} exceeds the {} samples of shard {}",
            ordered.len(),
            shard.shard_id
        )));
    }
    let slices = match policy {
        SlicingPolicy::Balanced => {
            // round-robin over the class-ordered list stratifies every slice
            let mut slices = vec![Vec::with_capacity(ordered.len() / l + 1); l];
            for (pos, idx) in ordered.into_iter().enumerate() {
                slices[pos % l].push(idx);
            }
            slices
        }
        SlicingPolicy::SequentialClass => {
            let base = ordered.len() / l;
            let extra = ordered.len() % l;
            let mut slices = Vec::with_capacity(l);
            let mut start = 0;
            for s in 0..l {
                let len = base + usize::from(s < extra);
                slices.push(ordered[start..start + len].to_vec());
                start += len;
            }
            slices
        }
    };
    Ok(SliceLayout {
        shard_id: shard.shard_id,
        policy,
        slices,
    })
}

/// Record, for every class, its shard, the first slice containing it and all
/// slices containing it.
pub fn build_metadata(
    assignments: &[ShardAssignment],
    layouts: &[SliceLayout],
    labels: &[u32],
) -> Result<MetadataTable> {
    let mut entries = BTreeMap::new();
    for shard in assignments {
        let layout = layouts
            .iter()
            .find(|l| l.shard_id == shard.shard_id)
            .ok_or_else(|| Error::InvalidState(format!("no slice layout for shard {}", shard.shard_id)))?;
        let mut occupied: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (s, slice) in layout.slices.iter().enumerate() {
            for &i in slice {
                let label = *labels.get(i).ok_or_else(|| {
                    Error::InvalidState(format!("sample index {i} outside the training set"))
                })?;
                if shard.class_ids.binary_search(&label).is_err() {
                    return Err(Error::InvalidState(format!(
                        "class {label} found in shard {} but assigned elsewhere",
                        shard.shard_id
                    )));
                }
                let list = occupied.entry(label).or_default();
                if list.last() != Some(&s) {
                    list.push(s);
                }
            }
        }
        for &c in &shard.class_ids {
            let slices = occupied.remove(&c).ok_or(Error::MissingClass(c))?;
            entries.insert(
                c,
                ClassLocation {
                    shard_id: shard.shard_id,
                    first_slice: slices[0],
                    slices,
                },
            );
        }
    }
    Ok(MetadataTable { entries })
}

impl PartitionPlan {
    /// Shard, slice and index the training labels in one go.
    pub fn build(labels: &[u32], num_classes: usize, k: usize, l: usize, policy: SlicingPolicy) -> Result<Self> {
        let mut per_class = vec![Vec::new(); num_classes];
        for (i, &c) in labels.iter().enumerate() {
            per_class
                .get_mut(c as usize)
                .ok_or_else(|| Error::InvalidLabel {
                    label: c,
                    reason: format!("plan over {num_classes} classes"),
                })?
                .push(i);
        }
        if let Some(c) = per_class.iter().position(Vec::is_empty) {
            return Err(Error::MissingClass(c as u32));
        }
        let sizes: BTreeMap<u32, usize> = per_class
            .iter()
            .enumerate()
            .map(|(c, v)| (c as u32, v.len()))
            .collect();
        let (assignments, imbalance_ratio) = plan_shards(&sizes, k)?;
        let layouts = assignments
            .iter()
            .map(|a| plan_slices(a, l, policy, &per_class))
            .collect::<Result<Vec<_>>>()?;
        let metadata = build_metadata(&assignments, &layouts, labels)?;
        Ok(Self {
            k,
            l,
            policy,
            assignments,
            layouts,
            metadata,
            imbalance_ratio,
        })
    }

    pub fn layout(&self, shard_id: usize) -> Option<&SliceLayout> {
        self.layouts.iter().find(|l| l.shard_id == shard_id)
    }

    pub fn assignment(&self, shard_id: usize) -> Option<&ShardAssignment> {
        self.assignments.iter().find(|a| a.shard_id == shard_id)
    }

    /// The plan with every sample of `class` purged. Slice positions of the
    /// other classes are unchanged, so slices may become empty or uneven.
    pub fn without_class(&self, class: u32, labels: &[u32]) -> Result<Self> {
        let loc = self
            .metadata
            .locate(class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))?
            .clone();
        let mut plan = self.clone();
        plan.metadata.entries.remove(&class);
        let assignment = plan
            .assignments
            .iter_mut()
            .find(|a| a.shard_id == loc.shard_id)
            .expect("metadata shard exists");
        assignment.class_ids.retain(|&c| c != class);
        let layout = plan
            .layouts
            .iter_mut()
            .find(|l| l.shard_id == loc.shard_id)
            .expect("metadata shard has layout");
        for &s in &loc.slices {
            layout.slices[s].retain(|&i| labels[i] != class);
        }
        assignment.sample_count = layout.sample_count();
        Ok(plan)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("serializing plan", e))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::json("parsing plan", e))
    }
}
