//! In-memory dataset: N×C×H×W pixels in [0,1] plus optional labels.

use serde::{Deserialize, Serialize};

use crate::corruptions::ImageBatch;
use crate::error::{Error, Result};
use crate::numerics::{Element, RngStream, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    /// Row-major N×C×H×W, values in [0,1].
    pub images: Vec<f32>,
    pub shape: (usize, usize, usize, usize),
    pub labels: Option<Vec<u32>>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(
        name: &str,
        split: Split,
        images: Vec<f32>,
        shape: (usize, usize, usize, usize),
        labels: Option<Vec<u32>>,
        class_count: usize,
    ) -> Result<Self> {
        let (n, c, h, w) = shape;
        if images.len() != n * c * h * w {
            return Err(Error::Data(format!(
                "image buffer holds {} values, shape {:?} needs {}",
                images.len(),
                shape,
                n * c * h * w
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Data(format!("{} labels for {n} images", l.len())));
            }
            if let Some(&bad) = l.iter().find(|&&v| v as usize >= class_count) {
                return Err(Error::Data(format!(
                    "label {bad} outside 0..{class_count}"
                )));
            }
        }
        if images.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Data("pixel values escape [0,1]".to_string()));
        }
        Ok(Dataset {
            name: name.to_string(),
            split,
            images,
            shape,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.shape.0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_dims(&self) -> (usize, usize, usize) {
        (self.shape.1, self.shape.2, self.shape.3)
    }

    pub fn require_labels(&self) -> Result<&[u32]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Data(format!("dataset {} has no labels", self.name)))
    }

    /// Un-normalized pixel batch for the given sample indices.
    pub fn batch<T: Element>(&self, indices: &[usize]) -> Result<ImageBatch<T>> {
        let (_, c, h, w) = self.shape;
        let chw = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * chw);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!("sample index {i} out of range")));
            }
            data.extend(self.images[i * chw..(i + 1) * chw].iter().map(|&v| T::of(v as f64)));
        }
        ImageBatch::new(Tensor::from_vec(&[indices.len(), c, h, w], data)?)
    }

    pub fn labels_for(&self, indices: &[usize]) -> Result<Vec<usize>> {
        let labels = self.require_labels()?;
        indices
            .iter()
            .map(|&i| {
                labels
                    .get(i)
                    .map(|&v| v as usize)
                    .ok_or_else(|| Error::Data(format!("sample index {i} out of range")))
            })
            .collect()
    }

    /// Sample indices grouped by class, in dataset order.
    pub fn class_indices(&self) -> Result<Vec<Vec<usize>>> {
        let labels = self.require_labels()?;
        let mut groups = vec![Vec::new(); self.class_count];
        for (i, &l) in labels.iter().enumerate() {
            groups[l as usize].push(i);
        }
        Ok(groups)
    }

    /// Class-stratified subsample: round(fraction · per-class count) from
    /// each class. Classes that would receive zero samples are a data
    /// error, listed by id.
    pub fn stratified_indices(&self, fraction: f64, rng: &mut RngStream) -> Result<Vec<usize>> {
        if !(0.0..=1.0).contains(&fraction) || fraction <= 0.0 {
            return Err(Error::Domain(format!(
                "label fraction {fraction} must be in (0, 1]"
            )));
        }
        let groups = self.class_indices()?;
        let mut uncovered = Vec::new();
        let mut chosen = Vec::new();
        for (class, members) in groups.iter().enumerate() {
            let k = (fraction * members.len() as f64).round() as usize;
            if k == 0 {
                uncovered.push(class);
                continue;
            }
            let picks = rng.index_subset(members.len(), k.min(members.len()))?;
            let mut picked: Vec<usize> = picks.iter().map(|&p| members[p]).collect();
            picked.sort_unstable();
            chosen.extend(picked);
        }
        if !uncovered.is_empty() {
            return Err(Error::Data(format!(
                "label fraction {fraction} leaves classes {uncovered:?} without samples"
            )));
        }
        chosen.sort_unstable();
        Ok(chosen)
    }

    /// New dataset view containing the given samples.
    pub fn subset(&self, indices: &[usize], split: Split) -> Result<Dataset> {
        let (_, c, h, w) = self.shape;
        let chw = c * h * w;
        let mut images = Vec::with_capacity(indices.len() * chw);
        let mut labels = self.labels.as_ref().map(|_| Vec::with_capacity(indices.len()));
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!("sample index {i} out of range")));
            }
            images.extend_from_slice(&self.images[i * chw..(i + 1) * chw]);
            if let (Some(out), Some(src)) = (labels.as_mut(), self.labels.as_ref()) {
                out.push(src[i]);
            }
        }
        Dataset::new(
            &self.name,
            split,
            images,
            (indices.len(), c, h, w),
            labels,
            self.class_count,
        )
    }

    /// Same images with labels rewritten through `map` (external id →
    /// training id) and the class count of the training task.
    pub fn relabel(&self, map: &[(u32, u32)], class_count: usize) -> Result<Dataset> {
        if self.is_empty() {
            return Err(Error::Data("empty external dataset".to_string()));
        }
        let labels = self.require_labels()?;
        let lookup: std::collections::BTreeMap<u32, u32> = map.iter().copied().collect();
        if let Some(&bad) = lookup.values().find(|&&v| v as usize >= class_count) {
            return Err(Error::Data(format!(
                "mapped label {bad} outside the training label set 0..{class_count}"
            )));
        }
        let new_labels = labels
            .iter()
            .map(|l| {
                lookup
                    .get(l)
                    .copied()
                    .ok_or_else(|| Error::Data(format!("class {l} has no label-shift mapping")))
            })
            .collect::<Result<Vec<u32>>>()?;
        Dataset::new(
            &format!("{}-shifted", self.name),
            self.split,
            self.images.clone(),
            self.shape,
            Some(new_labels),
            class_count,
        )
    }

    /// Per-channel mean and std over all pixels (for dataset-statistics
    /// normalization).
    pub fn channel_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let (n, c, h, w) = self.shape;
        let hw = h * w;
        let mut mean = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for i in 0..n {
            for ci in 0..c {
                for &v in &self.images[(i * c + ci) * hw..(i * c + ci + 1) * hw] {
                    mean[ci] += v as f64;
                    sq[ci] += (v as f64) * (v as f64);
                }
            }
        }
        let count = (n * hw) as f64;
        for ci in 0..c {
            mean[ci] /= count;
            sq[ci] = (sq[ci] / count - mean[ci] * mean[ci]).max(1e-12).sqrt();
        }
        (mean, sq)
    }
}
