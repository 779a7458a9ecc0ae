//! Samples, splits and everything that produces them: the synthetic
//! occlusion benchmark, mask corruption, mask files and the on-disk
//! Market1501-style layout.

mod augment;
mod corrupt;
mod market;
mod pfmk;
mod sampler;
mod synthetic;

pub use augment::{augment, AugmentConfig};
pub use corrupt::{corrupt_masks, CorruptionMode};
pub use market::{load_dataset, load_image, parse_name, save_dataset, SPLIT_DIRS};
pub use pfmk::{decode_mask, encode_mask, read_mask_file, read_mask_file_checked, write_mask_file};
pub use sampler::pk_batches;
pub use synthetic::{generate_dataset, SyntheticSpec, BAND_FRACTIONS};

use crate::encoder::Image;
use crate::mask::PartMask;

/// Mask value above which a pixel counts as belonging to a part.
pub const MASK_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// File stem, `<id:4>_c<cam>_<index>`.
    pub name: String,
    pub image: Image,
    pub id: u32,
    pub cam: u32,
    /// `None` when no mask file was found.
    pub mask: Option<PartMask>,
    /// Ground truth when known; derived from the mask otherwise.
    pub occluded_parts: Option<Vec<bool>>,
}

impl Sample {
    pub fn has_mask(&self) -> bool {
        self.mask.is_some()
    }
}

/// `occluded[i]` ⇔ no pixel of channel `i` exceeds the mask threshold.
pub fn occluded_from_mask(mask: &PartMask) -> Vec<bool> {
    (0..mask.n).map(|c| mask.channel_max(c) <= MASK_THRESHOLD).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub query: Vec<Sample>,
    pub gallery: Vec<Sample>,
}

impl Dataset {
    /// True when every sample of every split carries a mask.
    pub fn has_masks(&self) -> bool {
        self.train
            .iter()
            .chain(&self.query)
            .chain(&self.gallery)
            .all(Sample::has_mask)
    }

    /// Sorted distinct training identities; their position is the class label.
    pub fn train_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.train.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Contiguous class labels of the training samples.
    pub fn train_labels(&self) -> Vec<usize> {
        let ids = self.train_ids();
        self.train
            .iter()
            .map(|s| ids.binary_search(&s.id).expect("id listed"))
            .collect()
    }
}
