//! Dimension contracts shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{ProfdError, Result};

/// Image, patch-grid and embedding sizes.
///
/// `stride` equals `patch` for the default non-overlapping tokeniser; a
/// smaller stride (the overlapping variant) only changes the grid size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub img_h: usize,
    pub img_w: usize,
    pub patch: usize,
    #[serde(default)]
    pub stride: Option<usize>,
    pub d: usize,
    pub n_parts: usize,
    pub n_ids: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            img_h: 256,
            img_w: 128,
            patch: 16,
            stride: None,
            d: 512,
            n_parts: 5,
            n_ids: 1,
        }
    }
}

impl Dims {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.patch)
    }

    pub fn grid_h(&self) -> usize {
        (self.img_h - self.patch) / self.stride() + 1
    }

    pub fn grid_w(&self) -> usize {
        (self.img_w - self.patch) / self.stride() + 1
    }

    /// Number of patch tokens, `grid_h · grid_w`.
    pub fn n_patches(&self) -> usize {
        self.grid_h() * self.grid_w()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ProfdError::InvalidInput(m));
        if self.patch == 0 || self.d == 0 || self.n_parts == 0 || self.n_ids == 0 {
            return bad(format!("patch, d, n_parts and n_ids must be >= 1: {self:?}"));
        }
        if self.img_h < self.patch || self.img_w < self.patch {
            return bad(format!("image smaller than one patch: {self:?}"));
        }
        let stride = self.stride();
        if stride == 0 || stride > self.patch {
            return bad(format!("stride {stride} must be in 1..=patch"));
        }
        if stride == self.patch && (!self.img_h.is_multiple_of(self.patch) || !self.img_w.is_multiple_of(self.patch)) {
            return bad(format!(
                "patch {} must divide image {}x{}",
                self.patch, self.img_h, self.img_w
            ));
        }
        Ok(())
    }

    /// Pixel rectangle `(row0, col0)` of patch `(i, j)`.
    pub fn patch_origin(&self, i: usize, j: usize) -> (usize, usize) {
        (i * self.stride(), j * self.stride())
    }
}
