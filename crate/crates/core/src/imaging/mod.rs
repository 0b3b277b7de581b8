//! Synthetic volume generation, the standardization chain, and slice
//! extraction.
//!
//! Volumes are dense 3D grids indexed `[z][y][x]` with `z` the axial axis.
//! The standardization chain resamples to 1 mm isotropic spacing, rescales
//! intensities to `[0, 1]`, and z-scores using in-mask statistics; slices
//! are cropped or padded to 224x224.

mod container;
mod generic;
mod phantom;
mod preprocess;
mod slices;

pub use container::{read_volume, write_volume, SliceDataset, SliceRecord};
pub use generic::{generate_generic_image, GenericImageConfig};
pub use phantom::{sample_phantom_params, synthesize_volume, PhantomConfig, PhantomParams};
pub use preprocess::{compute_brain_mask, preprocess_volume};
pub use slices::{crop_or_pad, export_slice_png, extract_slices};

use ndarray::{Array2, Array3};
use thiserror::Error;

use crate::scalar::Scalar;

/// Standardized slice side length.
pub const SLICE_SIZE: usize = 224;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("volume dimensions must all be >= 1, got {0:?}")]
    EmptyVolume([usize; 3]),
    #[error("voxel spacing must be positive, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("degenerate intensity range")]
    DegenerateIntensity,
    #[error("empty foreground after thresholding")]
    EmptyForeground,
    #[error("unsupported orientation: only RAS+ volumes can be standardized")]
    UnsupportedOrientation,
    #[error("axial depth {depth} too small for five-slice mode (need >= 21)")]
    DepthTooSmall { depth: usize },
    #[error("image is empty")]
    EmptyImage,
    #[error("phantom config invalid: {0}")]
    BadPhantomConfig(String),
    #[error("container format error: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Axis orientation of a volume. Only RAS+ volumes are processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Orientation {
    RasPlus,
    Other,
}

impl Orientation {
    pub fn code(self) -> u32 {
        match self {
            Orientation::RasPlus => 0,
            Orientation::Other => 1,
        }
    }

    pub fn from_code(code: u32) -> Orientation {
        if code == 0 {
            Orientation::RasPlus
        } else {
            Orientation::Other
        }
    }
}

/// Dense 3D scalar grid with voxel spacing and orientation.
#[derive(Debug, Clone)]
pub struct VolumeGrid<F> {
    pub data: Array3<F>,
    /// Spacing in mm along (z, y, x).
    pub spacing_mm: [f64; 3],
    pub orientation: Orientation,
}

impl<F: Scalar> VolumeGrid<F> {
    pub fn new(
        data: Array3<F>,
        spacing_mm: [f64; 3],
        orientation: Orientation,
    ) -> Result<Self, ImagingError> {
        let dims = data.dim();
        let dims = [dims.0, dims.1, dims.2];
        if dims.iter().any(|&d| d == 0) {
            return Err(ImagingError::EmptyVolume(dims));
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(ImagingError::BadSpacing(spacing_mm));
        }
        Ok(Self {
            data,
            spacing_mm,
            orientation,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        let (z, y, x) = self.data.dim();
        [z, y, x]
    }
}

/// Binary foreground mask with the same shape as its source volume.
#[derive(Debug, Clone)]
pub struct MaskGrid {
    pub data: Array3<bool>,
}

impl MaskGrid {
    pub fn voxel_count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// One standardized 2D slice.
#[derive(Debug, Clone)]
pub struct SliceImage<F> {
    /// Shape (224, 224) after standardization.
    pub data: Array2<F>,
    pub channels: u8,
    pub subject_id: String,
    pub slice_index: i32,
}

/// Slice extraction mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceMode {
    Center,
    Five,
}

impl SliceMode {
    /// Number of slices extracted per volume.
    pub fn slices_per_volume(self) -> usize {
        match self {
            SliceMode::Center => 1,
            SliceMode::Five => 5,
        }
    }
}

/// Slices extracted from one volume.
#[derive(Debug, Clone)]
pub struct SliceStack<F> {
    pub slices: Vec<SliceImage<F>>,
    pub mode: SliceMode,
}
