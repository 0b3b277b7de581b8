//! Binary containers for volumes and slice datasets.
//!
//! Volume container: little-endian header `[u32 dims z,y,x][f32 spacing
//! z,y,x][u32 orientation]` followed by float32 voxels in row-major (z, y, x)
//! order. 2D images reuse the same layout with a leading dim of 1.
//!
//! Slice dataset: a single file bundling many standardized slices with
//! optional per-slice labels, used for persisted training sets.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use super::{ImagingError, Orientation, SliceImage, VolumeGrid};
use crate::scalar::Scalar;

fn read_exact_u32<R: Read>(r: &mut R) -> Result<u32, ImagingError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_exact_f32<R: Read>(r: &mut R) -> Result<f32, ImagingError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(f32::from_le_bytes(buf))
}

/// Write a volume to the binary container format.
pub fn write_volume<F: Scalar>(v: &VolumeGrid<F>, path: &Path) -> Result<(), ImagingError> {
    let mut w = BufWriter::new(File::create(path)?);
    let [nz, ny, nx] = v.dims();
    for d in [nz, ny, nx] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for s in v.spacing_mm {
        w.write_all(&(s as f32).to_le_bytes())?;
    }
    w.write_all(&v.orientation.code().to_le_bytes())?;
    for &val in v.data.iter() {
        w.write_all(&(val.as_f64() as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a volume from the binary container format.
pub fn read_volume<F: Scalar>(path: &Path) -> Result<VolumeGrid<F>, ImagingError> {
    let mut r = BufReader::new(File::open(path)?);
    let nz = read_exact_u32(&mut r)? as usize;
    let ny = read_exact_u32(&mut r)? as usize;
    let nx = read_exact_u32(&mut r)? as usize;
    let spacing = [
        read_exact_f32(&mut r)? as f64,
        read_exact_f32(&mut r)? as f64,
        read_exact_f32(&mut r)? as f64,
    ];
    let orientation = Orientation::from_code(read_exact_u32(&mut r)?);
    let count = nz
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nx))
        .ok_or_else(|| ImagingError::Container("dims overflow".into()))?;
    let mut raw = vec![0u8; count * 4];
    r.read_exact(&mut raw)?;
    let mut data = Vec::with_capacity(count);
    for chunk in raw.chunks_exact(4) {
        let bits = u32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        data.push(F::cast(f32::from_bits(bits) as f64));
    }
    let arr = Array3::from_shape_vec((nz, ny, nx), data)
        .map_err(|e| ImagingError::Container(e.to_string()))?;
    VolumeGrid::new(arr, spacing, orientation)
}

const SLICE_MAGIC: &[u8; 4] = b"CDSL";
const SLICE_VERSION: u16 = 1;

/// One record of a slice dataset.
#[derive(Debug, Clone)]
pub struct SliceRecord<F> {
    pub slice: SliceImage<F>,
    /// Regression target, when the dataset carries labels.
    pub label: Option<f64>,
}

/// An in-memory slice dataset that can be persisted as a single file.
#[derive(Debug, Clone, Default)]
pub struct SliceDataset<F> {
    pub records: Vec<SliceRecord<F>>,
}

impl<F: Scalar> SliceDataset<F> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, slice: SliceImage<F>, label: Option<f64>) {
        self.records.push(SliceRecord { slice, label });
    }

    pub fn has_labels(&self) -> bool {
        self.records.iter().all(|r| r.label.is_some()) && !self.records.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<(), ImagingError> {
        let mut w = BufWriter::new(File::create(path)?);
        let has_labels = self.has_labels();
        let (h, wd) = self
            .records
            .first()
            .map(|r| r.slice.data.dim())
            .unwrap_or((0, 0));
        w.write_all(SLICE_MAGIC)?;
        w.write_all(&SLICE_VERSION.to_le_bytes())?;
        w.write_all(&(has_labels as u16).to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        w.write_all(&(h as u32).to_le_bytes())?;
        w.write_all(&(wd as u32).to_le_bytes())?;
        for rec in &self.records {
            if rec.slice.data.dim() != (h, wd) {
                return Err(ImagingError::Container(
                    "all slices in a dataset must share one shape".into(),
                ));
            }
            let id = rec.slice.subject_id.as_bytes();
            if id.len() > u16::MAX as usize {
                return Err(ImagingError::Container("subject id too long".into()));
            }
            w.write_all(&(id.len() as u16).to_le_bytes())?;
            w.write_all(id)?;
            w.write_all(&rec.slice.slice_index.to_le_bytes())?;
            if has_labels {
                w.write_all(&(rec.label.expect("labels present") as f32).to_le_bytes())?;
            }
            for &v in rec.slice.data.iter() {
                w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ImagingError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SLICE_MAGIC {
            return Err(ImagingError::Container(format!(
                "bad magic {magic:?} in {}",
                path.display()
            )));
        }
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf)?;
        let version = u16::from_le_bytes(u16buf);
        if version != SLICE_VERSION {
            return Err(ImagingError::Container(format!(
                "unsupported slice dataset version {version}"
            )));
        }
        r.read_exact(&mut u16buf)?;
        let has_labels = u16::from_le_bytes(u16buf) != 0;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let count = u64::from_le_bytes(u64buf) as usize;
        let h = read_exact_u32(&mut r)? as usize;
        let wd = read_exact_u32(&mut r)? as usize;

        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut u16buf)?;
            let id_len = u16::from_le_bytes(u16buf) as usize;
            let mut id = vec![0u8; id_len];
            r.read_exact(&mut id)?;
            let subject_id = String::from_utf8(id)
                .map_err(|e| ImagingError::Container(format!("bad subject id: {e}")))?;
            let mut i32buf = [0u8; 4];
            r.read_exact(&mut i32buf)?;
            let slice_index = i32::from_le_bytes(i32buf);
            let label = if has_labels {
                Some(read_exact_f32(&mut r)? as f64)
            } else {
                None
            };
            let mut raw = vec![0u8; h * wd * 4];
            r.read_exact(&mut raw)?;
            let mut data = Vec::with_capacity(h * wd);
            for chunk in raw.chunks_exact(4) {
                let bits = u32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
                data.push(F::cast(f32::from_bits(bits) as f64));
            }
            let arr = Array2::from_shape_vec((h, wd), data)
                .map_err(|e| ImagingError::Container(e.to_string()))?;
            records.push(SliceRecord {
                slice: SliceImage {
                    data: arr,
                    channels: 1,
                    subject_id,
                    slice_index,
                },
                label,
            });
        }
        Ok(Self { records })
    }
}
