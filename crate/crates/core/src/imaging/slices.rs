//! Slice extraction and 2D standardization.

use ndarray::{Array2, ArrayView2};

use super::{ImagingError, SliceImage, SliceMode, SliceStack, VolumeGrid, SLICE_SIZE};
use crate::scalar::Scalar;

/// Center-crop oversized axes and symmetrically zero-pad undersized axes to
/// `target`. Crops start at `floor((n - t) / 2)`; pads place
/// `ceil((t - n) / 2)` rows/columns before the content.
pub fn crop_or_pad<F: Scalar>(
    img: ArrayView2<'_, F>,
    target: (usize, usize),
) -> Result<Array2<F>, ImagingError> {
    let (h, w) = img.dim();
    if h == 0 || w == 0 {
        return Err(ImagingError::EmptyImage);
    }
    let (th, tw) = target;
    let mut out = Array2::<F>::zeros((th, tw));

    let (src_h0, dst_h0, copy_h) = if h >= th {
        ((h - th) / 2, 0, th)
    } else {
        (0, (th - h + 1) / 2, h)
    };
    let (src_w0, dst_w0, copy_w) = if w >= tw {
        ((w - tw) / 2, 0, tw)
    } else {
        (0, (tw - w + 1) / 2, w)
    };

    for r in 0..copy_h {
        for c in 0..copy_w {
            out[[dst_h0 + r, dst_w0 + c]] = img[[src_h0 + r, src_w0 + c]];
        }
    }
    Ok(out)
}

/// Extract the center slice, or the center plus four slices at offsets
/// `{-10, -5, +5, +10}`, each standardized to 224x224.
pub fn extract_slices<F: Scalar>(
    v: &VolumeGrid<F>,
    mode: SliceMode,
    subject_id: &str,
) -> Result<SliceStack<F>, ImagingError> {
    let depth = v.dims()[0];
    let center = (depth / 2) as i64;
    let offsets: &[i64] = match mode {
        SliceMode::Center => &[0],
        SliceMode::Five => {
            if depth < 21 {
                return Err(ImagingError::DepthTooSmall { depth });
            }
            &[-10, -5, 0, 5, 10]
        }
    };

    let mut slices = Vec::with_capacity(offsets.len());
    for &off in offsets {
        let idx = center + off;
        debug_assert!(idx >= 0 && (idx as usize) < depth);
        let plane = v.data.index_axis(ndarray::Axis(0), idx as usize);
        let data = crop_or_pad(plane, (SLICE_SIZE, SLICE_SIZE))?;
        slices.push(SliceImage {
            data,
            channels: 1,
            subject_id: subject_id.to_string(),
            slice_index: idx as i32,
        });
    }
    Ok(SliceStack { slices, mode })
}

/// Write a slice as an 8-bit grayscale PNG (min-max normalized for display).
pub fn export_slice_png<F: Scalar>(
    slice: &SliceImage<F>,
    path: &std::path::Path,
) -> Result<(), ImagingError> {
    let (h, w) = slice.data.dim();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in slice.data.iter() {
        lo = lo.min(v.as_f64());
        hi = hi.max(v.as_f64());
    }
    let range = if hi > lo { hi - lo } else { 1.0 };
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for ((r, c), &v) in slice.data.indexed_iter() {
        let g = (((v.as_f64() - lo) / range) * 255.0).round().clamp(0.0, 255.0) as u8;
        buf.put_pixel(c as u32, r as u32, image::Luma([g]));
    }
    buf.save(path)
        .map_err(|e| ImagingError::Container(format!("png encode failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Orientation;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn ramp_volume(depth: usize) -> VolumeGrid<f64> {
        let data = Array3::<f64>::from_shape_fn((depth, 40, 30), |(z, y, x)| {
            z as f64 * 1000.0 + y as f64 + x as f64 * 0.001
        });
        VolumeGrid::new(data, [1.0, 1.0, 1.0], Orientation::RasPlus).unwrap()
    }

    #[test]
    fn five_slice_indices_follow_interval_rule() {
        let vol = ramp_volume(64);
        let stack = extract_slices(&vol, SliceMode::Five, "s1").unwrap();
        let indices: Vec<i32> = stack.slices.iter().map(|s| s.slice_index).collect();
        assert_eq!(indices, vec![22, 27, 32, 37, 42]);
        for s in &stack.slices {
            assert_eq!(s.data.dim(), (224, 224));
        }
    }

    #[test]
    fn center_slice_index() {
        let vol = ramp_volume(64);
        let stack = extract_slices(&vol, SliceMode::Center, "s1").unwrap();
        assert_eq!(stack.slices.len(), 1);
        assert_eq!(stack.slices[0].slice_index, 32);
    }

    #[test]
    fn shallow_volume_rejected_in_five_mode() {
        let vol = ramp_volume(20);
        assert!(matches!(
            extract_slices(&vol, SliceMode::Five, "s1"),
            Err(ImagingError::DepthTooSmall { depth: 20 })
        ));
        // center mode still works
        assert!(extract_slices(&vol, SliceMode::Center, "s1").is_ok());
    }

    #[test]
    fn crop_or_pad_identity_on_exact_size() {
        let img = Array2::<f64>::from_shape_fn((224, 224), |(r, c)| (r * 224 + c) as f64);
        let out = crop_or_pad(img.view(), (224, 224)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn crop_or_pad_centering_arithmetic() {
        // 300x200: rows cropped to [38, 262), columns padded by 12 each side
        let img = Array2::<f64>::from_shape_fn((300, 200), |(r, c)| r as f64 * 1000.0 + c as f64);
        let out = crop_or_pad(img.view(), (224, 224)).unwrap();
        assert_eq!(out.dim(), (224, 224));
        assert_eq!(out[[0, 12]], img[[38, 0]]);
        assert_eq!(out[[223, 211]], img[[261, 199]]);
        assert_eq!(out[[0, 11]], 0.0);
        assert_eq!(out[[0, 212]], 0.0);
    }

    #[test]
    fn crop_or_pad_single_pixel_centers() {
        let img = Array2::<f64>::from_elem((1, 1), 7.5);
        let out = crop_or_pad(img.view(), (224, 224)).unwrap();
        assert_eq!(out[[112, 112]], 7.5);
        assert_eq!(out.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn slices_are_planes_of_the_volume() {
        let vol = ramp_volume(64);
        let stack = extract_slices(&vol, SliceMode::Five, "s").unwrap();
        // content region of slice k equals volume plane at its index
        for s in &stack.slices {
            let z = s.slice_index as usize;
            // 40x30 content padded into 224x224: offsets ceil(184/2)=92, ceil(194/2)=97
            assert_eq!(s.data[[92, 97]], vol.data[[z, 0, 0]]);
            assert_eq!(s.data[[92 + 39, 97 + 29]], vol.data[[z, 39, 29]]);
        }
    }

    proptest! {
        // second application of crop_or_pad is the identity
        #[test]
        fn crop_or_pad_is_idempotent(h in 1usize..400, w in 1usize..400) {
            let img = Array2::<f64>::from_shape_fn((h, w), |(r, c)| (r * w + c) as f64 + 0.5);
            let once = crop_or_pad(img.view(), (224, 224)).unwrap();
            let twice = crop_or_pad(once.view(), (224, 224)).unwrap();
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn png_export_writes_file() {
        let dir = tempfile::tempdir().unwrap();
        let slice = SliceImage {
            data: Array2::<f64>::from_shape_fn((224, 224), |(r, c)| (r + c) as f64),
            channels: 1,
            subject_id: "s".into(),
            slice_index: 0,
        };
        let path = dir.path().join("slice.png");
        export_slice_png(&slice, &path).unwrap();
        assert!(path.exists());
        let img = image::open(&path).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (224, 224));
    }
}
