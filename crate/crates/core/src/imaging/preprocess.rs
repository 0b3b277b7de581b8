//! Volume standardization: isotropic resampling, intensity rescaling,
//! brain-mask computation, and in-mask z-scoring.

use ndarray::Array3;

use super::{ImagingError, MaskGrid, Orientation, VolumeGrid};
use crate::scalar::Scalar;

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Trilinear resample to 1 mm isotropic spacing.
///
/// Voxel centers sit at `index * spacing`; the output grid has
/// `round(dim * spacing)` voxels per axis (ties round half up). A volume
/// already at 1 mm is reproduced exactly.
fn resample_isotropic<F: Scalar>(v: &VolumeGrid<F>) -> VolumeGrid<F> {
    let [nz, ny, nx] = v.dims();
    let [sz, sy, sx] = v.spacing_mm;
    if v.spacing_mm == [1.0, 1.0, 1.0] {
        return v.clone();
    }
    let oz = round_half_up(nz as f64 * sz).max(1);
    let oy = round_half_up(ny as f64 * sy).max(1);
    let ox = round_half_up(nx as f64 * sx).max(1);

    let mut out = Array3::<F>::zeros((oz, oy, ox));
    for z in 0..oz {
        let fz = (z as f64 / sz).min(nz as f64 - 1.0);
        let z0 = fz.floor() as usize;
        let z1 = (z0 + 1).min(nz - 1);
        let tz = fz - z0 as f64;
        for y in 0..oy {
            let fy = (y as f64 / sy).min(ny as f64 - 1.0);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(ny - 1);
            let ty = fy - y0 as f64;
            for x in 0..ox {
                let fx = (x as f64 / sx).min(nx as f64 - 1.0);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(nx - 1);
                let tx = fx - x0 as f64;

                let mut acc = 0.0;
                for (zi, wz) in [(z0, 1.0 - tz), (z1, tz)] {
                    if wz == 0.0 {
                        continue;
                    }
                    for (yi, wy) in [(y0, 1.0 - ty), (y1, ty)] {
                        if wy == 0.0 {
                            continue;
                        }
                        for (xi, wx) in [(x0, 1.0 - tx), (x1, tx)] {
                            if wx == 0.0 {
                                continue;
                            }
                            acc += wz * wy * wx * v.data[[zi, yi, xi]].as_f64();
                        }
                    }
                }
                out[[z, y, x]] = F::cast(acc);
            }
        }
    }
    VolumeGrid {
        data: out,
        spacing_mm: [1.0, 1.0, 1.0],
        orientation: v.orientation,
    }
}

/// Otsu threshold over a 256-bin histogram of `[min, max]`.
fn otsu_threshold<F: Scalar>(data: &Array3<F>) -> Result<f64, ImagingError> {
    const BINS: usize = 256;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in data.iter() {
        let v = v.as_f64();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        return Err(ImagingError::DegenerateIntensity);
    }
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0usize; BINS];
    for &v in data.iter() {
        let idx = (((v.as_f64() - lo) / width) as usize).min(BINS - 1);
        hist[idx] += 1;
    }
    let total = data.len() as f64;
    let total_mean: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum::<f64>()
        / total;

    let mut best_k = 0;
    let mut best_var = -1.0;
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    for k in 0..BINS - 1 {
        w0 += hist[k] as f64 / total;
        sum0 += k as f64 * hist[k] as f64 / total;
        if w0 == 0.0 {
            continue;
        }
        let w1 = 1.0 - w0;
        if w1 == 0.0 {
            break;
        }
        let mu0 = sum0 / w0;
        let mu1 = (total_mean - sum0) / w1;
        let between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if between > best_var {
            best_var = between;
            best_k = k;
        }
    }
    Ok(lo + (best_k as f64 + 1.0) * width)
}

/// Largest 6-connected component of `{voxel > Otsu threshold}`.
pub fn compute_brain_mask<F: Scalar>(v: &VolumeGrid<F>) -> Result<MaskGrid, ImagingError> {
    let threshold = otsu_threshold(&v.data)?;
    let [nz, ny, nx] = v.dims();
    let fg = |z: usize, y: usize, x: usize| v.data[[z, y, x]].as_f64() > threshold;

    let mut labels = Array3::<u32>::zeros((nz, ny, nx));
    let mut sizes: Vec<usize> = vec![0]; // label 0 = background
    let mut queue = std::collections::VecDeque::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !fg(z, y, x) || labels[[z, y, x] ] != 0 {
                    continue;
                }
                let label = sizes.len() as u32;
                sizes.push(0);
                labels[[z, y, x]] = label;
                queue.push_back((z, y, x));
                while let Some((cz, cy, cx)) = queue.pop_front() {
                    *sizes.last_mut().expect("component exists") += 1;
                    let mut neighbors = Vec::with_capacity(6);
                    if cz > 0 { neighbors.push((cz - 1, cy, cx)); }
                    if cz + 1 < nz { neighbors.push((cz + 1, cy, cx)); }
                    if cy > 0 { neighbors.push((cz, cy - 1, cx)); }
                    if cy + 1 < ny { neighbors.push((cz, cy + 1, cx)); }
                    if cx > 0 { neighbors.push((cz, cy, cx - 1)); }
                    if cx + 1 < nx { neighbors.push((cz, cy, cx + 1)); }
                    for (z2, y2, x2) in neighbors {
                        if fg(z2, y2, x2) && labels[[z2, y2, x2]] == 0 {
                            labels[[z2, y2, x2]] = label;
                            queue.push_back((z2, y2, x2));
                        }
                    }
                }
            }
        }
    }
    if sizes.len() == 1 {
        return Err(ImagingError::EmptyForeground);
    }
    let largest = sizes
        .iter()
        .enumerate()
        .skip(1)
        .max_by_key(|(_, &s)| s)
        .map(|(i, _)| i as u32)
        .expect("at least one component");
    let mask = labels.mapv(|l| l == largest);
    Ok(MaskGrid { data: mask })
}

/// Standardize a volume: resample to 1 mm, rescale intensities to `[0, 1]`,
/// then z-score over in-mask voxels (applied to the whole grid).
pub fn preprocess_volume<F: Scalar>(v: &VolumeGrid<F>) -> Result<VolumeGrid<F>, ImagingError> {
    if v.orientation != Orientation::RasPlus {
        return Err(ImagingError::UnsupportedOrientation);
    }
    let mut vol = resample_isotropic(v);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &val in vol.data.iter() {
        let val = val.as_f64();
        lo = lo.min(val);
        hi = hi.max(val);
    }
    if !(hi > lo) {
        return Err(ImagingError::DegenerateIntensity);
    }
    let range = hi - lo;
    vol.data.mapv_inplace(|val| F::cast((val.as_f64() - lo) / range));

    let mask = compute_brain_mask(&vol)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (&val, &inside) in vol.data.iter().zip(mask.data.iter()) {
        if inside {
            sum += val.as_f64();
            count += 1;
        }
    }
    let mean = sum / count as f64;
    let mut ss = 0.0;
    for (&val, &inside) in vol.data.iter().zip(mask.data.iter()) {
        if inside {
            let d = val.as_f64() - mean;
            ss += d * d;
        }
    }
    let sd = (ss / count as f64).sqrt();
    if !(sd > 0.0) {
        return Err(ImagingError::DegenerateIntensity);
    }
    vol.data
        .mapv_inplace(|val| F::cast((val.as_f64() - mean) / sd));
    Ok(vol)
}
