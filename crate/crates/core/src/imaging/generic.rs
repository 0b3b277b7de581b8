//! Generic image corpus: random geometric scenes standing in for natural
//! images during the out-of-domain pretraining stage.
//!
//! Each image is a z-scored 224x224 grayscale composition of ellipses,
//! rectangles, and rings over a smooth background gradient. The supervised
//! pretext label is the mean characteristic radius of the drawn objects.

use ndarray::Array2;
use rand::Rng;

use super::{SliceImage, SLICE_SIZE};
use crate::rng::seeded_rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GenericImageConfig {
    /// Min/max number of objects per scene.
    pub objects: [usize; 2],
    /// Min/max characteristic object radius in pixels.
    pub radius_px: [f64; 2],
    /// Additive noise standard deviation.
    pub noise_level: f64,
}

impl Default for GenericImageConfig {
    fn default() -> Self {
        Self {
            objects: [3, 8],
            radius_px: [8.0, 60.0],
            noise_level: 0.05,
        }
    }
}

/// Generate one generic image and its size-regression pretext label
/// (mean object radius in pixels / 10).
pub fn generate_generic_image<F: Scalar>(
    config: &GenericImageConfig,
    seed: u64,
    index: u64,
) -> (SliceImage<F>, f64) {
    let mut rng = seeded_rng(seed, "generic-image", index);
    let n = SLICE_SIZE;
    let mut img = Array2::<f64>::zeros((n, n));

    // background gradient with random direction
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let (gy, gx) = (theta.sin(), theta.cos());
    let bg_amp = rng.random_range(0.0..0.3);
    for ((r, c), v) in img.indexed_iter_mut() {
        *v = bg_amp * ((r as f64 * gy + c as f64 * gx) / n as f64);
    }

    let count = rng.random_range(config.objects[0]..=config.objects[1]);
    let mut radius_sum = 0.0;
    for _ in 0..count {
        let kind = rng.random_range(0..3u8);
        let cy = rng.random_range(0.15..0.85) * n as f64;
        let cx = rng.random_range(0.15..0.85) * n as f64;
        let radius = rng.random_range(config.radius_px[0]..config.radius_px[1]);
        let aspect = rng.random_range(0.6..1.6);
        let intensity = rng.random_range(0.3..1.0) * if rng.random_bool(0.25) { -1.0 } else { 1.0 };
        radius_sum += radius;

        let ry = radius * aspect;
        let rx = radius / aspect;
        let r0 = (cy - ry - 2.0).max(0.0) as usize;
        let r1 = ((cy + ry + 2.0) as usize).min(n - 1);
        let c0 = (cx - rx - 2.0).max(0.0) as usize;
        let c1 = ((cx + rx + 2.0) as usize).min(n - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let dy = (r as f64 - cy) / ry;
                let dx = (c as f64 - cx) / rx;
                let d = (dy * dy + dx * dx).sqrt();
                let inside = match kind {
                    0 => d <= 1.0,                       // ellipse
                    1 => dy.abs() <= 0.8 && dx.abs() <= 0.8, // rectangle
                    _ => (0.6..=1.0).contains(&d),       // ring
                };
                if inside {
                    img[[r, c]] += intensity;
                }
            }
        }
    }

    if config.noise_level > 0.0 {
        use rand_distr::{Distribution, Normal};
        let noise = Normal::new(0.0, config.noise_level).expect("valid normal");
        for v in img.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }

    // z-score over the full image
    let mean = img.iter().sum::<f64>() / (n * n) as f64;
    let sd = (img.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n * n) as f64)
        .sqrt()
        .max(1e-9);
    let data = img.mapv(|v| F::cast((v - mean) / sd));

    let label = radius_sum / count.max(1) as f64 / 10.0;
    (
        SliceImage {
            data,
            channels: 1,
            subject_id: format!("gen-{index:06}"),
            slice_index: 0,
        },
        label,
    )
}
