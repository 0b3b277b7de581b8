//! Head-like phantom generator with a planted image-to-score signal.
//!
//! Each subject is an ellipsoidal "head" with jittered axes and center, a
//! smooth intensity gradient, low-frequency texture, voxel noise, and a
//! central dark cavity whose radius rho carries the label:
//! `label = clamp(a * rho + noise, 0, 18)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ImagingError, Orientation, VolumeGrid};
use crate::rng::seeded_rng;
use crate::scalar::Scalar;

/// Phantom generator configuration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PhantomConfig {
    /// Grid shape (z, y, x).
    pub shape: [usize; 3],
    /// Voxel spacing in mm (z, y, x).
    pub spacing_mm: [f64; 3],
    /// Head diameter as a fraction of the smallest in-plane grid extent.
    pub structure_scale: f64,
    /// Standard deviation of in-head voxel noise (intensity units).
    pub noise_level: f64,
    /// Signal coefficient `a` in `label = clamp(a * rho + noise, 0, 18)`.
    pub signal_coeff: f64,
    /// Cavity radius range in mm, sampled uniformly per subject.
    pub rho_range_mm: [f64; 2],
    /// Standard deviation of the additive label noise.
    pub label_noise: f64,
    /// Amplitude of the low-frequency texture field.
    pub texture_amp: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            shape: [64, 192, 192],
            spacing_mm: [1.0, 1.0, 1.0],
            structure_scale: 0.82,
            noise_level: 0.05,
            signal_coeff: 0.5,
            rho_range_mm: [8.0, 32.0],
            label_noise: 0.8,
            texture_amp: 0.08,
        }
    }
}

impl PhantomConfig {
    fn validate(&self) -> Result<(), ImagingError> {
        if self.shape.iter().any(|&d| d == 0) {
            return Err(ImagingError::BadPhantomConfig(format!(
                "shape must be positive, got {:?}",
                self.shape
            )));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(ImagingError::BadPhantomConfig(format!(
                "spacing must be positive, got {:?}",
                self.spacing_mm
            )));
        }
        if !(self.structure_scale > 0.0 && self.structure_scale <= 1.0) {
            return Err(ImagingError::BadPhantomConfig(
                "structure_scale must lie in (0, 1]".into(),
            ));
        }
        if self.rho_range_mm[0] > self.rho_range_mm[1] || self.rho_range_mm[0] < 0.0 {
            return Err(ImagingError::BadPhantomConfig(format!(
                "invalid rho range {:?}",
                self.rho_range_mm
            )));
        }
        Ok(())
    }
}

/// Per-subject phantom parameters, sampled deterministically from a seed.
#[derive(Debug, Clone)]
pub struct PhantomParams {
    /// Head center in mm (z, y, x).
    pub center_mm: [f64; 3],
    /// Head semi-axes in mm (z, y, x).
    pub semi_axes_mm: [f64; 3],
    /// Cavity in-plane radius in mm.
    pub rho_mm: f64,
    /// Month-12 score implied by rho and the label noise draw.
    pub cdr_sb_month12: f64,
    /// Texture wave vectors (cycles/mm) and phases.
    texture: [( [f64; 3], f64); 3],
    noise_seed: u64,
}

/// Sample per-subject parameters and the planted label without rendering
/// voxels. Cheap; used for cohort construction and for checking the planted
/// signal.
pub fn sample_phantom_params(
    config: &PhantomConfig,
    seed: u64,
) -> Result<PhantomParams, ImagingError> {
    config.validate()?;
    let mut rng = seeded_rng(seed, "phantom-params", 0);

    let extent = [
        config.shape[0] as f64 * config.spacing_mm[0],
        config.shape[1] as f64 * config.spacing_mm[1],
        config.shape[2] as f64 * config.spacing_mm[2],
    ];
    let in_plane = extent[1].min(extent[2]);
    let nominal = [
        0.5 * config.structure_scale * extent[0],
        0.5 * config.structure_scale * in_plane,
        0.5 * config.structure_scale * in_plane,
    ];

    let mut semi_axes = [0.0; 3];
    for (axis, &nom) in semi_axes.iter_mut().zip(&nominal) {
        *axis = nom * rng.random_range(0.92..1.08);
    }
    let mut center = [0.0; 3];
    for (c, &e) in center.iter_mut().zip(&extent) {
        *c = 0.5 * e + rng.random_range(-0.02..0.02) * e;
    }

    let rho_raw = if config.rho_range_mm[0] == config.rho_range_mm[1] {
        config.rho_range_mm[0]
    } else {
        rng.random_range(config.rho_range_mm[0]..config.rho_range_mm[1])
    };
    // keep the cavity strictly inside the head
    let rho = rho_raw.min(0.6 * semi_axes[1].min(semi_axes[2]));

    let label_eps = if config.label_noise > 0.0 {
        Normal::new(0.0, config.label_noise)
            .expect("valid normal")
            .sample(&mut rng)
    } else {
        0.0
    };
    let label = (config.signal_coeff * rho + label_eps).clamp(0.0, 18.0);

    let mut texture = [([0.0; 3], 0.0); 3];
    for wave in texture.iter_mut() {
        let wavelength = rng.random_range(20.0..60.0);
        let mut dir: [f64; 3] = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2])
            .sqrt()
            .max(1e-9);
        for d in dir.iter_mut() {
            *d /= norm * wavelength;
        }
        *wave = (dir, rng.random_range(0.0..std::f64::consts::TAU));
    }

    Ok(PhantomParams {
        center_mm: center,
        semi_axes_mm: semi_axes,
        rho_mm: rho,
        cdr_sb_month12: label,
        texture,
        noise_seed: seed,
    })
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Render a phantom volume and its planted month-12 score.
///
/// Deterministic per `(config, seed)`.
pub fn synthesize_volume<F: Scalar>(
    config: &PhantomConfig,
    seed: u64,
) -> Result<(VolumeGrid<F>, PhantomParams), ImagingError> {
    let params = sample_phantom_params(config, seed)?;
    let [nz, ny, nx] = config.shape;
    let [sz, sy, sx] = config.spacing_mm;

    let cavity_axes = [
        params.rho_mm * params.semi_axes_mm[0] / params.semi_axes_mm[2],
        params.rho_mm,
        params.rho_mm,
    ];

    let mut noise_rng = seeded_rng(params.noise_seed, "phantom-noise", 0);
    let head_noise = Normal::new(0.0, config.noise_level.max(1e-12)).expect("valid normal");
    let bg_noise = Normal::new(0.0, (0.25 * config.noise_level).max(1e-12)).expect("valid normal");

    let mut data = ndarray::Array3::<F>::zeros((nz, ny, nx));
    for z in 0..nz {
        let pz = z as f64 * sz;
        for y in 0..ny {
            let py = y as f64 * sy;
            for x in 0..nx {
                let px = x as f64 * sx;
                let dz = (pz - params.center_mm[0]) / params.semi_axes_mm[0];
                let dy = (py - params.center_mm[1]) / params.semi_axes_mm[1];
                let dx = (px - params.center_mm[2]) / params.semi_axes_mm[2];
                let head_r = (dz * dz + dy * dy + dx * dx).sqrt();
                // 1 inside the head, 0 outside, ~1.5 mm transition band
                let band = 1.5 / params.semi_axes_mm[2];
                let head = 1.0 - smoothstep(1.0 - band, 1.0 + band, head_r);

                let mut value;
                if head > 0.0 {
                    let mut tissue = 0.75 + 0.1 * (1.0 - head_r * head_r);
                    for (k, phase) in &params.texture {
                        tissue += config.texture_amp
                            * (std::f64::consts::TAU * (k[0] * pz + k[1] * py + k[2] * px)
                                + phase)
                                .sin();
                    }
                    let cz = (pz - params.center_mm[0]) / cavity_axes[0];
                    let cy = (py - params.center_mm[1]) / cavity_axes[1];
                    let cx = (px - params.center_mm[2]) / cavity_axes[2];
                    let cav_r = (cz * cz + cy * cy + cx * cx).sqrt();
                    let cav_band = 1.5 / cavity_axes[2].max(1e-9);
                    let cavity = 1.0 - smoothstep(1.0 - cav_band, 1.0 + cav_band, cav_r);
                    tissue = tissue * (1.0 - cavity) + 0.15 * cavity;
                    if config.noise_level > 0.0 {
                        tissue += head_noise.sample(&mut noise_rng);
                    }
                    value = head * tissue;
                    if head < 1.0 && config.noise_level > 0.0 {
                        value += (1.0 - head) * bg_noise.sample(&mut noise_rng);
                    }
                } else {
                    value = if config.noise_level > 0.0 {
                        bg_noise.sample(&mut noise_rng)
                    } else {
                        0.0
                    };
                }
                data[[z, y, x]] = F::cast(value);
            }
        }
    }

    let volume = VolumeGrid::new(data, config.spacing_mm, Orientation::RasPlus)?;
    Ok((volume, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> PhantomConfig {
        PhantomConfig {
            shape: [24, 48, 48],
            rho_range_mm: [3.0, 9.0],
            signal_coeff: 1.8,
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let cfg = small_config();
        let (a, pa) = synthesize_volume::<f32>(&cfg, 99).unwrap();
        let (b, pb) = synthesize_volume::<f32>(&cfg, 99).unwrap();
        assert_eq!(pa.cdr_sb_month12.to_bits(), pb.cdr_sb_month12.to_bits());
        assert_eq!(a.data.shape(), b.data.shape());
        assert!(a
            .data
            .iter()
            .zip(b.data.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn zero_noise_label_is_exact() {
        let cfg = PhantomConfig {
            label_noise: 0.0,
            rho_range_mm: [6.0, 6.0],
            signal_coeff: 2.0,
            ..small_config()
        };
        let params = sample_phantom_params(&cfg, 5).unwrap();
        assert_eq!(params.rho_mm, 6.0);
        assert_eq!(params.cdr_sb_month12, 12.0);
    }

    #[test]
    fn labels_stay_in_range_over_many_seeds() {
        let cfg = PhantomConfig {
            signal_coeff: 1.2,
            rho_range_mm: [0.0, 20.0],
            label_noise: 4.0,
            ..small_config()
        };
        for seed in 0..1000 {
            let p = sample_phantom_params(&cfg, seed).unwrap();
            assert!(
                (0.0..=18.0).contains(&p.cdr_sb_month12),
                "label {} out of range at seed {seed}",
                p.cdr_sb_month12
            );
        }
    }

    #[test]
    fn planted_signal_correlates_with_label() {
        // low label noise relative to the signal spread
        let cfg = PhantomConfig {
            signal_coeff: 0.5,
            rho_range_mm: [8.0, 32.0],
            label_noise: 0.1 * 0.5 * (32.0f64 - 8.0) / 12f64.sqrt(),
            ..PhantomConfig::default()
        };
        let mut rhos = Vec::new();
        let mut labels = Vec::new();
        for seed in 0..500 {
            let p = sample_phantom_params(&cfg, seed).unwrap();
            rhos.push(p.rho_mm);
            labels.push(p.cdr_sb_month12);
        }
        let r = crate::metrics::pearson_r(&rhos, &labels).unwrap();
        assert!(r >= 0.9, "corr(rho, label) = {r}");
    }

    #[test]
    fn rejects_bad_shapes() {
        let cfg = PhantomConfig {
            shape: [0, 16, 16],
            ..PhantomConfig::default()
        };
        assert!(synthesize_volume::<f32>(&cfg, 1).is_err());
    }

    #[test]
    fn cavity_darker_than_tissue() {
        let cfg = PhantomConfig {
            noise_level: 0.0,
            texture_amp: 0.0,
            rho_range_mm: [9.0, 9.0],
            ..small_config()
        };
        let (vol, params) = synthesize_volume::<f64>(&cfg, 3).unwrap();
        let [nz, ny, nx] = vol.dims();
        let center_val = vol.data[[nz / 2, ny / 2, nx / 2]];
        // midway between cavity edge and head edge along +y
        let ring_y = ((params.center_mm[1] + 0.5 * (params.rho_mm + params.semi_axes_mm[1]))
            / vol.spacing_mm[1])
            .round() as usize;
        let ring_val = vol.data[[nz / 2, ring_y.min(ny - 1), nx / 2]];
        assert!(center_val < 0.3, "cavity voxel {center_val}");
        assert!(ring_val > 0.5, "tissue voxel {ring_val}");
    }
}
