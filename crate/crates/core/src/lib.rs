//! Cross-domain self-supervised pretraining and regression fine-tuning for
//! slice-based prognosis modeling.
//!
//! The crate covers the full desk-scale workflow: synthetic cohort and volume
//! generation, the standardization/slicing chain, three self-supervised
//! objectives (NT-Xent, Barlow Twins, SwAV) with checkpoint chaining across
//! domains, MSE fine-tuning with a linear head, evaluation statistics
//! (R², Pearson r, MSE, Steiger's Z1 for dependent correlations), GradCAM
//! saliency, and a resumable experiment pipeline driven by a declarative
//! config.
//!
//! Numeric code is generic over the scalar type (`f32`/`f64`) via the
//! [`Scalar`] trait; the aliases below pin the concrete types the pipeline
//! uses by default.

pub mod cohort;
pub mod imaging;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod regress;
pub mod rng;
pub mod saliency;
pub mod scalar;
pub mod ssl;

pub use scalar::Scalar;

/// Scalar used for training, image processing, and persisted voxel data.
pub type TrainScalar = f32;
/// Scalar used for evaluation statistics and significance tests.
pub type StatScalar = f64;

/// Volume grid at the pipeline's working precision.
pub type Volume = imaging::VolumeGrid<TrainScalar>;
/// Standardized 2D slice at the pipeline's working precision.
pub type Slice = imaging::SliceImage<TrainScalar>;
// pub type Network = nn::Network<TrainScalar>; // restored once nn lands

#[cfg(test)]
mod alias_checks {
    // aliases above must stay instantiable at both precisions
    #[allow(dead_code)]
    fn assert_scalar_impls<F: crate::Scalar>() {}
    #[test]
    fn scalar_impls_exist() {
        assert_scalar_impls::<f32>();
        assert_scalar_impls::<f64>();
    }
}
