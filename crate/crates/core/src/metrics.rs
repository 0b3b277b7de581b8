//! Evaluation statistics: coefficient of determination, Pearson correlation,
//! MSE, residual histograms, cross-validation aggregation, and Steiger's Z1
//! test for comparing two dependent correlations that share one variable.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: y has {0} entries, yhat has {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },
    #[error("undefined total sum of squares: y is constant")]
    ConstantTruth,
    #[error("constant input: correlation undefined")]
    ConstantInput,
    #[error("correlation {0} outside the open interval (-1, 1)")]
    CorrelationOutOfRange(f64),
    #[error("correlation triple (r12={0}, r13={1}, r23={2}) is not positive semi-definite")]
    NotPositiveSemiDefinite(f64, f64, f64),
    #[error("histogram needs at least one bin")]
    NoBins,
}

/// Predictions of one model on one evaluation set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionSet {
    pub y_true: Vec<f64>,
    pub y_pred: Vec<f64>,
    pub fold_id: usize,
    pub model_tag: String,
}

/// Point metrics of a single fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub r2: f64,
    pub r: f64,
    pub mse: f64,
}

/// Mean and sample standard deviation of one metric across folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

/// Residual frequency distribution with summary moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
    pub sd: f64,
}

/// Steiger Z1 comparison of two dependent correlations.
///
/// `r12`/`r13` correlate ground truth with models A and B; `r23` correlates
/// the two models' predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteigerResult {
    pub model_a: String,
    pub model_b: String,
    pub r12: f64,
    pub r13: f64,
    pub r23: f64,
    pub n: usize,
    pub z: f64,
    pub p_two_tailed: f64,
}

/// Per-fold metrics plus aggregates, residual histogram, and significance
/// tests; the JSON-serialized evaluation artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_fold: Vec<FoldMetrics>,
    pub r2: MeanSd,
    pub r: MeanSd,
    pub mse: MeanSd,
    pub single_fold: bool,
    pub residual_hist: Option<ResidualHistogram>,
    pub significance: Vec<SteigerResult>,
}

fn check_lengths<F>(y: &[F], yhat: &[F], min: usize) -> Result<(), MetricsError> {
    if y.len() != yhat.len() {
        return Err(MetricsError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.len() < min {
        return Err(MetricsError::TooFewSamples {
            required: min,
            got: y.len(),
        });
    }
    Ok(())
}

fn mean_of<F: Scalar>(xs: &[F]) -> F {
    xs.iter().copied().sum::<F>() / F::cast_usize(xs.len())
}

/// Coefficient of determination `1 - SSres/SStot`. May be negative.
pub fn r_squared<F: Scalar>(y: &[F], yhat: &[F]) -> Result<F, MetricsError> {
    check_lengths(y, yhat, 2)?;
    let ybar = mean_of(y);
    let ss_tot: F = y.iter().map(|&v| (v - ybar) * (v - ybar)).sum();
    if ss_tot == F::zero() {
        return Err(MetricsError::ConstantTruth);
    }
    let ss_res: F = y
        .iter()
        .zip(yhat)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(F::one() - ss_res / ss_tot)
}

/// Sample Pearson correlation coefficient.
pub fn pearson_r<F: Scalar>(y: &[F], yhat: &[F]) -> Result<F, MetricsError> {
    check_lengths(y, yhat, 2)?;
    let my = mean_of(y);
    let mx = mean_of(yhat);
    let mut sxy = F::zero();
    let mut syy = F::zero();
    let mut sxx = F::zero();
    for (&a, &b) in y.iter().zip(yhat) {
        let da = a - my;
        let db = b - mx;
        sxy += da * db;
        syy += da * da;
        sxx += db * db;
    }
    if syy == F::zero() || sxx == F::zero() {
        return Err(MetricsError::ConstantInput);
    }
    Ok(sxy / (syy * sxx).sqrt())
}

/// Mean squared error.
pub fn mse<F: Scalar>(y: &[F], yhat: &[F]) -> Result<F, MetricsError> {
    check_lengths(y, yhat, 1)?;
    let ss: F = y
        .iter()
        .zip(yhat)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(ss / F::cast_usize(y.len()))
}

/// Fisher z-transform `atanh(r)`; requires `|r| < 1`.
pub fn fisher_z<F: Scalar>(r: F) -> Result<F, MetricsError> {
    if r.abs() >= F::one() {
        return Err(MetricsError::CorrelationOutOfRange(r.as_f64()));
    }
    let one = F::one();
    Ok(((one + r) / (one - r)).ln() / F::cast(2.0))
}

fn validate_correlation(r: f64) -> Result<(), MetricsError> {
    if !(r.abs() < 1.0) {
        return Err(MetricsError::CorrelationOutOfRange(r));
    }
    Ok(())
}

/// Steiger's Z1 statistic (pooled-backtransform variant) for the difference
/// between two dependent correlations sharing one variable.
///
/// The Fisher-transformed difference `z(r12) - z(r13)` is scaled by the
/// asymptotic covariance of the two transformed correlations, evaluated at
/// the backtransformed mean of the two z values.
pub fn steiger_z1(
    r12: f64,
    r13: f64,
    r23: f64,
    n: usize,
) -> Result<SteigerResult, MetricsError> {
    if n < 4 {
        return Err(MetricsError::TooFewSamples { required: 4, got: n });
    }
    validate_correlation(r12)?;
    validate_correlation(r13)?;
    validate_correlation(r23)?;
    // det of the implied 3x3 correlation matrix
    let det = 1.0 + 2.0 * r12 * r13 * r23 - r12 * r12 - r13 * r13 - r23 * r23;
    if det < -1e-12 {
        return Err(MetricsError::NotPositiveSemiDefinite(r12, r13, r23));
    }

    let z12 = fisher_z(r12)?;
    let z13 = fisher_z(r13)?;
    let rbar = ((z12 + z13) / 2.0).tanh();
    let rbar2 = rbar * rbar;
    let psi = r23 * (1.0 - 2.0 * rbar2) - 0.5 * rbar2 * (1.0 - 2.0 * rbar2 - r23 * r23);
    let s = psi / ((1.0 - rbar2) * (1.0 - rbar2));
    let z = (z12 - z13) * ((n as f64 - 3.0) / (2.0 - 2.0 * s)).sqrt();

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p = 2.0 * (1.0 - normal.cdf(z.abs()));

    Ok(SteigerResult {
        model_a: String::new(),
        model_b: String::new(),
        r12,
        r13,
        r23,
        n,
        z,
        p_two_tailed: p.clamp(0.0, 1.0),
    })
}

/// Residuals `e = yhat - y` binned uniformly over their range.
///
/// A degenerate range (all residuals equal) is widened to `value ± 0.5` so
/// the spike lands in an interior bin.
pub fn residual_stats(y: &[f64], yhat: &[f64], bins: usize) -> Result<ResidualHistogram, MetricsError> {
    check_lengths(y, yhat, 1)?;
    if bins == 0 {
        return Err(MetricsError::NoBins);
    }
    let residuals: Vec<f64> = yhat.iter().zip(y).map(|(&p, &t)| p - t).collect();
    let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
    let sd = if residuals.len() > 1 {
        let ss: f64 = residuals.iter().map(|e| (e - mean) * (e - mean)).sum();
        (ss / (residuals.len() as f64 - 1.0)).sqrt()
    } else {
        0.0
    };

    let mut lo = residuals.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut edges = Vec::with_capacity(bins + 1);
    for i in 0..=bins {
        edges.push(lo + width * i as f64);
    }
    let mut counts = vec![0usize; bins];
    for &e in &residuals {
        let idx = (((e - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }

    Ok(ResidualHistogram {
        bin_edges: edges,
        counts,
        mean,
        sd,
    })
}

fn mean_sd(values: &[f64]) -> MeanSd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanSd { mean, sd }
}

/// Unweighted mean and sample standard deviation across folds per metric.
pub fn aggregate_folds(per_fold: &[FoldMetrics]) -> Result<MetricsReport, MetricsError> {
    if per_fold.is_empty() {
        return Err(MetricsError::TooFewSamples { required: 1, got: 0 });
    }
    let r2s: Vec<f64> = per_fold.iter().map(|f| f.r2).collect();
    let rs: Vec<f64> = per_fold.iter().map(|f| f.r).collect();
    let mses: Vec<f64> = per_fold.iter().map(|f| f.mse).collect();
    Ok(MetricsReport {
        per_fold: per_fold.to_vec(),
        r2: mean_sd(&r2s),
        r: mean_sd(&rs),
        mse: mean_sd(&mses),
        single_fold: per_fold.len() == 1,
        residual_hist: None,
        significance: Vec::new(),
    })
}

/// Fold metrics of one prediction set.
pub fn fold_metrics(set: &PredictionSet) -> Result<FoldMetrics, MetricsError> {
    Ok(FoldMetrics {
        r2: r_squared(&set.y_true, &set.y_pred)?,
        r: pearson_r(&set.y_true, &set.y_pred)?,
        mse: mse(&set.y_true, &set.y_pred)?,
    })
}

/// Star annotation for a two-tailed p-value: `*` p<0.05, `**` p<0.01,
/// `***` p<0.001.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Write the pairwise significance grid as CSV: one row and column per model
/// tag, cells `p-value + stars`, diagonal `-`.
pub fn write_significance_grid<W: std::io::Write>(
    tags: &[String],
    results: &[SteigerResult],
    writer: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["model".to_string()];
    header.extend(tags.iter().cloned());
    w.write_record(&header)?;
    for a in tags {
        let mut row = vec![a.clone()];
        for b in tags {
            if a == b {
                row.push("-".to_string());
                continue;
            }
            let cell = results
                .iter()
                .find(|r| (&r.model_a == a && &r.model_b == b) || (&r.model_a == b && &r.model_b == a))
                .map(|r| format!("{:.4}{}", r.p_two_tailed, significance_stars(r.p_two_tailed)))
                .unwrap_or_else(|| "".to_string());
            row.push(cell);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn r_squared_worked_examples() {
        let y = [0.0, 1.0, 2.0];
        assert_abs_diff_eq!(r_squared(&y, &y).unwrap(), 1.0, epsilon = 1e-12);
        let ybar = [1.0, 1.0, 1.0];
        assert_abs_diff_eq!(r_squared(&y, &ybar).unwrap(), 0.0, epsilon = 1e-12);
        // SSres = 1, SStot = 2
        assert_abs_diff_eq!(r_squared(&y, &[0.0, 1.0, 1.0]).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn r_squared_rejects_constant_truth() {
        assert!(matches!(
            r_squared(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(MetricsError::ConstantTruth)
        ));
    }

    #[test]
    fn r_squared_accepts_negative_values() {
        let y = [0.0, 1.0, 2.0];
        let bad = [5.0, -7.0, 9.0];
        assert!(r_squared(&y, &bad).unwrap() < 0.0);
    }

    #[test]
    fn pearson_worked_examples() {
        let y = [1.0, 2.0, 3.0];
        let scaled: Vec<f64> = y.iter().map(|v| 2.0 * v + 3.0).collect();
        assert_abs_diff_eq!(pearson_r(&y, &scaled).unwrap(), 1.0, epsilon = 1e-12);
        let negated: Vec<f64> = y.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson_r(&y, &negated).unwrap(), -1.0, epsilon = 1e-12);
        let expected = 9.0 / 84f64.sqrt();
        assert_abs_diff_eq!(
            pearson_r(&y, &[1.0, 2.0, 4.0]).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mse_worked_examples() {
        assert_abs_diff_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(mse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(mse(&[0.0, 3.0], &[1.0, 1.0]).unwrap(), 2.5);
    }

    #[test]
    fn fisher_z_worked_examples() {
        assert_abs_diff_eq!(fisher_z(0.0f64).unwrap(), 0.0);
        assert_abs_diff_eq!(fisher_z(0.5f64).unwrap(), 0.5f64.atanh(), epsilon = 1e-12);
        assert_abs_diff_eq!(fisher_z(0.5f64).unwrap(), 0.549306, epsilon = 1e-6);
        assert!(fisher_z(1.0f64).is_err());
        assert!(fisher_z(-1.5f64).is_err());
    }

    #[test]
    fn steiger_zero_when_correlations_equal() {
        let res = steiger_z1(0.4, 0.4, 0.2, 50).unwrap();
        assert_eq!(res.z, 0.0);
        assert_abs_diff_eq!(res.p_two_tailed, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn steiger_antisymmetric_under_swap() {
        let a = steiger_z1(0.46, 0.33, 0.4, 300).unwrap();
        let b = steiger_z1(0.33, 0.46, 0.4, 300).unwrap();
        assert_abs_diff_eq!(a.z, -b.z, epsilon = 1e-12);
        assert_abs_diff_eq!(a.p_two_tailed, b.p_two_tailed, epsilon = 1e-12);
    }

    #[test]
    fn steiger_table_direction_example() {
        let res = steiger_z1(0.46, 0.33, 0.4, 300).unwrap();
        assert!(res.p_two_tailed < 0.05, "p = {}", res.p_two_tailed);
    }

    #[test]
    fn steiger_rejects_bad_inputs() {
        assert!(matches!(
            steiger_z1(0.4, 0.3, 0.2, 3),
            Err(MetricsError::TooFewSamples { .. })
        ));
        // r23 incompatible with r12, r13 both large positive
        assert!(matches!(
            steiger_z1(0.95, 0.95, -0.95, 30),
            Err(MetricsError::NotPositiveSemiDefinite(..))
        ));
    }

    #[test]
    fn residual_stats_examples() {
        let y = [1.0, 2.0, 3.0];
        let hist = residual_stats(&y, &y, 3).unwrap();
        assert_eq!(hist.counts.iter().sum::<usize>(), 3);
        assert_abs_diff_eq!(hist.mean, 0.0);
        assert_abs_diff_eq!(hist.sd, 0.0);
        // the zero spike sits in a single bin
        assert_eq!(hist.counts.iter().filter(|&&c| c > 0).count(), 1);

        // residuals {-1, +1} with 2 bins
        let hist = residual_stats(&[1.0, 1.0], &[0.0, 2.0], 2).unwrap();
        assert_eq!(hist.counts, vec![1, 1]);
        assert_abs_diff_eq!(hist.mean, 0.0);
        assert_abs_diff_eq!(hist.sd, 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn aggregate_folds_examples() {
        let folds = [
            FoldMetrics { r2: 0.1, r: 0.1, mse: 0.1 },
            FoldMetrics { r2: 0.2, r: 0.2, mse: 0.2 },
            FoldMetrics { r2: 0.3, r: 0.3, mse: 0.3 },
        ];
        let rep = aggregate_folds(&folds).unwrap();
        assert_abs_diff_eq!(rep.r2.mean, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.r2.sd, 0.1, epsilon = 1e-12);
        assert!(!rep.single_fold);

        let one = aggregate_folds(&folds[..1]).unwrap();
        assert_abs_diff_eq!(one.r2.mean, 0.1);
        assert_eq!(one.r2.sd, 0.0);
        assert!(one.single_fold);

        let permuted = [folds[2], folds[0], folds[1]];
        let rep2 = aggregate_folds(&permuted).unwrap();
        assert_abs_diff_eq!(rep2.r2.mean, rep.r2.mean, epsilon = 1e-12);
        assert_abs_diff_eq!(rep2.r2.sd, rep.r2.sd, epsilon = 1e-12);
    }

    #[test]
    fn stars_thresholds() {
        assert_eq!(significance_stars(0.0005), "***");
        assert_eq!(significance_stars(0.005), "**");
        assert_eq!(significance_stars(0.04), "*");
        assert_eq!(significance_stars(0.06), "");
    }

    // R² equals r² when predictions are the least-squares fit of y on the
    // predictor; the fit itself is the closed-form oracle.
    #[test]
    fn r_squared_equals_r_squared_of_fit() {
        let mut rng = crate::rng::seeded_rng(11, "metrics-fit", 0);
        use rand::Rng;
        for _ in 0..20 {
            let n = 32;
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = x
                .iter()
                .map(|&v| 1.5 * v + 0.3 + rng.random_range(-0.5..0.5))
                .collect();
            // closed-form least squares y ~ a + b x
            let mx = x.iter().sum::<f64>() / n as f64;
            let my = y.iter().sum::<f64>() / n as f64;
            let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
            let sxy: f64 = x.iter().zip(&y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
            let slope = sxy / sxx;
            let icept = my - slope * mx;
            let fit: Vec<f64> = x.iter().map(|&v| icept + slope * v).collect();
            let r2 = r_squared(&y, &fit).unwrap();
            let r = pearson_r(&y, &fit).unwrap();
            assert_abs_diff_eq!(r2, r * r, epsilon = 1e-10);
        }
    }

    proptest! {
        #[test]
        fn r_squared_invariant_under_common_permutation(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..20),
            seed in 0u64..1000,
        ) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let yhat: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(y.iter().any(|&v| v != y[0]));
            let base = r_squared(&y, &yhat).unwrap();

            use rand::seq::SliceRandom;
            let mut idx: Vec<usize> = (0..y.len()).collect();
            idx.shuffle(&mut crate::rng::seeded_rng(seed, "perm", 0));
            let py: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let ph: Vec<f64> = idx.iter().map(|&i| yhat[i]).collect();
            let permuted = r_squared(&py, &ph).unwrap();
            prop_assert!((base - permuted).abs() < 1e-9);
        }

        #[test]
        fn pearson_invariant_under_positive_affine_maps(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..20),
            a in 0.1f64..5.0, b in -3.0f64..3.0,
            c in 0.1f64..5.0, d in -3.0f64..3.0,
        ) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let yhat: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(y.iter().any(|&v| (v - y[0]).abs() > 1e-6));
            prop_assume!(yhat.iter().any(|&v| (v - yhat[0]).abs() > 1e-6));
            let base = pearson_r(&y, &yhat).unwrap();
            let ty: Vec<f64> = y.iter().map(|&v| a * v + b).collect();
            let th: Vec<f64> = yhat.iter().map(|&v| c * v + d).collect();
            let mapped = pearson_r(&ty, &th).unwrap();
            prop_assert!((base - mapped).abs() < 1e-9);
        }

        #[test]
        fn fisher_z_is_odd(r in -0.99f64..0.99) {
            let plus = fisher_z(r).unwrap();
            let minus = fisher_z(-r).unwrap();
            prop_assert!((plus + minus).abs() < 1e-12);
        }
    }
}
