//! Cohort ingestion, inclusion filtering, and split construction.
//!
//! Manifests are JSON-lines files, one subject per line. Splits follow the
//! 90/10 rule for the self-supervised pool and the 30% held-out rule for the
//! fine-tuning pool, with the remainder partitioned into stratified folds
//! keyed by `(study, month-12 score quartile)`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::seeded_rng;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("manifest not found: {0}")]
    MissingFile(String),
    #[error("line {line}: field `{field}`: {message}")]
    SchemaViolation {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("duplicate subject_id `{id}` (lines {first} and {second})")]
    DuplicateSubject {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("study `{study}` is an out-study test set but carries `{flag}`")]
    BadStudyRole { study: String, flag: String },
    #[error("{pool} pool has {got} records, need at least {need}")]
    PoolTooSmall {
        pool: String,
        got: usize,
        need: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Disease stage at baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Prodromal,
    Mild,
    Other,
}

/// One subject: imaging reference, baseline covariates, month-12 label.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub study: String,
    pub image_ref: String,
    pub cdr_sb_baseline: f64,
    pub cdr_sb_month12: Option<f64>,
    pub mmse: Option<i32>,
    pub amyloid_positive: Option<bool>,
    pub stage: Option<Stage>,
}

/// Which pipeline stages a study participates in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleFlags {
    pub ssl: bool,
    pub finetune: bool,
    pub in_study_test: bool,
    pub out_study_test: bool,
}

impl RoleFlags {
    /// Development study: contributes to SSL, fine-tuning, and in-study test.
    pub fn development() -> Self {
        Self {
            ssl: true,
            finetune: true,
            in_study_test: true,
            out_study_test: false,
        }
    }

    pub fn ssl_only() -> Self {
        Self {
            ssl: true,
            ..Self::default()
        }
    }

    pub fn out_study() -> Self {
        Self {
            out_study_test: true,
            ..Self::default()
        }
    }
}

/// Parsed manifest plus per-study role flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<SubjectRecord>,
    pub study_roles: BTreeMap<String, RoleFlags>,
}

impl DatasetManifest {
    /// Attach role flags, enforcing that out-study test studies carry no
    /// ssl and no finetune flag.
    pub fn with_roles(mut self, roles: BTreeMap<String, RoleFlags>) -> Result<Self, CohortError> {
        validate_roles(&roles)?;
        self.study_roles = roles;
        Ok(self)
    }

    fn roles_for(&self, study: &str) -> RoleFlags {
        self.study_roles.get(study).copied().unwrap_or_default()
    }
}

fn validate_roles(roles: &BTreeMap<String, RoleFlags>) -> Result<(), CohortError> {
    for (study, flags) in roles {
        if flags.out_study_test && (flags.ssl || flags.finetune) {
            let flag = if flags.ssl { "ssl" } else { "finetune" };
            return Err(CohortError::BadStudyRole {
                study: study.clone(),
                flag: flag.to_string(),
            });
        }
    }
    Ok(())
}

fn validate_record(record: &SubjectRecord, line: usize) -> Result<(), CohortError> {
    let check_range = |field: &str, value: f64| -> Result<(), CohortError> {
        if !(0.0..=18.0).contains(&value) {
            return Err(CohortError::SchemaViolation {
                line,
                field: field.to_string(),
                message: format!("value {value} outside [0, 18]"),
            });
        }
        Ok(())
    };
    check_range("cdr_sb_baseline", record.cdr_sb_baseline)?;
    if let Some(v) = record.cdr_sb_month12 {
        check_range("cdr_sb_month12", v)?;
    }
    if let Some(m) = record.mmse {
        if !(0..=30).contains(&m) {
            return Err(CohortError::SchemaViolation {
                line,
                field: "mmse".to_string(),
                message: format!("value {m} outside [0, 30]"),
            });
        }
    }
    if record.subject_id.is_empty() {
        return Err(CohortError::SchemaViolation {
            line,
            field: "subject_id".to_string(),
            message: "must be nonempty".to_string(),
        });
    }
    Ok(())
}

/// Parse a JSON-lines manifest. Every study found is given full development
/// roles; use [`DatasetManifest::with_roles`] to assign real ones.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, CohortError> {
    let file = std::fs::File::open(path)
        .map_err(|_| CohortError::MissingFile(path.display().to_string()))?;
    let reader = std::io::BufReader::new(file);

    let mut records = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let record: SubjectRecord =
            serde_json::from_str(&text).map_err(|e| CohortError::ParseError {
                line: line_no,
                message: e.to_string(),
            })?;
        validate_record(&record, line_no)?;
        if let Some(&first) = seen.get(&record.subject_id) {
            return Err(CohortError::DuplicateSubject {
                id: record.subject_id.clone(),
                first,
                second: line_no,
            });
        }
        seen.insert(record.subject_id.clone(), line_no);
        records.push(record);
    }

    let mut study_roles = BTreeMap::new();
    for r in &records {
        study_roles
            .entry(r.study.clone())
            .or_insert_with(RoleFlags::development);
    }
    Ok(DatasetManifest {
        records,
        study_roles,
    })
}

/// Write a manifest as JSON lines.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), CohortError> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in &manifest.records {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Exclusion counts from [`filter_cohort`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub retained: usize,
    pub excluded_missing_field: usize,
    pub excluded_by_criteria: usize,
}

fn passes_filter(record: &SubjectRecord) -> Option<bool> {
    let amyloid = record.amyloid_positive?;
    let mmse = record.mmse?;
    let stage = record.stage?;
    Some(amyloid && mmse > 20 && matches!(stage, Stage::Prodromal | Stage::Mild))
}

/// Apply the inclusion filter: amyloid-positive, MMSE > 20, stage prodromal
/// or mild. Records missing any filter field are excluded and counted.
pub fn filter_cohort(manifest: &DatasetManifest) -> (DatasetManifest, FilterReport) {
    let mut report = FilterReport::default();
    let mut records = Vec::new();
    for record in &manifest.records {
        match passes_filter(record) {
            Some(true) => {
                report.retained += 1;
                records.push(record.clone());
            }
            Some(false) => report.excluded_by_criteria += 1,
            None => report.excluded_missing_field += 1,
        }
    }
    (
        DatasetManifest {
            records,
            study_roles: manifest.study_roles.clone(),
        },
        report,
    )
}

/// Split construction parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Fraction of the SSL pool used for training (the rest validates).
    pub ssl_train_fraction: f64,
    /// Fraction of the fine-tuning pool held out as in-study test.
    pub ft_test_fraction: f64,
    /// Number of cross-validation folds.
    pub folds: usize,
    /// Exclude fine-tuning subjects from the SSL pool.
    pub exclude_finetune_from_ssl: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ssl_train_fraction: 0.9,
            ft_test_fraction: 0.3,
            folds: 3,
            exclude_finetune_from_ssl: true,
        }
    }
}

/// One cross-validation fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// Subject-id assignment for every pipeline stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub ssl_train: Vec<String>,
    pub ssl_val: Vec<String>,
    pub ft_folds: Vec<FoldSplit>,
    pub ft_test_in_study: Vec<String>,
    pub ft_test_out_study: BTreeMap<String, Vec<String>>,
    pub seed: u64,
    pub warnings: Vec<String>,
}

fn quartile_bin(value: f64, quartiles: &[f64; 3]) -> usize {
    if value <= quartiles[0] {
        0
    } else if value <= quartiles[1] {
        1
    } else if value <= quartiles[2] {
        2
    } else {
        3
    }
}

fn quartiles(values: &mut [f64]) -> [f64; 3] {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite labels"));
    let q = |p: f64| -> f64 {
        let idx = p * (values.len() - 1) as f64;
        let lo = idx.floor() as usize;
        let hi = idx.ceil() as usize;
        let t = idx - lo as f64;
        values[lo] * (1.0 - t) + values[hi] * t
    };
    [q(0.25), q(0.5), q(0.75)]
}

/// Build the SSL, fine-tuning, and test splits.
///
/// The fine-tuning pool is the clinically filtered, labeled subset of
/// finetune-role studies; the SSL pool is every subject of ssl-role studies
/// (minus the fine-tuning pool when exclusion is configured). Deterministic
/// given `(manifest, config, seed)` regardless of record order.
pub fn build_splits(
    manifest: &DatasetManifest,
    config: &SplitConfig,
    seed: u64,
) -> Result<SplitAssignment, CohortError> {
    validate_roles(&manifest.study_roles)?;
    let (filtered, _) = filter_cohort(manifest);
    let eligible: BTreeSet<&str> = filtered
        .records
        .iter()
        .filter(|r| r.cdr_sb_month12.is_some())
        .map(|r| r.subject_id.as_str())
        .collect();

    // fine-tuning pool: eligible subjects of finetune-role studies
    let mut ft_pool: Vec<&SubjectRecord> = manifest
        .records
        .iter()
        .filter(|r| {
            manifest.roles_for(&r.study).finetune && eligible.contains(r.subject_id.as_str())
        })
        .collect();
    ft_pool.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));

    let ft_ids: BTreeSet<&str> = ft_pool.iter().map(|r| r.subject_id.as_str()).collect();

    // SSL pool: all subjects of ssl-role studies, minus fine-tuning subjects
    let mut ssl_pool: Vec<&str> = manifest
        .records
        .iter()
        .filter(|r| manifest.roles_for(&r.study).ssl)
        .filter(|r| !(config.exclude_finetune_from_ssl && ft_ids.contains(r.subject_id.as_str())))
        .map(|r| r.subject_id.as_str())
        .collect();
    ssl_pool.sort_unstable();

    if ssl_pool.len() < 2 {
        return Err(CohortError::PoolTooSmall {
            pool: "ssl".into(),
            got: ssl_pool.len(),
            need: 2,
        });
    }

    let mut warnings = Vec::new();

    // 90/10 SSL split
    let mut rng = seeded_rng(seed, "ssl-split", 0);
    ssl_pool.shuffle(&mut rng);
    let n_train = ((ssl_pool.len() as f64) * config.ssl_train_fraction).floor() as usize;
    let n_train = n_train.clamp(1, ssl_pool.len() - 1);
    let ssl_train: Vec<String> = ssl_pool[..n_train].iter().map(|s| s.to_string()).collect();
    let ssl_val: Vec<String> = ssl_pool[n_train..].iter().map(|s| s.to_string()).collect();

    // 30% in-study test, remainder into stratified folds
    let n_test = ((ft_pool.len() as f64) * config.ft_test_fraction).floor() as usize;
    let remainder = ft_pool.len().saturating_sub(n_test);
    if remainder < config.folds {
        return Err(CohortError::PoolTooSmall {
            pool: "finetune".into(),
            got: ft_pool.len(),
            need: config.folds + n_test,
        });
    }
    let mut rng = seeded_rng(seed, "ft-test", 0);
    let mut shuffled = ft_pool.clone();
    shuffled.shuffle(&mut rng);
    let mut ft_test_in_study: Vec<String> = shuffled[..n_test]
        .iter()
        .map(|r| r.subject_id.clone())
        .collect();
    ft_test_in_study.sort_unstable();
    let mut fold_pool: Vec<&SubjectRecord> = shuffled[n_test..].to_vec();
    fold_pool.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));

    // stratification key: (study, month-12 quartile bin)
    let mut labels: Vec<f64> = fold_pool
        .iter()
        .map(|r| r.cdr_sb_month12.expect("eligible records are labeled"))
        .collect();
    let qs = quartiles(&mut labels);

    let make_strata = |by_quartile: bool| -> BTreeMap<String, Vec<&SubjectRecord>> {
        let mut strata: BTreeMap<String, Vec<&SubjectRecord>> = BTreeMap::new();
        for r in &fold_pool {
            let key = if by_quartile {
                let bin = quartile_bin(r.cdr_sb_month12.expect("labeled"), &qs);
                format!("{}::q{bin}", r.study)
            } else {
                r.study.clone()
            };
            strata.entry(key).or_default().push(r);
        }
        strata
    };

    let mut strata = make_strata(true);
    if strata.values().any(|members| members.len() < config.folds) {
        let thin: Vec<String> = strata
            .iter()
            .filter(|(_, m)| m.len() < config.folds)
            .map(|(k, m)| format!("{k} ({} records)", m.len()))
            .collect();
        warnings.push(format!(
            "strata smaller than fold count: {}; degraded to study-only stratification",
            thin.join(", ")
        ));
        strata = make_strata(false);
    }

    // continuous round-robin across sorted strata keeps overall fold sizes
    // within one of each other
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); config.folds];
    let mut next_fold = 0usize;
    for (idx, (_key, members)) in strata.iter_mut().enumerate() {
        let mut rng = seeded_rng(seed, "fold-assign", idx as u64);
        members.shuffle(&mut rng);
        for member in members.iter() {
            folds[next_fold].push(member.subject_id.clone());
            next_fold = (next_fold + 1) % config.folds;
        }
    }

    let ft_folds: Vec<FoldSplit> = (0..config.folds)
        .map(|k| {
            let mut val = folds[k].clone();
            val.sort_unstable();
            let mut train: Vec<String> = folds
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != k)
                .flat_map(|(_, f)| f.iter().cloned())
                .collect();
            train.sort_unstable();
            FoldSplit { train, val }
        })
        .collect();

    // out-study test sets: eligible labeled subjects of out-study studies
    let mut ft_test_out_study: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (study, flags) in &manifest.study_roles {
        if flags.out_study_test {
            let mut ids: Vec<String> = manifest
                .records
                .iter()
                .filter(|r| &r.study == study && eligible.contains(r.subject_id.as_str()))
                .map(|r| r.subject_id.clone())
                .collect();
            ids.sort_unstable();
            ft_test_out_study.insert(study.clone(), ids);
        }
    }

    Ok(SplitAssignment {
        ssl_train,
        ssl_val,
        ft_folds,
        ft_test_in_study,
        ft_test_out_study,
        seed,
        warnings,
    })
}

/// Per-study counts and derived slice counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestStats {
    pub per_study: BTreeMap<String, usize>,
    pub total_subjects: usize,
    pub center_slice_images: usize,
    pub five_slice_images: usize,
}

/// Count subjects per study and derive slice counts per slicing mode.
pub fn manifest_stats(manifest: &DatasetManifest) -> ManifestStats {
    let mut per_study: BTreeMap<String, usize> = BTreeMap::new();
    for r in &manifest.records {
        *per_study.entry(r.study.clone()).or_default() += 1;
    }
    let total = manifest.records.len();
    ManifestStats {
        per_study,
        total_subjects: total,
        center_slice_images: total,
        five_slice_images: 5 * total,
    }
}
