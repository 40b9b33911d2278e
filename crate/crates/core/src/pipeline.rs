//! End-to-end orchestration: envelope to maps to features to a trained,
//! threshold-tuned model with its evaluation report.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{roc_auc, stratified_kfold_scores, tune_threshold, RocCurve, ThresholdPolicy, ThresholdReport, ThresholdRow};
use crate::envelope::{apply_tgc, detect_envelope, TgcPolicy};
use crate::error::{Error, Result};
use crate::imaging::{generate_maps, plan_windows, ParametricMaps, QcReport};
use crate::io::{load_annotations, load_rf_container, read_envelope, read_parametric_image};
use crate::model::{AnnotationSet, Dataset, EnvelopeImage, FeatureTable, FeatureVector, MapKind, ModelArtifact, ParametricImage};
use crate::morpho::morphometric_features;
use crate::phantom::CohortManifest;
use crate::regional::{assemble_feature_vector, RegionIndex};
use crate::selection::{rfecv_select, SelectionResult};
use crate::svm::{fit_model, DEFAULT_C};

/// Window sizes of the standard sweep, mm.
pub const SWEEP_WINDOWS_MM: [f64; 3] = [0.1875, 0.45, 0.75];

/// Reads an envelope, or an RF container which is TGC-corrected and envelope-detected.
pub fn load_envelope_input(path: &Path) -> Result<EnvelopeImage> {
    let name = path.to_string_lossy();
    if name.ends_with(".rfraw") || name.ends_with(".rfmeta.json") {
        let frame = load_rf_container(path)?;
        detect_envelope(&apply_tgc(&frame, TgcPolicy::DivideByGain))
    } else {
        read_envelope(path)
    }
}

/// File stem of the raster holding one map inside a maps directory.
pub fn map_path(dir: &Path, kind: MapKind) -> PathBuf {
    dir.join(format!("{}.pmap.raw", kind.tag()))
}

pub fn read_maps_dir(dir: &Path) -> Result<Vec<ParametricImage>> {
    MapKind::ALL.iter().map(|&k| read_parametric_image(&map_path(dir, k))).collect()
}

/// Checks that every region of `ann` covers enough pixels of the map grid.
pub fn check_regions(maps: &ParametricMaps, ann: &AnnotationSet) -> Result<()> {
    RegionIndex::new(maps.images[0].geometry(), ann).map(|_| ())
}

pub fn extract_features(maps: &[ParametricImage], ann: &AnnotationSet) -> Result<FeatureVector> {
    let morph = morphometric_features(ann.lesion_contour())?;
    assemble_feature_vector(maps, ann, morph)
}

/// Maps and feature vector of one mass at one window size.
pub fn process_mass(env: &EnvelopeImage, ann: &AnnotationSet, window_mm: f64) -> Result<(ParametricMaps, FeatureVector)> {
    let maps = generate_maps(env, &plan_windows(env, window_mm)?)?;
    let fv = extract_features(&maps.images, ann).map_err(|e| in_mass(ann.mass_id(), e))?;
    Ok((maps, fv))
}

fn in_mass(mass: &str, e: Error) -> Error {
    if e.is_io() {
        e
    } else {
        Error::invalid(format!("mass {mass}: {e}"))
    }
}

/// Feature rows for every mass of a cohort directory, in manifest order,
/// with the per-mass QC counts.
pub fn cohort_features(dir: &Path, manifest: &CohortManifest, window_mm: f64) -> Result<(FeatureTable, Vec<QcReport>)> {
    let rows = manifest
        .masses
        .par_iter()
        .map(|m| {
            let env = load_envelope_input(&m.image_path(dir))?;
            let ann = load_annotations(&m.annotation_path(dir))?;
            let (maps, fv) = process_mass(&env, &ann, window_mm)?;
            Ok((fv, maps.qc))
        })
        .collect::<Result<Vec<_>>>()?;
    let (fvs, qc) = rows.into_iter().unzip();
    Ok((FeatureTable::new(fvs), qc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub folds: usize,
    pub svm_c: f64,
    pub seed: u64,
    pub threshold_policy: ThresholdPolicy,
    /// Run recursive elimination; otherwise every column is used.
    pub select: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            folds: 5,
            svm_c: DEFAULT_C,
            seed: 0,
            threshold_policy: ThresholdPolicy::ZeroFnMaxAccuracy,
            select: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::invalid(format!("folds must be at least 2, got {}", self.folds)));
        }
        if !(self.svm_c > 0.0 && self.svm_c.is_finite()) {
            return Err(Error::invalid(format!("svm C must be positive, got {}", self.svm_c)));
        }
        let (benign, malignant) = data.class_counts();
        if benign < self.folds || malignant < self.folds {
            return Err(Error::invalid(format!(
                "degenerate class counts: {benign} benign, {malignant} malignant; each class needs at least {} members",
                self.folds
            )));
        }
        if data.n_features() < 2 && self.select {
            return Err(Error::invalid("feature selection needs at least 2 features"));
        }
        Ok(())
    }
}

/// The chosen operating point, with the confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    #[serde(with = "crate::io::extended_f64")]
    pub threshold: f64,
    #[serde(rename = "FN")]
    pub fn_: usize,
    #[serde(rename = "TN")]
    pub tn: usize,
    #[serde(rename = "FP")]
    pub fp: usize,
    #[serde(rename = "TP")]
    pub tp: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

impl From<&ThresholdRow> for OperatingPoint {
    fn from(r: &ThresholdRow) -> Self {
        OperatingPoint {
            threshold: r.threshold,
            fn_: r.fn_,
            tn: r.tn,
            fp: r.fp,
            tp: r.tp,
            sensitivity: r.sensitivity,
            specificity: r.specificity,
            accuracy: r.accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub benign: usize,
    pub malignant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: TrainConfig,
    pub n_samples: usize,
    pub class_counts: ClassCounts,
    pub selected_features: Vec<String>,
    /// Pooled out-of-fold AUC.
    pub auc: f64,
    /// Pooled out-of-fold accuracy at the SVM's own boundary (score 0).
    pub accuracy_at_zero: f64,
    pub operating_point: OperatingPoint,
    pub thresholds: Vec<OperatingPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelArtifact,
    pub selection: Option<SelectionResult>,
    pub roc: RocCurve,
    pub thresholds: ThresholdReport,
    pub report: EvaluationReport,
}

/// Selection, pooled out-of-fold scoring, ROC, threshold tuning, and a final
/// model fit on all rows with the tuned threshold.
pub fn train_and_evaluate(data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate(data)?;
    let selection = if config.select {
        Some(rfecv_select(data, config.folds, config.seed, config.svm_c)?)
    } else {
        None
    };
    let selected = selection.as_ref().map_or_else(|| data.names.clone(), |s| s.selected.clone());
    let sub = data.select_named(&selected)?;
    let scores = stratified_kfold_scores(&sub, config.folds, config.seed, config.svm_c)?;
    let roc = roc_auc(&scores, &sub.labels)?;
    let thresholds = tune_threshold(&scores, &sub.labels, config.threshold_policy)?;
    let y: Vec<f64> = sub.labels.iter().map(|l| l.sign()).collect();
    let mut model = fit_model(sub.x.view(), &y, &sub.names, config.svm_c)?;
    model.decision_threshold = thresholds.chosen_row().threshold;
    model.validate()?;

    let correct_at_zero = scores
        .iter()
        .zip(&sub.labels)
        .filter(|(&s, l)| (s > 0.0) == l.is_positive())
        .count();
    let (benign, malignant) = sub.class_counts();
    let report = EvaluationReport {
        config: config.clone(),
        n_samples: sub.n_samples(),
        class_counts: ClassCounts { benign, malignant },
        selected_features: selected,
        auc: roc.auc,
        accuracy_at_zero: correct_at_zero as f64 / sub.n_samples() as f64,
        operating_point: thresholds.chosen_row().into(),
        thresholds: thresholds.rows.iter().map(OperatingPoint::from).collect(),
    };
    Ok(TrainOutcome {
        model,
        selection,
        roc,
        thresholds,
        report,
    })
}
