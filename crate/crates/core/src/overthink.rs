//! Pre-generation overthink detection.
//!
//! The detection statistic is the probe's predicted reasoning length for the
//! `<think>`-position activation; a question is flagged when that prediction
//! exceeds a threshold calibrated on ordinary questions.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mock::{self, MockPlannerSpec, MockQuestion};
use crate::probe::LinearProbe;
use crate::stats;
use crate::trace::{ActivationRecord, TraceDataset};

pub const DETECTION_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_QUANTILE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionPair {
    pub pair_id: String,
    pub vanilla: ActivationRecord,
    pub overthink: ActivationRecord,
}

/// One line of the pairing manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairManifestEntry {
    pub pair_id: String,
    pub vanilla_question_id: String,
    pub overthink_question_id: String,
}

/// Resolves manifest ids against a trace.
pub fn pairs_from_manifest(dataset: &TraceDataset, manifest: &[PairManifestEntry]) -> Result<Vec<QuestionPair>> {
    let mut seen = HashSet::new();
    manifest
        .iter()
        .map(|e| {
            if !seen.insert(e.pair_id.as_str()) {
                return Err(Error::Config(format!("duplicate pair id {:?}", e.pair_id)));
            }
            let get = |id: &str| {
                dataset
                    .find(id)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("pair {:?}: question {id:?} not in trace", e.pair_id)))
            };
            Ok(QuestionPair {
                pair_id: e.pair_id.clone(),
                vanilla: get(&e.vanilla_question_id)?,
                overthink: get(&e.overthink_question_id)?,
            })
        })
        .collect()
}

/// Probe prediction for one record, reading the probe's layer.
pub fn predict_record(probe: &LinearProbe, record: &ActivationRecord) -> Result<f64> {
    let d = probe.weights.len();
    let start = probe.layer * d;
    if d == 0 || record.activations.len() % d != 0 || start + d > record.activations.len() {
        return Err(Error::DimensionMismatch {
            expected: (probe.layer + 1) * d,
            actual: record.activations.len(),
        });
    }
    probe.predict_row(&record.activations[start..start + d])
}

/// Empirical `quantile` of the probe's predictions over `calibration`.
pub fn calibrate_threshold(probe: &LinearProbe, calibration: &TraceDataset, quantile: f64) -> Result<f64> {
    if calibration.is_empty() {
        return Err(Error::Empty("calibration set".into()));
    }
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::Config(format!("quantile must lie in (0, 1], got {quantile}")));
    }
    let preds = calibration
        .records()
        .iter()
        .map(|r| predict_record(probe, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(stats::quantile(&preds, quantile).expect("non-empty, valid quantile"))
}

/// `(predicted > tau, predicted)`.
pub fn detect(probe: &LinearProbe, record: &ActivationRecord, tau: f64) -> Result<(bool, f64)> {
    let predicted = predict_record(probe, record)?;
    Ok((predicted > tau, predicted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDetection {
    pub pair_id: String,
    pub predicted_vanilla: f64,
    pub predicted_overthink: f64,
    pub flagged_vanilla: bool,
    pub flagged_overthink: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub schema_version: u32,
    pub layer: usize,
    pub threshold: f64,
    pub per_pair: Vec<PairDetection>,
    pub pair_separation_rate: f64,
    pub auc: f64,
    pub detection_rate_at_threshold: f64,
    pub false_positive_rate: f64,
}

pub fn paired_eval(probe: &LinearProbe, pairs: &[QuestionPair], tau: f64) -> Result<DetectionReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("question pairs".into()));
    }
    let per_pair = pairs
        .par_iter()
        .map(|p| {
            let (flagged_vanilla, predicted_vanilla) = detect(probe, &p.vanilla, tau)?;
            let (flagged_overthink, predicted_overthink) = detect(probe, &p.overthink, tau)?;
            Ok(PairDetection {
                pair_id: p.pair_id.clone(),
                predicted_vanilla,
                predicted_overthink,
                flagged_vanilla,
                flagged_overthink,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(probe.layer, tau, per_pair))
}

fn summarize(layer: usize, threshold: f64, per_pair: Vec<PairDetection>) -> DetectionReport {
    let n = per_pair.len() as f64;
    let frac = |f: &dyn Fn(&PairDetection) -> bool| per_pair.iter().filter(|p| f(p)).count() as f64 / n;
    let pos: Vec<f64> = per_pair.iter().map(|p| p.predicted_overthink).collect();
    let neg: Vec<f64> = per_pair.iter().map(|p| p.predicted_vanilla).collect();
    DetectionReport {
        schema_version: DETECTION_SCHEMA_VERSION,
        layer,
        threshold,
        pair_separation_rate: frac(&|p| p.predicted_overthink > p.predicted_vanilla),
        auc: stats::auc(&pos, &neg).expect("non-empty pairs"),
        detection_rate_at_threshold: frac(&|p| p.flagged_overthink),
        false_positive_rate: frac(&|p| p.flagged_vanilla),
        per_pair,
    }
}

/// Synthetic overthink pairs: for each index, a vanilla question at `level`
/// and a variant whose planning projection is pushed up by `boost` (scaled
/// by the layer gains). The two draw independent noise.
pub fn build_mock_pairs(
    spec: &MockPlannerSpec,
    level: u32,
    n_pairs: usize,
    boost: f64,
) -> Result<(TraceDataset, Vec<PairManifestEntry>)> {
    if n_pairs == 0 {
        return Err(Error::Config("n_pairs must be >= 1".into()));
    }
    let mut questions = Vec::with_capacity(2 * n_pairs);
    let mut manifest = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs as u32 {
        let vanilla = MockQuestion {
            level,
            index: i,
            boost: 0.0,
            stream: 1,
        };
        let overthink = MockQuestion {
            boost,
            stream: 2,
            ..vanilla
        };
        manifest.push(PairManifestEntry {
            pair_id: format!("P{i:05}"),
            vanilla_question_id: vanilla.question_id(),
            overthink_question_id: overthink.question_id(),
        });
        questions.push(vanilla);
        questions.push(overthink);
    }
    Ok((mock::build_questions(spec, &questions)?, manifest))
}

/// Fresh vanilla questions at `level` for threshold calibration, on a noise
/// stream disjoint from training and pair data.
pub fn build_mock_calibration(spec: &MockPlannerSpec, level: u32, count: usize) -> Result<TraceDataset> {
    let questions: Vec<MockQuestion> = (0..count as u32)
        .map(|index| MockQuestion {
            level,
            index,
            boost: 0.0,
            stream: 3,
        })
        .collect();
    mock::build_questions(spec, &questions)
}
