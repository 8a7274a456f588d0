//! CSV and JSON report files.
//!
//! Every CSV carries a header row and every JSON document a `schema_version`,
//! so reports can be consumed without this crate.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::directions::{CosineMatrix, DirectionPrediction, DirectionSet, NormRow};
use crate::error::{Error, Result};
use crate::probe::LayerProbe;
use crate::steering::{EndedBy, GenerationOutcome, SweepReport};

pub const PROBES_JSON: &str = "probes.json";
pub const LAYER_CURVE_CSV: &str = "layer_curve.csv";
pub const DIRECTIONS_JSON: &str = "directions.json";
pub const COSINE_CSV: &str = "cosine_matrix.csv";
pub const LAYER_COSINE_CSV: &str = "layer_cosine.csv";
pub const NORMS_CSV: &str = "norms.csv";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const LOGITS_JSON: &str = "logits.json";
pub const GAMMA_CSV: &str = "gamma.csv";
pub const OVERTHINK_JSON: &str = "overthink.json";
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCurveRow {
    pub layer: usize,
    /// Empty when the correlation is undefined (constant predictions).
    pub pearson_r: Option<f64>,
    pub rmse: f64,
    pub n_test: usize,
    pub nonzero_weights: usize,
}

impl LayerCurveRow {
    pub fn from_probes(probes: &[LayerProbe]) -> Vec<Self> {
        probes
            .iter()
            .map(|p| Self {
                layer: p.layer,
                pearson_r: p.metrics.pearson_r,
                rmse: p.metrics.rmse,
                n_test: p.metrics.n_test,
                nonzero_weights: p.metrics.nonzero_weight_count,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineCell {
    pub layer: usize,
    pub row_level: u32,
    pub col_level: u32,
    pub cosine: f64,
}

impl CosineCell {
    pub fn from_matrix(m: &CosineMatrix) -> Vec<Self> {
        let mut out = Vec::with_capacity(m.levels.len() * m.levels.len());
        for (i, &a) in m.levels.iter().enumerate() {
            for (j, &b) in m.levels.iter().enumerate() {
                out.push(Self {
                    layer: m.layer,
                    row_level: a,
                    col_level: b,
                    cosine: m.values[i][j],
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCosineRow {
    pub layer: usize,
    pub mean_cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormCsvRow {
    pub layer: usize,
    pub to_level: u32,
    pub l2_norm: f64,
    /// Mean reasoning tokens of the target level, for the twin axis.
    pub mean_reasoning_tokens: Option<f64>,
}

impl NormCsvRow {
    pub fn from_norms(norms: &[NormRow], set: &DirectionSet) -> Vec<Self> {
        norms
            .iter()
            .map(|n| Self {
                layer: n.layer,
                to_level: n.to_level,
                l2_norm: n.l2_norm,
                mean_reasoning_tokens: set.level_mean_tokens.get(&n.to_level).copied(),
            })
            .collect()
    }
}

pub type PredictionRow = DirectionPrediction;

/// The sweep CSV shared with external generation tooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCsvRow {
    pub lambda: f64,
    pub mean_reasoning_tokens: f64,
    pub mean_answer_tokens: f64,
    pub score: Option<f64>,
    pub n: usize,
}

impl SweepCsvRow {
    pub fn from_report(report: &SweepReport) -> Vec<Self> {
        report
            .rows
            .iter()
            .map(|r| Self {
                lambda: r.lambda,
                mean_reasoning_tokens: r.mean_reasoning_tokens,
                mean_answer_tokens: r.mean_answer_tokens,
                score: r.score,
                n: r.n,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCsvRow {
    pub prompt_index: usize,
    pub gamma: f64,
    pub reasoning_token_count: u32,
    pub answer_token_count: u32,
    pub ended_by: EndedBy,
}

impl GammaCsvRow {
    pub fn from_outcomes(gamma: f64, outcomes: &[GenerationOutcome]) -> Vec<Self> {
        outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| Self {
                prompt_index: i,
                gamma,
                reasoning_token_count: o.reasoning_token_count,
                answer_token_count: o.answer_token_count,
                ended_by: o.ended_by,
            })
            .collect()
    }
}

fn malformed(path: &Path, reason: impl ToString) -> Error {
    Error::MalformedReport {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV with a header row; any parse problem is reported against the
/// file rather than as a bare CSV error.
pub fn read_csv<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| malformed(path, e))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| malformed(path, e))?;
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let f = File::open(path)?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| malformed(path, e))
}

pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepCsvRow>> {
    let path = path.as_ref();
    let rows: Vec<SweepCsvRow> = read_csv(path)?;
    if rows.is_empty() {
        return Err(malformed(path, "no rows"));
    }
    if let Some(r) = rows.iter().find(|r| !(r.lambda.is_finite() && r.mean_reasoning_tokens.is_finite())) {
        return Err(malformed(path, format!("non-finite value in row with lambda {}", r.lambda)));
    }
    if let Some(r) = rows.iter().find(|r| r.score.is_some_and(|s| !(0.0..=1.0).contains(&s))) {
        return Err(malformed(path, format!("score outside [0, 1] at lambda {}", r.lambda)));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sweep.csv");
        let rows = vec![
            SweepCsvRow {
                lambda: -0.2,
                mean_reasoning_tokens: 10.5,
                mean_answer_tokens: 10.0,
                score: None,
                n: 4,
            },
            SweepCsvRow {
                lambda: 0.2,
                mean_reasoning_tokens: 30.0,
                mean_answer_tokens: 10.0,
                score: Some(0.75),
                n: 4,
            },
        ];
        write_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("lambda,mean_reasoning_tokens,mean_answer_tokens,score,n\n"));
        assert!(text.contains("-0.2,10.5,10.0,,4"));
        assert_eq!(read_sweep_csv(&p).unwrap(), rows);
    }

    #[test]
    fn externally_written_sweep_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ext.csv");
        std::fs::write(&p, "lambda,mean_reasoning_tokens,mean_answer_tokens,score,n\n0,1200.5,300,0.5,8\n").unwrap();
        let rows = read_sweep_csv(&p).unwrap();
        assert_eq!(rows[0].n, 8);
        assert_eq!(rows[0].score, Some(0.5));

        std::fs::write(&p, "lambda,mean_reasoning_tokens\n0,1\n").unwrap();
        assert!(matches!(read_sweep_csv(&p), Err(Error::MalformedReport { .. })));
        std::fs::write(&p, "lambda,mean_reasoning_tokens,mean_answer_tokens,score,n\n0,1,1,2.0,1\n").unwrap();
        assert!(matches!(read_sweep_csv(&p), Err(Error::MalformedReport { .. })));
        std::fs::write(&p, "lambda,mean_reasoning_tokens,mean_answer_tokens,score,n\n").unwrap();
        assert!(read_sweep_csv(&p).is_err());
    }

    #[test]
    fn undefined_pearson_is_empty_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("curve.csv");
        let rows = vec![LayerCurveRow {
            layer: 0,
            pearson_r: None,
            rmse: 1.0,
            n_test: 5,
            nonzero_weights: 0,
        }];
        write_csv(&p, &rows).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().nth(1), Some("0,,1.0,5,0"));
        assert_eq!(read_csv::<LayerCurveRow>(&p).unwrap(), rows);
    }
}
