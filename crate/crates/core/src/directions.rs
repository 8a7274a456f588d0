//! Difference-in-means directions between difficulty groups, their geometry,
//! and the probe's reading of them.
//!
//! For each layer, `r_{i<-1}` is the mean `<think>` activation of level-`i`
//! questions minus the mean of level-1 questions. The four vectors for levels
//! 2..=5 are averaged into the layer's mean direction, which the steering
//! module injects.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::LinearProbe;
use crate::stats;
use crate::trace::{group_by_difficulty, ActivationRecord, TraceDataset};

pub const BASE_LEVEL: u32 = 1;
pub const TARGET_LEVELS: [u32; 4] = [2, 3, 4, 5];
pub const DIRECTIONS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionVector {
    pub layer: usize,
    pub from_level: u32,
    /// `None` for a layer's mean direction.
    pub to_level: Option<u32>,
    pub components: Vec<f64>,
    pub l2_norm: f64,
}

impl DirectionVector {
    pub fn new(layer: usize, from_level: u32, to_level: Option<u32>, components: Vec<f64>) -> Self {
        let l2_norm = stats::l2_norm(&components);
        Self {
            layer,
            from_level,
            to_level,
            components,
            l2_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDirections {
    pub layer: usize,
    pub vectors: BTreeMap<u32, DirectionVector>,
    pub mean: DirectionVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    pub base_level: u32,
    pub layers: Vec<LayerDirections>,
    /// Mean reasoning tokens per difficulty level in the source trace.
    pub level_mean_tokens: BTreeMap<u32, f64>,
}

impl DirectionSet {
    /// Builds a set from raw per-layer vectors keyed by target level; mean
    /// directions are computed here.
    pub fn from_vectors(base_level: u32, layers: Vec<(usize, BTreeMap<u32, Vec<f64>>)>) -> Result<Self> {
        let mut out = Vec::with_capacity(layers.len());
        let mut levels: Option<Vec<u32>> = None;
        for (layer, vecs) in layers {
            let keys: Vec<u32> = vecs.keys().copied().collect();
            match &levels {
                None => levels = Some(keys),
                Some(k) if *k != keys => {
                    return Err(Error::Config(format!("layer {layer} has target levels {keys:?}, expected {k:?}")))
                }
                _ => {}
            }
            let width = vecs.values().next().map_or(0, Vec::len);
            if vecs.is_empty() || width == 0 {
                return Err(Error::Empty(format!("no direction vectors for layer {layer}")));
            }
            if let Some(v) = vecs.values().find(|v| v.len() != width) {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    actual: v.len(),
                });
            }
            let mut mean = vec![0.0; width];
            for v in vecs.values() {
                for (m, x) in mean.iter_mut().zip(v) {
                    *m += x;
                }
            }
            let k = vecs.len() as f64;
            mean.iter_mut().for_each(|m| *m /= k);
            let vectors = vecs
                .into_iter()
                .map(|(to, c)| (to, DirectionVector::new(layer, base_level, Some(to), c)))
                .collect();
            out.push(LayerDirections {
                layer,
                vectors,
                mean: DirectionVector::new(layer, base_level, None, mean),
            });
        }
        Ok(Self {
            base_level,
            layers: out,
            level_mean_tokens: BTreeMap::new(),
        })
    }

    pub fn layer(&self, layer: usize) -> Option<&LayerDirections> {
        self.layers.iter().find(|l| l.layer == layer)
    }

    /// Mean direction of every layer, in layer order.
    pub fn mean_directions(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| l.mean.components.clone()).collect()
    }

    pub fn d_model(&self) -> usize {
        self.layers.first().map_or(0, |l| l.mean.components.len())
    }

    pub fn to_file(&self) -> DirectionsFile {
        DirectionsFile {
            schema_version: DIRECTIONS_SCHEMA_VERSION,
            base_level: self.base_level,
            level_mean_tokens: self.level_mean_tokens.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerEntry {
                    layer: l.layer,
                    vectors: l.vectors.iter().map(|(k, v)| (k.to_string(), v.components.clone())).collect(),
                    mean: l.mean.components.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds a set from its file form. The stored mean is checked against
    /// the recomputed one.
    pub fn from_file(file: &DirectionsFile) -> Result<Self> {
        let parse = |k: &str| {
            k.parse::<u32>()
                .map_err(|_| Error::Config(format!("direction level key {k:?} is not an integer")))
        };
        let mut layers = Vec::with_capacity(file.layers.len());
        for entry in &file.layers {
            let vecs = entry
                .vectors
                .iter()
                .map(|(k, v)| Ok((parse(k)?, v.clone())))
                .collect::<Result<BTreeMap<_, _>>>()?;
            layers.push((entry.layer, vecs));
        }
        let mut set = Self::from_vectors(file.base_level, layers)?;
        for (l, entry) in set.layers.iter().zip(&file.layers) {
            let drift = l
                .mean
                .components
                .iter()
                .zip(&entry.mean)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if entry.mean.len() != l.mean.components.len() || drift > 1e-9 {
                return Err(Error::Config(format!("stored mean direction of layer {} is inconsistent", l.layer)));
            }
        }
        set.level_mean_tokens = file
            .level_mean_tokens
            .iter()
            .map(|(k, v)| Ok((parse(k)?, *v)))
            .collect::<Result<_>>()?;
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionsFile {
    pub schema_version: u32,
    pub base_level: u32,
    #[serde(default)]
    pub level_mean_tokens: BTreeMap<String, f64>,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub mean: Vec<f64>,
}

fn group_mean(group: &[&ActivationRecord], layer: usize, d: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; d];
    for rec in group {
        for (a, &v) in acc.iter_mut().zip(rec.layer(layer, d)) {
            *a += v as f64;
        }
    }
    let n = group.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

pub fn diff_in_means(dataset: &TraceDataset, layer: usize, target_level: u32, base_level: u32) -> Result<DirectionVector> {
    let meta = dataset.metadata();
    if layer >= meta.n_layers {
        return Err(Error::LayerOutOfRange {
            layer,
            n_layers: meta.n_layers,
        });
    }
    let groups = group_by_difficulty(dataset);
    let fetch = |level: u32| match groups.get(&level) {
        Some(g) if !g.is_empty() => Ok(g.as_slice()),
        _ => Err(Error::EmptyGroup { level }),
    };
    let target = group_mean(fetch(target_level)?, layer, meta.d_model);
    let base = group_mean(fetch(base_level)?, layer, meta.d_model);
    let diff = target.iter().zip(&base).map(|(t, b)| t - b).collect();
    Ok(DirectionVector::new(layer, base_level, Some(target_level), diff))
}

/// Extracts `r_{i<-1}` for i in 2..=5 at every layer, plus each layer's mean.
pub fn extract_all(dataset: &TraceDataset) -> Result<DirectionSet> {
    let meta = dataset.metadata();
    let groups = group_by_difficulty(dataset);
    for level in std::iter::once(BASE_LEVEL).chain(TARGET_LEVELS) {
        if groups.get(&level).is_none_or(|g| g.is_empty()) {
            return Err(Error::EmptyGroup { level });
        }
    }
    let d = meta.d_model;
    let layers: Vec<(usize, BTreeMap<u32, Vec<f64>>)> = (0..meta.n_layers)
        .into_par_iter()
        .map(|layer| {
            let base = group_mean(&groups[&BASE_LEVEL], layer, d);
            let vecs = TARGET_LEVELS
                .iter()
                .map(|&to| {
                    let target = group_mean(&groups[&to], layer, d);
                    (to, target.iter().zip(&base).map(|(t, b)| t - b).collect())
                })
                .collect();
            (layer, vecs)
        })
        .collect();
    let mut set = DirectionSet::from_vectors(BASE_LEVEL, layers)?;
    set.level_mean_tokens = groups
        .iter()
        .filter(|(_, g)| !g.is_empty())
        .map(|(&level, g)| {
            let m = g.iter().map(|r| r.mean_reasoning_tokens()).sum::<f64>() / g.len() as f64;
            (level, m)
        })
        .collect();
    Ok(set)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    stats::dot(a, b) / (stats::l2_norm(a) * stats::l2_norm(b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosineMatrix {
    pub layer: usize,
    pub levels: Vec<u32>,
    /// Row-major, `levels.len()` square.
    pub values: Vec<Vec<f64>>,
}

impl CosineMatrix {
    pub fn mean_off_diagonal(&self) -> f64 {
        let k = self.levels.len();
        let mut sum = 0.0;
        let mut count = 0;
        for i in 0..k {
            for j in (i + 1)..k {
                sum += self.values[i][j];
                count += 1;
            }
        }
        sum / count as f64
    }

    pub fn min_off_diagonal(&self) -> f64 {
        let k = self.levels.len();
        (0..k)
            .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
            .map(|(i, j)| self.values[i][j])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Pairwise cosine similarity among a layer's per-level vectors.
pub fn cosine_matrix(set: &DirectionSet, layer: usize) -> Result<CosineMatrix> {
    let ld = set.layer(layer).ok_or(Error::LayerOutOfRange {
        layer,
        n_layers: set.layers.len(),
    })?;
    if let Some(v) = ld.vectors.values().find(|v| v.l2_norm == 0.0) {
        return Err(Error::ZeroNorm {
            layer,
            level: v.to_level.unwrap_or(0),
        });
    }
    let vecs: Vec<&DirectionVector> = ld.vectors.values().collect();
    let k = vecs.len();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let c = (stats::dot(&vecs[i].components, &vecs[j].components) / (vecs[i].l2_norm * vecs[j].l2_norm))
                .clamp(-1.0, 1.0);
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    Ok(CosineMatrix {
        layer,
        levels: ld.vectors.keys().copied().collect(),
        values,
    })
}

pub fn layerwise_mean_cosine(set: &DirectionSet) -> Result<Vec<(usize, f64)>> {
    if set.layers.is_empty() {
        return Err(Error::Empty("direction set has no layers".into()));
    }
    set.layers
        .iter()
        .map(|l| Ok((l.layer, cosine_matrix(set, l.layer)?.mean_off_diagonal())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub layer: usize,
    pub to_level: u32,
    pub l2_norm: f64,
}

pub fn norms_by_level(set: &DirectionSet) -> Vec<NormRow> {
    set.layers
        .iter()
        .flat_map(|l| {
            l.vectors.iter().map(|(&to, v)| NormRow {
                layer: l.layer,
                to_level: to,
                l2_norm: v.l2_norm,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionPrediction {
    pub layer: usize,
    pub predicted_tokens: f64,
}

/// The probe's reading of a direction: `<r, W> + b`.
pub fn predict_from_direction(probe: &LinearProbe, direction: &DirectionVector) -> Result<DirectionPrediction> {
    if probe.layer != direction.layer {
        return Err(Error::Config(format!(
            "probe is for layer {} but direction is for layer {}",
            probe.layer, direction.layer
        )));
    }
    let predicted_tokens = probe.predict_row(&direction.components)?;
    if !predicted_tokens.is_finite() {
        return Err(Error::NonFinite(format!("prediction at layer {}", probe.layer)));
    }
    Ok(DirectionPrediction {
        layer: probe.layer,
        predicted_tokens,
    })
}
