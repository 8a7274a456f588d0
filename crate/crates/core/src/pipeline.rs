//! End-to-end run driven by a JSON config.
//!
//! Stages run in a fixed order and are gated by which config sections are
//! present. Every emitted file is listed in `manifest.json` with its SHA-256;
//! when a stage fails, the files it managed to write are flagged partial and
//! the manifest is still written.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::charts;
use crate::directions::{self, DirectionSet};
use crate::error::{Error, Result};
use crate::mock::{self, MockPlanner, MockPlannerSpec, LEVELS};
use crate::overthink::{self, DEFAULT_QUANTILE};
use crate::probe::{self, LayerProbe, ProbeFile, ProbeTrainConfig};
use crate::report::{self, CosineCell, GammaCsvRow, LayerCosineRow, LayerCurveRow, NormCsvRow, SweepCsvRow};
use crate::steering::{self, GenerationOutcome, LogitInterventionConfig, SteeringConfig, TaskScorer, TokenId};
use crate::trace::{self, TraceDataset};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

fn default_formats() -> BTreeSet<ReportFormat> {
    [ReportFormat::Csv, ReportFormat::Json].into()
}

fn default_test_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSection {
    /// Spec JSON; the built-in default spec when absent.
    #[serde(default)]
    pub spec_path: Option<PathBuf>,
    /// Questions per level when the trace is synthesized.
    #[serde(default = "default_per_level")]
    pub per_level: usize,
}

fn default_per_level() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScorerConfig {
    /// 1 when generation reached EOS with a non-empty answer.
    Completion,
    /// 1 when the run completed and reasoned for at least `min_fraction` of
    /// the question's unsteered planned length.
    ReasoningBudget { min_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringSection {
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default = "default_prompt_levels")]
    pub prompt_levels: Vec<u32>,
    #[serde(default = "default_prompts_per_level")]
    pub prompts_per_level: usize,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default)]
    pub layer_mask: Option<BTreeSet<usize>>,
    #[serde(default)]
    pub steer_prompt_positions: bool,
    #[serde(default)]
    pub scorer: Option<ScorerConfig>,
    #[serde(default = "yes")]
    pub logits: bool,
    #[serde(default)]
    pub watchlist: Vec<TokenId>,
    #[serde(default = "default_baseline_seed")]
    pub baseline_seed: u64,
    #[serde(default)]
    pub gamma: Option<f64>,
}

fn default_prompt_levels() -> Vec<u32> {
    LEVELS.to_vec()
}
fn default_prompts_per_level() -> usize {
    50
}
fn default_max_new_tokens() -> usize {
    1024
}
fn default_baseline_seed() -> u64 {
    17
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverthinkSection {
    #[serde(default = "default_overthink_level")]
    pub level: u32,
    #[serde(default = "default_pairs")]
    pub n_pairs: usize,
    /// Projection boost of the overthink variants, in units of the noise sigma.
    #[serde(default = "default_boost_sigmas")]
    pub boost_sigmas: f64,
    /// Fresh vanilla questions for the threshold; the vanilla side of the
    /// pairs when absent.
    #[serde(default)]
    pub calibration_count: Option<usize>,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    /// Probe layer; the best validation layer when absent.
    #[serde(default)]
    pub layer: Option<usize>,
}

fn default_overthink_level() -> u32 {
    3
}
fn default_pairs() -> usize {
    100
}
fn default_boost_sigmas() -> f64 {
    3.0
}
fn default_quantile() -> f64 {
    DEFAULT_QUANTILE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    /// Existing RPT trace. When absent the trace is synthesized from `mock`.
    #[serde(default)]
    pub trace_path: Option<PathBuf>,
    #[serde(default)]
    pub mock: Option<MockSection>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub probe: Option<ProbeTrainConfig>,
    #[serde(default)]
    pub directions: bool,
    #[serde(default)]
    pub steering: Option<SteeringSection>,
    #[serde(default)]
    pub overthink: Option<OverthinkSection>,
    #[serde(default = "default_formats")]
    pub formats: BTreeSet<ReportFormat>,
}

impl PipelineConfig {
    /// Static checks that need no file access beyond existence.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.trace_path.is_none() && self.mock.is_none() {
            return bad("either trace_path or mock must be given");
        }
        if let Some(p) = &self.trace_path {
            if !p.is_file() {
                return Err(Error::Config(format!("trace {} does not exist", p.display())));
            }
        }
        if let Some(p) = self.mock.as_ref().and_then(|m| m.spec_path.as_ref()) {
            if !p.is_file() {
                return Err(Error::Config(format!("mock spec {} does not exist", p.display())));
            }
        }
        if self.mock.as_ref().is_some_and(|m| m.per_level == 0) {
            return bad("mock.per_level must be >= 1");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie in (0, 1)");
        }
        if let Some(p) = &self.probe {
            p.validate()?;
        }
        if self.formats.is_empty() {
            return bad("formats must not be empty");
        }
        if self.formats.len() == 1 && self.formats.contains(&ReportFormat::Svg) {
            return bad("svg charts are drawn from the csv/json reports; add csv or json to formats");
        }
        if let Some(s) = &self.steering {
            if self.mock.is_none() {
                return bad("steering needs a mock model section");
            }
            if !self.directions {
                return bad("steering needs the directions stage");
            }
            if s.lambdas.as_ref().is_some_and(Vec::is_empty) {
                return bad("steering.lambdas must not be empty");
            }
            if s.prompts_per_level == 0 || s.prompt_levels.is_empty() {
                return bad("steering needs at least one prompt");
            }
            if s.max_new_tokens == 0 {
                return bad("steering.max_new_tokens must be >= 1");
            }
            if let Some(ScorerConfig::ReasoningBudget { min_fraction }) = &s.scorer {
                if !(0.0..=1.0).contains(min_fraction) {
                    return bad("reasoning_budget.min_fraction must lie in [0, 1]");
                }
            }
            if s.gamma.is_some_and(|g| !(g > 0.0)) {
                return bad("steering.gamma must be > 0");
            }
        }
        if let Some(o) = &self.overthink {
            if self.mock.is_none() || self.probe.is_none() {
                return bad("overthink needs the mock section and the probe stage");
            }
            if o.n_pairs == 0 || o.calibration_count == Some(0) {
                return bad("overthink needs pairs and calibration questions");
            }
            if !(o.quantile > 0.0 && o.quantile <= 1.0) {
                return bad("overthink.quantile must lie in (0, 1]");
            }
        }
        Ok(())
    }
}

/// Config for a full run over the default mock model.
pub fn full_preset(output_dir: impl Into<PathBuf>) -> PipelineConfig {
    PipelineConfig {
        output_dir: output_dir.into(),
        trace_path: None,
        mock: Some(MockSection {
            spec_path: None,
            per_level: 200,
        }),
        split_seed: 0,
        test_fraction: 0.1,
        probe: Some(ProbeTrainConfig::default()),
        directions: true,
        steering: Some(SteeringSection {
            lambdas: None,
            prompt_levels: default_prompt_levels(),
            prompts_per_level: 50,
            max_new_tokens: default_max_new_tokens(),
            layer_mask: None,
            steer_prompt_positions: false,
            scorer: Some(ScorerConfig::Completion),
            logits: true,
            watchlist: Vec::new(),
            baseline_seed: default_baseline_seed(),
            gamma: Some(0.8),
        }),
        overthink: Some(OverthinkSection {
            level: 3,
            n_pairs: 100,
            boost_sigmas: 3.0,
            calibration_count: None,
            quantile: DEFAULT_QUANTILE,
            layer: None,
        }),
        formats: [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg].into(),
    }
}

/// Shortening reasoning on easy questions: a non-positive lambda sweep over
/// levels 1-2 with a reasoning-budget scorer, reported as tokens + score.
pub fn efficient_inference_preset(output_dir: impl Into<PathBuf>) -> PipelineConfig {
    PipelineConfig {
        output_dir: output_dir.into(),
        trace_path: None,
        mock: Some(MockSection {
            spec_path: None,
            per_level: 200,
        }),
        split_seed: 0,
        test_fraction: 0.1,
        probe: None,
        directions: true,
        steering: Some(SteeringSection {
            lambdas: Some(vec![-0.2, -0.15, -0.1, -0.05, 0.0]),
            prompt_levels: vec![1, 2],
            prompts_per_level: 50,
            max_new_tokens: default_max_new_tokens(),
            layer_mask: None,
            steer_prompt_positions: false,
            scorer: Some(ScorerConfig::ReasoningBudget { min_fraction: 0.5 }),
            logits: false,
            watchlist: Vec::new(),
            baseline_seed: default_baseline_seed(),
            gamma: None,
        }),
        overthink: None,
        formats: [ReportFormat::Csv, ReportFormat::Svg].into(),
    }
}

pub fn preset(name: &str, output_dir: impl Into<PathBuf>) -> Result<PipelineConfig> {
    match name {
        "full" => Ok(full_preset(output_dir)),
        "efficient-inference" => Ok(efficient_inference_preset(output_dir)),
        other => Err(Error::Config(format!("unknown preset {other:?} (full, efficient-inference)"))),
    }
}

pub struct CompletionScorer;

impl TaskScorer for CompletionScorer {
    fn score(&self, _: usize, _: &[TokenId], o: &GenerationOutcome) -> f64 {
        let done = o.ended_by == steering::EndedBy::Eos && o.answer_token_count > 0;
        if done {
            1.0
        } else {
            0.0
        }
    }
}

/// Scores a mock run against the question's own unsteered plan.
pub struct ReasoningBudgetScorer {
    pub spec: MockPlannerSpec,
    pub min_fraction: f64,
}

impl TaskScorer for ReasoningBudgetScorer {
    fn score(&self, _: usize, prompt: &[TokenId], o: &GenerationOutcome) -> f64 {
        let Ok(q) = mock::parse_prompt(prompt) else {
            return 0.0;
        };
        let Ok(h) = self.spec.activations(&q) else {
            return 0.0;
        };
        let plan = self.spec.length_for(self.spec.projection(h.row(self.spec.readout_layer)));
        let enough = o.reasoning_token_count as f64 >= self.min_fraction * plan as f64;
        if CompletionScorer.score(0, prompt, o) == 1.0 && enough {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub stage: String,
    pub sha256: String,
    pub bytes: u64,
    pub partial: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub stages: Vec<StageRecord>,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    /// Re-hashes every listed file under `dir`; returns the paths that no
    /// longer match.
    pub fn verify(&self, dir: impl AsRef<Path>) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.files {
            let bytes = fs::read(dir.as_ref().join(&f.path))?;
            if sha256_hex(&bytes) != f.sha256 {
                bad.push(f.path.clone());
            }
        }
        Ok(bad)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source}")]
pub struct StageError {
    pub stage: String,
    #[source]
    pub source: Error,
    pub manifest: Manifest,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(Error),
    #[error(transparent)]
    Stage(Box<StageError>),
}

impl PipelineError {
    /// 2 for configuration problems, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage(_) => 3,
        }
    }
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    dir: PathBuf,
    manifest: Manifest,
    stage: &'static str,
}

impl Run<'_> {
    fn wants(&self, f: ReportFormat) -> bool {
        self.cfg.formats.contains(&f)
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let bytes = fs::read(self.dir.join(name))?;
        self.manifest.files.push(ManifestEntry {
            path: name.to_string(),
            stage: self.stage.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
            partial: false,
        });
        Ok(())
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        if !self.wants(ReportFormat::Csv) {
            return Ok(());
        }
        report::write_csv(self.dir.join(name), rows)?;
        self.record(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        if !self.wants(ReportFormat::Json) {
            return Ok(());
        }
        report::write_json(self.dir.join(name), value)?;
        self.record(name)
    }

    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T, PipelineError> {
        self.stage = name;
        match f(self) {
            Ok(v) => {
                self.manifest.stages.push(StageRecord {
                    name: name.into(),
                    status: StageStatus::Completed,
                    error: None,
                });
                Ok(v)
            }
            Err(e) => {
                for entry in self.manifest.files.iter_mut().filter(|e| e.stage == name) {
                    entry.partial = true;
                }
                self.manifest.stages.push(StageRecord {
                    name: name.into(),
                    status: StageStatus::Failed,
                    error: Some(e.to_string()),
                });
                // best effort: the stage error is what the caller needs
                let _ = report::write_json(self.dir.join(report::MANIFEST_JSON), &self.manifest);
                Err(PipelineError::Stage(Box::new(StageError {
                    stage: name.into(),
                    source: e,
                    manifest: self.manifest.clone(),
                })))
            }
        }
    }
}

fn load_spec(cfg: &PipelineConfig) -> Result<Option<MockPlannerSpec>> {
    let Some(m) = &cfg.mock else {
        return Ok(None);
    };
    let spec = match &m.spec_path {
        Some(p) => report::read_json::<MockPlannerSpec>(p).map_err(|e| Error::Config(e.to_string()))?,
        None => MockPlannerSpec::default(),
    };
    spec.validate()?;
    Ok(Some(spec))
}

/// Runs every configured stage and writes `manifest.json`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let spec = load_spec(cfg).map_err(PipelineError::Config)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| PipelineError::Config(e.into()))?;

    let mut run = Run {
        cfg,
        dir: cfg.output_dir.clone(),
        manifest: Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            stages: Vec::new(),
            files: Vec::new(),
        },
        stage: "",
    };

    let dataset: TraceDataset = run.stage("load", |_| match (&cfg.trace_path, &spec) {
        (Some(p), _) => trace::read_trace_file(p),
        (None, Some(s)) => mock::build_trace(s, cfg.mock.as_ref().map_or(200, |m| m.per_level)),
        (None, None) => unreachable!("validated"),
    })?;

    let (train, _test) = run.stage("split", |_| trace::split_dataset(&dataset, cfg.test_fraction, cfg.split_seed))?;

    let probes: Option<Vec<LayerProbe>> = match &cfg.probe {
        Some(pc) => Some(run.stage("layerwise_probe", |r| {
            // same fraction and seed as the split stage, so the same partition
            let probes = probe::layerwise_probe(&dataset, pc, cfg.test_fraction, cfg.split_seed)?;
            let file = ProbeFile::from_layerwise(&probes, pc, cfg.test_fraction, cfg.split_seed);
            r.json(report::PROBES_JSON, &file)?;
            r.csv(report::LAYER_CURVE_CSV, &LayerCurveRow::from_probes(&probes))?;
            Ok(probes)
        })?),
        None => None,
    };

    let dirs: Option<DirectionSet> = if cfg.directions {
        let set = run.stage("extract_all", |r| {
            let set = directions::extract_all(&train)?;
            r.json(report::DIRECTIONS_JSON, &set.to_file())?;
            Ok(set)
        })?;
        run.stage("direction_reports", |r| {
            let mut cells = Vec::new();
            for l in &set.layers {
                cells.extend(CosineCell::from_matrix(&directions::cosine_matrix(&set, l.layer)?));
            }
            r.csv(report::COSINE_CSV, &cells)?;
            let curve: Vec<LayerCosineRow> = directions::layerwise_mean_cosine(&set)?
                .into_iter()
                .map(|(layer, mean_cosine)| LayerCosineRow { layer, mean_cosine })
                .collect();
            r.csv(report::LAYER_COSINE_CSV, &curve)?;
            r.csv(report::NORMS_CSV, &NormCsvRow::from_norms(&directions::norms_by_level(&set), &set))
        })?;
        Some(set)
    } else {
        None
    };

    if let (Some(probes), Some(set)) = (&probes, &dirs) {
        run.stage("predictions", |r| {
            let rows = probes
                .iter()
                .filter_map(|p| set.layer(p.layer).map(|l| (p, l)))
                .map(|(p, l)| directions::predict_from_direction(&p.probe, &l.mean))
                .collect::<Result<Vec<_>>>()?;
            r.csv(report::PREDICTIONS_CSV, &rows)
        })?;
    }

    if let (Some(sc), Some(set), Some(spec)) = (&cfg.steering, &dirs, &spec) {
        let mut template = SteeringConfig::new(0.0, set.mean_directions());
        template.layer_mask = sc.layer_mask.clone();
        template.steer_prompt_positions = sc.steer_prompt_positions;
        let lambdas = sc.lambdas.clone().unwrap_or_else(steering::default_lambda_grid);
        let (model, prompts): (MockPlanner, Vec<Vec<TokenId>>) = run.stage("sweep", |r| {
            let model = mock::as_steerable(spec)?;
            let prompts = sc
                .prompt_levels
                .iter()
                .flat_map(|&l| (0..sc.prompts_per_level as u32).map(move |i| mock::prompt(l, i)))
                .collect::<Result<Vec<_>>>()?;
            let scorer: Option<Box<dyn TaskScorer>> = match &sc.scorer {
                None => None,
                Some(ScorerConfig::Completion) => Some(Box::new(CompletionScorer)),
                Some(ScorerConfig::ReasoningBudget { min_fraction }) => Some(Box::new(ReasoningBudgetScorer {
                    spec: spec.clone(),
                    min_fraction: *min_fraction,
                })),
            };
            let rep = steering::sweep_lambda(&model, &prompts, &template, &lambdas, sc.max_new_tokens, scorer.as_deref())?;
            r.csv(report::SWEEP_CSV, &SweepCsvRow::from_report(&rep))?;
            Ok((model, prompts))
        })?;
        if sc.logits {
            run.stage("logit_analysis", |r| {
                let rep = steering::logit_shift_analysis(&model, &prompts, &template, &lambdas, &sc.watchlist, sc.baseline_seed)?;
                r.json(report::LOGITS_JSON, &rep)
            })?;
        }
        if let Some(gamma) = sc.gamma {
            run.stage("gamma", |r| {
                let iv = LogitInterventionConfig {
                    gamma,
                    target_token: mock::END_THINK_TOKEN,
                };
                let outs = steering::gamma_logit_intervention(&model, &prompts, &iv, sc.max_new_tokens)?;
                r.csv(report::GAMMA_CSV, &GammaCsvRow::from_outcomes(gamma, &outs))
            })?;
        }
    }

    if let (Some(oc), Some(probes), Some(spec)) = (&cfg.overthink, &probes, &spec) {
        run.stage("overthink", |r| {
            let layer = match oc.layer {
                Some(l) => l,
                None => probe::best_layer(probes).ok_or_else(|| Error::Empty("no probe with a defined correlation".into()))?,
            };
            let lp = probes
                .iter()
                .find(|p| p.layer == layer)
                .ok_or(Error::LayerOutOfRange {
                    layer,
                    n_layers: probes.len(),
                })?;
            let boost = oc.boost_sigmas * spec.noise_sigma;
            let (pair_ds, manifest) = overthink::build_mock_pairs(spec, oc.level, oc.n_pairs, boost)?;
            let pairs = overthink::pairs_from_manifest(&pair_ds, &manifest)?;
            let calibration = match oc.calibration_count {
                Some(n) => overthink::build_mock_calibration(spec, oc.level, n)?,
                None => TraceDataset::new(pair_ds.metadata().clone(), pairs.iter().map(|p| p.vanilla.clone()).collect())?,
            };
            let tau = overthink::calibrate_threshold(&lp.probe, &calibration, oc.quantile)?;
            let rep = overthink::paired_eval(&lp.probe, &pairs, tau)?;
            r.json(report::OVERTHINK_JSON, &rep)
        })?;
    }

    if run.wants(ReportFormat::Svg) {
        run.stage("charts", |r| {
            let emitted: BTreeSet<String> = r.manifest.files.iter().map(|f| f.path.clone()).collect();
            let written = charts::emit_selected(&r.dir, &r.dir, &|name| emitted.contains(name))?;
            for p in written {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                r.record(&name)?;
            }
            Ok(())
        })?;
    }

    let manifest = run.manifest.clone();
    report::write_json(cfg.output_dir.join(report::MANIFEST_JSON), &manifest).map_err(|source| {
        PipelineError::Stage(Box::new(StageError {
            stage: "manifest".into(),
            source,
            manifest: manifest.clone(),
        }))
    })?;
    Ok(manifest)
}
