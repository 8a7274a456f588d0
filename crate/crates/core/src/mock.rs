//! Synthetic planted-direction model used as ground truth.
//!
//! For a question of difficulty `i` the `<think>`-position residual at layer
//! `l` is `c[l] + mu[i] * kappa[l] * v + eps`, with seeded Gaussian `eps`.
//! Only the readout layer's projection onto `v` decides how long the model
//! reasons; everything downstream (length, logits, answer phase) follows in
//! closed form, so every analysis stage can be checked exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{dot, l2_norm};
use crate::steering::{LayerMatrix, SpecialTokens, SteerableModel, TokenId};
use crate::trace::{ActivationRecord, CapturePoint, CapturePosition, TraceDataset, TraceMetadata, FORMAT_VERSION};

pub const MOCK_MODEL_NAME: &str = "mock-planner";
pub const MOCK_VOCAB_SIZE: usize = 1024;

pub const FILLER_TOKEN: TokenId = 4;
pub const ANSWER_TOKEN: TokenId = 5;
pub const THINK_TOKEN: TokenId = 6;
pub const END_THINK_TOKEN: TokenId = 7;
pub const EOS_TOKEN: TokenId = 8;
/// Prompt token for difficulty `level` is `LEVEL_TOKEN_BASE + level`.
pub const LEVEL_TOKEN_BASE: TokenId = 16;
/// Question indices are spelled as three base-256 digits from here.
pub const INDEX_TOKEN_BASE: TokenId = 256;

pub const LEVELS: [u32; 5] = [1, 2, 3, 4, 5];

/// Stand-in for minus infinity that keeps arithmetic finite.
const SUPPRESSED_LOGIT: f64 = -1.0e4;
const PHASE_LOGIT: f64 = 1.0;
const MAX_INDEX: u32 = 1 << 24;

pub const MOCK_SPECIAL_TOKENS: SpecialTokens = SpecialTokens {
    think: THINK_TOKEN,
    end_think: END_THINK_TOKEN,
    eos: EOS_TOKEN,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockPlannerSpec {
    pub n_layers: usize,
    pub d_model: usize,
    pub planted_direction: Vec<f64>,
    pub layer_gains: Vec<f64>,
    pub base_offsets: Vec<Vec<f64>>,
    pub difficulty_scales: Vec<f64>,
    pub noise_sigma: f64,
    pub readout_layer: usize,
    pub length_intercept: f64,
    pub length_slope: f64,
    pub max_reasoning: u32,
    pub answer_length: u32,
    pub logit_sharpness: f64,
    pub filler_margin: f64,
    pub seed: u64,
}

impl Default for MockPlannerSpec {
    fn default() -> Self {
        let (n_layers, d_model, seed) = (6, 64, 42);
        let mut v = vec![0.0; d_model];
        v[0] = 1.0;
        let base_offsets = orthogonal_offsets(n_layers, &v, 1.0, seed);
        Self {
            n_layers,
            d_model,
            planted_direction: v,
            layer_gains: (0..n_layers).map(|l| if l >= 2 { 1.0 } else { 0.0 }).collect(),
            base_offsets,
            difficulty_scales: vec![0.0, 1.0, 2.0, 4.0, 8.0],
            noise_sigma: 0.02,
            readout_layer: 4,
            length_intercept: 20.0,
            length_slope: 12.0,
            max_reasoning: 400,
            answer_length: 10,
            logit_sharpness: 5.0,
            filler_margin: 1.0,
            seed,
        }
    }
}

/// Seeded Gaussian offsets with their component along `v` removed, so the
/// offsets never move the planning projection.
pub fn orthogonal_offsets(n_layers: usize, v: &[f64], scale: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 0x0ff5e7]));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let vv = dot(v, v);
    (0..n_layers)
        .map(|_| {
            let mut c: Vec<f64> = (0..v.len()).map(|_| scale * normal.sample(&mut rng)).collect();
            if vv > 0.0 {
                let k = dot(&c, v) / vv;
                c.iter_mut().zip(v).for_each(|(ci, vi)| *ci -= k * vi);
            }
            c
        })
        .collect()
}

/// splitmix64 over a sequence of words.
fn mix(words: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &w in words {
        let mut z = h ^ w.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// One synthetic question: its level, index within the level, an extra
/// projection boost along `v` (used for overthink variants) and a noise
/// stream so variants get independent noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockQuestion {
    pub level: u32,
    pub index: u32,
    pub boost: f64,
    pub stream: u64,
}

impl MockQuestion {
    pub fn new(level: u32, index: u32) -> Self {
        Self {
            level,
            index,
            boost: 0.0,
            stream: 0,
        }
    }

    pub fn question_id(&self) -> String {
        if self.stream == 0 && self.boost == 0.0 {
            format!("L{}-Q{:05}", self.level, self.index)
        } else {
            format!("L{}-Q{:05}-S{}", self.level, self.index, self.stream)
        }
    }
}

impl MockPlannerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.d_model == 0 {
            return bad("n_layers and d_model must be >= 1".into());
        }
        if self.planted_direction.len() != self.d_model {
            return bad(format!("planted_direction has {} entries, expected {}", self.planted_direction.len(), self.d_model));
        }
        if (l2_norm(&self.planted_direction) - 1.0).abs() > 1e-9 {
            return bad("planted_direction must have unit norm".into());
        }
        if self.layer_gains.len() != self.n_layers {
            return bad(format!("layer_gains has {} entries, expected {}", self.layer_gains.len(), self.n_layers));
        }
        if self.base_offsets.len() != self.n_layers || self.base_offsets.iter().any(|c| c.len() != self.d_model) {
            return bad(format!("base_offsets must be {} x {}", self.n_layers, self.d_model));
        }
        if self.difficulty_scales.len() != LEVELS.len() || !self.difficulty_scales.windows(2).all(|w| w[0] < w[1]) {
            return bad("difficulty_scales must be 5 strictly increasing values".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0".into());
        }
        if self.readout_layer >= self.n_layers {
            return bad(format!("readout_layer {} outside 0..{}", self.readout_layer, self.n_layers));
        }
        if !(self.length_slope > 0.0) || !(self.logit_sharpness > 0.0) || !(self.filler_margin > 0.0) {
            return bad("length_slope, logit_sharpness and filler_margin must be positive".into());
        }
        if self.max_reasoning < 1 {
            return bad("max_reasoning must be >= 1".into());
        }
        let finite = self
            .planted_direction
            .iter()
            .chain(&self.layer_gains)
            .chain(self.base_offsets.iter().flatten())
            .chain(&self.difficulty_scales)
            .chain([self.length_intercept, self.length_slope, self.logit_sharpness, self.filler_margin].iter())
            .all(|x| x.is_finite());
        if !finite {
            return bad("spec contains non-finite values".into());
        }
        Ok(())
    }

    pub fn with_noise(&self, sigma: f64) -> Self {
        Self {
            noise_sigma: sigma,
            ..self.clone()
        }
    }

    pub fn scale(&self, level: u32) -> Result<f64> {
        LEVELS
            .iter()
            .position(|&l| l == level)
            .map(|i| self.difficulty_scales[i])
            .ok_or(Error::Config(format!("difficulty level {level} outside 1..=5")))
    }

    /// `<think>`-position residuals for one question (f64, before storage).
    pub fn activations(&self, q: &MockQuestion) -> Result<LayerMatrix> {
        let mu = self.scale(q.level)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[self.seed, q.level as u64, q.index as u64, q.stream]));
        let normal = Normal::new(0.0, self.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        let mut m = LayerMatrix::zeros(self.n_layers, self.d_model);
        for l in 0..self.n_layers {
            let shift = mu * self.layer_gains[l] + q.boost * self.layer_gains[l];
            let row = m.row_mut(l);
            for (j, h) in row.iter_mut().enumerate() {
                *h = self.base_offsets[l][j] + shift * self.planted_direction[j];
                if self.noise_sigma > 0.0 {
                    *h += normal.sample(&mut rng);
                }
            }
        }
        Ok(m)
    }

    /// Planning projection of a readout-layer activation.
    pub fn projection(&self, readout: &[f64]) -> f64 {
        dot(readout, &self.planted_direction)
    }

    /// `clamp(round(y0 + beta * p), 1, y_max)`.
    pub fn length_for(&self, p: f64) -> u32 {
        let y = (self.length_intercept + self.length_slope * p).round();
        y.clamp(1.0, self.max_reasoning as f64) as u32
    }

    /// Reasoning tokens emitted before `</think>` for a planned length `y`:
    /// `</think>` wins at the first step `t` with `a (t - y) > margin`.
    pub fn emitted_reasoning_tokens(&self, y: u32) -> u32 {
        (y as f64 + self.filler_margin / self.logit_sharpness).floor() as u32
    }

    pub fn metadata(&self) -> TraceMetadata {
        TraceMetadata {
            format_version: FORMAT_VERSION,
            model_name: MOCK_MODEL_NAME.into(),
            n_layers: self.n_layers,
            d_model: self.d_model,
            think_token_id: THINK_TOKEN,
            end_think_token_id: END_THINK_TOKEN,
            eos_token_id: EOS_TOKEN,
            difficulty_levels: LEVELS.to_vec(),
            capture_position: CapturePosition::PreGenerationThinkToken,
            capture_point: CapturePoint::PostBlockResidual,
        }
    }

    pub fn record(&self, q: &MockQuestion) -> Result<ActivationRecord> {
        let h = self.activations(q)?;
        let y = self.length_for(self.projection(h.row(self.readout_layer)));
        Ok(ActivationRecord {
            question_id: q.question_id(),
            difficulty: q.level,
            activations: h.as_slice().iter().map(|&x| x as f32).collect(),
            reasoning_token_counts: vec![y],
            answer_token_counts: vec![self.answer_length],
            truncated: None,
        })
    }
}

/// `per_level` questions at each of the five levels, lengths at lambda = 0.
pub fn build_trace(spec: &MockPlannerSpec, per_level: usize) -> Result<TraceDataset> {
    if per_level == 0 {
        return Err(Error::Config("per_level must be >= 1".into()));
    }
    spec.validate()?;
    let mut records = Vec::with_capacity(per_level * LEVELS.len());
    for level in LEVELS {
        for index in 0..per_level {
            records.push(spec.record(&MockQuestion::new(level, index as u32))?);
        }
    }
    Ok(TraceDataset::new(spec.metadata(), records)?)
}

/// Trace of arbitrary questions (any levels, boosts or streams).
pub fn build_questions(spec: &MockPlannerSpec, questions: &[MockQuestion]) -> Result<TraceDataset> {
    spec.validate()?;
    let records = questions.iter().map(|q| spec.record(q)).collect::<Result<Vec<_>>>()?;
    Ok(TraceDataset::new(spec.metadata(), records)?)
}

/// Noise-free length of a level-`level` question steered by `lambda * r`.
pub fn expected_length(spec: &MockPlannerSpec, level: u32, lambda: f64, r_readout: &[f64]) -> Result<u32> {
    if r_readout.len() != spec.d_model {
        return Err(Error::DimensionMismatch {
            expected: spec.d_model,
            actual: r_readout.len(),
        });
    }
    let mu = spec.scale(level)?;
    let v = &spec.planted_direction;
    let p = dot(&spec.base_offsets[spec.readout_layer], v) + mu * spec.layer_gains[spec.readout_layer] * dot(v, v);
    Ok(spec.length_for(p + lambda * dot(r_readout, v)))
}

/// `[level marker, three index digits, <think>]`.
pub fn prompt(level: u32, index: u32) -> Result<Vec<TokenId>> {
    if !LEVELS.contains(&level) {
        return Err(Error::Config(format!("difficulty level {level} outside 1..=5")));
    }
    if index >= MAX_INDEX {
        return Err(Error::Config(format!("question index {index} too large")));
    }
    let digit = |shift: u32| INDEX_TOKEN_BASE + ((index >> shift) & 0xff);
    Ok(vec![LEVEL_TOKEN_BASE + level, digit(16), digit(8), digit(0), THINK_TOKEN])
}

pub fn parse_prompt(tokens: &[TokenId]) -> Result<MockQuestion> {
    let bad = || Error::Config(format!("not a mock prompt: {tokens:?}"));
    let [lvl, d2, d1, d0, think] = tokens else {
        return Err(bad());
    };
    if *think != THINK_TOKEN {
        return Err(Error::PromptNotThink { think: THINK_TOKEN });
    }
    let level = lvl.checked_sub(LEVEL_TOKEN_BASE).filter(|l| LEVELS.contains(l)).ok_or_else(bad)?;
    let mut index = 0;
    for d in [d2, d1, d0] {
        let digit = d.checked_sub(INDEX_TOKEN_BASE).filter(|&x| x < 256).ok_or_else(bad)?;
        index = (index << 8) | digit;
    }
    Ok(MockQuestion::new(level, index))
}

/// `count` prompts per level, indices `0..count`.
pub fn prompts_per_level(count: usize) -> Result<Vec<Vec<TokenId>>> {
    LEVELS
        .iter()
        .flat_map(|&l| (0..count as u32).map(move |i| prompt(l, i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Phase {
    Reasoning,
    Answer { emitted: u32 },
    Done,
}

#[derive(Debug, Clone)]
pub struct MockState {
    base: LayerMatrix,
    think: LayerMatrix,
    planned: Option<u32>,
    step: usize,
    phase: Phase,
}

impl MockState {
    /// Planned reasoning length, fixed by the first forward pass.
    pub fn planned_length(&self) -> Option<u32> {
        self.planned
    }
}

/// The mock as a steerable decoder.
///
/// The `<think>` position is processed by the first [`SteerableModel::step`];
/// its steered readout projection fixes the planned length for the whole
/// sequence (as a cached key/value would). Prompt-position offsets are
/// accepted but cannot reach the `<think>` residual in this model.
#[derive(Debug, Clone)]
pub struct MockPlanner {
    spec: MockPlannerSpec,
}

pub fn as_steerable(spec: &MockPlannerSpec) -> Result<MockPlanner> {
    spec.validate()?;
    Ok(MockPlanner { spec: spec.clone() })
}

impl MockPlanner {
    pub fn spec(&self) -> &MockPlannerSpec {
        &self.spec
    }
}

impl SteerableModel for MockPlanner {
    type State = MockState;

    fn n_layers(&self) -> usize {
        self.spec.n_layers
    }

    fn d_model(&self) -> usize {
        self.spec.d_model
    }

    fn vocab_size(&self) -> usize {
        MOCK_VOCAB_SIZE
    }

    fn special_tokens(&self) -> SpecialTokens {
        MOCK_SPECIAL_TOKENS
    }

    fn begin_sequence(&self, prompt: &[TokenId], prompt_offsets: Option<&LayerMatrix>) -> Result<MockState> {
        if let Some(o) = prompt_offsets {
            o.check_shape(self.spec.n_layers, self.spec.d_model)?;
        }
        let q = parse_prompt(prompt)?;
        let base = self.spec.activations(&q)?;
        Ok(MockState {
            think: base.clone(),
            base,
            planned: None,
            step: 0,
            phase: Phase::Reasoning,
        })
    }

    fn step(&self, state: &mut MockState, offsets: &LayerMatrix) -> Result<Vec<f64>> {
        offsets.check_shape(self.spec.n_layers, self.spec.d_model)?;
        let t = state.step + 1;
        if state.planned.is_none() {
            state.think = state.base.add(offsets)?;
            let p = self.spec.projection(state.think.row(self.spec.readout_layer));
            state.planned = Some(self.spec.length_for(p));
        }
        let mut logits = vec![SUPPRESSED_LOGIT; MOCK_VOCAB_SIZE];
        match state.phase {
            Phase::Reasoning => {
                let y = state.planned.expect("planned on first step") as f64;
                logits[FILLER_TOKEN as usize] = self.spec.filler_margin;
                logits[END_THINK_TOKEN as usize] = self.spec.logit_sharpness * (t as f64 - y);
            }
            Phase::Answer { emitted } if emitted < self.spec.answer_length => {
                logits[ANSWER_TOKEN as usize] = PHASE_LOGIT;
            }
            Phase::Answer { .. } | Phase::Done => logits[EOS_TOKEN as usize] = PHASE_LOGIT,
        }
        Ok(logits)
    }

    fn advance(&self, state: &mut MockState, token: TokenId) -> Result<()> {
        if token as usize >= MOCK_VOCAB_SIZE {
            return Err(Error::Config(format!("token {token} outside vocabulary")));
        }
        state.step += 1;
        state.phase = match (&state.phase, token) {
            (_, EOS_TOKEN) => Phase::Done,
            (Phase::Reasoning, END_THINK_TOKEN) => Phase::Answer { emitted: 0 },
            (Phase::Answer { emitted }, ANSWER_TOKEN) => Phase::Answer { emitted: emitted + 1 },
            (p, _) => p.clone(),
        };
        Ok(())
    }

    fn read_think_activations(&self, state: &MockState) -> Result<LayerMatrix> {
        Ok(state.think.clone())
    }
}
