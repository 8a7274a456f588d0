//! Activation steering during greedy generation.
//!
//! A [`SteerableModel`] exposes the residual stream through additive per-layer
//! offsets. Steering with strength `lambda` adds `lambda * r[l]` to layer `l`
//! at every generated position (and at the `<think>` position whose forward
//! pass yields the first reasoning token). Prompt positions before `<think>`
//! are left alone unless [`SteeringConfig::steer_prompt_positions`] is set.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{self, Summary};

pub type TokenId = u32;

pub const LOGITS_SCHEMA_VERSION: u32 = 1;
pub const BASELINE_TOKEN_COUNT: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub think: TokenId,
    pub end_think: TokenId,
    pub eos: TokenId,
}

/// Dense `n_layers x d_model` matrix, one row per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMatrix {
    n_layers: usize,
    d_model: usize,
    data: Vec<f64>,
}

impl LayerMatrix {
    pub fn zeros(n_layers: usize, d_model: usize) -> Self {
        Self {
            n_layers,
            d_model,
            data: vec![0.0; n_layers * d_model],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d_model = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != d_model) {
            return Err(Error::DimensionMismatch {
                expected: d_model,
                actual: r.len(),
            });
        }
        Ok(Self {
            n_layers: rows.len(),
            d_model,
            data: rows.concat(),
        })
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn row(&self, layer: usize) -> &[f64] {
        &self.data[layer * self.d_model..(layer + 1) * self.d_model]
    }

    pub fn row_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.data[layer * self.d_model..(layer + 1) * self.d_model]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn add(&self, other: &LayerMatrix) -> Result<LayerMatrix> {
        self.check_shape(other.n_layers, other.d_model)?;
        Ok(LayerMatrix {
            n_layers: self.n_layers,
            d_model: self.d_model,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn check_shape(&self, n_layers: usize, d_model: usize) -> Result<()> {
        if self.n_layers != n_layers {
            return Err(Error::DimensionMismatch {
                expected: n_layers,
                actual: self.n_layers,
            });
        }
        if self.d_model != d_model {
            return Err(Error::DimensionMismatch {
                expected: d_model,
                actual: self.d_model,
            });
        }
        Ok(())
    }
}

/// A decoder whose residual stream can be shifted per layer.
///
/// Implementations must be deterministic given the state and offsets, and a
/// step with all-zero offsets must equal the plain model step bit for bit.
pub trait SteerableModel {
    type State;

    fn n_layers(&self) -> usize;
    fn d_model(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn special_tokens(&self) -> SpecialTokens;

    /// Ingests the prompt. `prompt_offsets`, when given, is added at every
    /// prompt position before the final token.
    fn begin_sequence(&self, prompt: &[TokenId], prompt_offsets: Option<&LayerMatrix>) -> Result<Self::State>;

    /// Runs the forward pass at the current last position with `offsets`
    /// added to each layer's residual output and returns next-token logits.
    fn step(&self, state: &mut Self::State, offsets: &LayerMatrix) -> Result<Vec<f64>>;

    /// Appends the chosen token to the sequence.
    fn advance(&self, state: &mut Self::State, token: TokenId) -> Result<()>;

    /// Residual stream at the `<think>` position, as seen by the most recent
    /// forward pass over it.
    fn read_think_activations(&self, state: &Self::State) -> Result<LayerMatrix>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionPolicy {
    #[default]
    AllPositions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringConfig {
    pub lambda: f64,
    /// One direction per layer.
    pub directions: Vec<Vec<f64>>,
    /// Layers to steer; `None` steers every layer.
    pub layer_mask: Option<BTreeSet<usize>>,
    pub position_policy: PositionPolicy,
    pub steer_prompt_positions: bool,
    /// Extra tokens whose `<think>`-position logits are recorded.
    pub watch_tokens: Vec<TokenId>,
}

impl SteeringConfig {
    pub fn new(lambda: f64, directions: Vec<Vec<f64>>) -> Self {
        Self {
            lambda,
            directions,
            layer_mask: None,
            position_policy: PositionPolicy::AllPositions,
            steer_prompt_positions: false,
            watch_tokens: Vec::new(),
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    /// `lambda * r[l]` on masked layers, zero elsewhere.
    pub fn offsets(&self, n_layers: usize, d_model: usize) -> Result<LayerMatrix> {
        if self.directions.len() != n_layers {
            return Err(Error::DimensionMismatch {
                expected: n_layers,
                actual: self.directions.len(),
            });
        }
        if let Some(mask) = &self.layer_mask {
            if let Some(&bad) = mask.iter().find(|&&l| l >= n_layers) {
                return Err(Error::LayerOutOfRange { layer: bad, n_layers });
            }
        }
        let mut m = LayerMatrix::zeros(n_layers, d_model);
        for (l, dir) in self.directions.iter().enumerate() {
            if dir.len() != d_model {
                return Err(Error::DimensionMismatch {
                    expected: d_model,
                    actual: dir.len(),
                });
            }
            let active = self.layer_mask.as_ref().is_none_or(|m| m.contains(&l));
            if active && self.lambda != 0.0 {
                for (o, r) in m.row_mut(l).iter_mut().zip(dir) {
                    *o = self.lambda * r;
                }
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndedBy {
    Eos,
    MaxTokens,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    /// Generated tokens only (the prompt is not repeated).
    pub token_ids: Vec<TokenId>,
    pub reasoning_token_count: u32,
    pub answer_token_count: u32,
    pub ended_by: EndedBy,
    /// `(step, logit of </think>)`, steps counted from 1.
    pub think_logit_trace: Vec<(usize, f64)>,
    /// Logits at the `<think>` position for `</think>`, EOS and watched tokens.
    pub watch_logits: BTreeMap<TokenId, f64>,
}

/// Reasoning tokens lie strictly between the first `<think>` and the next
/// `</think>`; answer tokens strictly after that `</think>` and before EOS.
/// Both are zero when either delimiter is missing.
pub fn count_tokens(sequence: &[TokenId], special: SpecialTokens) -> (u32, u32) {
    let Some(open) = sequence.iter().position(|&t| t == special.think) else {
        return (0, 0);
    };
    let Some(close) = sequence[open + 1..].iter().position(|&t| t == special.end_think).map(|c| open + 1 + c) else {
        return (0, 0);
    };
    let reasoning = close - open - 1;
    let tail = &sequence[close + 1..];
    let answer = tail.iter().position(|&t| t == special.eos).unwrap_or(tail.len());
    (reasoning as u32, answer as u32)
}

/// Index of the largest logit; ties go to the lowest token id.
pub fn argmax(logits: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best as TokenId
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitInterventionConfig {
    pub gamma: f64,
    pub target_token: TokenId,
}

struct Decode<'a> {
    offsets: &'a LayerMatrix,
    prompt_offsets: Option<&'a LayerMatrix>,
    watch: &'a [TokenId],
    intervention: Option<LogitInterventionConfig>,
    max_new_tokens: usize,
}

fn decode<M: SteerableModel + ?Sized>(model: &M, prompt: &[TokenId], run: Decode<'_>) -> Result<GenerationOutcome> {
    let special = model.special_tokens();
    if prompt.last() != Some(&special.think) {
        return Err(Error::PromptNotThink { think: special.think });
    }
    if run.max_new_tokens == 0 {
        return Err(Error::Config("max_new_tokens must be >= 1".into()));
    }
    run.offsets.check_shape(model.n_layers(), model.d_model())?;

    let mut state = model.begin_sequence(prompt, run.prompt_offsets)?;
    let mut generated = Vec::new();
    let mut think_logit_trace = Vec::new();
    let mut watch_logits = BTreeMap::new();
    let mut ended_by = EndedBy::MaxTokens;

    for step in 1..=run.max_new_tokens {
        let mut logits = model.step(&mut state, run.offsets)?;
        if logits.len() != model.vocab_size() {
            return Err(Error::DimensionMismatch {
                expected: model.vocab_size(),
                actual: logits.len(),
            });
        }
        if step == 1 {
            for &t in [special.end_think, special.eos].iter().chain(run.watch) {
                let v = *logits.get(t as usize).ok_or(Error::Config(format!("token {t} outside vocabulary")))?;
                watch_logits.insert(t, v);
            }
        }
        think_logit_trace.push((step, logits[special.end_think as usize]));
        if let Some(iv) = run.intervention {
            logits[iv.target_token as usize] *= iv.gamma;
        }
        let token = argmax(&logits);
        generated.push(token);
        model.advance(&mut state, token)?;
        if token == special.eos {
            ended_by = EndedBy::Eos;
            break;
        }
    }

    let mut sequence = Vec::with_capacity(generated.len() + 1);
    sequence.push(special.think);
    sequence.extend_from_slice(&generated);
    let (reasoning_token_count, answer_token_count) = count_tokens(&sequence, special);
    Ok(GenerationOutcome {
        token_ids: generated,
        reasoning_token_count,
        answer_token_count,
        ended_by,
        think_logit_trace,
        watch_logits,
    })
}

/// Greedy decoding with no intervention.
pub fn unsteered_generate<M: SteerableModel + ?Sized>(
    model: &M,
    prompt: &[TokenId],
    max_new_tokens: usize,
) -> Result<GenerationOutcome> {
    let zero = LayerMatrix::zeros(model.n_layers(), model.d_model());
    decode(
        model,
        prompt,
        Decode {
            offsets: &zero,
            prompt_offsets: None,
            watch: &[],
            intervention: None,
            max_new_tokens,
        },
    )
}

pub fn steered_generate<M: SteerableModel + ?Sized>(
    model: &M,
    prompt: &[TokenId],
    steering: &SteeringConfig,
    max_new_tokens: usize,
) -> Result<GenerationOutcome> {
    let offsets = steering.offsets(model.n_layers(), model.d_model())?;
    decode(
        model,
        prompt,
        Decode {
            offsets: &offsets,
            prompt_offsets: steering.steer_prompt_positions.then_some(&offsets),
            watch: &steering.watch_tokens,
            intervention: None,
            max_new_tokens,
        },
    )
}

/// Scores one generation in `[0, 1]`.
pub trait TaskScorer: Sync {
    fn score(&self, prompt_index: usize, prompt: &[TokenId], outcome: &GenerationOutcome) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub mean_reasoning_tokens: f64,
    pub mean_answer_tokens: f64,
    pub score: Option<f64>,
    pub n: usize,
    #[serde(skip)]
    pub reasoning_counts: Vec<u32>,
    #[serde(skip)]
    pub answer_counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

/// The default strength grid: -0.20 to 0.20 in steps of 0.05.
pub fn default_lambda_grid() -> Vec<f64> {
    (-4..=4).map(|i| i as f64 / 20.0).collect()
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_lambda_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse lambda grid {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let (lo, hi, step) = (nums[0], nums[1], nums[2]);
        if !(step > 0.0) || hi < lo {
            return Err(bad());
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize;
        // snap to 1e-9 so 3 * 0.05 prints as 0.15
        return Ok((0..=count).map(|k| ((lo + k as f64 * step) * 1e9).round() / 1e9).collect());
    }
    let list: Vec<f64> = spec
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(bad());
    }
    Ok(list)
}

/// Mean reasoning and answer lengths for each steering strength, in the
/// order given.
pub fn sweep_lambda<M>(
    model: &M,
    prompts: &[Vec<TokenId>],
    template: &SteeringConfig,
    lambdas: &[f64],
    max_new_tokens: usize,
    scorer: Option<&dyn TaskScorer>,
) -> Result<SweepReport>
where
    M: SteerableModel + Sync + ?Sized,
{
    if prompts.is_empty() || lambdas.is_empty() {
        return Err(Error::Empty("sweep needs at least one prompt and one lambda".into()));
    }
    let cells: Vec<(usize, usize)> = (0..lambdas.len())
        .flat_map(|li| (0..prompts.len()).map(move |pi| (li, pi)))
        .collect();
    let outcomes: Vec<(f64, GenerationOutcome)> = cells
        .par_iter()
        .map(|&(li, pi)| {
            let cfg = template.with_lambda(lambdas[li]);
            let out = steered_generate(model, &prompts[pi], &cfg, max_new_tokens)?;
            let score = scorer.map_or(f64::NAN, |s| s.score(pi, &prompts[pi], &out));
            Ok((score, out))
        })
        .collect::<Result<_>>()?;

    let n = prompts.len();
    let rows = lambdas
        .iter()
        .enumerate()
        .map(|(li, &lambda)| {
            let chunk = &outcomes[li * n..(li + 1) * n];
            let reasoning_counts: Vec<u32> = chunk.iter().map(|(_, o)| o.reasoning_token_count).collect();
            let answer_counts: Vec<u32> = chunk.iter().map(|(_, o)| o.answer_token_count).collect();
            let as_f64 = |v: &[u32]| v.iter().map(|&c| c as f64).collect::<Vec<_>>();
            SweepRow {
                lambda,
                mean_reasoning_tokens: stats::mean(&as_f64(&reasoning_counts)),
                mean_answer_tokens: stats::mean(&as_f64(&answer_counts)),
                score: scorer.map(|_| stats::mean(&chunk.iter().map(|(s, _)| *s).collect::<Vec<_>>())),
                n,
                reasoning_counts,
                answer_counts,
            }
        })
        .collect();
    Ok(SweepReport { rows })
}

/// Runs greedy decoding with the target token's logit multiplied by `gamma`
/// at every step.
pub fn gamma_logit_intervention<M>(
    model: &M,
    prompts: &[Vec<TokenId>],
    config: &LogitInterventionConfig,
    max_new_tokens: usize,
) -> Result<Vec<GenerationOutcome>>
where
    M: SteerableModel + Sync + ?Sized,
{
    if !(config.gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be > 0, got {}", config.gamma)));
    }
    if config.target_token as usize >= model.vocab_size() {
        return Err(Error::Config(format!("target token {} outside vocabulary", config.target_token)));
    }
    let zero = LayerMatrix::zeros(model.n_layers(), model.d_model());
    prompts
        .par_iter()
        .map(|p| {
            decode(
                model,
                p,
                Decode {
                    offsets: &zero,
                    prompt_offsets: None,
                    watch: &[],
                    intervention: Some(*config),
                    max_new_tokens,
                },
            )
        })
        .collect()
}

/// Logits at the `<think>` position, before the first generated token.
pub fn think_position_logits<M: SteerableModel + ?Sized>(
    model: &M,
    prompt: &[TokenId],
    steering: &SteeringConfig,
) -> Result<Vec<f64>> {
    let special = model.special_tokens();
    if prompt.last() != Some(&special.think) {
        return Err(Error::PromptNotThink { think: special.think });
    }
    let offsets = steering.offsets(model.n_layers(), model.d_model())?;
    let mut state = model.begin_sequence(prompt, steering.steer_prompt_positions.then_some(&offsets))?;
    model.step(&mut state, &offsets)
}

/// Samples distinct token ids outside the delimiters and EOS.
pub fn sample_baseline_tokens(vocab_size: usize, special: SpecialTokens, count: usize, seed: u64) -> Result<Vec<TokenId>> {
    let excluded = [special.think, special.end_think, special.eos];
    let candidates: Vec<TokenId> = (0..vocab_size as TokenId).filter(|t| !excluded.contains(t)).collect();
    if candidates.len() < count {
        return Err(Error::Config(format!(
            "vocabulary has {} eligible tokens, need {count} for the baseline",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<TokenId> = rand::seq::index::sample(&mut rng, candidates.len(), count)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitShiftRow {
    pub lambda: f64,
    /// Distribution over prompts of the `</think>` logit change vs. lambda = 0.
    pub end_think_delta: Summary,
    pub eos_mean_delta: f64,
    /// Mean |delta logit| over the random baseline tokens and all prompts.
    pub baseline_mean_abs_delta: f64,
    pub watchlist_mean_delta: BTreeMap<TokenId, f64>,
}

/// A published real-model measurement carried alongside results for
/// comparison. Not produced by this toolkit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceObservation {
    pub quantity: String,
    pub token: Option<String>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub value: f64,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitShiftReport {
    pub schema_version: u32,
    pub n_prompts: usize,
    pub baseline_seed: u64,
    pub baseline_tokens: Vec<TokenId>,
    pub rows: Vec<LogitShiftRow>,
    pub reference_observations: Vec<ReferenceObservation>,
}

/// Published end-of-reasoning logit-shift pattern for reflection tokens on a
/// 7B distilled reasoning model, plus the gamma-intervention collapse.
pub fn reference_observations() -> Vec<ReferenceObservation> {
    const MODEL: &str = "R1-Distill-Qwen-7B";
    let table: [(&str, [f64; 4]); 4] = [
        ("Alright", [-0.2033, -0.0638, 0.0117, 0.0061]),
        ("Hmm", [-1.1171e-4, -4.7589e-5, 2.5699e-5, 7.8185e-6]),
        ("Oh", [-5.1966e-8, -2.9514e-8, 8.5295e-8, 2.2929e-7]),
        ("Wait", [-7.3789e-9, -1.6405e-14, 2.8739e-8, 9.2974e-8]),
    ];
    let lambdas = [-0.2, -0.1, 0.1, 0.2];
    let mut out: Vec<ReferenceObservation> = table
        .iter()
        .flat_map(|(tok, vals)| {
            lambdas.iter().zip(vals).map(move |(&l, &v)| ReferenceObservation {
                quantity: "delta_logit".into(),
                token: Some((*tok).into()),
                lambda: Some(l),
                gamma: None,
                value: v,
                model: MODEL.into(),
            })
        })
        .collect();
    for (quantity, value) in [("answer_token_count", 2.00), ("accuracy", 0.00)] {
        out.push(ReferenceObservation {
            quantity: quantity.into(),
            token: None,
            lambda: None,
            gamma: Some(0.8),
            value,
            model: MODEL.into(),
        });
    }
    out
}

/// Change in `<think>`-position logits under each steering strength, against
/// the unsteered pass.
pub fn logit_shift_analysis<M>(
    model: &M,
    prompts: &[Vec<TokenId>],
    template: &SteeringConfig,
    lambdas: &[f64],
    watchlist: &[TokenId],
    baseline_seed: u64,
) -> Result<LogitShiftReport>
where
    M: SteerableModel + Sync + ?Sized,
{
    if prompts.is_empty() || lambdas.is_empty() {
        return Err(Error::Empty("logit analysis needs prompts and lambdas".into()));
    }
    let vocab = model.vocab_size();
    if let Some(&bad) = watchlist.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::Config(format!("watchlist token {bad} outside vocabulary of {vocab}")));
    }
    let special = model.special_tokens();
    let baseline = sample_baseline_tokens(vocab, special, BASELINE_TOKEN_COUNT, baseline_seed)?;

    // per prompt: unsteered logits, then one logit vector per lambda
    let per_prompt: Vec<(Vec<f64>, Vec<Vec<f64>>)> = prompts
        .par_iter()
        .map(|p| {
            let base = think_position_logits(model, p, &template.with_lambda(0.0))?;
            let steered = lambdas
                .iter()
                .map(|&l| think_position_logits(model, p, &template.with_lambda(l)))
                .collect::<Result<Vec<_>>>()?;
            Ok((base, steered))
        })
        .collect::<Result<_>>()?;

    let rows = lambdas
        .iter()
        .enumerate()
        .map(|(li, &lambda)| {
            let delta = |pi: usize, tok: TokenId| per_prompt[pi].1[li][tok as usize] - per_prompt[pi].0[tok as usize];
            let n = prompts.len();
            let end: Vec<f64> = (0..n).map(|pi| delta(pi, special.end_think)).collect();
            let eos: Vec<f64> = (0..n).map(|pi| delta(pi, special.eos)).collect();
            let base_abs: Vec<f64> = (0..n)
                .flat_map(|pi| baseline.iter().map(move |&t| (pi, t)))
                .map(|(pi, t)| delta(pi, t).abs())
                .collect();
            let watch = watchlist
                .iter()
                .map(|&t| (t, stats::mean(&(0..n).map(|pi| delta(pi, t)).collect::<Vec<_>>())))
                .collect();
            let row = LogitShiftRow {
                lambda,
                end_think_delta: Summary::of(&end).expect("non-empty prompts"),
                eos_mean_delta: stats::mean(&eos),
                baseline_mean_abs_delta: stats::mean(&base_abs),
                watchlist_mean_delta: watch,
            };
            if [row.end_think_delta.mean, row.eos_mean_delta, row.baseline_mean_abs_delta]
                .iter()
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite(format!("logit deltas at lambda {lambda}")));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    Ok(LogitShiftReport {
        schema_version: LOGITS_SCHEMA_VERSION,
        n_prompts: prompts.len(),
        baseline_seed,
        baseline_tokens: baseline,
        rows,
        reference_observations: reference_observations(),
    })
}
