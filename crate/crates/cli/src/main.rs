//! `rplan`: command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 stage failure
//! (bad input data, failed computation).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rplan_core::directions::{self, DirectionSet, DirectionsFile};
use rplan_core::mock::{self, MockPlanner, MockPlannerSpec};
use rplan_core::overthink::{self, PairManifestEntry};
use rplan_core::pipeline::{self, CompletionScorer, PipelineConfig, PipelineError};
use rplan_core::probe::{self, LayerProbe, ProbeFile, ProbeTrainConfig, TargetPolicy, PROBE_SCHEMA_VERSION};
use rplan_core::report::{self, CosineCell, GammaCsvRow, LayerCosineRow, LayerCurveRow, NormCsvRow, SweepCsvRow};
use rplan_core::steering::{self, LogitInterventionConfig, SteerableModel, SteeringConfig, TaskScorer, TokenId};
use rplan_core::trace::{self, TraceDataset};
use rplan_core::{charts, Error};

#[derive(Parser)]
#[command(name = "rplan", version, about = "Reasoning-length planning analysis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic planted-direction model: specs, traces, prompts, pairs.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Inspect and split RPT traces.
    #[command(subcommand)]
    Trace(TraceCmd),
    /// Layer-wise Lasso probes.
    #[command(subcommand)]
    Probe(ProbeCmd),
    /// Difference-in-means directions.
    #[command(subcommand)]
    Directions(DirectionsCmd),
    /// Activation steering and logit interventions.
    #[command(subcommand)]
    Steer(SteerCmd),
    /// Pre-generation overthink detection.
    #[command(subcommand)]
    Overthink(OverthinkCmd),
    /// Config-driven end-to-end runs.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    /// Charts from report files.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Write a mock spec (the built-in default, optionally with another noise level).
    Spec {
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a trace with `per-level` questions at each difficulty level.
    Generate {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        per_level: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build vanilla/overthink question pairs plus their pairing manifest.
    Pairs {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        level: u32,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        /// Projection boost in units of the spec's noise sigma.
        #[arg(long, default_value_t = 3.0)]
        boost_sigmas: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Also write this many fresh vanilla questions for calibration.
        #[arg(long)]
        calibration: Option<usize>,
        #[arg(long, requires = "calibration")]
        calibration_out: Option<PathBuf>,
    },
    /// Write prompts (one JSON token-id array per line).
    Prompts {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        levels: Vec<u32>,
        #[arg(long, default_value_t = 50)]
        per_level: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum TraceCmd {
    /// Parse and check a trace; prints a summary.
    Validate { path: PathBuf },
    /// Seeded train/test split.
    Split {
        path: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Mean,
    First,
}

#[derive(Subcommand)]
enum ProbeCmd {
    /// Train one probe per layer and report held-out metrics.
    Train {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        alpha: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iterations: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[arg(long, value_enum, default_value = "mean")]
        policy: PolicyArg,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Layer-curve CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Evaluate saved probes on a whole trace.
    Eval {
        #[arg(long)]
        probes: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DirectionsCmd {
    /// Difference-in-means directions for every layer and level.
    Extract {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine, norm and (with probes) prediction reports.
    Report {
        #[arg(long)]
        dirs: PathBuf,
        #[arg(long)]
        probes: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// `mock` for the default spec or `mock:<spec.json>`.
    #[arg(long, default_value = "mock")]
    model: String,
    /// Prompts file (one JSON token-id array per line).
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long, default_value_t = 1024)]
    max_new_tokens: usize,
}

#[derive(Args)]
struct DirectionArgs {
    #[arg(long)]
    dirs: PathBuf,
    #[arg(long, default_value = "-0.2:0.2:0.05", allow_hyphen_values = true)]
    lambdas: String,
    /// Comma-separated layers to steer (default: all).
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// Also add offsets at prompt positions before `<think>`.
    #[arg(long)]
    steer_prompt: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Completion,
}

#[derive(Subcommand)]
enum SteerCmd {
    /// Mean reasoning/answer tokens per steering strength.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        dirs: DirectionArgs,
        #[arg(long, value_enum)]
        scorer: Option<ScorerArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// End-of-reasoning logit shift at the `<think>` position.
    Logits {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        dirs: DirectionArgs,
        /// Token ids, one per line; `#` starts a comment.
        #[arg(long)]
        watchlist: Option<PathBuf>,
        #[arg(long, default_value_t = 17)]
        baseline_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multiply one token's logit by gamma at every decoding step.
    Gamma {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        gamma: f64,
        /// Target token (default: the model's `</think>`).
        #[arg(long)]
        token: Option<TokenId>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum OverthinkCmd {
    /// Calibrate a threshold and evaluate vanilla/overthink pairs.
    Detect {
        #[arg(long)]
        probes: PathBuf,
        /// Probe layer or `best`.
        #[arg(long, default_value = "best")]
        layer: String,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Calibration trace (default: the vanilla side of the pairs).
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long, default_value_t = overthink::DEFAULT_QUANTILE)]
        quantile: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Run every configured stage.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a preset config (`full` or `efficient-inference`).
    Preset {
        #[arg(long, default_value = "full")]
        name: String,
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Render SVG charts for every known report in a directory.
    Charts {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Error plus the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            _ => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: msg.into(),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Synth(c) => synth(c),
        Command::Trace(c) => trace_cmd(c),
        Command::Probe(c) => probe_cmd(c),
        Command::Directions(c) => directions_cmd(c),
        Command::Steer(c) => steer(c),
        Command::Overthink(c) => overthink_cmd(c),
        Command::Pipeline(c) => pipeline_cmd(c),
        Command::Report(ReportCmd::Charts { reports, out_dir }) => {
            for p in charts::emit_charts(&reports, &out_dir)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

/// Reads a JSON input whose absence or malformation is a configuration error.
fn read_config_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn load_spec(path: Option<&Path>) -> CliResult<MockPlannerSpec> {
    let spec = match path {
        Some(p) => read_config_json(p)?,
        None => MockPlannerSpec::default(),
    };
    spec.validate()?;
    Ok(spec)
}

fn load_model(arg: &str) -> CliResult<MockPlanner> {
    let spec = match arg.split_once(':') {
        None if arg == "mock" => load_spec(None)?,
        Some(("mock", path)) => load_spec(Some(Path::new(path)))?,
        _ => return Err(config_err(format!("unknown model {arg:?}; expected `mock` or `mock:<spec.json>`"))),
    };
    Ok(mock::as_steerable(&spec)?)
}

fn load_prompts(path: &Path) -> CliResult<Vec<Vec<TokenId>>> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let prompts: Vec<Vec<TokenId>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| config_err(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect::<CliResult<_>>()?;
    if prompts.is_empty() {
        return Err(config_err(format!("{} holds no prompts", path.display())));
    }
    Ok(prompts)
}

fn load_directions(path: &Path) -> CliResult<DirectionSet> {
    let file: DirectionsFile = read_config_json(path)?;
    Ok(DirectionSet::from_file(&file)?)
}

fn load_probes(path: &Path) -> CliResult<ProbeFile> {
    let file: ProbeFile = read_config_json(path)?;
    if file.schema_version != PROBE_SCHEMA_VERSION {
        return Err(config_err(format!(
            "{}: probe schema version {} (expected {PROBE_SCHEMA_VERSION})",
            path.display(),
            file.schema_version
        )));
    }
    Ok(file)
}

fn read_trace(path: &Path) -> CliResult<TraceDataset> {
    trace::read_trace_file(path).map_err(|e| Failure {
        code: 3,
        message: format!("{}: {e}", path.display()),
    })
}

fn steering_template(model: &MockPlanner, args: &DirectionArgs) -> CliResult<(SteeringConfig, Vec<f64>)> {
    let set = load_directions(&args.dirs)?;
    if set.layers.len() != model.n_layers() || set.d_model() != model.d_model() {
        return Err(config_err(format!(
            "directions are {} x {}, model is {} x {}",
            set.layers.len(),
            set.d_model(),
            model.n_layers(),
            model.d_model()
        )));
    }
    let mut template = SteeringConfig::new(0.0, set.mean_directions());
    template.layer_mask = args.layers.as_ref().map(|l| l.iter().copied().collect());
    template.steer_prompt_positions = args.steer_prompt;
    let lambdas = steering::parse_lambda_grid(&args.lambdas)?;
    Ok((template, lambdas))
}

fn synth(cmd: SynthCmd) -> CliResult {
    match cmd {
        SynthCmd::Spec { noise, seed, out } => {
            let mut spec = MockPlannerSpec::default();
            if let Some(s) = noise {
                spec.noise_sigma = s;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            spec.validate()?;
            report::write_json(&out, &spec)?;
        }
        SynthCmd::Generate { spec, per_level, out } => {
            let spec = load_spec(spec.as_deref())?;
            let ds = mock::build_trace(&spec, per_level)?;
            let bytes = trace::write_trace_file(&ds, &out)?;
            println!("wrote {} records ({bytes} bytes) to {}", ds.len(), out.display());
        }
        SynthCmd::Pairs {
            spec,
            level,
            pairs,
            boost_sigmas,
            out,
            manifest,
            calibration,
            calibration_out,
        } => {
            let spec = load_spec(spec.as_deref())?;
            let (ds, entries) = overthink::build_mock_pairs(&spec, level, pairs, boost_sigmas * spec.noise_sigma)?;
            trace::write_trace_file(&ds, &out)?;
            report::write_json(&manifest, &entries)?;
            if let (Some(n), Some(path)) = (calibration, calibration_out) {
                trace::write_trace_file(&overthink::build_mock_calibration(&spec, level, n)?, &path)?;
            } else if calibration.is_some() {
                return Err(config_err("--calibration needs --calibration-out"));
            }
        }
        SynthCmd::Prompts { levels, per_level, out } => {
            let mut text = String::new();
            for l in levels {
                for i in 0..per_level as u32 {
                    text.push_str(&serde_json::to_string(&mock::prompt(l, i)?).expect("token ids serialize"));
                    text.push('\n');
                }
            }
            fs::write(&out, text).map_err(Error::from)?;
        }
    }
    Ok(())
}

fn trace_cmd(cmd: TraceCmd) -> CliResult {
    match cmd {
        TraceCmd::Validate { path } => {
            let ds = read_trace(&path)?;
            let m = ds.metadata();
            println!(
                "ok: {} records, {} layers x {} dims, model {:?}",
                ds.len(),
                m.n_layers,
                m.d_model,
                m.model_name
            );
            for (level, recs) in trace::group_by_difficulty(&ds) {
                println!("  level {level}: {} records", recs.len());
            }
        }
        TraceCmd::Split {
            path,
            test_fraction,
            seed,
            train_out,
            test_out,
        } => {
            let ds = read_trace(&path)?;
            let (train, test) = trace::split_dataset(&ds, test_fraction, seed)?;
            trace::write_trace_file(&train, &train_out)?;
            trace::write_trace_file(&test, &test_out)?;
            println!("train {} / test {}", train.len(), test.len());
        }
    }
    Ok(())
}

fn print_curve(probes: &[LayerProbe]) {
    for p in probes {
        let r = p.metrics.pearson_r.map_or("undefined".to_string(), |r| format!("{r:.4}"));
        println!("layer {:>3}  r = {r:>9}  rmse = {:.3}", p.layer, p.metrics.rmse);
    }
}

fn probe_cmd(cmd: ProbeCmd) -> CliResult {
    match cmd {
        ProbeCmd::Train {
            trace,
            alpha,
            max_iterations,
            tolerance,
            policy,
            test_fraction,
            seed,
            out,
            curve,
        } => {
            let ds = read_trace(&trace)?;
            let config = ProbeTrainConfig {
                alpha,
                max_iterations,
                tolerance,
                target_policy: match policy {
                    PolicyArg::Mean => TargetPolicy::MeanOverRollouts,
                    PolicyArg::First => TargetPolicy::FirstRollout,
                },
                seed,
            };
            let probes = probe::layerwise_probe(&ds, &config, test_fraction, seed)?;
            report::write_json(&out, &ProbeFile::from_layerwise(&probes, &config, test_fraction, seed))?;
            if let Some(c) = curve {
                report::write_csv(c, &LayerCurveRow::from_probes(&probes))?;
            }
            print_curve(&probes);
        }
        ProbeCmd::Eval { probes, trace, out } => {
            let file = load_probes(&probes)?;
            let ds = read_trace(&trace)?;
            let evaluated = file
                .probes
                .iter()
                .map(|e| {
                    let p = e.probe();
                    let design = probe::assemble_design(&ds, p.layer, file.target_policy)?;
                    let metrics = probe::evaluate(&p, &design)?;
                    Ok(LayerProbe {
                        layer: p.layer,
                        probe: p,
                        metrics,
                    })
                })
                .collect::<Result<Vec<_>, Error>>()?;
            if let Some(o) = out {
                report::write_csv(o, &LayerCurveRow::from_probes(&evaluated))?;
            }
            print_curve(&evaluated);
        }
    }
    Ok(())
}

fn directions_cmd(cmd: DirectionsCmd) -> CliResult {
    match cmd {
        DirectionsCmd::Extract { trace, out } => {
            let ds = read_trace(&trace)?;
            let set = directions::extract_all(&ds)?;
            report::write_json(&out, &set.to_file())?;
        }
        DirectionsCmd::Report { dirs, probes, out_dir } => {
            let set = load_directions(&dirs)?;
            fs::create_dir_all(&out_dir).map_err(Error::from)?;
            let mut cells = Vec::new();
            for l in &set.layers {
                cells.extend(CosineCell::from_matrix(&directions::cosine_matrix(&set, l.layer)?));
            }
            report::write_csv(out_dir.join(report::COSINE_CSV), &cells)?;
            let curve: Vec<LayerCosineRow> = directions::layerwise_mean_cosine(&set)?
                .into_iter()
                .map(|(layer, mean_cosine)| LayerCosineRow { layer, mean_cosine })
                .collect();
            report::write_csv(out_dir.join(report::LAYER_COSINE_CSV), &curve)?;
            report::write_csv(
                out_dir.join(report::NORMS_CSV),
                &NormCsvRow::from_norms(&directions::norms_by_level(&set), &set),
            )?;
            if let Some(p) = probes {
                let file = load_probes(&p)?;
                let rows = file
                    .probes
                    .iter()
                    .filter_map(|e| set.layer(e.layer).map(|l| (e.probe(), l)))
                    .map(|(p, l)| directions::predict_from_direction(&p, &l.mean))
                    .collect::<Result<Vec<_>, Error>>()?;
                report::write_csv(out_dir.join(report::PREDICTIONS_CSV), &rows)?;
            }
        }
    }
    Ok(())
}

fn read_watchlist(path: &Path) -> CliResult<Vec<TokenId>> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.parse().map_err(|_| config_err(format!("{}: bad token id {l:?}", path.display()))))
        .collect()
}

fn steer(cmd: SteerCmd) -> CliResult {
    match cmd {
        SteerCmd::Sweep { model, dirs, scorer, out } => {
            let m = load_model(&model.model)?;
            let prompts = load_prompts(&model.prompts)?;
            let (template, lambdas) = steering_template(&m, &dirs)?;
            let scorer: Option<&dyn TaskScorer> = scorer.map(|ScorerArg::Completion| &CompletionScorer as &dyn TaskScorer);
            let rep = steering::sweep_lambda(&m, &prompts, &template, &lambdas, model.max_new_tokens, scorer)?;
            report::write_csv(&out, &SweepCsvRow::from_report(&rep))?;
            for r in &rep.rows {
                println!(
                    "lambda {:+.3}  reasoning {:8.2}  answer {:6.2}",
                    r.lambda, r.mean_reasoning_tokens, r.mean_answer_tokens
                );
            }
        }
        SteerCmd::Logits {
            model,
            dirs,
            watchlist,
            baseline_seed,
            out,
        } => {
            let m = load_model(&model.model)?;
            let prompts = load_prompts(&model.prompts)?;
            let (template, lambdas) = steering_template(&m, &dirs)?;
            let watch = match watchlist {
                Some(p) => read_watchlist(&p)?,
                None => Vec::new(),
            };
            let rep = steering::logit_shift_analysis(&m, &prompts, &template, &lambdas, &watch, baseline_seed)?;
            report::write_json(&out, &rep)?;
        }
        SteerCmd::Gamma { model, gamma, token, out } => {
            let m = load_model(&model.model)?;
            let prompts = load_prompts(&model.prompts)?;
            let iv = LogitInterventionConfig {
                gamma,
                target_token: token.unwrap_or(m.special_tokens().end_think),
            };
            let outs = steering::gamma_logit_intervention(&m, &prompts, &iv, model.max_new_tokens)?;
            report::write_csv(&out, &GammaCsvRow::from_outcomes(gamma, &outs))?;
        }
    }
    Ok(())
}

fn overthink_cmd(cmd: OverthinkCmd) -> CliResult {
    let OverthinkCmd::Detect {
        probes,
        layer,
        trace,
        manifest,
        calibration,
        quantile,
        out,
    } = cmd;
    let file = load_probes(&probes)?;
    let layer = if layer == "best" {
        file.best_layer().ok_or_else(|| config_err("no probe carries a defined validation correlation"))?
    } else {
        layer.parse().map_err(|_| config_err(format!("--layer must be a number or `best`, got {layer:?}")))?
    };
    let entry = file.get(layer).ok_or_else(|| config_err(format!("no probe for layer {layer}")))?;
    let p = entry.probe();
    let ds = read_trace(&trace)?;
    let entries: Vec<PairManifestEntry> = read_config_json(&manifest)?;
    let pairs = overthink::pairs_from_manifest(&ds, &entries)?;
    let tau = match calibration {
        Some(c) => overthink::calibrate_threshold(&p, &read_trace(&c)?, quantile)?,
        None => {
            let vanilla: Vec<_> = pairs.iter().map(|q| q.vanilla.clone()).collect();
            let cal = TraceDataset::new(ds.metadata().clone(), vanilla).map_err(Error::from)?;
            overthink::calibrate_threshold(&p, &cal, quantile)?
        }
    };
    let rep = overthink::paired_eval(&p, &pairs, tau)?;
    report::write_json(&out, &rep)?;
    println!(
        "layer {layer}  tau {:.3}  auc {:.4}  separation {:.3}  detection {:.3}  fpr {:.3}",
        rep.threshold, rep.auc, rep.pair_separation_rate, rep.detection_rate_at_threshold, rep.false_positive_rate
    );
    Ok(())
}

fn pipeline_cmd(cmd: PipelineCmd) -> CliResult {
    match cmd {
        PipelineCmd::Run { config } => {
            let cfg: PipelineConfig = read_config_json(&config)?;
            let manifest = pipeline::run_pipeline(&cfg)?;
            for f in &manifest.files {
                println!("{}  {}", f.sha256, f.path);
            }
        }
        PipelineCmd::Preset { name, output_dir, out } => {
            let cfg = pipeline::preset(&name, output_dir)?;
            report::write_json(&out, &cfg)?;
        }
    }
    Ok(())
}
