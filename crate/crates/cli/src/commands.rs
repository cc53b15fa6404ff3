//! One function per subcommand, plus the small amount of file plumbing
//! they share. All policy (what the flags mean, where outputs land, which
//! exit codes map to which failures) lives here; the engine crate stays
//! path-free.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use voiceface_core::confidence::{
    confidence_t, pair_coverage_k, round_to_4_significant, TestDesign,
};
use voiceface_core::dataset::Dataset;
use voiceface_core::embedder::{init_embedder, ModalityPair};
use voiceface_core::evaluation::{
    evaluate_matching, evaluate_retrieval, individual_test, split_dataset, MatchingOptions,
    MatchingResult, RetrievalOptions, RetrievalResult,
};
use voiceface_core::seeds;
use voiceface_core::segment::{detect_segments, read_frame_stream, FrameStream};
use voiceface_core::synthetic;
use voiceface_core::training::{train, LossRecord, LrSchedule};

use crate::config::{self, ExperimentConfig};
use crate::{
    CliError, Command, CommonArgs, ConfidenceArgs, EvaluateArgs, GenerateArgs, SegmentArgs,
    SplitRole, Task, TrainArgs,
};

/// Version stamp on every JSON report this binary writes.
const REPORT_VERSION: u32 = 1;

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Confidence(args) => cmd_confidence(args),
        Command::Segment(args) => cmd_segment(args),
    }
}

struct Context {
    config: ExperimentConfig,
    seed: u64,
}

fn load_context(common: &CommonArgs) -> Result<Context, CliError> {
    let config = match &common.config {
        Some(path) => {
            let text = read_text(path)?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    let seed = common.seed.unwrap_or(config.seed);
    Ok(Context { config, seed })
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let ctx = load_context(&args.common)?;
    let mut cfg = ctx.config.generator.clone();
    if let Some(v) = args.identities {
        cfg.num_identities = v;
    }
    if let Some(v) = args.voices_per_identity {
        cfg.voices_per_identity = v;
    }
    if let Some(v) = args.faces_per_identity {
        cfg.faces_per_identity = v;
    }
    if let Some(v) = args.rho {
        cfg.rho = v;
    }
    if let Some(v) = args.noise_sigma {
        cfg.noise_sigma = v;
    }
    cfg.seed = config::derive_seed(cfg.seed, ctx.seed, seeds::stream::GENERATOR);

    let dataset = synthetic::generate(&cfg)?;
    let out = resolve_path(args.out, &ctx.config.paths.dataset, "dataset", "out")?;
    let file = create_file(&out)?;
    let mut writer = BufWriter::new(file);
    dataset
        .write_jsonl(&mut writer)
        .and_then(|()| writer.flush())
        .map_err(|source| CliError::Io { path: out.clone(), source })?;

    let samples: usize = dataset
        .identities()
        .iter()
        .map(|ident| ident.voices.len() + ident.faces.len())
        .sum();
    println!(
        "wrote {}: {} identities, {samples} samples",
        out.display(),
        dataset.identities().len()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let ctx = load_context(&args.common)?;
    let data_path = resolve_path(args.data, &ctx.config.paths.dataset, "dataset", "data")?;
    let dataset = apply_split(read_dataset(&data_path)?, args.split, &ctx)?;

    let pair = build_pair(&ctx, &dataset)?;
    let mut cfg = ctx.config.training_config(ctx.seed);
    if let Some(steps) = args.steps {
        cfg.total_steps = steps;
        if ctx.config.training.schedule.is_none() {
            cfg.schedule = LrSchedule::step_wise(steps);
        }
    }
    if let Some(margin) = args.margin {
        cfg.margin = margin;
    }

    let (trained, history) = train(&dataset, &pair, &cfg)?;

    let out = resolve_path(args.out, &ctx.config.paths.checkpoint, "checkpoint", "out")?;
    write_text_file(&out, &trained.to_checkpoint_json())?;
    let history_path = args
        .history
        .or_else(|| ctx.config.paths.history.clone())
        .unwrap_or_else(|| out.with_extension("loss.csv"));
    write_history(&history_path, &history)?;

    match history.last() {
        Some(last) => println!(
            "trained {} steps, final loss {} -> {}, {}",
            cfg.total_steps,
            fmt_f64(last.loss),
            out.display(),
            history_path.display()
        ),
        None => println!(
            "trained 0 steps, checkpoint equals its initialization -> {}",
            out.display()
        ),
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    check_task_flags(&args)?;
    let ctx = load_context(&args.common)?;
    let ckpt_path = resolve_path(
        args.checkpoint,
        &ctx.config.paths.checkpoint,
        "checkpoint",
        "checkpoint",
    )?;
    let pair = ModalityPair::from_checkpoint_json(&read_text(&ckpt_path)?)?;
    let data_path = resolve_path(args.data, &ctx.config.paths.dataset, "dataset", "data")?;
    let dataset = apply_split(read_dataset(&data_path)?, args.split, &ctx)?;

    let out = resolve_path(args.out, &ctx.config.paths.report, "report", "out")?;
    let csv_out = out.with_extension("csv");
    if csv_out == out {
        return Err(CliError::Usage(
            "report path must not end in .csv; that name is taken by the CSV twin".into(),
        ));
    }

    let (doc, csv, headline) = match args.task {
        Task::Match | Task::Joint => {
            let mut opts = ctx.config.evaluation.matching;
            opts.seed = config::resolve_seed(opts.seed, ctx.seed);
            if let Some(n) = args.n {
                opts.num_candidates = n;
            }
            if let Some(k) = args.instances {
                opts.num_instances = k;
            }
            if let Some(mv) = args.mv {
                opts.voices_per_query = mv;
            }
            if let Some(mf) = args.mf {
                opts.faces_per_candidate = mf;
            }
            let result = evaluate_matching(&dataset, &pair, &opts)?;
            matching_report(args.task, &opts, &result)
        }
        Task::Retrieve => {
            let mut opts = ctx.config.evaluation.retrieval;
            opts.seed = config::resolve_seed(opts.seed, ctx.seed);
            let result = evaluate_retrieval(&dataset, &pair, &opts)?;
            retrieval_report(&opts, &result)
        }
        Task::Individual => {
            let id = args
                .id
                .as_deref()
                .expect("checked by check_task_flags");
            let repeats = args
                .repeats
                .unwrap_or(ctx.config.evaluation.individual_repeats);
            let seed = config::resolve_seed(ctx.config.evaluation.individual_seed, ctx.seed);
            let accuracy = individual_test(&dataset, &pair, id, repeats, seed)?;
            individual_report(id, repeats, seed, accuracy)
        }
    };

    write_text_file(&out, &doc)?;
    write_text_file(&csv_out, &csv)?;
    println!("{headline} -> {}, {}", out.display(), csv_out.display());
    Ok(())
}

/// Rejects flags that the chosen task would silently ignore.
fn check_task_flags(args: &EvaluateArgs) -> Result<(), CliError> {
    let matching = matches!(args.task, Task::Match | Task::Joint);
    let complaint = if args.task == Task::Individual && args.id.is_none() {
        Some("--task individual needs --id")
    } else if args.id.is_some() && args.task != Task::Individual {
        Some("--id only applies to --task individual")
    } else if args.repeats.is_some() && args.task != Task::Individual {
        Some("--repeats only applies to --task individual")
    } else if !matching && (args.n.is_some() || args.instances.is_some()) {
        Some("--n and --instances only apply to the matching tasks")
    } else if !matching && (args.mv.is_some() || args.mf.is_some()) {
        Some("--mv and --mf only apply to the matching tasks")
    } else {
        None
    };
    match complaint {
        Some(msg) => Err(CliError::Usage(msg.into())),
        None => Ok(()),
    }
}

fn cmd_confidence(args: ConfidenceArgs) -> Result<(), CliError> {
    let design = TestDesign {
        num_identities: args.num_identities,
        num_tuples: args.num_tuples,
    };
    let k = round_to_4_significant(pair_coverage_k(design)?);
    let t = round_to_4_significant(confidence_t(design)?);
    println!("K = {}", fmt_f64(k));
    println!("T = {}", fmt_f64(t));
    if let Some(out) = args.out {
        let doc = serde_json::json!({
            "version": REPORT_VERSION,
            "task": "confidence",
            "design": design,
            "result": {"pair_coverage_k": k, "confidence_t": t},
        });
        write_text_file(&out, &pretty(&doc))?;
    }
    Ok(())
}

fn cmd_segment(args: SegmentArgs) -> Result<(), CliError> {
    let ctx = load_context(&args.common)?;
    let stream_path = resolve_path(args.stream, &ctx.config.paths.stream, "stream", "stream")?;
    let gt_path = resolve_path(
        args.ground_truth,
        &ctx.config.paths.ground_truth,
        "ground_truth",
        "ground-truth",
    )?;
    let stream = read_stream(&stream_path)?;
    let ground_truth = read_stream(&gt_path)?;

    let mut cfg = ctx.config.segmenter;
    if let Some(v) = args.threshold {
        cfg.threshold = v;
    }
    if let Some(v) = args.min_window {
        cfg.min_window = v;
    }
    if let Some(v) = args.max_window {
        cfg.max_window = v;
    }
    if let Some(v) = args.step {
        cfg.step = v;
    }

    let segments = detect_segments(&stream, &ground_truth, &cfg)?;
    let out = resolve_path(args.out, &ctx.config.paths.segments, "segments", "out")?;
    let mut text = String::from("start_frame,end_frame,score\n");
    for s in &segments {
        text.push_str(&format!("{},{},{}\n", s.start, s.end, fmt_f64(s.score)));
    }
    write_text_file(&out, &text)?;
    println!("{} segment(s) -> {}", segments.len(), out.display());
    Ok(())
}

// ---- report rendering ----

fn matching_report(
    task: Task,
    opts: &MatchingOptions,
    result: &MatchingResult,
) -> (String, String, String) {
    let doc = serde_json::json!({
        "version": REPORT_VERSION,
        "task": task.name(),
        "options": opts,
        "result": result,
    });
    let mut csv = String::from("metric,identity,value\n");
    push_row(&mut csv, "accuracy", "", &fmt_f64(result.accuracy));
    push_row(&mut csv, "num_instances", "", &result.num_instances.to_string());
    if let Some(by_gender) = &result.by_gender {
        push_row(&mut csv, "accuracy_male", "", &fmt_f64(by_gender.male));
        push_row(&mut csv, "accuracy_female", "", &fmt_f64(by_gender.female));
    }
    if let Some(t) = result.confidence_t {
        push_row(&mut csv, "confidence_t", "", &fmt_f64(t));
    }
    let headline = format!(
        "1:{} accuracy {} over {} instances",
        opts.num_candidates,
        fmt_f64(result.accuracy),
        result.num_instances
    );
    (pretty(&doc), csv, headline)
}

fn retrieval_report(opts: &RetrievalOptions, result: &RetrievalResult) -> (String, String, String) {
    let doc = serde_json::json!({
        "version": REPORT_VERSION,
        "task": "retrieve",
        "options": opts,
        "result": result,
    });
    let mut csv = String::from("metric,identity,value\n");
    push_row(&mut csv, "map", "", &fmt_f64(result.map_score));
    push_row(&mut csv, "num_queries", "", &result.num_queries.to_string());
    for (id, ap) in &result.per_identity_ap {
        push_row(&mut csv, "average_precision", id, &fmt_f64(*ap));
    }
    let headline = format!(
        "mAP {} over {} queries",
        fmt_f64(result.map_score),
        result.num_queries
    );
    (pretty(&doc), csv, headline)
}

fn individual_report(id: &str, repeats: usize, seed: u64, accuracy: f64) -> (String, String, String) {
    let doc = serde_json::json!({
        "version": REPORT_VERSION,
        "task": "individual",
        "options": {"identity": id, "repeats": repeats, "seed": seed},
        "result": {"accuracy": accuracy},
    });
    let mut csv = String::from("metric,identity,value\n");
    push_row(&mut csv, "accuracy", id, &fmt_f64(accuracy));
    push_row(&mut csv, "repeats", id, &repeats.to_string());
    let headline = format!("identity {id} accuracy {}", fmt_f64(accuracy));
    (pretty(&doc), csv, headline)
}

fn push_row(csv: &mut String, metric: &str, identity: &str, value: &str) {
    csv.push_str(metric);
    csv.push(',');
    csv.push_str(identity);
    csv.push(',');
    csv.push_str(value);
    csv.push('\n');
}

fn pretty(doc: &serde_json::Value) -> String {
    let mut text = serde_json::to_string_pretty(doc).expect("report serialization cannot fail");
    text.push('\n');
    text
}

/// Shortest decimal that parses back to exactly the same f64 — the same
/// encoder the JSON outputs use, so the CSV twins are lossless too.
fn fmt_f64(x: f64) -> String {
    serde_json::to_string(&x).expect("float serialization cannot fail")
}

// ---- shared plumbing ----

fn build_pair(ctx: &Context, dataset: &Dataset) -> Result<ModalityPair, CliError> {
    let space = ctx.config.space;
    let voice_dim = dataset.voice_dim().ok_or_else(|| {
        voiceface_core::Error::InsufficientData("dataset has no voice samples".into())
    })?;
    let face_dim = dataset.face_dim().ok_or_else(|| {
        voiceface_core::Error::InsufficientData("dataset has no face samples".into())
    })?;
    let voice_section = &ctx.config.embedders.voice;
    let face_section = &ctx.config.embedders.face;
    let voice = init_embedder(
        voice_dim,
        &voice_section.hidden_dims,
        space.dim,
        voice_section.activation,
        voice_section.frozen.unwrap_or(true),
        config::derive_seed(voice_section.seed, ctx.seed, seeds::stream::VOICE_INIT),
    )?;
    let face = init_embedder(
        face_dim,
        &face_section.hidden_dims,
        space.dim,
        face_section.activation,
        face_section.frozen.unwrap_or(false),
        config::derive_seed(face_section.seed, ctx.seed, seeds::stream::FACE_INIT),
    )?;
    let pair = ModalityPair { space, voice, face };
    pair.validate()?;
    Ok(pair)
}

fn apply_split(dataset: Dataset, role: SplitRole, ctx: &Context) -> Result<Dataset, CliError> {
    if role == SplitRole::None {
        return Ok(dataset);
    }
    let section = &ctx.config.split;
    let seed = config::resolve_seed(section.seed, ctx.seed);
    let (train_half, test_half) = split_dataset(&dataset, section.mode, section.fraction, seed)?;
    Ok(match role {
        SplitRole::Train => train_half,
        SplitRole::Test => test_half,
        SplitRole::None => unreachable!(),
    })
}

fn resolve_path(
    flag: Option<PathBuf>,
    section: &Option<PathBuf>,
    key: &str,
    flag_name: &str,
) -> Result<PathBuf, CliError> {
    flag.or_else(|| section.clone()).ok_or_else(|| {
        CliError::Usage(format!(
            "no {key} path: pass --{flag_name} or set paths.{key} in the config"
        ))
    })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn create_file(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn write_text_file(path: &Path, text: &str) -> Result<(), CliError> {
    let mut ensured = text.to_owned();
    if !ensured.ends_with('\n') {
        ensured.push('\n');
    }
    fs::write(path, ensured).map_err(|source| CliError::Io { path: path.into(), source })
}

fn write_history(path: &Path, history: &[LossRecord]) -> Result<(), CliError> {
    let mut text = String::from("step,loss,learning_rate\n");
    for record in history {
        text.push_str(&format!(
            "{},{},{}\n",
            record.step,
            fmt_f64(record.loss),
            fmt_f64(record.learning_rate)
        ));
    }
    write_text_file(path, &text)
}

fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let file = File::open(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    Ok(Dataset::read_jsonl(BufReader::new(file))?)
}

fn read_stream(path: &Path) -> Result<FrameStream, CliError> {
    let file = File::open(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    Ok(read_frame_stream(BufReader::new(file))?)
}
