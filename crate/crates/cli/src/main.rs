//! `kwspot` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 numerical divergence during training.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use kwspot::ctc::Alphabet;
use kwspot::decoder::{DecoderMode, DetectionEvent, Semantics};
use kwspot::eval::{self, GroundTruthOccurrence, KeywordScores};
use kwspot::features::{self, StreamingFeaturizer};
use kwspot::io::{self, ManifestRow, StreamHeader, StreamKind, TruthRow};
use kwspot::lstm::{self, Model, NetworkConfig, NetworkParams, TrainOptions, Utterance};
use kwspot::spot::{Spotter, SpotterConfig, DEFAULT_REFRACTORY};
use kwspot::synth::{self, SynthConfig};
use kwspot::{Error, Frames};

#[derive(Parser, Debug)]
#[command(name = "kwspot", version, about = "Streaming CTC keyword spotter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with alignments and a truth table.
    Synth(SynthArgs),
    /// Compute 123-dimensional features of a 16 kHz WAV file.
    Featurize(FeaturizeArgs),
    /// Train a network on a corpus directory.
    Train(TrainArgs),
    /// Run keyword spotting over a WAV file or a stream file.
    Spot(SpotArgs),
    /// Score detections against a truth table.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    sentences: usize,
    #[arg(long, env = "KWS_SEED", default_value_t = 1)]
    seed: u64,
    /// Seed of the label templates; keep it fixed across train/eval corpora.
    #[arg(long, default_value_t = 7)]
    template_seed: u64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    noise_std: f64,
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    separation: f64,
    #[arg(long, default_value_t = 4)]
    mean_duration: usize,
    #[arg(long, default_value_t = 2)]
    jitter: usize,
    #[arg(long, default_value_t = features::FEATURE_DIM)]
    dim: usize,
    /// Vocabulary file, one word per line (default: the bundled vocabulary).
    #[arg(long)]
    vocabulary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FeaturizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Held-out corpus for annealing and early stopping.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    /// Per-update loss CSV (default: next to the model).
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "32,32,32")]
    layers: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    unroll: usize,
    #[arg(long, default_value_t = 64)]
    update_period: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    #[arg(long, default_value_t = 1000)]
    updates: usize,
    #[arg(long, env = "KWS_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    validate_every: usize,
    #[arg(long, default_value_t = 4)]
    max_halvings: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    KeywordOnly,
    Filler,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SemanticsArg {
    Sum,
    Max,
}

impl From<SemanticsArg> for Semantics {
    fn from(s: SemanticsArg) -> Self {
        match s {
            SemanticsArg::Sum => Semantics::Sum,
            SemanticsArg::Max => Semantics::Max,
        }
    }
}

#[derive(Args, Debug)]
struct SpotArgs {
    /// Model file; may be omitted for posterior stream input.
    #[arg(long)]
    model: Option<PathBuf>,
    /// 16 kHz WAV file, or a features/posteriors stream file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    keywords: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::KeywordOnly)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = SemanticsArg::Max)]
    semantics: SemanticsArg,
    #[arg(long, default_value_t = 1.0)]
    threshold_per_char: f64,
    #[arg(long, default_value_t = DEFAULT_REFRACTORY)]
    refractory: usize,
    /// Detections CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-frame detection statistics, one column per keyword.
    #[arg(long)]
    scores_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    keywords: PathBuf,
    /// Detections CSV produced with a threshold at least as loose as the sweep.
    #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
    detections: Option<PathBuf>,
    /// Per-frame score stream from `spot --scores-out`.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Per-character thresholds as `start:end:count`.
    #[arg(long, default_value = "0.05:15:50")]
    sweep: String,
    #[arg(long, default_value_t = eval::DEFAULT_MATCH_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = DEFAULT_REFRACTORY)]
    refractory: usize,
    /// PR curve CSV.
    #[arg(long)]
    out: PathBuf,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn run_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let config = SynthConfig {
        feature_dim: args.dim,
        mean_duration: args.mean_duration,
        jitter: args.jitter,
        separation: args.separation,
        noise_std: args.noise_std,
        seed: args.seed,
        template_seed: args.template_seed,
        ..SynthConfig::default()
    };
    config.validate()?;
    let vocabulary = match &args.vocabulary {
        Some(p) => io::read_keyword_list(p)?,
        None => synth::default_vocabulary(),
    };
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let corpus = synth::build_corpus(&vocabulary, args.sentences, &config)?;
    let offsets = corpus.offsets();

    let mut stream = io::create_stream(
        &args.out.join("stream.kwstrm"),
        StreamHeader::new(StreamKind::Features, args.dim),
    )?;
    let mut manifest = Vec::with_capacity(corpus.utterances.len());
    for (i, u) in corpus.utterances.iter().enumerate() {
        for f in u.features.iter() {
            stream.write_frame(f)?;
        }
        manifest.push(ManifestRow {
            id: format!("utt{:05}", i + 1),
            transcription: u.text.clone(),
            frames: u.len(),
            start_frame: offsets[i],
        });
    }
    stream.finish()?;
    io::write_manifest(&args.out.join("manifest.csv"), &manifest)?;
    let truth: Vec<TruthRow> = corpus
        .occurrences
        .iter()
        .map(|o| TruthRow {
            keyword: o.word.clone(),
            utterance: o.utterance,
            utterance_end_frame: o.end_frame,
            end_frame: offsets[o.utterance] + o.end_frame,
        })
        .collect();
    io::write_truth(&args.out.join("truth.csv"), &truth)?;
    if args.vocabulary.is_none() {
        std::fs::write(
            args.out.join("keywords_a.txt"),
            synth::SET_A.join("\n") + "\n",
        )?;
        std::fs::write(
            args.out.join("keywords_b.txt"),
            synth::SET_B.join("\n") + "\n",
        )?;
    }
    info!(
        "{} utterances, {} frames, {} word occurrences",
        corpus.utterances.len(),
        corpus.total_frames(),
        truth.len()
    );
    Ok(())
}

fn is_wav(path: &Path) -> anyhow::Result<bool> {
    let mut magic = [0u8; 4];
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let n = f.read(&mut magic)?;
    Ok(n == 4 && &magic == b"RIFF")
}

fn wav_features(
    path: &Path,
    mut sink: impl FnMut(&[f64]) -> anyhow::Result<()>,
) -> anyhow::Result<()> {
    let (samples, rate) = features::open_wav(path)?;
    if rate != features::SAMPLE_RATE {
        bail!(Error::Format(format!(
            "{rate} Hz audio, expected {}",
            features::SAMPLE_RATE
        )));
    }
    let mut fe = StreamingFeaturizer::new();
    let mut chunk = Vec::with_capacity(4096);
    for s in samples {
        chunk.push(s?);
        if chunk.len() == chunk.capacity() {
            for row in fe.push(&chunk) {
                sink(&row)?;
            }
            chunk.clear();
        }
    }
    for row in fe.push(&chunk) {
        sink(&row)?;
    }
    for row in fe.finish()? {
        sink(&row)?;
    }
    Ok(())
}

fn run_featurize(args: &FeaturizeArgs) -> anyhow::Result<()> {
    let mut w = io::create_stream(
        &args.out,
        StreamHeader::new(StreamKind::Features, features::FEATURE_DIM),
    )?;
    wav_features(&args.input, |row| Ok(w.write_frame(row)?))?;
    info!("{} frames", w.frames_written());
    w.finish()?;
    Ok(())
}

/// Utterances of a corpus directory (manifest.csv + stream.kwstrm).
fn load_corpus(
    dir: &Path,
    alphabet: &Alphabet,
) -> anyhow::Result<Vec<(Frames, kwspot::ctc::LabelSequence)>> {
    if !dir.is_dir() {
        bail!(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("corpus directory {} not found", dir.display())
        )));
    }
    let manifest = io::read_manifest(&dir.join("manifest.csv"))?;
    let (header, frames) = io::read_stream_file(&dir.join("stream.kwstrm"))?;
    if header.kind != StreamKind::Features {
        bail!(Error::Format(format!(
            "corpus stream holds {}, expected features",
            header.kind
        )));
    }
    manifest
        .iter()
        .map(|row| {
            let end = row.start_frame + row.frames;
            if end > frames.len() {
                bail!(Error::Format(format!(
                    "utterance {} runs past the stream end",
                    row.id
                )));
            }
            Ok((
                frames.slice(row.start_frame, end),
                alphabet.encode(&row.transcription)?,
            ))
        })
        .collect()
}

fn run_train(args: &TrainArgs) -> anyhow::Result<()> {
    let alphabet = Alphabet::standard();
    let corpus = load_corpus(&args.corpus, &alphabet)?;
    if corpus.is_empty() {
        bail!(Error::EmptyCorpus);
    }
    let dim = corpus[0].0.dim();
    let stats = features::fit_normalizer_many(corpus.iter().map(|(f, _)| f))?;
    let prepare =
        |set: Vec<(Frames, kwspot::ctc::LabelSequence)>| -> anyhow::Result<Vec<Utterance>> {
            set.into_iter()
                .map(|(f, labels)| {
                    Ok(Utterance {
                        features: features::normalize(&f, &stats)?,
                        labels,
                    })
                })
                .collect()
        };
    let train = prepare(corpus)?;
    let validation = match &args.valid {
        Some(dir) => prepare(load_corpus(dir, &alphabet)?)?,
        None => Vec::new(),
    };

    let config = NetworkConfig {
        input_dim: dim,
        layer_sizes: args.layers.clone(),
        output_dim: alphabet.len(),
        unroll_length: args.unroll,
        update_period: args.update_period,
        learning_rate: args.lr,
        momentum: args.momentum,
        clip_norm: args.clip,
        seed: args.seed,
    };
    config.validate()?;
    let params = NetworkParams::init(&config);
    let mut options = TrainOptions::new(args.updates, alphabet.blank(), alphabet.boundary());
    options.validation = validation;
    options.validate_every = args.validate_every;
    options.max_halvings = args.max_halvings;
    let report = lstm::train_stream(&config, params, &train, &options)?;
    if report.skipped_segments > 0 {
        warn!(
            "{} segments did not fit the unroll window",
            report.skipped_segments
        );
    }

    let model = Model {
        config,
        params: report.params,
        stats,
        alphabet,
    };
    lstm::save_model(&args.model, &model)?;
    let log_path = args
        .loss_log
        .clone()
        .unwrap_or_else(|| args.model.with_extension("loss.csv"));
    io::write_loss_log(BufWriter::new(File::create(&log_path)?), &report.log)?;
    info!(
        "saved {} ({} updates logged, final lr {})",
        args.model.display(),
        report.log.len(),
        report.final_learning_rate
    );
    Ok(())
}

fn run_spot(args: &SpotArgs) -> anyhow::Result<()> {
    let mode = DecoderMode::from_parts(args.mode == ModeArg::Filler, args.semantics.into())?;
    let keywords = io::read_keyword_list(&args.keywords)?;
    let mut config = SpotterConfig::new(mode, args.threshold_per_char);
    config.refractory = args.refractory;
    let model = args.model.as_deref().map(lstm::load_model).transpose()?;
    let mut spotter = match &model {
        Some(m) => Spotter::with_model(m, &keywords, &config)?,
        None => Spotter::decoder_only(&Alphabet::standard(), &keywords, &config)?,
    };
    let keywords = spotter.keywords().to_vec();

    let out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    let mut detections = io::DetectionsWriter::new(out)?;
    let mut scores = match &args.scores_out {
        Some(p) => Some(io::create_stream(
            p,
            StreamHeader::new(StreamKind::Scores, keywords.len()),
        )?),
        None => None,
    };
    let mut emit = |step: kwspot::spot::SpotStep,
                    detections: &mut io::DetectionsWriter<Box<dyn Write>>|
     -> anyhow::Result<()> {
        if let Some(w) = scores.as_mut() {
            w.write_frame(&step.scores.detection)?;
        }
        for e in &step.events {
            detections.write(e, &keywords)?;
        }
        Ok(())
    };

    if is_wav(&args.input)? {
        if !spotter.has_network() {
            bail!(usage("WAV input needs --model"));
        }
        wav_features(&args.input, |row| {
            emit(spotter.push_features(row)?, &mut detections)
        })?;
    } else {
        let mut reader = io::open_stream(&args.input)?;
        let header = reader.header();
        let mut row = vec![0.0; header.dim];
        match header.kind {
            StreamKind::Posteriors => {
                header.expect(StreamKind::Posteriors, spotter.num_labels())?;
                while reader.read_frame(&mut row)? {
                    emit(spotter.push_posterior(&row)?, &mut detections)?;
                }
            }
            StreamKind::Features => {
                let dim = spotter
                    .feature_dim()
                    .ok_or_else(|| usage("feature input needs --model"))?;
                header.expect(StreamKind::Features, dim)?;
                while reader.read_frame(&mut row)? {
                    emit(spotter.push_features(&row)?, &mut detections)?;
                }
            }
            StreamKind::Scores => bail!(Error::Format("cannot spot on a score stream".into())),
        }
    }
    for e in spotter.finish() {
        detections.write(&e, &keywords)?;
    }
    detections.finish()?.flush()?;
    if let Some(w) = scores {
        w.finish()?;
    }
    Ok(())
}

fn parse_sweep(spec: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || usage(format!("bad --sweep {spec:?}, expected start:end:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].parse().map_err(|_| bad())?;
    let end: f64 = parts[1].parse().map_err(|_| bad())?;
    let count: usize = parts[2].parse().map_err(|_| bad())?;
    if count == 0 || !start.is_finite() || !end.is_finite() {
        return Err(bad());
    }
    Ok(eval::linspace(start, end, count))
}

fn run_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let thresholds = parse_sweep(&args.sweep)?;
    let keywords = io::read_keyword_list(&args.keywords)?;
    let alphabet = Alphabet::standard();
    let num_chars = keywords
        .iter()
        .map(|k| Ok(kwspot::decoder::KeywordNetwork::build(k, &alphabet, 0.0)?.num_chars()))
        .collect::<anyhow::Result<Vec<usize>>>()?;
    let id = |name: &str| keywords.iter().position(|k| k == name);
    let truth: Vec<GroundTruthOccurrence> = io::read_truth(&args.truth)?
        .into_iter()
        .filter_map(|r| {
            id(&r.keyword).map(|keyword| GroundTruthOccurrence {
                keyword,
                end_frame: r.end_frame,
            })
        })
        .collect();
    for (k, name) in keywords.iter().enumerate() {
        if !truth.iter().any(|t| t.keyword == k) {
            warn!("keyword {name:?} never occurs in the truth table");
        }
    }

    let (sweep, events) = if let Some(path) = &args.detections {
        let mut events = Vec::new();
        for row in io::read_detections(path)? {
            let keyword = id(&row.keyword).ok_or_else(|| {
                Error::Format(format!(
                    "detection of {:?}, which is not in the keyword list",
                    row.keyword
                ))
            })?;
            events.push(DetectionEvent {
                keyword,
                frame: row.frame,
                score: row.score,
            });
        }
        let sweep = eval::pr_sweep_events(&events, &num_chars, &truth, &thresholds, args.window);
        (sweep, events)
    } else {
        let path = args.scores.as_ref().expect("clap enforces one input");
        let (header, frames) = io::read_stream_file(path)?;
        header.expect(StreamKind::Scores, keywords.len())?;
        let columns: Vec<Vec<f64>> = (0..keywords.len())
            .map(|k| frames.iter().map(|f| f[k]).collect())
            .collect();
        let streams: Vec<KeywordScores<'_>> = columns
            .iter()
            .zip(&num_chars)
            .map(|(c, &n)| KeywordScores {
                scores: c,
                num_chars: n,
            })
            .collect();
        let sweep = eval::pr_sweep(&streams, &truth, &thresholds, args.refractory, args.window);
        let mut events = Vec::new();
        for (k, s) in streams.iter().enumerate() {
            events.extend(
                kwspot::decoder::detect(s.scores, f64::NEG_INFINITY, args.refractory)
                    .into_iter()
                    .map(|mut e| {
                        e.keyword = k;
                        e
                    }),
            );
        }
        (sweep, events)
    };
    io::write_pr_csv(BufWriter::new(File::create(&args.out)?), &sweep.points)?;

    let best = sweep.best_point();
    println!(
        "max_f1 {:.4} at threshold_per_char {} (precision {:.4}, recall {:.4}, tp {}, fp {}, fn {})",
        best.f1, best.threshold, best.precision, best.recall, best.tp, best.fp, best.fn_
    );
    let kept: Vec<DetectionEvent> = events
        .into_iter()
        .filter(|e| e.score > -(best.threshold * num_chars[e.keyword] as f64))
        .collect();
    let matched = eval::match_detections(&kept, &truth, args.window);
    match eval::latency_stats(&eval::latencies(&kept, &truth, &matched.pairs)) {
        Some(l) => println!(
            "latency median {:.1} ms, mean {:.1} ms, max {:.1} ms over {} matches",
            l.median_ms(),
            l.mean_ms(),
            l.max_ms(),
            l.count
        ),
        None => println!("latency n/a (no matches)"),
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Diverged { .. }) => 3,
        Some(Error::Config(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Featurize(a) => run_featurize(a),
        Command::Train(a) => run_train(a),
        Command::Spot(a) => run_spot(a),
        Command::Eval(a) => run_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
