//! The `speechvec` command line: a staged pipeline through files.
//!
//! `features` (WAV + alignments → feature caches + manifest) → `train`
//! (→ checkpoint) → `export` (→ word-vector table) → `eval` (→ report).
//! `gradcheck` verifies the analytic gradient on seeded tiny problems.

pub mod config;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use speechvec::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use speechvec::corpus::{excise_segments, load_alignments, read_manifest, write_manifest, Corpus, ManifestRow};
use speechvec::dsp::{extract_mfcc, load_features, read_wav, save_features, MfccConfig};
use speechvec::embeddings::{average_by_word, encode_corpus, export_table, import_table};
use speechvec::nn::gradcheck::{compare_gradient, tiny_instance};
use speechvec::nn::{skipgram_gradient, LossNormalization, ObjectiveConfig};
use speechvec::parallel::{self, Execution};
use speechvec::trainer::{train_from, TrainConfig, TrainState, TrainingData};
use speechvec::wordsim::{evaluate_manifest, load_manifest_file, report_text, report_tsv};
use speechvec::{Error, Precision, Real, Result};

use config::Setting;

/// Extension of per-utterance feature caches.
pub const FEATURE_EXT: &str = "a2vf";
/// Manifest file name inside a features directory.
pub const MANIFEST_NAME: &str = "manifest.tsv";
/// Gradient-check pass threshold on the max relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;
pub const GRADCHECK_EPSILON: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "speechvec", version, about = "Skip-gram seq2seq embeddings of spoken words")]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Single-threaded execution with a fixed reduction order.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Flat `key = value` settings file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one setting; applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract MFCC caches for every WAV and write the segment manifest.
    Features(FeaturesArgs),
    /// Train the encoder-decoder on a features directory.
    Train(TrainArgs),
    /// Encode every segment and write per-word average vectors.
    Export(ExportArgs),
    /// Score a vector table on word-similarity benchmarks.
    Eval(EvalArgs),
    /// Compare the analytic gradient with central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    pub audio_dir: PathBuf,
    /// TSV of `utterance_id  word  start  end` (seconds).
    pub alignments: PathBuf,
    pub out_dir: PathBuf,
    /// Recompute caches even when they are newer than their WAV.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub features_dir: PathBuf,
    /// Defaults to `<features_dir>/manifest.tsv`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also append epoch lines to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from a checkpoint instead of fresh parameters.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write a checkpoint every N epochs (0 = only at the end).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// No gradient clipping and the raw squared-error sum.
    #[arg(long)]
    pub faithful: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub checkpoint: PathBuf,
    pub features_dir: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output vector file.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub vectors: PathBuf,
    /// TSV of `name  path  expected_pairs`.
    pub benchmarks: PathBuf,
    /// Also write the report as TSV.
    #[arg(long)]
    pub tsv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Check seeds `seed .. seed + seeds`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Debug: corrupt the analytic gradient to confirm the check fails.
    #[arg(long)]
    pub perturb_gradient: bool,
}

/// Run a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let exec = if cli.deterministic {
        Execution::Sequential
    } else {
        Execution::best_available()
    };
    let threads = if cli.deterministic { 1 } else { cli.threads };
    let outcome = config::gather(cli.config.as_deref(), &cli.set).and_then(|settings| {
        parallel::with_threads(threads, || match &cli.command {
            Command::Features(a) => cmd_features(a, &settings, exec),
            Command::Train(a) => cmd_train(a, &settings, exec),
            Command::Export(a) => cmd_export(a, &settings, exec),
            Command::Eval(a) => cmd_eval(a, &settings, exec),
            Command::Gradcheck(a) => cmd_gradcheck(a, &settings, exec),
        })
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}

fn reject_settings(settings: &[Setting], command: &str) -> Result<()> {
    config::apply_all(settings, |k, _| {
        Err(Error::Config(format!("`{command}` takes no settings (got `{k}`)")))
    })
}

fn log_resolved(command: &str, pairs: &[(&str, String)]) {
    log::info!("{command}: resolved config\n{}", config::render(pairs));
}

fn manifest_path(features_dir: &Path, manifest: &Option<PathBuf>) -> PathBuf {
    manifest
        .clone()
        .unwrap_or_else(|| features_dir.join(MANIFEST_NAME))
}

pub fn feature_cache_path(dir: &Path, utterance_id: &str) -> PathBuf {
    dir.join(format!("{utterance_id}.{FEATURE_EXT}"))
}

fn is_up_to_date(output: &Path, input: &Path) -> bool {
    let modified = |p: &Path| fs::metadata(p).and_then(|m| m.modified()).ok();
    matches!((modified(output), modified(input)), (Some(o), Some(i)) if o >= i)
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let path = entry?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn cmd_features(args: &FeaturesArgs, settings: &[Setting], exec: Execution) -> Result<i32> {
    let mut cfg = MfccConfig::default();
    config::apply_all(settings, |k, v| cfg.set(k, v))?;
    log_resolved("features", &cfg.to_pairs());

    let file = File::open(&args.alignments).map_err(|e| Error::file(&args.alignments, e))?;
    let alignments = load_alignments(BufReader::new(file))?;
    let by_id: HashMap<&str, _> = alignments
        .iter()
        .map(|u| (u.utterance_id.as_str(), &u.entries))
        .collect();
    let wavs = wav_files(&args.audio_dir)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::file(&args.out_dir, e))?;

    let results = parallel::map(exec, &wavs, |wav| -> Result<Vec<ManifestRow>> {
        let id = wav
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Input("file name is not UTF-8".into()))?;
        let cache = feature_cache_path(&args.out_dir, id);
        let features = if !args.force && is_up_to_date(&cache, wav) {
            log::debug!("{}: up to date", cache.display());
            load_features(&cache)?
        } else {
            let f = extract_mfcc(&read_wav(wav)?, &cfg)?;
            save_features(&cache, &f)?;
            f
        };
        match by_id.get(id) {
            Some(entries) => Ok(excise_segments(&features, entries, cfg.frame_hop)?
                .segments
                .iter()
                .map(ManifestRow::from)
                .collect()),
            None => {
                log::warn!("{id}: no alignment; features cached but no segments");
                Ok(Vec::new())
            }
        }
    });

    let mut rows = Vec::new();
    let mut failed = 0;
    for (wav, result) in wavs.iter().zip(results) {
        match result {
            Ok(r) => rows.extend(r),
            Err(e) => {
                failed += 1;
                log::error!("{}: {e}", wav.display());
            }
        }
    }
    let stems: Vec<String> = wavs
        .iter()
        .filter_map(|w| w.file_stem().and_then(|s| s.to_str()).map(str::to_string))
        .collect();
    for u in &alignments {
        if !stems.contains(&u.utterance_id) {
            log::warn!("{}: aligned but no WAV in {}", u.utterance_id, args.audio_dir.display());
        }
    }
    let manifest = args.out_dir.join(MANIFEST_NAME);
    let out = File::create(&manifest).map_err(|e| Error::file(&manifest, e))?;
    write_manifest(BufWriter::new(out), &rows)?;
    log::info!(
        "features: {} utterance(s), {} segment(s), {failed} failure(s)",
        wavs.len() - failed,
        rows.len()
    );
    Ok(if failed > 0 { 1 } else { 0 })
}

fn load_corpus(features_dir: &Path, manifest: &Path) -> Result<Corpus> {
    let file = File::open(manifest).map_err(|e| Error::file(manifest, e))?;
    let rows = read_manifest(BufReader::new(file))?;
    Corpus::from_manifest(&rows, |id| load_features(feature_cache_path(features_dir, id)))
}

/// Training settings beyond [`TrainConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub checkpoint_every: usize,
}

impl TrainRun {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "checkpoint_every" => {
                self.checkpoint_every = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))?
            }
            _ => self.config.set(key, value)?,
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut pairs = self.config.to_pairs();
        pairs.push(("checkpoint_every", self.checkpoint_every.to_string()));
        pairs
    }
}

pub fn resolve_train_run(args: &TrainArgs, settings: &[Setting], base: TrainConfig) -> Result<TrainRun> {
    let mut run = TrainRun {
        config: base,
        checkpoint_every: 25,
    };
    config::apply_all(settings, |k, v| run.set(k, v))?;
    if let Some(e) = args.epochs {
        run.config.epochs = e;
    }
    if let Some(s) = args.seed {
        run.config.seed = s;
    }
    if let Some(n) = args.checkpoint_every {
        run.checkpoint_every = n;
    }
    if args.faithful {
        run.config = run.config.faithful();
    }
    run.config.validate()?;
    Ok(run)
}

pub fn cmd_train(args: &TrainArgs, settings: &[Setting], exec: Execution) -> Result<i32> {
    let resumed = args.resume.as_ref().map(load_checkpoint).transpose()?;
    let base = resumed
        .as_ref()
        .map_or_else(TrainConfig::default, |c| c.config().clone());
    let mut run = resolve_train_run(args, settings, base)?;
    run.config.execution = exec;
    log_resolved("train", &run.to_pairs());

    let corpus = load_corpus(&args.features_dir, &manifest_path(&args.features_dir, &args.manifest))?;
    let set = corpus.skipgram_examples(run.config.k)?;
    if set.isolated > 0 {
        log::info!("{} single-word utterance(s) give no examples", set.isolated);
    }
    log::info!("{} segments, {} skip-gram examples", corpus.len(), set.examples.len());

    match run.config.precision {
        Precision::F32 => train_typed::<f32>(args, &run, &corpus, set.examples, resumed),
        Precision::F64 => train_typed::<f64>(args, &run, &corpus, set.examples, resumed),
    }
}

fn train_typed<T: Real>(
    args: &TrainArgs,
    run: &TrainRun,
    corpus: &Corpus,
    examples: Vec<speechvec::corpus::SkipGramExample>,
    resumed: Option<Checkpoint>,
) -> Result<i32> {
    let state: TrainState<T> = match resumed {
        Some(ckpt) => {
            let mut state: TrainState<T> = ckpt.into_state();
            let arch = run.config.architecture(state.params.architecture().feature_dim);
            if arch != state.params.architecture() {
                return Err(Error::Config(format!(
                    "resumed model is {:?}, settings ask for {arch:?}",
                    state.params.architecture()
                )));
            }
            state.config = run.config.clone();
            state
        }
        None => {
            let dim = corpus
                .feature_dim()
                .ok_or_else(|| Error::InsufficientData("manifest lists no segments".into()))?;
            TrainState::initial(run.config.clone(), dim, corpus.normalization()?)?
        }
    };
    let data = TrainingData {
        sequences: corpus.normalized::<T>(&state.normalization)?,
        examples,
    };

    let mut log_file = match &args.log {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(args.resume.is_some())
                .write(true)
                .truncate(args.resume.is_none())
                .open(p)
                .map_err(|e| Error::file(p, e))?,
        ),
        None => None,
    };
    let mut saved_epoch = None;
    let outcome = train_from(&data, state, |report, state| {
        let line = report.log_line();
        println!("{line}");
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{line}")?;
        }
        if run.checkpoint_every > 0 && report.epoch % run.checkpoint_every == 0 {
            save_checkpoint(state, &args.out)?;
            saved_epoch = Some(report.epoch);
        }
        Ok(())
    });
    match outcome {
        Ok(state) => {
            if saved_epoch != Some(state.epoch) {
                save_checkpoint(&state, &args.out)?;
            }
            log::info!("epoch {}: checkpoint {}", state.epoch, args.out.display());
            Ok(0)
        }
        Err(abort) => {
            let good = &abort.last_good;
            if good.epoch > 0 && saved_epoch.is_none_or(|e| good.epoch > e) {
                save_checkpoint(good.as_ref(), &args.out)?;
            }
            log::error!(
                "training aborted after epoch {}; last good checkpoint kept at {}",
                good.epoch,
                args.out.display()
            );
            Err(abort.error)
        }
    }
}

pub fn cmd_export(args: &ExportArgs, settings: &[Setting], exec: Execution) -> Result<i32> {
    reject_settings(settings, "export")?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    log::info!("export: checkpoint {} ({})", args.checkpoint.display(), ckpt.precision());
    let corpus = load_corpus(&args.features_dir, &manifest_path(&args.features_dir, &args.manifest))?;
    let pairs = match ckpt {
        Checkpoint::F32(state) => encode_corpus(&state.params, &state.normalization, &corpus.segments, exec)?,
        Checkpoint::F64(state) => encode_corpus(&state.params, &state.normalization, &corpus.segments, exec)?,
    };
    let table = average_by_word(&pairs)?;
    export_table(&table, &args.out)?;
    log::info!("export: {} word(s) → {}", table.len(), args.out.display());
    Ok(0)
}

pub fn cmd_eval(args: &EvalArgs, settings: &[Setting], exec: Execution) -> Result<i32> {
    reject_settings(settings, "eval")?;
    let table = import_table(&args.vectors)?;
    let entries = load_manifest_file(&args.benchmarks)?;
    log::info!("eval: {} words × {} dims, {} benchmark(s)", table.len(), table.dim(), entries.len());
    let outcomes = evaluate_manifest(&table, &entries, exec);
    let mut results = Vec::new();
    let mut failed = Vec::new();
    for o in outcomes {
        match o.result {
            Ok(r) => results.push(r),
            Err(e) => failed.push(format!("{}: {e}", o.name)),
        }
    }
    print!("{}", report_text(&results));
    if let Some(path) = &args.tsv {
        fs::write(path, report_tsv(&results)).map_err(|e| Error::file(path, e))?;
    }
    for f in &failed {
        log::error!("not evaluated: {f}");
    }
    Ok(if failed.is_empty() { 0 } else { 1 })
}

pub fn gradcheck_objective(settings: &[Setting]) -> Result<ObjectiveConfig> {
    let mut cfg = ObjectiveConfig::default();
    config::apply_all(settings, |k, v| {
        match (k, v) {
            ("loss", "per-frame") => cfg.normalization = LossNormalization::PerFrame,
            ("loss", "raw-sum") => cfg.normalization = LossNormalization::RawSum,
            ("teacher_forcing", v) => {
                cfg.teacher_forcing = v
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value `{v}` for `teacher_forcing`")))?
            }
            _ => return Err(Error::Config(format!("unknown gradcheck setting `{k} = {v}`"))),
        }
        Ok(())
    })?;
    Ok(cfg)
}

pub fn cmd_gradcheck(args: &GradcheckArgs, settings: &[Setting], exec: Execution) -> Result<i32> {
    let objective = gradcheck_objective(settings)?;
    log_resolved(
        "gradcheck",
        &[
            (
                "loss",
                match objective.normalization {
                    LossNormalization::PerFrame => "per-frame".into(),
                    LossNormalization::RawSum => "raw-sum".into(),
                },
            ),
            ("teacher_forcing", objective.teacher_forcing.to_string()),
        ],
    );
    let reports = parallel::map_range(exec, args.seeds as usize, |i| {
        let inst = tiny_instance(args.seed + i as u64);
        let ex = inst.example();
        let mut analytic = skipgram_gradient(&inst.params, &ex, &objective)?.grad.into_flat();
        if args.perturb_gradient {
            let j = (0..analytic.len())
                .max_by(|&a, &b| analytic[a].abs().total_cmp(&analytic[b].abs()))
                .unwrap_or(0);
            analytic[j] *= 1.01;
        }
        compare_gradient(&inst.params, &ex, &objective, GRADCHECK_EPSILON, &analytic, None)
    });
    println!("seed\tmax_relative_error\tworst_parameter\tstatus");
    let mut all_pass = true;
    for (i, r) in reports.into_iter().enumerate() {
        let r = r?;
        let pass = r.passes(GRADCHECK_TOLERANCE);
        all_pass &= pass;
        println!(
            "{}\t{:.3e}\t{}\t{}",
            args.seed + i as u64,
            r.max_relative_error,
            r.worst_location,
            if pass { "pass" } else { "FAIL" }
        );
    }
    Ok(if all_pass { 0 } else { 2 })
}
