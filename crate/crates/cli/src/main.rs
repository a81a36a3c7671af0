mod config;
mod manifest;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use receipt_ner::backend::{run_extraction_with, Backend, BackendKind, HttpBackend, MockBackend};
use receipt_ner::bio_codec::{
    chunk, decode_tags, encode_tags, predict_with_tagger, tag_chunked, RuleTagger, TagSequence,
};
use receipt_ner::corpus::{load_corpus, Answer, Corpus, NECategory, ReceiptRecord, Split};
use receipt_ner::ocr_noise::{
    estimate_confusion_matrix, generate_training_variant_with, samples_to_jsonl, ConfusionMatrix,
    CorruptionSpec, NoiseOptions, Variant, VariantSample,
};
use receipt_ner::prompting::PromptSample;
use receipt_ner::scoring::{
    comparison_csv, comparison_markdown, percent, predictions_from_jsonl, predictions_to_jsonl,
    report_csv, report_markdown, score_predictions, select_best_config, ReportMeta, ScoreReport,
};

use config::{FileConfig, MockMode};
use manifest::{backend_digest, config_id, now_unix, sidecar_path, RunManifest};

#[derive(Parser)]
#[command(
    name = "receipt-ner",
    version,
    about = "NE extraction pipeline for OCR'd receipts"
)]
struct Cli {
    /// Base seed for every random choice. Overrides `seed` in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Md,
    Jsonl,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a character confusion matrix from parallel clean/OCR files.
    Estimate {
        /// JSONL with `id` and clean `text`.
        #[arg(long)]
        truth: PathBuf,
        /// JSONL with `id` and OCR `text`.
        #[arg(long)]
        ocr: PathBuf,
        /// Also write the raw alignment counts as JSON.
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Generate a training data variant.
    Corrupt {
        #[arg(long)]
        corpus: PathBuf,
        /// Confusion matrix TSV; not needed for `truth`.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, default_value = "ocr1")]
        variant: Variant,
        /// Emit a corpus file (ids suffixed `#repeat` for ocr10) instead of samples.
        #[arg(long)]
        as_corpus: bool,
        /// Probability of inserting a newline after each character.
        #[arg(long, default_value_t = 0.0)]
        newline_rate: f64,
    },
    /// Build training or inference prompts.
    Prompts {
        #[arg(long, value_enum, default_value = "training")]
        kind: PromptKindArg,
        #[arg(long, conflicts_with = "samples", required_unless_present = "samples")]
        corpus: Option<PathBuf>,
        /// Variant samples from `corrupt` (training prompts only).
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        split: Split,
    },
    /// Character tagging for the encoder baseline.
    Tag {
        #[command(subcommand)]
        action: TagCommand,
    },
    /// Query a backend for every receipt and category.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, value_enum)]
        mock: Option<MockMode>,
        #[arg(long)]
        timeout_secs: Option<f64>,
        #[arg(long)]
        retries: Option<u32>,
        #[arg(long)]
        max_concurrent: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        top_k: Option<u32>,
        #[arg(long)]
        do_sample: Option<bool>,
        #[arg(long)]
        max_new_tokens: Option<u32>,
        /// Training variant of the served model, for the manifest.
        #[arg(long, default_value = "truth")]
        variant: Variant,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        label: Option<String>,
    },
    /// Score predictions against a corpus.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Defaults to `<predictions>.manifest.json` when that file exists.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        config_id: Option<String>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Pick the best validation report.
    Select {
        /// Glob over JSON reports written by `score`.
        pattern: String,
    },
    /// Comparison table over several reports.
    Report { pattern: String },
}

#[derive(Subcommand)]
enum TagCommand {
    /// Corpus → per-character tags, chunked.
    Encode {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
    },
    /// Tagged chunks → corpus records.
    Decode {
        #[arg(long)]
        input: PathBuf,
    },
    /// Tag texts with the pattern tagger.
    Rule {
        /// JSONL with `id` and `text`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Predictions from the pattern tagger.
    Predict {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PromptKindArg {
    Training,
    Inference,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Http,
    Mock,
}

/// One line of a tagged file.
#[derive(Serialize, Deserialize)]
struct TaggedChunk {
    id: String,
    chunk: usize,
    #[serde(flatten)]
    sequence: TagSequence,
}

#[derive(Deserialize)]
struct IdText {
    id: String,
    text: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let out = cli.out.as_deref();

    match cli.command {
        Command::Estimate { truth, ocr, counts } => {
            only_format(cli.format, &[], "estimate writes TSV")?;
            let truth = read_id_text(&truth)?;
            let ocr = read_id_text(&ocr)?;
            let pairs = pair_by_id(&truth, &ocr)?;
            let (matrix, tally) = estimate_confusion_matrix(&pairs)?;
            emit(out, &matrix.to_tsv())?;
            if let Some(path) = counts {
                write_file(&path, &(serde_json::to_string_pretty(&tally)? + "\n"))?;
            }
            status(
                out,
                &format!(
                    "{} confusion pairs from {} texts",
                    matrix.pair_count(),
                    pairs.len()
                ),
            );
        }

        Command::Corrupt {
            corpus,
            matrix,
            variant,
            as_corpus,
            newline_rate,
        } => {
            only_format(cli.format, &[Format::Jsonl], "corrupt writes JSONL")?;
            if !(0.0..=1.0).contains(&newline_rate) {
                bail!("--newline-rate must be within [0, 1]");
            }
            let corpus = load_corpus(&corpus, Split::Train)?;
            let matrix = match (&matrix, variant) {
                (Some(path), _) => ConfusionMatrix::from_tsv(
                    &fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?,
                )?,
                (None, Variant::Truth) => ConfusionMatrix::empty(),
                (None, _) => bail!("--matrix is required for {variant}"),
            };
            let options = NoiseOptions {
                newline_insertion_rate: newline_rate,
            };
            let samples = generate_training_variant_with(
                &corpus,
                &matrix,
                CorruptionSpec::new(variant, seed),
                options,
            )?;
            let text = if as_corpus {
                samples_as_corpus(&corpus, &samples, variant).to_jsonl()
            } else {
                samples_to_jsonl(&samples)
            };
            emit(out, &text)?;
            status(
                out,
                &format!("{} samples ({variant}, seed {seed})", samples.len()),
            );
        }

        Command::Prompts {
            kind,
            corpus,
            samples,
            split,
        } => {
            only_format(cli.format, &[Format::Jsonl], "prompts writes JSONL")?;
            let template = &file.template;
            let mut prompts: Vec<PromptSample> = Vec::new();
            if let Some(path) = samples {
                if matches!(kind, PromptKindArg::Inference) {
                    bail!("samples carry answers; build inference prompts from a corpus");
                }
                for sample in read_jsonl::<VariantSample>(&path)? {
                    for cat in NECategory::ALL {
                        let answer = sample.answers.get(&cat).cloned().unwrap_or(Answer::None);
                        prompts.push(template.training_prompt(
                            &sample.id,
                            &sample.text,
                            cat,
                            &answer,
                        )?);
                    }
                }
            } else {
                let corpus = load_corpus(corpus.expect("clap enforces"), split)?;
                for record in &corpus.records {
                    for cat in NECategory::ALL {
                        prompts.push(match kind {
                            PromptKindArg::Training => template.training_prompt(
                                &record.id,
                                &record.text,
                                cat,
                                &receipt_ner::corpus::first_truth(record, cat),
                            )?,
                            PromptKindArg::Inference => {
                                template.inference_prompt(&record.id, &record.text, cat)?
                            }
                        });
                    }
                }
            }
            emit(out, &to_jsonl(&prompts)?)?;
            status(out, &format!("{} prompts", prompts.len()));
        }

        Command::Tag { action } => {
            only_format(cli.format, &[Format::Jsonl], "tag writes JSONL")?;
            let cfg = file.chunking;
            match action {
                TagCommand::Encode { corpus, split } => {
                    let corpus = load_corpus(&corpus, split)?;
                    let mut lines = Vec::new();
                    for record in &corpus.records {
                        let encoded = encode_tags(record)?;
                        for w in &encoded.warnings {
                            log::warn!("{}: {w:?}", record.id);
                        }
                        for (i, piece) in chunk(&encoded.sequence, cfg).into_iter().enumerate() {
                            lines.push(TaggedChunk {
                                id: record.id.clone(),
                                chunk: i,
                                sequence: piece,
                            });
                        }
                    }
                    emit(out, &to_jsonl(&lines)?)?;
                    status(
                        out,
                        &format!("{} chunks from {} receipts", lines.len(), corpus.len()),
                    );
                }
                TagCommand::Decode { input } => {
                    let mut grouped: Vec<(String, Vec<TaggedChunk>)> = Vec::new();
                    for line in read_jsonl::<TaggedChunk>(&input)? {
                        match grouped.last_mut() {
                            Some((id, chunks)) if *id == line.id => chunks.push(line),
                            _ => grouped.push((line.id.clone(), vec![line])),
                        }
                    }
                    let mut records = Vec::new();
                    for (id, mut chunks) in grouped {
                        chunks.sort_by_key(|c| c.chunk);
                        let seq = TagSequence::concat(chunks.iter().map(|c| &c.sequence));
                        records.push(ReceiptRecord::new(id, seq.chars(), decode_tags(&seq)));
                    }
                    let corpus = Corpus::new(Split::Test, records);
                    emit(out, &corpus.to_jsonl())?;
                    status(out, &format!("{} receipts", corpus.len()));
                }
                TagCommand::Rule { input } => {
                    let mut lines = Vec::new();
                    for item in read_id_text(&input)? {
                        let seq = tag_chunked(&RuleTagger, &item.text, cfg);
                        for (i, piece) in chunk(&seq, cfg).into_iter().enumerate() {
                            lines.push(TaggedChunk {
                                id: item.id.clone(),
                                chunk: i,
                                sequence: piece,
                            });
                        }
                    }
                    emit(out, &to_jsonl(&lines)?)?;
                }
                TagCommand::Predict { corpus, split } => {
                    let corpus = load_corpus(&corpus, split)?;
                    let preds = predict_with_tagger(&corpus, &RuleTagger, cfg);
                    emit(out, &predictions_to_jsonl(&preds))?;
                    status(out, &format!("{} prediction rows", preds.len()));
                }
            }
        }

        Command::Extract {
            corpus,
            split,
            backend,
            endpoint,
            mock,
            timeout_secs,
            retries,
            max_concurrent,
            temperature,
            top_k,
            do_sample,
            max_new_tokens,
            variant,
            iterations,
            label,
        } => {
            only_format(cli.format, &[Format::Jsonl], "extract writes JSONL")?;
            let out =
                out.ok_or_else(|| anyhow!("extract needs --out for the predictions and manifest"))?;
            let mut section = file.backend.clone();
            let b = &mut section.config;
            if let Some(kind) = backend {
                b.kind = match kind {
                    BackendArg::Http => BackendKind::Http,
                    BackendArg::Mock => BackendKind::Mock,
                };
                if b.kind == BackendKind::Mock {
                    b.endpoint = None;
                }
            }
            if endpoint.is_some() {
                b.endpoint = endpoint;
            }
            set(&mut b.timeout_secs, timeout_secs);
            set(&mut b.retries, retries);
            set(&mut b.max_concurrent, max_concurrent);
            if iterations.is_some() {
                b.iterations = iterations;
            }
            if label.is_some() {
                b.label = label;
            }
            set(&mut section.mock, mock);
            section.config.validate()?;
            let mut params = file.generation;
            set(&mut params.temperature, temperature);
            set(&mut params.top_k, top_k);
            set(&mut params.do_sample, do_sample);
            set(&mut params.max_new_tokens, max_new_tokens);

            let corpus = load_corpus(&corpus, split)?;
            let started = now_unix();
            let client: Box<dyn Backend> = match section.config.kind {
                BackendKind::Http => Box::new(HttpBackend::new(&section.config)?),
                BackendKind::Mock => {
                    let m = match section.mock {
                        MockMode::Oracle => MockBackend::oracle(&corpus),
                        MockMode::None => {
                            MockBackend::always(format!("None{}", file.template.terminator))
                        }
                    };
                    Box::new(m.with_concurrency(section.config.max_concurrent))
                }
            };
            let preds = run_extraction_with(&corpus, client.as_ref(), &params, &file.template);
            let failed = preds.iter().filter(|p| p.error.is_some()).count();

            let backend_digest = backend_digest(&section, &params);
            let template_digest = file.template.digest();
            let manifest = RunManifest {
                config_id: config_id(variant, seed, &backend_digest, &template_digest),
                variant,
                base_seed: seed,
                backend_digest,
                template_digest,
                iterations: section.config.iterations,
                label: section.config.label.clone(),
                rows: preds.len(),
                failed_rows: failed,
                started_unix: started,
                finished_unix: now_unix(),
            };
            write_file(out, &predictions_to_jsonl(&preds))?;
            write_file(
                &sidecar_path(out),
                &(serde_json::to_string_pretty(&manifest)? + "\n"),
            )?;
            if failed > 0 {
                log::warn!("{failed} of {} requests failed", preds.len());
            }
            println!(
                "{} prediction rows, {failed} failed, config {}",
                preds.len(),
                manifest.config_id
            );
        }

        Command::Score {
            predictions,
            corpus,
            split,
            manifest,
            config_id,
            iterations,
            variant,
        } => {
            let format = cli.format.unwrap_or(Format::Md);
            let corpus = load_corpus(&corpus, split)?;
            let text = fs::read_to_string(&predictions)
                .with_context(|| format!("reading {}", predictions.display()))?;
            let preds = predictions_from_jsonl(&text)?;

            let manifest_path =
                manifest.or_else(|| Some(sidecar_path(&predictions)).filter(|p| p.exists()));
            let manifest = manifest_path
                .as_deref()
                .map(RunManifest::load)
                .transpose()?;
            let meta = ReportMeta {
                config_id: config_id
                    .or_else(|| manifest.as_ref().map(|m| m.config_id.clone()))
                    .unwrap_or_else(|| file_stem(&predictions)),
                split: Some(split),
                iterations: iterations.or_else(|| manifest.as_ref().and_then(|m| m.iterations)),
                variant: variant.or_else(|| manifest.as_ref().map(|m| m.variant.to_string())),
                manifest_digest: manifest.as_ref().map(RunManifest::digest),
            };
            let report = score_predictions(&corpus, &preds, &file.scoring, meta)?;

            if let Some(out) = out {
                let stem = out.with_extension("");
                write_file(&stem.with_extension("csv"), &report_csv(&report))?;
                write_file(&stem.with_extension("md"), &report_markdown(&report))?;
                write_file(
                    &stem.with_extension("json"),
                    &(serde_json::to_string_pretty(&report)? + "\n"),
                )?;
                println!("F_final {}", percent(report.f_final));
            } else {
                print!("{}", render_report(&report, format)?);
            }
        }

        Command::Select { pattern } => {
            let reports = load_reports(&pattern)?;
            let best = select_best_config(&reports)?;
            println!("{}\t{}", best.meta.config_id, percent(best.f_final));
        }

        Command::Report { pattern } => {
            let reports = load_reports(&pattern)?;
            let text = match cli.format.unwrap_or(Format::Md) {
                Format::Csv => comparison_csv(&reports),
                Format::Md => comparison_markdown(&reports),
                Format::Jsonl => to_jsonl(&reports)?,
            };
            emit(out, &text)?;
        }
    }
    Ok(())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn only_format(given: Option<Format>, allowed: &[Format], what: &str) -> anyhow::Result<()> {
    match given {
        Some(f) if !allowed.contains(&f) => bail!("--format {f:?} not supported: {what}"),
        _ => Ok(()),
    }
}

fn render_report(report: &ScoreReport, format: Format) -> anyhow::Result<String> {
    Ok(match format {
        Format::Csv => report_csv(report),
        Format::Md => report_markdown(report),
        Format::Jsonl => serde_json::to_string(report)? + "\n",
    })
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn samples_as_corpus(corpus: &Corpus, samples: &[VariantSample], variant: Variant) -> Corpus {
    let truth: HashMap<&str, &ReceiptRecord> =
        corpus.records.iter().map(|r| (r.id.as_str(), r)).collect();
    let records = samples
        .iter()
        .map(|s| {
            let id = if variant.repeats() > 1 {
                format!("{}#{}", s.id, s.repeat)
            } else {
                s.id.clone()
            };
            ReceiptRecord::new(id, s.text.clone(), truth[s.id.as_str()].truth.clone())
        })
        .collect();
    Corpus::new(Split::Train, records)
}

fn pair_by_id(truth: &[IdText], ocr: &[IdText]) -> anyhow::Result<Vec<(String, String)>> {
    let mut by_id: BTreeMap<&str, &str> = BTreeMap::new();
    for item in ocr {
        if by_id.insert(&item.id, &item.text).is_some() {
            bail!("duplicate id `{}` in OCR file", item.id);
        }
    }
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(truth.len());
    for item in truth {
        if !seen.insert(item.id.as_str()) {
            bail!("duplicate id `{}` in truth file", item.id);
        }
        let ocr_text = by_id
            .get(item.id.as_str())
            .ok_or_else(|| anyhow!("id `{}` is in the truth file but not the OCR file", item.id))?;
        pairs.push((item.text.clone(), ocr_text.to_string()));
    }
    if let Some(extra) = by_id.keys().find(|id| !seen.contains(*id)) {
        bail!("id `{extra}` is in the OCR file but not the truth file");
    }
    Ok(pairs)
}

fn load_reports(pattern: &str) -> anyhow::Result<Vec<ScoreReport>> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .with_context(|| format!("bad glob `{pattern}`"))?
        .collect::<Result<_, _>>()?;
    paths.sort();
    if paths.is_empty() {
        bail!("no reports match `{pattern}`");
    }
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing report {}", p.display()))
        })
        .collect()
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

fn read_id_text(path: &Path) -> anyhow::Result<Vec<IdText>> {
    read_jsonl(path)
}

fn to_jsonl<T: Serialize>(items: &[T]) -> anyhow::Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

fn write_file(path: &Path, content: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: Option<&Path>, content: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => write_file(path, content),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

/// Summary line: stdout when the payload went to a file, stderr otherwise.
fn status(out: Option<&Path>, msg: &str) {
    if out.is_some() {
        println!("{msg}");
    } else {
        eprintln!("{msg}");
    }
}
