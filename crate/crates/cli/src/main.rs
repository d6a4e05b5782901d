mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use multiref::aligner::{align_translator_with, apply_checkpoint, match_rates, AlignError, CheckpointEntry};
use multiref::bench::{
    emit_reports, evaluate_system, inter_translator, report::file_stem, run_system, Benchmark, InterTranslator,
    ReportBundle, RunError, SystemEvaluation, SystemRun,
};
use multiref::client::ClientError;
use multiref::corpus::{load_corpus, save_corpus, DocumentStore, TranslatorId};
use multiref::curation::curate;
use multiref::metrics::external::{CachedScorer, ExternalScorer, ScoreCache, ScorerError};
use multiref::metrics::MetricError;
use multiref::verifier::{records_from_jsonl, records_to_jsonl, verify_corpus};

use config::Config;

#[derive(Parser)]
#[command(name = "multiref", version, about = "Build and score a multi-reference translation benchmark")]
struct Cli {
    /// TOML file with thresholds, providers, models and budgets.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract per-segment text for aligned translators from their documents.
    Align {
        #[arg(long)]
        corpus: PathBuf,
        /// Directory of `<translator>/<doc>.txt` files.
        #[arg(long)]
        docs: PathBuf,
        #[arg(long = "translator", required = true)]
        translators: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// JSONL file of committed batches; reused when resuming.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Classify every extraction against its source document.
    Verify {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        docs: PathBuf,
        /// Per-segment records, one JSON object per line.
        #[arg(long)]
        records: PathBuf,
        /// Category percentages as TSV.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Apply the quality filters and near-duplicate removal.
    Curate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory for the curation table, TSV and per-passage rows.
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Translate the benchmark passages with one system.
    Translate {
        #[arg(long)]
        system: String,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep existing outputs in `--out` and translate only the rest.
        #[arg(long)]
        resume: bool,
    },
    /// Score system runs against the references.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render the result tables from evaluation files.
    Report {
        #[arg(long)]
        evals: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

const REFERENCES_FILE: &str = "references.json";
const EVAL_SUFFIX: &str = ".eval.json";

#[derive(Serialize, Deserialize)]
struct References {
    translators: Vec<TranslatorId>,
    inter_translator: InterTranslator,
    external_label: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointLine {
    translator: TranslatorId,
    #[serde(flatten)]
    entry: CheckpointEntry,
}

fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointLine>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn align(config: &Config, corpus: &Path, docs: &Path, translators: &[String], out: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let mut corpus = load_corpus(corpus)?;
    let docs = DocumentStore::load_dir(docs)?;
    let mut log_file = match checkpoint {
        Some(path) => {
            let mut by_t: BTreeMap<TranslatorId, Vec<CheckpointEntry>> = BTreeMap::new();
            for line in read_checkpoint(path)? {
                by_t.entry(line.translator).or_default().push(line.entry);
            }
            for (t, entries) in by_t {
                apply_checkpoint(&mut corpus, &t, &entries)?;
            }
            Some(std::fs::OpenOptions::new().create(true).append(true).open(path)?)
        }
        None => None,
    };
    for name in translators {
        let t = TranslatorId::new(name.as_str());
        let client = config.chat_client(&config.align.provider, Some(name))?;
        let mut on_commit = |c: &multiref::aligner::BatchCommit| -> Result<(), AlignError> {
            if let Some(f) = log_file.as_mut() {
                for (id, text) in &c.entries {
                    let line = CheckpointLine { translator: t.clone(), entry: CheckpointEntry { id: id.clone(), text: text.clone() } };
                    writeln!(f, "{}", serde_json::to_string(&line).expect("line serializes"))
                        .map_err(|e| AlignError::Corpus(multiref::corpus::CorpusError::Invalid(format!("checkpoint write: {e}"))))?;
                }
            }
            Ok(())
        };
        let run = align_translator_with(&corpus, &t, &docs, client.as_ref(), &config.align.aligner, &mut on_commit)?;
        eprintln!(
            "{t}: {} batches, {} calls, {} failed batches",
            run.report.batches,
            run.report.calls,
            run.report.failures.len()
        );
        for f in &run.report.failures {
            eprintln!("  {} batch {}: {} ({} ids)", f.doc, f.batch, f.reason, f.ids.len());
        }
        corpus = run.corpus;
        println!("collection\tsegments\tmatched\tpercent\ttranslator");
        for row in match_rates(&corpus, &t) {
            println!("{}\t{}\t{}\t{:.1}\t{t}", row.collection, row.segments, row.matched, row.percent);
        }
    }
    save_corpus(&corpus, out)?;
    Ok(())
}

fn verify(config: &Config, corpus: &Path, docs: &Path, records: &Path, stats: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let docs = DocumentStore::load_dir(docs)?;
    let out = verify_corpus(&corpus, &docs, &docs, &config.verify)?;
    std::fs::write(records, records_to_jsonl(&out.records))?;
    if let Some(path) = stats {
        std::fs::write(path, out.stats.to_tsv())?;
    }
    print!("{}", out.stats.to_table());
    Ok(())
}

fn curate_cmd(config: &Config, corpus: &Path, records: &Path, out: &Path, report_dir: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let text = std::fs::read_to_string(records).with_context(|| format!("reading {}", records.display()))?;
    let records = records_from_jsonl(&text).with_context(|| format!("parsing {}", records.display()))?;
    let (final_corpus, report) = curate(&corpus, &records, &config.curation)?;
    save_corpus(&final_corpus, out)?;
    if let Some(dir) = report_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("curation.txt"), report.to_table())?;
        std::fs::write(dir.join("curation.tsv"), report.to_tsv())?;
        std::fs::write(dir.join("curation_rows.jsonl"), report.rows_jsonl())?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn translate(config: &Config, system: &str, corpus: &Path, out: &Path, resume: bool) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let (model, client) = config.system_client(system, &corpus)?;
    let previous = if resume && out.exists() { Some(SystemRun::load(out)?) } else { None };
    if let Some(p) = &previous {
        if p.system != system {
            bail!("{} holds a run of {}, not {system}", out.display(), p.system);
        }
    }
    let passages: Vec<_> = corpus.passages.iter().map(|p| (p.id.clone(), p.source_text())).collect();
    let run = run_system(system, &model, &passages, client.as_ref(), &config.translate, previous.as_ref())?;
    run.save(out)?;
    eprintln!(
        "{system}: {} of {} passages translated, {} missing, {} calls",
        run.outputs.len(),
        passages.len(),
        run.missing.len(),
        run.metadata.calls
    );
    Ok(())
}

fn evaluate(config: &Config, corpus: &Path, runs: &[PathBuf], out_dir: &Path) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let embeddings = config.embeddings()?;
    let bench = Benchmark::from_corpus(&corpus, embeddings.as_ref())?;
    let external = config.external()?;
    let cache = match config.external.as_ref().and_then(|x| x.cache.as_ref()) {
        Some(p) => ScoreCache::open(&config.path(p))?,
        None => ScoreCache::in_memory(),
    };
    let cached = external.as_ref().map(|(_, s)| CachedScorer::new(s.as_ref(), &cache));
    let scorer: Option<&dyn ExternalScorer> = cached.as_ref().map(|c| c as &dyn ExternalScorer);
    std::fs::create_dir_all(out_dir)?;
    let refs = References {
        translators: bench.translators.clone(),
        inter_translator: inter_translator(&bench)?,
        external_label: external.as_ref().map(|(l, _)| l.clone()),
    };
    std::fs::write(out_dir.join(REFERENCES_FILE), serde_json::to_string_pretty(&refs)? + "\n")?;
    let mut failed = Vec::new();
    for path in runs {
        let run = SystemRun::load(path)?;
        match evaluate_system(&run, &bench, embeddings.as_ref(), scorer, &config.evaluate) {
            Ok(ev) => {
                let file = out_dir.join(format!("{}{EVAL_SUFFIX}", file_stem(&run.system)));
                std::fs::write(&file, serde_json::to_string_pretty(&ev)? + "\n")?;
                eprintln!(
                    "{}: sim_best {:.3}, chrF++ {:.1}, BLEU {:.1}, outliers {:.1}%",
                    run.system, ev.row.sim_best, ev.row.chrfpp, ev.row.bleu, ev.row.outlier_rate
                );
            }
            Err(e) => {
                eprintln!("{}: {e}", run.system);
                failed.push(run.system);
            }
        }
    }
    cache.save()?;
    if !failed.is_empty() {
        bail!("{} system(s) not scored: {}", failed.len(), failed.join(", "));
    }
    Ok(())
}

fn report(evals: &Path, out: &Path) -> Result<()> {
    let refs: References = serde_json::from_str(
        &std::fs::read_to_string(evals.join(REFERENCES_FILE)).with_context(|| format!("reading {REFERENCES_FILE}"))?,
    )?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(evals)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(EVAL_SUFFIX)))
        .collect();
    files.sort();
    let mut systems = Vec::new();
    for f in files {
        let ev: SystemEvaluation =
            serde_json::from_str(&std::fs::read_to_string(&f)?).with_context(|| format!("parsing {}", f.display()))?;
        systems.push(ev);
    }
    let bundle = ReportBundle {
        translators: refs.translators,
        inter_translator: Some(refs.inter_translator),
        systems,
        external_id: refs.external_label,
    };
    emit_reports(out, &bundle)?;
    print!("{}", std::fs::read_to_string(out.join(format!("{}.txt", multiref::bench::report::RESULTS_STEM)))?);
    Ok(())
}

/// 2 for provider and network failures, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        let upstream = cause.downcast_ref::<ClientError>().is_some()
            || cause.downcast_ref::<ScorerError>().is_some()
            || matches!(cause.downcast_ref::<AlignError>(), Some(AlignError::Client { .. }))
            || matches!(cause.downcast_ref::<RunError>(), Some(RunError::Client { .. }))
            || matches!(cause.downcast_ref::<MetricError>(), Some(MetricError::Provider(_)));
        if upstream {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    let config = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Align { corpus, docs, translators, out, checkpoint } => {
            align(&config, &corpus, &docs, &translators, &out, checkpoint.as_deref())
        }
        Command::Verify { corpus, docs, records, stats } => verify(&config, &corpus, &docs, &records, stats.as_deref()),
        Command::Curate { corpus, records, out, report_dir } => curate_cmd(&config, &corpus, &records, &out, report_dir.as_deref()),
        Command::Translate { system, corpus, out, resume } => translate(&config, &system, &corpus, &out, resume),
        Command::Evaluate { corpus, runs, out_dir } => evaluate(&config, &corpus, &runs, &out_dir),
        Command::Report { evals, out } => report(&evals, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
