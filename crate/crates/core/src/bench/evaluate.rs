//! Scoring a system run against the multi-reference benchmark.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::runner::SystemRun;
use crate::corpus::{AlignedCorpus, PassageId, TranslatorId};
use crate::metrics::embedding::EmbeddingProvider;
use crate::metrics::external::{ExternalScorer, ExternalScores, ScoreTriple};
use crate::metrics::geometry::{cosine, passage_embedding_scores, reference_geometry, ReferenceGeometry};
use crate::metrics::lexical::{bleu_stats, chrfpp_best_stats, length_ratio, BleuStats, ChrfStats};
use crate::metrics::{MetricError, OutlierThreshold};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("benchmark has no passages")]
    EmptyBenchmark,
    #[error("benchmark needs at least 2 reference translators, got {0}")]
    TooFewTranslators(usize),
    #[error("passage {passage}: reference by {translator} is empty")]
    EmptyReference { passage: PassageId, translator: TranslatorId },
    #[error("{system} covers {covered} of {total} passages, below the required {required:.3}")]
    InsufficientCoverage { system: String, covered: usize, total: usize, required: f64 },
}

#[derive(Debug, Clone)]
pub struct BenchPassage {
    pub id: PassageId,
    pub source: String,
    pub references: BTreeMap<TranslatorId, String>,
    pub geometry: ReferenceGeometry,
}

/// Final passages with their reference texts and embedding geometry.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub translators: Vec<TranslatorId>,
    pub passages: Vec<BenchPassage>,
}

impl Benchmark {
    /// Every translator in the corpus, anchor included, is a reference.
    pub fn from_corpus(corpus: &AlignedCorpus, embeddings: &dyn EmbeddingProvider) -> Result<Self, EvalError> {
        let translators = corpus.translator_names();
        if translators.len() < 2 {
            return Err(EvalError::TooFewTranslators(translators.len()));
        }
        if corpus.passages.is_empty() {
            return Err(EvalError::EmptyBenchmark);
        }
        let mut texts: Vec<(PassageId, String, BTreeMap<TranslatorId, String>)> = Vec::new();
        for p in &corpus.passages {
            let mut refs = BTreeMap::new();
            for t in &translators {
                let text = p.text_of(t);
                if text.is_empty() {
                    return Err(EvalError::EmptyReference { passage: p.id.clone(), translator: t.clone() });
                }
                refs.insert(t.clone(), text);
            }
            texts.push((p.id.clone(), p.source_text(), refs));
        }
        let flat: Vec<&str> = texts.iter().flat_map(|(_, _, r)| r.values().map(String::as_str)).collect();
        let vectors = embeddings.embed(&flat)?;
        let mut it = vectors.into_iter();
        let mut passages = Vec::with_capacity(texts.len());
        for (id, source, references) in texts {
            let vecs: BTreeMap<TranslatorId, _> = references.keys().map(|t| (t.clone(), it.next().unwrap())).collect();
            let geometry = reference_geometry(&vecs)?;
            passages.push(BenchPassage { id, source, references, geometry });
        }
        Ok(Benchmark { translators, passages })
    }

    pub fn sources(&self) -> Vec<(PassageId, String)> {
        self.passages.iter().map(|p| (p.id.clone(), p.source.clone())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub outlier_threshold: f64,
    /// Fraction of benchmark passages a run must cover to be scored.
    pub min_coverage: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { outlier_threshold: 2.0, min_coverage: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageScores {
    pub passage: PassageId,
    pub sim_best: f64,
    pub sim_centroid: f64,
    pub normalized_drift: f64,
    pub outlier: bool,
    pub degenerate: bool,
    pub closest: TranslatorId,
    pub similarities: BTreeMap<TranslatorId, f64>,
    pub length_ratio: f64,
    pub bleu: f64,
    pub chrfpp: f64,
    pub bleu_stats: BleuStats,
    pub chrf_stats: ChrfStats,
    pub external: Option<ExternalScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRow {
    pub system: String,
    pub total: usize,
    pub scored: usize,
    pub coverage: f64,
    pub sim_best: f64,
    pub sim_centroid: f64,
    /// Mean over passages with a finite normalized drift.
    pub normalized_drift: f64,
    pub degenerate: usize,
    /// Corpus chrF++ from pooled statistics.
    pub chrfpp: f64,
    pub chrfpp_mean: f64,
    pub bleu: f64,
    pub external_avg: Option<f64>,
    pub external_best: Option<f64>,
    pub length_ratio: f64,
    /// Percentage of scored passages flagged as outliers.
    pub outlier_rate: f64,
    /// Percentage of scored passages closest to each translator.
    pub closest: BTreeMap<TranslatorId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemEvaluation {
    pub row: SystemRow,
    pub passages: Vec<PassageScores>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { 0.0 } else { s / n as f64 }
}

fn external_for_run(
    bench: &[(&BenchPassage, &String)],
    scorer: &dyn ExternalScorer,
) -> Option<Vec<ExternalScores>> {
    let triples: Vec<ScoreTriple> = bench
        .iter()
        .flat_map(|(p, hyp)| {
            p.references.values().map(move |r| ScoreTriple {
                source: p.source.clone(),
                hypothesis: (*hyp).clone(),
                reference: r.clone(),
            })
        })
        .collect();
    let scores = match scorer.score(&triples) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("external scorer {} unavailable: {e}", scorer.id());
            return None;
        }
    };
    let mut it = scores.into_iter();
    Some(
        bench
            .iter()
            .map(|(p, _)| {
                let per: BTreeMap<TranslatorId, f64> = p.references.keys().map(|t| (t.clone(), it.next().unwrap())).collect();
                ExternalScores::from_scores(per).expect("references are non-empty")
            })
            .collect(),
    )
}

/// Scores every covered passage. The external scorer is optional; when it
/// fails the external columns are absent rather than the run failing.
pub fn evaluate_system(
    run: &SystemRun,
    bench: &Benchmark,
    embeddings: &dyn EmbeddingProvider,
    scorer: Option<&dyn ExternalScorer>,
    config: &EvalConfig,
) -> Result<SystemEvaluation, EvalError> {
    let threshold = OutlierThreshold::new(config.outlier_threshold)?;
    let covered: Vec<(&BenchPassage, &String)> =
        bench.passages.iter().filter_map(|p| run.outputs.get(&p.id).map(|h| (p, h))).collect();
    let total = bench.passages.len();
    let coverage = if total == 0 { 0.0 } else { covered.len() as f64 / total as f64 };
    if covered.is_empty() || coverage + 1e-12 < config.min_coverage {
        return Err(EvalError::InsufficientCoverage {
            system: run.system.clone(),
            covered: covered.len(),
            total,
            required: config.min_coverage,
        });
    }
    let hyps: Vec<&str> = covered.iter().map(|(_, h)| h.as_str()).collect();
    let mt_vectors = embeddings.embed(&hyps)?;
    let external = scorer.and_then(|s| external_for_run(&covered, s));

    let passages: Vec<PassageScores> = covered
        .par_iter()
        .zip(mt_vectors.par_iter())
        .enumerate()
        .map(|(i, ((p, hyp), mt))| {
            let refs: Vec<&str> = p.references.values().map(String::as_str).collect();
            let emb = passage_embedding_scores(mt, &p.geometry, threshold)?;
            let bleu_stats = bleu_stats(hyp, &refs)?;
            let chrf_stats = chrfpp_best_stats(hyp, &refs)?;
            Ok(PassageScores {
                passage: p.id.clone(),
                sim_best: emb.sim_best,
                sim_centroid: emb.sim_centroid,
                normalized_drift: emb.normalized_drift,
                outlier: emb.outlier,
                degenerate: emb.degenerate,
                closest: emb.closest,
                similarities: emb.similarities,
                length_ratio: length_ratio(hyp, &refs)?,
                bleu: bleu_stats.score(),
                chrfpp: chrf_stats.score(),
                bleu_stats,
                chrf_stats,
                external: external.as_ref().map(|e| e[i].clone()),
            })
        })
        .collect::<Result<_, MetricError>>()?;

    let n = passages.len() as f64;
    let mut bleu_total = BleuStats::default();
    let mut chrf_total = ChrfStats::default();
    for p in &passages {
        bleu_total.add(&p.bleu_stats);
        chrf_total.add(&p.chrf_stats);
    }
    let row = SystemRow {
        system: run.system.clone(),
        total,
        scored: passages.len(),
        coverage,
        sim_best: mean(passages.iter().map(|p| p.sim_best)),
        sim_centroid: mean(passages.iter().map(|p| p.sim_centroid)),
        normalized_drift: mean(passages.iter().map(|p| p.normalized_drift).filter(|d| d.is_finite())),
        degenerate: passages.iter().filter(|p| p.degenerate).count(),
        chrfpp: chrf_total.score(),
        chrfpp_mean: mean(passages.iter().map(|p| p.chrfpp)),
        bleu: bleu_total.score(),
        external_avg: external.as_ref().map(|_| mean(passages.iter().filter_map(|p| p.external.as_ref()).map(|e| e.avg))),
        external_best: external
            .as_ref()
            .map(|_| mean(passages.iter().filter_map(|p| p.external.as_ref()).map(|e| e.best))),
        length_ratio: mean(passages.iter().map(|p| p.length_ratio)),
        outlier_rate: 100.0 * passages.iter().filter(|p| p.outlier).count() as f64 / n,
        closest: closest_translator_distribution(&passages, &bench.translators),
    };
    Ok(SystemEvaluation { row, passages })
}

/// Percentage of passages whose nearest reference is each translator. Every
/// translator appears, so rows sum to 100.
pub fn closest_translator_distribution(passages: &[PassageScores], translators: &[TranslatorId]) -> BTreeMap<TranslatorId, f64> {
    let mut counts: BTreeMap<TranslatorId, usize> = translators.iter().map(|t| (t.clone(), 0)).collect();
    for p in passages {
        *counts.entry(p.closest.clone()).or_default() += 1;
    }
    let n = passages.len().max(1) as f64;
    counts.into_iter().map(|(t, c)| (t, 100.0 * c as f64 / n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSimilarity {
    pub a: TranslatorId,
    pub b: TranslatorId,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterTranslator {
    pub passages: usize,
    /// Sorted by mean similarity, highest first.
    pub pairs: Vec<PairSimilarity>,
    /// Mean drift from the centroid of each translator.
    pub drift: BTreeMap<TranslatorId, f64>,
    /// Mean over passages of the per-passage mean drift.
    pub mean_drift: f64,
}

pub fn inter_translator(bench: &Benchmark) -> Result<InterTranslator, EvalError> {
    if bench.passages.is_empty() {
        return Err(EvalError::EmptyBenchmark);
    }
    let ts = &bench.translators;
    let mut pairs = Vec::new();
    for i in 0..ts.len() {
        for j in i + 1..ts.len() {
            let sims: Vec<f64> = bench
                .passages
                .iter()
                .map(|p| cosine(p.geometry.reference(&ts[i]).unwrap(), p.geometry.reference(&ts[j]).unwrap()))
                .collect::<Result<_, _>>()?;
            let m = mean(sims.iter().copied());
            let var = mean(sims.iter().map(|s| (s - m) * (s - m)));
            pairs.push(PairSimilarity {
                a: ts[i].clone(),
                b: ts[j].clone(),
                mean: m,
                std: var.sqrt(),
                min: sims.iter().copied().fold(f64::INFINITY, f64::min),
                max: sims.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    pairs.sort_by(|x, y| y.mean.total_cmp(&x.mean).then_with(|| (&x.a, &x.b).cmp(&(&y.a, &y.b))));
    let drift = ts
        .iter()
        .map(|t| (t.clone(), mean(bench.passages.iter().map(|p| p.geometry.drifts()[t]))))
        .collect();
    Ok(InterTranslator {
        passages: bench.passages.len(),
        pairs,
        drift,
        mean_drift: mean(bench.passages.iter().map(|p| p.geometry.mean_drift())),
    })
}
