//! Deterministic text, TSV and JSON reports for the benchmark tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::evaluate::{InterTranslator, SystemEvaluation};
use super::rank::{rank_unchecked, Dimension, RankInput, RankedSystem};
use crate::corpus::TranslatorId;
use crate::verifier::render_table;

pub const INTER_TRANSLATOR_STEM: &str = "inter_translator";
pub const RESULTS_STEM: &str = "results";
pub const CLOSEST_STEM: &str = "closest";
pub const RANKS_STEM: &str = "ranks";
pub const SUMMARY_JSON: &str = "summary.json";
pub const PASSAGE_DIR: &str = "passages";

#[derive(Debug, Clone, Default)]
pub struct ReportBundle {
    pub translators: Vec<TranslatorId>,
    pub inter_translator: Option<InterTranslator>,
    pub systems: Vec<SystemEvaluation>,
    pub external_id: Option<String>,
}

fn fixed(v: f64, places: usize) -> String {
    if v.is_finite() { format!("{v:.places$}") } else { "inf".into() }
}

fn opt(v: Option<f64>, places: usize) -> String {
    v.map(|v| fixed(v, places)).unwrap_or_else(|| "n/a".into())
}

fn tsv(rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}

/// Systems in report order with their ranks. One system is ranked alone.
pub fn ranked(bundle: &ReportBundle) -> Vec<RankedSystem> {
    let inputs: Vec<RankInput> = bundle.systems.iter().map(|s| RankInput::from_row(&s.row)).collect();
    if inputs.is_empty() {
        return Vec::new();
    }
    rank_unchecked(&inputs).unwrap_or_else(|e| {
        log::warn!("ranking skipped: {e}");
        Vec::new()
    })
}

fn ordered<'a>(bundle: &'a ReportBundle, ranks: &[RankedSystem]) -> Vec<&'a SystemEvaluation> {
    let by_name: BTreeMap<&str, &SystemEvaluation> = bundle.systems.iter().map(|s| (s.row.system.as_str(), s)).collect();
    if ranks.len() == bundle.systems.len() {
        ranks.iter().map(|r| by_name[r.system.as_str()]).collect()
    } else {
        by_name.into_values().collect()
    }
}

pub fn inter_translator_rows(it: Option<&InterTranslator>) -> Vec<Vec<String>> {
    let mut rows = vec![["Translator pair", "Mean", "Std", "Min", "Max"].map(String::from).to_vec()];
    if let Some(it) = it {
        for p in &it.pairs {
            rows.push(vec![
                format!("{} <-> {}", p.a, p.b),
                fixed(p.mean, 3),
                fixed(p.std, 3),
                fixed(p.min, 3),
                fixed(p.max, 3),
            ]);
        }
    }
    rows
}

fn inter_translator_text(it: Option<&InterTranslator>) -> String {
    let mut out = render_table(&inter_translator_rows(it));
    if let Some(it) = it {
        out.push('\n');
        let mut drift = vec![vec!["Translator".to_string(), "Mean drift".to_string()]];
        drift.extend(it.drift.iter().map(|(t, d)| vec![t.to_string(), fixed(*d, 4)]));
        out.push_str(&render_table(&drift));
        let _ = writeln!(out, "\nmean drift d: {} over {} passages", fixed(it.mean_drift, 4), it.passages);
    }
    out
}

pub fn results_rows(bundle: &ReportBundle, ranks: &[RankedSystem]) -> Vec<Vec<String>> {
    let ext = bundle.external_id.as_deref().unwrap_or("ext");
    let mut rows = vec![vec![
        "Rank".to_string(),
        "Model".into(),
        "sim_best".into(),
        "chrF++".into(),
        "chrF++ mean".into(),
        "BLEU".into(),
        format!("{ext}_avg"),
        format!("{ext}_best"),
        "Length".into(),
        "Outliers".into(),
        "Coverage".into(),
    ]];
    for (i, s) in ordered(bundle, ranks).into_iter().enumerate() {
        let r = &s.row;
        rows.push(vec![
            (i + 1).to_string(),
            r.system.clone(),
            fixed(r.sim_best, 3),
            fixed(r.chrfpp, 1),
            fixed(r.chrfpp_mean, 1),
            fixed(r.bleu, 1),
            opt(r.external_avg, 3),
            opt(r.external_best, 3),
            fixed(r.length_ratio, 3),
            format!("{}%", fixed(r.outlier_rate, 1)),
            format!("{}%", fixed(100.0 * r.coverage, 1)),
        ]);
    }
    rows
}

pub fn closest_rows(bundle: &ReportBundle) -> Vec<Vec<String>> {
    let mut header = vec!["Model".to_string()];
    header.extend(bundle.translators.iter().map(|t| t.to_string()));
    let mut systems: Vec<&SystemEvaluation> = bundle.systems.iter().collect();
    if let Some(first) = bundle.translators.first() {
        let share = |s: &SystemEvaluation| s.row.closest.get(first).copied().unwrap_or(0.0);
        systems.sort_by(|a, b| share(b).total_cmp(&share(a)).then_with(|| a.row.system.cmp(&b.row.system)));
    }
    let mut rows = vec![header];
    for s in systems {
        let mut row = vec![s.row.system.clone()];
        row.extend(
            bundle
                .translators
                .iter()
                .map(|t| format!("{}%", fixed(s.row.closest.get(t).copied().unwrap_or(0.0), 1))),
        );
        rows.push(row);
    }
    rows
}

pub fn rank_rows(bundle: &ReportBundle, ranks: &[RankedSystem]) -> Vec<Vec<String>> {
    let mut header = vec!["Model".to_string()];
    header.extend(Dimension::ALL.iter().map(|d| d.label().to_string()));
    header.push("Mean".into());
    let mut rows = vec![header];
    let by_name: BTreeMap<&str, &RankedSystem> = ranks.iter().map(|r| (r.system.as_str(), r)).collect();
    for s in ordered(bundle, ranks) {
        let Some(r) = by_name.get(s.row.system.as_str()) else { continue };
        let mut row = vec![r.system.clone()];
        row.extend(Dimension::ALL.iter().map(|d| r.ranks[d].map(|x| x.to_string()).unwrap_or_else(|| "-".into())));
        row.push(fixed(r.mean_rank, 1));
        rows.push(row);
    }
    rows
}

fn passage_rows(s: &SystemEvaluation, translators: &[TranslatorId]) -> Vec<Vec<String>> {
    let mut header: Vec<String> = [
        "passage", "sim_best", "sim_centroid", "normalized_drift", "outlier", "degenerate", "closest", "length_ratio",
        "bleu", "chrfpp", "ext_avg", "ext_best",
    ]
    .map(String::from)
    .to_vec();
    header.extend(translators.iter().map(|t| format!("sim_{t}")));
    let mut rows = vec![header];
    for p in &s.passages {
        let mut row = vec![
            p.passage.to_string(),
            fixed(p.sim_best, 6),
            fixed(p.sim_centroid, 6),
            fixed(p.normalized_drift, 6),
            p.outlier.to_string(),
            p.degenerate.to_string(),
            p.closest.to_string(),
            fixed(p.length_ratio, 6),
            fixed(p.bleu, 4),
            fixed(p.chrfpp, 4),
            opt(p.external.as_ref().map(|e| e.avg), 6),
            opt(p.external.as_ref().map(|e| e.best), 6),
        ];
        row.extend(translators.iter().map(|t| opt(p.similarities.get(t).copied(), 6)));
        rows.push(row);
    }
    rows
}

#[derive(Serialize)]
struct Summary<'a> {
    translators: &'a [TranslatorId],
    inter_translator: Option<&'a InterTranslator>,
    systems: Vec<SummarySystem<'a>>,
}

#[derive(Serialize)]
struct SummarySystem<'a> {
    #[serde(flatten)]
    row: &'a super::evaluate::SystemRow,
    ranks: Option<&'a RankedSystem>,
}

/// File-system safe name for a system id.
pub fn file_stem(system: &str) -> String {
    system
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes every table as `.txt` and `.tsv`, a JSON summary, and one
/// per-passage TSV per system. Output depends only on the bundle.
pub fn emit_reports(dir: &Path, bundle: &ReportBundle) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir.join(PASSAGE_DIR))?;
    let ranks = ranked(bundle);
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> std::io::Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    let pairs = inter_translator_rows(bundle.inter_translator.as_ref());
    put(format!("{INTER_TRANSLATOR_STEM}.tsv"), tsv(&pairs))?;
    put(format!("{INTER_TRANSLATOR_STEM}.txt"), inter_translator_text(bundle.inter_translator.as_ref()))?;
    for (name, rows) in [
        (RESULTS_STEM, results_rows(bundle, &ranks)),
        (CLOSEST_STEM, closest_rows(bundle)),
        (RANKS_STEM, rank_rows(bundle, &ranks)),
    ] {
        put(format!("{name}.tsv"), tsv(&rows))?;
        put(format!("{name}.txt"), render_table(&rows))?;
    }
    let by_name: BTreeMap<&str, &RankedSystem> = ranks.iter().map(|r| (r.system.as_str(), r)).collect();
    let summary = Summary {
        translators: &bundle.translators,
        inter_translator: bundle.inter_translator.as_ref(),
        systems: ordered(bundle, &ranks)
            .into_iter()
            .map(|s| SummarySystem { row: &s.row, ranks: by_name.get(s.row.system.as_str()).copied() })
            .collect(),
    };
    put(SUMMARY_JSON.into(), serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    for s in &bundle.systems {
        put(
            format!("{PASSAGE_DIR}/{}.tsv", file_stem(&s.row.system)),
            tsv(&passage_rows(s, &bundle.translators)),
        )?;
    }
    Ok(written)
}
