//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use multiref::aligner::{align_translator, AlignerConfig};
use multiref::bench::{
    build_translation_batches, emit_reports, evaluate_system, inter_translator, rank_systems, run_system, Benchmark,
    Dimension, EvalConfig, RankInput, ReportBundle, RunnerConfig,
};
use multiref::client::{ClientError, LookupClient, RetryPolicy, ScriptedClient};
use multiref::corpus::{approx_token_count, load_corpus, DocumentStore, PassageId, TranslatorId};
use multiref::curation::{curate, deduplicate, filter_corpus, FilterThresholds};
use multiref::metrics::embedding::VectorStore;
use multiref::metrics::lexical::{bleu_stats, chrfpp_passage};
use multiref::metrics::{passage_embedding_scores, reference_geometry, EmbeddingVector, OutlierThreshold};
use multiref::structured::parse_keyed_response;
use multiref::synthetic::{SMOKE_ALIGNED, SMOKE_ANCHOR, SMOKE_SYSTEM};
use multiref::verifier::{verify_corpus, VerificationCategory, VerifierConfig};

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// 1 -------------------------------------------------------------------------

fn rank_replay() -> Result<String, String> {
    let inputs: Vec<RankInput> = common::RESULT_ROWS
        .iter()
        .map(|(m, s, c, b, e, l, o)| RankInput::new(m, [Some(*s), Some(*c), Some(*b), Some(*e), Some(*l), Some(*o)]))
        .collect();
    let ranked = rank_systems(&inputs).map_err(|e| e.to_string())?;
    let by_name: BTreeMap<&str, _> = ranked.iter().map(|r| (r.system.as_str(), r)).collect();
    let mut worst: f64 = 0.0;
    for (model, ranks, mean) in common::EXPECTED_RANKS {
        let r = by_name.get(model).ok_or(format!("{model} missing"))?;
        let got: Vec<usize> = Dimension::ALL.iter().map(|d| r.ranks[d].unwrap_or(0)).collect();
        ensure!(got == ranks, "{model}: ranks {got:?}, expected {ranks:?}");
        worst = worst.max((r.mean_rank - mean).abs());
        ensure!((r.mean_rank - mean).abs() <= 0.05, "{model}: mean rank {:.3}, expected {mean}", r.mean_rank);
    }
    let order: Vec<&str> = ranked.iter().map(|r| r.system.as_str()).collect();
    let expected: Vec<&str> = common::RESULT_ROWS.iter().map(|r| r.0).collect();
    ensure!(order == expected, "final order {order:?}");
    Ok(format!("60/60 ranks exact, max mean-rank deviation {worst:.3}"))
}

// 2 -------------------------------------------------------------------------

fn drift_identity() -> Result<String, String> {
    let mut r = common::rng(2);
    let passages = 60;
    let mut worst_mean: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    let thr = OutlierThreshold::default();
    for _ in 0..passages {
        let dim = r.gen_range(8..=1024);
        let base: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let noise = r.gen_range(0.1..0.6);
        let mut refs = BTreeMap::new();
        for t in ["a", "b", "c"] {
            let v: Vec<f64> = base.iter().map(|x| x + noise * r.gen_range(-1.0..1.0)).collect();
            refs.insert(TranslatorId::new(t), EmbeddingVector::new(v).unwrap());
        }
        let mt = EmbeddingVector::new(base.iter().map(|x| x + r.gen_range(-1.0..1.0)).collect()).unwrap();
        let geo = reference_geometry(&refs).map_err(|e| e.to_string())?;
        let own: f64 = refs
            .values()
            .map(|v| passage_embedding_scores(v, &geo, thr).unwrap().normalized_drift)
            .sum::<f64>()
            / 3.0;
        worst_mean = worst_mean.max((own - 1.0).abs());
        ensure!((own - 1.0).abs() <= 1e-9, "mean own normalized drift {own}");

        let scaled: BTreeMap<TranslatorId, EmbeddingVector> =
            refs.iter().map(|(t, v)| (t.clone(), v.scaled(r.gen_range(1e-3..1e3)).unwrap())).collect();
        let geo2 = reference_geometry(&scaled).map_err(|e| e.to_string())?;
        let a = passage_embedding_scores(&mt, &geo, thr).unwrap();
        let b = passage_embedding_scores(&mt.scaled(r.gen_range(1e-3..1e3)).unwrap(), &geo2, thr).unwrap();
        ensure!(a.closest == b.closest, "closest changed under scaling");
        let mut diffs = vec![
            (a.sim_best - b.sim_best).abs(),
            (a.sim_centroid - b.sim_centroid).abs(),
            (a.normalized_drift - b.normalized_drift).abs(),
            (geo.mean_drift() - geo2.mean_drift()).abs(),
        ];
        diffs.extend(a.similarities.iter().map(|(t, s)| (s - b.similarities[t]).abs()));
        diffs.extend(geo.drifts().iter().map(|(t, d)| (d - geo2.drifts()[t]).abs()));
        let d = diffs.into_iter().fold(0.0, f64::max);
        worst_scale = worst_scale.max(d);
        ensure!(d <= 1e-12, "scaling moved an output by {d:e}");
    }
    Ok(format!("{passages} passages, |mean-1| <= {worst_mean:.1e}, scale drift <= {worst_scale:.1e}"))
}

// 3 -------------------------------------------------------------------------

/// Three unit references whose centroid cosines are exactly `c`.
pub fn triple_with_centroid_cosines(c: [f64; 3]) -> BTreeMap<TranslatorId, EmbeddingVector> {
    let s = c.map(|x| (1.0 - x * x).sqrt());
    let cos_t = (s[2] * s[2] - s[0] * s[0] - s[1] * s[1]) / (2.0 * s[0] * s[1]);
    let w1 = [1.0, 0.0];
    let w2 = [cos_t, (1.0 - cos_t * cos_t).sqrt()];
    let w3 = [-(s[0] * w1[0] + s[1] * w2[0]) / s[2], -(s[0] * w1[1] + s[1] * w2[1]) / s[2]];
    let ws = [w1, w2, w3];
    ["a", "b", "c"]
        .iter()
        .enumerate()
        .map(|(i, t)| (TranslatorId::new(*t), EmbeddingVector::new(vec![c[i], s[i] * ws[i][0], s[i] * ws[i][1]]).unwrap()))
        .collect()
}

fn geometry_arithmetic() -> Result<String, String> {
    let geo = reference_geometry(&triple_with_centroid_cosines([0.963, 0.957, 0.952])).map_err(|e| e.to_string())?;
    let drifts: Vec<f64> = geo.drifts().values().copied().collect();
    for (got, want) in drifts.iter().zip([0.037, 0.043, 0.048]) {
        ensure!((got - want).abs() < 1e-9, "drift {got}, expected {want}");
    }
    let m = geo.mean_drift();
    ensure!((m - 0.0427).abs() <= 1e-3, "mean drift {m}");
    ensure!((m - 0.043).abs() <= 1e-3, "mean drift {m} vs reported 0.043");
    Ok(format!("drifts {:.3}/{:.3}/{:.3}, mean {m:.4}", drifts[0], drifts[1], drifts[2]))
}

// 4 -------------------------------------------------------------------------

fn lexical_oracles() -> Result<String, String> {
    let mut r = common::rng(4);
    let cases = 300;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (hyp, refs) = common::random_case(&mut r);
        let rr: Vec<&str> = refs.iter().map(String::as_str).collect();
        let bleu = bleu_stats(&hyp, &rr).unwrap().score();
        let chrf = chrfpp_passage(&hyp, &rr).unwrap();
        let (ob, oc) = (common::bleu_oracle(&hyp, &rr), common::chrfpp_oracle(&hyp, &rr));
        worst = worst.max((bleu - ob).abs()).max((chrf - oc).abs());
        ensure!((bleu - ob).abs() <= 1e-6, "BLEU {bleu} vs oracle {ob} for {hyp:?} / {refs:?}");
        ensure!((chrf - oc).abs() <= 1e-6, "chrF++ {chrf} vs oracle {oc} for {hyp:?} / {refs:?}");
        let self_b = bleu_stats(&hyp, &[&hyp]).unwrap().score();
        let self_c = chrfpp_passage(&hyp, &[&hyp]).unwrap();
        ensure!(self_b == 100.0 && self_c == 100.0, "identity gave BLEU {self_b}, chrF++ {self_c} for {hyp:?}");
        let mut dup = rr.clone();
        dup.push(rr[0]);
        ensure!(bleu_stats(&hyp, &dup).unwrap().score() == bleu, "duplicate reference changed BLEU");
        ensure!(chrfpp_passage(&hyp, &dup).unwrap() == chrf, "duplicate reference changed chrF++");
    }
    Ok(format!("{cases} cases, max oracle deviation {worst:.1e}"))
}

// 5 -------------------------------------------------------------------------

fn curation_identities() -> Result<String, String> {
    let f = common::planted_curation();
    let t = FilterThresholds::default();
    let outcome = filter_corpus(&f.corpus, &f.records, &t).map_err(|e| e.to_string())?;
    for v in &outcome.verdicts {
        let got: Vec<_> = v.violations.iter().copied().collect();
        let want = f.expected.get(&v.passage).cloned().unwrap_or_default();
        ensure!(got == want, "{}: violations {got:?}, planted {want:?}", v.passage);
    }
    ensure!(outcome.verdicts.len() == 40, "{} verdicts", outcome.verdicts.len());
    let sources: BTreeMap<PassageId, String> =
        f.corpus.passages.iter().map(|p| (p.id.clone(), p.source_text())).collect();
    let retained: Vec<(PassageId, String)> = outcome.retained.iter().map(|id| (id.clone(), sources[id].clone())).collect();
    let (finals, removals) = deduplicate(&retained, &t);
    let pairs: Vec<(PassageId, PassageId)> = removals.iter().map(|r| (r.removed.clone(), r.kept.clone())).collect();
    ensure!(pairs == f.expected_removals, "removals {pairs:?}");
    ensure!(finals.len() == retained.len() - removals.len(), "|final| != |retained| - |removed|");
    ensure!(finals.contains(&common::pid("x37:1")), "chain tail x37 should survive once x36 is gone");
    let again: Vec<(PassageId, String)> = finals.iter().map(|id| (id.clone(), sources[id].clone())).collect();
    let (finals2, removals2) = deduplicate(&again, &t);
    ensure!(removals2.is_empty() && finals2 == finals, "deduplication is not idempotent");
    let (curated, report) = curate(&f.corpus, &f.records, &t).map_err(|e| e.to_string())?;
    ensure!(curated.passages.len() == finals.len(), "curate kept {} passages", curated.passages.len());
    ensure!(
        report.final_passages.len() == report.retained_after_filter.len() - report.removed_by_dedup.len(),
        "report accounting broken"
    );
    Ok(format!(
        "40 passages, {} flagged, {} retained, {} removed, {} final",
        f.expected.len(),
        retained.len(),
        removals.len(),
        finals.len()
    ))
}

// 6 -------------------------------------------------------------------------

fn verification_cascade() -> Result<String, String> {
    let f = common::cascade_fixture();
    let out = verify_corpus(&f.corpus, &f.docs, &f.docs, &VerifierConfig::default()).map_err(|e| e.to_string())?;
    let mut correct = 0;
    for rec in &out.records {
        let want = f.expected[&rec.segment];
        ensure!(rec.category == want, "{}: {:?}, expected {want:?}", rec.segment, rec.category);
        correct += 1;
    }
    ensure!(correct == f.expected.len(), "{correct} records for {} fixtures", f.expected.len());
    for ts in &out.stats.translators {
        let total: f64 = VerificationCategory::REPORTED.iter().map(|c| ts.percent(*c)).sum();
        ensure!((total - 100.0).abs() <= 1e-9, "{}: percentages sum to {total}", ts.translator);
    }
    Ok(format!("{correct}/{} classified correctly, percentages sum to 100", f.expected.len()))
}

// 7 -------------------------------------------------------------------------

fn protocol() -> Result<String, String> {
    let ids = vec!["mn1:1".to_string(), "mn1:2".to_string()];
    for (what, raw) in [
        ("extra", r#"{"mn1:1":"a","mn1:2":"b","mn1:3":"c"}"#),
        ("missing", r#"{"mn1:1":"a"}"#),
        ("reordered", r#"{"mn1:2":"b","mn1:1":"a"}"#),
    ] {
        ensure!(parse_keyed_response(raw, &ids, false).is_err(), "{what} keys accepted");
        ensure!(parse_keyed_response(raw, &ids, true).is_err(), "{what} keys accepted with nulls allowed");
    }
    ensure!(parse_keyed_response(r#"{"mn1:1":"a","mn1:2":"b"}"#, &ids, false).is_ok(), "valid response rejected");

    // a scripted translation run retries a reordered answer, then succeeds
    let passages = vec![(common::pid("mn1:1"), "evam".to_string()), (common::pid("mn1:2"), "me".to_string())];
    let client = ScriptedClient::new([
        Ok(r#"{"mn1:2":"b","mn1:1":"a"}"#.to_string()),
        Err(ClientError::Transient("429".into())),
        Ok(r#"{"mn1:1":"a","mn1:2":"b"}"#.to_string()),
    ]);
    let policy = RetryPolicy { max_attempts: 3, initial_backoff_ms: 20, max_backoff_ms: 30 };
    let config = RunnerConfig { retry: policy, ..Default::default() };
    let start = Instant::now();
    let run = run_system("s", "m", &passages, &client, &config, None).map_err(|e| e.to_string())?;
    let waited = start.elapsed();
    ensure!(client.calls() == 3 && run.outputs.len() == 2, "expected success on the third attempt");
    ensure!(waited >= Duration::from_millis(50), "backoff too short: {waited:?}");
    let d = RetryPolicy::default();
    let schedule: Vec<u64> = (1..=7).map(|a| d.backoff(a).as_millis() as u64).collect();
    ensure!(schedule == [1000, 2000, 4000, 8000, 16000, 30000, 30000], "default schedule {schedule:?}");

    // resume performs no calls on complete runs
    let again = ScriptedClient::new([]);
    let resumed = run_system("s", "m", &passages, &again, &config, Some(&run)).map_err(|e| e.to_string())?;
    ensure!(again.calls() == 0 && resumed.outputs == run.outputs, "translation resume made calls");
    let f = common::cascade_fixture();
    let silent = ScriptedClient::new([]);
    let aligned =
        align_translator(&f.corpus, &"tr".into(), &f.docs, &silent, &AlignerConfig::default()).map_err(|e| e.to_string())?;
    ensure!(silent.calls() == 0 && aligned.report.calls == 0, "alignment resume made calls");

    // packing
    let mut r = common::rng(7);
    let mut fixtures = 0;
    for _ in 0..200 {
        let n = r.gen_range(0..40);
        let ps: Vec<(PassageId, String)> = (0..n)
            .map(|i| (common::pid(&format!("d{i:03}:1")), vec!["w"; r.gen_range(1..4500)].join(" ")))
            .collect();
        for b in build_translation_batches(&ps, 3000) {
            let tokens: usize = b.items.iter().map(|(_, s)| approx_token_count(s)).sum();
            ensure!(tokens <= 3000 || (b.oversize && b.items.len() == 1), "batch of {tokens} tokens");
        }
        let flat: Vec<PassageId> =
            build_translation_batches(&ps, 3000).into_iter().flat_map(|b| b.items.into_iter().map(|(id, _)| id)).collect();
        ensure!(flat == ps.iter().map(|(id, _)| id.clone()).collect::<Vec<_>>(), "packing lost or reordered passages");
        fixtures += 1;
    }
    Ok(format!("strict keys, retry 3 calls in {waited:?}, zero-call resume, {fixtures} packing fixtures"))
}

// 8 -------------------------------------------------------------------------

fn pipeline(fixture: &Path, out: &Path) -> Result<multiref::bench::SystemRow, String> {
    let s = |e: &dyn std::fmt::Display| e.to_string();
    let mut corpus = load_corpus(&fixture.join("corpus.jsonl")).map_err(|e| s(&e))?;
    let docs = DocumentStore::load_dir(&fixture.join("docs")).map_err(|e| s(&e))?;
    let vectors = VectorStore::load(&fixture.join("vectors.tsv")).map_err(|e| s(&e))?;
    let table: BTreeMap<String, BTreeMap<String, Option<String>>> =
        serde_json::from_str(&std::fs::read_to_string(fixture.join("alignment.json")).map_err(|e| s(&e))?).map_err(|e| s(&e))?;
    let align_config = AlignerConfig { batch_size: 4, retry: RetryPolicy::immediate(1), ..Default::default() };
    for t in SMOKE_ALIGNED {
        let client = LookupClient::new(table[t].clone().into_iter().collect());
        let run = align_translator(&corpus, &t.into(), &docs, &client, &align_config).map_err(|e| s(&e))?;
        corpus = run.corpus;
    }
    let verified = verify_corpus(&corpus, &docs, &docs, &VerifierConfig::default()).map_err(|e| s(&e))?;
    let (curated, _) = curate(&corpus, &verified.records, &FilterThresholds::default()).map_err(|e| s(&e))?;
    let bench = Benchmark::from_corpus(&curated, &vectors).map_err(|e| s(&e))?;
    let anchor = TranslatorId::new(SMOKE_ANCHOR);
    let echo: HashMap<String, Option<String>> =
        curated.passages.iter().map(|p| (p.id.to_string(), Some(p.text_of(&anchor)))).collect();
    let run = run_system(
        SMOKE_SYSTEM,
        SMOKE_SYSTEM,
        &bench.sources(),
        &LookupClient::new(echo),
        &RunnerConfig { retry: RetryPolicy::immediate(1), ..Default::default() },
        None,
    )
    .map_err(|e| s(&e))?;
    let ev = evaluate_system(&run, &bench, &vectors, None, &EvalConfig::default()).map_err(|e| s(&e))?;
    let row = ev.row.clone();
    let bundle = ReportBundle {
        translators: bench.translators.clone(),
        inter_translator: Some(inter_translator(&bench).map_err(|e| s(&e))?),
        systems: vec![ev],
        external_id: None,
    };
    emit_reports(out, &bundle).map_err(|e| s(&e))?;
    Ok(row)
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn end_to_end() -> Result<String, String> {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/smoke");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let row = pipeline(&fixture, a.path())?;
    pipeline(&fixture, b.path())?;
    ensure!(row.scored == 10, "{} passages scored", row.scored);
    ensure!((row.sim_best - 1.0).abs() <= 1e-12, "sim_best {}", row.sim_best);
    ensure!(row.bleu == 100.0 && row.chrfpp == 100.0, "BLEU {} chrF++ {}", row.bleu, row.chrfpp);
    ensure!(row.outlier_rate == 0.0, "outlier rate {}", row.outlier_rate);
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    ensure!(ta.len() >= 9 && ta == tb, "reports differ between runs");
    Ok(format!(
        "10 passages, sim_best {:.12}, BLEU {}, chrF++ {}, outliers {}%, {} identical files",
        row.sim_best,
        row.bleu,
        row.chrfpp,
        row.outlier_rate,
        ta.len()
    ))
}

fn main() {
    let criteria: [(u8, &str, Check, Option<Duration>); 8] = [
        (1, "rank replay", rank_replay, Some(Duration::from_secs(1))),
        (2, "drift identity and scale invariance", drift_identity, Some(Duration::from_secs(5))),
        (3, "geometry arithmetic", geometry_arithmetic, None),
        (4, "lexical metric oracles", lexical_oracles, Some(Duration::from_secs(30))),
        (5, "curation identities", curation_identities, None),
        (6, "verification cascade", verification_cascade, None),
        (7, "alignment and translation protocol", protocol, None),
        (8, "end-to-end smoke", end_to_end, Some(Duration::from_secs(10))),
    ];
    let mut failed = 0;
    for (id, name, check, limit) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if elapsed > l => Err(format!("took {elapsed:?}, limit {l:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS  {id}. {name}: {detail} ({} ms)", elapsed.as_millis()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {id}. {name}: {why} ({} ms)", elapsed.as_millis());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
