//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use multiref::corpus::{parse_segment_id, AlignedCorpus, DocumentStore, PassageId, Segment, SegmentId, Translator};
use multiref::curation::Criterion;
use multiref::verifier::{VerificationCategory, VerificationRecord};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sid(s: &str) -> SegmentId {
    parse_segment_id(s).unwrap()
}

pub fn pid(s: &str) -> PassageId {
    PassageId::parse(s).unwrap()
}

// ---------------------------------------------------------------------------
// Lexical oracles. Whitespace tokenization only: the random cases use
// lowercase words and space-separated punctuation, where every tokenizer in
// the library reduces to a plain split.

const VOCAB: [&str; 9] = ["the", "monk", "sat", "down", "a", "tree", "at", ",", "."];

pub fn random_sentence(r: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = r.gen_range(min..=max);
    (0..n).map(|_| VOCAB[r.gen_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

/// Hypothesis of 1-12 tokens and 1-3 references of 1-12 tokens.
pub fn random_case(r: &mut ChaCha8Rng) -> (String, Vec<String>) {
    let hyp = random_sentence(r, 1, 12);
    let k = r.gen_range(1..=3);
    let refs = (0..k)
        .map(|_| if r.gen_bool(0.2) { hyp.clone() } else { random_sentence(r, 1, 12) })
        .collect();
    (hyp, refs)
}

fn windows<T: Clone>(xs: &[T], n: usize) -> Vec<Vec<T>> {
    if xs.len() < n {
        return Vec::new();
    }
    (0..=xs.len() - n).map(|i| xs[i..i + n].to_vec()).collect()
}

fn occurrences<T: PartialEq>(g: &[T], all: &[Vec<T>]) -> usize {
    all.iter().filter(|x| x.as_slice() == g).count()
}

pub fn bleu_oracle(hyp: &str, refs: &[&str]) -> f64 {
    let h: Vec<&str> = hyp.split(' ').filter(|t| !t.is_empty()).collect();
    let rs: Vec<Vec<&str>> = refs.iter().map(|r| r.split(' ').filter(|t| !t.is_empty()).collect()).collect();
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=4 {
        let hg = windows(&h, n);
        if hg.is_empty() {
            continue;
        }
        let rgs: Vec<Vec<Vec<&str>>> = rs.iter().map(|r| windows(r, n)).collect();
        let mut seen: Vec<Vec<&str>> = Vec::new();
        let mut matched = 0;
        for g in &hg {
            if seen.contains(g) {
                continue;
            }
            seen.push(g.clone());
            let ch = occurrences(g, &hg);
            let cr = rgs.iter().map(|rg| occurrences(g, rg)).max().unwrap_or(0);
            matched += ch.min(cr);
        }
        if matched == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / hg.len() as f64).ln();
        orders += 1;
    }
    if orders == 0 {
        return 0.0;
    }
    let c = h.len() as f64;
    let mut best: Option<usize> = None;
    for r in &rs {
        let better = match best {
            None => true,
            Some(b) => {
                let (d, db) = ((r.len() as f64 - c).abs(), (b as f64 - c).abs());
                d < db || (d == db && r.len() < b)
            }
        };
        if better {
            best = Some(r.len());
        }
    }
    let rl = best.unwrap() as f64;
    let bp = if c < rl { (1.0 - rl / c).exp() } else { 1.0 };
    100.0 * bp * (log_sum / orders as f64).exp()
}

fn prf(hg: &[Vec<String>], rg: &[Vec<String>]) -> Option<(f64, f64)> {
    if hg.is_empty() || rg.is_empty() {
        return None;
    }
    let mut seen: Vec<&Vec<String>> = Vec::new();
    let mut m = 0;
    for g in hg {
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        m += occurrences(g, hg).min(occurrences(g, rg));
    }
    Some((m as f64 / hg.len() as f64, m as f64 / rg.len() as f64))
}

fn chrf_single(hyp: &str, reference: &str) -> f64 {
    let chars = |s: &str| -> Vec<String> { s.chars().filter(|c| *c != ' ').map(String::from).collect() };
    let words = |s: &str| -> Vec<String> { s.split(' ').filter(|t| !t.is_empty()).map(String::from).collect() };
    let (hc, rc, hw, rw) = (chars(hyp), chars(reference), words(hyp), words(reference));
    let mut ps = Vec::new();
    for n in 1..=6 {
        ps.extend(prf(&windows(&hc, n), &windows(&rc, n)));
    }
    for n in 1..=2 {
        ps.extend(prf(&windows(&hw, n), &windows(&rw, n)));
    }
    if ps.is_empty() {
        return 0.0;
    }
    let p = ps.iter().map(|x| x.0).sum::<f64>() / ps.len() as f64;
    let r = ps.iter().map(|x| x.1).sum::<f64>() / ps.len() as f64;
    if p + r == 0.0 {
        return 0.0;
    }
    100.0 * 5.0 * p * r / (4.0 * p + r)
}

pub fn chrfpp_oracle(hyp: &str, refs: &[&str]) -> f64 {
    refs.iter().map(|r| chrf_single(hyp, r)).fold(f64::NEG_INFINITY, f64::max)
}

// ---------------------------------------------------------------------------
// Planted curation corpus.

pub struct PlantedCuration {
    pub corpus: AlignedCorpus,
    pub records: Vec<VerificationRecord>,
    pub expected: BTreeMap<PassageId, Vec<Criterion>>,
    /// (removed, kept) pairs expected from deduplication.
    pub expected_removals: Vec<(PassageId, PassageId)>,
}

pub fn words(r: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    const SYL: [&str; 16] = ["ka", "ri", "to", "mel", "an", "su", "vor", "li", "da", "ne", "pa", "sho", "tam", "ir", "bel", "go"];
    (0..n)
        .map(|_| (0..3).map(|_| SYL[r.gen_range(0..SYL.len())]).collect::<String>())
        .collect()
}

pub fn text(r: &mut ChaCha8Rng, n: usize) -> String {
    words(r, n).join(" ")
}

pub const A: &str = "anchor";
pub const B: &str = "bravo";
pub const C: &str = "charlie";

/// 40 passages `x01:1` .. `x40:1` with two segments each. Planted:
/// x03 null, x07 suspicious, x11 short, x15 copied translation, x19 long
/// anchor, x23 internal duplication, x27 short and copied, x31/x32 a
/// duplicate source pair, x35/x36/x37 a similarity chain.
pub fn planted_curation() -> PlantedCuration {
    let mut r = rng(40);
    let mut segments = Vec::new();
    let mut records = Vec::new();
    let mut expected: BTreeMap<PassageId, Vec<Criterion>> = BTreeMap::new();
    let dup_source = words(&mut r, 30);
    let chain_a = words(&mut r, 60);
    let mut chain_b = chain_a.clone();
    chain_b[20] = "zzzb".into();
    let mut chain_c = chain_b.clone();
    chain_c[40] = "zzzc".into();
    for i in 1..=40 {
        let doc = format!("x{i:02}");
        let mut src: [String; 2] = [text(&mut r, 12), text(&mut r, 12)];
        match i {
            31 => src = [dup_source[..15].join(" "), dup_source[15..].join(" ")],
            32 => {
                let mut w = dup_source.clone();
                w[29] = "zzzd".into();
                src = [w[..15].join(" "), w[15..].join(" ")];
            }
            35 => src = [chain_a[..30].join(" "), chain_a[30..].join(" ")],
            36 => src = [chain_b[..30].join(" "), chain_b[30..].join(" ")],
            37 => src = [chain_c[..30].join(" "), chain_c[30..].join(" ")],
            _ => {}
        }
        let short = matches!(i, 11 | 27);
        let n = if short { 4 } else { 12 };
        let mut tr: BTreeMap<&str, [Option<String>; 2]> = BTreeMap::new();
        for t in [A, B, C] {
            tr.insert(t, [Some(text(&mut r, n)), Some(text(&mut r, n))]);
        }
        let mut expect = Vec::new();
        match i {
            3 => {
                tr.get_mut(B).unwrap()[1] = None;
                expect.push(Criterion::IncompleteData);
            }
            11 => expect.push(Criterion::InsufficientLength),
            15 | 27 => {
                let copy = tr[B].clone();
                tr.insert(C, copy);
                if i == 27 {
                    expect.push(Criterion::InsufficientLength);
                }
                expect.push(Criterion::ExcessiveSimilarity);
            }
            19 => {
                tr.insert(A, [Some(text(&mut r, 36)), Some(text(&mut r, 36))]);
                expect.push(Criterion::AnomalousLengthRatio);
            }
            23 => {
                let first = tr[B][0].clone().unwrap();
                tr.get_mut(B).unwrap()[1] = Some(format!("{first} {}", text(&mut r, 4)));
                expect.push(Criterion::InternalDuplication);
            }
            _ => {}
        }
        for s in 0..2 {
            let id = sid(&format!("{doc}:1.{}", s + 1));
            let mut seg = Segment::new(id.clone(), src[s].clone());
            for (t, texts) in &tr {
                seg = seg.with(t, texts[s].as_deref());
                if *t == A {
                    continue;
                }
                let category = match (&texts[s], i, *t, s) {
                    (None, ..) => VerificationCategory::NotApplicable,
                    (Some(_), 7, C, 0) => VerificationCategory::Suspicious,
                    _ => VerificationCategory::Verbatim,
                };
                records.push(VerificationRecord { segment: id.clone(), translator: (*t).into(), category, evidence: None });
            }
            segments.push(seg);
        }
        if i == 7 {
            expect.push(Criterion::VerificationFailure);
        }
        if !expect.is_empty() {
            expect.sort();
            expected.insert(pid(&format!("{doc}:1")), expect);
        }
    }
    let corpus = AlignedCorpus::new(
        vec![Translator::anchor(A), Translator::aligned(B), Translator::aligned(C)],
        segments,
        Default::default(),
    )
    .unwrap();
    PlantedCuration {
        corpus,
        records,
        expected,
        expected_removals: vec![(pid("x32:1"), pid("x31:1")), (pid("x36:1"), pid("x35:1"))],
    }
}

// ---------------------------------------------------------------------------
// Verification cascade fixture: one document per category plus a
// cross-referenced document.

pub struct CascadeFixture {
    pub corpus: AlignedCorpus,
    pub docs: DocumentStore,
    pub expected: BTreeMap<SegmentId, VerificationCategory>,
}

pub fn cascade_fixture() -> CascadeFixture {
    let t = "tr";
    let mut docs = DocumentStore::new();
    docs.insert(
        &t.into(),
        "mn1",
        "Thus have I heard. At one time the Blessed One was staying near Savatthi.\n\n\
         He said, \u{201C}Come, monk\u{201D}\u{2014}and the monk went forth.\n\n\
         He perceives water as water. He perceives fire as fire. He perceives wind as wind.\n\n\
         He perceives earth as earth. He perceives water \u{2026} wind as wind, and so on.\n\n\
         The rest is as in MN 10, in full.\n",
    );
    docs.insert(&t.into(), "mn10", "There is the case where a monk remains focused on the body in and of itself.\n");
    let rows: [(&str, &str, VerificationCategory); 6] = [
        ("mn1:1.1", "At one time the Blessed One was staying near Savatthi.", VerificationCategory::Verbatim),
        ("mn1:1.2", "He said, \"Come, monk\"-and the monk went forth.", VerificationCategory::Normalized),
        (
            "mn1:1.3",
            "He perceives water as water. He perceives fire as fire. He perceives wind as wind.",
            VerificationCategory::Verbatim,
        ),
        (
            "mn1:1.4",
            "He perceives earth as earth. He perceives water as water. He perceives fire as fire. He perceives wind as wind, and so on.",
            VerificationCategory::Expanded,
        ),
        ("mn1:1.5", "a monk remains focused on the body in and of itself", VerificationCategory::CrossReference),
        ("mn1:1.6", "The Blessed One flew over the ocean on a golden swan.", VerificationCategory::Suspicious),
    ];
    let mut segments = Vec::new();
    let mut expected = BTreeMap::new();
    for (id, extraction, category) in rows {
        segments.push(Segment::new(sid(id), "pali").with("anc", Some("anchor text")).with(t, Some(extraction)));
        expected.insert(sid(id), category);
    }
    let corpus =
        AlignedCorpus::new(vec![Translator::anchor("anc"), Translator::aligned(t)], segments, Default::default()).unwrap();
    CascadeFixture { corpus, docs, expected }
}

// ---------------------------------------------------------------------------
// Ten-system result rows and their expected ranks, for the rank replay.

/// (model, sim_best, chrF++, BLEU, external avg, length ratio, outlier %).
pub const RESULT_ROWS: [(&str, f64, f64, f64, f64, f64, f64); 10] = [
    ("Gemini 3 Pro", 0.946, 68.5, 63.3, 0.729, 1.006, 3.4),
    ("Gemini 3 Flash", 0.944, 65.9, 57.9, 0.731, 1.060, 3.9),
    ("Claude Opus 4.5", 0.940, 65.6, 56.2, 0.724, 1.027, 5.5),
    ("DeepSeek v3.2", 0.939, 64.1, 51.3, 0.718, 1.068, 6.7),
    ("Kimi K2.5", 0.934, 61.2, 47.5, 0.707, 1.068, 7.9),
    ("GPT-5.2", 0.933, 59.1, 42.5, 0.709, 1.117, 7.5),
    ("GLM-4.7", 0.920, 57.1, 43.7, 0.703, 1.050, 15.0),
    ("Qwen3 235B", 0.918, 55.7, 40.6, 0.706, 1.052, 19.1),
    ("Grok 4.1 Fast", 0.915, 54.8, 40.1, 0.696, 1.043, 18.1),
    ("LLaMA 3.3 70B", 0.888, 48.1, 34.4, 0.681, 1.007, 40.3),
];

/// Per-dimension ranks in the order sim, chrF++, BLEU, external, length,
/// outliers, then the expected mean rank.
pub const EXPECTED_RANKS: [(&str, [usize; 6], f64); 10] = [
    ("Gemini 3 Pro", [1, 1, 1, 2, 1, 1], 1.2),
    ("Gemini 3 Flash", [2, 2, 2, 1, 7, 2], 2.7),
    ("Claude Opus 4.5", [3, 3, 3, 3, 3, 3], 3.0),
    ("DeepSeek v3.2", [4, 4, 4, 4, 8, 4], 4.7),
    ("Kimi K2.5", [5, 5, 5, 6, 9, 6], 6.0),
    ("GPT-5.2", [6, 6, 7, 5, 10, 5], 6.5),
    ("GLM-4.7", [7, 7, 6, 8, 5, 7], 6.7),
    ("Qwen3 235B", [8, 8, 8, 7, 6, 9], 7.7),
    ("Grok 4.1 Fast", [9, 9, 9, 9, 4, 8], 8.0),
    ("LLaMA 3.3 70B", [10, 10, 10, 10, 2, 10], 8.7),
];

// ---------------------------------------------------------------------------
// The synthetic smoke corpus, aligned, verified and curated in memory.

pub struct SmokeBench {
    pub corpus: AlignedCorpus,
    pub bench: multiref::bench::Benchmark,
    pub vectors: multiref::metrics::embedding::VectorStore,
}

pub fn smoke_bench() -> SmokeBench {
    use multiref::aligner::{align_translator, AlignerConfig};
    use multiref::client::{LookupClient, RetryPolicy};

    let f = multiref::synthetic::smoke_fixture(20, 10, 16);
    let mut corpus = f.corpus.clone();
    let config = AlignerConfig { retry: RetryPolicy::immediate(1), ..Default::default() };
    for t in multiref::synthetic::SMOKE_ALIGNED {
        let client = LookupClient::new(f.alignment[t].iter().map(|(k, v)| (k.clone(), Some(v.clone()))).collect());
        corpus = align_translator(&corpus, &t.into(), &f.documents, &client, &config).unwrap().corpus;
    }
    let verified =
        multiref::verifier::verify_corpus(&corpus, &f.documents, &f.documents, &Default::default()).unwrap();
    let (corpus, _) = multiref::curation::curate(&corpus, &verified.records, &Default::default()).unwrap();
    let bench = multiref::bench::Benchmark::from_corpus(&corpus, &f.vectors).unwrap();
    SmokeBench { corpus, bench, vectors: f.vectors }
}

/// A run whose output for every passage is one translator's reference.
pub fn reference_run(system: &str, corpus: &AlignedCorpus, translator: &str) -> multiref::bench::SystemRun {
    use multiref::client::{LookupClient, RetryPolicy};

    let t = translator.into();
    let table = corpus.passages.iter().map(|p| (p.id.to_string(), Some(p.text_of(&t)))).collect();
    let sources: Vec<(PassageId, String)> = corpus.passages.iter().map(|p| (p.id.clone(), p.source_text())).collect();
    let config = multiref::bench::RunnerConfig { retry: RetryPolicy::immediate(1), ..Default::default() };
    multiref::bench::run_system(system, system, &sources, &LookupClient::new(table), &config, None).unwrap()
}
