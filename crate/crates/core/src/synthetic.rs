//! Seeded synthetic benchmark inputs for smoke runs and demos.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{parse_segment_id, save_corpus, AlignedCorpus, CorpusError, DocumentStore, Segment, Translator, TranslatorId};
use crate::metrics::embedding::VectorStore;
use crate::metrics::EmbeddingVector;

pub const SMOKE_ANCHOR: &str = "alder";
pub const SMOKE_ALIGNED: [&str; 2] = ["birch", "cedar"];
pub const SMOKE_SYSTEM: &str = "echo";

const SYLLABLES: [&str; 24] = [
    "ka", "ri", "to", "mel", "an", "su", "vor", "li", "da", "ne", "pa", "sho", "tam", "ir", "bel", "go", "ru", "fen",
    "va", "lo", "ki", "dor", "em", "za",
];

#[derive(Debug, Clone)]
pub struct SmokeFixture {
    /// Anchor-segmented corpus with the aligned translators not yet added.
    pub corpus: AlignedCorpus,
    /// Continuous documents of the aligned translators.
    pub documents: DocumentStore,
    /// Per translator, segment id to the text the aligner should extract.
    pub alignment: BTreeMap<String, BTreeMap<String, String>>,
    /// Vectors for every passage-level reference text.
    pub vectors: VectorStore,
}

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..=3);
    (0..n).map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())]).collect()
}

fn sentence(rng: &mut ChaCha8Rng, words: usize) -> String {
    let mut s: Vec<String> = (0..words).map(|_| word(rng)).collect();
    let mut first = s[0].chars();
    s[0] = first.next().unwrap().to_uppercase().chain(first).collect();
    s.join(" ") + "."
}

fn unit_noise(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// `passages` passages of three segments each, spread over three documents.
pub fn smoke_fixture(seed: u64, passages: usize, dim: usize) -> SmokeFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::new();
    let mut alignment: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut doc_parts: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    let mut passage_texts: Vec<BTreeMap<String, Vec<String>>> = Vec::new();
    for p in 0..passages {
        let doc = format!("sn{}", p % 3 + 1);
        let first = p / 3 + 1;
        let mut texts: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for s in 1..=3 {
            let id = format!("{doc}:{first}.{s}");
            let source = sentence(&mut rng, 10).to_lowercase();
            let anchor_text = sentence(&mut rng, 12);
            let seg = Segment::new(parse_segment_id(&id).expect("valid id"), source).with(SMOKE_ANCHOR, Some(&anchor_text));
            texts.entry(SMOKE_ANCHOR.into()).or_default().push(anchor_text);
            for t in SMOKE_ALIGNED {
                let text = sentence(&mut rng, 12);
                alignment.entry(t.into()).or_default().insert(id.clone(), text.clone());
                doc_parts.entry((t.into(), doc.clone())).or_default().push(text.clone());
                texts.entry(t.into()).or_default().push(text);
            }
            segments.push(seg);
        }
        passage_texts.push(texts);
    }
    let corpus = AlignedCorpus::new(vec![Translator::anchor(SMOKE_ANCHOR)], segments, BTreeMap::new())
        .expect("fixture corpus is valid");
    let mut documents = DocumentStore::new();
    for ((t, doc), parts) in doc_parts {
        let paragraphs: Vec<String> = parts.chunks(3).map(|c| c.join(" ")).collect();
        documents.insert(&TranslatorId::new(t), &doc, paragraphs.join("\n\n") + "\n");
    }
    let mut vectors = VectorStore::new();
    for texts in passage_texts {
        let base = unit_noise(&mut rng, dim);
        for segs in texts.values() {
            let noise = unit_noise(&mut rng, dim);
            let v: Vec<f64> = base.iter().zip(&noise).map(|(b, n)| b + 0.2 * n).collect();
            vectors
                .insert_text(&segs.join(" "), EmbeddingVector::new(v).expect("finite vector"))
                .expect("consistent dims");
        }
    }
    SmokeFixture { corpus, documents, alignment, vectors }
}

pub const SMOKE_CONFIG: &str = r#"[align]
provider = "lookup"
lookup = "alignment.json"
batch_size = 4

[align.retry]
max_attempts = 1
initial_backoff_ms = 0
max_backoff_ms = 0

[embeddings]
provider = "file"
path = "vectors.tsv"

[systems.echo]
provider = "reference"
translator = "alder"
"#;

/// Writes the fixture as the file set the command-line tool consumes.
pub fn write_smoke_fixture(dir: &Path, fixture: &SmokeFixture) -> Result<(), CorpusError> {
    let io = |e| CorpusError::io(dir, e);
    std::fs::create_dir_all(dir).map_err(io)?;
    save_corpus(&fixture.corpus, &dir.join("corpus.jsonl"))?;
    fixture.documents.save_dir(&dir.join("docs"))?;
    let alignment = serde_json::to_string_pretty(&fixture.alignment).expect("table serializes") + "\n";
    std::fs::write(dir.join("alignment.json"), alignment).map_err(io)?;
    fixture
        .vectors
        .save(&dir.join("vectors.tsv"))
        .map_err(|e| CorpusError::Invalid(e.to_string()))?;
    std::fs::write(dir.join("multiref.toml"), SMOKE_CONFIG).map_err(io)
}
