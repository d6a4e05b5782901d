//! Segments, passages, translators and the aligned corpus container.
//!
//! A segment is the smallest aligned unit, addressed by a hierarchical id such
//! as `mn2:1.3`. Segments sharing the document and first path element form a
//! passage (`mn2:1`), which is the unit of filtering, translation and scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

/// Format tag written into the corpus header line.
pub const CORPUS_FORMAT: &str = "multiref-corpus/1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed segment id {raw:?}: {reason}")]
    MalformedId { raw: String, reason: &'static str },
    #[error("duplicate segment id {0}")]
    DuplicateSegmentId(SegmentId),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid corpus: {0}")]
    Invalid(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Hierarchical segment identifier `<doc>:<int>(.<int>)*`.
///
/// Ordering is by document name (byte-wise) and then by path, compared
/// numerically element by element.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentId {
    doc: String,
    path: Vec<u32>,
}

impl SegmentId {
    pub fn doc(&self) -> &str {
        &self.doc
    }

    pub fn path(&self) -> &[u32] {
        &self.path
    }

    pub fn raw(&self) -> String {
        self.to_string()
    }

    pub fn passage_id(&self) -> PassageId {
        PassageId::from_parts(&self.doc, self.path[0])
    }
}

/// Parses a raw segment id. Path elements must be canonical decimal integers
/// (no sign, no leading zeros) so that re-serialization reproduces the input.
pub fn parse_segment_id(raw: &str) -> Result<SegmentId, CorpusError> {
    let malformed = |reason| CorpusError::MalformedId {
        raw: raw.to_string(),
        reason,
    };
    if raw.is_empty() {
        return Err(malformed("empty id"));
    }
    let (doc, rest) = raw.split_once(':').ok_or_else(|| malformed("missing ':'"))?;
    if doc.is_empty() {
        return Err(malformed("empty document name"));
    }
    if doc.chars().any(char::is_whitespace) {
        return Err(malformed("whitespace in document name"));
    }
    let mut path = Vec::new();
    for part in rest.split('.') {
        if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed("non-numeric path element"));
        }
        if part.len() > 1 && part.starts_with('0') {
            return Err(malformed("leading zero in path element"));
        }
        let value = part
            .parse::<u32>()
            .map_err(|_| malformed("path element out of range"))?;
        path.push(value);
    }
    Ok(SegmentId {
        doc: doc.to_string(),
        path,
    })
}

impl FromStr for SegmentId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_segment_id(s)
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.doc)?;
        for (i, p) in self.path.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

impl Serialize for SegmentId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SegmentId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        parse_segment_id(&raw).map_err(serde::de::Error::custom)
    }
}

/// Passage identifier: document plus first path element, e.g. `mn2:1`.
///
/// Ordered byte-wise on the raw string, so `mn10:1` sorts before `mn2:1`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PassageId(String);

impl PassageId {
    pub fn from_parts(doc: &str, first: u32) -> Self {
        PassageId(format!("{doc}:{first}"))
    }

    /// Parses `<doc>:<int>`.
    pub fn parse(raw: &str) -> Result<Self, CorpusError> {
        let id = parse_segment_id(raw)?;
        if id.path.len() != 1 {
            return Err(CorpusError::MalformedId {
                raw: raw.to_string(),
                reason: "passage id must have exactly one path element",
            });
        }
        Ok(id.passage_id())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn doc(&self) -> &str {
        self.0.split_once(':').map(|(d, _)| d).unwrap_or(&self.0)
    }
}

impl fmt::Display for PassageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TranslatorId(String);

impl TranslatorId {
    pub fn new(name: impl Into<String>) -> Self {
        TranslatorId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TranslatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TranslatorId {
    fn from(s: &str) -> Self {
        TranslatorId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TranslatorRole {
    /// Pre-segmented translation that defines segment boundaries.
    SegmentationAnchor,
    /// Continuous prose extracted per segment by the aligner.
    Aligned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Translator {
    pub name: TranslatorId,
    pub role: TranslatorRole,
}

impl Translator {
    pub fn anchor(name: &str) -> Self {
        Translator {
            name: name.into(),
            role: TranslatorRole::SegmentationAnchor,
        }
    }

    pub fn aligned(name: &str) -> Self {
        Translator {
            name: name.into(),
            role: TranslatorRole::Aligned,
        }
    }
}

/// One segment with its source text and per-translator translations.
///
/// A translator missing from `translations` has not been aligned yet; a
/// present `None` is an alignment null. Empty anchor text marks structural
/// segments and is distinct from null.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub id: SegmentId,
    pub source: String,
    pub translations: BTreeMap<TranslatorId, Option<String>>,
}

impl Segment {
    pub fn new(id: SegmentId, source: impl Into<String>) -> Self {
        Segment {
            id,
            source: source.into(),
            translations: BTreeMap::new(),
        }
    }

    pub fn with(mut self, translator: &str, text: Option<&str>) -> Self {
        self.translations
            .insert(translator.into(), text.map(str::to_string));
        self
    }

    pub fn translation(&self, translator: &TranslatorId) -> Option<&str> {
        self.translations.get(translator).and_then(|t| t.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub id: PassageId,
    pub segments: Vec<Segment>,
}

impl Passage {
    /// Segment texts of one translator joined with single spaces. Null and
    /// empty segments contribute nothing.
    pub fn text_of(&self, translator: &TranslatorId) -> String {
        join_texts(self.segments.iter().map(|s| s.translation(translator)))
    }

    pub fn source_text(&self) -> String {
        join_texts(self.segments.iter().map(|s| Some(s.source.as_str())))
    }

    /// True when every segment has a non-null entry for `translator`.
    pub fn is_complete_for(&self, translator: &TranslatorId) -> bool {
        self.segments
            .iter()
            .all(|s| matches!(s.translations.get(translator), Some(Some(_))))
    }
}

fn join_texts<'a>(parts: impl Iterator<Item = Option<&'a str>>) -> String {
    let mut out = String::new();
    for part in parts.flatten() {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(part);
    }
    out
}

/// Approximate token count: maximal runs of non-whitespace characters.
pub fn approx_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Partitions segments into passages by (doc, first path element).
///
/// Passages come back in byte-wise passage-id order and segments within a
/// passage in segment-id order.
pub fn group_segments_into_passages(segments: Vec<Segment>) -> Result<Vec<Passage>, CorpusError> {
    let mut seen = BTreeSet::new();
    let mut groups: BTreeMap<PassageId, Vec<Segment>> = BTreeMap::new();
    for segment in segments {
        if !seen.insert(segment.id.clone()) {
            return Err(CorpusError::DuplicateSegmentId(segment.id));
        }
        groups
            .entry(segment.id.passage_id())
            .or_default()
            .push(segment);
    }
    Ok(groups
        .into_iter()
        .map(|(id, mut segments)| {
            segments.sort_by(|a, b| a.id.cmp(&b.id));
            Passage { id, segments }
        })
        .collect())
}

/// Source text plus per-translator translations, grouped into passages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedCorpus {
    pub translators: Vec<Translator>,
    pub passages: Vec<Passage>,
    pub provenance: BTreeMap<String, String>,
}

impl AlignedCorpus {
    /// Builds a corpus, checking translator roles and that every segment
    /// carries a non-null anchor entry.
    pub fn new(
        translators: Vec<Translator>,
        segments: Vec<Segment>,
        provenance: BTreeMap<String, String>,
    ) -> Result<Self, CorpusError> {
        validate_translators(&translators)?;
        let known: BTreeSet<&TranslatorId> = translators.iter().map(|t| &t.name).collect();
        let anchor = translators
            .iter()
            .find(|t| t.role == TranslatorRole::SegmentationAnchor)
            .map(|t| t.name.clone())
            .expect("validated");
        for segment in &segments {
            if let Some(unknown) = segment.translations.keys().find(|k| !known.contains(k)) {
                return Err(CorpusError::Invalid(format!(
                    "segment {} has unknown translator {unknown}",
                    segment.id
                )));
            }
            if !matches!(segment.translations.get(&anchor), Some(Some(_))) {
                return Err(CorpusError::Invalid(format!(
                    "segment {} lacks anchor text for {anchor}",
                    segment.id
                )));
            }
        }
        Ok(AlignedCorpus {
            translators,
            passages: group_segments_into_passages(segments)?,
            provenance,
        })
    }

    pub fn anchor(&self) -> &TranslatorId {
        &self
            .translators
            .iter()
            .find(|t| t.role == TranslatorRole::SegmentationAnchor)
            .expect("corpus always has an anchor")
            .name
    }

    pub fn aligned_translators(&self) -> Vec<TranslatorId> {
        self.translators
            .iter()
            .filter(|t| t.role == TranslatorRole::Aligned)
            .map(|t| t.name.clone())
            .collect()
    }

    pub fn translator_names(&self) -> Vec<TranslatorId> {
        self.translators.iter().map(|t| t.name.clone()).collect()
    }

    pub fn role_of(&self, name: &TranslatorId) -> Option<TranslatorRole> {
        self.translators
            .iter()
            .find(|t| &t.name == name)
            .map(|t| t.role)
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.passages.iter().flat_map(|p| p.segments.iter())
    }

    pub fn segment_count(&self) -> usize {
        self.passages.iter().map(|p| p.segments.len()).sum()
    }

    pub fn passage(&self, id: &PassageId) -> Option<&Passage> {
        self.passages
            .binary_search_by(|p| p.id.cmp(id))
            .ok()
            .map(|i| &self.passages[i])
    }

    pub fn segment(&self, id: &SegmentId) -> Option<&Segment> {
        let passage = self.passage(&id.passage_id())?;
        passage
            .segments
            .binary_search_by(|s| s.id.cmp(id))
            .ok()
            .map(|i| &passage.segments[i])
    }

    /// Documents in byte-wise order.
    pub fn docs(&self) -> Vec<String> {
        let docs: BTreeSet<&str> = self.passages.iter().map(|p| p.id.doc()).collect();
        docs.into_iter().map(str::to_string).collect()
    }

    /// Segments of one document in segment-id order.
    pub fn doc_segments(&self, doc: &str) -> Vec<&Segment> {
        let mut segs: Vec<&Segment> = self
            .passages
            .iter()
            .filter(|p| p.id.doc() == doc)
            .flat_map(|p| p.segments.iter())
            .collect();
        segs.sort_by(|a, b| a.id.cmp(&b.id));
        segs
    }

    /// Registers an aligned translator if it is not already known.
    pub fn add_aligned_translator(&mut self, name: &TranslatorId) -> Result<(), CorpusError> {
        match self.role_of(name) {
            Some(TranslatorRole::SegmentationAnchor) => Err(CorpusError::Invalid(format!(
                "{name} is the segmentation anchor"
            ))),
            Some(TranslatorRole::Aligned) => Ok(()),
            None => {
                let mut next = self.translators.clone();
                next.push(Translator {
                    name: name.clone(),
                    role: TranslatorRole::Aligned,
                });
                validate_translators(&next)?;
                self.translators = next;
                Ok(())
            }
        }
    }

    /// Sets one translation entry. Only aligned translators may be written.
    pub fn set_translation(
        &mut self,
        segment: &SegmentId,
        translator: &TranslatorId,
        text: Option<String>,
    ) -> Result<(), CorpusError> {
        if self.role_of(translator) != Some(TranslatorRole::Aligned) {
            return Err(CorpusError::Invalid(format!(
                "{translator} is not an aligned translator"
            )));
        }
        let pid = segment.passage_id();
        let passage = self
            .passages
            .binary_search_by(|p| p.id.cmp(&pid))
            .ok()
            .map(|i| &mut self.passages[i])
            .ok_or_else(|| CorpusError::Invalid(format!("unknown segment {segment}")))?;
        let seg = passage
            .segments
            .binary_search_by(|s| s.id.cmp(segment))
            .ok()
            .map(|i| &mut passage.segments[i])
            .ok_or_else(|| CorpusError::Invalid(format!("unknown segment {segment}")))?;
        seg.translations.insert(translator.clone(), text);
        Ok(())
    }

    /// Keeps only the listed passages.
    pub fn restrict_to(&self, keep: &BTreeSet<PassageId>) -> AlignedCorpus {
        AlignedCorpus {
            translators: self.translators.clone(),
            passages: self
                .passages
                .iter()
                .filter(|p| keep.contains(&p.id))
                .cloned()
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Checks that every translator has an entry on every segment, as the
    /// file format requires.
    pub fn check_complete(&self) -> Result<(), CorpusError> {
        for seg in self.segments() {
            for t in &self.translators {
                if !seg.translations.contains_key(&t.name) {
                    return Err(CorpusError::Invalid(format!(
                        "segment {} has no entry for translator {}",
                        seg.id, t.name
                    )));
                }
            }
        }
        Ok(())
    }
}

fn validate_translators(translators: &[Translator]) -> Result<(), CorpusError> {
    let anchors = translators
        .iter()
        .filter(|t| t.role == TranslatorRole::SegmentationAnchor)
        .count();
    if anchors != 1 {
        return Err(CorpusError::Invalid(format!(
            "expected exactly one segmentation anchor, found {anchors}"
        )));
    }
    let mut names = BTreeSet::new();
    for t in translators {
        let name = t.name.as_str();
        if name.is_empty() || name == "id" || name == "source" {
            return Err(CorpusError::Invalid(format!(
                "invalid translator name {name:?}"
            )));
        }
        if !names.insert(name) {
            return Err(CorpusError::Invalid(format!("duplicate translator {name}")));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    translators: Vec<Translator>,
    #[serde(default)]
    provenance: BTreeMap<String, String>,
}

/// Writes the corpus as line-delimited JSON: a header line followed by one
/// record per segment in segment-id order.
pub fn save_corpus(corpus: &AlignedCorpus, path: &Path) -> Result<(), CorpusError> {
    corpus.check_complete()?;
    let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_corpus(corpus, &mut out).map_err(|e| CorpusError::io(path, e))?;
    out.flush().map_err(|e| CorpusError::io(path, e))
}

pub fn write_corpus<W: Write>(corpus: &AlignedCorpus, out: &mut W) -> std::io::Result<()> {
    let header = Header {
        format: CORPUS_FORMAT.to_string(),
        translators: corpus.translators.clone(),
        provenance: corpus.provenance.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    let mut segments: Vec<&Segment> = corpus.segments().collect();
    segments.sort_by(|a, b| a.id.cmp(&b.id));
    for seg in segments {
        let mut record = Map::new();
        record.insert("id".into(), Value::String(seg.id.raw()));
        record.insert("source".into(), Value::String(seg.source.clone()));
        for t in &corpus.translators {
            let value = match seg.translations.get(&t.name) {
                Some(Some(text)) => Value::String(text.clone()),
                _ => Value::Null,
            };
            record.insert(t.name.as_str().to_string(), value);
        }
        writeln!(out, "{}", Value::Object(record))?;
    }
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<AlignedCorpus, CorpusError> {
    let file = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    read_corpus(BufReader::new(file)).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::io(path, source),
        other => other,
    })
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<AlignedCorpus, CorpusError> {
    let mut lines = reader.lines().enumerate();
    let schema = |line: usize, message: String| CorpusError::Schema { line, message };
    let (_, first) = lines
        .next()
        .ok_or_else(|| schema(1, "missing header line".into()))?;
    let first = first.map_err(|e| CorpusError::io(Path::new("<reader>"), e))?;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| schema(1, format!("bad header: {e}")))?;
    if header.format != CORPUS_FORMAT {
        return Err(schema(1, format!("unsupported format {:?}", header.format)));
    }
    validate_translators(&header.translators).map_err(|e| schema(1, e.to_string()))?;

    let mut segments = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| CorpusError::io(Path::new("<reader>"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: Map<String, Value> = match serde_json::from_str(&line) {
            Ok(Value::Object(map)) => map,
            Ok(_) => return Err(schema(lineno, "record is not an object".into())),
            Err(e) => return Err(schema(lineno, format!("invalid json: {e}"))),
        };
        let raw_id = match record.shift_remove("id") {
            Some(Value::String(s)) => s,
            _ => return Err(schema(lineno, "missing string field \"id\"".into())),
        };
        let id = parse_segment_id(&raw_id).map_err(|e| schema(lineno, e.to_string()))?;
        let source = match record.shift_remove("source") {
            Some(Value::String(s)) => s,
            _ => return Err(schema(lineno, format!("segment {id}: missing string field \"source\""))),
        };
        let mut segment = Segment::new(id.clone(), source);
        for t in &header.translators {
            let value = record.shift_remove(t.name.as_str()).ok_or_else(|| {
                schema(lineno, format!("segment {id}: missing translator key {:?}", t.name.as_str()))
            })?;
            let text = match value {
                Value::String(s) => Some(s),
                Value::Null if t.role == TranslatorRole::Aligned => None,
                Value::Null => {
                    return Err(schema(lineno, format!("segment {id}: anchor {} is null", t.name)))
                }
                _ => {
                    return Err(schema(
                        lineno,
                        format!("segment {id}: translator {} must be text or null", t.name),
                    ))
                }
            };
            segment.translations.insert(t.name.clone(), text);
        }
        if let Some(extra) = record.keys().next() {
            return Err(schema(lineno, format!("segment {id}: unknown field {extra:?}")));
        }
        segments.push(segment);
    }
    AlignedCorpus::new(header.translators, segments, header.provenance).map_err(|e| match e {
        CorpusError::DuplicateSegmentId(id) => CorpusError::Schema {
            line: 0,
            message: format!("duplicate segment id {id}"),
        },
        other => other,
    })
}

/// Original full-text documents per translator, keyed by document name.
///
/// On disk: `<root>/<translator>/<doc>.txt`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocumentStore {
    docs: BTreeMap<TranslatorId, BTreeMap<String, String>>,
}

impl DocumentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, translator: &TranslatorId, doc: &str, text: impl Into<String>) {
        self.docs
            .entry(translator.clone())
            .or_default()
            .insert(doc.to_string(), text.into());
    }

    pub fn get(&self, translator: &TranslatorId, doc: &str) -> Option<&str> {
        self.docs.get(translator)?.get(doc).map(String::as_str)
    }

    /// All documents of one translator.
    pub fn translator_docs(&self, translator: &TranslatorId) -> BTreeMap<String, String> {
        self.docs.get(translator).cloned().unwrap_or_default()
    }

    pub fn load_dir(root: &Path) -> Result<Self, CorpusError> {
        let mut store = DocumentStore::new();
        let entries = fs::read_dir(root).map_err(|e| CorpusError::io(root, e))?;
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let translator = TranslatorId::new(dir.file_name().unwrap().to_string_lossy());
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| CorpusError::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "txt"))
                .collect();
            files.sort();
            for file in files {
                let doc = file.file_stem().unwrap().to_string_lossy().to_string();
                let text = fs::read_to_string(&file).map_err(|e| CorpusError::io(&file, e))?;
                store.insert(&translator, &doc, text);
            }
        }
        Ok(store)
    }

    pub fn save_dir(&self, root: &Path) -> Result<(), CorpusError> {
        for (translator, docs) in &self.docs {
            let dir = root.join(translator.as_str());
            fs::create_dir_all(&dir).map_err(|e| CorpusError::io(&dir, e))?;
            for (doc, text) in docs {
                let file = dir.join(format!("{doc}.txt"));
                fs::write(&file, text).map_err(|e| CorpusError::io(&file, e))?;
            }
        }
        Ok(())
    }
}
