//! Scoring: embedding geometry, lexical overlap, external quality scores.

pub mod embedding;
pub mod external;
pub mod geometry;
pub mod lexical;

use thiserror::Error;

pub use geometry::{
    cosine, passage_embedding_scores, reference_geometry, EmbeddingScores, EmbeddingVector, OutlierThreshold,
    ReferenceGeometry,
};
pub use lexical::{bleu_corpus, chrfpp_passage, length_ratio, BleuStats, ChrfStats};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("embedding has non-finite entries")]
    NonFinite,
    #[error("need at least 2 references, got {0}")]
    TooFewReferences(usize),
    #[error("reference centroid is the zero vector")]
    DegenerateCentroid,
    #[error("no hypotheses to score")]
    EmptyHypothesisSet,
    #[error("no references given")]
    EmptyReference,
    #[error("mean reference length is zero")]
    ZeroReferenceLength,
    #[error("outlier threshold must exceed 1.0, got {0}")]
    InvalidThreshold(f64),
    #[error("no embedding for text {0}")]
    MissingEmbedding(String),
    #[error("vector store line {line}: {message}")]
    VectorStore { line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("provider error: {0}")]
    Provider(String),
}
