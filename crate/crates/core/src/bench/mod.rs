//! Running candidate systems over the benchmark and scoring them.

pub mod evaluate;
pub mod rank;
pub mod report;
pub mod runner;

pub use evaluate::{
    closest_translator_distribution, evaluate_system, inter_translator, BenchPassage, Benchmark, EvalConfig, EvalError,
    InterTranslator, PassageScores, SystemEvaluation, SystemRow,
};
pub use rank::{rank_systems, Dimension, RankError, RankInput, RankedSystem};
pub use report::{emit_reports, ReportBundle};
pub use runner::{build_translation_batches, run_system, RunError, RunnerConfig, SystemRun, TranslationBatch};
