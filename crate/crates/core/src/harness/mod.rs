//! Benchmark harness: corruption injectors, synthetic data, the ordering
//! benchmark and the accuracy-impact diagnostic.

mod bench;
mod inject;
pub mod synth;

pub use bench::{
    bench_orderings, impact, impact_on_split, prepare, resolution_quality, sanitization_quality,
    BenchRow, BenchSetup, ComparisonTable, Quality,
};
pub use inject::{
    inject_duplicates, inject_poison, DuplicateSpec, GroundTruth, PoisonLabel, PoisonSpec,
    ZipfCopies,
};
