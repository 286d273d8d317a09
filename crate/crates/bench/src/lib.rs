//! Criterion benchmarks for the solver pipeline live under `benches/`.

pub use aoi_lq_core::GameSpec;

/// The scalar benchmark game used by every benchmark.
pub fn benchmark_game() -> GameSpec {
    GameSpec::scalar_benchmark()
}
