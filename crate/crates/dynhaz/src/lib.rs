//! File formats, the simulation benchmark and the `dynhaz` command line on
//! top of `dynhaz-core`.

pub mod benchmark;
pub mod io;
pub mod summary;

pub use benchmark::{run_benchmark, BenchmarkConfig, BenchmarkResults, FactorGrid};
pub use io::{IoError, LoadOptions};
