//! Benchmark runs with wall-clock timing.

use std::time::Instant;

use cfsim_core::bench::{run_rounds, BenchCase, BenchError, BenchRow};
use cfsim_core::SamplerConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TimedRow {
    pub row: BenchRow,
    pub seconds_per_round: f64,
}

/// All rounds of `case` at sample size `n`, timed.
pub fn run_timed(case: &BenchCase, n: usize, cfg: &SamplerConfig) -> Result<TimedRow, BenchError> {
    let start = Instant::now();
    let row = run_rounds(case, n, cfg)?;
    let seconds_per_round = start.elapsed().as_secs_f64() / case.rounds as f64;
    Ok(TimedRow { row, seconds_per_round })
}
