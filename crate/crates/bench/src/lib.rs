//! Fixtures shared by the benchmarks in benches/.

use cellforest::{inject_errors, simulate, ErrorConfig, Movie, SimConfig, Simulation};

/// Default scenario, shortened to `frames`.
pub fn colony(frames: usize, seed: u64) -> Simulation {
    let cfg = SimConfig {
        frames,
        seed,
        ..SimConfig::default()
    };
    simulate(&cfg).expect("default scenario simulates")
}

/// `sim` with the usual mix of transient, persistent and merge errors.
pub fn corrupted(sim: &Simulation, seed: u64) -> Movie {
    let cfg = ErrorConfig {
        p_over_transient: 0.03,
        p_over_persistent: 0.04,
        persist_len: 4,
        p_under: 0.02,
        seed,
    };
    inject_errors(&sim.movie, &sim.truth, &cfg).expect("errors inject").0
}
