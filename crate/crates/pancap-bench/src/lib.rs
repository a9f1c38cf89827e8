//! Shared inputs for the benchmarks.

use std::path::{Path, PathBuf};

use pancap::PeriodParams;
use pancap_cli::Scenario;

pub fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn periods(name: &str) -> Vec<PeriodParams> {
    Scenario::load(&scenario_path(name))
        .unwrap_or_else(|e| panic!("{name}: {e}"))
        .periods
}
