//! Re-records the replay fixture's cassette with the simulated backend.
//!
//! Every topology is run once in record mode so any of them can be replayed
//! offline. Frames and the dataset are checked in and left untouched.
//!
//! cargo run -p vma --example regen_fixture

use std::path::Path;

use vma::config::RunConfig;
use vma::runner::{run_benchmark, BackendMode};
use vma_core::topology::TopologyKind;

fn main() -> anyhow::Result<()> {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/replay");
    let base = RunConfig::load(&fixture.join("run.toml"))?;
    let cassette = base.backend.cassette.clone().expect("fixture names a cassette");
    if cassette.exists() {
        std::fs::remove_file(&cassette)?;
    }
    let scratch = tempfile::tempdir()?;
    for topology in TopologyKind::ALL {
        let mut config = base.clone();
        config.topology = topology;
        config.output_dir = scratch.path().join(topology.as_str());
        let result = run_benchmark(&config, BackendMode::Record)?;
        println!("{topology}: {} questions, {} errors", result.questions, result.errors);
    }
    for topology in TopologyKind::ALL {
        let mut config = base.clone();
        config.topology = topology;
        config.output_dir = scratch.path().join(format!("{}-replay", topology.as_str()));
        let result = run_benchmark(&config, BackendMode::Replay)?;
        anyhow::ensure!(result.errors == 0, "{topology} does not replay cleanly");
    }
    println!("wrote {}", cassette.display());
    Ok(())
}
