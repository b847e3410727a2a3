//! Pilot run behind the committed training-smoke threshold.
//!
//! Trains `configs/eight_gaussians.cfg` at three seeds and writes
//! `configs/pilot_thresholds.cfg` with the threshold set to 1.5x the worst
//! final NFE=1 energy distance. The margin absorbs floating-point drift
//! across CPUs; same-machine reruns are bit-identical.
//!
//!     cargo run --release -p gctm --example pilot

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use gctm::couplings::{Sampler, StandardGaussian};
use gctm::harness::config::RunConfig;
use gctm::trainer::{self, Marginals};

const SEEDS: [u64; 3] = [1, 2, 3];
const MARGIN: f64 = 1.5;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let configs = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let base = RunConfig::from_file(&configs.join("eight_gaussians.cfg"))?;
    let data = base.load_dataset()?;
    let noise = StandardGaussian(data.dim());
    let marginals = Marginals {
        x0: &data,
        x1: &noise,
    };
    let mut report = String::new();
    let mut worst: f64 = 0.0;
    for seed in SEEDS {
        let mut cfg = base.train.clone();
        cfg.seed = seed;
        let start = Instant::now();
        let out = trainer::train_loop(&cfg, &marginals, &mut ())?;
        let ed = out.log.last().ok_or("no evaluation row")?.metric_value;
        println!(
            "seed {seed}: energy distance {ed:.5} in {:.0?}",
            start.elapsed()
        );
        writeln!(report, "# seed {seed}: {ed}")?;
        worst = worst.max(ed);
    }
    let text = format!(
        "# Written by `cargo run --release -p gctm --example pilot` from eight_gaussians.cfg.\n\
         # Final NFE=1 energy distance per seed; threshold = {MARGIN} x worst.\n\
         {report}eight_gaussians_energy_distance = {}\n",
        MARGIN * worst
    );
    std::fs::write(configs.join("pilot_thresholds.cfg"), text)?;
    Ok(())
}
