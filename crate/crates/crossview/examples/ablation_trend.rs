//! Sweep the relation-block count N and show that cross-view message
//! passing improves detection over the N=0 (single-view) baseline.
//!
//!     cargo run --example ablation_trend
//!
//! This is a scaled-down sweep so it finishes quickly; the `ablate` CLI
//! subcommand runs the same procedure on full-size datasets.

use crossview::cli::ablate;
use crossview::synth::{generate_dataset, GeneratorConfig};
use crossview::trainer::TrainConfig;

fn main() -> crossview::Result<()> {
    let train_set = generate_dataset(
        &GeneratorConfig {
            seed: 11,
            ..GeneratorConfig::default()
        },
        80,
    )?;
    let test_set = generate_dataset(
        &GeneratorConfig {
            seed: 1213,
            ..GeneratorConfig::default()
        },
        30,
    )?;

    let summary = ablate(&train_set, &test_set, &TrainConfig::default(), &[0, 1, 3], &[0, 1])?;
    println!("n_blocks  precision  recall    f1        fpi   (means over 2 seeds)");
    for m in &summary.means {
        println!(
            "{:<8}  {:<9.4}  {:<8.4}  {:<8.4}  {:.4}",
            m.n_blocks, m.precision, m.recall, m.f1, m.fpi
        );
    }
    let f1_0 = summary.means.iter().find(|m| m.n_blocks == 0).unwrap().f1;
    let f1_best = summary.means.iter().map(|m| m.f1).fold(0.0, f64::max);
    println!("\nbest f1 {:.4} vs single-view baseline {:.4}", f1_best, f1_0);
    Ok(())
}
