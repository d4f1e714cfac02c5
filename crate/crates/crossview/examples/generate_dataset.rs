//! Generate a small synthetic paired-view dataset, write it to disk, read
//! it back, and print a few summary statistics.
//!
//!     cargo run --example generate_dataset

use crossview::heads::Label;
use crossview::relation::View;
use crossview::synth::{generate_dataset, read_dataset, write_dataset, GeneratorConfig};

fn main() -> crossview::Result<()> {
    let cfg = GeneratorConfig {
        seed: 42,
        ..GeneratorConfig::default()
    };
    let samples = generate_dataset(&cfg, 25)?;

    let dir = std::env::temp_dir();
    let path = dir.join("crossview_example_dataset.jsonl");
    write_dataset(&samples, &path)?;
    let reloaded = read_dataset(&path)?;
    assert_eq!(samples, reloaded);
    println!("wrote and reloaded {} cases at {}", reloaded.len(), path.display());

    let mut lesions = 0usize;
    let mut candidates = 0usize;
    let mut positives = 0usize;
    for s in &samples {
        lesions += s.ground_truth(View::View1).len();
        for view in [View::View1, View::View2] {
            candidates += s.candidates(view).len();
            positives += s
                .targets(view)
                .iter()
                .filter(|t| t.label == Label::Positive)
                .count();
        }
    }
    let n = samples.len() as f64;
    println!("mean lesions per case:          {:.2}", lesions as f64 / n);
    println!("mean candidates per view:       {:.2}", candidates as f64 / (2.0 * n));
    println!("mean positive targets per view: {:.2}", positives as f64 / (2.0 * n));
    println!("feature dimension:              {}", samples[0].feature_len());
    Ok(())
}
