//! Train a small model on synthetic paired-view data and evaluate it on a
//! held-out set: precision, recall, F1, false positives per image, and a
//! few FROC operating points.
//!
//!     cargo run --example train_and_evaluate

use crossview::metrics::{evaluate, froc_interpolate, EvalConfig};
use crossview::synth::{generate_dataset, GeneratorConfig};
use crossview::trainer::{train, TrainConfig};

fn main() -> crossview::Result<()> {
    let train_set = generate_dataset(
        &GeneratorConfig {
            seed: 100,
            ..GeneratorConfig::default()
        },
        60,
    )?;
    let test_set = generate_dataset(
        &GeneratorConfig {
            seed: 200,
            ..GeneratorConfig::default()
        },
        20,
    )?;

    let cfg = TrainConfig::default();
    println!(
        "training: {} cases, {} epochs, lr {}, {} relation blocks per direction",
        train_set.len(),
        cfg.epochs,
        cfg.learning_rate,
        cfg.n_blocks
    );
    let ckpt = train(&train_set, &cfg)?;
    for (epoch, loss) in ckpt.train_loss_history.iter().enumerate() {
        if epoch % 5 == 0 || epoch + 1 == ckpt.train_loss_history.len() {
            println!("  epoch {epoch:2}: mean loss {loss:.4}");
        }
    }

    let report = evaluate(&ckpt.model, &test_set, &EvalConfig::default())?;
    println!("\nheld-out evaluation ({} cases, {} images):", test_set.len(), 2 * test_set.len());
    println!("  precision {:.4}", report.precision);
    println!("  recall    {:.4}", report.recall);
    println!("  f1        {:.4}", report.f1);
    println!("  fpi       {:.4}", report.fpi);
    println!("\nFROC sensitivity at fixed false positives per image:");
    for fpi in [0.5, 1.0, 2.0, 4.0] {
        println!("  {fpi:>4} fpi: tpr {:.4}", froc_interpolate(&report.froc, fpi));
    }
    Ok(())
}
