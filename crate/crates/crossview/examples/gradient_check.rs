//! Verify the analytic gradients against central finite differences on a
//! toy model, across several seeds.
//!
//!     cargo run --example gradient_check

use crossview::cli::{cmd_gradcheck, GradCheckOptions};

fn main() -> crossview::Result<()> {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let report = cmd_gradcheck(&GradCheckOptions {
            seed,
            ..GradCheckOptions::default()
        })?;
        println!(
            "seed {seed}: max relative error {:.3e} ({}) -> {}",
            report.max_relative_error,
            report.worst_tensor().unwrap_or("<none>"),
            if report.pass { "PASS" } else { "FAIL" }
        );
        worst = worst.max(report.max_relative_error);
    }
    println!("\nworst over all seeds: {worst:.3e} (tolerance 1e-4)");
    Ok(())
}
