//! Run the gated cross-view relation block on a pair of hand-built
//! candidate sets and show how each feature vector changes.
//!
//!     cargo run --example relation_forward

use crossview::numerics::Rng;
use crossview::relation::{
    relation_block_forward, relation_stack_forward, RelationBlockParams, RelationStackParams,
    RoiCandidate, RoiGeometry, View,
};

fn candidate(view: View, x: f64, y: f64, w: f64, h: f64, feature: Vec<f64>) -> RoiCandidate {
    RoiCandidate {
        geometry: RoiGeometry::new(x, y, w, h).unwrap(),
        feature,
        view,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn main() -> crossview::Result<()> {
    let d_f = 4;
    // Two candidates in view 1, three in view 2. The first candidate of each
    // view sits at a matching position, so its geometric gate should open
    // wide for the counterpart and stay mostly shut for the far-away boxes.
    let view1 = vec![
        candidate(View::View1, 300.0, 400.0, 60.0, 50.0, vec![1.0, -0.5, 0.2, 0.8]),
        candidate(View::View1, 700.0, 150.0, 30.0, 35.0, vec![-0.3, 0.9, -1.1, 0.4]),
    ];
    let view2 = vec![
        candidate(View::View2, 310.0, 390.0, 55.0, 52.0, vec![0.9, -0.4, 0.3, 0.7]),
        candidate(View::View2, 100.0, 800.0, 40.0, 45.0, vec![0.1, 0.2, -0.6, -0.9]),
        candidate(View::View2, 500.0, 500.0, 80.0, 20.0, vec![-1.2, 0.5, 0.0, 0.3]),
    ];

    let mut rng = Rng::from_seed(7);
    let params = RelationBlockParams::init(&mut rng, d_f, 3, 8)?;

    println!("single block, view 1 attending over view 2:");
    let updated = relation_block_forward(&view1, &view2, &params)?;
    for (i, (before, after)) in view1.iter().zip(&updated).enumerate() {
        let residual: Vec<f64> = after
            .iter()
            .zip(&before.feature)
            .map(|(a, b)| a - b)
            .collect();
        println!(
            "  target {i}: |feature| {:.4} -> {:.4}, |aggregated message| {:.4}",
            norm(&before.feature),
            norm(after),
            norm(&residual)
        );
    }

    // A stack applies N such blocks per direction, updating both views
    // synchronously from each stage's entry features.
    let stack = RelationStackParams::init(&mut rng, 3, d_f, 3, 8)?;
    let (out1, out2) = relation_stack_forward(&view1, &view2, &stack)?;
    println!("\nafter a 3-block stack:");
    for (i, f) in out1.iter().enumerate() {
        println!("  view 1 candidate {i}: {f:.4?}");
    }
    for (i, f) in out2.iter().enumerate() {
        println!("  view 2 candidate {i}: {f:.4?}");
    }
    Ok(())
}
