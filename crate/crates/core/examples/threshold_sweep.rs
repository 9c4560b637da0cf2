//! Sweeps the confidence threshold and reports mAP@0.50 at each value.

use ihcq::eval::{EvalSample, Evaluator};
use ihcq::fixtures::{Fixture, FixtureKind};
use ihcq::scoring::{sweep_threshold, TauGrid};

fn main() -> ihcq::Result<()> {
    let fx = Fixture::generate(FixtureKind::Spurious, 11);
    let sample = EvalSample {
        key: fx.ground_truth.key(),
        predictions: fx.predictions.as_ref().expect("predictions").predictions()?,
        ground_truth: fx.ground_truth.ground_truth()?,
    };
    let evaluator = Evaluator::new(&[sample])?;
    let result = sweep_threshold(&evaluator, &TauGrid::parse("0:1:0.1")?)?;
    for (t, m) in result.grid.iter().zip(&result.map_50) {
        println!("tau {t:.1}  mAP@0.50 {m:.4}");
    }
    println!("best tau {} ({:.4})", result.best_tau, result.best_map);
    Ok(())
}
