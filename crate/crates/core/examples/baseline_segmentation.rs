//! Runs the colour-deconvolution baseline on a synthetic patch and checks
//! it against the patch's ground truth.

use ihcq::baseline::{segment_nuclei, BaselineParams};
use ihcq::eval::map_at;
use ihcq::fixtures::{Fixture, FixtureKind};

fn main() -> ihcq::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let fx = Fixture::generate(FixtureKind::Disks, seed);
    let preds = segment_nuclei(&fx.image, &BaselineParams::default());
    for p in &preds {
        println!("{} {} conf {:.3} area {}", p.id, p.class, p.confidence, p.mask.area());
    }
    let gts = fx.ground_truth.ground_truth()?;
    let m = map_at(&preds, &gts, 0.5)?;
    println!("{} predictions, {} ground truth, mAP@0.50 {:.3}", preds.len(), gts.len(), m.map);
    Ok(())
}
