//! Matches four predictions against three ground-truth squares and prints
//! the labels, the PR points and AP at IoU 0.50.

use ihcq::eval::{average_precision, match_instances, pr_curve};
use ihcq::fixtures::{Fixture, FixtureKind};
use ihcq::CellClass;

fn main() -> ihcq::Result<()> {
    let fx = Fixture::generate(FixtureKind::Fig5, 0);
    let preds = fx.predictions.as_ref().expect("fig5 ships predictions").predictions()?;
    let gts = fx.ground_truth.ground_truth()?;

    let m = match_instances(&preds, &gts, CellClass::Immunopositive, 0.5)?;
    for e in &m.entries {
        let iou = e.iou.map_or("-".to_string(), |v| format!("{v:.2}"));
        println!("{} conf {:.2} -> {:?} {:?} (IoU {iou})", e.pred_id, e.confidence, e.label, e.gt_id);
    }
    println!("missed ground truth: {:?}", m.unmatched_gt);

    let curve = pr_curve(&m)?;
    for p in &curve.points {
        println!("P {:.2}  R {:.2}", p.precision, p.recall);
    }
    println!("AP@0.50 = {:.2}", average_precision(&curve).unwrap_or(0.0));
    Ok(())
}
