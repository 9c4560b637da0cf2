//! Pre-segment, correct, save, and score: one pass of the annotation
//! workflow against a local store, including a rejected stale save.

use ihcq::baseline::{segment_nuclei, BaselineParams};
use ihcq::fixtures::{Fixture, FixtureKind};
use ihcq::pipeline::{presegment, score_document};
use ihcq::store::{Provenance, SlideMeta, Store, StoreError};
use ihcq::{Biomarker, CellClass, PatchRegion};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = Store::open(dir.path())?;
    let fx = Fixture::generate(FixtureKind::Disks, 5);
    store.ingest_rgb(&fx.image, &SlideMeta { id: "ki".into(), biomarker: Biomarker::Ki67, resolution: 0.25 })?;

    let patch = PatchRegion::new("ki", 0, 0).with_size(350, 350);
    let pixels = store.read_region(&patch)?;
    let mut doc = presegment(&patch, &segment_nuclei(&pixels, &BaselineParams::default()), "baseline");
    println!("pre-segmented {} cells", doc.annotations.len());

    // A reviewer flips one label.
    if let Some(a) = doc.annotations.first_mut() {
        a.class = match a.class {
            CellClass::Immunopositive => CellClass::Immunonegative,
            _ => CellClass::Immunopositive,
        };
        a.provenance = Provenance::Corrected;
        a.author = "reviewer".into();
    }
    let v1 = store.save_document(&doc)?;
    println!("saved version {v1}");

    match store.save_document(&doc) {
        Err(StoreError::Conflict { base, latest, .. }) => println!("stale save rejected: base {base}, latest {latest}"),
        other => println!("unexpected: {other:?}"),
    }

    let saved = store.load_document(&patch.key(), None)?;
    println!("{}", score_document(&saved, Some(Biomarker::Ki67.stain_kind()), None)?.summary());
    Ok(())
}
