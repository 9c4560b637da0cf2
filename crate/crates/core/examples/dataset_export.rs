//! Saves a handful of annotated patches and exports a slide-level
//! train/test split with per-class counts.

use ihcq::fixtures::{Fixture, FixtureKind};
use ihcq::store::{SplitSpec, Store};
use ihcq::PatchRegion;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = Store::open(dir.path())?;
    for seed in 0..6u64 {
        let mut doc = Fixture::generate(FixtureKind::Disks, seed).ground_truth;
        doc.patch = PatchRegion::new(format!("slide{}", seed % 3), 400 * seed as u32, 0).with_size(350, 350);
        store.save_document(&doc)?;
    }
    let split = SplitSpec::TestSlides { slides: ["slide2".to_string()].into() };
    let manifest = store.export_dataset(&split)?;
    print!("{}", manifest.render());
    for e in &manifest.entries {
        println!("{} {:?}", e.key, e.split);
    }
    Ok(())
}
