//! Ingests an image into a store and reads tiles and regions back.

use ihcq::store::{SlideMeta, Store};
use ihcq::{Biomarker, PatchRegion};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = Store::open(dir.path())?;
    let img = image::RgbImage::from_fn(1000, 800, |x, y| image::Rgb([(x / 4) as u8, (y / 4) as u8, 128]));
    let (record, pyramid) = store.ingest_rgb(
        &img,
        &SlideMeta { id: "demo".into(), biomarker: Biomarker::Her2, resolution: 0.25 },
    )?;
    println!("{} {}x{}: {}", record.id, record.width, record.height, pyramid.summary());
    for level in &pyramid.levels {
        println!("  level {}: {}x{} px, {}x{} tiles", level.level, level.width, level.height, level.cols, level.rows);
    }

    let tile = store.get_tile("demo", 0, 3, 3)?;
    println!("tile 0/3_3: {} bytes ({})", tile.bytes.len(), tile.format.content_type());

    let region = store.read_region(&PatchRegion::new("demo", 700, 500).with_size(300, 300))?;
    println!("region matches source: {}", region == image::imageops::crop_imm(&img, 700, 500, 300, 300).to_image());
    Ok(())
}
