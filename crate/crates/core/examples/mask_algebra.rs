//! Rasterizes two polygons, stores them run-length encoded and computes
//! overlap without decoding.

use ihcq::maskops::{decode, intersection_area, iou, rasterize, union_area, Polygon};

fn main() -> Result<(), ihcq::maskops::MaskError> {
    let a = rasterize(&Polygon::circle(40.0, 40.0, 20.0, 64)?, 100, 80)?;
    let b = rasterize(&Polygon::rect(35.0, 30.0, 40.0, 25.0)?, 100, 80)?;

    println!("a: area {} in {} runs", a.area(), a.runs().len());
    println!("b: area {} in {} runs", b.area(), b.runs().len());
    println!("intersection {}", intersection_area(&a, &b)?);
    println!("union        {}", union_area(&a, &b)?);
    println!("IoU          {:.4}", iou(&a, &b)?);

    let (w, h) = a.dims();
    let bitmap = decode(a.runs(), w, h)?;
    println!("decoded {}x{} bitmap, {} pixels set", w, h, bitmap.bits.iter().filter(|&&p| p).count());
    Ok(())
}
