use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::PngEncoder;
use image::{ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};

pub const TILE_SIZE: u32 = 256;
/// Quality for lossy (level > 0) tiles.
pub const JPEG_QUALITY: u8 = 90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub level: u32,
    pub width: u32,
    pub height: u32,
    pub cols: u32,
    pub rows: u32,
}

/// Tiling of a slide: level 0 is full resolution, each further level halves
/// both dimensions (rounding up) until the longer side fits in one tile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePyramid {
    pub tile_size: u32,
    pub levels: Vec<LevelInfo>,
}

impl TilePyramid {
    pub fn plan(width: u32, height: u32) -> Self {
        let mut levels = Vec::new();
        let (mut w, mut h) = (width, height);
        loop {
            levels.push(LevelInfo {
                level: levels.len() as u32,
                width: w,
                height: h,
                cols: w.div_ceil(TILE_SIZE),
                rows: h.div_ceil(TILE_SIZE),
            });
            if w.max(h) <= TILE_SIZE {
                break;
            }
            w = w.div_ceil(2);
            h = h.div_ceil(2);
        }
        TilePyramid {
            tile_size: TILE_SIZE,
            levels,
        }
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn tile_count(&self) -> u32 {
        self.levels.iter().map(|l| l.cols * l.rows).sum()
    }

    pub fn level(&self, level: u32) -> Option<&LevelInfo> {
        self.levels.get(level as usize)
    }

    /// Pixel rectangle `(x, y, w, h)` of a tile, cropped at the level edge.
    pub fn tile_rect(&self, level: u32, tx: u32, ty: u32) -> Option<(u32, u32, u32, u32)> {
        let l = self.level(level)?;
        if tx >= l.cols || ty >= l.rows {
            return None;
        }
        let (x, y) = (tx * self.tile_size, ty * self.tile_size);
        Some((
            x,
            y,
            self.tile_size.min(l.width - x),
            self.tile_size.min(l.height - y),
        ))
    }

    pub fn summary(&self) -> String {
        format!("{} levels, {} tiles", self.level_count(), self.tile_count())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileFormat {
    Png,
    Jpeg,
}

impl TileFormat {
    pub fn for_level(level: u32) -> Self {
        if level == 0 {
            TileFormat::Png
        } else {
            TileFormat::Jpeg
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            TileFormat::Png => "png",
            TileFormat::Jpeg => "jpg",
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            TileFormat::Png => "image/png",
            TileFormat::Jpeg => "image/jpeg",
        }
    }
}

/// 2x2 box filter; edge pixels average whatever neighbours exist.
pub fn downsample(img: &RgbImage) -> RgbImage {
    let (w, h) = (img.width().div_ceil(2), img.height().div_ceil(2));
    RgbImage::from_fn(w, h, |x, y| {
        let mut sum = [0u32; 3];
        let mut n = 0u32;
        for dy in 0..2 {
            for dx in 0..2 {
                let (sx, sy) = (2 * x + dx, 2 * y + dy);
                if sx < img.width() && sy < img.height() {
                    let p = img.get_pixel(sx, sy).0;
                    for c in 0..3 {
                        sum[c] += u32::from(p[c]);
                    }
                    n += 1;
                }
            }
        }
        image::Rgb(sum.map(|s| ((s + n / 2) / n) as u8))
    })
}

pub fn encode_tile(tile: &RgbImage, format: TileFormat) -> Result<Vec<u8>, image::ImageError> {
    let mut buf = Cursor::new(Vec::new());
    let (w, h) = tile.dimensions();
    match format {
        TileFormat::Png => {
            PngEncoder::new(&mut buf).write_image(tile, w, h, image::ExtendedColorType::Rgb8)?
        }
        TileFormat::Jpeg => JpegEncoder::new_with_quality(&mut buf, JPEG_QUALITY).write_image(
            tile,
            w,
            h,
            image::ExtendedColorType::Rgb8,
        )?,
    }
    Ok(buf.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thousand_by_eight_hundred() {
        let p = TilePyramid::plan(1000, 800);
        let dims: Vec<_> = p.levels.iter().map(|l| (l.width, l.height, l.cols, l.rows)).collect();
        assert_eq!(dims, [(1000, 800, 4, 4), (500, 400, 2, 2), (250, 200, 1, 1)]);
        assert_eq!(p.summary(), "3 levels, 21 tiles");
        assert_eq!(p.tile_rect(0, 3, 0), Some((768, 0, 232, 256)));
        assert_eq!(p.tile_rect(9, 0, 0), None);
        assert_eq!(p.tile_rect(0, 4, 0), None);
    }

    #[test]
    fn small_images() {
        assert_eq!(TilePyramid::plan(256, 256).summary(), "1 levels, 1 tiles");
        assert_eq!(TilePyramid::plan(257, 10).level_count(), 2);
    }

    #[test]
    fn downsample_rounds_up_and_averages() {
        let img = RgbImage::from_fn(3, 1, |x, _| image::Rgb([x as u8 * 10, 0, 255]));
        let d = downsample(&img);
        assert_eq!(d.dimensions(), (2, 1));
        assert_eq!(d.get_pixel(0, 0).0, [5, 0, 255]);
        assert_eq!(d.get_pixel(1, 0).0, [20, 0, 255]);
    }

    proptest! {
        #[test]
        fn level_count_formula(w in 1u32..5000, h in 1u32..5000) {
            let p = TilePyramid::plan(w, h);
            let m = w.max(h);
            // 1 + ceil(log2(m / 256)) for m > 256, else 1; integer form.
            let mut expect = 1;
            while (TILE_SIZE as u64) << (expect - 1) < m as u64 {
                expect += 1;
            }
            prop_assert_eq!(p.level_count(), expect);
            if m > 256 {
                let f = 1 + ((m as f64) / 256.0).log2().ceil() as usize;
                prop_assert_eq!(p.level_count(), f);
            }
            // Tiles of each level cover every pixel exactly once.
            for l in &p.levels {
                let covered: u64 = (0..l.cols)
                    .flat_map(|tx| (0..l.rows).map(move |ty| (tx, ty)))
                    .map(|(tx, ty)| {
                        let (_, _, tw, th) = p.tile_rect(l.level, tx, ty).unwrap();
                        tw as u64 * th as u64
                    })
                    .sum();
                prop_assert_eq!(covered, l.width as u64 * l.height as u64);
            }
        }
    }
}
