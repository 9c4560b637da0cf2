//! Binary mask algebra over row-major run-length encodings.
//!
//! Runs alternate background/foreground and always start with a background
//! run (which may be zero). The canonical form has no other zero runs, so two
//! masks are pixel-equal iff their runs are equal.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("malformed mask: runs sum to {got}, expected {expected}")]
    Malformed { expected: u64, got: u64 },
    #[error("mask dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("IoU undefined for two empty masks")]
    UndefinedIou,
    #[error("polygon rasterizes to an empty mask")]
    EmptyMask,
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon vertex ({0}, {1}) outside patch bounds")]
    VertexOutOfBounds(f64, f64),
    #[error("bitmap has {got} pixels, expected {expected}")]
    BitmapSize { expected: usize, got: usize },
}

/// Dense row-major bitmap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: u32, height: u32) -> Self {
        Bitmap {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MaskError::BitmapSize {
                expected,
                got: bits.len(),
            });
        }
        Ok(Bitmap {
            width,
            height,
            bits,
        })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RleDoc", into = "RleDoc")]
pub struct BinaryMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

/// Wire form: `{"size": [h, w], "runs": [...]}`.
#[derive(Serialize, Deserialize)]
struct RleDoc {
    size: [u32; 2],
    runs: Vec<u32>,
}

impl TryFrom<RleDoc> for BinaryMask {
    type Error = MaskError;

    fn try_from(doc: RleDoc) -> Result<Self, Self::Error> {
        BinaryMask::from_runs(doc.size[1], doc.size[0], doc.runs)
    }
}

impl From<BinaryMask> for RleDoc {
    fn from(m: BinaryMask) -> Self {
        RleDoc {
            size: [m.height, m.width],
            runs: m.runs,
        }
    }
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        let total = width as u64 * height as u64;
        BinaryMask {
            width,
            height,
            runs: if total == 0 { vec![] } else { vec![total as u32] },
        }
    }

    /// Builds a mask from raw runs, normalizing to canonical form.
    pub fn from_runs(width: u32, height: u32, runs: Vec<u32>) -> Result<Self, MaskError> {
        let expected = width as u64 * height as u64;
        let got: u64 = runs.iter().map(|&r| u64::from(r)).sum();
        if got != expected {
            return Err(MaskError::Malformed { expected, got });
        }
        let mut canonical: Vec<u32> = Vec::with_capacity(runs.len());
        let mut fg = false;
        for (i, r) in runs.into_iter().enumerate() {
            let is_fg = i % 2 == 1;
            if r == 0 && i > 0 {
                continue;
            }
            if i > 0 && is_fg == fg {
                *canonical.last_mut().expect("non-empty") += r;
            } else {
                canonical.push(r);
                fg = is_fg;
            }
        }
        if expected == 0 {
            canonical.clear();
        }
        Ok(BinaryMask {
            width,
            height,
            runs: canonical,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    /// Foreground intervals `[start, end)` in flat row-major pixel index.
    pub fn intervals(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.runs.iter().enumerate().filter_map(move |(i, &r)| {
            let start = pos;
            pos += u64::from(r);
            (i % 2 == 1).then_some((start, pos))
        })
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| u64::from(r)).sum()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        let idx = y as u64 * self.width as u64 + x as u64;
        self.intervals().any(|(s, e)| s <= idx && idx < e)
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of the foreground.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let w = self.width as u64;
        let mut bb: Option<(u64, u64, u64, u64)> = None;
        for (s, e) in self.intervals() {
            let (r0, r1) = (s / w, (e - 1) / w);
            let (c0, c1) = if r0 == r1 { (s % w, (e - 1) % w) } else { (0, w - 1) };
            bb = Some(match bb {
                None => (c0, r0, c1, r1),
                Some((a, b, c, d)) => (a.min(c0), b.min(r0), c.max(c1), d.max(r1)),
            });
        }
        bb.map(|(a, b, c, d)| (a as u32, b as u32, c as u32, d as u32))
    }

    pub fn to_bitmap(&self) -> Bitmap {
        decode_unchecked(&self.runs, self.width, self.height)
    }
}

/// Encodes a bitmap as canonical runs.
pub fn encode(bitmap: &Bitmap) -> BinaryMask {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &bit in &bitmap.bits {
        if bit == current {
            len += 1;
        } else {
            runs.push(len);
            current = bit;
            len = 1;
        }
    }
    if !bitmap.bits.is_empty() {
        runs.push(len);
    }
    BinaryMask {
        width: bitmap.width,
        height: bitmap.height,
        runs,
    }
}

/// Decodes raw runs into a bitmap.
pub fn decode(runs: &[u32], width: u32, height: u32) -> Result<Bitmap, MaskError> {
    let expected = width as u64 * height as u64;
    let got: u64 = runs.iter().map(|&r| u64::from(r)).sum();
    if got != expected {
        return Err(MaskError::Malformed { expected, got });
    }
    Ok(decode_unchecked(runs, width, height))
}

fn decode_unchecked(runs: &[u32], width: u32, height: u32) -> Bitmap {
    let mut bits = Vec::with_capacity(width as usize * height as usize);
    for (i, &r) in runs.iter().enumerate() {
        bits.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
    }
    Bitmap {
        width,
        height,
        bits,
    }
}

fn check_dims(a: &BinaryMask, b: &BinaryMask) -> Result<(), MaskError> {
    if a.dims() != b.dims() {
        return Err(MaskError::DimensionMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

pub fn area(m: &BinaryMask) -> u64 {
    m.area()
}

/// Overlap in pixels, computed by merging foreground intervals.
pub fn intersection_area(a: &BinaryMask, b: &BinaryMask) -> Result<u64, MaskError> {
    check_dims(a, b)?;
    Ok(merge_intersection(a, b))
}

fn merge_intersection(a: &BinaryMask, b: &BinaryMask) -> u64 {
    let mut ia = a.intervals().peekable();
    let mut ib = b.intervals().peekable();
    let mut total = 0;
    while let (Some(&(s1, e1)), Some(&(s2, e2))) = (ia.peek(), ib.peek()) {
        let lo = s1.max(s2);
        let hi = e1.min(e2);
        if hi > lo {
            total += hi - lo;
        }
        if e1 <= e2 {
            ia.next();
        } else {
            ib.next();
        }
    }
    total
}

pub fn union_area(a: &BinaryMask, b: &BinaryMask) -> Result<u64, MaskError> {
    let inter = intersection_area(a, b)?;
    Ok(a.area() + b.area() - inter)
}

/// Intersection over union of two masks in the same frame.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MaskError> {
    check_dims(a, b)?;
    let inter = merge_intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Err(MaskError::UndefinedIou);
    }
    Ok(inter as f64 / union as f64)
}

/// Closed polygon in patch-local coordinates; the last vertex connects back
/// to the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

impl TryFrom<Vec<[f64; 2]>> for Polygon {
    type Error = MaskError;

    fn try_from(vertices: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        Polygon::new(vertices)
    }
}

impl From<Polygon> for Vec<[f64; 2]> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self, MaskError> {
        if vertices.len() < 3 {
            return Err(MaskError::TooFewVertices(vertices.len()));
        }
        if let Some(v) = vertices
            .iter()
            .find(|v| !v[0].is_finite() || !v[1].is_finite())
        {
            return Err(MaskError::VertexOutOfBounds(v[0], v[1]));
        }
        Ok(Polygon { vertices })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Checks every vertex lies within `[-0.5, w + 0.5] x [-0.5, h + 0.5]`.
    pub fn check_bounds(&self, width: u32, height: u32) -> Result<(), MaskError> {
        let (w, h) = (f64::from(width), f64::from(height));
        match self
            .vertices
            .iter()
            .find(|v| v[0] < -0.5 || v[1] < -0.5 || v[0] > w + 0.5 || v[1] > h + 0.5)
        {
            Some(v) => Err(MaskError::VertexOutOfBounds(v[0], v[1])),
            None => Ok(()),
        }
    }

    /// Regular polygon approximating a circle.
    pub fn circle(cx: f64, cy: f64, radius: f64, sides: usize) -> Result<Self, MaskError> {
        let vertices = (0..sides)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / sides as f64;
                [cx + radius * t.cos(), cy + radius * t.sin()]
            })
            .collect();
        Polygon::new(vertices)
    }

    pub fn rect(x: f64, y: f64, w: f64, h: f64) -> Result<Self, MaskError> {
        Polygon::new(vec![[x, y], [x + w, y], [x + w, y + h], [x, y + h]])
    }
}

/// Rasterizes with the even-odd rule, sampling each pixel at its center.
pub fn rasterize(poly: &Polygon, width: u32, height: u32) -> Result<BinaryMask, MaskError> {
    poly.check_bounds(width, height)?;
    let verts = poly.vertices();
    let n = verts.len();
    let mut runs: Vec<u32> = Vec::new();
    let mut fg = false;
    let mut len = 0u32;
    let mut push = |bit: bool, count: u32, runs: &mut Vec<u32>| {
        if count == 0 {
            return;
        }
        if bit == fg {
            len += count;
        } else {
            runs.push(len);
            fg = bit;
            len = count;
        }
    };
    let mut crossings: Vec<f64> = Vec::new();
    for row in 0..height {
        let y = f64::from(row) + 0.5;
        crossings.clear();
        let mut j = n - 1;
        for i in 0..n {
            let [xi, yi] = verts[i];
            let [xj, yj] = verts[j];
            if (yi > y) != (yj > y) {
                crossings.push((xj - xi) * (y - yi) / (yj - yi) + xi);
            }
            j = i;
        }
        crossings.sort_by(f64::total_cmp);
        // A center is inside iff an odd number of crossings lie strictly to
        // its right.
        let mut k = 0;
        let mut col = 0u32;
        while col < width {
            let x = f64::from(col) + 0.5;
            while k < crossings.len() && crossings[k] <= x {
                k += 1;
            }
            let inside = (crossings.len() - k) % 2 == 1;
            // Advance to the next column where the state may change.
            let next = if k < crossings.len() {
                let c = crossings[k];
                // first column whose center is >= c
                let first = (c - 0.5).ceil().max(f64::from(col) + 1.0);
                (first.min(f64::from(width))) as u32
            } else {
                width
            };
            push(inside, next - col, &mut runs);
            col = next;
        }
    }
    if width as u64 * height as u64 > 0 {
        runs.push(len);
    }
    let mask = BinaryMask {
        width,
        height,
        runs,
    };
    if mask.area() == 0 {
        return Err(MaskError::EmptyMask);
    }
    Ok(mask)
}

/// Traces the outer boundary of the 4-connected component containing the
/// first foreground pixel (row-major) along pixel edges. Rasterizing the
/// result reproduces that component with its holes filled.
pub fn outline(mask: &BinaryMask) -> Option<Polygon> {
    let bitmap = mask.to_bitmap();
    let (w, h) = (i64::from(mask.width), i64::from(mask.height));
    let fg = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && bitmap.get(x as u32, y as u32);
    let first = bitmap.bits.iter().position(|&b| b)?;
    let (sx, sy) = ((first as i64) % w, (first as i64) / w);

    // Directed boundary edges run clockwise on screen (y down): foreground on
    // the right-hand side of travel. Keyed by start vertex.
    let mut edges: HashMap<(i64, i64), Vec<(i64, i64)>> = HashMap::new();
    for y in 0..h {
        for x in 0..w {
            if !fg(x, y) {
                continue;
            }
            if !fg(x, y - 1) {
                edges.entry((x, y)).or_default().push((x + 1, y));
            }
            if !fg(x + 1, y) {
                edges.entry((x + 1, y)).or_default().push((x + 1, y + 1));
            }
            if !fg(x, y + 1) {
                edges.entry((x + 1, y + 1)).or_default().push((x, y + 1));
            }
            if !fg(x - 1, y) {
                edges.entry((x, y + 1)).or_default().push((x, y));
            }
        }
    }

    let start = (sx, sy);
    let mut path = vec![start];
    let mut prev = start;
    let mut cur = (sx + 1, sy);
    while cur != start {
        let dir = (cur.0 - prev.0, cur.1 - prev.1);
        let outs = edges.get(&cur)?;
        // Prefer turning right (hugs the current pixel at diagonal pinches),
        // then straight, then left.
        let right = (-dir.1, dir.0);
        let left = (dir.1, -dir.0);
        let next = [right, dir, left]
            .iter()
            .map(|d| (cur.0 + d.0, cur.1 + d.1))
            .find(|p| outs.contains(p))?;
        path.push(cur);
        prev = cur;
        cur = next;
    }

    // Drop collinear vertices.
    let n = path.len();
    let vertices: Vec<[f64; 2]> = (0..n)
        .filter(|&i| {
            let a = path[(i + n - 1) % n];
            let b = path[i];
            let c = path[(i + 1) % n];
            (b.0 - a.0) * (c.1 - b.1) != (b.1 - a.1) * (c.0 - b.0)
        })
        .map(|i| [path[i].0 as f64, path[i].1 as f64])
        .collect();
    Polygon::new(vertices).ok()
}
