//! Periphery crops: the largest axis-aligned rectangle of an image that
//! overlaps none of its foreground boxes, plus the lower-left corner crop
//! used when no boxes are available.
//!
//! Coordinates are integer pixels with half-open extents `[x0, x1) × [y0, y1)`
//! and `y` growing downward. Two rectangles intersect when they share a
//! region of positive area; touching edges do not count.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CropError {
    #[error("box {x0},{y0},{x1},{y1} is empty or outside the {width}x{height} image")]
    InvalidBox { x0: u32, y0: u32, x1: u32, y1: u32, width: u32, height: u32 },
    #[error("corner crop of {width}x{height} at {fraction} has a zero-length side")]
    DegenerateCrop { width: u32, height: u32, fraction: Fraction },
    #[error("invalid fraction {0}/{1}: must lie in (0, 1]")]
    InvalidFraction(u32, u32),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoundingBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    fn validate(&self, width: u32, height: u32) -> Result<(), CropError> {
        if self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height {
            Ok(())
        } else {
            Err(CropError::InvalidBox {
                x0: self.x0,
                y0: self.y0,
                x1: self.x1,
                y1: self.y1,
                width,
                height,
            })
        }
    }
}

/// A non-empty pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Rect {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        debug_assert!(x0 < x1 && y0 < y1);
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn intersects(&self, b: &BoundingBox) -> bool {
        self.x0 < b.x1 && b.x0 < self.x1 && self.y0 < b.y1 && b.y0 < self.y1
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.y0, self.x1, self.y1)
    }
}

/// A rational number in `(0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fraction {
    num: u32,
    den: u32,
}

impl Fraction {
    pub fn new(num: u32, den: u32) -> Result<Self, CropError> {
        if num == 0 || den == 0 || num > den {
            return Err(CropError::InvalidFraction(num, den));
        }
        Ok(Self { num, den })
    }

    /// Parses `n/d` or a bare integer.
    pub fn parse(s: &str) -> Option<Self> {
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim().parse().ok()?, d.trim().parse().ok()?),
            None => (s.trim().parse().ok()?, 1),
        };
        Self::new(n, d).ok()
    }

    fn scale(&self, v: u32) -> u32 {
        (u64::from(v) * u64::from(self.num) / u64::from(self.den)) as u32
    }
}

impl Default for Fraction {
    fn default() -> Self {
        Self { num: 1, den: 3 }
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CropShape {
    /// Maximum-area rectangle.
    #[default]
    Rectangle,
    /// Largest empty square.
    Square,
}

/// Enumerates the maximal empty rectangles (on the compressed grid) whose
/// sides are all at least `min_side`, calling `visit` on each candidate.
fn for_each_empty_strip(
    width: u32,
    height: u32,
    boxes: &[BoundingBox],
    min_side: u32,
    mut visit: impl FnMut(Rect),
) {
    let mut xs: BTreeSet<u32> = [0, width].into_iter().collect();
    let mut ys: BTreeSet<u32> = [0, height].into_iter().collect();
    for b in boxes {
        xs.extend([b.x0, b.x1]);
        ys.extend([b.y0, b.y1]);
    }
    let xs: Vec<u32> = xs.into_iter().collect();
    let ys: Vec<u32> = ys.into_iter().collect();
    let (nx, ny) = (xs.len() - 1, ys.len() - 1);

    // blocked[j][i]: compressed cell (column i, row j) lies inside some box.
    let mut blocked = vec![vec![false; nx]; ny];
    for b in boxes {
        let i0 = xs.partition_point(|&x| x < b.x0);
        let i1 = xs.partition_point(|&x| x < b.x1);
        let j0 = ys.partition_point(|&y| y < b.y0);
        let j1 = ys.partition_point(|&y| y < b.y1);
        for row in &mut blocked[j0..j1] {
            row[i0..i1].iter_mut().for_each(|c| *c = true);
        }
    }

    let mut column_blocked = vec![false; nx];
    for top in 0..ny {
        column_blocked.iter_mut().for_each(|c| *c = false);
        for bottom in top..ny {
            for (c, &b) in column_blocked.iter_mut().zip(&blocked[bottom]) {
                *c |= b;
            }
            let h = ys[bottom + 1] - ys[top];
            if h < min_side {
                continue;
            }
            // Every maximal run of free columns in this strip.
            let mut i = 0;
            while i < nx {
                if column_blocked[i] {
                    i += 1;
                    continue;
                }
                let start = i;
                while i < nx && !column_blocked[i] {
                    i += 1;
                }
                let (x0, x1) = (xs[start], xs[i]);
                if x1 - x0 >= min_side {
                    visit(Rect::new(x0, ys[top], x1, ys[bottom + 1]));
                }
            }
        }
    }
}

/// Ordering key: larger area first, then lowest `y0`, `x0`, `y1`.
fn better(candidate: &Rect, best: &Option<Rect>, size: impl Fn(&Rect) -> u64) -> bool {
    match best {
        None => true,
        Some(b) => {
            let (sc, sb) = (size(candidate), size(b));
            sc > sb
                || (sc == sb
                    && (candidate.y0, candidate.x0, candidate.y1) < (b.y0, b.x0, b.y1))
        }
    }
}

/// Largest rectangle (or square) that overlaps no box and has both sides of at
/// least `min_side`. Ties go to the lowest `y0`, then `x0`, then `y1`.
pub fn periphery_crop(
    width: u32,
    height: u32,
    boxes: &[BoundingBox],
    min_side: u32,
    shape: CropShape,
) -> Result<Option<Rect>, CropError> {
    for b in boxes {
        b.validate(width, height)?;
    }
    let min_side = min_side.max(1);
    if width == 0 || height == 0 {
        return Ok(None);
    }
    let mut best: Option<Rect> = None;
    match shape {
        CropShape::Rectangle => for_each_empty_strip(width, height, boxes, min_side, |r| {
            if better(&r, &best, Rect::area) {
                best = Some(r);
            }
        }),
        CropShape::Square => for_each_empty_strip(width, height, boxes, min_side, |r| {
            // Every empty square slides to the top-left corner of a maximal
            // rectangle containing it.
            let side = r.width().min(r.height());
            let sq = Rect::new(r.x0, r.y0, r.x0 + side, r.y0 + side);
            if better(&sq, &best, Rect::area) {
                best = Some(sq);
            }
        }),
    }
    Ok(best)
}

/// Crop anchored at the lower-left corner with sides `⌊f·width⌋ × ⌊f·height⌋`.
pub fn corner_crop(width: u32, height: u32, fraction: Fraction) -> Result<Rect, CropError> {
    let (w, h) = (fraction.scale(width), fraction.scale(height));
    if w == 0 || h == 0 {
        return Err(CropError::DegenerateCrop { width, height, fraction });
    }
    Ok(Rect::new(0, height - h, w, height))
}

/// One line of a box (or crop) manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoxRecord {
    pub example_id: String,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<BoundingBox>,
}

/// Parses `example_id<TAB>width<TAB>height<TAB>x0,y0,x1,y1[;...]` lines.
/// An empty fourth column means no boxes.
pub fn read_box_manifest<R: BufRead>(reader: R) -> Result<Vec<BoxRecord>, CropError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let bad = |reason: String| CropError::Manifest { line: i + 1, reason };
        let line = line.map_err(|e| bad(e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 || cols.len() > 4 {
            return Err(bad(format!("expected 3 or 4 columns, got {}", cols.len())));
        }
        let width = cols[1].parse().map_err(|_| bad("invalid width".into()))?;
        let height = cols[2].parse().map_err(|_| bad("invalid height".into()))?;
        let mut boxes = Vec::new();
        for spec in cols.get(3).copied().unwrap_or("").split(';').filter(|s| !s.is_empty()) {
            let v: Vec<u32> = spec
                .split(',')
                .map(|t| t.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| bad(format!("invalid box `{spec}`")))?;
            if v.len() != 4 {
                return Err(bad(format!("box `{spec}` needs 4 coordinates")));
            }
            let b = BoundingBox::new(v[0], v[1], v[2], v[3]);
            b.validate(width, height).map_err(|e| bad(e.to_string()))?;
            boxes.push(b);
        }
        out.push(BoxRecord { example_id: cols[0].to_string(), width, height, boxes });
    }
    Ok(out)
}

/// Emits crops in the box-manifest layout, one rectangle per line.
pub fn write_crop_manifest<W: Write>(
    mut w: W,
    crops: &[(String, u32, u32, Rect)],
) -> std::io::Result<()> {
    for (id, width, height, r) in crops {
        writeln!(w, "{id}\t{width}\t{height}\t{r}")?;
    }
    Ok(())
}
