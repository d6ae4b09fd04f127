//! Static PNG figures plus an HTML index. Everything is rasterized here with
//! integer arithmetic on a fixed canvas, so the same report always yields the
//! same bytes.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use crate::run::{ReportDocument, SweepRow};

const W: usize = 480;
const H: usize = 320;
const LEFT: usize = 56;
const RIGHT: usize = 16;
const TOP: usize = 16;
const BOTTOM: usize = 36;

type Rgb = [u8; 3];
const WHITE: Rgb = [255, 255, 255];
const BLACK: Rgb = [0, 0, 0];
const GREY: Rgb = [200, 200, 200];
const BLUE: Rgb = [31, 119, 180];
const ORANGE: Rgb = [255, 127, 14];
const GREEN: Rgb = [44, 160, 44];
const RED: Rgb = [214, 39, 40];

/// 3×5 glyphs, one row per byte (low three bits, MSB on the left).
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        _ => return None,
    })
}

pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pixels: Vec<Rgb>,
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![WHITE; width * height] }
    }

    fn set(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = c;
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb) {
        for y in y0.min(y1)..y0.max(y1) {
            for x in x0.min(x1)..x0.max(x1) {
                self.set(x, y, c);
            }
        }
    }

    /// Bresenham line, two pixels thick.
    pub fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.set(x0, y0, c);
            self.set(x0 + 1, y0, c);
            self.set(x0, y0 + 1, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    pub fn marker(&mut self, (x, y): (i64, i64), c: Rgb) {
        self.fill_rect(x - 3, y - 3, x + 4, y + 4, c);
    }

    /// Digits, '.', and '-' at twice the glyph size; other characters are skipped.
    pub fn text(&mut self, x: i64, y: i64, s: &str, c: Rgb) {
        for (i, ch) in s.chars().enumerate() {
            let Some(rows) = glyph(ch) else { continue };
            let ox = x + i as i64 * 8;
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..3 {
                    if bits & (4 >> rx) != 0 {
                        self.fill_rect(ox + rx * 2, y + ry as i64 * 2, ox + rx * 2 + 2, y + ry as i64 * 2 + 2, c);
                    }
                }
            }
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header()?;
            let data: Vec<u8> = self.pixels.iter().flatten().copied().collect();
            w.write_image_data(&data)?;
        }
        Ok(out)
    }
}

fn label(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Plot frame mapping data coordinates into the canvas.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64, y: f64) -> (i64, i64) {
        let fx = if self.x.1 > self.x.0 { (x - self.x.0) / (self.x.1 - self.x.0) } else { 0.5 };
        let fy = if self.y.1 > self.y.0 { (y - self.y.0) / (self.y.1 - self.y.0) } else { 0.5 };
        let px = LEFT as f64 + fx * (W - LEFT - RIGHT) as f64;
        let py = (H - BOTTOM) as f64 - fy * (H - TOP - BOTTOM) as f64;
        (px.round() as i64, py.round() as i64)
    }

    fn axes(&self, canvas: &mut Canvas, x_ticks: &[(f64, String)]) {
        let (x0, y0) = (LEFT as i64, (H - BOTTOM) as i64);
        let mid = (self.y.0 + self.y.1) / 2.0;
        for v in [self.y.0, mid, self.y.1] {
            let (_, py) = self.px(self.x.0, v);
            canvas.fill_rect(x0, py, (W - RIGHT) as i64, py + 1, GREY);
            let s = label(v);
            canvas.text(x0 - 6 - 8 * s.len() as i64, py - 5, &s, BLACK);
        }
        if self.y.0 < 0.0 && self.y.1 > 0.0 {
            let (_, py) = self.px(self.x.0, 0.0);
            canvas.fill_rect(x0, py, (W - RIGHT) as i64, py + 1, BLACK);
        }
        canvas.fill_rect(x0 - 1, TOP as i64, x0 + 1, y0 + 1, BLACK);
        canvas.fill_rect(x0 - 1, y0, (W - RIGHT) as i64, y0 + 2, BLACK);
        for (v, s) in x_ticks {
            let (px, _) = self.px(*v, self.y.0);
            canvas.fill_rect(px, y0, px + 1, y0 + 6, BLACK);
            canvas.text(px - 4 * s.len() as i64, y0 + 10, s, BLACK);
        }
    }

    fn series(&self, canvas: &mut Canvas, points: &[(f64, f64)], c: Rgb) {
        let px: Vec<(i64, i64)> = points.iter().filter(|p| p.1.is_finite()).map(|&(x, y)| self.px(x, y)).collect();
        for pair in px.windows(2) {
            canvas.line(pair[0], pair[1], c);
        }
        for &p in &px {
            canvas.marker(p, c);
        }
    }
}

fn numeric_ticks(xs: &[f64]) -> Vec<(f64, String)> {
    let mut t: Vec<(f64, String)> = Vec::new();
    for &x in xs {
        if t.iter().all(|(v, _)| *v != x) {
            t.push((x, label(x)));
        }
    }
    // Keep labels from overlapping: at most six, evenly thinned.
    if t.len() > 6 {
        let step = t.len().div_ceil(6);
        let last = t.last().cloned();
        t = t.into_iter().step_by(step).collect();
        if let Some(l) = last {
            if t.last() != Some(&l) {
                t.push(l);
            }
        }
    }
    t
}

fn bounds(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    xs.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

pub fn accuracy_curves(doc: &ReportDocument) -> Canvas {
    let r = &doc.report;
    let t: Vec<(f64, f64)> = r.curve_target.percentiles.iter().copied().zip(r.curve_target.accuracy.iter().copied()).collect();
    let f: Vec<(f64, f64)> =
        r.curve_reference.percentiles.iter().copied().zip(r.curve_reference.accuracy.iter().copied()).collect();
    let frame = Frame { x: (0.0, 100.0), y: (0.0, 1.0) };
    let mut c = Canvas::new(W, H);
    frame.axes(&mut c, &numeric_ticks(&[0.0, 20.0, 40.0, 60.0, 80.0, 100.0]));
    frame.series(&mut c, &f, ORANGE);
    frame.series(&mut c, &t, BLUE);
    c
}

pub fn score_by_p(doc: &ReportDocument) -> Canvas {
    let pts: Vec<(f64, f64)> = doc.report.score_at_p.iter().map(|s| (s.p, s.score)).collect();
    let frame = Frame { x: (0.0, 100.0), y: (-1.0, 1.0) };
    let mut c = Canvas::new(W, H);
    frame.axes(&mut c, &numeric_ticks(&[0.0, 20.0, 40.0, 60.0, 80.0, 100.0]));
    frame.series(&mut c, &pts, GREEN);
    c
}

pub const PARTITION_COLORS: [Rgb; 4] = [GREY, RED, ORANGE, BLUE];

pub fn partition_bars(doc: &ReportDocument) -> Canvas {
    let shares = doc.report.partition.shares();
    let frame = Frame { x: (0.0, 4.0), y: (0.0, 1.0) };
    let mut c = Canvas::new(W, H);
    frame.axes(&mut c, &[]);
    for (i, (&s, &col)) in shares.iter().zip(&PARTITION_COLORS).enumerate() {
        let (x0, y0) = frame.px(i as f64 + 0.15, 0.0);
        let (x1, y1) = frame.px(i as f64 + 0.85, s);
        c.fill_rect(x0, y1, x1, y0, col);
    }
    c
}

/// Déjà vu score (and probe gap, when present) against the sweep axis. Axis
/// values are plotted in file order at evenly spaced positions.
pub fn sweep_lines(rows: &[SweepRow]) -> Canvas {
    let mut values: Vec<&str> = Vec::new();
    for r in rows {
        if !values.contains(&r.value.as_str()) {
            values.push(&r.value);
        }
    }
    let series = |metric: &str| -> Vec<(f64, f64)> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let est = rows.iter().find(|r| r.metric == metric && r.value == *v).and_then(|r| r.estimate);
                (i as f64, est.unwrap_or(f64::NAN))
            })
            .collect()
    };
    let score = series("dejavu_score");
    let gap = series("probe_gap");
    let (lo, hi) = bounds(score.iter().chain(&gap).map(|p| p.1));
    let lo = if lo.is_finite() { lo.min(0.0) } else { 0.0 };
    let hi = if hi.is_finite() { hi.max(lo + 0.1) } else { 1.0 };
    let frame = Frame { x: (-0.5, values.len() as f64 - 0.5), y: (lo, hi) };
    let mut c = Canvas::new(W, H);
    let ticks: Vec<(f64, String)> = values.iter().enumerate().map(|(i, v)| (i as f64, v.to_string())).collect();
    frame.axes(&mut c, &ticks);
    frame.series(&mut c, &gap, GREY);
    frame.series(&mut c, &score, GREEN);
    c
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RenderSummary {
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

fn save(canvas: &Canvas, dir: &Path, name: &str, summary: &mut RenderSummary) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, canvas.to_png()?).with_context(|| format!("writing {}", path.display()))?;
    summary.files.push(name.to_string());
    Ok(())
}

fn hex(c: Rgb) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Renders whatever inputs are given and writes `index.html` listing them.
/// Figures whose input is absent are skipped with a note.
pub fn render_report(doc: Option<&ReportDocument>, sweep: Option<&[SweepRow]>, dir: &Path) -> Result<RenderSummary> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut s = RenderSummary::default();
    let mut body = String::new();
    match doc {
        Some(doc) => {
            let r = &doc.report;
            save(&accuracy_curves(doc), dir, "accuracy_curves.png", &mut s)?;
            save(&partition_bars(doc), dir, "partition.png", &mut s)?;
            save(&score_by_p(doc), dir, "score_by_p.png", &mut s)?;
            let _ = writeln!(
                body,
                "<h2>Report</h2>\n<p>targets {} vs references {}, k = {}, score at p = {}: <b>{:.4}</b></p>",
                r.metadata.target_models.join(", "),
                r.metadata.reference_models.join(", "),
                r.metadata.k,
                r.p_default,
                r.score
            );
            if let Some(p) = r.linear_probe {
                let _ = writeln!(
                    body,
                    "<p>linear probe: train {:.4}, test {:.4}, gap {:.4}</p>",
                    p.train_accuracy, p.test_accuracy, p.gap
                );
            }
            let _ = writeln!(
                body,
                "<figure><img src=\"accuracy_curves.png\"><figcaption>Accuracy of the top p% most confident examples \
                 (x: p from 0 to 100, y: accuracy 0 to 1). <span style=\"color:{}\">target</span>, \
                 <span style=\"color:{}\">reference</span>.</figcaption></figure>",
                hex(BLUE),
                hex(ORANGE)
            );
            let shares = r.partition.shares();
            let _ = writeln!(
                body,
                "<figure><img src=\"partition.png\"><figcaption>Partition shares (y: 0 to 1), left to right: \
                 unassociated {:.4}, memorized {:.4}, misrepresented {:.4}, correlated {:.4}.</figcaption></figure>",
                shares[0], shares[1], shares[2], shares[3]
            );
            let _ = writeln!(
                body,
                "<figure><img src=\"score_by_p.png\"><figcaption>Déjà vu score against p (y: −1 to 1).</figcaption></figure>"
            );
        }
        None => s.notes.push("no report given: accuracy, partition and score-by-p figures skipped".into()),
    }
    match sweep {
        Some(rows) if !rows.is_empty() => {
            save(&sweep_lines(rows), dir, "sweep.png", &mut s)?;
            let axis = rows[0].axis.as_str();
            let _ = writeln!(
                body,
                "<h2>Sweep</h2>\n<figure><img src=\"sweep.png\"><figcaption>Déjà vu score \
                 (<span style=\"color:{}\">green</span>) and probe gap (<span style=\"color:{}\">grey</span>, \
                 when present) against {axis}.</figcaption></figure>",
                hex(GREEN),
                hex(GREY)
            );
            let missing: Vec<&str> =
                rows.iter().filter(|r| r.status != "ok" && r.metric == rows[0].metric).map(|r| r.value.as_str()).collect();
            if !missing.is_empty() {
                s.notes.push(format!("sweep values without results: {}", missing.join(", ")));
            }
        }
        _ => s.notes.push("no sweep given: sweep figure skipped".into()),
    }
    let mut html = String::from("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Déjà vu audit</title></head><body>\n");
    html.push_str(&body);
    if !s.notes.is_empty() {
        html.push_str("<h2>Notes</h2>\n<ul>\n");
        for n in &s.notes {
            let _ = writeln!(html, "<li>{n}</li>");
        }
        html.push_str("</ul>\n");
    }
    html.push_str("</body></html>\n");
    std::fs::write(dir.join("index.html"), html)?;
    s.files.push("index.html".into());
    Ok(s)
}
