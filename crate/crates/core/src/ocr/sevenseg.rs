//! Seven-segment glyphs shared by the synthetic plate renderer and the offline
//! template matcher.
//!
//! A plate is `margin_x` + `n` cells at a fixed pitch + `margin_x` wide and
//! `margin_y` + one cell + `margin_y` high. The matcher recovers the scale from
//! the image height, so the same layout reads downscaled plates.

use super::{BBox, DetectRequest, OcrError, TextDetection, TextDetector};
use crate::imaging::RasterImage;

/// Segment bits in `abcdefg` order: top, upper right, lower right, bottom,
/// lower left, upper left, middle.
const DIGIT_SEGMENTS: [u8; 10] = [
    0b1111110, // 0
    0b0110000, // 1
    0b1101101, // 2
    0b1111001, // 3
    0b0110011, // 4
    0b1011011, // 5
    0b1011111, // 6
    0b1110000, // 7
    0b1111111, // 8
    0b1111011, // 9
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlyphLayout {
    pub cell_w: u32,
    pub cell_h: u32,
    pub gap: u32,
    pub margin_x: u32,
    pub margin_y: u32,
    pub stroke: u32,
    pub frame: u32,
}

impl Default for GlyphLayout {
    fn default() -> Self {
        Self { cell_w: 24, cell_h: 44, gap: 8, margin_x: 16, margin_y: 14, stroke: 5, frame: 3 }
    }
}

impl GlyphLayout {
    pub fn pitch(&self) -> u32 {
        self.cell_w + self.gap
    }

    pub fn plate_height(&self) -> u32 {
        2 * self.margin_y + self.cell_h
    }

    pub fn plate_width(&self, digits: usize) -> u32 {
        2 * self.margin_x + digits as u32 * self.pitch() - self.gap
    }

    /// Ink mask of one digit cell, row-major `cell_w * cell_h`.
    pub fn glyph_mask(&self, digit: u8) -> Vec<bool> {
        let (w, h, t) = (self.cell_w as i32, self.cell_h as i32, self.stroke as i32);
        let mid = h / 2;
        // (x0, x1, y0, y1), half-open
        let rects = [
            (t + 1, w - t - 1, 0, t),
            (w - t, w, t + 1, mid - 1),
            (w - t, w, mid + 1, h - t - 1),
            (t + 1, w - t - 1, h - t, h),
            (0, t, mid + 1, h - t - 1),
            (0, t, t + 1, mid - 1),
            (t + 1, w - t - 1, mid - t / 2, mid - t / 2 + t),
        ];
        let bits = DIGIT_SEGMENTS[digit as usize];
        let mut mask = vec![false; (w * h) as usize];
        for (i, &(x0, x1, y0, y1)) in rects.iter().enumerate() {
            if bits & (1 << (6 - i)) == 0 {
                continue;
            }
            for y in y0..y1 {
                for x in x0..x1 {
                    mask[(y * w + x) as usize] = true;
                }
            }
        }
        mask
    }

    /// Draws `digits` on a plate with the given background and ink intensities.
    /// `tint` scales the (R, G, B) channels of both tones.
    pub fn render(&self, digits: &str, plate: u8, ink: u8, tint: [f32; 3]) -> RasterImage {
        let n = digits.len().max(1);
        let (w, h) = (self.plate_width(n), self.plate_height());
        let frame_tone = ((plate as u16 + ink as u16) / 2) as u8;
        let mut gray = vec![plate; (w * h) as usize];
        for y in 0..h {
            for x in 0..w {
                let edge = x < self.frame || y < self.frame || x >= w - self.frame || y >= h - self.frame;
                if edge {
                    gray[(y * w + x) as usize] = frame_tone;
                }
            }
        }
        for (i, ch) in digits.bytes().enumerate() {
            let Some(d) = ch.checked_sub(b'0').filter(|d| *d <= 9) else {
                continue;
            };
            let mask = self.glyph_mask(d);
            let ox = self.margin_x + i as u32 * self.pitch();
            for cy in 0..self.cell_h {
                for cx in 0..self.cell_w {
                    if mask[(cy * self.cell_w + cx) as usize] {
                        gray[((self.margin_y + cy) * w + ox + cx) as usize] = ink;
                    }
                }
            }
        }
        let pixels = gray
            .iter()
            .flat_map(|&v| tint.map(|t| (v as f32 * t).round().clamp(0.0, 255.0) as u8))
            .collect();
        RasterImage::new(w, h, 3, pixels).expect("plate dimensions are consistent")
    }
}

/// Zero-mean unit-norm template, or `None` for a flat patch.
fn standardize(values: &[f32]) -> Option<Vec<f32>> {
    let n = values.len() as f32;
    let mean = values.iter().sum::<f32>() / n;
    let norm = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>().sqrt();
    if norm < 1e-3 {
        return None;
    }
    Some(values.iter().map(|v| (v - mean) / norm).collect())
}

/// Offline digit reader: fixed-pitch cells scored by normalised cross-correlation.
#[derive(Debug, Clone)]
pub struct SevenSegBackend {
    layout: GlyphLayout,
    templates: Vec<Vec<f32>>,
    threshold: f64,
}

pub const DEFAULT_THRESHOLD: f64 = 0.6;

impl SevenSegBackend {
    pub fn new(layout: GlyphLayout) -> Self {
        let templates = (0..10u8)
            .map(|d| {
                let mask = layout.glyph_mask(d);
                let values: Vec<f32> = mask.iter().map(|&ink| if ink { 0.0 } else { 1.0 }).collect();
                standardize(&values).expect("glyphs are not flat")
            })
            .collect();
        Self { layout, templates, threshold: DEFAULT_THRESHOLD }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn layout(&self) -> &GlyphLayout {
        &self.layout
    }

    /// Best digit per cell with its correlation; `None` where the cell is flat.
    pub fn score_cells(&self, image: &RasterImage) -> Vec<Option<(u8, f64)>> {
        let l = &self.layout;
        let (w, h) = (image.width() as f32, image.height() as f32);
        let sy = h / l.plate_height() as f32;
        let cells = ((w / sy - 2.0 * l.margin_x as f32 + l.gap as f32) / l.pitch() as f32).round();
        if !(cells >= 1.0) {
            return Vec::new();
        }
        // floor rounding of scaled dimensions makes the two axes differ slightly
        let sx = w / l.plate_width(cells as usize) as f32;
        let gray = image.to_gray_f32();
        let sample = |fx: f32, fy: f32| -> f32 {
            let fx = fx.clamp(0.0, w - 1.0);
            let fy = fy.clamp(0.0, h - 1.0);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let x1 = (x0 + 1).min(image.width() as usize - 1);
            let y1 = (y0 + 1).min(image.height() as usize - 1);
            let (ax, ay) = (fx - x0 as f32, fy - y0 as f32);
            let row = image.width() as usize;
            let p = |x: usize, y: usize| gray[y * row + x];
            let top = p(x0, y0) + (p(x1, y0) - p(x0, y0)) * ax;
            let bottom = p(x0, y1) + (p(x1, y1) - p(x0, y1)) * ax;
            top + (bottom - top) * ay
        };

        let mut patch = vec![0f32; (l.cell_w * l.cell_h) as usize];
        (0..cells as u32)
            .map(|i| {
                let ox = (l.margin_x + i * l.pitch()) as f32;
                let oy = l.margin_y as f32;
                for ty in 0..l.cell_h {
                    for tx in 0..l.cell_w {
                        let px = (ox + tx as f32 + 0.5) * sx - 0.5;
                        let py = (oy + ty as f32 + 0.5) * sy - 0.5;
                        patch[(ty * l.cell_w + tx) as usize] = sample(px, py);
                    }
                }
                let norm = standardize(&patch)?;
                self.templates
                    .iter()
                    .enumerate()
                    .map(|(d, t)| (d as u8, t.iter().zip(&norm).map(|(a, b)| a * b).sum::<f32>() as f64))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
            })
            .collect()
    }

    /// One detection per maximal run of cells scoring at least the threshold.
    pub fn match_digits(&self, image: &RasterImage) -> Vec<TextDetection> {
        let l = &self.layout;
        let cells = self.score_cells(image);
        let sy = image.height() as f64 / l.plate_height() as f64;
        let sx = image.width() as f64 / l.plate_width(cells.len().max(1)) as f64;
        let mut out = Vec::new();
        let mut run: Option<(usize, String, f64)> = None;
        let flush = |run: &mut Option<(usize, String, f64)>, out: &mut Vec<TextDetection>| {
            if let Some((start, text, conf)) = run.take() {
                let n = text.len() as f64;
                let x = (l.margin_x as f64 + start as f64 * l.pitch() as f64) * sx;
                let w = (n * l.pitch() as f64 - l.gap as f64) * sx;
                let bbox = BBox::new(x, l.margin_y as f64 * sy, w, l.cell_h as f64 * sy);
                out.push(TextDetection::new(text, conf.clamp(0.0, 1.0), bbox));
            }
        };
        for (i, cell) in cells.iter().enumerate() {
            match cell {
                Some((digit, score)) if *score >= self.threshold => {
                    let entry = run.get_or_insert_with(|| (i, String::new(), 1.0));
                    entry.1.push((b'0' + digit) as char);
                    entry.2 = entry.2.min(*score);
                }
                _ => flush(&mut run, &mut out),
            }
        }
        flush(&mut run, &mut out);
        out
    }
}

impl Default for SevenSegBackend {
    fn default() -> Self {
        Self::new(GlyphLayout::default())
    }
}

impl TextDetector for SevenSegBackend {
    fn name(&self) -> &str {
        "sevenseg"
    }

    fn detect_raw(&self, req: &DetectRequest<'_>) -> Result<Vec<TextDetection>, OcrError> {
        Ok(self.match_digits(req.image))
    }
}
