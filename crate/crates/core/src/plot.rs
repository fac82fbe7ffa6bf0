//! PNG rendering for run artifacts: state-error curves with deviation
//! bands, sweep trends with error bars, per-edge probability heatmaps, and
//! trajectory overlays. Everything is drawn into a plain RGB canvas with a
//! built-in 5x7 bitmap font, so identical inputs produce identical bytes.

use std::path::Path;

use ndarray::ArrayView3;

use crate::error::Error;

pub type Color = [u8; 3];

pub const WHITE: Color = [255, 255, 255];
pub const BLACK: Color = [20, 20, 20];
pub const GRAY: Color = [128, 128, 128];
pub const LIGHT_GRAY: Color = [210, 210, 210];
pub const RED: Color = [211, 47, 47];

/// Series palette, picked for contrast on white.
pub const PALETTE: [Color; 6] = [
    [31, 119, 180],
    [214, 94, 13],
    [44, 140, 44],
    [131, 75, 160],
    [196, 156, 22],
    [23, 150, 160],
];

// ---------------------------------------------------------------------------
// canvas

pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, background: Color) -> Canvas {
        let mut pixels = vec![0u8; width * height * 3];
        for chunk in pixels.chunks_exact_mut(3) {
            chunk.copy_from_slice(&background);
        }
        Canvas { width, height, pixels }
    }

    pub fn set(&mut self, x: i64, y: i64, c: Color) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let at = (y as usize * self.width + x as usize) * 3;
        self.pixels[at..at + 3].copy_from_slice(&c);
    }

    /// Alpha-composites `c` over the existing pixel.
    pub fn blend(&mut self, x: i64, y: i64, c: Color, alpha: f64) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let at = (y as usize * self.width + x as usize) * 3;
        for k in 0..3 {
            let old = f64::from(self.pixels[at + k]);
            let new = old + (f64::from(c[k]) - old) * alpha;
            self.pixels[at + k] = new.round().clamp(0.0, 255.0) as u8;
        }
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: Color) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.set(xx, yy, c);
            }
        }
    }

    fn disc(&mut self, cx: f64, cy: f64, radius: f64, c: Color) {
        let r = radius.ceil() as i64;
        let (ix, iy) = (cx.round() as i64, cy.round() as i64);
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = (ix + dx) as f64 - cx;
                let e2 = (iy + dy) as f64 - cy;
                if d2 * d2 + e2 * e2 <= radius * radius {
                    self.set(ix + dx, iy + dy, c);
                }
            }
        }
    }

    pub fn marker(&mut self, x: f64, y: f64, radius: f64, c: Color) {
        self.disc(x, y, radius, c);
    }

    /// Strokes a polyline. `pattern` lists alternating on/off run lengths in
    /// pixels (empty or single-entry means solid); the phase accumulates
    /// across segments so dashes flow through vertices. `width` is the
    /// stroke diameter in pixels.
    pub fn stroke(&mut self, points: &[(f64, f64)], c: Color, width: f64, pattern: &[usize]) {
        let period: usize = pattern.iter().sum();
        let mut travelled = 0.0f64;
        for pair in points.windows(2) {
            let (x0, y0) = pair[0];
            let (x1, y1) = pair[1];
            let len = (x1 - x0).hypot(y1 - y0);
            let steps = (len / 0.4).ceil().max(1.0) as usize;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let dist = travelled + t * len;
                if period > 0 && pattern.len() > 1 {
                    let mut rem = dist % period as f64;
                    let mut on = true;
                    for &run in pattern {
                        if rem < run as f64 {
                            break;
                        }
                        rem -= run as f64;
                        on = !on;
                    }
                    if !on {
                        continue;
                    }
                }
                let x = x0 + t * (x1 - x0);
                let y = y0 + t * (y1 - y0);
                if width <= 1.5 {
                    self.set(x.round() as i64, y.round() as i64, c);
                } else {
                    self.disc(x, y, width / 2.0, c);
                }
            }
            travelled += len;
        }
    }

    pub fn text(&mut self, x: i64, y: i64, s: &str, c: Color) {
        self.text_scaled(x, y, s, c, 1);
    }

    pub fn text_scaled(&mut self, x: i64, y: i64, s: &str, c: Color, scale: i64) {
        let mut cx = x;
        for ch in s.chars() {
            let rows = glyph(ch);
            for (ry, row) in rows.iter().enumerate() {
                for col in 0..5i64 {
                    if row & (1 << (4 - col)) != 0 {
                        self.fill_rect(cx + col * scale, y + ry as i64 * scale, scale, scale, c);
                    }
                }
            }
            cx += 6 * scale;
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
    }
}

/// Width of `s` in pixels at the given scale.
pub fn text_width(s: &str, scale: i64) -> i64 {
    s.chars().count() as i64 * 6 * scale - scale.min(1)
}

/// 5x7 glyphs; bit 4 is the leftmost column. Lowercase renders as uppercase
/// and anything unknown as a hollow box.
fn glyph(ch: char) -> [u8; 7] {
    match ch.to_ascii_uppercase() {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1E, 0x01, 0x01, 0x0E, 0x01, 0x01, 0x1E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ',' => [0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '%' => [0x19, 0x1A, 0x02, 0x04, 0x08, 0x0B, 0x13],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '=' => [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00],
        '<' => [0x02, 0x04, 0x08, 0x10, 0x08, 0x04, 0x02],
        '>' => [0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08],
        ' ' => [0x00; 7],
        _ => [0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F],
    }
}

// ---------------------------------------------------------------------------
// chart scaffolding

/// Rounds a raw tick spacing up to the nearest 1, 2, or 5 times a power of
/// ten, then returns the tick positions covering `[min, max]`.
pub fn nice_ticks(min: f64, max: f64, target: usize) -> Vec<f64> {
    if !(max > min) || target == 0 {
        return vec![min];
    }
    let raw = (max - min) / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    } * mag;
    let first = (min / step).ceil() as i64;
    let last = (max / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn format_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    format!("{v:.decimals$}")
}

/// A framed x/y plot area inside a canvas, mapping data coordinates to
/// pixels with the y axis pointing up.
pub struct Chart {
    pub canvas: Canvas,
    left: f64,
    top: f64,
    right: f64,
    bottom: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Chart {
    pub fn new(
        width: usize,
        height: usize,
        title: &str,
        xlabel: &str,
        ylabel: &str,
        (xmin, xmax): (f64, f64),
        (ymin, ymax): (f64, f64),
    ) -> Chart {
        let canvas = Canvas::new(width, height, WHITE);
        let mut chart = Chart {
            canvas,
            left: 64.0,
            top: 36.0,
            right: width as f64 - 20.0,
            bottom: height as f64 - 44.0,
            xmin,
            xmax: if xmax > xmin { xmax } else { xmin + 1.0 },
            ymin,
            ymax: if ymax > ymin { ymax } else { ymin + 1.0 },
        };
        chart.frame(title, xlabel, ylabel);
        chart
    }

    pub fn px(&self, x: f64) -> f64 {
        self.left + (x - self.xmin) / (self.xmax - self.xmin) * (self.right - self.left)
    }

    pub fn py(&self, y: f64) -> f64 {
        self.bottom - (y - self.ymin) / (self.ymax - self.ymin) * (self.bottom - self.top)
    }

    fn frame(&mut self, title: &str, xlabel: &str, ylabel: &str) {
        let (l, t, r, b) = (self.left, self.top, self.right, self.bottom);
        let xticks = nice_ticks(self.xmin, self.xmax, 8);
        let xstep = if xticks.len() > 1 { xticks[1] - xticks[0] } else { 1.0 };
        for &x in &xticks {
            let px = self.px(x);
            self.canvas.stroke(&[(px, t), (px, b)], LIGHT_GRAY, 1.0, &[]);
            self.canvas.stroke(&[(px, b), (px, b + 4.0)], BLACK, 1.0, &[]);
            let label = format_tick(x, xstep);
            let lx = px as i64 - text_width(&label, 1) / 2;
            self.canvas.text(lx, b as i64 + 8, &label, BLACK);
        }
        let yticks = nice_ticks(self.ymin, self.ymax, 6);
        let ystep = if yticks.len() > 1 { yticks[1] - yticks[0] } else { 1.0 };
        for &y in &yticks {
            let py = self.py(y);
            self.canvas.stroke(&[(l, py), (r, py)], LIGHT_GRAY, 1.0, &[]);
            self.canvas.stroke(&[(l - 4.0, py), (l, py)], BLACK, 1.0, &[]);
            let label = format_tick(y, ystep);
            let lx = l as i64 - 8 - text_width(&label, 1);
            self.canvas.text(lx, py as i64 - 3, &label, BLACK);
        }
        self.canvas.stroke(&[(l, t), (l, b), (r, b)], BLACK, 1.0, &[]);
        let tw = text_width(title, 2);
        self.canvas.text_scaled(
            ((l + r) as i64) / 2 - tw / 2,
            10,
            title,
            BLACK,
            2,
        );
        let xw = text_width(xlabel, 1);
        self.canvas.text(((l + r) as i64) / 2 - xw / 2, self.canvas.height as i64 - 14, xlabel, BLACK);
        self.canvas.text(4, t as i64 - 14, ylabel, BLACK);
    }

    /// Fills the region between `lo` and `hi` (sampled at `xs`) with a
    /// translucent tint of `c`.
    pub fn band(&mut self, xs: &[f64], lo: &[f64], hi: &[f64], c: Color) {
        for i in 0..xs.len().saturating_sub(1) {
            let (p0, p1) = (self.px(xs[i]), self.px(xs[i + 1]));
            let col0 = p0.ceil() as i64;
            let col1 = p1.floor() as i64;
            for col in col0..=col1 {
                let t = if p1 > p0 { (col as f64 - p0) / (p1 - p0) } else { 0.0 };
                let l = lo[i] + t * (lo[i + 1] - lo[i]);
                let h = hi[i] + t * (hi[i + 1] - hi[i]);
                let (y0, y1) = (self.py(h), self.py(l));
                for row in y0.round() as i64..=y1.round() as i64 {
                    if (row as f64) >= self.top && (row as f64) <= self.bottom {
                        self.canvas.blend(col, row, c, 0.22);
                    }
                }
            }
        }
    }

    pub fn polyline(&mut self, xs: &[f64], ys: &[f64], c: Color, width: f64, pattern: &[usize]) {
        let pts: Vec<(f64, f64)> =
            xs.iter().zip(ys).map(|(&x, &y)| (self.px(x), self.py(y))).collect();
        self.canvas.stroke(&pts, c, width, pattern);
    }

    /// Vertical reference line at data x, clipped to the plot area.
    pub fn vline(&mut self, x: f64, c: Color) {
        let px = self.px(x);
        self.canvas.stroke(&[(px, self.top), (px, self.bottom)], c, 1.0, &[4, 2]);
    }

    pub fn legend(&mut self, entries: &[(String, Color, Vec<usize>)]) {
        let mut y = self.top + 8.0;
        let x = self.left + 12.0;
        for (label, color, pattern) in entries {
            self.canvas.stroke(&[(x, y + 3.0), (x + 28.0, y + 3.0)], *color, 2.0, pattern);
            self.canvas.text(x as i64 + 34, y as i64, label, BLACK);
            y += 13.0;
        }
    }
}

// ---------------------------------------------------------------------------
// specific renderings

/// One curve per entry: (label, per-step mean, optional per-step std drawn
/// as a translucent band). Steps are numbered from 1.
pub fn error_curve_plot(
    series: &[(String, Vec<f64>, Option<Vec<f64>>)],
    title: &str,
    path: &Path,
) -> Result<(), Error> {
    if series.is_empty() || series.iter().any(|(_, m, _)| m.is_empty()) {
        return Err(Error::Data("error-curve plot needs at least one non-empty curve".into()));
    }
    let mut ymax = 0.0f64;
    for (_, mean, std) in series {
        for (i, &m) in mean.iter().enumerate() {
            let s = std.as_ref().map_or(0.0, |s| s[i]);
            ymax = ymax.max(m + s);
        }
    }
    let steps = series[0].1.len();
    let mut chart = Chart::new(
        860,
        520,
        title,
        "PREDICTION STEP",
        "MEAN ERROR",
        (1.0, steps as f64),
        (0.0, ymax * 1.06 + 1e-12),
    );
    let xs: Vec<f64> = (1..=steps).map(|t| t as f64).collect();
    let mut legend = Vec::new();
    for (k, (label, mean, std)) in series.iter().enumerate() {
        if mean.len() != steps || std.as_ref().is_some_and(|s| s.len() != steps) {
            return Err(Error::Data("error-curve series disagree on length".into()));
        }
        let color = PALETTE[k % PALETTE.len()];
        if let Some(std) = std {
            let lo: Vec<f64> = mean.iter().zip(std).map(|(m, s)| m - s).collect();
            let hi: Vec<f64> = mean.iter().zip(std).map(|(m, s)| m + s).collect();
            chart.band(&xs, &lo, &hi, color);
        }
        chart.polyline(&xs, mean, color, 2.0, &[]);
        legend.push((label.clone(), color, vec![]));
    }
    chart.legend(&legend);
    chart.canvas.save(path)
}

/// Sweep trend: metric mean per axis value with ±1 std error bars.
pub fn sweep_plot(
    axis_label: &str,
    values: &[f64],
    means: &[f64],
    stds: &[f64],
    title: &str,
    path: &Path,
) -> Result<(), Error> {
    if values.is_empty() || values.len() != means.len() || values.len() != stds.len() {
        return Err(Error::Data("sweep plot needs equal-length values, means, and stds".into()));
    }
    let xmin = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmax = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ymax = means.iter().zip(stds).map(|(m, s)| m + s).fold(0.0f64, f64::max);
    let span = (xmax - xmin).max(1.0);
    let mut chart = Chart::new(
        720,
        480,
        title,
        axis_label,
        "FINAL-STEP ERROR",
        (xmin - 0.04 * span, xmax + 0.04 * span),
        (0.0, ymax * 1.08 + 1e-12),
    );
    chart.polyline(values, means, PALETTE[0], 2.0, &[]);
    for ((&v, &m), &s) in values.iter().zip(means).zip(stds) {
        let (px, top, bot) = (chart.px(v), chart.py(m + s), chart.py(m - s));
        chart.canvas.stroke(&[(px, top), (px, bot)], PALETTE[0], 1.0, &[]);
        chart.canvas.stroke(&[(px - 4.0, top), (px + 4.0, top)], PALETTE[0], 1.0, &[]);
        chart.canvas.stroke(&[(px - 4.0, bot), (px + 4.0, bot)], PALETTE[0], 1.0, &[]);
        chart.canvas.marker(px, chart.py(m), 3.0, PALETTE[0]);
    }
    chart.canvas.save(path)
}

/// Three-stop sequential colormap from near-black violet to yellow.
pub fn heat_color(v: f64) -> Color {
    let stops: [(f64, Color); 3] =
        [(0.0, [68, 1, 84]), (0.5, [33, 145, 140]), (1.0, [253, 231, 37])];
    let v = v.clamp(0.0, 1.0);
    let (mut lo, mut hi) = (stops[0], stops[2]);
    for w in stops.windows(2) {
        if v >= w[0].0 && v <= w[1].0 {
            lo = w[0];
            hi = w[1];
        }
    }
    let t = if hi.0 > lo.0 { (v - lo.0) / (hi.0 - lo.0) } else { 0.0 };
    let mut c = [0u8; 3];
    for k in 0..3 {
        c[k] = (f64::from(lo.1[k]) + t * (f64::from(hi.1[k]) - f64::from(lo.1[k]))).round() as u8;
    }
    c
}

/// Heatmap of one probability per directed edge (rows) per step (columns).
/// `first_step` is the absolute time index of column 0; `marker_step`, when
/// inside the covered range, draws a vertical line at that absolute step.
pub fn heatmap_plot(
    row_labels: &[String],
    probs: &ndarray::Array2<f64>,
    first_step: usize,
    marker_step: Option<usize>,
    title: &str,
    path: &Path,
) -> Result<(), Error> {
    let (rows, cols) = probs.dim();
    if rows == 0 || cols == 0 || row_labels.len() != rows {
        return Err(Error::Data("heatmap needs labelled non-empty probability rows".into()));
    }
    let cell_w = (900 / cols).clamp(4, 26) as i64;
    let cell_h = (540 / rows).clamp(7, 26) as i64;
    let left = 10 + row_labels.iter().map(|l| text_width(l, 1)).max().unwrap_or(0) + 8;
    let top = 40i64;
    let width = left + cell_w * cols as i64 + 90;
    let height = top + cell_h * rows as i64 + 50;
    let mut canvas = Canvas::new(width as usize, height as usize, WHITE);
    canvas.text_scaled(10, 10, title, BLACK, 2);

    for r in 0..rows {
        let y = top + r as i64 * cell_h;
        canvas.text(10, y + cell_h / 2 - 3, &row_labels[r], BLACK);
        for t in 0..cols {
            canvas.fill_rect(left + t as i64 * cell_w, y, cell_w, cell_h, heat_color(probs[[r, t]]));
        }
    }

    let grid_bottom = top + rows as i64 * cell_h;
    let tick_every = (10usize).max(cols / 12 * 5).max(1);
    for t in (0..cols).step_by(tick_every) {
        let x = left + t as i64 * cell_w;
        canvas.stroke(
            &[(x as f64, grid_bottom as f64), (x as f64, grid_bottom as f64 + 4.0)],
            BLACK,
            1.0,
            &[],
        );
        canvas.text(x - 3, grid_bottom + 8, &format!("{}", first_step + t), BLACK);
    }
    canvas.text(left + cols as i64 * cell_w / 2 - 12, height - 14, "STEP", BLACK);

    if let Some(step) = marker_step {
        if step >= first_step && step < first_step + cols {
            let x = (left + (step - first_step) as i64 * cell_w) as f64;
            canvas.stroke(&[(x, top as f64 - 6.0), (x, grid_bottom as f64 + 6.0)], RED, 2.0, &[]);
            canvas.text(x as i64 - 14, top - 16, &format!("T={step}"), RED);
        }
    }

    let bar_x = left + cols as i64 * cell_w + 18;
    let bar_h = rows as i64 * cell_h;
    for i in 0..bar_h {
        let v = 1.0 - i as f64 / (bar_h - 1).max(1) as f64;
        canvas.fill_rect(bar_x, top + i, 14, 1, heat_color(v));
    }
    canvas.text(bar_x + 18, top - 3, "1.0", BLACK);
    canvas.text(bar_x + 18, top + bar_h - 4, "0.0", BLACK);
    canvas.save(path)
}

/// Scene plot: observed history dashed, ground-truth future solid,
/// predicted future dash-dot, one color per agent, ground line at y = 0.
pub fn overlay_plot(
    history: ArrayView3<'_, f64>,
    truth: ArrayView3<'_, f64>,
    prediction: ArrayView3<'_, f64>,
    title: &str,
    path: &Path,
) -> Result<(), Error> {
    let n = history.dim().1;
    if n == 0 || truth.dim().1 != n || prediction.dim().1 != n {
        return Err(Error::Data("overlay needs matching agent counts across segments".into()));
    }
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = 0.0f64;
    let mut ymax = f64::NEG_INFINITY;
    for arr in [history.view(), truth.view(), prediction.view()] {
        for p in arr.outer_iter() {
            for a in p.outer_iter() {
                xmin = xmin.min(a[0]);
                xmax = xmax.max(a[0]);
                ymin = ymin.min(a[1]);
                ymax = ymax.max(a[1]);
            }
        }
    }
    let pad_x = 0.06 * (xmax - xmin).max(1e-9);
    let pad_y = 0.06 * (ymax - ymin).max(1e-9);
    let mut chart = Chart::new(
        760,
        640,
        title,
        "X",
        "Y",
        (xmin - pad_x, xmax + pad_x),
        (ymin - pad_y, ymax + pad_y),
    );
    let gy = chart.py(0.0);
    chart.canvas.stroke(&[(chart.px(xmin - pad_x), gy), (chart.px(xmax + pad_x), gy)], GRAY, 2.0, &[]);

    let path_of = |arr: &ArrayView3<'_, f64>, agent: usize| -> (Vec<f64>, Vec<f64>) {
        let xs = arr.outer_iter().map(|p| p[[agent, 0]]).collect();
        let ys = arr.outer_iter().map(|p| p[[agent, 1]]).collect();
        (xs, ys)
    };
    for agent in 0..n {
        let color = PALETTE[agent % PALETTE.len()];
        let (hx, hy) = path_of(&history, agent);
        chart.polyline(&hx, &hy, color, 1.0, &[4, 3]);
        let (tx, ty) = path_of(&truth, agent);
        chart.polyline(&tx, &ty, color, 2.0, &[]);
        let (px, py) = path_of(&prediction, agent);
        chart.polyline(&px, &py, color, 1.0, &[7, 3, 1, 3]);
        if let (Some(&x), Some(&y)) = (hx.last(), hy.last()) {
            chart.canvas.marker(chart.px(x), chart.py(y), 3.0, color);
        }
    }
    chart.legend(&[
        ("HISTORY".into(), BLACK, vec![4, 3]),
        ("TRUTH".into(), BLACK, vec![]),
        ("PREDICTION".into(), BLACK, vec![7, 3, 1, 3]),
    ]);
    chart.canvas.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use tempfile::tempdir;

    #[test]
    fn identical_inputs_render_identical_bytes() {
        let dir = tempdir().unwrap();
        let series = vec![
            ("DYNAMIC".to_string(), vec![0.1, 0.2, 0.35, 0.5], Some(vec![0.02, 0.03, 0.05, 0.08])),
            ("STATIC".to_string(), vec![0.12, 0.3, 0.5, 0.9], None),
        ];
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        error_curve_plot(&series, "STATE ERROR", &a).unwrap();
        error_curve_plot(&series, "STATE ERROR", &b).unwrap();
        let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert!(!ba.is_empty());
        assert_eq!(ba, bb);
    }

    #[test]
    fn band_tints_pixels_around_the_mean_line() {
        let dir = tempdir().unwrap();
        let with = dir.path().join("with.png");
        let without = dir.path().join("without.png");
        let mean = vec![0.5, 0.5, 0.5, 0.5];
        error_curve_plot(
            &[("A".into(), mean.clone(), Some(vec![0.2; 4]))],
            "T",
            &with,
        )
        .unwrap();
        error_curve_plot(&[("A".into(), mean, None)], "T", &without).unwrap();
        assert_ne!(std::fs::read(&with).unwrap(), std::fs::read(&without).unwrap());
    }

    #[test]
    fn nice_ticks_are_sorted_round_and_cover_the_range() {
        let ticks = nice_ticks(0.0, 50.0, 8);
        assert!(ticks.windows(2).all(|w| w[0] < w[1]));
        assert!(ticks.first().copied().unwrap() >= 0.0);
        assert!(ticks.last().copied().unwrap() <= 50.0);
        assert!(ticks.len() >= 5);
        let step = ticks[1] - ticks[0];
        let mant = step / 10f64.powf(step.log10().floor());
        assert!([1.0, 2.0, 5.0].iter().any(|m| (mant - m).abs() < 1e-9));
    }

    #[test]
    fn colormap_hits_its_endpoints_and_clamps() {
        assert_eq!(heat_color(0.0), [68, 1, 84]);
        assert_eq!(heat_color(1.0), [253, 231, 37]);
        assert_eq!(heat_color(-3.0), heat_color(0.0));
        assert_eq!(heat_color(7.0), heat_color(1.0));
        let mid = heat_color(0.5);
        assert_eq!(mid, [33, 145, 140]);
    }

    #[test]
    fn heatmap_marker_draws_only_inside_the_covered_range() {
        let dir = tempdir().unwrap();
        let labels: Vec<String> = (0..4).map(|i| format!("E{i}")).collect();
        let probs = ndarray::Array2::from_elem((4, 30), 0.5);
        let marked = dir.path().join("m.png");
        let outside = dir.path().join("o.png");
        let none = dir.path().join("n.png");
        heatmap_plot(&labels, &probs, 20, Some(35), "EDGES", &marked).unwrap();
        heatmap_plot(&labels, &probs, 20, Some(5), "EDGES", &outside).unwrap();
        heatmap_plot(&labels, &probs, 20, None, "EDGES", &none).unwrap();
        assert_ne!(std::fs::read(&marked).unwrap(), std::fs::read(&none).unwrap());
        assert_eq!(std::fs::read(&outside).unwrap(), std::fs::read(&none).unwrap());
    }

    #[test]
    fn overlay_renders_and_rejects_mismatched_agents() {
        let dir = tempdir().unwrap();
        let hist = Array3::from_shape_fn((5, 3, 2), |(t, a, d)| t as f64 * 0.1 + a as f64 + d as f64);
        let fut = Array3::from_shape_fn((7, 3, 2), |(t, a, d)| 0.5 + t as f64 * 0.1 + a as f64 + d as f64);
        let out = dir.path().join("scene.png");
        overlay_plot(hist.view(), fut.view(), fut.view(), "SCENE", &out).unwrap();
        assert!(out.exists());
        let bad = Array3::zeros((7, 2, 2));
        let err = overlay_plot(hist.view(), fut.view(), bad.view(), "S", &out);
        assert!(err.is_err());
    }

    #[test]
    fn sweep_plot_rejects_ragged_inputs() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("sweep.png");
        sweep_plot("GAP", &[1.0, 5.0, 10.0], &[0.2, 0.3, 0.4], &[0.01, 0.02, 0.02], "SWEEP", &out)
            .unwrap();
        assert!(out.exists());
        let err = sweep_plot("GAP", &[1.0], &[0.2, 0.3], &[0.0], "SWEEP", &out);
        assert!(err.is_err());
    }

    #[test]
    fn text_renders_visible_pixels() {
        let mut canvas = Canvas::new(100, 20, WHITE);
        canvas.text(2, 2, "ADE 0.25%", BLACK);
        let dark = canvas.pixels.chunks_exact(3).filter(|p| p[0] < 128).count();
        assert!(dark > 30, "only {dark} dark pixels");
    }
}
