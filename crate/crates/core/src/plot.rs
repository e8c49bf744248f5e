//! PNG rendering of loss traces and level-set grids, plus parsers for the
//! two CSV formats.
//!
//! Rendering is pure integer rasterization, so the same input always yields
//! the same bytes.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{GridSpec, LevelSetGrid};
use crate::train::{smooth, TRACE_HEADER};

/// Moving-average window of the smoothed loss overlay.
pub const SMOOTH_WINDOW: usize = 50;

/// One row of a trace CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: u64,
    pub loss: f64,
    pub wall_ms: f64,
    pub grad_norm: f64,
    pub param_norm: f64,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| parse_err(line, format!("`{field}` is not a number")))
}

/// Lines with 1-based numbers, skipping a trailing empty line.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r'))).filter(|(_, l)| !l.is_empty())
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = numbered_lines(text);
    match lines.next() {
        Some((_, h)) if h == TRACE_HEADER => {}
        Some((n, h)) => return Err(parse_err(n, format!("expected header `{TRACE_HEADER}`, found `{h}`"))),
        None => return Err(parse_err(1, "empty trace file")),
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(parse_err(n, format!("expected 5 fields, found {}", f.len())));
        }
        let iter =
            f[0].trim().parse::<u64>().map_err(|_| parse_err(n, format!("`{}` is not an iteration number", f[0])))?;
        if let Some(prev) = rows.last().map(|r: &TraceRow| r.iter) {
            if iter <= prev {
                return Err(parse_err(n, format!("iteration {iter} does not follow {prev}")));
            }
        }
        rows.push(TraceRow {
            iter,
            loss: parse_f64(f[1], n)?,
            wall_ms: parse_f64(f[2], n)?,
            grad_norm: parse_f64(f[3], n)?,
            param_norm: parse_f64(f[4], n)?,
        });
    }
    Ok(rows)
}

/// Parses the CSV written by [`LevelSetGrid::to_csv`]; the grid extent is
/// recovered from the cell centers.
pub fn parse_grid_csv(text: &str) -> Result<LevelSetGrid> {
    let mut lines = numbered_lines(text);
    let (hn, header) = lines.next().ok_or_else(|| parse_err(1, "empty grid file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "x" || cols[1] != "y" {
        return Err(parse_err(hn, "expected header `x,y,<channel>...`"));
    }
    let names: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut channels = vec![Vec::new(); names.len()];
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(parse_err(n, format!("expected {} fields, found {}", cols.len(), f.len())));
        }
        xs.push(parse_f64(f[0], n)?);
        ys.push(parse_f64(f[1], n)?);
        for (c, v) in channels.iter_mut().zip(&f[2..]) {
            c.push(parse_f64(v, n)?);
        }
    }
    let distinct = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<BTreeSet<_>>().len();
    let (nx, ny) = (distinct(&xs), distinct(&ys));
    if xs.is_empty() || nx * ny != xs.len() {
        return Err(parse_err(hn, format!("{} rows do not form a full grid", xs.len())));
    }
    let extent = |first: f64, last: f64, n: usize| {
        let step = if n > 1 { (last - first) / (n - 1) as f64 } else { 1.0 };
        (first - step / 2.0, last + step / 2.0)
    };
    let (x_min, x_max) = extent(xs[0], xs[nx - 1], nx);
    let (y_min, y_max) = extent(ys[0], ys[xs.len() - 1], ny);
    Ok(LevelSetGrid { grid: GridSpec { x_min, x_max, y_min, y_max, nx, ny }, names, channels, sigmas: Vec::new() })
}

/// 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Self { width, height, rgb: fill.repeat(width * height) }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            let i = 3 * (y as usize * self.width + x as usize);
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    pub fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, c);
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

    pub fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: [u8; 3]) {
        self.line((x0, y0), (x1, y0), c);
        self.line((x1, y0), (x1, y1), c);
        self.line((x1, y1), (x0, y1), c);
        self.line((x0, y1), (x0, y0), c);
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| Error::Format(format!("png: {e}")))?;
            w.write_image_data(&self.rgb).map_err(|e| Error::Format(format!("png: {e}")))?;
        }
        Ok(out)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_png()?).map_err(|e| Error::io(path, e))
    }
}

const WHITE: [u8; 3] = [255, 255, 255];
const BLACK: [u8; 3] = [0, 0, 0];
const GREY: [u8; 3] = [190, 190, 190];
const LIGHT: [u8; 3] = [235, 235, 235];
const BLUE: [u8; 3] = [31, 90, 180];

/// Raw loss in grey with the `SMOOTH_WINDOW` moving average on top.
pub fn render_loss_plot(rows: &[TraceRow]) -> Result<Image> {
    if rows.is_empty() {
        return Err(Error::contract("trace has no rows to plot"));
    }
    let (w, h, margin) = (800i64, 400i64, 30i64);
    let mut img = Image::new(w as usize, h as usize, WHITE);
    let losses: Vec<f64> = rows.iter().map(|r| r.loss).collect();
    let smoothed = smooth(&losses, SMOOTH_WINDOW);
    let lo = losses.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
    let mut hi = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let (i0, i1) = (rows[0].iter as f64, rows[rows.len() - 1].iter as f64);
    let span = if i1 > i0 { i1 - i0 } else { 1.0 };
    let (pw, ph) = ((w - 2 * margin) as f64, (h - 2 * margin) as f64);
    let px = |it: u64| margin + ((it as f64 - i0) / span * pw).round() as i64;
    let py = |v: f64| h - margin - ((v - lo) / (hi - lo) * ph).round() as i64;

    for t in 1..5 {
        let y = margin + (ph * t as f64 / 5.0).round() as i64;
        img.line((margin, y), (w - margin, y), LIGHT);
    }
    if lo < 0.0 {
        img.line((margin, py(0.0)), (w - margin, py(0.0)), GREY);
    }
    for series in [(&losses, GREY), (&smoothed, BLUE)] {
        let (vals, c) = series;
        let mut prev = (px(rows[0].iter), py(vals[0]));
        img.put(prev.0, prev.1, c);
        for (r, &v) in rows.iter().zip(vals.iter()).skip(1) {
            let p = (px(r.iter), py(v));
            img.line(prev, p, c);
            prev = p;
        }
    }
    img.rect(margin, margin, w - margin, h - margin, BLACK);
    Ok(img)
}

/// Diverging blue–white–red color for `t ∈ [-1, 1]`.
fn diverging(t: f64) -> [u8; 3] {
    let t = t.clamp(-1.0, 1.0);
    let mix = |a: f64, b: f64, s: f64| (a + (b - a) * s).round() as u8;
    if t >= 0.0 {
        [255, mix(255.0, 40.0, t), mix(255.0, 40.0, t)]
    } else {
        [mix(255.0, 40.0, -t), mix(255.0, 90.0, -t), 255]
    }
}

/// One panel per channel, side by side. Each channel is scaled by its own
/// `max |value|`, so zero is white in every panel; `+y` points up.
pub fn render_heatmap(grid: &LevelSetGrid) -> Result<Image> {
    let (nx, ny) = (grid.grid.nx, grid.grid.ny);
    let cells = nx * ny;
    if grid.channels.is_empty() || grid.channels.iter().any(|c| c.len() != cells) {
        return Err(Error::contract("grid channels do not match the grid size"));
    }
    let gap = 4;
    let panels = grid.channels.len();
    let mut img = Image::new(panels * nx + (panels + 1) * gap, ny + 2 * gap, WHITE);
    for (p, ch) in grid.channels.iter().enumerate() {
        let scale = ch.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let x0 = gap + p * (nx + gap);
        for j in 0..ny {
            for i in 0..nx {
                let v = ch[j * nx + i];
                let t = if scale > 0.0 { v / scale } else { 0.0 };
                img.put((x0 + i) as i64, (gap + ny - 1 - j) as i64, diverging(t));
            }
        }
        img.rect(x0 as i64 - 1, gap as i64 - 1, (x0 + nx) as i64, (gap + ny) as i64, BLACK);
    }
    Ok(img)
}

/// Renders a trace CSV or a grid CSV (chosen by its header) to a PNG file.
pub fn plot_file(input: impl AsRef<Path>, output: impl AsRef<Path>) -> Result<Image> {
    let input = input.as_ref();
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let img = if text.starts_with("iter,") {
        render_loss_plot(&parse_trace_csv(&text)?)?
    } else {
        render_heatmap(&parse_grid_csv(&text)?)?
    };
    img.save_png(output)?;
    Ok(img)
}
