//! Grayscale rendering of a filter bank.
//!
//! Each filter becomes `1 + C` cells of `K x K` pixels placed side by side:
//! first the per-position standard deviation across channels (black = 0,
//! white = the largest such deviation in the bank), then one cell per
//! channel with weights mapped linearly so that `-max|w|` is black, 0 is gray
//! (128) and `+max|w|` is white. Both maxima are taken over the whole bank.
//! Filters are laid out row-major by descending L1 norm.
//!
//! Pixel values use round-half-away-from-zero:
//! `sigma -> round(255 * sigma / max_sigma)` and
//! `w -> clamp(round(127.5 + 127.5 * w / max_abs), 0, 255)`.

use std::fs;
use std::path::Path;

use crate::lifecycle::{rank_by_l1, FilterBank};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub columns: usize,
    /// Nearest-neighbour magnification of each kernel pixel.
    pub magnify: usize,
    /// White pixels between the cells of one filter.
    pub gutter: usize,
    /// White pixels between filters and around the border.
    pub filter_gap: usize,
}

impl Default for GridLayout {
    fn default() -> Self {
        GridLayout {
            columns: 4,
            magnify: 8,
            gutter: 1,
            filter_gap: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterGridImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub layout: GridLayout,
}

pub const BACKGROUND: u8 = 255;

fn position_std<T: Real>(filter: &[T], channels: usize, area: usize, pos: usize) -> f64 {
    let vals: Vec<f64> = (0..channels).map(|c| filter[c * area + pos].as_f64()).collect();
    let mean = vals.iter().sum::<f64>() / channels as f64;
    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / channels as f64).sqrt()
}

/// `(max |w|, max per-position channel std)` over the whole bank.
pub fn bank_maxima<T: Real>(bank: &FilterBank<T>) -> (f64, f64) {
    let area = bank.kernel_size() * bank.kernel_size();
    let max_abs = bank
        .weights()
        .data()
        .iter()
        .fold(0.0f64, |m, w| m.max(w.as_f64().abs()));
    let max_std = bank
        .filters()
        .flat_map(|f| (0..area).map(move |p| position_std(f, bank.channels(), area, p)))
        .fold(0.0f64, f64::max);
    (max_abs, max_std)
}

pub fn sigma_pixel(sigma: f64, max_std: f64) -> u8 {
    if max_std <= 0.0 {
        return 0;
    }
    (255.0 * sigma / max_std).round().clamp(0.0, 255.0) as u8
}

pub fn weight_pixel(w: f64, max_abs: f64) -> u8 {
    if max_abs <= 0.0 {
        return 128;
    }
    (127.5 + 127.5 * w / max_abs).round().clamp(0.0, 255.0) as u8
}

/// The `1 + C` cells of filter `i`, each `K*K` row-major gray values.
pub fn render_filter<T: Real>(bank: &FilterBank<T>, i: usize, max_abs: f64, max_std: f64) -> Vec<Vec<u8>> {
    let area = bank.kernel_size() * bank.kernel_size();
    let channels = bank.channels();
    let f = bank.filter(i);
    let mut cells = Vec::with_capacity(1 + channels);
    cells.push(
        (0..area)
            .map(|p| sigma_pixel(position_std(f, channels, area, p), max_std))
            .collect(),
    );
    for c in 0..channels {
        cells.push(
            f[c * area..(c + 1) * area]
                .iter()
                .map(|w| weight_pixel(w.as_f64(), max_abs))
                .collect(),
        );
    }
    cells
}

pub fn render_bank<T: Real>(bank: &FilterBank<T>, layout: &GridLayout) -> FilterGridImage {
    let layout = GridLayout {
        columns: layout.columns.max(1),
        magnify: layout.magnify.max(1),
        ..*layout
    };
    let k = bank.kernel_size();
    let n_cells = 1 + bank.channels();
    let cell = k * layout.magnify;
    let filter_w = n_cells * cell + (n_cells - 1) * layout.gutter;
    let rows = bank.len().div_ceil(layout.columns);
    let width = layout.columns * filter_w + (layout.columns + 1) * layout.filter_gap;
    let height = rows * cell + (rows + 1) * layout.filter_gap;
    let mut pixels = vec![BACKGROUND; width * height];

    let (max_abs, max_std) = bank_maxima(bank);
    for (slot, &fi) in rank_by_l1(bank).iter().enumerate() {
        let (row, col) = (slot / layout.columns, slot % layout.columns);
        let y0 = layout.filter_gap + row * (cell + layout.filter_gap);
        let x0 = layout.filter_gap + col * (filter_w + layout.filter_gap);
        for (ci, values) in render_filter(bank, fi, max_abs, max_std).iter().enumerate() {
            let cx = x0 + ci * (cell + layout.gutter);
            for y in 0..cell {
                for x in 0..cell {
                    let v = values[(y / layout.magnify) * k + x / layout.magnify];
                    pixels[(y0 + y) * width + cx + x] = v;
                }
            }
        }
    }
    FilterGridImage {
        width,
        height,
        pixels,
        layout,
    }
}

/// Binary PGM: `P5\n<width> <height>\n255\n` followed by the raw bytes.
pub fn encode_pgm(img: &FilterGridImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_image(img: &FilterGridImage, path: &Path) -> std::io::Result<()> {
    fs::write(path, encode_pgm(img))
}

/// Parses a binary PGM with maxval 255 into `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format!("unsupported PGM magic {:?}", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad PGM header field {s:?}"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    pos += 1;
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != w * h {
        return Err(format!("expected {} pixel bytes, found {}", w * h, body.len()));
    }
    Ok((w, h, body.to_vec()))
}
