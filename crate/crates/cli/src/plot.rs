//! Static grouped bar charts for metrics in [0, 1].
//!
//! Groups run left to right (folds or variants); within a group, bars are
//! coloured by series in the order given. Horizontal rules mark 0.25 steps.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

const MARGIN: u32 = 24;
const PLOT_H: u32 = 240;
const BAR_W: u32 = 10;
const GROUP_GAP: u32 = 14;

/// `groups[g][s]` is series `s` in group `g`; values are clamped to [0, 1].
pub fn grouped_bars(groups: &[Vec<f64>]) -> RgbImage {
    let series = groups.iter().map(Vec::len).max().unwrap_or(1).max(1) as u32;
    let group_w = series * BAR_W + GROUP_GAP;
    let width = 2 * MARGIN + groups.len().max(1) as u32 * group_w;
    let height = 2 * MARGIN + PLOT_H;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let y_of = |v: f64| MARGIN + PLOT_H - (v.clamp(0.0, 1.0) * PLOT_H as f64).round() as u32;

    for q in 0..=4 {
        let y = y_of(q as f64 / 4.0);
        let shade = if q == 0 { 0 } else { 215 };
        for x in MARGIN..width - MARGIN {
            img.put_pixel(x, y, Rgb([shade; 3]));
        }
    }
    for y in MARGIN..=MARGIN + PLOT_H {
        img.put_pixel(MARGIN, y, Rgb([0; 3]));
    }
    for (g, values) in groups.iter().enumerate() {
        let x0 = MARGIN + GROUP_GAP / 2 + g as u32 * group_w;
        for (s, &v) in values.iter().enumerate() {
            let colour = Rgb(PALETTE[s % PALETTE.len()]);
            let top = y_of(v);
            let left = x0 + s as u32 * BAR_W;
            for x in left + 1..left + BAR_W {
                for y in top..MARGIN + PLOT_H {
                    img.put_pixel(x, y, colour);
                }
            }
        }
    }
    img
}

pub fn png_bytes(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("in-memory PNG encoding");
    buf.into_inner()
}
