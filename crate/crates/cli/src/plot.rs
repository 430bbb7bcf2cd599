use image::{Rgb, RgbImage};

const HEIGHT: u32 = 240;
const MARGIN: u32 = 20;
const BAR: u32 = 14;
const GROUP_GAP: u32 = 18;
const PALETTE: [[u8; 3]; 4] = [[52, 101, 164], [245, 121, 0], [78, 154, 6], [117, 80, 123]];

/// Bar chart of per-head values, one group per scale (the label part before
/// `_`) and one coloured bar per statistic in group order. Horizontal guide
/// lines mark 0, 0.5 and 1; the vertical range always covers [0, 1].
pub fn bar_plot(values: &[(String, f64)]) -> RgbImage {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for (label, v) in values {
        let key = label.split('_').next().unwrap_or(label).to_string();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, vs)) => vs.push(*v),
            None => groups.push((key, vec![*v])),
        }
    }
    let widest = groups.iter().map(|(_, v)| v.len() as u32).max().unwrap_or(1);
    let width = 2 * MARGIN + groups.len() as u32 * (widest * BAR + GROUP_GAP);
    let lo = values.iter().map(|(_, v)| *v).fold(0.0, f64::min);
    let hi = values.iter().map(|(_, v)| *v).fold(1.0, f64::max);
    let plot_h = (HEIGHT - 2 * MARGIN) as f64;
    let y_of = |v: f64| MARGIN + ((hi - v.clamp(lo, hi)) / (hi - lo) * plot_h).round() as u32;

    let mut img = RgbImage::from_pixel(width, HEIGHT, Rgb([255, 255, 255]));
    for (guide, shade) in [(0.0, 120), (0.5, 200), (1.0, 200)] {
        let y = y_of(guide);
        for x in MARGIN / 2..width - MARGIN / 2 {
            img.put_pixel(x, y, Rgb([shade; 3]));
        }
    }
    let zero = y_of(0.0);
    for (g, (_, vs)) in groups.iter().enumerate() {
        let left = MARGIN + GROUP_GAP / 2 + g as u32 * (widest * BAR + GROUP_GAP);
        for (i, &v) in vs.iter().enumerate() {
            let colour = Rgb(PALETTE[i % PALETTE.len()]);
            let y = y_of(v);
            let (top, bottom) = if y <= zero { (y, zero) } else { (zero, y) };
            let x0 = left + i as u32 * BAR;
            for x in x0 + 1..x0 + BAR - 1 {
                for yy in top..=bottom {
                    img.put_pixel(x, yy, colour);
                }
            }
        }
    }
    img
}
