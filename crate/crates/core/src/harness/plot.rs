//! Grouped bar charts rendered straight to PNG, labeled with a 3x5 bitmap
//! font. Enough for report figures without a plotting stack.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const PALETTE: [[u8; 3]; 4] = [[70, 110, 190], [230, 140, 40], [80, 170, 90], [190, 70, 80]];
const INK: Rgb<u8> = Rgb([30, 30, 30]);
const GRID: Rgb<u8> = Rgb([220, 220, 220]);
const TEXT_SCALE: u32 = 2;
const GLYPH_W: u32 = 4 * TEXT_SCALE;

fn glyph(c: char) -> [u8; 5] {
    // Rows of three bits, most significant bit on the left.
    match c.to_ascii_uppercase() {
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
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [3, 4, 5, 5, 3],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 2],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'Q' => [2, 5, 5, 6, 3],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        ':' => [0, 2, 0, 2, 0],
        '/' => [1, 1, 2, 4, 4],
        _ => [0; 5],
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn fill(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    for y in y0.min(y1)..y0.max(y1) {
        for x in x0.min(x1)..x0.max(x1) {
            put(img, x, y, color);
        }
    }
}

fn text(img: &mut RgbImage, x: i64, y: i64, s: &str) {
    let k = TEXT_SCALE as i64;
    for (i, c) in s.chars().enumerate() {
        let ox = x + i as i64 * GLYPH_W as i64;
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..3 {
                if bits >> (2 - col) & 1 == 1 {
                    fill(
                        img,
                        ox + col * k,
                        y + row as i64 * k,
                        ox + (col + 1) * k,
                        y + (row as i64 + 1) * k,
                        INK,
                    );
                }
            }
        }
    }
}

fn text_width(s: &str) -> i64 {
    (s.chars().count() as u32 * GLYPH_W) as i64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub label: String,
    /// One value per series.
    pub values: Vec<f64>,
    /// Optional (min, max) whiskers per series.
    pub ranges: Vec<Option<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_max: f64,
    pub series: Vec<String>,
    pub groups: Vec<Group>,
}

impl BarChart {
    pub fn render(&self) -> Result<RgbImage> {
        let n_series = self.series.len().max(1) as i64;
        if self
            .groups
            .iter()
            .any(|g| g.values.len() != self.series.len())
        {
            return Err(Error::Contract(
                "every group needs one value per series".into(),
            ));
        }
        if !(self.y_max > 0.0) {
            return Err(Error::Contract("y_max must be positive".into()));
        }
        let bar = 18i64;
        let group_w = bar * n_series + 24;
        let label_w = self
            .groups
            .iter()
            .map(|g| text_width(&g.label))
            .max()
            .unwrap_or(0);
        let group_w = group_w.max(label_w + 8);
        let (left, top, plot_h) = (60i64, 60i64, 260i64);
        let width = (left + 20 + group_w * self.groups.len().max(1) as i64)
            .max(text_width(&self.title) + 40);
        let height = top + plot_h + 50;
        let mut img = RgbImage::from_pixel(width as u32, height as u32, Rgb([255, 255, 255]));

        text(&mut img, 20, 14, &self.title);
        let mut lx = 20;
        for (i, name) in self.series.iter().enumerate() {
            fill(
                &mut img,
                lx,
                36,
                lx + 10,
                46,
                Rgb(PALETTE[i % PALETTE.len()]),
            );
            text(&mut img, lx + 14, 36, name);
            lx += 14 + text_width(name) + 20;
        }

        let base = top + plot_h;
        let y_of =
            |v: f64| base - ((v / self.y_max).clamp(0.0, 1.0) * plot_h as f64).round() as i64;
        for tick in 0..=4 {
            let v = self.y_max * tick as f64 / 4.0;
            let y = y_of(v);
            fill(&mut img, left, y, width - 10, y + 1, GRID);
            let s = format!("{v:.2}");
            text(&mut img, left - 8 - text_width(&s), y - 5, &s);
        }
        fill(&mut img, left, top, left + 1, base + 1, INK);
        fill(&mut img, left, base, width - 10, base + 1, INK);

        for (gi, g) in self.groups.iter().enumerate() {
            let gx = left + 12 + gi as i64 * group_w;
            for (si, &v) in g.values.iter().enumerate() {
                let x0 = gx + si as i64 * bar;
                if v.is_finite() {
                    fill(
                        &mut img,
                        x0,
                        y_of(v),
                        x0 + bar - 3,
                        base,
                        Rgb(PALETTE[si % PALETTE.len()]),
                    );
                }
                if let Some(Some((lo, hi))) = g.ranges.get(si) {
                    let cx = x0 + (bar - 3) / 2;
                    fill(&mut img, cx, y_of(*hi), cx + 1, y_of(*lo) + 1, INK);
                    fill(&mut img, cx - 3, y_of(*hi), cx + 4, y_of(*hi) + 1, INK);
                    fill(&mut img, cx - 3, y_of(*lo), cx + 4, y_of(*lo) + 1, INK);
                }
            }
            text(&mut img, gx, base + 10, &g.label);
        }
        Ok(img)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.render()?
            .save(path.as_ref())
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bars_are_drawn_to_scale() {
        let chart = BarChart {
            title: "T".into(),
            y_max: 1.0,
            series: vec!["A".into()],
            groups: vec![Group {
                label: "G".into(),
                values: vec![0.5],
                ranges: vec![None],
            }],
        };
        let img = chart.render().unwrap();
        // Bar of the first series: half of the 260-pixel plot height.
        let x = 60 + 12 + 5;
        let colored = (0..img.height())
            .filter(|&y| img.get_pixel(x, y).0 == PALETTE[0])
            .count();
        assert_eq!(colored, 130);
    }

    #[test]
    fn mismatched_groups_are_rejected() {
        let chart = BarChart {
            title: String::new(),
            y_max: 1.0,
            series: vec!["A".into(), "B".into()],
            groups: vec![Group {
                label: String::new(),
                values: vec![0.5],
                ranges: vec![],
            }],
        };
        assert!(chart.render().is_err());
    }
}
