//! Sprite rendering under swappable visual themes.

use serde::{Deserialize, Serialize};

use super::{ColorId, ContainerKind, Location, Scene, ShapeId, ThemeId};
use crate::error::{Error, Result};

/// Side length of one grid cell in pixels.
pub const CELL_PX: usize = 8;

const MASK_PX: usize = 6;

// 6x6 masks drawn at offset (1, 1) inside a cell.
const MASKS: [[&str; MASK_PX]; 10] = [
    // block
    ["......", ".####.", ".####.", ".####.", ".####.", "......"],
    // star
    ["..##..", "#.##.#", ".####.", ".####.", "#.##.#", "..##.."],
    // ring
    ["######", "#....#", "#....#", "#....#", "#....#", "######"],
    // heart
    [".#..#.", "######", "######", ".####.", "..##..", "......"],
    // triangle
    ["..##..", "..##..", ".####.", ".####.", "######", "######"],
    // diamond
    ["..##..", ".####.", "######", "######", ".####.", "..##.."],
    // cross
    ["..##..", "..##..", "######", "######", "..##..", "..##.."],
    // flower
    [".#..#.", "######", ".#..#.", ".#..#.", "######", ".#..#."],
    // moon
    ["..###.", ".##...", "##....", "##....", ".##...", "..###."],
    // spiral
    ["######", "#.....", "#.###.", "#.#.#.", "#...#.", "#####."],
];

const PALETTE: [[u8; 3]; 9] = [
    [220, 40, 40],   // red
    [40, 170, 60],   // green
    [50, 80, 220],   // blue
    [235, 210, 30],  // yellow
    [30, 205, 215],  // cyan
    [150, 60, 190],  // purple
    [245, 140, 20],  // orange
    [240, 120, 190], // pink
    [130, 80, 35],   // brown
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stripes {
    Horizontal(usize),
    Vertical(usize),
    Diagonal(usize),
    Checker(usize),
}

impl Stripes {
    fn on(self, y: usize, x: usize) -> bool {
        match self {
            Stripes::Horizontal(p) => y.is_multiple_of(p),
            Stripes::Vertical(p) => x.is_multiple_of(p),
            Stripes::Diagonal(p) => (x + y).is_multiple_of(p),
            Stripes::Checker(p) => (x / p + y / p).is_multiple_of(2),
        }
    }
}

/// Background palette and table texture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theme {
    pub background: [u8; 3],
    pub stripe: [u8; 3],
    pub stripes: Stripes,
}

/// The configured theme table. Ids 0-2 are the training themes, id 3 is the
/// held-out environment.
pub const THEMES: [Theme; 4] = [
    Theme {
        background: [200, 200, 200],
        stripe: [180, 180, 180],
        stripes: Stripes::Horizontal(4),
    },
    Theme {
        background: [215, 200, 170],
        stripe: [195, 180, 150],
        stripes: Stripes::Vertical(4),
    },
    Theme {
        background: [185, 195, 210],
        stripe: [165, 175, 195],
        stripes: Stripes::Horizontal(3),
    },
    Theme {
        background: [175, 190, 165],
        stripe: [160, 150, 140],
        stripes: Stripes::Diagonal(4),
    },
];

/// A rendered RGB image with intensities stored as `u8 / 255`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub height: usize,
    pub width: usize,
    pub theme: ThemeId,
    /// Row-major `height x width x 3` bytes, base64 in serialized form.
    #[serde(with = "crate::util::base64_bytes")]
    pub pixels: Vec<u8>,
}

impl Observation {
    pub fn rgb(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Intensity in `[0, 1]`.
    pub fn value(&self, y: usize, x: usize, channel: usize) -> f64 {
        f64::from(self.pixels[(y * self.width + x) * 3 + channel]) / 255.0
    }

    pub fn rows(&self) -> usize {
        self.height / CELL_PX
    }

    pub fn cols(&self) -> usize {
        self.width / CELL_PX
    }
}

/// Renders scenes. The default renderer draws object sprites identically in
/// every theme; the strong-shift renderer additionally rotates object hues in
/// the held-out theme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Renderer {
    pub themes: [Theme; 4],
    pub strong_shift: bool,
    pub shifted_theme: ThemeId,
    pub hue_rotation_deg: f64,
}

impl Default for Renderer {
    fn default() -> Self {
        Renderer {
            themes: THEMES,
            strong_shift: false,
            shifted_theme: 3,
            hue_rotation_deg: 20.0,
        }
    }
}

/// Renders with the default renderer.
pub fn render(scene: &Scene, theme: ThemeId) -> Result<Observation> {
    Renderer::default().render(scene, theme)
}

impl Renderer {
    pub fn strong() -> Self {
        Renderer {
            strong_shift: true,
            ..Renderer::default()
        }
    }

    fn color(&self, color: ColorId, theme: ThemeId) -> [u8; 3] {
        let rgb = PALETTE[color as usize];
        if self.strong_shift && theme == self.shifted_theme {
            rotate_hue(rgb, self.hue_rotation_deg)
        } else {
            rgb
        }
    }

    pub fn render(&self, scene: &Scene, theme_id: ThemeId) -> Result<Observation> {
        let theme = self
            .themes
            .get(theme_id as usize)
            .ok_or_else(|| Error::Config(format!("unknown theme {theme_id}")))?;
        let height = scene.rows * CELL_PX;
        let width = scene.cols * CELL_PX;
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                let rgb = if theme.stripes.on(y, x) {
                    theme.stripe
                } else {
                    theme.background
                };
                pixels.extend_from_slice(&rgb);
            }
        }
        let mut obs = Observation {
            height,
            width,
            theme: theme_id,
            pixels,
        };

        for c in &scene.containers {
            let (oy, ox) = (c.cell.row * CELL_PX, c.cell.col * CELL_PX);
            let rgb = self.color(c.color, theme_id);
            for dy in 0..CELL_PX {
                for dx in 0..CELL_PX {
                    let border = dy == 0 || dx == 0 || dy == CELL_PX - 1 || dx == CELL_PX - 1;
                    if c.kind == ContainerKind::Box || border {
                        put(&mut obs, oy + dy, ox + dx, rgb);
                    }
                }
            }
            if let Some(top) = scene.top_of(c.id) {
                self.draw_shape(&mut obs, c.cell.row, c.cell.col, top.shape, top.color);
            }
        }
        for o in &scene.objects {
            if let Location::Table(cell) = o.location {
                self.draw_shape(&mut obs, cell.row, cell.col, o.shape, o.color);
            }
        }
        Ok(obs)
    }

    fn draw_shape(
        &self,
        obs: &mut Observation,
        row: usize,
        col: usize,
        shape: ShapeId,
        color: ColorId,
    ) {
        let rgb = self.color(color, obs.theme);
        let (oy, ox) = (row * CELL_PX + 1, col * CELL_PX + 1);
        for (dy, line) in MASKS[shape as usize].iter().enumerate() {
            for (dx, ch) in line.bytes().enumerate() {
                if ch == b'#' {
                    put(obs, oy + dy, ox + dx, rgb);
                }
            }
        }
    }
}

/// Pixel mask of every sprite pixel (containers and objects) of a scene.
/// Used to separate sprite pixels from theme pixels.
pub fn sprite_mask(scene: &Scene) -> Vec<bool> {
    let width = scene.cols * CELL_PX;
    let mut mask = vec![false; scene.rows * CELL_PX * width];
    let mark_shape = |mask: &mut Vec<bool>, row: usize, col: usize, shape: ShapeId| {
        for (dy, line) in MASKS[shape as usize].iter().enumerate() {
            for (dx, ch) in line.bytes().enumerate() {
                if ch == b'#' {
                    mask[(row * CELL_PX + 1 + dy) * width + col * CELL_PX + 1 + dx] = true;
                }
            }
        }
    };
    for c in &scene.containers {
        for dy in 0..CELL_PX {
            for dx in 0..CELL_PX {
                let border = dy == 0 || dx == 0 || dy == CELL_PX - 1 || dx == CELL_PX - 1;
                if c.kind == ContainerKind::Box || border {
                    mask[(c.cell.row * CELL_PX + dy) * width + c.cell.col * CELL_PX + dx] = true;
                }
            }
        }
        if let Some(top) = scene.top_of(c.id) {
            mark_shape(&mut mask, c.cell.row, c.cell.col, top.shape);
        }
    }
    for o in &scene.objects {
        if let Location::Table(cell) = o.location {
            mark_shape(&mut mask, cell.row, cell.col, o.shape);
        }
    }
    mask
}

fn put(obs: &mut Observation, y: usize, x: usize, rgb: [u8; 3]) {
    let i = (y * obs.width + x) * 3;
    obs.pixels[i..i + 3].copy_from_slice(&rgb);
}

fn rotate_hue(rgb: [u8; 3], degrees: f64) -> [u8; 3] {
    let [r, g, b] = rgb.map(|v| f64::from(v) / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let mut hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    hue = (hue + degrees).rem_euclid(360.0);

    let c = max * sat;
    let h = hue / 60.0;
    let x = c * (1.0 - (h.rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = max - c;
    [r1, g1, b1].map(|v| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}
