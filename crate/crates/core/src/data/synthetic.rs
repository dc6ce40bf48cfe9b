use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ImageDataset;
use crate::augment::RasterImage;
use crate::error::{Error, Result};
use crate::rng;

/// Class colors for color-class data. Entries `2i` and `2i + 1` are
/// complements, so inverting an image swaps those two classes.
pub const COLOR_TABLE: [(&str, [f64; 3]); 6] = [
    ("red", [1.0, 0.0, 0.0]),
    ("cyan", [0.0, 1.0, 1.0]),
    ("green", [0.0, 1.0, 0.0]),
    ("magenta", [1.0, 0.0, 1.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("yellow", [1.0, 1.0, 0.0]),
];

const SHAPES: [&str; 8] = ["disc", "square", "cross", "hbar", "vbar", "ring", "triangle", "diamond"];

/// Background gray; a fixed point of inversion.
const BACKGROUND: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// The class is the shape; the color is random.
    Shape,
    /// The class is the color; the shape is random.
    Color,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub classes: usize,
    pub size: usize,
    pub per_class: usize,
    pub noise: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let max = match self.kind {
            SyntheticKind::Shape => SHAPES.len(),
            SyntheticKind::Color => COLOR_TABLE.len(),
        };
        if self.classes < 2 || self.classes > max {
            return Err(Error::invalid(format!("synthetic {:?} data supports 2..={max} classes, got {}", self.kind, self.classes)));
        }
        if self.kind == SyntheticKind::Color && !self.classes.is_multiple_of(2) {
            return Err(Error::invalid("color-class data needs an even class count so inversion stays inside the table"));
        }
        if self.size < 8 || self.per_class == 0 || !(self.noise >= 0.0) {
            return Err(Error::invalid(format!("invalid synthetic spec {self}")));
        }
        Ok(())
    }

    /// Class index of the color that inversion maps class `c` to.
    pub fn inverted_class(c: usize) -> usize {
        c ^ 1
    }
}

impl fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            SyntheticKind::Shape => "shape",
            SyntheticKind::Color => "color",
        };
        write!(
            f,
            "{kind},k={},size={},per_class={},noise={}",
            self.classes, self.size, self.per_class, self.noise
        )
    }
}

/// Parses `shape|color[,k=N][,size=N][,per_class=N][,noise=X]`.
impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(',').map(str::trim);
        let kind = match parts.next() {
            Some("shape") => SyntheticKind::Shape,
            Some("color") => SyntheticKind::Color,
            other => return Err(Error::invalid(format!("unknown synthetic kind {other:?}; use `shape` or `color`"))),
        };
        let mut spec = SyntheticSpec {
            kind,
            classes: 6,
            size: 16,
            per_class: 40,
            noise: 0.05,
        };
        for part in parts {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value in synthetic spec, got `{part}`")))?;
            let bad = || Error::invalid(format!("invalid value `{value}` for `{key}`"));
            match key {
                "k" | "classes" => spec.classes = value.parse().map_err(|_| bad())?,
                "size" => spec.size = value.parse().map_err(|_| bad())?,
                "per_class" | "n" => spec.per_class = value.parse().map_err(|_| bad())?,
                "noise" => spec.noise = value.parse().map_err(|_| bad())?,
                _ => return Err(Error::invalid(format!("unknown synthetic spec key `{key}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn inside(shape: &str, dx: f64, dy: f64) -> bool {
    let d = (dx * dx + dy * dy).sqrt();
    match shape {
        "disc" => d <= 1.0,
        "square" => dx.abs().max(dy.abs()) <= 0.8,
        "cross" => (dx.abs() <= 0.3 && dy.abs() <= 1.0) || (dy.abs() <= 0.3 && dx.abs() <= 1.0),
        "hbar" => dy.abs() <= 0.3 && dx.abs() <= 1.0,
        "vbar" => dx.abs() <= 0.3 && dy.abs() <= 1.0,
        "ring" => (0.55..=1.0).contains(&d),
        "triangle" => (-0.8..=0.8).contains(&dy) && dx.abs() <= (dy + 0.8) / 1.6,
        "diamond" => dx.abs() + dy.abs() <= 1.0,
        _ => false,
    }
}

/// Maps a unit color into the drawable range symmetric around the background.
fn shade(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| 0.15 + 0.7 * v)
}

fn random_saturated<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let h = rng.random::<f64>() * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    match h as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

fn render<R: Rng + ?Sized>(shape: &str, color: [f64; 3], size: usize, noise: f64, rng: &mut R) -> RasterImage {
    let s = size as f64;
    let radius = s * rng.random_range(0.25..0.4);
    let jitter = s / 8.0;
    let cy = (s - 1.0) / 2.0 + rng.random_range(-jitter..=jitter);
    let cx = (s - 1.0) / 2.0 + rng.random_range(-jitter..=jitter);
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("finite noise");
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let on = inside(shape, (x as f64 - cx) / radius, (y as f64 - cy) / radius);
            for &cv in &color {
                let base = if on { cv } else { BACKGROUND };
                let n = if noise > 0.0 { normal.sample(rng) } else { 0.0 };
                data.push(base + n);
            }
        }
    }
    RasterImage::new(size, size, 3, data).expect("3-channel extents")
}

/// A balanced synthetic dataset, deterministic in `seed`.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<ImageDataset> {
    spec.validate()?;
    let mut r = rng::stream(seed, "synthetic");
    let class_names: Vec<String> = match spec.kind {
        SyntheticKind::Shape => SHAPES[..spec.classes].iter().map(|s| s.to_string()).collect(),
        SyntheticKind::Color => COLOR_TABLE[..spec.classes].iter().map(|(n, _)| n.to_string()).collect(),
    };
    let total = spec.classes * spec.per_class;
    let mut images = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let class = i % spec.classes;
        let (shape, color) = match spec.kind {
            SyntheticKind::Shape => (SHAPES[class], shade(random_saturated(&mut r))),
            SyntheticKind::Color => (SHAPES[r.random_range(0..SHAPES.len())], shade(COLOR_TABLE[class].1)),
        };
        images.push(render(shape, color, spec.size, spec.noise, &mut r));
        labels.push(class);
    }
    let ids = (0..total).map(|i| format!("syn-{i:06}")).collect();
    ImageDataset::new(images, labels, ids, class_names)
}

/// Nearest table color (by mean foreground color) of a color-class image.
#[cfg(test)]
pub(super) fn dominant_color_class(img: &RasterImage, classes: usize) -> usize {
    let (h, w, _) = img.dims();
    let mut sum = [0.0; 3];
    let mut n = 0.0;
    for y in 0..h {
        for x in 0..w {
            let px = img.pixel(y, x);
            if px.iter().any(|v| (v - BACKGROUND).abs() > 0.25) {
                for c in 0..3 {
                    sum[c] += px[c];
                }
                n += 1.0;
            }
        }
    }
    let mean = sum.map(|s| s / n);
    (0..classes)
        .min_by(|&a, &b| {
            let d = |k: usize| {
                shade(COLOR_TABLE[k].1)
                    .iter()
                    .zip(&mean)
                    .map(|(p, q)| (p - q).powi(2))
                    .sum::<f64>()
            };
            d(a).total_cmp(&d(b))
        })
        .unwrap()
}
