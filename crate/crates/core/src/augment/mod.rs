//! Image augmentation operations parameterized by a normalized magnitude.
//!
//! Every operation maps a magnitude `m` in `[0, 1]` onto a concrete parameter
//! through a [`MagnitudeMap`]. The random parts of an application (the sign of
//! signed operations, the Cutout position) are drawn once into an [`OpDraw`]
//! so the same draw can be replayed at several magnitudes.

mod image;
mod kernels;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use image::{batch_to_tensor, RasterImage};
pub(crate) use image::interleaved_to_planar;

/// Augmentation operations. The first fifteen form the policy pool;
/// `BlackFill` and `Identity` exist for ablations and test fixtures only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    AutoContrast,
    Brightness,
    Color,
    Contrast,
    Cutout,
    Equalize,
    Invert,
    Posterize,
    Rotate,
    Sharpness,
    ShearX,
    ShearY,
    Solarize,
    TranslateX,
    TranslateY,
    BlackFill,
    Identity,
}

/// The fifteen pool operations in canonical order.
pub const POOL: [OpKind; 15] = [
    OpKind::AutoContrast,
    OpKind::Brightness,
    OpKind::Color,
    OpKind::Contrast,
    OpKind::Cutout,
    OpKind::Equalize,
    OpKind::Invert,
    OpKind::Posterize,
    OpKind::Rotate,
    OpKind::Sharpness,
    OpKind::ShearX,
    OpKind::ShearY,
    OpKind::Solarize,
    OpKind::TranslateX,
    OpKind::TranslateY,
];

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::AutoContrast => "AutoContrast",
            OpKind::Brightness => "Brightness",
            OpKind::Color => "Color",
            OpKind::Contrast => "Contrast",
            OpKind::Cutout => "Cutout",
            OpKind::Equalize => "Equalize",
            OpKind::Invert => "Invert",
            OpKind::Posterize => "Posterize",
            OpKind::Rotate => "Rotate",
            OpKind::Sharpness => "Sharpness",
            OpKind::ShearX => "ShearX",
            OpKind::ShearY => "ShearY",
            OpKind::Solarize => "Solarize",
            OpKind::TranslateX => "TranslateX",
            OpKind::TranslateY => "TranslateY",
            OpKind::BlackFill => "BlackFill",
            OpKind::Identity => "Identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        POOL.iter()
            .chain(&[OpKind::BlackFill, OpKind::Identity])
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(name))
    }

    pub fn in_pool(self) -> bool {
        !matches!(self, OpKind::BlackFill | OpKind::Identity)
    }

    /// Whether the magnitude changes the output.
    pub fn uses_magnitude(self) -> bool {
        !matches!(
            self,
            OpKind::AutoContrast | OpKind::Equalize | OpKind::Invert | OpKind::BlackFill | OpKind::Identity
        )
    }

    /// Operations whose parameter is mirrored around the identity by a random sign.
    pub fn is_signed(self) -> bool {
        matches!(
            self,
            OpKind::Rotate
                | OpKind::ShearX
                | OpKind::ShearY
                | OpKind::TranslateX
                | OpKind::TranslateY
                | OpKind::Brightness
                | OpKind::Color
                | OpKind::Contrast
                | OpKind::Sharpness
        )
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Concrete parameter ranges reached at magnitude 1. Magnitude 0 always
/// maps to the identity parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeMap {
    pub rotate_degrees: f64,
    pub shear: f64,
    pub translate_px: f64,
    /// Posterize keeps `8 - m * (8 - min_bits)` bits.
    pub posterize_min_bits: f64,
    /// Enhancement factors span `1 +/- enhance_span`.
    pub enhance_span: f64,
    pub cutout_px: f64,
}

impl Default for MagnitudeMap {
    fn default() -> Self {
        Self {
            rotate_degrees: 30.0,
            shear: 0.3,
            translate_px: 8.0,
            posterize_min_bits: 2.0,
            enhance_span: 0.9,
            cutout_px: 16.0,
        }
    }
}

impl MagnitudeMap {
    /// Defaults with the pixel ranges rescaled from 32-pixel images to `side`.
    pub fn for_side(side: usize) -> Self {
        let s = side as f64 / 32.0;
        Self {
            translate_px: 8.0 * s,
            cutout_px: 16.0 * s,
            ..Self::default()
        }
    }

    /// `(lo, hi)` of the concrete parameter for `kind`, `None` when the
    /// magnitude is ignored.
    pub fn range(&self, kind: OpKind) -> Option<(f64, f64)> {
        Some(match kind {
            OpKind::Rotate => (0.0, self.rotate_degrees),
            OpKind::ShearX | OpKind::ShearY => (0.0, self.shear),
            OpKind::TranslateX | OpKind::TranslateY => (0.0, self.translate_px),
            OpKind::Solarize => (1.0, 0.0),
            OpKind::Posterize => (8.0, self.posterize_min_bits),
            OpKind::Brightness | OpKind::Color | OpKind::Contrast | OpKind::Sharpness => {
                (1.0, 1.0 + self.enhance_span)
            }
            OpKind::Cutout => (0.0, self.cutout_px),
            _ => return None,
        })
    }
}

/// Random choices of one operation application.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpDraw {
    /// `+1` or `-1`; only read by signed operations.
    pub sign: f64,
    /// Relative Cutout position in `[0, 1)^2`.
    pub position: (f64, f64),
}

impl OpDraw {
    pub const NEUTRAL: OpDraw = OpDraw {
        sign: 1.0,
        position: (0.5, 0.5),
    };

    /// Draws what `kind` needs and nothing else.
    pub fn sample<R: Rng + ?Sized>(kind: OpKind, rng: &mut R) -> Self {
        let mut draw = Self::NEUTRAL;
        if kind.is_signed() {
            draw.sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
        if kind == OpKind::Cutout {
            draw.position = (rng.random::<f64>(), rng.random::<f64>());
        }
        draw
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

/// Applies `kind` at magnitude `m` with a fixed draw.
pub fn apply_op_with(kind: OpKind, img: &RasterImage, m: f64, draw: &OpDraw, map: &MagnitudeMap) -> Result<RasterImage> {
    check_unit("magnitude", m)?;
    Ok(kernels::apply(kind, img, m, draw, map))
}

/// Applies `kind` at magnitude `m`, drawing sign and position from `rng`.
pub fn apply_op<R: Rng + ?Sized>(kind: OpKind, img: &RasterImage, m: f64, map: &MagnitudeMap, rng: &mut R) -> Result<RasterImage> {
    check_unit("magnitude", m)?;
    let draw = OpDraw::sample(kind, rng);
    Ok(kernels::apply(kind, img, m, &draw, map))
}

/// `(1 - q) * img + q * op(img)`: the relaxed form of a Bernoulli gate.
pub fn apply_gated_with(
    kind: OpKind,
    img: &RasterImage,
    m: f64,
    q: f64,
    draw: &OpDraw,
    map: &MagnitudeMap,
) -> Result<RasterImage> {
    check_unit("gate", q)?;
    if q == 0.0 {
        check_unit("magnitude", m)?;
        return Ok(img.clone());
    }
    let applied = apply_op_with(kind, img, m, draw, map)?;
    if q == 1.0 {
        return Ok(applied);
    }
    Ok(blend(img, &applied, q))
}

pub fn apply_gated<R: Rng + ?Sized>(
    kind: OpKind,
    img: &RasterImage,
    m: f64,
    q: f64,
    map: &MagnitudeMap,
    rng: &mut R,
) -> Result<RasterImage> {
    let draw = OpDraw::sample(kind, rng);
    apply_gated_with(kind, img, m, q, &draw, map)
}

pub(crate) fn blend(a: &RasterImage, b: &RasterImage, q: f64) -> RasterImage {
    let (h, w, c) = a.dims();
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (1.0 - q) * x + q * y)
        .collect();
    RasterImage::from_raw(h, w, c, data)
}

/// Per-value derivative of `apply_op` with respect to the magnitude, by
/// central differences with the draw held fixed. One-sided at the ends of
/// `[0, 1]`. Returned as an `(h, w, c)` tensor.
pub fn magnitude_grad_fd_with(
    kind: OpKind,
    img: &RasterImage,
    m: f64,
    eps: f64,
    draw: &OpDraw,
    map: &MagnitudeMap,
) -> Result<Tensor> {
    check_unit("magnitude", m)?;
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {eps}")));
    }
    let (h, w, c) = img.dims();
    if !kind.uses_magnitude() {
        return Ok(Tensor::zeros(&[h, w, c]));
    }
    let (lo, hi) = ((m - eps).max(0.0), (m + eps).min(1.0));
    let a = kernels::apply(kind, img, lo, draw, map);
    let b = kernels::apply(kind, img, hi, draw, map);
    let span = hi - lo;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| (y - x) / span).collect();
    Tensor::new(vec![h, w, c], data)
}

pub fn magnitude_grad_fd<R: Rng + ?Sized>(
    kind: OpKind,
    img: &RasterImage,
    m: f64,
    eps: f64,
    map: &MagnitudeMap,
    rng: &mut R,
) -> Result<Tensor> {
    let draw = OpDraw::sample(kind, rng);
    magnitude_grad_fd_with(kind, img, m, eps, &draw, map)
}

#[cfg(test)]
mod tests;
