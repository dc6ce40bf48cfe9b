use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Values are snapped to multiples of this step, which makes `1 - v` exact
/// for every stored value.
const GRID: f64 = 4503599627370496.0; // 2^52

#[inline]
pub(crate) fn canonical(v: f64) -> f64 {
    if v.is_nan() {
        return 0.0;
    }
    (v.clamp(0.0, 1.0) * GRID).round() / GRID
}

/// An `height x width x channels` image, row-major with interleaved channels,
/// every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RasterImage {
    /// Builds an image, clamping values into `[0, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self::from_raw(height, width, channels, data))
    }

    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Self {
        for v in &mut data {
            *v = canonical(*v);
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::from_raw(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Largest absolute per-value difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Converts to a `(channels, height, width)` planar vector.
    pub fn to_planar(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
        out
    }

    pub fn from_planar(height: usize, width: usize, channels: usize, planar: &[f64]) -> Result<Self> {
        let plane = height * width;
        if planar.len() != plane * channels {
            return Err(Error::invalid("planar buffer does not match image extents"));
        }
        let mut data = vec![0.0; planar.len()];
        for c in 0..channels {
            for i in 0..plane {
                data[i * channels + c] = planar[c * plane + i];
            }
        }
        Self::new(height, width, channels, data)
    }
}

/// Stacks images into a `(batch, channels, height, width)` tensor.
pub fn batch_to_tensor(images: &[RasterImage]) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::invalid("empty image batch"));
    };
    let (h, w, c) = first.dims();
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.dims() != (h, w, c) {
            return Err(Error::invalid(format!(
                "image batch mixes extents {:?} and {:?}",
                (h, w, c),
                img.dims()
            )));
        }
        data.extend(img.to_planar());
    }
    Tensor::new(vec![images.len(), c, h, w], data)
}

/// Converts an interleaved `(h, w, c)` derivative buffer per image into a
/// planar batch tensor aligned with [`batch_to_tensor`].
pub(crate) fn interleaved_to_planar(h: usize, w: usize, c: usize, interleaved: &[f64], out: &mut Vec<f64>) {
    let plane = h * w;
    let start = out.len();
    out.resize(start + plane * c, 0.0);
    for (i, px) in interleaved.chunks(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            out[start + ch * plane + i] = v;
        }
    }
}
