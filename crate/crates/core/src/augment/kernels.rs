use super::{MagnitudeMap, OpDraw, OpKind, RasterImage};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

pub(super) fn apply(kind: OpKind, img: &RasterImage, m: f64, draw: &OpDraw, map: &MagnitudeMap) -> RasterImage {
    if kind.uses_magnitude() && m == 0.0 {
        return img.clone();
    }
    let lerp = |(lo, hi): (f64, f64)| lo + (hi - lo) * m;
    let signed = |span: f64| draw.sign * span * m;
    match kind {
        OpKind::Identity => img.clone(),
        OpKind::BlackFill => map_values(img, |_| 0.0),
        OpKind::Invert => map_values(img, |v| 1.0 - v),
        OpKind::AutoContrast => autocontrast(img),
        OpKind::Equalize => equalize(img),
        OpKind::Solarize => {
            let t = lerp((1.0, 0.0)) * 256.0 / 255.0;
            map_values(img, |v| if v >= t { 1.0 - v } else { v })
        }
        OpKind::Posterize => {
            let bits = (8.0 - m * (8.0 - map.posterize_min_bits)).round().clamp(1.0, 8.0) as u32;
            if bits == 8 {
                return img.clone();
            }
            let mask = 0xFFu32 << (8 - bits) & 0xFF;
            map_values(img, |v| ((to_level(v) & mask) as f64) / 255.0)
        }
        OpKind::Brightness => {
            let f = 1.0 + signed(map.enhance_span);
            map_values(img, |v| v * f)
        }
        OpKind::Color => {
            let f = 1.0 + signed(map.enhance_span);
            let gray = grayscale(img);
            blend_per_pixel(img, |i, _| gray[i], f)
        }
        OpKind::Contrast => {
            let f = 1.0 + signed(map.enhance_span);
            let gray = grayscale(img);
            let mean = gray.iter().sum::<f64>() / gray.len().max(1) as f64;
            blend_per_pixel(img, |_, _| mean, f)
        }
        OpKind::Sharpness => {
            let f = 1.0 + signed(map.enhance_span);
            let smooth = smooth(img);
            let c = img.channels();
            blend_per_pixel(img, |i, ch| smooth[i * c + ch], f)
        }
        OpKind::Rotate => {
            let a = signed(map.rotate_degrees).to_radians();
            let (s, co) = a.sin_cos();
            resample(img, |y, x| (co * y - s * x, s * y + co * x))
        }
        OpKind::ShearX => {
            let k = signed(map.shear);
            resample(img, |y, x| (y, x + k * y))
        }
        OpKind::ShearY => {
            let k = signed(map.shear);
            resample(img, |y, x| (y + k * x, x))
        }
        OpKind::TranslateX => {
            let t = signed(map.translate_px);
            resample(img, |y, x| (y, x - t))
        }
        OpKind::TranslateY => {
            let t = signed(map.translate_px);
            resample(img, |y, x| (y - t, x))
        }
        OpKind::Cutout => cutout(img, m * map.cutout_px, draw.position),
    }
}

fn to_level(v: f64) -> u32 {
    (v * 255.0).round().clamp(0.0, 255.0) as u32
}

fn map_values(img: &RasterImage, f: impl Fn(f64) -> f64) -> RasterImage {
    let (h, w, c) = img.dims();
    RasterImage::from_raw(h, w, c, img.data().iter().map(|&v| f(v)).collect())
}

fn grayscale(img: &RasterImage) -> Vec<f64> {
    let c = img.channels();
    img.data()
        .chunks(c)
        .map(|px| if c == 3 { px.iter().zip(LUMA).map(|(v, l)| v * l).sum() } else { px[0] })
        .collect()
}

/// `base + f * (v - base)` with `base` chosen per pixel index and channel.
fn blend_per_pixel(img: &RasterImage, base: impl Fn(usize, usize) -> f64, f: f64) -> RasterImage {
    let (h, w, c) = img.dims();
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let b = base(k / c, k % c);
            b + f * (v - b)
        })
        .collect();
    RasterImage::from_raw(h, w, c, data)
}

fn smooth(img: &RasterImage) -> Vec<f64> {
    let (h, w, c) = img.dims();
    let mut out = img.data().to_vec();
    if h < 3 || w < 3 {
        return out;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for ch in 0..c {
                let mut acc = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let wgt = if dy == 1 && dx == 1 { 5.0 } else { 1.0 };
                        acc += wgt * img.get(y + dy - 1, x + dx - 1, ch);
                    }
                }
                out[(y * w + x) * c + ch] = acc / 13.0;
            }
        }
    }
    out
}

fn autocontrast(img: &RasterImage) -> RasterImage {
    let (h, w, c) = img.dims();
    let mut data = img.data().to_vec();
    for ch in 0..c {
        let (lo, hi) = img
            .data()
            .iter()
            .skip(ch)
            .step_by(c)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi > lo {
            for v in data.iter_mut().skip(ch).step_by(c) {
                *v = (*v - lo) / (hi - lo);
            }
        }
    }
    RasterImage::from_raw(h, w, c, data)
}

fn equalize(img: &RasterImage) -> RasterImage {
    let (h, w, c) = img.dims();
    let mut data = img.data().to_vec();
    for ch in 0..c {
        let mut hist = [0usize; 256];
        for &v in img.data().iter().skip(ch).step_by(c) {
            hist[to_level(v) as usize] += 1;
        }
        let Some(last) = hist.iter().rposition(|&n| n > 0) else {
            continue;
        };
        let total: usize = hist.iter().sum();
        let step = (total - hist[last]) / 255;
        if step == 0 {
            continue;
        }
        let mut lut = [0.0; 256];
        let mut n = step / 2;
        for (l, count) in hist.iter().enumerate() {
            lut[l] = (n / step).min(255) as f64 / 255.0;
            n += count;
        }
        for v in data.iter_mut().skip(ch).step_by(c) {
            *v = lut[to_level(*v) as usize];
        }
    }
    RasterImage::from_raw(h, w, c, data)
}

/// Inverse-maps each output pixel through `src` (coordinates relative to the
/// image center) and samples bilinearly, filling outside with zeros.
fn resample(img: &RasterImage, src: impl Fn(f64, f64) -> (f64, f64)) -> RasterImage {
    let (h, w, c) = img.dims();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = src(y as f64 - cy, x as f64 - cx);
            let (sy, sx) = (sy + cy, sx + cx);
            let y0 = sy.floor();
            let x0 = sx.floor();
            let (fy, fx) = (sy - y0, sx - x0);
            for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                    let wgt = wy * wx;
                    if wgt == 0.0 {
                        continue;
                    }
                    let yy = y0 as i64 + dy;
                    let xx = x0 as i64 + dx;
                    if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                        continue;
                    }
                    let base = (y * w + x) * c;
                    for ch in 0..c {
                        out[base + ch] += wgt * img.get(yy as usize, xx as usize, ch);
                    }
                }
            }
        }
    }
    RasterImage::from_raw(h, w, c, out)
}

fn cutout(img: &RasterImage, side: f64, (u, v): (f64, f64)) -> RasterImage {
    let (h, w, c) = img.dims();
    let side = (side.round() as usize).min(h).min(w);
    if side == 0 {
        return img.clone();
    }
    let y0 = ((u * (h - side + 1) as f64).floor() as usize).min(h - side);
    let x0 = ((v * (w - side + 1) as f64).floor() as usize).min(w - side);
    let mut data = img.data().to_vec();
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            let base = (y * w + x) * c;
            data[base..base + c].fill(0.5);
        }
    }
    RasterImage::from_raw(h, w, c, data)
}
