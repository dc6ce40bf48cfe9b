//! Raw loops behind the tape primitives. Shapes are validated by the caller.

/// `(m, k) x (k, n) -> (m, n)`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Extents of a `(batch, channels, h, w)` activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dims4 {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims4 {
    pub fn from_shape(shape: &[usize]) -> Option<Self> {
        match *shape {
            [b, c, h, w] => Some(Self { b, c, h, w }),
            _ => None,
        }
    }
}

/// Output rows `y` for which `y + k - 1` stays inside `[0, extent)`.
#[inline]
fn valid_range(k: usize, extent: usize) -> (usize, usize) {
    let lo = 1usize.saturating_sub(k);
    let hi = (extent + 1).saturating_sub(k).min(extent);
    (lo, hi)
}

/// 3x3 convolution with zero padding 1: `x (b, ci, h, w)`, `w (co, ci, 3, 3)`.
pub(crate) fn conv3x3(x: &[f64], xd: Dims4, w: &[f64], co: usize) -> Vec<f64> {
    let Dims4 { b, c: ci, h, w: wd } = xd;
    let plane = h * wd;
    let mut out = vec![0.0; b * co * plane];
    for bi in 0..b {
        for o in 0..co {
            let out_plane = &mut out[(bi * co + o) * plane..(bi * co + o + 1) * plane];
            for i in 0..ci {
                let in_plane = &x[(bi * ci + i) * plane..(bi * ci + i + 1) * plane];
                for ky in 0..3 {
                    let (y0, y1) = valid_range(ky, h);
                    for kx in 0..3 {
                        let wv = w[((o * ci + i) * 3 + ky) * 3 + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = valid_range(kx, wd);
                        for y in y0..y1 {
                            let src = (y + ky - 1) * wd;
                            let dst = y * wd;
                            for xx in x0..x1 {
                                out_plane[dst + xx] += wv * in_plane[src + xx + kx - 1];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`conv3x3`] with respect to its input: `g (b, co, h, w)`, `w (co, ci, 3, 3)`.
pub(crate) fn conv3x3_input(g: &[f64], gd: Dims4, w: &[f64], ci: usize) -> Vec<f64> {
    let Dims4 { b, c: co, h, w: wd } = gd;
    let plane = h * wd;
    let mut out = vec![0.0; b * ci * plane];
    for bi in 0..b {
        for o in 0..co {
            let g_plane = &g[(bi * co + o) * plane..(bi * co + o + 1) * plane];
            for i in 0..ci {
                let out_plane = &mut out[(bi * ci + i) * plane..(bi * ci + i + 1) * plane];
                for ky in 0..3 {
                    let (y0, y1) = valid_range(ky, h);
                    for kx in 0..3 {
                        let wv = w[((o * ci + i) * 3 + ky) * 3 + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = valid_range(kx, wd);
                        for y in y0..y1 {
                            let dst = (y + ky - 1) * wd;
                            let src = y * wd;
                            for xx in x0..x1 {
                                out_plane[dst + xx + kx - 1] += wv * g_plane[src + xx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`conv3x3`] with respect to its kernel: `x (b, ci, h, w)`, `g (b, co, h, w)`.
pub(crate) fn conv3x3_kernel(x: &[f64], xd: Dims4, g: &[f64], co: usize) -> Vec<f64> {
    let Dims4 { b, c: ci, h, w: wd } = xd;
    let plane = h * wd;
    let mut out = vec![0.0; co * ci * 9];
    for bi in 0..b {
        for o in 0..co {
            let g_plane = &g[(bi * co + o) * plane..(bi * co + o + 1) * plane];
            for i in 0..ci {
                let in_plane = &x[(bi * ci + i) * plane..(bi * ci + i + 1) * plane];
                for ky in 0..3 {
                    let (y0, y1) = valid_range(ky, h);
                    for kx in 0..3 {
                        let (x0, x1) = valid_range(kx, wd);
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let src = (y + ky - 1) * wd;
                            let gy = y * wd;
                            for xx in x0..x1 {
                                acc += in_plane[src + xx + kx - 1] * g_plane[gy + xx];
                            }
                        }
                        out[((o * ci + i) * 3 + ky) * 3 + kx] += acc;
                    }
                }
            }
        }
    }
    out
}

/// 2x2 mean pooling over the trailing two axes.
pub(crate) fn avg_pool2(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                let a = src[2 * y * w + 2 * xx];
                let b = src[2 * y * w + 2 * xx + 1];
                let c = src[(2 * y + 1) * w + 2 * xx];
                let d = src[(2 * y + 1) * w + 2 * xx + 1];
                dst[y * ow + xx] = 0.25 * (a + b + c + d);
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool2`]: spreads each value over its 2x2 block with weight 1/4.
pub(crate) fn unpool2(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = 0.25 * src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn ramp(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) * scale).collect()
    }

    #[test]
    fn conv_adjoints_satisfy_inner_product_identity() {
        let xd = Dims4 { b: 2, c: 3, h: 5, w: 4 };
        let co = 2;
        let x = ramp(2 * 3 * 20, 0.1);
        let w = ramp(co * 3 * 9, 0.3);
        let g = ramp(2 * co * 20, 0.07);
        let y = conv3x3(&x, xd, &w, co);
        let gd = Dims4 { c: co, ..xd };
        let lhs = dot(&y, &g);
        let via_input = dot(&x, &conv3x3_input(&g, gd, &w, 3));
        let via_kernel = dot(&w, &conv3x3_kernel(&x, xd, &g, co));
        assert!((lhs - via_input).abs() < 1e-10);
        assert!((lhs - via_kernel).abs() < 1e-10);
    }

    #[test]
    fn pool_and_unpool_are_adjoint() {
        let x = ramp(2 * 4 * 6, 0.5);
        let g = ramp(2 * 2 * 3, 0.25);
        let lhs = dot(&avg_pool2(&x, 2, 4, 6), &g);
        let rhs = dot(&x, &unpool2(&g, 2, 2, 3));
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
