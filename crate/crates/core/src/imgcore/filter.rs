//! Small separable and dense filters on single planes with replicate-edge
//! padding.

/// Sampled Gaussian taps on `[-radius, radius]`, normalized to unit sum.
pub fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| {
            if sigma > 0.0 {
                (-0.5 * (i as f64 / sigma).powi(2)).exp()
            } else if i == 0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable correlation of a `w x h` plane with `taps` along x, then y.
pub fn separable(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * row[clamp_idx(x as isize + k as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (k, t) in taps.iter().enumerate() {
            let sy = clamp_idx(y as isize + k as isize - r, h);
            let src = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for x in 0..w {
                dst[x] += t * src[x];
            }
        }
    }
    out
}

/// Gaussian blur of a plane; the window spans `ceil(3 sigma)` on each side.
pub fn gaussian_blur(plane: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    separable(plane, w, h, &gaussian_taps(sigma, (3.0 * sigma).ceil() as usize))
}

/// Dense 2D convolution `out(p) = sum_q k(q) in(p - q)` with a square odd
/// kernel stored row-major, centre at `(s/2, s/2)`. Only rows `y0..y1` and
/// columns `x0..x1` of the output are computed; the rest stay zero.
#[allow(clippy::too_many_arguments)]
pub fn convolve_window(
    plane: &[f64],
    w: usize,
    h: usize,
    kernel: &[f64],
    support: usize,
    (x0, x1): (usize, usize),
    (y0, y1): (usize, usize),
    out: &mut [f64],
) {
    let r = (support / 2) as isize;
    for ky in 0..support {
        for kx in 0..support {
            let kv = kernel[ky * support + kx];
            if kv == 0.0 {
                continue;
            }
            let (ox, oy) = (kx as isize - r, ky as isize - r);
            for y in y0..y1 {
                let sy = clamp_idx(y as isize - oy, h);
                let src = &plane[sy * w..(sy + 1) * w];
                let dst = &mut out[y * w..(y + 1) * w];
                for x in x0..x1 {
                    dst[x] += kv * src[clamp_idx(x as isize - ox, w)];
                }
            }
        }
    }
}

/// Full-plane convolution, see [`convolve_window`].
pub fn convolve(plane: &[f64], w: usize, h: usize, kernel: &[f64], support: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    convolve_window(plane, w, h, kernel, support, (0, w), (0, h), &mut out);
    out
}

/// Downsample by two with a 2x2 box average (odd edges replicate).
pub fn downsample2(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = vec![0.0; nw * nh];
    for y in 0..nh {
        for x in 0..nw {
            let mut acc = 0.0;
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                acc += plane[(2 * y + dy).min(h - 1) * w + (2 * x + dx).min(w - 1)];
            }
            out[y * nw + x] = 0.25 * acc;
        }
    }
    (out, nw, nh)
}

/// Bilinear sample with coordinates clamped to the plane.
#[inline]
pub fn bilinear(plane: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_sum_to_one_and_are_symmetric() {
        let t = gaussian_taps(1.7, 6);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..6 {
            assert_eq!(t[i], t[12 - i]);
        }
        assert_eq!(gaussian_taps(0.0, 2), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn blur_preserves_constants() {
        let p = vec![0.3; 7 * 5];
        for v in gaussian_blur(&p, 7, 5, 2.0) {
            assert!((v - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn convolve_with_shifted_delta_translates() {
        let (w, h) = (6, 4);
        let p: Vec<f64> = (0..w * h).map(|i| i as f64).collect();
        let mut k = vec![0.0; 9];
        // delta at offset (+1, 0): out(x) = in(x - 1)
        k[5] = 1.0;
        let out = convolve(&p, w, h, &k, 3);
        for y in 0..h {
            assert_eq!(out[y * w], p[y * w]);
            for x in 1..w {
                assert_eq!(out[y * w + x], p[y * w + x - 1]);
            }
        }
    }

    #[test]
    fn bilinear_interpolates_and_clamps() {
        let p = vec![0.0, 1.0, 2.0, 3.0];
        assert!((bilinear(&p, 2, 2, 0.5, 0.5) - 1.5).abs() < 1e-12);
        assert_eq!(bilinear(&p, 2, 2, -3.0, 9.0), 2.0);
    }
}
