//! Full-reference (PSNR, SSIM) and no-reference (GCL) image quality.

use crate::error::{Error, Result};
use crate::imgcore::filter::gaussian_taps;
use crate::imgcore::Image;

/// Value reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// `10 log10(1 / MSE)` over all samples, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Valid-region separable correlation.
fn filter_valid(p: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = p[y * w + x..y * w + x + k].iter().zip(taps).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (i, t) in taps.iter().enumerate() {
            for x in 0..ow {
                out[y * ow + x] += t * tmp[(y + i) * ow + x];
            }
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over valid 11x11 Gaussian windows, averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (w, h) = (a.width(), a.height());
    if w.min(h) < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}")));
    }
    let taps = gaussian_taps(SSIM_SIGMA, SSIM_WINDOW / 2);
    let mut total = 0.0;
    for c in 0..a.channels() {
        let pa = a.plane_f64(c);
        let pb = b.plane_f64(c);
        let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| u * v).collect() };
        let (ma, _, _) = filter_valid(&pa, w, h, &taps);
        let (mb, _, _) = filter_valid(&pb, w, h, &taps);
        let (saa, _, _) = filter_valid(&prod(&pa, &pa), w, h, &taps);
        let (sbb, _, _) = filter_valid(&prod(&pb, &pb), w, h, &taps);
        let (sab, ow, oh) = filter_valid(&prod(&pa, &pb), w, h, &taps);
        let mut acc = 0.0;
        for i in 0..ow * oh {
            let (mx, my) = (ma[i], mb[i]);
            let vx = saa[i] - mx * mx;
            let vy = sbb[i] - my * my;
            let cxy = sab[i] - mx * my;
            acc += ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
        }
        total += acc / (ow * oh) as f64;
    }
    Ok(total / a.channels() as f64)
}

/// Gradient-magnitude sharpness: mean Sobel magnitude of the luma over
/// interior pixels.
pub fn gcl(a: &Image) -> Result<f64> {
    let (w, h) = (a.width(), a.height());
    if w.min(h) < 3 {
        return Err(Error::InvalidArgument(format!("gcl needs at least 3x3, got {w}x{h}")));
    }
    let g = a.to_gray().plane_f64(0);
    let at = |x: usize, y: usize| g[y * w + x];
    let mut acc = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            acc += (gx * gx + gy * gy).sqrt();
        }
    }
    Ok(acc / ((w - 2) * (h - 2)) as f64)
}
