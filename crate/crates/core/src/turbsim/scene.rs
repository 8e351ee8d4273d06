use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{stream, stream_rng};
use crate::error::Result;
use crate::imgcore::filter::gaussian_blur;
use crate::imgcore::Image;

#[inline]
fn smoothstep_edge(d: f64) -> f64 {
    // d: signed distance in px, positive inside; ~1 px anti-aliased edge
    1.0 / (1.0 + (-2.5 * d).exp())
}

/// Procedural test scene with a shaded background, soft-edged discs,
/// rotated rectangles, a stripe patch and fine texture. Channels get
/// independent colours for the shapes.
pub fn natural_scene(width: usize, height: usize, channels: usize, seed: u64) -> Result<Image> {
    let mut rng = stream_rng(seed, stream::SCENE, 0);
    let (w, h) = (width as f64, height as f64);
    let n = width * height;
    let mut planes = vec![vec![0.0f64; n]; channels];
    let gx: f64 = rng.random_range(-0.2..0.2);
    let gy: f64 = rng.random_range(-0.2..0.2);
    let base: Vec<f64> = (0..channels).map(|_| rng.random_range(0.35..0.55)).collect();
    for (c, p) in planes.iter_mut().enumerate() {
        for y in 0..height {
            for x in 0..width {
                p[y * width + x] = base[c] + gx * (x as f64 / w - 0.5) + gy * (y as f64 / h - 0.5);
            }
        }
    }

    let scale = w.min(h);
    let shapes = 10 + (n as f64).sqrt() as usize / 16;
    for s in 0..shapes {
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.0..h);
        let size = rng.random_range(0.04..0.18) * scale;
        let aspect: f64 = rng.random_range(0.4..1.0);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let colour: Vec<f64> = (0..channels).map(|_| rng.random_range(0.05..0.95)).collect();
        let disc = s % 2 == 0;
        let (sn, cs) = angle.sin_cos();
        let reach = size + 4.0;
        let (x0, x1) = (((cx - reach).floor().max(0.0)) as usize, ((cx + reach).ceil().min(w - 1.0)) as usize);
        let (y0, y1) = (((cy - reach).floor().max(0.0)) as usize, ((cy + reach).ceil().min(h - 1.0)) as usize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let u = cs * dx + sn * dy;
                let v = -sn * dx + cs * dy;
                let d = if disc {
                    size - ((u / 1.0).powi(2) + (v / aspect).powi(2)).sqrt()
                } else {
                    (size - u.abs()).min(size * aspect - v.abs())
                };
                let a = smoothstep_edge(d);
                if a < 1e-6 {
                    continue;
                }
                for (c, p) in planes.iter_mut().enumerate() {
                    let i = y * width + x;
                    p[i] = p[i] * (1.0 - a) + colour[c] * a;
                }
            }
        }
    }

    // stripe patch
    let sx = rng.random_range(0.1..0.6) * w;
    let sy = rng.random_range(0.1..0.6) * h;
    let sw = 0.3 * w;
    let sh = 0.25 * h;
    let period = rng.random_range(5.0..9.0);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (sn, cs) = angle.sin_cos();
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            if xf < sx || xf > sx + sw || yf < sy || yf > sy + sh {
                continue;
            }
            let t = (cs * xf + sn * yf) * 2.0 * std::f64::consts::PI / period;
            let v = 0.5 + 0.3 * t.sin();
            for p in planes.iter_mut() {
                p[y * width + x] = 0.5 * p[y * width + x] + 0.5 * v;
            }
        }
    }

    let texture: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let texture = gaussian_blur(&texture, width, height, 1.0);
    let mut data = Vec::with_capacity(channels * n);
    for p in &planes {
        for (v, t) in p.iter().zip(&texture) {
            data.push((v + 0.08 * t).clamp(0.02, 0.98) as f32);
        }
    }
    Image::from_planar(width, height, channels, data)
}
