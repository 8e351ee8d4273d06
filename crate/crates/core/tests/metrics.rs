//! Metric oracles: a direct 2D-window SSIM, closed-form PSNR, and
//! monotonicity under noise and smoothing.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use turbsplat::imgcore::Image;
use turbsplat::metrics::{gcl, psnr, ssim};
use turbsplat::turbsim::natural_scene;

/// SSIM with the 11x11 window built in 2D and applied position by position.
fn ssim_direct(a: &Image, b: &Image) -> f64 {
    let (w, h) = (a.width(), a.height());
    let mut win = [[0.0f64; 11]; 11];
    let mut s = 0.0;
    for (y, row) in win.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let (dx, dy) = (x as f64 - 5.0, y as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            s += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    for c in 0..a.channels() {
        let (pa, pb) = (a.plane_f64(c), b.plane_f64(c));
        let mut acc = 0.0;
        for oy in 0..=h - 11 {
            for ox in 0..=w - 11 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (y, row) in win.iter().enumerate() {
                    for (x, &k) in row.iter().enumerate() {
                        let k = k / s;
                        let i = (oy + y) * w + ox + x;
                        mx += k * pa[i];
                        my += k * pb[i];
                        sxx += k * pa[i] * pa[i];
                        syy += k * pb[i] * pb[i];
                        sxy += k * pa[i] * pb[i];
                    }
                }
                let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total += acc / ((w - 10) * (h - 10)) as f64;
    }
    total / a.channels() as f64
}

fn noisy(img: &Image, sigma: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    let data: Vec<f32> = img.data().iter().map(|&v| v + n.sample(&mut rng) as f32).collect();
    Image::from_planar(img.width(), img.height(), img.channels(), data).unwrap()
}

fn box_blur(img: &Image) -> Image {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let p = img.plane_f64(0);
    let mut out = vec![0.0; p.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -2..=2 {
                for dx in -2..=2 {
                    let (sx, sy) = ((x + dx).clamp(0, w - 1), (y + dy).clamp(0, h - 1));
                    acc += p[(sy * w + sx) as usize];
                }
            }
            out[(y * w + x) as usize] = acc / 25.0;
        }
    }
    Image::from_planar_f64(img.width(), img.height(), 1, &out).unwrap()
}

#[test]
fn ssim_matches_direct_window_oracle() {
    let a = natural_scene(40, 32, 3, 1).unwrap();
    let b = noisy(&a, 0.05, 2);
    let got = ssim(&a, &b).unwrap();
    let want = ssim_direct(&a, &b);
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

#[test]
fn psnr_falls_as_noise_grows() {
    let a = natural_scene(64, 64, 1, 3).unwrap();
    let scores: Vec<f64> = [0.01, 0.05, 0.1].iter().map(|&s| psnr(&a, &noisy(&a, s, 4)).unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] > w[1]), "{scores:?}");
}

#[test]
fn ssim_falls_as_noise_grows() {
    let a = natural_scene(64, 64, 1, 5).unwrap();
    assert!(ssim(&a, &noisy(&a, 0.05, 6)).unwrap() > ssim(&a, &noisy(&a, 0.10, 6)).unwrap());
}

#[test]
fn small_offset_barely_moves_ssim() {
    let a = natural_scene(48, 48, 1, 7).unwrap().map(|v| 0.1 + 0.8 * v);
    let b = a.map(|v| v + 0.02);
    let s = ssim(&a, &b).unwrap();
    assert!(1.0 - s < 0.05, "{s}");
}

#[test]
fn repeated_box_blur_never_sharpens() {
    let mut img = natural_scene(48, 48, 1, 8).unwrap();
    let mut last = gcl(&img).unwrap();
    for _ in 0..4 {
        img = box_blur(&img);
        let g = gcl(&img).unwrap();
        assert!(g <= last + 1e-12, "{g} > {last}");
        last = g;
    }
}

#[test]
fn gcl_of_color_uses_luma() {
    let a = natural_scene(20, 20, 3, 9).unwrap();
    assert!((gcl(&a).unwrap() - gcl(&a.to_gray()).unwrap()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn psnr_is_symmetric(seed in 0u64..500, sigma in 0.005f64..0.2) {
        let a = natural_scene(16, 16, 1, seed).unwrap();
        let b = noisy(&a, sigma, seed + 1);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_is_bounded(seed in 0u64..500, sigma in 0.0f64..0.5) {
        let a = natural_scene(16, 16, 1, seed).unwrap();
        let b = noisy(&a, sigma, seed + 2);
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }
}
