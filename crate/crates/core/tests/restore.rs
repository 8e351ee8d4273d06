//! Restoration oracles: finite-difference gradients of the cycle loss,
//! convolution and point-source checks of the forward blur, and loss
//! arithmetic.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turbsplat::gaussian2d::{rasterize, Gaussian2D, GaussianSet, RenderPass};
use turbsplat::imgcore::Image;
use turbsplat::kernelbasis::{build_pca_basis, compose_kernel, Kernel, KernelBasis, RegionWeightField};
use turbsplat::restore::*;
use turbsplat::turbsim::{sample_ensemble, TurbulenceParams};

fn narrow_basis(support: usize, k: usize, count: usize, seed: u64) -> KernelBasis {
    let p = TurbulenceParams {
        seed,
        kernel_count: 1,
        kernel_sigma_range: (0.5, 0.9),
        kernel_support: support,
        ..Default::default()
    };
    build_pca_basis(&sample_ensemble(&p, count, support).unwrap(), k).unwrap()
}

fn delta_basis(support: usize) -> KernelBasis {
    let d = support * support;
    let c = d / 2;
    let mut comp = vec![0.0; d];
    comp[c] = std::f64::consts::FRAC_1_SQRT_2;
    comp[c + 1] = -std::f64::consts::FRAC_1_SQRT_2;
    KernelBasis::new(Kernel::delta(support).unwrap(), vec![Kernel::new(support, comp).unwrap()], vec![1.0]).unwrap()
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, w: usize, h: usize) -> GaussianSet {
    let gs = (0..n)
        .map(|_| {
            let mut pick = |hi: usize| loop {
                let v = rng.random_range(2.0..hi as f64 - 2.0);
                // stay clear of the 2x2 region borders
                if (v - (hi as f64 / 2.0 - 0.5)).abs() > 0.05 {
                    break v;
                }
            };
            let mean = [pick(w), pick(h)];
            Gaussian2D {
                mean,
                scale: [rng.random_range(0.8..2.5), rng.random_range(0.8..2.5)],
                rotation: rng.random_range(-1.5..1.5),
                opacity: rng.random_range(0.3..0.95),
                color: [rng.random_range(0.1..0.9), 0.0, 0.0],
            }
        })
        .collect();
    GaussianSet::with_gaussians(1, gs).unwrap()
}

#[derive(Clone, Copy, Debug)]
enum P {
    MeanX,
    MeanY,
    LogS1,
    LogS2,
    Rot,
    Logit,
    Color,
    Weight(usize),
}

fn perturb(state: &mut RestoreState, i: usize, p: P, d: f64) {
    if let P::Weight(j) = p {
        state.weights.data_mut()[j] += d;
        return;
    }
    let g = &mut state.set.gaussians[i];
    match p {
        P::MeanX => g.mean[0] += d,
        P::MeanY => g.mean[1] += d,
        P::LogS1 => g.scale[0] *= d.exp(),
        P::LogS2 => g.scale[1] *= d.exp(),
        P::Rot => g.rotation += d,
        P::Logit => {
            let l = (g.opacity / (1.0 - g.opacity)).ln() + d;
            g.opacity = 1.0 / (1.0 + (-l).exp());
        }
        P::Color => g.color[0] += d,
        P::Weight(_) => unreachable!(),
    }
}

fn analytic(g: &LossGrads, i: usize, p: P) -> f64 {
    let gg = &g.gaussians;
    match p {
        P::MeanX => gg.mean[i][0],
        P::MeanY => gg.mean[i][1],
        P::LogS1 => gg.log_scale[i][0],
        P::LogS2 => gg.log_scale[i][1],
        P::Rot => gg.rotation[i],
        P::Logit => gg.opacity_logit[i],
        P::Color => gg.color[i][0],
        P::Weight(j) => g.weights[j],
    }
}

/// Sign pattern of the raw composed kernel; the clamp is only
/// differentiable while it stays fixed.
fn active_set(basis: &KernelBasis, w: &[f64]) -> Vec<bool> {
    basis.reconstruct(w).unwrap().iter().map(|&v| v > 0.0).collect()
}

fn gradient_check(norm: LossNorm, seed: u64) {
    const H: f64 = 1e-5;
    let (w, h, n_frames, k) = (16, 16, 2, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = narrow_basis(7, k, 40, seed);
    let set = random_set(&mut rng, 8, w, h);
    let grid = (2, 2);
    let wdata: Vec<f64> = (0..4 * n_frames * k).map(|_| rng.random_range(0.01..0.05)).collect();
    let weights = RegionWeightField::from_data(grid, n_frames, k, wdata).unwrap();
    let state = RestoreState { set, weights, iteration: 0, loss_history: vec![] };
    // targets sit 0.2 away from the prediction so no L1 residual crosses zero
    let frames: Vec<Image> = (0..n_frames)
        .map(|t| {
            let p = forward_blur(&state.set, &state.weights, t, &basis, w, h).unwrap();
            p.map(|v| if v < 0.5 { v + 0.2 } else { v - 0.2 })
        })
        .collect();
    let config = RestoreConfig { lambda: 1e-2, norm, region_grid: Some(grid), ..Default::default() };
    let (loss, grads) = cycle_loss_and_grad(&frames, &state, &basis, &config).unwrap();
    assert!((loss - cycle_loss(&frames, &state, &basis, &config).unwrap()).abs() < 1e-12);

    let mut params = vec![];
    for i in 0..8 {
        params.extend([P::MeanX, P::MeanY, P::LogS1, P::LogS2, P::Rot, P::Logit, P::Color].map(|p| (i, p)));
    }
    params.extend((0..state.weights.data().len()).map(|j| (0, P::Weight(j))));
    let (mut checked, mut skipped) = (0, 0);
    for (i, p) in params {
        let mut plus = state.clone();
        perturb(&mut plus, i, p, H);
        let mut minus = state.clone();
        perturb(&mut minus, i, p, -H);
        if let P::Weight(j) = p {
            let row = j / k;
            let (t, r) = (row / 4, row % 4);
            let base = active_set(&basis, state.weights.weights(t, r));
            if active_set(&basis, plus.weights.weights(t, r)) != base
                || active_set(&basis, minus.weights.weights(t, r)) != base
            {
                skipped += 1;
                continue;
            }
        }
        let fd = (cycle_loss(&frames, &plus, &basis, &config).unwrap()
            - cycle_loss(&frames, &minus, &basis, &config).unwrap())
            / (2.0 * H);
        let a = analytic(&grads, i, p);
        if a.abs() > 1e-6 {
            let rel = (a - fd).abs() / a.abs().max(fd.abs());
            assert!(rel < 1e-4, "{norm:?} gaussian {i} {p:?}: analytic {a} fd {fd} rel {rel}");
            checked += 1;
        } else {
            assert!(fd.abs() < 1e-5, "{norm:?} gaussian {i} {p:?}: analytic {a} fd {fd}");
        }
    }
    assert!(skipped * 4 < state.weights.data().len(), "{skipped} weights skipped");
    assert!(checked > 60, "only {checked} gradients checked");
}

#[test]
fn l1_cycle_loss_gradients_match_finite_differences() {
    gradient_check(LossNorm::L1, 21);
}

#[test]
fn l2_cycle_loss_gradients_match_finite_differences() {
    gradient_check(LossNorm::L2, 22);
}

#[test]
fn identity_kernel_leaves_render_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let set = random_set(&mut rng, 6, 20, 20);
    let weights = RegionWeightField::zeros((2, 2), 1, 1).unwrap();
    let blurred = forward_blur(&set, &weights, 0, &delta_basis(5), 20, 20).unwrap();
    assert_eq!(blurred, rasterize(&set, 20, 20).unwrap());
}

/// Zero-padded discrete convolution.
fn convolve(img: &[f64], w: usize, h: usize, k: &Kernel) -> Vec<f64> {
    let r = k.radius() as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for ky in -r..=r {
                for kx in -r..=r {
                    let (sx, sy) = (x - kx, y - ky);
                    if sx >= 0 && sy >= 0 && sx < w as isize && sy < h as isize {
                        acc += img[sy as usize * w + sx as usize] * k.at(kx, ky);
                    }
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    out
}

fn single_gaussian(mean: [f64; 2], scale: [f64; 2], rotation: f64) -> GaussianSet {
    GaussianSet::with_gaussians(1, vec![Gaussian2D { mean, scale, rotation, opacity: 0.95, color: [1.0; 3] }]).unwrap()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn single_region_blur_matches_convolution() {
    let (w, h) = (64, 64);
    let basis = narrow_basis(9, 4, 60, 3);
    // rotation 0 keeps the literal per-Gaussian rotation of the kernel out of
    // the comparison
    let set = single_gaussian([31.6, 32.3], [3.0, 2.0], 0.0);
    for omega in [[0.0; 4], [0.02, 0.0, 0.01, 0.0]] {
        let weights = RegionWeightField::from_data((1, 1), 1, 4, omega.to_vec()).unwrap();
        let sharp = RenderPass::forward(&set, None, w, h).unwrap();
        let oracle = convolve(sharp.color(), w, h, &compose_kernel(&basis, &omega).unwrap());
        let got = forward_blur(&set, &weights, 0, &basis, w, h).unwrap();
        let d = l2(&got.plane_f64(0), &oracle);
        assert!(d < 1e-3 * (w as f64), "omega {omega:?}: L2 {d}");
        let rms = d / (w as f64);
        assert!(rms < 1e-3, "omega {omega:?}: rms {rms}");
    }
}

/// Unit-mass PSF read off the render of a near-delta probe at `(cx, cy)`.
fn measured_psf(img: &Image, cx: usize, cy: usize, support: usize) -> Kernel {
    let r = support / 2;
    let w = img.width();
    let plane = img.plane_f64(0);
    let total: f64 = plane.iter().sum();
    let data = (0..support * support)
        .map(|i| plane[(cy + i / support - r) * w + cx + i % support - r] / total)
        .collect();
    Kernel::new(support, data).unwrap()
}

#[test]
fn per_region_psfs_follow_their_kernels() {
    // the blur is a moment-matched Gaussian, so the oracle needs composed
    // kernels that stay close to Gaussian: a broad ensemble and small weights
    let (w, h, s) = (48, 24, 17);
    let p = TurbulenceParams {
        seed: 4,
        kernel_count: 1,
        kernel_sigma_range: (1.5, 2.0),
        kernel_support: s,
        ..Default::default()
    };
    let basis = build_pca_basis(&sample_ensemble(&p, 60, s).unwrap(), 4).unwrap();
    let weights = RegionWeightField::from_data((2, 1), 1, 4, vec![0.0, 0.0, 0.0, 0.0, 0.02, 0.0, 0.0, 0.0]).unwrap();
    let kernels = [0, 1].map(|r| compose_kernel(&basis, weights.weights(0, r)).unwrap());
    assert!(kernels[0].l2_distance(&kernels[1]) > 0.015);
    for (r, cx) in [(0usize, 12usize), (1, 36)] {
        let probe = single_gaussian([cx as f64, 12.0], [0.05, 0.05], 0.0);
        let img = forward_blur(&probe, &weights, 0, &basis, w, h).unwrap();
        let psf = measured_psf(&img, cx, 12, s);
        let own = psf.l2_distance(&kernels[r]);
        let other = psf.l2_distance(&kernels[1 - r]);
        assert!(own < 5e-3, "region {r}: L2 {own}");
        assert!(own < other, "region {r}: own {own} other {other}");
    }
}

#[test]
fn cycle_loss_of_constant_residual() {
    let basis = delta_basis(3);
    let state = RestoreState {
        set: GaussianSet::new(1).unwrap(),
        weights: RegionWeightField::zeros((1, 1), 1, 1).unwrap(),
        iteration: 0,
        loss_history: vec![],
    };
    let frames = vec![Image::filled(2, 2, 1, 0.1).unwrap()];
    let config = RestoreConfig { lambda: 0.0, region_grid: Some((1, 1)), ..Default::default() };
    let loss = cycle_loss(&frames, &state, &basis, &config).unwrap();
    assert!((loss - 0.1).abs() < 1e-7, "{loss}");
}

#[test]
fn cycle_loss_vanishes_on_own_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let basis = narrow_basis(7, 3, 30, 8);
    let set = random_set(&mut rng, 10, 16, 16);
    let weights = RegionWeightField::from_data((2, 2), 2, 3, (0..24).map(|i| 0.01 * (i % 3) as f64).collect()).unwrap();
    let frames: Vec<Image> = (0..2).map(|t| forward_blur(&set, &weights, t, &basis, 16, 16).unwrap()).collect();
    let state = RestoreState { set, weights, iteration: 0, loss_history: vec![] };
    let mut config = RestoreConfig { lambda: 0.0, region_grid: Some((2, 2)), ..Default::default() };
    // only f32 rounding of the frames remains
    assert!(cycle_loss(&frames, &state, &basis, &config).unwrap() < 1e-7);
    config.lambda = 0.5;
    let total: f64 = state.weights.data().iter().sum();
    assert!((cycle_loss(&frames, &state, &basis, &config).unwrap() - 0.5 * total).abs() < 1e-7);
}

#[test]
fn mismatched_frames_are_rejected() {
    let basis = delta_basis(3);
    let state = RestoreState {
        set: GaussianSet::new(1).unwrap(),
        weights: RegionWeightField::zeros((1, 1), 2, 1).unwrap(),
        iteration: 0,
        loss_history: vec![],
    };
    let frames = vec![Image::new(4, 4, 1).unwrap(), Image::new(5, 4, 1).unwrap()];
    assert!(cycle_loss(&frames, &state, &basis, &RestoreConfig::default()).is_err());
    let frames = vec![Image::new(4, 4, 1).unwrap()];
    assert!(cycle_loss(&frames, &state, &basis, &RestoreConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cycle_loss_is_non_negative(seed in 0u64..1000, lambda in 0.0f64..0.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = delta_basis(3);
        let set = random_set(&mut rng, 4, 12, 12);
        let frames = vec![Image::from_fn(12, 12, |x, y| ((x * 7 + y * 3 + seed as usize) % 11) as f32 / 10.0).unwrap()];
        let weights = RegionWeightField::from_data((2, 2), 1, 1, (0..4).map(|_| rng.random_range(0.0..0.1)).collect()).unwrap();
        let state = RestoreState { set, weights, iteration: 0, loss_history: vec![] };
        let config = RestoreConfig { lambda, region_grid: Some((2, 2)), ..Default::default() };
        prop_assert!(cycle_loss(&frames, &state, &basis, &config).unwrap() >= 0.0);
    }
}

#[test]
fn frozen_colours_stay_put() {
    let img = Image::from_fn(12, 12, |x, y| 0.2 + 0.05 * ((x + y) % 5) as f32).unwrap();
    let frames = vec![img.map(|v| (v + 0.1).min(1.0)); 2];
    let basis = narrow_basis(7, 3, 20, 2);
    let set = init_gaussians(&img).unwrap();
    let config = RestoreConfig { max_iters: 15, optimize_color: false, ..Default::default() };
    let out = optimize_from(set.clone(), &frames, &basis, &config, &DirectWeights, None).unwrap();
    for (a, b) in out.state.set.gaussians.iter().zip(&set.gaussians) {
        assert_eq!(a.color, b.color);
    }
    let moved = optimize_from(set.clone(), &frames, &basis, &RestoreConfig { optimize_color: true, ..config }, &DirectWeights, None).unwrap();
    assert!(moved.state.set.gaussians.iter().zip(&set.gaussians).any(|(a, b)| a.color != b.color));
}
