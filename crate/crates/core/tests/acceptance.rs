//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! Run alone with `cargo test --release -p turbsplat --test acceptance`.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turbsplat::cli;
use turbsplat::gaussian2d::{rasterize, Gaussian2D, GaussianSet, RenderPass};
use turbsplat::imgcore::Image;
use turbsplat::kernelbasis::{build_pca_basis, compose_kernel, Kernel, KernelBasis, RegionWeightField};
use turbsplat::metrics::{psnr, ssim};
use turbsplat::restore::*;
use turbsplat::tiltcorrect::{correct_reference, FlowConfig, Reference};
use turbsplat::turbsim::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(t: Duration, limit_s: f64) -> bool {
    t.as_secs_f64() < limit_s
}

// 1. finite-difference gradients

fn random_set(rng: &mut ChaCha8Rng, n: usize, w: usize, h: usize) -> GaussianSet {
    let gs = (0..n)
        .map(|_| {
            let mut pick = |hi: usize| loop {
                let v = rng.random_range(2.0..hi as f64 - 2.0);
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

fn nudge(state: &mut RestoreState, param: usize, d: f64) {
    let n_g = state.set.gaussians.len() * 7;
    if param >= n_g {
        state.weights.data_mut()[param - n_g] += d;
        return;
    }
    let g = &mut state.set.gaussians[param / 7];
    match param % 7 {
        0 => g.mean[0] += d,
        1 => g.mean[1] += d,
        2 => g.scale[0] *= d.exp(),
        3 => g.scale[1] *= d.exp(),
        4 => g.rotation += d,
        5 => {
            let l = (g.opacity / (1.0 - g.opacity)).ln() + d;
            g.opacity = 1.0 / (1.0 + (-l).exp());
        }
        _ => g.color[0] += d,
    }
}

fn analytic(g: &LossGrads, param: usize) -> f64 {
    let n_g = g.gaussians.mean.len() * 7;
    if param >= n_g {
        return g.weights[param - n_g];
    }
    let (i, gg) = (param / 7, &g.gaussians);
    match param % 7 {
        0 => gg.mean[i][0],
        1 => gg.mean[i][1],
        2 => gg.log_scale[i][0],
        3 => gg.log_scale[i][1],
        4 => gg.rotation[i],
        5 => gg.opacity_logit[i],
        _ => gg.color[i][0],
    }
}

fn gradients() -> Outcome {
    const H: f64 = 1e-5;
    let t0 = Instant::now();
    let (w, h, n_frames, k) = (16, 16, 2, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = TurbulenceParams { seed: 21, kernel_count: 1, kernel_sigma_range: (0.5, 0.9), kernel_support: 7, ..Default::default() };
    let basis = build_pca_basis(&sample_ensemble(&p, 40, 7).unwrap(), k).unwrap();
    let set = random_set(&mut rng, 8, w, h);
    let wdata: Vec<f64> = (0..4 * n_frames * k).map(|_| rng.random_range(0.01..0.05)).collect();
    let weights = RegionWeightField::from_data((2, 2), n_frames, k, wdata).unwrap();
    let state = RestoreState { set, weights, iteration: 0, loss_history: vec![] };
    // targets 0.2 away from the prediction keep every L1 residual on one side
    let frames: Vec<Image> = (0..n_frames)
        .map(|t| {
            forward_blur(&state.set, &state.weights, t, &basis, w, h)
                .unwrap()
                .map(|v| if v < 0.5 { v + 0.2 } else { v - 0.2 })
        })
        .collect();
    let config = RestoreConfig { lambda: 1e-2, region_grid: Some((2, 2)), ..Default::default() };
    let (_, grads) = cycle_loss_and_grad(&frames, &state, &basis, &config).unwrap();
    let active = |wts: &RegionWeightField, j: usize| -> Vec<bool> {
        let row = j / k;
        basis.reconstruct(wts.weights(row / 4, row % 4)).unwrap().iter().map(|&v| v > 0.0).collect()
    };
    let n_params = 8 * 7 + state.weights.data().len();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for param in 0..n_params {
        let mut plus = state.clone();
        nudge(&mut plus, param, H);
        let mut minus = state.clone();
        nudge(&mut minus, param, -H);
        if param >= 56 {
            // the kernel clamp is only differentiable while its active set holds
            let j = param - 56;
            let base = active(&state.weights, j);
            if active(&plus.weights, j) != base || active(&minus.weights, j) != base {
                skipped += 1;
                continue;
            }
        }
        let fd = (cycle_loss(&frames, &plus, &basis, &config).unwrap()
            - cycle_loss(&frames, &minus, &basis, &config).unwrap())
            / (2.0 * H);
        let a = analytic(&grads, param);
        if a.abs() > 1e-6 {
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()));
            checked += 1;
        }
    }
    let t = t0.elapsed();
    outcome(
        worst < 1e-4 && within(t, 10.0),
        format!("max rel err {worst:.2e} over {checked} gradients ({skipped} clamp-boundary weights skipped), {t:.1?}"),
    )
}

// 2. blur by covariance addition against discrete convolution

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

fn convolution_identity() -> Outcome {
    let t0 = Instant::now();
    let (w, h) = (64, 64);
    let p = TurbulenceParams { seed: 3, kernel_count: 1, kernel_sigma_range: (0.5, 0.9), kernel_support: 9, ..Default::default() };
    let basis = build_pca_basis(&sample_ensemble(&p, 60, 9).unwrap(), 4).unwrap();
    let g = Gaussian2D { mean: [31.6, 32.3], scale: [3.0, 2.0], rotation: 0.0, opacity: 0.95, color: [1.0; 3] };
    let set = GaussianSet::with_gaussians(1, vec![g]).unwrap();
    let mut worst = 0.0f64;
    for omega in [[0.0; 4], [0.02, 0.0, 0.01, 0.0]] {
        let weights = RegionWeightField::from_data((1, 1), 1, 4, omega.to_vec()).unwrap();
        let sharp = RenderPass::forward(&set, None, w, h).unwrap();
        let oracle = convolve(sharp.color(), w, h, &compose_kernel(&basis, &omega).unwrap());
        let got = forward_blur(&set, &weights, 0, &basis, w, h).unwrap().plane_f64(0);
        let sq: f64 = got.iter().zip(&oracle).map(|(a, b)| (a - b).powi(2)).sum();
        worst = worst.max((sq / (w * h) as f64).sqrt());
    }
    let t = t0.elapsed();
    outcome(worst < 1e-3 && within(t, 5.0), format!("rms {worst:.2e}, {t:.1?}"))
}

// 3. PCA basis

fn pca_oracle() -> Outcome {
    let t0 = Instant::now();
    let p = TurbulenceParams { seed: 5, ..Default::default() };
    let pair = sample_ensemble(&p, 2, 21).unwrap();
    let b = build_pca_basis(&pair, 1).unwrap();
    let (a, c) = (pair[0].data(), pair[1].data());
    let diff: Vec<f64> = a.iter().zip(c).map(|(x, y)| x - y).collect();
    let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sign = b.components()[0].dot(&Kernel::new(21, diff.clone()).unwrap()).signum();
    let mut closed = 0.0f64;
    for i in 0..a.len() {
        closed = closed.max((b.principal().data()[i] - 0.5 * (a[i] + c[i])).abs());
        closed = closed.max((sign * b.components()[0].data()[i] - diff[i] / norm).abs());
    }
    closed = closed.max((b.eigenvalues()[0] - 0.5 * norm * norm).abs());

    let ens = sample_ensemble(&TurbulenceParams { seed: 7, ..Default::default() }, 512, 21).unwrap();
    let held = sample_ensemble(&TurbulenceParams { seed: 8, ..Default::default() }, 16, 21).unwrap();
    let full = build_pca_basis(&ens, 100).unwrap();
    let err = |n: usize| -> f64 {
        let basis = full.truncated(n);
        held.iter()
            .map(|k| {
                let rec = basis.reconstruct(&basis.project(k).unwrap()).unwrap();
                rec.iter().zip(k.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / held.len() as f64
    };
    let errs: Vec<f64> = [1, 10, 50, 100].iter().map(|&n| err(n)).collect();
    let monotone = errs.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let t = t0.elapsed();
    outcome(
        closed < 1e-9 && monotone && within(t, 30.0),
        format!("two-sample max err {closed:.1e}; held-out error over k=1,10,50,100: {errs:.4?}, {t:.1?}"),
    )
}

// 4. tilt correction

fn tilt_correction() -> Outcome {
    let t0 = Instant::now();
    let n = 256;
    let clean = natural_scene(n, n, 1, 4).unwrap();
    let p = TurbulenceParams {
        kernel_count: 1,
        kernel_sigma_range: (1e-3, 1e-3),
        kernel_support: 3,
        seed: 31,
        ..Default::default()
    };
    let seq = degrade_sequence(&clean, &p, 50, (1, 1)).unwrap();
    let c = correct_reference(&seq.frames, Reference::Frame(0), &FlowConfig::default()).unwrap();
    let raw = psnr(&clean, &seq.frames[0]).unwrap();
    let fixed = psnr(&clean, &c.image).unwrap();
    let t = t0.elapsed();
    outcome(
        fixed - raw >= 3.0 && within(t, 120.0),
        format!("raw reference {raw:.2} dB, corrected {fixed:.2} dB (+{:.2}), {t:.1?}", fixed - raw),
    )
}

// 5 and 6. end-to-end on a simulated tilt and blur bundle

/// Iteration budget for the 256x256 runs; see the README.
const E2E_ITERS: usize = 150;

struct Bundle {
    clean: Image,
    frames: Vec<Image>,
    basis: KernelBasis,
}

fn bundle() -> Bundle {
    let n = 256;
    let clean = natural_scene(n, n, 1, 11).unwrap();
    let p = TurbulenceParams { seed: 5, ..Default::default() };
    let frames = degrade_sequence(&clean, &p, 50, (16, 16)).unwrap().frames;
    let ens = sample_ensemble(&TurbulenceParams { seed: 99, ..p }, 512, 21).unwrap();
    let basis = build_pca_basis(&ens, 100).unwrap();
    Bundle { clean, frames, basis }
}

fn e2e_config() -> RestoreConfig {
    RestoreConfig { max_iters: E2E_ITERS, convergence_window: E2E_ITERS, ..Default::default() }
}

fn restore_n(b: &Bundle, n: usize) -> (Image, Duration) {
    let t0 = Instant::now();
    let out = restore_sequence(&b.frames[..n], &b.basis, &e2e_config(), None).unwrap();
    (out.optimized.restored, t0.elapsed())
}

fn end_to_end(b: &Bundle, restored: &Image, t: Duration) -> Outcome {
    let n = b.frames.len() as f64;
    let dp = b.frames.iter().map(|f| psnr(&b.clean, f).unwrap()).sum::<f64>() / n;
    let ds = b.frames.iter().map(|f| ssim(&b.clean, f).unwrap()).sum::<f64>() / n;
    let rp = psnr(&b.clean, restored).unwrap();
    let rs = ssim(&b.clean, restored).unwrap();
    outcome(
        rp - dp >= 2.0 && rs > ds && within(t, 900.0),
        format!("degraded {dp:.2} dB / {ds:.4}, restored {rp:.2} dB / {rs:.4} ({E2E_ITERS} iterations), {t:.1?}"),
    )
}

fn frame_counts(b: &Bundle, full: &Image) -> Outcome {
    let mut p = Vec::new();
    for n in [1, 10, 20] {
        p.push(psnr(&b.clean, &restore_n(b, n).0).unwrap());
    }
    p.push(psnr(&b.clean, full).unwrap());
    let monotone = p.windows(2).all(|w| w[1] >= w[0]);
    let spread = p[3] - p[0];
    outcome(monotone && spread >= 1.0, format!("psnr over 1,10,20,50 frames: {p:.2?}, spread {spread:.2} dB"))
}

// 7 to 9. ablations on in-class data

const ABLATION_ITERS: usize = 300;

struct InClass {
    truth: Image,
    frames: Vec<Image>,
    basis: KernelBasis,
}

/// Frames rendered by the restoration model itself from a known splat set.
fn in_class() -> InClass {
    let (n, nf) = (64, 4);
    let sharp = init_gaussians(&natural_scene(n, n, 1, 3).unwrap()).unwrap();
    let truth = rasterize(&sharp, n, n).unwrap();
    let p = TurbulenceParams { seed: 1, kernel_support: 13, ..Default::default() };
    let basis = build_pca_basis(&sample_ensemble(&p, 512, 13).unwrap(), 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut w = RegionWeightField::zeros(default_grid(n, n), nf, 100).unwrap();
    for v in w.data_mut() {
        if rng.random::<f64>() < 0.1 {
            *v = rng.random_range(0.0..0.05);
        }
    }
    let frames = (0..nf).map(|t| forward_blur(&sharp, &w, t, &basis, n, n).unwrap()).collect();
    InClass { truth, frames, basis }
}

fn ablation_base() -> RestoreConfig {
    RestoreConfig {
        max_iters: ABLATION_ITERS,
        convergence_window: ABLATION_ITERS,
        lambda: 1e-5,
        batch_frames: 0,
        ..Default::default()
    }
}

/// `(final loss, psnr)`.
fn ablate(d: &InClass, cfg: &RestoreConfig) -> (f64, f64) {
    let init = init_gaussians(&Image::mean_of(&d.frames).unwrap()).unwrap();
    let out = optimize_from(init, &d.frames, &d.basis, cfg, &DirectWeights, None).unwrap();
    (out.trace.last().unwrap().loss, psnr(&d.truth, &out.restored).unwrap())
}

fn region_grid(d: &InClass, constrained: (f64, f64)) -> Outcome {
    let n = d.truth.width();
    let (l_pp, p_pp) = ablate(d, &RestoreConfig { region_grid: Some((n, n)), ..ablation_base() });
    let (l16, p16) = constrained;
    outcome(
        l16 <= l_pp && p16 - p_pp >= 0.5,
        format!("16 px: loss {l16:.3e} psnr {p16:.2}; per-pixel: loss {l_pp:.3e} psnr {p_pp:.2}"),
    )
}

fn components(d: &InClass, full: f64) -> Outcome {
    let mut p: Vec<f64> =
        [0, 25, 50].iter().map(|&k| ablate(d, &RestoreConfig { n_components: k, ..ablation_base() }).1).collect();
    p.push(full);
    let monotone = p.windows(2).all(|w| w[1] >= w[0]);
    outcome(monotone, format!("psnr over k=0,25,50,100: {p:.2?}"))
}

fn constraints(d: &InClass, constrained: f64) -> Outcome {
    let (_, free) = ablate(d, &RestoreConfig { project_weights: false, ..ablation_base() });
    let (_, dense) = ablate(d, &RestoreConfig { lambda: 0.0, ..ablation_base() });
    outcome(
        free <= constrained && dense <= constrained,
        format!("constrained {constrained:.2}, no projection {free:.2}, lambda=0 {dense:.2}"),
    )
}

// 10. region arithmetic

fn region_arithmetic() -> Outcome {
    let (h, w) = (512, 512);
    let theta = isoplanatic_angle_horizontal(0.05, 500.0).unwrap();
    // field of view that makes an isoplanatic patch 16 px wide
    let fov = theta / 16.0 * (h * w) as f64;
    let rc = region_pixel_count(fov, h, w, theta, RegionMode::Literal).unwrap();
    let regional = RegionWeightField::zeros(rc.grid, 1, 100).unwrap().data().len();
    let per_pixel = RegionWeightField::zeros((w, h), 1, 100).unwrap().data().len();
    outcome(
        rc.grid == (32, 32) && per_pixel == 256 * regional && default_grid(w, h) == (32, 32),
        format!("patch {:.1} px, grid {:?}, weights {per_pixel} -> {regional}", rc.patch_pixels, rc.grid),
    )
}

// 11. determinism

fn run_cli(args: &[&str]) -> i32 {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    cli::run(std::iter::once("turbsplat").chain(args.iter().copied()), &mut out, &mut err)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = root.join("config.json");
    std::fs::write(
        &cfg,
        r#"{ "simulate": { "width": 48, "height": 48, "n_frames": 4, "turbulence": { "kernel_support": 9, "kernel_sigma_range": [0.4, 1.0] } },
             "basis": { "ensemble_size": 64, "n_components": 8 },
             "restore": { "max_iters": 30, "n_components": 8 } }"#,
    )
    .unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let (bundle, basis) = (root.join("bundle"), root.join("basis.f32"));
    let mut ok = run_cli(&["simulate", "--config", &s(&cfg), "--seed", "4", "--out", &s(&bundle)]) == 0;
    ok &= run_cli(&["basis", "--config", &s(&cfg), "--seed", "4", "--out", &s(&basis)]) == 0;
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|tag| {
            let out = root.join(tag);
            let code = run_cli(&[
                "restore",
                "--deterministic",
                "--config",
                &s(&cfg),
                &s(&bundle),
                "--basis",
                &s(&basis),
                "--out",
                &s(&out),
            ]);
            (code, out)
        })
        .collect();
    ok &= runs.iter().all(|(c, _)| *c == 0);
    let (a, b) = (dir_bytes(&runs[0].1), dir_bytes(&runs[1].1));
    let same = ok && !a.is_empty() && a == b;
    outcome(same, format!("{} output files compared", a.len()))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} {:<4} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "gradient correctness", gradients());
    report(2, "convolution identity", convolution_identity());
    report(3, "pca oracle", pca_oracle());
    report(4, "tilt correction", tilt_correction());

    let b = bundle();
    let (full, t) = restore_n(&b, b.frames.len());
    report(5, "end-to-end restore", end_to_end(&b, &full, t));
    report(6, "frame-count trend", frame_counts(&b, &full));
    drop(b);

    let d = in_class();
    let constrained = ablate(&d, &ablation_base());
    report(7, "region grid vs per-pixel", region_grid(&d, constrained));
    report(8, "component-count trend", components(&d, constrained.1));
    report(9, "positivity and sparsity", constraints(&d, constrained.1));

    report(10, "region arithmetic", region_arithmetic());
    report(11, "determinism", determinism());

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
