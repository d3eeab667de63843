use proptest::prelude::*;
use rlcsc::data::{bicubic_resize, save_y, ImageY};
use rlcsc::metrics::{crop_border, evaluate, predict, psnr, ssim, EvalOptions, Predictor};
use rlcsc::model::{ModelConfig, RlcscParams};

/// SSIM straight from the definition: a 2-D Gaussian window at every valid
/// position, weighted moments about the local means.
fn ssim_direct(a: &ImageY, b: &ImageY) -> f64 {
    let (h, w) = a.dims();
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / 4.5).exp();
            total += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut sum = 0.0;
    let mut count = 0;
    for r in 0..=h - 11 {
        for c in 0..=w - 11 {
            let wsum = |f: &dyn Fn(f64, f64) -> f64| -> f64 {
                let mut s = 0.0;
                for (i, row) in win.iter().enumerate() {
                    for (j, wt) in row.iter().enumerate() {
                        s += wt / total * f(a.get(r + i, c + j), b.get(r + i, c + j));
                    }
                }
                s
            };
            let mx = wsum(&|x, _| x);
            let my = wsum(&|_, y| y);
            let vx = wsum(&|x, _| (x - mx) * (x - mx));
            let vy = wsum(&|_, y| (y - my) * (y - my));
            let cxy = wsum(&|x, y| (x - mx) * (y - my));
            sum += (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

fn noise_image(h: usize, w: usize, seed: u64) -> ImageY {
    let mut s = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    ImageY::from_fn(h, w, |_, _| {
        s ^= s >> 12;
        s ^= s << 25;
        s ^= s >> 27;
        (s.wrapping_mul(0x2545_f491_4f6c_dd1d) >> 11) as f64 / (1u64 << 53) as f64
    })
}

fn smooth_image(h: usize, w: usize) -> ImageY {
    ImageY::from_fn(h, w, |r, c| {
        0.5 + 0.3 * (r as f64 * 0.3).sin() * (c as f64 * 0.2).cos()
    })
}

#[test]
fn ssim_matches_direct_definition() {
    let a = noise_image(16, 19, 1);
    let b = a.map(|v| 0.8 * v + 0.1);
    let c = noise_image(16, 19, 2);
    for (x, y) in [(&a, &b), (&a, &c), (&b, &c)] {
        let fast = ssim(x, y).unwrap();
        let slow = ssim_direct(x, y);
        assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
    }
}

#[test]
fn ssim_of_constant_images_has_closed_form() {
    // Zero variance leaves the luminance term only.
    let (p, q) = (0.3, 0.6);
    let expected = (2.0 * p * q + 1e-4) / (p * p + q * q + 1e-4);
    let s = ssim(&ImageY::filled(12, 12, p), &ImageY::filled(12, 12, q)).unwrap();
    assert!((s - expected).abs() < 1e-12);
}

#[test]
fn psnr_examples() {
    let a = ImageY::filled(4, 4, 0.5);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    let b = ImageY::filled(4, 4, 0.6);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    let c = ImageY::filled(4, 4, 0.5 + 1.0 / 255.0);
    assert!((psnr(&a, &c).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-9);
}

#[test]
fn crop_and_size_errors() {
    let a = ImageY::filled(6, 6, 0.5);
    assert!(crop_border(&a, 3).is_err());
    assert!(psnr(&a, &ImageY::filled(6, 5, 0.5)).is_err());
    assert!(ssim(&a, &a).is_err());
}

#[test]
fn zero_model_scores_like_bicubic() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<_> = (0..2)
        .map(|i| {
            let p = dir.path().join(format!("img{i}.png"));
            save_y(&noise_image(30 + i, 27, i as u64), &p).unwrap();
            p
        })
        .collect();
    let zeros = RlcscParams::<f32>::zeros(ModelConfig::new(4, 6, 2)).unwrap();
    for scale in [2, 3, 4] {
        let opts = EvalOptions::new(scale);
        let a = evaluate(Predictor::Bicubic, &paths, &opts);
        let b = evaluate(Predictor::Model(&zeros), &paths, &opts);
        assert!(a.missing.is_empty());
        assert_eq!(a.to_table("x"), b.to_table("x"));
        assert_eq!(a.to_csv(), b.to_csv());
    }
}

#[test]
fn bicubic_prediction_is_the_interpolated_input() {
    let hr = smooth_image(24, 31);
    let (pred, gt) = predict(&hr, Predictor::Bicubic, &EvalOptions::new(3)).unwrap();
    assert_eq!(gt.dims(), (24, 30));
    let lr = bicubic_resize(&gt, 1.0 / 3.0).unwrap();
    assert_eq!(lr.dims(), (8, 10));
    let up = bicubic_resize(&lr, 3.0).unwrap().clamp01();
    assert_eq!(pred, up);
}

#[test]
fn missing_files_are_reported_not_fatal() {
    let report = evaluate(
        Predictor::Bicubic,
        &["/nonexistent/a.png".into()],
        &EvalOptions::new(2),
    );
    assert!(report.images.is_empty());
    assert_eq!(report.missing.len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn metrics_are_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = noise_image(13, 14, s1);
        let b = noise_image(13, 14, s2);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert!(ssim(&a, &b).unwrap() <= 1.0 + 1e-12);
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn more_noise_means_lower_scores(seed in any::<u64>(), k in 1.5f64..4.0) {
        let clean = smooth_image(20, 20);
        let n = noise_image(20, 20, seed);
        let add = |amp: f64| ImageY::from_fn(20, 20, |r, c| clean.get(r, c) + amp * (n.get(r, c) - 0.5));
        let (small, large) = (add(0.02), add(0.02 * k));
        prop_assert!(psnr(&clean, &small).unwrap() > psnr(&clean, &large).unwrap());
        prop_assert!(ssim(&clean, &small).unwrap() > ssim(&clean, &large).unwrap());
    }
}
