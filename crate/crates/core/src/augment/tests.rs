use super::*;
use proptest::prelude::{prop, prop_assert, prop_assert_eq, prop_oneof, proptest, any, Just, ProptestConfig, Strategy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ALL: [OpKind; 17] = [
    OpKind::AutoContrast,
    OpKind::Brightness,
    OpKind::Color,
    OpKind::Contrast,
    OpKind::Cutout,
    OpKind::Equalize,
    OpKind::Invert,
    OpKind::Posterize,
    OpKind::Rotate,
    OpKind::Sharpness,
    OpKind::ShearX,
    OpKind::ShearY,
    OpKind::Solarize,
    OpKind::TranslateX,
    OpKind::TranslateY,
    OpKind::BlackFill,
    OpKind::Identity,
];

fn noise_image(seed: u64, h: usize, w: usize, c: usize) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RasterImage::new(h, w, c, (0..h * w * c).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn image_strategy() -> impl Strategy<Value = RasterImage> {
    (1usize..10, 1usize..10, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(h, w, c)| {
        prop::collection::vec(0.0f64..=1.0, h * w * c).prop_map(move |d| RasterImage::new(h, w, c, d).unwrap())
    })
}

#[test]
fn pool_has_fifteen_distinct_members_without_ablation_ops() {
    let mut sorted = POOL.to_vec();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), 15);
    assert!(POOL.iter().all(|k| k.in_pool()));
    assert!(!POOL.contains(&OpKind::BlackFill));
}

#[test]
fn names_round_trip() {
    for k in ALL {
        assert_eq!(OpKind::from_name(k.name()), Some(k));
    }
    assert_eq!(OpKind::from_name("rotate"), Some(OpKind::Rotate));
    assert_eq!(OpKind::from_name("Blur"), None);
}

#[test]
fn rejects_out_of_range_magnitude() {
    let img = RasterImage::filled(4, 4, 3, 0.3);
    let map = MagnitudeMap::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(apply_op(OpKind::Rotate, &img, 1.5, &map, &mut rng).is_err());
    assert!(apply_op(OpKind::Invert, &img, -0.1, &map, &mut rng).is_err());
    assert!(apply_gated(OpKind::Invert, &img, 0.5, 1.1, &map, &mut rng).is_err());
}

#[test]
fn invert_is_an_exact_involution() {
    let img = noise_image(1, 6, 5, 3);
    let d = OpDraw::NEUTRAL;
    let map = MagnitudeMap::default();
    let once = apply_op_with(OpKind::Invert, &img, 0.7, &d, &map).unwrap();
    let twice = apply_op_with(OpKind::Invert, &once, 0.2, &d, &map).unwrap();
    assert_eq!(twice, img);
}

#[test]
fn rotate_at_zero_is_identity() {
    let img = noise_image(2, 8, 8, 3);
    let out = apply_op_with(OpKind::Rotate, &img, 0.0, &OpDraw::NEUTRAL, &MagnitudeMap::default()).unwrap();
    assert_eq!(out, img);
}

#[test]
fn solarize_endpoints() {
    let img = noise_image(3, 6, 6, 3);
    let map = MagnitudeMap::default();
    let d = OpDraw::NEUTRAL;
    assert_eq!(apply_op_with(OpKind::Solarize, &img, 0.0, &d, &map).unwrap(), img);
    let inv = apply_op_with(OpKind::Invert, &img, 0.0, &d, &map).unwrap();
    assert_eq!(apply_op_with(OpKind::Solarize, &img, 1.0, &d, &map).unwrap(), inv);
    let white = RasterImage::filled(2, 2, 1, 1.0);
    assert_eq!(apply_op_with(OpKind::Solarize, &white, 0.0, &d, &map).unwrap(), white);
}

#[test]
fn cutout_half_magnitude_masks_an_eight_by_eight_square() {
    // Values avoid 0.5 so masked pixels are countable.
    let img = RasterImage::filled(32, 32, 3, 0.2);
    let map = MagnitudeMap::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let out = apply_op(OpKind::Cutout, &img, 0.5, &map, &mut rng).unwrap();
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut count = 0;
        for y in 0..32 {
            for x in 0..32 {
                if out.pixel(y, x).iter().all(|&v| v == 0.5) {
                    count += 1;
                    rows.push(y);
                    cols.push(x);
                }
            }
        }
        assert_eq!(count, 64);
        let span = |v: &[usize]| v.iter().max().unwrap() - v.iter().min().unwrap() + 1;
        assert_eq!((span(&rows), span(&cols)), (8, 8));
    }
}

#[test]
fn black_fill_is_all_zeros() {
    let img = noise_image(5, 7, 7, 3);
    let out = apply_op_with(OpKind::BlackFill, &img, 0.4, &OpDraw::NEUTRAL, &MagnitudeMap::default()).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn gated_endpoints_and_midpoint() {
    let img = noise_image(6, 5, 5, 3);
    let map = MagnitudeMap::default();
    let d = OpDraw {
        sign: -1.0,
        position: (0.3, 0.6),
    };
    for k in ALL {
        assert_eq!(apply_gated_with(k, &img, 0.6, 0.0, &d, &map).unwrap(), img);
        assert_eq!(
            apply_gated_with(k, &img, 0.6, 1.0, &d, &map).unwrap(),
            apply_op_with(k, &img, 0.6, &d, &map).unwrap()
        );
    }
    let binary = RasterImage::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let mid = apply_gated_with(OpKind::Invert, &binary, 0.0, 0.5, &d, &map).unwrap();
    assert!(mid.data().iter().all(|&v| v == 0.5));
}

#[test]
fn fixed_seed_is_deterministic() {
    let img = noise_image(7, 9, 9, 3);
    let map = MagnitudeMap::default();
    for k in ALL {
        let a = apply_op(k, &img, 0.45, &map, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = apply_op(k, &img, 0.45, &map, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b, "{k}");
    }
}

#[test]
fn magnitude_ignoring_ops_have_zero_derivative() {
    let img = noise_image(8, 6, 6, 3);
    let map = MagnitudeMap::default();
    for k in [OpKind::Invert, OpKind::AutoContrast, OpKind::Equalize] {
        let g = magnitude_grad_fd_with(k, &img, 0.5, 1e-3, &OpDraw::NEUTRAL, &map).unwrap();
        assert_eq!(g.shape(), &[6, 6, 3]);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn brightness_derivative_matches_analytic_slope() {
    // out = v * (1 + sign * span * m)  =>  d out / d m = sign * span * v
    let img = RasterImage::new(1, 4, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let map = MagnitudeMap::default();
    for sign in [1.0, -1.0] {
        let d = OpDraw {
            sign,
            position: (0.0, 0.0),
        };
        let g = magnitude_grad_fd_with(OpKind::Brightness, &img, 0.4, 1e-4, &d, &map).unwrap();
        for (gv, v) in g.data().iter().zip(img.data()) {
            assert!((gv - sign * map.enhance_span * v).abs() < 1e-9);
        }
    }
}

#[test]
fn boundary_uses_one_sided_difference() {
    let img = RasterImage::new(1, 2, 1, vec![0.2, 0.4]).unwrap();
    let map = MagnitudeMap::default();
    let g = magnitude_grad_fd_with(OpKind::Brightness, &img, 1.0, 1e-3, &OpDraw::NEUTRAL, &map).unwrap();
    assert!((g.data()[0] - 0.9 * 0.2).abs() < 1e-9);
}

#[test]
fn rotate_derivative_converges_quadratically() {
    // A linear ramp is reproduced exactly by bilinear sampling away from the
    // border, so the output at the center region is smooth in the angle.
    let n = 16;
    let data = (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64, (i % n) as f64);
            0.2 + 0.02 * y + 0.015 * x + 0.001 * x * y
        })
        .collect();
    let img = RasterImage::new(n, n, 1, data).unwrap();
    let map = MagnitudeMap::default();
    let d = OpDraw::NEUTRAL;
    let m = 0.4;
    let at = |eps: f64| magnitude_grad_fd_with(OpKind::Rotate, &img, m, eps, &d, &map).unwrap();
    let g1 = at(0.04);
    let g2 = at(0.02);
    let g4 = at(0.01);
    let idx = 6 * n + 9;
    let e1 = g1.data()[idx] - g2.data()[idx];
    let e2 = g2.data()[idx] - g4.data()[idx];
    assert!(e1.abs() > 1e-12);
    let ratio = e1 / e2;
    assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
}

#[test]
fn posterize_keeps_high_bits() {
    let img = RasterImage::new(1, 2, 1, vec![200.0 / 255.0, 37.0 / 255.0]).unwrap();
    let out = apply_op_with(OpKind::Posterize, &img, 1.0, &OpDraw::NEUTRAL, &MagnitudeMap::default()).unwrap();
    assert_eq!(out.data(), &[192.0 / 255.0, 0.0]);
}

#[test]
fn equalize_spreads_two_levels() {
    // 1024 values at levels 51 and 102: step = 512 / 255 = 2, so the upper
    // level maps to (512 + 1) / 2 = 256, clamped to 255.
    let data = (0..1024).map(|i| if i < 512 { 51.0 / 255.0 } else { 102.0 / 255.0 }).collect();
    let img = RasterImage::new(32, 32, 1, data).unwrap();
    let out = apply_op_with(OpKind::Equalize, &img, 0.0, &OpDraw::NEUTRAL, &MagnitudeMap::default()).unwrap();
    assert_eq!(out.data()[0], 0.0);
    assert_eq!(out.data()[1023], 1.0);
}

#[test]
fn autocontrast_stretches_to_full_range() {
    let img = RasterImage::new(1, 3, 1, vec![0.25, 0.5, 0.75]).unwrap();
    let out = apply_op_with(OpKind::AutoContrast, &img, 0.0, &OpDraw::NEUTRAL, &MagnitudeMap::default()).unwrap();
    assert_eq!(out.data(), &[0.0, 0.5, 1.0]);
}

#[test]
fn translate_by_whole_pixels_shifts_content() {
    let img = RasterImage::new(1, 4, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let map = MagnitudeMap {
        translate_px: 1.0,
        ..MagnitudeMap::default()
    };
    let out = apply_op_with(OpKind::TranslateX, &img, 1.0, &OpDraw::NEUTRAL, &map).unwrap();
    let v = img.data();
    assert_eq!(out.data(), &[0.0, v[0], v[1], v[2]]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn outputs_stay_in_unit_range(img in image_strategy(), m in 0.0f64..=1.0, seed in any::<u64>()) {
        let map = MagnitudeMap::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in ALL {
            let out = apply_op(k, &img, m, &map, &mut rng).unwrap();
            prop_assert_eq!(out.dims(), img.dims());
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn zero_magnitude_is_identity(img in image_strategy(), seed in any::<u64>()) {
        let map = MagnitudeMap::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in ALL.into_iter().filter(|k| k.uses_magnitude()) {
            prop_assert_eq!(apply_op(k, &img, 0.0, &map, &mut rng).unwrap(), img.clone());
        }
    }

    #[test]
    fn invert_involution_holds_for_any_image(img in image_strategy()) {
        let map = MagnitudeMap::default();
        let once = apply_op_with(OpKind::Invert, &img, 0.0, &OpDraw::NEUTRAL, &map).unwrap();
        prop_assert_eq!(apply_op_with(OpKind::Invert, &once, 0.0, &OpDraw::NEUTRAL, &map).unwrap(), img);
    }

    #[test]
    fn gated_output_is_lipschitz_in_q(
        img in image_strategy(),
        kind_idx in 0usize..17,
        m in 0.0f64..=1.0,
        q1 in 0.0f64..=1.0,
        q2 in 0.0f64..=1.0,
        sign in prop_oneof![Just(1.0), Just(-1.0)],
    ) {
        let k = ALL[kind_idx];
        let d = OpDraw { sign, position: (0.25, 0.75) };
        let map = MagnitudeMap::default();
        let a = apply_gated_with(k, &img, m, q1, &d, &map).unwrap();
        let b = apply_gated_with(k, &img, m, q2, &d, &map).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= (q1 - q2).abs() + 1e-12);
    }
}
