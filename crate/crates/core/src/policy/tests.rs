use super::*;
use crate::rng;
use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest, ProptestConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn noise(seed: u64) -> RasterImage {
    let mut r = rng::stream(seed, "img");
    RasterImage::new(6, 6, 3, (0..108).map(|_| r.random::<f64>()).collect()).unwrap()
}

#[test]
fn fresh_policy_is_uniform_over_105_pairs() {
    let p = init_policy();
    assert_eq!(p.len(), 105);
    for prob in p.probabilities() {
        assert!((prob - 1.0 / 105.0).abs() < 1e-15);
    }
    assert!(p.sub_policies.iter().all(|s| s.p == [0.5; 2] && s.m == [0.5; 2]));
    assert_eq!(init_policy(), init_policy());
}

#[test]
fn every_op_appears_in_fourteen_pairs() {
    let p = init_policy();
    for k in POOL {
        assert_eq!(p.sub_policies.iter().filter(|s| s.contains(k)).count(), 14, "{k}");
    }
    let mut pairs: Vec<_> = p.sub_policies.iter().map(|s| s.ops).collect();
    pairs.sort();
    pairs.dedup();
    assert_eq!(pairs.len(), 105);
    assert!(p.sub_policies.iter().all(|s| s.ops[0] < s.ops[1]));
}

#[test]
fn uniform_sampling_passes_chi_square() {
    let p = init_policy();
    let mut r = rng::stream(1, "chi");
    let draws = 210_000;
    let mut counts = [0usize; 105];
    for _ in 0..draws {
        counts[p.sample_subpolicy(&mut r)] += 1;
    }
    let expected = draws as f64 / 105.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let bound = ChiSquared::new(104.0).unwrap().inverse_cdf(0.99);
    assert!(stat < bound, "chi-square {stat} >= {bound}");
}

#[test]
fn saturated_logit_dominates() {
    let mut p = init_policy();
    p.sub_policies[17].w = 20.0;
    let mut r = rng::stream(2, "sat");
    let hits = (0..10_000).filter(|_| p.sample_subpolicy(&mut r) == 17).count();
    assert!(hits as f64 >= 0.999 * 10_000.0);
}

#[test]
fn two_category_ratio_is_three_to_one() {
    let probs = softmax(&[3f64.ln(), 0.0]);
    assert!((probs[0] - 0.75).abs() < 1e-12);
    let mut r = rng::stream(3, "ratio");
    let n = 100_000;
    let first = (0..n).filter(|_| sample_index(&probs, &mut r) == 0).count() as f64 / n as f64;
    // 4.5 standard deviations of a Bernoulli(0.75) mean
    assert!((first - 0.75).abs() < 4.5 * (0.75f64 * 0.25 / n as f64).sqrt());
}

#[test]
fn apply_subpolicy_examples() {
    let img = noise(4);
    let map = MagnitudeMap::default();
    let mut r = rng::stream(4, "apply");
    let mut sp = SubPolicy::new([OpKind::Invert, OpKind::Rotate]);
    sp.p = [0.0, 0.0];
    assert_eq!(apply_subpolicy(&sp, &img, &map, &mut r).unwrap(), img);
    sp.p = [1.0, 0.0];
    let inv = apply_op(OpKind::Invert, &img, 0.0, &map, &mut r).unwrap();
    assert_eq!(apply_subpolicy(&sp, &img, &map, &mut r).unwrap(), inv);
    let mut geo = SubPolicy::new([OpKind::Rotate, OpKind::TranslateX]);
    geo.p = [1.0, 1.0];
    geo.m = [0.0, 0.0];
    assert_eq!(apply_subpolicy(&geo, &img, &map, &mut r).unwrap(), img);
}

#[test]
fn sharpen_examples() {
    let w = [0.02, 0.01, 0.0];
    let s = sharpen(&w, Temperature::Finite(1e-3)).unwrap();
    // Oracle: softmax of (20, 10, 0) evaluated directly.
    let z = 1.0 + (-10f64).exp() + (-20f64).exp();
    let expected = [1.0 / z, (-10f64).exp() / z, (-20f64).exp() / z];
    for (a, b) in s.weights.iter().zip(expected) {
        assert!((a - b).abs() <= 1e-12 * b.max(1e-300) + 1e-15);
    }
    assert!((s.weights[0] - 0.99995).abs() < 1e-5);
    assert!((s.weights[1] - 4.5e-5).abs() < 1e-6);
    assert!((s.weights[2] - 2.1e-9).abs() < 1e-10);
    let uni = sharpen(&w, Temperature::Infinite).unwrap();
    assert!(uni.weights.iter().all(|&v| v == 1.0 / 3.0));
    for t in [1e-4, 0.5, 30.0] {
        let s = sharpen(&[0.7; 5], Temperature::Finite(t)).unwrap();
        assert!(s.weights.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }
    assert!(sharpen(&w, Temperature::Finite(0.0)).is_err());
    assert!(sharpen(&w, Temperature::Finite(-1.0)).is_err());
    assert!(Temperature::finite(0.0).is_err());
}

#[test]
fn sharpen_survives_large_logits() {
    let s = sharpen(&[1000.0, 999.0], Temperature::Finite(1e-4)).unwrap();
    assert!(s.weights.iter().all(|v| v.is_finite()));
    assert_eq!(s.weights[0], 1.0);
}

#[test]
fn temperature_parsing() {
    assert_eq!("inf".parse::<Temperature>().unwrap(), Temperature::Infinite);
    assert_eq!("orig".parse::<Temperature>().unwrap(), Temperature::Original);
    assert_eq!("1e-3".parse::<Temperature>().unwrap(), Temperature::Finite(1e-3));
    assert!("0".parse::<Temperature>().is_err());
    assert!("hot".parse::<Temperature>().is_err());
}

#[test]
fn strong_augment_examples() {
    let img = noise(5);
    let map = MagnitudeMap::default();
    let mut policy = AugPolicy::uniform(&[OpKind::Invert, OpKind::Rotate, OpKind::Identity]).unwrap();
    // entry 0: Invert+Rotate, entry 1: Invert+Identity, entry 2: Rotate+Identity
    policy.sub_policies[1].p = [1.0, 1.0];
    policy.sub_policies[2].m = [0.0, 0.0];
    let mut r = rng::stream(5, "strong");
    let point = |i: usize| SharpenedWeights {
        weights: (0..3).map(|j| if j == i { 1.0 } else { 0.0 }).collect(),
        temperature: Temperature::Original,
    };
    assert_eq!(strong_augment(&img, &point(2), &policy, 1, &map, &mut r).unwrap(), img);
    assert_eq!(strong_augment(&img, &point(1), &policy, 2, &map, &mut r).unwrap(), img);
    assert_ne!(strong_augment(&img, &point(1), &policy, 1, &map, &mut r).unwrap(), img);
    assert!(strong_augment(&img, &point(1), &policy, 0, &map, &mut r).is_err());
}

#[test]
fn independent_streams_pick_different_subpolicies_at_expected_rate() {
    let w = sharpen(&init_policy().logits(), Temperature::Infinite).unwrap().weights;
    let collision: f64 = w.iter().map(|p| p * p).sum();
    assert!((1.0 - collision - 0.9905).abs() < 1e-4);
    let trials = 20_000;
    let differ = (0..trials)
        .filter(|&t| {
            let a = sample_index(&w, &mut rng::stream(t, "image-0"));
            let b = sample_index(&w, &mut rng::stream(t, "image-1"));
            a != b
        })
        .count() as f64
        / trials as f64;
    let sd = (collision * (1.0 - collision) / trials as f64).sqrt();
    assert!((differ - (1.0 - collision)).abs() < 5.0 * sd);
}

#[test]
fn json_round_trip_is_bit_exact() {
    let p = init_policy();
    assert_eq!(AugPolicy::from_json(&p.to_json().unwrap()).unwrap(), p);
    let mut q = init_policy();
    let mut r = rng::stream(6, "json");
    for s in &mut q.sub_policies {
        s.w = r.random::<f64>() * 10.0 - 5.0;
        s.p = [r.random(), r.random()];
        s.m = [r.random(), r.random()];
    }
    q.sharpen_t = Some(Temperature::Finite(1e-3));
    let text = q.to_json().unwrap();
    assert!(text.contains("\"sharpen_T\": 1.0000000000000000e-3"));
    assert_eq!(AugPolicy::from_json(&text).unwrap(), q);
    q.sharpen_t = Some(Temperature::Infinite);
    assert_eq!(AugPolicy::from_json(&q.to_json().unwrap()).unwrap(), q);
}

#[test]
fn json_rejections_name_the_field() {
    let p = init_policy();
    let mut doc: Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
    let mut short = doc.clone();
    short["sub_policies"].as_array_mut().unwrap().pop();
    let err = AugPolicy::from_json(&short.to_string()).unwrap_err().to_string();
    assert!(err.contains("sub_policies") && err.contains("104"), "{err}");

    doc["sub_policies"][42]["p"][1] = serde_json::json!(1.2);
    let err = AugPolicy::from_json(&doc.to_string()).unwrap_err().to_string();
    assert!(err.contains("sub_policies[42].p[1]"), "{err}");

    let mut dup: Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
    dup["sub_policies"][1]["ops"] = dup["sub_policies"][0]["ops"].clone();
    let err = AugPolicy::from_json(&dup.to_string()).unwrap_err().to_string();
    assert!(err.contains("sub_policies[1].ops"), "{err}");

    assert!(AugPolicy::from_json("[]").is_err());
    assert!(AugPolicy::from_json("{").is_err());
}

#[test]
fn mass_on_invert_under_uniform_weights() {
    let p = init_policy();
    let mass = p.mass_on(&p.probabilities(), OpKind::Invert);
    assert!((mass - 14.0 / 105.0).abs() < 1e-12);
}

fn descending_order(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
    idx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sharpened_weights_sum_to_one_and_keep_order(
        w in prop::collection::vec(-3.0f64..3.0, 2..40),
        t in 1e-4f64..10.0,
    ) {
        let s = sharpen(&w, Temperature::Finite(t)).unwrap();
        prop_assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert_eq!(crate::tensor::argmax(&s.weights), crate::tensor::argmax(&w));
        // Sorting w descending also sorts the sharpened weights descending.
        for pair in descending_order(&w).windows(2) {
            prop_assert!(s.weights[pair[0]] >= s.weights[pair[1]]);
        }
    }

    #[test]
    fn entropy_is_non_decreasing_in_temperature(
        w in prop::collection::vec(-2.0f64..2.0, 2..30),
        t1 in 1e-3f64..5.0,
        t2 in 1e-3f64..5.0,
    ) {
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let h_lo = entropy(&sharpen(&w, Temperature::Finite(lo)).unwrap().weights);
        let h_hi = entropy(&sharpen(&w, Temperature::Finite(hi)).unwrap().weights);
        prop_assert!(h_hi >= h_lo - 1e-12);
        let h_inf = entropy(&sharpen(&w, Temperature::Infinite).unwrap().weights);
        prop_assert!(h_inf >= h_hi - 1e-12);
    }

    #[test]
    fn constant_logits_have_maximal_entropy(c in -5.0f64..5.0, t in 1e-4f64..10.0) {
        let s = sharpen(&[c; 105], Temperature::Finite(t)).unwrap();
        prop_assert!((entropy(&s.weights) - 105f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn empirical_distribution_tracks_softmax(w in prop::collection::vec(-1.5f64..1.5, 3..8), seed in any::<u64>()) {
        let probs = softmax(&w);
        let mut r = rng::stream(seed, "emp");
        let n = 20_000;
        let mut counts = vec![0usize; w.len()];
        for _ in 0..n {
            counts[sample_index(&probs, &mut r)] += 1;
        }
        let stat: f64 = counts.iter().zip(&probs).map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        }).sum();
        let bound = ChiSquared::new((w.len() - 1) as f64).unwrap().inverse_cdf(0.9999);
        prop_assert!(stat < bound);
    }
}
