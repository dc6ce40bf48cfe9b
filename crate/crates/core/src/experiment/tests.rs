use super::*;
use crate::policy::init_policy;

const TINY: &str = "synthetic:color,k=2,size=8,per_class=25,noise=0.05";

fn tiny_train() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        fixmatch: FixMatchConfig {
            batch_size: 4,
            mu: 2,
            tau: 0.6,
            ..FixMatchConfig::default()
        },
        model: ModelConfig {
            conv_widths: vec![4],
            hidden: 8,
        },
        ..TrainConfig::default()
    }
}

fn tiny_spec(mode: TrainMode, seed: u64) -> RunSpec {
    RunSpec {
        command: "test".into(),
        label: "row".into(),
        dataset: TINY.into(),
        data_seed: 0,
        seed,
        mode,
        train: tiny_train(),
    }
}

fn tiny_data() -> TrainData {
    let ds = load_dataset(TINY, 0).unwrap();
    TrainData::from_split(&ds, &make_split(&ds, 0).unwrap()).unwrap()
}

#[test]
fn macro_accuracy_examples() {
    let labels = [0, 0, 1, 1, 2, 2];
    assert_eq!(macro_accuracy(&labels, &labels, 3).unwrap(), 1.0);
    let constant = [1; 6];
    assert!((macro_accuracy(&constant, &labels, 3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    // Class 0 has eight items, all right; class 1 has two, one right.
    let labels = [0, 0, 0, 0, 0, 0, 0, 0, 1, 1];
    let preds = [0, 0, 0, 0, 0, 0, 0, 0, 1, 0];
    assert_eq!(macro_accuracy(&preds, &labels, 2).unwrap(), 0.75);
}

#[test]
fn macro_accuracy_rejects_empty_class() {
    assert!(macro_accuracy(&[0, 0], &[0, 0], 2).is_err());
    assert!(macro_accuracy(&[0], &[0, 1], 2).is_err());
}

#[test]
fn run_spec_json_round_trip() {
    let mut policy = init_policy();
    policy.sub_policies[3].w = 0.25;
    policy.sub_policies[7].p = [0.1, 0.9];
    for mode in [
        TrainMode::WeakSupervised,
        TrainMode::FixmatchOriginal,
        TrainMode::SingleOp {
            op: OpKind::BlackFill,
            magnitude: 0.5,
        },
        TrainMode::Policy {
            policy: policy.clone(),
            temperature: Temperature::Finite(9e-4),
            n: 2,
        },
        TrainMode::Policy {
            policy: policy.clone(),
            temperature: Temperature::Original,
            n: 1,
        },
        TrainMode::random_policy(3),
    ] {
        let spec = tiny_spec(mode, 4);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<RunSpec>(&text).unwrap(), spec);
    }
}

#[test]
fn baseline_names_parse() {
    for b in Baseline::ALL {
        assert_eq!(b.name().parse::<Baseline>().unwrap(), b);
    }
    assert!("supervised".parse::<Baseline>().is_err());
}

#[test]
fn run_ids_are_file_safe() {
    let mut spec = tiny_spec(TrainMode::WeakSupervised, 2);
    spec.label = "T0.0009-n1".into();
    assert_eq!(spec.run_id(), "test-T0_0009-n1-s2");
}

#[test]
fn run_is_deterministic_and_replayable() {
    let spec = tiny_spec(TrainMode::random_policy(1), 1);
    let a = run(&spec, &tiny_data()).unwrap();
    let b = replay(&spec).unwrap();
    assert_eq!(a.record, b.record);
    assert_eq!(a.params, b.params);
    assert_eq!(a.record.epoch_accuracy.len(), 2);
    assert!(a.record.epoch_accuracy.iter().all(|x| (0.0..=1.0).contains(x)));
    let back = RunRecord::from_json(&a.record.to_json().unwrap()).unwrap();
    assert_eq!(back, a.record);
}

#[test]
fn infinite_temperature_matches_random_policy() {
    let data = tiny_data();
    let mut policy = init_policy();
    for (k, sp) in policy.sub_policies.iter_mut().enumerate() {
        sp.w = (k as f64 * 0.37).sin();
    }
    let learned = TrainMode::Policy {
        policy,
        temperature: Temperature::Infinite,
        n: 1,
    };
    let a = run(&tiny_spec(learned, 5), &data).unwrap();
    let b = run(&tiny_spec(TrainMode::random_policy(1), 5), &data).unwrap();
    assert_eq!(bits(&a.record.epoch_accuracy), bits(&b.record.epoch_accuracy));
    assert_eq!(a.params, b.params);
    assert_eq!(a.record.sampling_weights, b.record.sampling_weights);
}

#[test]
fn original_and_sharpened_runs_differ_only_in_weights() {
    let data = tiny_data();
    let mut policy = init_policy();
    for (k, sp) in policy.sub_policies.iter_mut().enumerate() {
        sp.w = (k % 5) as f64 * 0.2;
    }
    let mode = |t| TrainMode::Policy {
        policy: policy.clone(),
        temperature: t,
        n: 1,
    };
    let orig = run(&tiny_spec(mode(Temperature::Original), 0), &data).unwrap().record;
    let sharp = run(&tiny_spec(mode(Temperature::Finite(1e-3)), 0), &data).unwrap().record;
    let (wo, ws) = (orig.sampling_weights.unwrap(), sharp.sampling_weights.unwrap());
    assert_eq!(wo, policy.probabilities());
    assert_ne!(wo, ws);
    assert!(crate::policy::entropy(&ws) < crate::policy::entropy(&wo));
    let mut a = orig.spec.clone();
    a.mode = sharp.spec.mode.clone();
    assert_eq!(a, sharp.spec);
}

#[test]
fn lambda_zero_fixmatch_skips_the_consistency_term() {
    let mut spec = tiny_spec(TrainMode::FixmatchOriginal, 0);
    spec.train.fixmatch.lambda_u = 0.0;
    let out = run(&spec, &tiny_data()).unwrap();
    for line in &out.log {
        if let TrainLogLine::Step(s) = line {
            assert_eq!(s.unsup_loss, 0.0);
        }
    }
}

#[test]
fn supervised_modes_have_no_consistency_term() {
    let data = tiny_data();
    for mode in [TrainMode::WeakSupervised, TrainMode::RandaugSupervised] {
        let out = run(&tiny_spec(mode, 3), &data).unwrap();
        assert!(out.log.iter().all(|l| match l {
            TrainLogLine::Step(s) => s.unsup_loss == 0.0 && s.mask_rate == 0.0,
            TrainLogLine::Epoch { .. } => true,
        }));
    }
}

#[test]
fn invalid_settings_are_rejected() {
    let data = tiny_data();
    let mut spec = tiny_spec(TrainMode::random_policy(0), 0);
    assert!(run(&spec, &data).is_err());
    spec.mode = TrainMode::SingleOp {
        op: OpKind::Rotate,
        magnitude: 1.5,
    };
    assert!(run(&spec, &data).is_err());
    spec.mode = TrainMode::WeakSupervised;
    spec.train.epochs = 0;
    assert!(run(&spec, &data).is_err());
    assert!("0".parse::<Temperature>().is_err());
    assert!("-1e-3".parse::<Temperature>().is_err());
}

#[test]
fn experiment_config_round_trip_and_defaults() {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.seeds, 3);
    assert_eq!(cfg.ablation_magnitude, 0.5);
    assert_eq!(ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
    let partial = ExperimentConfig::from_json(r#"{"seed": 7, "train": {"temperature": "inf"}}"#).unwrap();
    assert_eq!(partial.seed, 7);
    assert_eq!(partial.train.temperature, Temperature::Infinite);
    assert_eq!(partial.run_seeds(), vec![7, 8, 9]);
    assert!(ExperimentConfig::from_json(r#"{"seeds": 0}"#).is_err());
}

#[test]
fn sweep_axis_defaults() {
    let t = default_t_values();
    assert_eq!(t.len(), 12);
    assert_eq!(&t[..2], ["1e-4", "2e-4"]);
    assert_eq!(&t[9..], ["1e-3", "inf", "orig"]);
    let parsed: Vec<Temperature> = t.iter().map(|v| v.parse().unwrap()).collect();
    for (k, p) in parsed[..10].iter().enumerate() {
        let Temperature::Finite(t) = p else { panic!("{p:?}") };
        assert!((t - (k + 1) as f64 * 1e-4).abs() < 1e-18);
    }
    assert_eq!(parsed[10..], [Temperature::Infinite, Temperature::Original]);
    assert_eq!(default_n_values(), ["1", "2", "3", "4"]);
}
