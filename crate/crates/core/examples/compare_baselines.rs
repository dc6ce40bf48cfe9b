//! Trains the uniform policy and the reference baselines on a synthetic set
//! and prints one accuracy line per row.
//!
//! cargo run --release --example compare_baselines -- [out-dir]

use augsearch::experiment::{Baseline, Experiment, ExperimentConfig, TrainConfig};
use augsearch::policy::{init_policy, Temperature};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out-compare".into());
    let config = ExperimentConfig {
        seeds: 2,
        train: TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let exp = Experiment::open("synthetic:color,k=4,per_class=40,noise=0.3", config, out.as_ref())?;

    let mut rows = vec![("uniform policy".to_string(), exp.cmd_train(Some(&init_policy()), Temperature::Infinite, 1)?)];
    for b in Baseline::ALL {
        rows.push((b.name().to_string(), exp.cmd_baseline(b)?));
    }
    for (name, records) in rows {
        let accs: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("{name:<24} mean {mean:.3}  runs {accs:.3?}");
    }
    println!("artifacts under {out}");
    Ok(())
}
