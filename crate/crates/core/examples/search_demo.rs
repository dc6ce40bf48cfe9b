//! Searches a policy on a small synthetic color-class set and prints the
//! sharpened sampling weights.
//!
//! cargo run --release --example search_demo -- [epochs] [seed]

use augsearch::augment::OpKind;
use augsearch::data::{load_dataset, make_split};
use augsearch::policy::{entropy, Temperature};
use augsearch::search::{search_loop, SearchConfig, SearchData};

const DATASET: &str = "synthetic:color,k=4,per_class=40,noise=0.3";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map(|a| a.parse()).transpose()?.unwrap_or(5);
    let seed = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);

    let dataset = load_dataset(DATASET, seed)?;
    let data = SearchData::from_split(&dataset, &make_split(&dataset, seed)?)?;
    let cfg = SearchConfig {
        epochs,
        warmup_epochs: 20,
        ..SearchConfig::default()
    };
    let outcome = search_loop(&data, &cfg, seed)?;
    let policy = &outcome.policy;

    let prior = 14.0 / 105.0;
    for t in ["orig", "1e-3", "9e-4", "1e-4"] {
        let w = policy.sampling_weights(t.parse::<Temperature>()?)?.weights;
        println!(
            "T={t:<5} entropy {:.3}  Invert mass {:.4} (uniform {prior:.4})",
            entropy(&w),
            policy.mass_on(&w, OpKind::Invert)
        );
    }
    let w = policy.sampling_weights(Temperature::Finite(9e-4))?.weights;
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]));
    println!("top sub-policies at T=9e-4:");
    for &k in order.iter().take(5) {
        let sp = &policy.sub_policies[k];
        println!("  {:.4}  {}+{}", w[k], sp.ops[0].name(), sp.ops[1].name());
    }
    Ok(())
}
