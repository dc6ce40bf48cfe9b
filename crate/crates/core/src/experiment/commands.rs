use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{run, Baseline, ExperimentConfig, RunOutput, RunRecord, RunSpec, TrainData, TrainMode};
use crate::augment::{OpKind, POOL};
use crate::data::{load_dataset, make_split, ImageDataset, SplitManifest};
use crate::error::{Error, Result};
use crate::policy::{AugPolicy, Temperature};
use crate::search::{search_loop, SearchData, SearchOutcome};

/// T axis values: `1e-4` to `1e-3` in steps of `1e-4`, then `inf` and `orig`.
pub fn default_t_values() -> Vec<String> {
    let mut v: Vec<String> = (1..10).map(|k| format!("{k}e-4")).collect();
    v.push("1e-3".into());
    v.push("inf".into());
    v.push("orig".into());
    v
}

pub fn default_n_values() -> Vec<String> {
    (1..=4).map(|n| n.to_string()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    T,
    N,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::T => "T",
            SweepAxis::N => "n",
        }
    }

    pub fn default_values(self) -> Vec<String> {
        match self {
            SweepAxis::T => default_t_values(),
            SweepAxis::N => default_n_values(),
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "t" => Ok(SweepAxis::T),
            "n" | "N" => Ok(SweepAxis::N),
            _ => Err(Error::invalid(format!("unknown sweep axis `{s}`; use T or n"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
}

impl SweepRow {
    pub fn mean(&self) -> f64 {
        mean(&self.accuracies)
    }

    pub fn std(&self) -> f64 {
        sample_std(&self.accuracies)
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub(crate) fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Accuracy per axis value and seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTable {
    pub axis: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub const LONG_HEADER: &'static str = "axis,value,seed,accuracy";
    pub const SUMMARY_HEADER: &'static str = "axis,value,n_seeds,mean_accuracy,std_accuracy";

    /// One line per value and seed.
    pub fn to_long_csv(&self) -> String {
        let mut out = format!("{}\n", Self::LONG_HEADER);
        for row in &self.rows {
            for (seed, acc) in row.seeds.iter().zip(&row.accuracies) {
                out.push_str(&format!("{},{},{},{}\n", self.axis, row.value, seed, acc));
            }
        }
        out
    }

    /// One line per value.
    pub fn to_summary_csv(&self) -> String {
        let mut out = format!("{}\n", Self::SUMMARY_HEADER);
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.axis,
                row.value,
                row.seeds.len(),
                row.mean(),
                row.std()
            ));
        }
        out
    }

    pub fn row(&self, value: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value)
    }
}

/// A dataset, its split and an output directory shared by all commands.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub dataset_arg: String,
    pub config: ExperimentConfig,
    pub dataset: ImageDataset,
    pub manifest: SplitManifest,
    pub out: PathBuf,
    data: TrainData,
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_lines<T>(path: &Path, lines: &[T], f: impl Fn(&T) -> Result<String>) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(&f(l)?);
        text.push('\n');
    }
    write_file(path, &text)
}

impl Experiment {
    /// Loads the dataset, derives the split from `config.seed` and writes it
    /// to `<out>/split.json`. An existing manifest there must match.
    pub fn open(dataset_arg: &str, config: ExperimentConfig, out: &Path) -> Result<Self> {
        config.validate()?;
        let dataset = load_dataset(dataset_arg, config.seed)?;
        let manifest = make_split(&dataset, config.seed)?;
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join("split.json");
        if path.exists() {
            if SplitManifest::load(&path)? != manifest {
                return Err(Error::invalid(format!(
                    "{} was written for a different dataset or seed",
                    path.display()
                )));
            }
        } else {
            manifest.save(&path)?;
        }
        write_file(&out.join("config.json"), &config.to_json()?)?;
        let data = TrainData::from_split(&dataset, &manifest)?;
        Ok(Self {
            dataset_arg: dataset_arg.to_string(),
            config,
            dataset,
            manifest,
            out: out.to_path_buf(),
            data,
        })
    }

    pub fn train_data(&self) -> &TrainData {
        &self.data
    }

    pub fn spec(&self, command: &str, label: &str, seed: u64, mode: TrainMode) -> RunSpec {
        RunSpec {
            command: command.into(),
            label: label.into(),
            dataset: self.dataset_arg.clone(),
            data_seed: self.config.seed,
            seed,
            mode,
            train: self.config.train.clone(),
        }
    }

    /// Runs one spec and writes its record, log and final checkpoint.
    pub fn execute(&self, spec: &RunSpec) -> Result<RunRecord> {
        let RunOutput { record, params, log } = run(spec, &self.data)?;
        let id = &record.run_id;
        write_file(&self.out.join("runs").join(format!("{id}.json")), &record.to_json()?)?;
        write_lines(&self.out.join("logs").join(format!("{id}.jsonl")), &log, |l| l.to_json_line())?;
        let ckpt = self.out.join("checkpoints");
        fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
        params.save(&ckpt.join(id))?;
        Ok(record)
    }

    fn run_rows(&self, command: &str, rows: &[(String, Vec<(u64, TrainMode)>)]) -> Result<Vec<(String, Vec<RunRecord>)>> {
        let mut done = Vec::with_capacity(rows.len());
        for (label, runs) in rows {
            let mut records = Vec::with_capacity(runs.len());
            for (seed, mode) in runs {
                records.push(self.execute(&self.spec(command, label, *seed, mode.clone()))?);
            }
            done.push((label.clone(), records));
        }
        Ok(done)
    }

    pub fn cmd_baseline(&self, mode: Baseline) -> Result<Vec<RunRecord>> {
        let runs = self
            .config
            .run_seeds()
            .into_iter()
            .map(|s| (s, mode.mode(self.config.train.n)))
            .collect();
        let mut rows = self.run_rows("baseline", &[(mode.name().to_string(), runs)])?;
        Ok(rows.remove(0).1)
    }

    /// Searches once per run seed, writing `search/policy-s<seed>.json` and
    /// `search/log-s<seed>.jsonl`. The first seed's policy is also written to
    /// `policy.json`.
    pub fn cmd_search(&self) -> Result<Vec<(u64, SearchOutcome)>> {
        let data = SearchData::from_split(&self.dataset, &self.manifest)?;
        let mut outcomes = Vec::new();
        for seed in self.config.run_seeds() {
            let outcome = search_loop(&data, &self.config.search, seed)?;
            let json = outcome.policy.to_json()?;
            write_file(&self.search_policy_path(seed), &json)?;
            write_lines(&self.out.join("search").join(format!("log-s{seed}.jsonl")), &outcome.log, |l| {
                l.to_json_line()
            })?;
            if outcomes.is_empty() {
                write_file(&self.out.join("policy.json"), &json)?;
            }
            outcomes.push((seed, outcome));
        }
        Ok(outcomes)
    }

    pub fn search_policy_path(&self, seed: u64) -> PathBuf {
        self.out.join("search").join(format!("policy-s{seed}.json"))
    }

    /// The policy for each run seed: `policy` for all of them when given,
    /// otherwise each seed's own search artifact.
    pub fn policies_for_seeds(&self, policy: Option<&AugPolicy>) -> Result<Vec<(u64, AugPolicy)>> {
        self.config
            .run_seeds()
            .into_iter()
            .map(|seed| match policy {
                Some(p) => Ok((seed, p.clone())),
                None => {
                    let path = self.search_policy_path(seed);
                    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    Ok((seed, AugPolicy::from_json(&text)?))
                }
            })
            .collect()
    }

    /// Follow-up training under a policy at temperature `t` with `n` draws per image.
    pub fn cmd_train(&self, policy: Option<&AugPolicy>, t: Temperature, n: usize) -> Result<Vec<RunRecord>> {
        if n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        let runs = self
            .policies_for_seeds(policy)?
            .into_iter()
            .map(|(seed, policy)| {
                (
                    seed,
                    TrainMode::Policy {
                        policy,
                        temperature: t,
                        n,
                    },
                )
            })
            .collect();
        let mut rows = self.run_rows("train", &[(format!("T{t}-n{n}"), runs)])?;
        Ok(rows.remove(0).1)
    }

    /// Follow-up training per axis value, the other parameter fixed from the
    /// training config. Writes `sweep-<axis>.csv` and `sweep-<axis>-summary.csv`.
    pub fn cmd_sweep(&self, axis: SweepAxis, values: &[String], policy: Option<&AugPolicy>) -> Result<SweepTable> {
        if values.is_empty() {
            return Err(Error::invalid("a sweep needs at least one value"));
        }
        let policies = self.policies_for_seeds(policy)?;
        let train = &self.config.train;
        let mut rows = Vec::with_capacity(values.len());
        for value in values {
            let (t, n) = match axis {
                SweepAxis::T => (value.parse::<Temperature>()?, train.n),
                SweepAxis::N => {
                    let n: usize = value
                        .parse()
                        .map_err(|_| Error::invalid(format!("n must be a positive integer, got `{value}`")))?;
                    if n == 0 {
                        return Err(Error::invalid("n must be at least 1"));
                    }
                    (train.temperature, n)
                }
            };
            let runs = policies
                .iter()
                .map(|(seed, policy)| {
                    (
                        *seed,
                        TrainMode::Policy {
                            policy: policy.clone(),
                            temperature: t,
                            n,
                        },
                    )
                })
                .collect();
            rows.push((format!("{}{}", axis.name(), value), runs));
        }
        let done = self.run_rows(&format!("sweep-{}", axis.name()), &rows)?;
        let table = table_from(axis.name(), values, done);
        self.write_table(&format!("sweep-{}", axis.name()), &table)?;
        Ok(table)
    }

    /// FixMatch with each single operation as the strong view, plus the
    /// weakly supervised baseline. Writes `ablation.csv` and `ablation-summary.csv`.
    pub fn cmd_single_op_ablation(&self) -> Result<SweepTable> {
        let m = self.config.ablation_magnitude;
        let seeds = self.config.run_seeds();
        let mut values = vec![Baseline::WeakSupervised.name().to_string()];
        let mut rows = vec![(
            values[0].clone(),
            seeds.iter().map(|&s| (s, TrainMode::WeakSupervised)).collect::<Vec<_>>(),
        )];
        for op in POOL.iter().copied().chain([OpKind::BlackFill]) {
            values.push(op.name().to_string());
            let runs = seeds.iter().map(|&s| (s, TrainMode::SingleOp { op, magnitude: m })).collect();
            rows.push((op.name().to_string(), runs));
        }
        let done = self.run_rows("ablate-ops", &rows)?;
        let table = table_from("op", &values, done);
        self.write_table("ablation", &table)?;
        Ok(table)
    }

    fn write_table(&self, stem: &str, table: &SweepTable) -> Result<()> {
        write_file(&self.out.join(format!("{stem}.csv")), &table.to_long_csv())?;
        write_file(&self.out.join(format!("{stem}-summary.csv")), &table.to_summary_csv())?;
        write_file(&self.out.join(format!("{stem}.json")), &serde_json::to_string_pretty(table)?)
    }
}

fn table_from(axis: &str, values: &[String], done: Vec<(String, Vec<RunRecord>)>) -> SweepTable {
    SweepTable {
        axis: axis.to_string(),
        rows: values
            .iter()
            .zip(done)
            .map(|(value, (_, records))| SweepRow {
                value: value.clone(),
                seeds: records.iter().map(|r| r.spec.seed).collect(),
                accuracies: records.iter().map(|r| r.accuracy).collect(),
            })
            .collect(),
    }
}
