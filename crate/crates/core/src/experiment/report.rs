use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::commands::{mean, sample_std, write_file};
use super::RunRecord;
use crate::error::{Error, Result};
use crate::policy::{entropy, AugPolicy, Temperature};

/// Temperatures of the sorted-weight panels.
const PANELS: [Temperature; 3] = [Temperature::Original, Temperature::Finite(1e-3), Temperature::Finite(1e-4)];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub command: String,
    pub label: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyPanel {
    pub name: String,
    /// Weights sorted in descending order, one vector per panel.
    pub sorted: Vec<Vec<f64>>,
    pub entropies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub records: Vec<RunRecord>,
    pub rows: Vec<ReportRow>,
    pub policies: Vec<PolicyPanel>,
}

impl Report {
    pub const CSV_HEADER: &'static str = "command,label,n_seeds,mean_accuracy,std_accuracy,seeds";
    pub const WEIGHTS_HEADER: &'static str = "rank,orig,T_1e-3,T_1e-4";

    pub fn from_dir(dir: &Path) -> Result<Self> {
        let records = read_records(&dir.join("runs"))?;
        let policies = policy_files(dir)
            .into_iter()
            .map(|(name, path)| {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                panel(name, &AugPolicy::from_json(&text)?)
            })
            .collect::<Result<Vec<_>>>()?;
        if records.is_empty() && policies.is_empty() {
            return Err(Error::invalid(format!("{} holds no run records or policies", dir.display())));
        }
        let mut rows: Vec<ReportRow> = Vec::new();
        for r in &records {
            let (command, label) = (&r.spec.command, &r.spec.label);
            match rows.iter_mut().find(|row| &row.command == command && &row.label == label) {
                Some(row) => {
                    row.seeds.push(r.spec.seed);
                    row.accuracies.push(r.accuracy);
                }
                None => rows.push(ReportRow {
                    command: command.clone(),
                    label: label.clone(),
                    seeds: vec![r.spec.seed],
                    accuracies: vec![r.accuracy],
                }),
            }
        }
        Ok(Self {
            records,
            rows,
            policies,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for row in &self.rows {
            let seeds: Vec<String> = row.seeds.iter().map(u64::to_string).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                row.command,
                row.label,
                row.seeds.len(),
                mean(&row.accuracies),
                sample_std(&row.accuracies),
                seeds.join(";")
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::from("# Experiment report\n\n");
        if !self.rows.is_empty() {
            md.push_str("## Summary\n\n| command | label | seeds | mean accuracy | std |\n|---|---|---|---|---|\n");
            for row in &self.rows {
                let seeds: Vec<String> = row.seeds.iter().map(u64::to_string).collect();
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {:.4} | {:.4} |",
                    row.command,
                    row.label,
                    seeds.join(", "),
                    mean(&row.accuracies),
                    sample_std(&row.accuracies)
                );
            }
            md.push_str("\n## Runs\n\n| run | accuracy | wall time (s) |\n|---|---|---|\n");
            for r in &self.records {
                let _ = writeln!(md, "| {} | {:.4} | {:.1} |", r.run_id, r.accuracy, r.wall_time_secs);
            }
        }
        if !self.policies.is_empty() {
            md.push_str("\n## Policy weight entropy (nats)\n\n| policy | orig | T=1e-3 | T=1e-4 |\n|---|---|---|---|\n");
            for p in &self.policies {
                let _ = writeln!(
                    md,
                    "| {} | {:.4} | {:.4} | {:.4} |",
                    p.name, p.entropies[0], p.entropies[1], p.entropies[2]
                );
            }
            md.push_str("\nSorted weights per policy are in `weights-<policy>.csv`.\n");
        }
        md
    }

    /// Sorted-weight columns for the three panels.
    pub fn panel_csv(panel: &PolicyPanel) -> String {
        let mut out = format!("{}\n", Self::WEIGHTS_HEADER);
        for rank in 0..panel.sorted[0].len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                rank, panel.sorted[0][rank], panel.sorted[1][rank], panel.sorted[2][rank]
            );
        }
        out
    }

    /// Writes `report.md`, `report.csv` and one `weights-<policy>.csv` per policy.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("report.md"), &self.to_markdown())?;
        write_file(&dir.join("report.csv"), &self.to_csv())?;
        for p in &self.policies {
            write_file(&dir.join(format!("weights-{}.csv", p.name)), &Self::panel_csv(p))?;
        }
        Ok(())
    }
}

fn read_records(runs: &Path) -> Result<Vec<RunRecord>> {
    if !runs.is_dir() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(runs)
        .map_err(|e| Error::io(runs, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| RunRecord::from_json(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?))
        .collect()
}

fn policy_files(dir: &Path) -> Vec<(String, PathBuf)> {
    let mut found = Vec::new();
    let top = dir.join("policy.json");
    if top.is_file() {
        found.push(("policy".to_string(), top));
    }
    if let Ok(entries) = fs::read_dir(dir.join("search")) {
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                name.starts_with("policy-") && name.ends_with(".json")
            })
            .collect();
        paths.sort();
        for p in paths {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            found.push((stem, p));
        }
    }
    found
}

fn panel(name: String, policy: &AugPolicy) -> Result<PolicyPanel> {
    let mut sorted = Vec::with_capacity(PANELS.len());
    let mut entropies = Vec::with_capacity(PANELS.len());
    for t in PANELS {
        let mut w = policy.sampling_weights(t)?.weights;
        entropies.push(entropy(&w));
        w.sort_by(|a, b| b.total_cmp(a));
        sorted.push(w);
    }
    Ok(PolicyPanel {
        name,
        sorted,
        entropies,
    })
}

/// Aggregates `<dir>/runs/*.json` and any policies under `dir`, writes the
/// report files and returns the report.
pub fn cmd_report(dir: &Path) -> Result<Report> {
    let report = Report::from_dir(dir)?;
    report.write(dir)?;
    Ok(report)
}
