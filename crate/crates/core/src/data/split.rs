use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ImageDataset;
use crate::error::{Error, Result};
use crate::rng;

/// Minimum items per class for a split.
pub const MIN_PER_CLASS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    LabeledA,
    LabeledB,
    Unlabeled,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    /// Share of all items held out for testing.
    pub test: f64,
    /// Share of the training portion that keeps its labels, halved into A and B.
    pub labeled: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { test: 0.2, labeled: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub fractions: SplitFractions,
    pub assignments: BTreeMap<String, Split>,
}

/// Stratified assignment: within each class `round(test * n)` items go to
/// test, `round(labeled * rest)` are labeled and split evenly between A and B
/// (A takes the extra item), and the remainder is unlabeled.
pub fn make_split(dataset: &ImageDataset, seed: u64) -> Result<SplitManifest> {
    let fractions = SplitFractions::default();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.classes()];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (c, items) in by_class.iter().enumerate() {
        if items.len() < MIN_PER_CLASS {
            return Err(Error::ClassTooSmall {
                class: dataset.class_names[c].clone(),
                count: items.len(),
                required: MIN_PER_CLASS,
            });
        }
    }
    let mut r = rng::stream(seed, "split");
    let mut assignments = BTreeMap::new();
    for mut items in by_class {
        items.shuffle(&mut r);
        let n = items.len();
        let test = (fractions.test * n as f64).round() as usize;
        let labeled = (fractions.labeled * (n - test) as f64).round() as usize;
        let a = labeled.div_ceil(2);
        for (pos, &i) in items.iter().enumerate() {
            let split = if pos < test {
                Split::Test
            } else if pos < test + a {
                Split::LabeledA
            } else if pos < test + labeled {
                Split::LabeledB
            } else {
                Split::Unlabeled
            };
            assignments.insert(dataset.ids[i].clone(), split);
        }
    }
    Ok(SplitManifest {
        seed,
        fractions,
        assignments,
    })
}

impl SplitManifest {
    /// Dataset indices assigned to any of `splits`, in dataset order.
    pub fn indices(&self, dataset: &ImageDataset, splits: &[Split]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (i, id) in dataset.ids.iter().enumerate() {
            let s = self
                .assignments
                .get(id)
                .ok_or_else(|| Error::invalid(format!("manifest has no assignment for item `{id}`")))?;
            if splits.contains(s) {
                out.push(i);
            }
        }
        Ok(out)
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignments.values().filter(|&&s| s == split).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
