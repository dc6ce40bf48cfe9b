//! The experiment harness: baselines, follow-up training under a policy,
//! sweeps, the single-operation ablation and reports.
//!
//! Every run is described by a [`RunSpec`] that carries everything needed to
//! replay it, and produces a [`RunRecord`] holding per-epoch and final macro
//! accuracy on the test split.

mod commands;
mod report;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{apply_op, batch_to_tensor, MagnitudeMap, OpKind, RasterImage};
use crate::autodiff::Tape;
use crate::data::{load_dataset, make_split, ImageDataset, Split, SplitManifest};
use crate::error::{Error, Result};
use crate::fixmatch::{
    fixmatch_step, uniform_pair_augment, weak_augment, FixMatchConfig, LabeledBatch, StepStats, StrongView,
};
use crate::model::{forward_on_tape, init_model, ClassifierParams, ModelConfig};
use crate::optim::OptimizerState;
use crate::policy::{init_policy, strong_augment, AugPolicy, Temperature};
use crate::rng;
use crate::search::{draw_labeled, draw_unlabeled, SearchConfig};

pub use commands::{default_n_values, default_t_values, Experiment, SweepAxis, SweepRow, SweepTable};
pub use report::{cmd_report, Report};

/// Follow-up training settings shared by every training mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub fixmatch: FixMatchConfig,
    pub model: ModelConfig,
    /// Sub-policies applied per image.
    pub n: usize,
    pub temperature: Temperature,
    /// Evaluate on the test split after every epoch rather than only at the end.
    pub eval_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            fixmatch: FixMatchConfig::default(),
            model: ModelConfig::default(),
            n: 1,
            temperature: Temperature::Finite(9e-4),
            eval_every_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.fixmatch.validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("training needs at least one epoch"));
        }
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        Ok(())
    }
}

/// What the strong view of a training run is, if there is one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Cross-entropy on weakly augmented labeled images only.
    WeakSupervised,
    /// Cross-entropy on labeled images under a uniformly drawn op pair.
    RandaugSupervised,
    /// FixMatch with a uniformly drawn op pair as the strong view.
    FixmatchOriginal,
    /// FixMatch with `n` sub-policies drawn from the sharpened weights.
    Policy {
        #[serde(with = "policy_doc")]
        policy: AugPolicy,
        temperature: Temperature,
        n: usize,
    },
    /// FixMatch with one fixed operation at a fixed magnitude.
    SingleOp { op: OpKind, magnitude: f64 },
}

impl TrainMode {
    /// FixMatch under the initial policy with uniform sampling.
    pub fn random_policy(n: usize) -> Self {
        TrainMode::Policy {
            policy: init_policy(),
            temperature: Temperature::Infinite,
            n,
        }
    }
}

/// A baseline row of the comparison table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    WeakSupervised,
    RandaugSupervised,
    FixmatchOriginal,
    FixmatchRandomPolicy,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [
        Baseline::WeakSupervised,
        Baseline::RandaugSupervised,
        Baseline::FixmatchOriginal,
        Baseline::FixmatchRandomPolicy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::WeakSupervised => "weak-supervised",
            Baseline::RandaugSupervised => "randaug-supervised",
            Baseline::FixmatchOriginal => "fixmatch-original",
            Baseline::FixmatchRandomPolicy => "fixmatch-random-policy",
        }
    }

    pub fn mode(self, n: usize) -> TrainMode {
        match self {
            Baseline::WeakSupervised => TrainMode::WeakSupervised,
            Baseline::RandaugSupervised => TrainMode::RandaugSupervised,
            Baseline::FixmatchOriginal => TrainMode::FixmatchOriginal,
            Baseline::FixmatchRandomPolicy => TrainMode::random_policy(n),
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown baseline mode `{s}`")))
    }
}

/// Everything needed to replay one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub command: String,
    /// Row label within the command, such as a baseline name or sweep value.
    pub label: String,
    /// `synthetic:<spec>` or a dataset folder.
    pub dataset: String,
    /// Seed of dataset generation and the split.
    pub data_seed: u64,
    pub seed: u64,
    pub mode: TrainMode,
    pub train: TrainConfig,
}

impl RunSpec {
    pub fn run_id(&self) -> String {
        let label: String = self
            .label
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        format!("{}-{}-s{}", self.command, label, self.seed)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub spec: RunSpec,
    /// Test accuracy after each epoch; only the last entry when per-epoch
    /// evaluation is off.
    pub epoch_accuracy: Vec<f64>,
    /// Final macro accuracy on the test split.
    pub accuracy: f64,
    /// Sub-policy sampling distribution of policy-driven runs.
    pub sampling_weights: Option<Vec<f64>>,
    pub wall_time_secs: f64,
}

/// Wall time is excluded; everything else must match bit for bit.
impl PartialEq for RunRecord {
    fn eq(&self, other: &Self) -> bool {
        self.run_id == other.run_id
            && self.spec == other.spec
            && bits(&self.epoch_accuracy) == bits(&other.epoch_accuracy)
            && self.accuracy.to_bits() == other.accuracy.to_bits()
            && self.sampling_weights.as_deref().map(bits) == other.sampling_weights.as_deref().map(bits)
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainLogLine {
    Step(StepStats),
    Epoch { epoch: usize, accuracy: f64 },
}

impl TrainLogLine {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub record: RunRecord,
    pub params: ClassifierParams,
    pub log: Vec<TrainLogLine>,
}

/// Unweighted mean over classes of per-class accuracy.
pub fn macro_accuracy(predictions: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid("predictions and labels differ in length"));
    }
    let mut total = vec![0usize; classes];
    let mut correct = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= classes {
            return Err(Error::invalid(format!("label {l} out of range for {classes} classes")));
        }
        total[l] += 1;
        correct[l] += usize::from(p == l);
    }
    if let Some(empty) = total.iter().position(|&t| t == 0) {
        return Err(Error::invalid(format!("class {empty} has no test items")));
    }
    let sum: f64 = correct.iter().zip(&total).map(|(&c, &t)| c as f64 / t as f64).sum();
    Ok(sum / classes as f64)
}

const EVAL_CHUNK: usize = 128;

/// Macro accuracy of `params` on a labeled set.
pub fn evaluate_accuracy(params: &ClassifierParams, images: &[RasterImage], labels: &[usize]) -> Result<f64> {
    let mut predictions = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_CHUNK) {
        predictions.extend(params.predict(&batch_to_tensor(chunk)?)?);
    }
    macro_accuracy(&predictions, labels, params.descriptor.classes)
}

/// The pools a training run reads.
#[derive(Clone, Debug)]
pub struct TrainData {
    /// Both labeled halves.
    pub labeled: LabeledBatch,
    pub unlabeled: Vec<RasterImage>,
    pub test: LabeledBatch,
    pub classes: usize,
}

impl TrainData {
    pub fn from_split(dataset: &ImageDataset, manifest: &SplitManifest) -> Result<Self> {
        let take = |splits: &[Split]| -> Result<LabeledBatch> {
            let idx = manifest.indices(dataset, splits)?;
            if idx.is_empty() {
                return Err(Error::invalid(format!("splits {splits:?} are empty")));
            }
            let (images, labels) = dataset.select(&idx);
            Ok(LabeledBatch { images, labels })
        };
        Ok(Self {
            labeled: take(&[Split::LabeledA, Split::LabeledB])?,
            unlabeled: take(&[Split::Unlabeled])?.images,
            test: take(&[Split::Test])?,
            classes: dataset.classes(),
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.labeled.images[0].dims()
    }

    pub fn iterations_per_epoch(&self, cfg: &FixMatchConfig) -> usize {
        self.unlabeled.len().div_ceil(cfg.batch_size * cfg.mu).max(1)
    }
}

/// Cross-entropy step on weak views, optionally followed by a uniform op pair.
fn supervised_step(
    params: &mut ClassifierParams,
    batch: &LabeledBatch,
    randaug: Option<&MagnitudeMap>,
    cfg: &FixMatchConfig,
    optimizer: &mut OptimizerState,
    r: &mut rng::Rng,
    step: usize,
) -> Result<StepStats> {
    let views = batch
        .images
        .iter()
        .map(|img| {
            let weak = weak_augment(img, cfg.weak_pad, r);
            match randaug {
                Some(map) => uniform_pair_augment(&weak, map, r),
                None => Ok(weak),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let x = tape.constant(batch_to_tensor(&views)?);
    let logits = forward_on_tape(&params.descriptor, &mut tape, &vars, x)?;
    let logp = tape.log_softmax(logits)?;
    let loss = tape.nll_loss(logp, &batch.labels)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("supervised loss at step {step}")));
    }
    let grads = tape.backward(loss, &vars)?;
    optimizer.step(&mut params.tensors, &grads)?;
    Ok(StepStats {
        step,
        sup_loss: value,
        unsup_loss: 0.0,
        mask_rate: 0.0,
        lr: optimizer.lr,
    })
}

/// Trains from scratch as `spec` describes and scores the test split.
pub fn run(spec: &RunSpec, data: &TrainData) -> Result<RunOutput> {
    let started = Instant::now();
    let cfg = &spec.train;
    cfg.validate()?;
    let fm = &cfg.fixmatch;
    let desc = cfg.model.descriptor(data.dims(), data.classes)?;
    let mut params = init_model(spec.seed, &desc)?;
    let mut optimizer = OptimizerState::sgd(fm.lr)?;
    let map = MagnitudeMap::for_side(desc.input_size);
    let mut r = rng::stream(spec.seed, "train");

    let sharpened = match &spec.mode {
        TrainMode::Policy { policy, temperature, .. } => Some(policy.sampling_weights(*temperature)?),
        _ => None,
    };
    let mut view: Box<StrongView<'_>> = match &spec.mode {
        TrainMode::Policy { policy, n, .. } => {
            if *n == 0 {
                return Err(Error::invalid("n must be at least 1"));
            }
            let weights = sharpened.as_ref().expect("policy mode is sharpened");
            Box::new(move |img, r| strong_augment(img, weights, policy, *n, &map, r))
        }
        TrainMode::SingleOp { op, magnitude } => {
            if !(0.0..=1.0).contains(magnitude) {
                return Err(Error::invalid(format!("magnitude must lie in [0, 1], got {magnitude}")));
            }
            Box::new(move |img, r| apply_op(*op, img, *magnitude, &map, r))
        }
        _ => Box::new(|img, r| uniform_pair_augment(img, &map, r)),
    };

    let iterations = data.iterations_per_epoch(fm);
    let mut log = Vec::with_capacity(cfg.epochs * (iterations + 1));
    let mut epoch_accuracy = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        for it in 0..iterations {
            let step = epoch * iterations + it;
            let labeled = draw_labeled(&data.labeled, fm.batch_size, &mut r);
            let stats = match &spec.mode {
                TrainMode::WeakSupervised => supervised_step(&mut params, &labeled, None, fm, &mut optimizer, &mut r, step)?,
                TrainMode::RandaugSupervised => {
                    supervised_step(&mut params, &labeled, Some(&map), fm, &mut optimizer, &mut r, step)?
                }
                _ => {
                    let unlabeled = draw_unlabeled(&data.unlabeled, fm.batch_size * fm.mu, &mut r);
                    fixmatch_step(&mut params, &labeled, &unlabeled, &mut view, fm, &mut optimizer, &mut r, step)?
                }
            };
            log.push(TrainLogLine::Step(stats));
        }
        if cfg.eval_every_epoch || epoch + 1 == cfg.epochs {
            let accuracy = evaluate_accuracy(&params, &data.test.images, &data.test.labels)?;
            log.push(TrainLogLine::Epoch { epoch, accuracy });
            epoch_accuracy.push(accuracy);
        }
    }
    let accuracy = *epoch_accuracy.last().expect("at least one epoch");
    Ok(RunOutput {
        record: RunRecord {
            run_id: spec.run_id(),
            spec: spec.clone(),
            epoch_accuracy,
            accuracy,
            sampling_weights: sharpened.as_ref().map(|s| s.weights.clone()),
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
        params,
        log,
    })
}

/// Rebuilds the data from `spec` alone and runs it again.
pub fn replay(spec: &RunSpec) -> Result<RunOutput> {
    let dataset = load_dataset(&spec.dataset, spec.data_seed)?;
    let manifest = make_split(&dataset, spec.data_seed)?;
    run(spec, &TrainData::from_split(&dataset, &manifest)?)
}

/// Settings for every command, loadable from one JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Seed of the dataset, the split and the first run.
    pub seed: u64,
    /// Runs per row; run `i` uses `seed + i`.
    pub seeds: usize,
    pub search: SearchConfig,
    pub train: TrainConfig,
    /// Magnitude of the single-operation ablation.
    pub ablation_magnitude: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: 3,
            search: SearchConfig::default(),
            train: TrainConfig::default(),
            ablation_magnitude: 0.5,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::invalid("seeds must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.ablation_magnitude) {
            return Err(Error::invalid("ablation_magnitude must lie in [0, 1]"));
        }
        self.search.validate()?;
        self.train.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed + i).collect()
    }
}

/// Embeds a policy as its own JSON document.
mod policy_doc {
    use serde::de::Error as _;
    use serde::ser::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::value::RawValue;

    use crate::policy::AugPolicy;

    pub fn serialize<S: Serializer>(policy: &AugPolicy, s: S) -> Result<S::Ok, S::Error> {
        let text = policy.to_json().map_err(S::Error::custom)?;
        RawValue::from_string(text).map_err(S::Error::custom)?.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<AugPolicy, D::Error> {
        let raw = Box::<RawValue>::deserialize(d)?;
        AugPolicy::from_json(raw.get()).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests;
