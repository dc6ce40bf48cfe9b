//! The augmentation search: FixMatch model steps alternate with policy steps
//! that differentiate a model copy's validation loss, after one on-tape
//! FixMatch update, back to the sub-policy weights, probabilities and
//! magnitudes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{
    apply_gated_with, apply_op_with, batch_to_tensor, blend, interleaved_to_planar, magnitude_grad_fd_with, MagnitudeMap,
    OpDraw, OpKind, RasterImage,
};
use crate::autodiff::{Tape, Var};
use crate::data::{ImageDataset, Split, SplitManifest};
use crate::error::{Error, Result};
use crate::estimators::{BernoulliRelax, CategoricalRelax};
use crate::fixmatch::{
    fixmatch_loss_on_tape, fixmatch_step, pseudo_label, weak_augment, FixMatchConfig, LabeledBatch, PseudoLabels, StepStats,
    UnlabeledBatch,
};
use crate::model::{forward_on_tape, init_model, ClassifierParams, ModelConfig};
use crate::optim::{differentiable_inner_step, OptimizerState};
use crate::policy::{apply_subpolicy, init_policy, AugPolicy};
use crate::rng;
use crate::tensor::{log_sum_exp, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub epochs: usize,
    /// Model-only FixMatch epochs under the starting policy before policy
    /// updates begin. Stands in for a pretrained backbone: until pseudo
    /// labels pass the threshold the policy has no effect on the objective.
    pub warmup_epochs: usize,
    /// Adam learning rate of the policy parameters.
    pub aug_lr: f64,
    /// SGD learning rate of the differentiable inner step.
    pub inner_lr: f64,
    /// Takes the validation gradient at the current parameters instead of
    /// after the inner step, so the policy gradient needs no backward pass
    /// through the post-step validation forward.
    pub first_order: bool,
    pub relax_lambda: f64,
    /// Finite-difference step for magnitude derivatives.
    pub fd_eps: f64,
    /// Largest number of validation items scored per policy step.
    pub val_batch: usize,
    pub max_skips: usize,
    pub fixmatch: FixMatchConfig,
    pub model: ModelConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            warmup_epochs: 0,
            aug_lr: 3e-3,
            inner_lr: 0.03,
            first_order: false,
            relax_lambda: 1.0,
            fd_eps: 0.01,
            val_batch: 64,
            max_skips: 10,
            fixmatch: FixMatchConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.fixmatch.validate()?;
        let rates = [("aug_lr", self.aug_lr), ("inner_lr", self.inner_lr)];
        for (name, v) in rates {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.relax_lambda > 0.0 && self.relax_lambda.is_finite()) {
            return Err(Error::invalid(format!("relax_lambda must be positive, got {}", self.relax_lambda)));
        }
        if !(self.fd_eps > 0.0 && self.fd_eps < 0.5) {
            return Err(Error::invalid(format!("fd_eps must lie in (0, 0.5), got {}", self.fd_eps)));
        }
        if self.val_batch == 0 || self.max_skips == 0 {
            return Err(Error::invalid("val_batch and max_skips must be positive"));
        }
        Ok(())
    }
}

/// The three data pools the search reads.
#[derive(Clone, Debug)]
pub struct SearchData {
    /// Labels used by model updates, both live and inner.
    pub half_a: LabeledBatch,
    /// Labels reserved for the validation loss.
    pub half_b: LabeledBatch,
    pub unlabeled: Vec<RasterImage>,
    pub classes: usize,
}

impl SearchData {
    pub fn from_split(dataset: &ImageDataset, manifest: &SplitManifest) -> Result<Self> {
        let take = |s: Split| -> Result<(Vec<RasterImage>, Vec<usize>)> {
            let idx = manifest.indices(dataset, &[s])?;
            if idx.is_empty() {
                return Err(Error::invalid(format!("split {s:?} is empty")));
            }
            Ok(dataset.select(&idx))
        };
        let (ai, al) = take(Split::LabeledA)?;
        let (bi, bl) = take(Split::LabeledB)?;
        let (ui, _) = take(Split::Unlabeled)?;
        Ok(Self {
            half_a: LabeledBatch { images: ai, labels: al },
            half_b: LabeledBatch { images: bi, labels: bl },
            unlabeled: ui,
            classes: dataset.classes(),
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.half_a.images[0].dims()
    }

    /// Steps needed to draw as many unlabeled items as the pool holds.
    pub fn iterations_per_epoch(&self, cfg: &FixMatchConfig) -> usize {
        self.unlabeled.len().div_ceil(cfg.batch_size * cfg.mu).max(1)
    }
}

/// `n` indices into a pool of `len`, drawn with replacement.
pub(crate) fn sample_indices<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..len)).collect()
}

pub(crate) fn draw_labeled<R: Rng + ?Sized>(pool: &LabeledBatch, n: usize, rng: &mut R) -> LabeledBatch {
    let idx = sample_indices(pool.images.len(), n, rng);
    LabeledBatch {
        images: idx.iter().map(|&i| pool.images[i].clone()).collect(),
        labels: idx.iter().map(|&i| pool.labels[i]).collect(),
    }
}

pub(crate) fn draw_unlabeled<R: Rng + ?Sized>(pool: &[RasterImage], n: usize, rng: &mut R) -> UnlabeledBatch {
    UnlabeledBatch {
        images: sample_indices(pool.len(), n, rng).into_iter().map(|i| pool[i].clone()).collect(),
    }
}

/// Mean cross-entropy of `params` on `val`.
pub fn validation_loss(params: &ClassifierParams, val: &LabeledBatch) -> Result<f64> {
    if val.images.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let logits = params.forward(&batch_to_tensor(&val.images)?)?;
    let k = params.descriptor.classes;
    let total: f64 = logits
        .data()
        .chunks(k)
        .zip(&val.labels)
        .map(|(row, &y)| log_sum_exp(row) - row[y])
        .sum();
    Ok(total / val.images.len() as f64)
}

/// Which derivatives of the validation loss an evaluation records.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partials {
    None,
    Gates,
    Magnitudes,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub d_gate: [f64; 2],
    pub d_mag: [f64; 2],
}

fn random_draw<R: Rng + ?Sized>(rng: &mut R) -> OpDraw {
    OpDraw {
        sign: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
        position: (rng.random(), rng.random()),
    }
}

/// Central difference of an image-valued function on `[0, 1]`, one-sided at the ends.
fn fd_image(v: f64, eps: f64, f: impl Fn(f64) -> Result<RasterImage>) -> Result<Vec<f64>> {
    let (lo, hi) = ((v - eps).max(0.0), (v + eps).min(1.0));
    let (a, b) = (f(lo)?, f(hi)?);
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (y - x) / (hi - lo)).collect())
}

/// The validation loss after one inner FixMatch step, as a function of the
/// sampled sub-policy's gates and magnitudes. Batches, weak views, pseudo
/// labels and operation draws are fixed at construction, so repeated
/// evaluations differ only in the policy arguments.
pub struct AugObjective<'a> {
    pub params: &'a ClassifierParams,
    labeled_x: Tensor,
    labels: Vec<usize>,
    bases: Vec<RasterImage>,
    draws: Vec<[OpDraw; 2]>,
    pub pseudo: PseudoLabels,
    val_x: Tensor,
    val_labels: Vec<usize>,
    lambda_u: f64,
    inner_lr: f64,
    fd_eps: f64,
    map: MagnitudeMap,
    /// Validation gradient at `params`, set in first-order mode.
    val_grad: Option<Vec<Tensor>>,
}

impl<'a> AugObjective<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn build<R: Rng + ?Sized>(
        params: &'a ClassifierParams,
        labeled: &LabeledBatch,
        unlabeled: &UnlabeledBatch,
        val: &LabeledBatch,
        cfg: &SearchConfig,
        map: MagnitudeMap,
        rng: &mut R,
    ) -> Result<Self> {
        if val.images.is_empty() {
            return Err(Error::invalid("validation set is empty"));
        }
        let pad = cfg.fixmatch.weak_pad;
        let weak_l: Vec<RasterImage> = labeled.images.iter().map(|i| weak_augment(i, pad, rng)).collect();
        let weak_u: Vec<RasterImage> = unlabeled.images.iter().map(|i| weak_augment(i, pad, rng)).collect();
        let bases: Vec<RasterImage> = unlabeled.images.iter().map(|i| weak_augment(i, pad, rng)).collect();
        let draws = bases.iter().map(|_| [random_draw(rng), random_draw(rng)]).collect();
        let pseudo = pseudo_label(&params.forward(&batch_to_tensor(&weak_u)?)?, cfg.fixmatch.tau)?;
        let val_x = batch_to_tensor(&val.images)?;
        let val_grad = if cfg.first_order {
            let mut tape = Tape::new();
            let vars = params.to_tape(&mut tape);
            let vx = tape.constant(val_x.clone());
            let logits = forward_on_tape(&params.descriptor, &mut tape, &vars, vx)?;
            let logp = tape.log_softmax(logits)?;
            let loss = tape.nll_loss(logp, &val.labels)?;
            Some(tape.backward(loss, &vars)?)
        } else {
            None
        };
        Ok(Self {
            params,
            labeled_x: batch_to_tensor(&weak_l)?,
            labels: labeled.labels.clone(),
            bases,
            draws,
            pseudo,
            val_x,
            val_labels: val.labels.clone(),
            lambda_u: cfg.fixmatch.lambda_u,
            inner_lr: cfg.inner_lr,
            fd_eps: cfg.fd_eps,
            map,
            val_grad,
        })
    }

    fn composite(&self, i: usize, ops: [OpKind; 2], gates: [f64; 2], mags: [f64; 2]) -> Result<RasterImage> {
        let d = &self.draws[i];
        let x1 = apply_gated_with(ops[0], &self.bases[i], mags[0], gates[0], &d[0], &self.map)?;
        apply_gated_with(ops[1], &x1, mags[1], gates[1], &d[1], &self.map)
    }

    /// The strong batch and its derivatives with respect to the requested scalars.
    fn strong_batch(
        &self,
        ops: [OpKind; 2],
        gates: [f64; 2],
        mags: [f64; 2],
        partials: Partials,
    ) -> Result<(Tensor, [Vec<f64>; 2])> {
        let (h, w, c) = self.bases[0].dims();
        let mut outs = Vec::with_capacity(self.bases.len());
        let mut d: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (i, x) in self.bases.iter().enumerate() {
            let draw = &self.draws[i];
            let x1 = apply_gated_with(ops[0], x, mags[0], gates[0], &draw[0], &self.map)?;
            let y2 = apply_op_with(ops[1], &x1, mags[1], &draw[1], &self.map)?;
            let out = match gates[1] {
                q if q == 0.0 => x1.clone(),
                q if q == 1.0 => y2.clone(),
                q => blend(&x1, &y2, q),
            };
            let (first, second) = match partials {
                Partials::None => {
                    outs.push(out);
                    continue;
                }
                Partials::Gates => {
                    let g0 = fd_image(gates[0], self.fd_eps, |q| self.composite(i, ops, [q, gates[1]], mags))?;
                    let g1: Vec<f64> = y2.data().iter().zip(x1.data()).map(|(a, b)| a - b).collect();
                    (g0, g1)
                }
                Partials::Magnitudes => {
                    let m0 = if ops[0].uses_magnitude() && gates[0] != 0.0 {
                        fd_image(mags[0], self.fd_eps, |m| self.composite(i, ops, gates, [m, mags[1]]))?
                    } else {
                        vec![0.0; h * w * c]
                    };
                    let m1 = magnitude_grad_fd_with(ops[1], &x1, mags[1], self.fd_eps, &draw[1], &self.map)?;
                    let m1: Vec<f64> = m1.data().iter().map(|v| gates[1] * v).collect();
                    (m0, m1)
                }
            };
            interleaved_to_planar(h, w, c, &first, &mut d[0]);
            interleaved_to_planar(h, w, c, &second, &mut d[1]);
            outs.push(out);
        }
        Ok((batch_to_tensor(&outs)?, d))
    }

    /// Validation loss of the copy after one differentiable inner step, with
    /// derivatives with respect to the gates or the magnitudes.
    pub fn evaluate(&self, ops: [OpKind; 2], gates: [f64; 2], mags: [f64; 2], partials: Partials) -> Result<Evaluation> {
        let (strong, d) = self.strong_batch(ops, gates, mags, partials)?;
        let mut tape = Tape::new();
        let vars = self.params.to_tape(&mut tape);
        let mut inputs: Vec<Var> = Vec::new();
        let sx = if partials == Partials::None {
            tape.constant(strong)
        } else {
            let at = if partials == Partials::Gates { gates } else { mags };
            inputs = at.iter().map(|&v| tape.param(Tensor::scalar(v))).collect();
            let shape = strong.shape().to_vec();
            let [d0, d1] = d;
            let pd = vec![Tensor::new(shape.clone(), d0)?, Tensor::new(shape, d1)?];
            tape.custom(strong, &inputs, pd)?
        };
        let lx = tape.constant(self.labeled_x.clone());
        let inner = fixmatch_loss_on_tape(self.params, &mut tape, &vars, lx, &self.labels, &self.pseudo, sx, self.lambda_u)?;
        let updated = differentiable_inner_step(&mut tape, &vars, inner.total, self.inner_lr)?;
        let vx = tape.constant(self.val_x.clone());
        let logits = forward_on_tape(&self.params.descriptor, &mut tape, &updated, vx)?;
        let logp = tape.log_softmax(logits)?;
        let val = tape.nll_loss(logp, &self.val_labels)?;
        let value = tape.value(val).item()?;
        let mut out = Evaluation {
            value,
            d_gate: [0.0; 2],
            d_mag: [0.0; 2],
        };
        if !inputs.is_empty() {
            let target = match &self.val_grad {
                Some(v) => {
                    let mut terms = Vec::with_capacity(v.len());
                    for (&u, g) in updated.iter().zip(v) {
                        let g = tape.constant(g.clone());
                        let prod = tape.mul(u, g)?;
                        terms.push(tape.sum(prod));
                    }
                    let mut acc = terms[0];
                    for &t in &terms[1..] {
                        acc = tape.add(acc, t)?;
                    }
                    acc
                }
                None => val,
            };
            let g = tape.backward(target, &inputs)?;
            let pair = [g[0].data()[0], g[1].data()[0]];
            match partials {
                Partials::Gates => out.d_gate = pair,
                _ => out.d_mag = pair,
            }
        }
        Ok(out)
    }
}

/// One joint RELAX estimate for the policy parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGradient {
    pub index: usize,
    /// Validation loss under the hard sample.
    pub value: f64,
    pub w: Vec<f64>,
    /// Derivatives for the sampled sub-policy's probabilities.
    pub p: [f64; 2],
    /// Derivatives for the sampled sub-policy's magnitudes.
    pub m: [f64; 2],
}

impl PolicyGradient {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.w.iter().chain(&self.p).chain(&self.m).all(|v| v.is_finite())
    }
}

const P_FLOOR: f64 = 1e-6;

/// Step size of the running per-entry loss offsets.
const OFFSET_RATE: f64 = 0.2;

fn p_logit(p: f64) -> f64 {
    let p = p.clamp(P_FLOOR, 1.0 - P_FLOOR);
    (p / (1.0 - p)).ln()
}

/// Samples a sub-policy and its two gates and estimates the gradient of the
/// expected validation loss.
///
/// The categorical choice uses the control variate
/// `c(z) = baseline + sum_k z_k * offsets[k]`, with `offsets[k]` an estimate
/// of entry `k`'s loss change relative to `baseline` that does not depend on
/// this call's randomness. Given the sampled entry, each gate uses the
/// objective with relaxed gates as its control variate. Magnitudes are
/// continuous and use the hard sample's derivative directly.
pub fn relax_policy_gradient<R: Rng + ?Sized>(
    obj: &AugObjective<'_>,
    policy: &AugPolicy,
    lambda: f64,
    baseline: f64,
    offsets: &[f64],
    rng: &mut R,
) -> Result<PolicyGradient> {
    let w = policy.logits();
    if offsets.len() != w.len() {
        return Err(Error::invalid(format!("{} loss offsets for {} sub-policies", offsets.len(), w.len())));
    }
    let cat = CategoricalRelax::sample(&w, lambda, rng)?;
    let b = cat.b;
    let sp = &policy.sub_policies[b];
    let gates = [
        BernoulliRelax::sample(p_logit(sp.p[0]), lambda, rng)?,
        BernoulliRelax::sample(p_logit(sp.p[1]), lambda, rng)?,
    ];
    let hard = obj.evaluate(sp.ops, [gates[0].hard(), gates[1].hard()], sp.m, Partials::Magnitudes)?;
    let relaxed = obj.evaluate(sp.ops, [gates[0].q, gates[1].q], sp.m, Partials::Gates)?;
    let cond = obj.evaluate(sp.ops, [gates[0].q_cond, gates[1].q_cond], sp.m, Partials::Gates)?;

    let c_cond: f64 = baseline + cat.z_cond.iter().zip(offsets).map(|(z, o)| z * o).sum::<f64>();
    let diff = hard.value - c_cond;
    let through_z = cat.z_vjp(offsets);
    let through_zc = cat.z_cond_vjp(offsets);
    let grad_w = cat
        .score()
        .iter()
        .zip(through_z.iter().zip(&through_zc))
        .map(|(s, (a, c))| diff * s + a - c)
        .collect();

    let gate_diff = hard.value - cond.value;
    let mut grad_p = [0.0; 2];
    for i in 0..2 {
        let g = &gates[i];
        let logit_grad = gate_diff * g.score() + relaxed.d_gate[i] * g.dq() - cond.d_gate[i] * g.dq_cond();
        let p = sp.p[i].clamp(P_FLOOR, 1.0 - P_FLOOR);
        grad_p[i] = logit_grad / (p * (1.0 - p));
    }
    Ok(PolicyGradient {
        index: b,
        value: hard.value,
        w: grad_w,
        p: grad_p,
        m: hard.d_mag,
    })
}

/// Live search state. The policy is owned here; parameters of both the
/// model and the policy are updated in place.
#[derive(Clone, Debug)]
pub struct SearchState {
    pub params: ClassifierParams,
    pub policy: AugPolicy,
    pub model_opt: OptimizerState,
    pub aug_opt: OptimizerState,
    pub iter: usize,
    pub consecutive_skips: usize,
    /// `(sampled sub-policy, validation loss)` of every applied policy step.
    pub history: Vec<(usize, f64)>,
    /// Running estimate per sub-policy of the validation loss change caused
    /// by one inner step, used by the categorical control variate.
    pub loss_offsets: Vec<f64>,
}

impl SearchState {
    pub fn new(params: ClassifierParams, policy: AugPolicy, cfg: &SearchConfig) -> Result<Self> {
        Ok(Self {
            params,
            model_opt: OptimizerState::sgd(cfg.fixmatch.lr)?,
            aug_opt: OptimizerState::adam(cfg.aug_lr)?,
            iter: 0,
            consecutive_skips: 0,
            history: Vec::new(),
            loss_offsets: vec![0.0; policy.len()],
            policy,
        })
    }

    fn apply_gradient(&mut self, g: &PolicyGradient) -> Result<()> {
        let n = self.policy.len();
        let mut params = vec![
            Tensor::from_vec(self.policy.logits()),
            Tensor::from_vec(self.policy.sub_policies.iter().flat_map(|s| s.p).collect()),
            Tensor::from_vec(self.policy.sub_policies.iter().flat_map(|s| s.m).collect()),
        ];
        let mut gp = vec![0.0; 2 * n];
        let mut gm = vec![0.0; 2 * n];
        gp[2 * g.index..2 * g.index + 2].copy_from_slice(&g.p);
        gm[2 * g.index..2 * g.index + 2].copy_from_slice(&g.m);
        let grads = [Tensor::from_vec(g.w.clone()), Tensor::from_vec(gp), Tensor::from_vec(gm)];
        self.aug_opt.step(&mut params, &grads)?;
        for (k, sp) in self.policy.sub_policies.iter_mut().enumerate() {
            sp.w = params[0].data()[k];
            sp.p = [params[1].data()[2 * k], params[1].data()[2 * k + 1]];
            sp.m = [params[2].data()[2 * k], params[2].data()[2 * k + 1]];
            sp.clamp();
        }
        Ok(())
    }
}

/// One line of the search log for a policy step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugStepRecord {
    pub iter: usize,
    pub sampled_subpolicy: usize,
    /// `None` when the step was skipped.
    pub val_loss: Option<f64>,
    pub mask_rate: f64,
    pub grad_norm_w: f64,
    pub grad_norm_p: f64,
    pub grad_norm_m: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Updates the policy from the validation loss of a model copy after one
/// inner FixMatch step. The live model is only read.
pub fn augmentation_update_step<R: Rng + ?Sized>(
    state: &mut SearchState,
    unlabeled: &UnlabeledBatch,
    half_a: &LabeledBatch,
    half_b: &LabeledBatch,
    cfg: &SearchConfig,
    map: MagnitudeMap,
    rng: &mut R,
) -> Result<AugStepRecord> {
    let baseline = validation_loss(&state.params, half_b)?;
    let obj = AugObjective::build(&state.params, half_a, unlabeled, half_b, cfg, map, rng)?;
    let mask_rate = obj.pseudo.mask_rate();
    let g = relax_policy_gradient(&obj, &state.policy, cfg.relax_lambda, baseline, &state.loss_offsets, rng)?;
    let mut record = AugStepRecord {
        iter: state.iter,
        sampled_subpolicy: g.index,
        val_loss: None,
        mask_rate,
        grad_norm_w: norm(&g.w),
        grad_norm_p: norm(&g.p),
        grad_norm_m: norm(&g.m),
    };
    if !(g.is_finite() && baseline.is_finite()) {
        state.consecutive_skips += 1;
        if state.consecutive_skips >= cfg.max_skips {
            return Err(Error::TooManySkipped(state.consecutive_skips));
        }
        return Ok(record);
    }
    state.consecutive_skips = 0;
    state.apply_gradient(&g)?;
    state.history.push((g.index, g.value));
    let offset = &mut state.loss_offsets[g.index];
    *offset += OFFSET_RATE * (g.value - baseline - *offset);
    record.val_loss = Some(g.value);
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum SearchLogLine {
    Warmup {
        iter: usize,
        sampled_subpolicy: usize,
        #[serde(flatten)]
        stats: StepStats,
    },
    Model {
        iter: usize,
        sampled_subpolicy: usize,
        #[serde(flatten)]
        stats: StepStats,
    },
    Augment(AugStepRecord),
}

impl SearchLogLine {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub policy: AugPolicy,
    pub params: ClassifierParams,
    pub log: Vec<SearchLogLine>,
}

/// Runs `cfg.warmup_epochs` model-only epochs, then `cfg.epochs` epochs in
/// which each iteration is one model step followed by one policy step on
/// freshly drawn batches.
pub fn search_loop(data: &SearchData, cfg: &SearchConfig, seed: u64) -> Result<SearchOutcome> {
    search_loop_from(data, cfg, seed, init_policy())
}

/// [`search_loop`] from a given starting policy.
pub fn search_loop_from(data: &SearchData, cfg: &SearchConfig, seed: u64, policy: AugPolicy) -> Result<SearchOutcome> {
    cfg.validate()?;
    let desc = cfg.model.descriptor(data.dims(), data.classes)?;
    let mut state = SearchState::new(init_model(seed, &desc)?, policy, cfg)?;
    let map = MagnitudeMap::for_side(desc.input_size);
    let mut r = rng::stream(seed, "search");
    let fm = &cfg.fixmatch;
    let warmup = cfg.warmup_epochs * data.iterations_per_epoch(fm);
    let iterations = cfg.epochs * data.iterations_per_epoch(fm);
    let mut log = Vec::with_capacity(warmup + 2 * iterations);
    for iter in 0..warmup {
        let labeled = draw_labeled(&data.half_a, fm.batch_size, &mut r);
        let unlabeled = draw_unlabeled(&data.unlabeled, fm.batch_size * fm.mu, &mut r);
        let idx = state.policy.sample_subpolicy(&mut r);
        let sp = state.policy.sub_policies[idx].clone();
        let mut view = |img: &RasterImage, r: &mut rng::Rng| apply_subpolicy(&sp, img, &map, r);
        let stats = fixmatch_step(&mut state.params, &labeled, &unlabeled, &mut view, fm, &mut state.model_opt, &mut r, iter)?;
        log.push(SearchLogLine::Warmup {
            iter,
            sampled_subpolicy: idx,
            stats,
        });
    }
    for iter in 0..iterations {
        state.iter = iter;
        let labeled = draw_labeled(&data.half_a, fm.batch_size, &mut r);
        let unlabeled = draw_unlabeled(&data.unlabeled, fm.batch_size * fm.mu, &mut r);
        let idx = state.policy.sample_subpolicy(&mut r);
        let sp = state.policy.sub_policies[idx].clone();
        let mut view = |img: &RasterImage, r: &mut rng::Rng| apply_subpolicy(&sp, img, &map, r);
        let stats = fixmatch_step(&mut state.params, &labeled, &unlabeled, &mut view, fm, &mut state.model_opt, &mut r, iter)?;
        log.push(SearchLogLine::Model {
            iter,
            sampled_subpolicy: idx,
            stats,
        });

        let labeled = draw_labeled(&data.half_a, fm.batch_size, &mut r);
        let unlabeled = draw_unlabeled(&data.unlabeled, fm.batch_size * fm.mu, &mut r);
        let val = if data.half_b.images.len() > cfg.val_batch {
            draw_labeled(&data.half_b, cfg.val_batch, &mut r)
        } else {
            data.half_b.clone()
        };
        let record = augmentation_update_step(&mut state, &unlabeled, &labeled, &val, cfg, map, &mut r)?;
        log.push(SearchLogLine::Augment(record));
    }
    Ok(SearchOutcome {
        policy: state.policy,
        params: state.params,
        log,
    })
}
