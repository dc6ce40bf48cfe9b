//! FixMatch: confident predictions on a weak view become one-hot targets
//! for a strongly augmented view of the same unlabeled image.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_op, batch_to_tensor, MagnitudeMap, RasterImage, POOL};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{forward_on_tape, ClassifierParams};
use crate::optim::OptimizerState;
use crate::tensor::{argmax, softmax_rows, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixMatchConfig {
    pub tau: f64,
    pub lambda_u: f64,
    pub mu: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Reflection padding of the weak view.
    pub weak_pad: usize,
}

impl Default for FixMatchConfig {
    fn default() -> Self {
        Self {
            tau: 0.95,
            lambda_u: 1.0,
            mu: 4,
            batch_size: 16,
            lr: 0.03,
            weak_pad: 4,
        }
    }
}

impl FixMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.lambda_u >= 0.0) {
            return Err(Error::invalid(format!("lambda_u must be >= 0, got {}", self.lambda_u)));
        }
        if self.mu == 0 || self.batch_size == 0 {
            return Err(Error::invalid("mu and batch_size must be positive"));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LabeledBatch {
    pub images: Vec<RasterImage>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct UnlabeledBatch {
    pub images: Vec<RasterImage>,
}

fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Crop at `offset` from the `pad`-reflected image, optionally mirrored.
pub fn weak_augment_with(img: &RasterImage, pad: usize, offset: (usize, usize), flip: bool) -> RasterImage {
    let (h, w, c) = img.dims();
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        let sy = reflect(y as i64 + offset.0 as i64 - pad as i64, h);
        for x in 0..w {
            let xx = if flip { w - 1 - x } else { x };
            let sx = reflect(xx as i64 + offset.1 as i64 - pad as i64, w);
            data.extend_from_slice(img.pixel(sy, sx));
        }
    }
    RasterImage::new(h, w, c, data).expect("extents preserved")
}

/// Reflect-pad, random crop back to size, horizontal flip with probability 0.5.
pub fn weak_augment<R: Rng + ?Sized>(img: &RasterImage, pad: usize, rng: &mut R) -> RasterImage {
    let oy = rng.random_range(0..=2 * pad);
    let ox = rng.random_range(0..=2 * pad);
    let flip = rng.random_bool(0.5);
    weak_augment_with(img, pad, (oy, ox), flip)
}

/// Two distinct pool operations drawn uniformly, both applied with a
/// uniformly drawn magnitude.
pub fn uniform_pair_augment<R: Rng + ?Sized>(img: &RasterImage, map: &MagnitudeMap, rng: &mut R) -> Result<RasterImage> {
    let i = rng.random_range(0..POOL.len());
    let mut j = rng.random_range(0..POOL.len() - 1);
    if j >= i {
        j += 1;
    }
    let (a, b) = (i.min(j), i.max(j));
    let once = apply_op(POOL[a], img, rng.random::<f64>(), map, rng)?;
    apply_op(POOL[b], &once, rng.random::<f64>(), map, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels {
    pub targets: Vec<usize>,
    /// 1 where the confidence strictly exceeds the threshold, else 0.
    pub mask: Vec<f64>,
    pub classes: usize,
}

impl PseudoLabels {
    pub fn one_hot(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.targets.len(), self.classes]);
        for (r, &c) in self.targets.iter().enumerate() {
            t.data_mut()[r * self.classes + c] = 1.0;
        }
        t
    }

    pub fn mask_rate(&self) -> f64 {
        self.mask.iter().sum::<f64>() / self.mask.len().max(1) as f64
    }
}

pub fn pseudo_label(logits: &Tensor, tau: f64) -> Result<PseudoLabels> {
    let [b, k] = logits.shape() else {
        return Err(Error::Shape {
            op: "pseudo_label",
            lhs: logits.shape().to_vec(),
            rhs: vec![0, 0],
        });
    };
    let (b, k) = (*b, *k);
    let probs = softmax_rows(logits.data(), k);
    let mut targets = Vec::with_capacity(b);
    let mut mask = Vec::with_capacity(b);
    for row in probs.chunks(k) {
        let t = argmax(row);
        targets.push(t);
        mask.push(if row[t] > tau { 1.0 } else { 0.0 });
    }
    Ok(PseudoLabels { targets, mask, classes: k })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub sup_loss: f64,
    pub unsup_loss: f64,
    pub mask_rate: f64,
    pub lr: f64,
}

/// Loss terms recorded on a tape. `unsup` already includes `lambda_u`.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub sup: Var,
    pub unsup: Option<Var>,
    pub mask_rate: f64,
}

/// Supervised cross-entropy on `labeled_x` plus the masked consistency term
/// on `strong_x`, normalized by the number of unlabeled rows.
pub fn fixmatch_loss_on_tape(
    params: &ClassifierParams,
    tape: &mut Tape,
    vars: &[Var],
    labeled_x: Var,
    labels: &[usize],
    pseudo: &PseudoLabels,
    strong_x: Var,
    lambda_u: f64,
) -> Result<LossParts> {
    let desc = &params.descriptor;
    let logits = forward_on_tape(desc, tape, vars, labeled_x)?;
    let skip = lambda_u == 0.0 || pseudo.mask.iter().all(|&m| m == 0.0);
    let strong_logits = if skip {
        None
    } else {
        Some(forward_on_tape(desc, tape, vars, strong_x)?)
    };
    loss_from_logits(tape, logits, labels, strong_logits, pseudo, lambda_u)
}

/// The FixMatch objective from already computed logits. `strong_logits`
/// may be omitted when no unlabeled row passes the threshold.
pub fn loss_from_logits(
    tape: &mut Tape,
    labeled_logits: Var,
    labels: &[usize],
    strong_logits: Option<Var>,
    pseudo: &PseudoLabels,
    lambda_u: f64,
) -> Result<LossParts> {
    let logp = tape.log_softmax(labeled_logits)?;
    let sup = tape.nll_loss(logp, labels)?;
    let mask_rate = pseudo.mask_rate();
    let active = lambda_u != 0.0 && pseudo.mask.iter().any(|&m| m != 0.0);
    let Some(strong) = strong_logits.filter(|_| active) else {
        return Ok(LossParts {
            total: sup,
            sup,
            unsup: None,
            mask_rate,
        });
    };
    let n = pseudo.targets.len();
    let strong_logp = tape.log_softmax(strong)?;
    let weights: Vec<f64> = pseudo.mask.iter().map(|m| m / n as f64).collect();
    let unsup = tape.weighted_nll_loss(strong_logp, &pseudo.targets, &weights)?;
    let unsup = tape.scale(unsup, lambda_u);
    let total = tape.add(sup, unsup)?;
    Ok(LossParts {
        total,
        sup,
        unsup: Some(unsup),
        mask_rate,
    })
}

/// A complete FixMatch loss for one step, with the views built here.
pub struct BuiltLoss {
    pub tape: Tape,
    pub vars: Vec<Var>,
    pub parts: LossParts,
}

impl BuiltLoss {
    pub fn sup_loss(&self) -> f64 {
        self.tape.value(self.parts.sup).data()[0]
    }

    pub fn unsup_loss(&self) -> f64 {
        self.parts.unsup.map_or(0.0, |u| self.tape.value(u).data()[0])
    }

    pub fn total(&self) -> f64 {
        self.tape.value(self.parts.total).data()[0]
    }
}

pub type StrongView<'a> = dyn FnMut(&RasterImage, &mut crate::rng::Rng) -> Result<RasterImage> + 'a;

pub fn fixmatch_loss(
    params: &ClassifierParams,
    labeled: &LabeledBatch,
    unlabeled: &UnlabeledBatch,
    strong_view: &mut StrongView<'_>,
    cfg: &FixMatchConfig,
    rng: &mut crate::rng::Rng,
) -> Result<BuiltLoss> {
    if labeled.images.len() != labeled.labels.len() {
        return Err(Error::invalid("labeled batch has mismatched image and label counts"));
    }
    let weak_l: Vec<RasterImage> = labeled.images.iter().map(|i| weak_augment(i, cfg.weak_pad, rng)).collect();
    let weak_u: Vec<RasterImage> = unlabeled.images.iter().map(|i| weak_augment(i, cfg.weak_pad, rng)).collect();
    let strong_u = unlabeled
        .images
        .iter()
        .map(|i| {
            let base = weak_augment(i, cfg.weak_pad, rng);
            strong_view(&base, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let pseudo = pseudo_label(&params.forward(&batch_to_tensor(&weak_u)?)?, cfg.tau)?;
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let lx = tape.constant(batch_to_tensor(&weak_l)?);
    let sx = tape.constant(batch_to_tensor(&strong_u)?);
    let parts = fixmatch_loss_on_tape(params, &mut tape, &vars, lx, &labeled.labels, &pseudo, sx, cfg.lambda_u)?;
    Ok(BuiltLoss { tape, vars, parts })
}

/// One backward pass and optimizer step on the FixMatch loss.
pub fn fixmatch_step(
    params: &mut ClassifierParams,
    labeled: &LabeledBatch,
    unlabeled: &UnlabeledBatch,
    strong_view: &mut StrongView<'_>,
    cfg: &FixMatchConfig,
    optimizer: &mut OptimizerState,
    rng: &mut crate::rng::Rng,
    step: usize,
) -> Result<StepStats> {
    let mut built = fixmatch_loss(params, labeled, unlabeled, strong_view, cfg, rng)?;
    let total = built.total();
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("FixMatch loss at step {step}")));
    }
    let grads = built.tape.backward(built.parts.total, &built.vars)?;
    optimizer.step(&mut params.tensors, &grads)?;
    Ok(StepStats {
        step,
        sup_loss: built.sup_loss(),
        unsup_loss: built.unsup_loss(),
        mask_rate: built.parts.mask_rate,
        lr: optimizer.lr,
    })
}

impl StepStats {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
