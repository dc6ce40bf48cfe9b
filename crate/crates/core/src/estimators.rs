//! Gradient estimators for expectations over discrete choices.
//!
//! RELAX combines a score-function term with a reparameterized control
//! variate evaluated on a continuous relaxation of the same sample. Here the
//! control variate is the objective itself evaluated on relaxed inputs.
//! REINFORCE and an exact enumeration serve as references.

use rand::distr::{Distribution, Open01};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{argmax, log_sum_exp, softmax};

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("relaxation temperature must be positive, got {lambda}")));
    }
    Ok(())
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} evaluated to {v}")))
    }
}

fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Open01.sample(rng)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(u: f64) -> f64 {
    u.ln() - (-u).ln_1p()
}

/// `softmax(t / lambda)` and the vector-Jacobian product of that map.
fn tempered(t: &[f64], lambda: f64) -> Vec<f64> {
    softmax(&t.iter().map(|v| v / lambda).collect::<Vec<_>>())
}

fn tempered_vjp(z: &[f64], g: &[f64], lambda: f64) -> Vec<f64> {
    let dot: f64 = z.iter().zip(g).map(|(a, b)| a * b).sum();
    z.iter().zip(g).map(|(zi, gi)| zi * (gi - dot) / lambda).collect()
}

/// A hard categorical draw with its unconditional and conditional
/// relaxations, sharing everything needed to differentiate both.
#[derive(Clone, Debug)]
pub struct CategoricalRelax {
    pub lambda: f64,
    pub b: usize,
    /// `softmax(theta)`.
    pub probs: Vec<f64>,
    /// Perturbed logits `theta + g`.
    pub perturbed: Vec<f64>,
    pub z: Vec<f64>,
    /// Conditional perturbed logits with argmax `b`.
    pub perturbed_cond: Vec<f64>,
    pub z_cond: Vec<f64>,
    theta: Vec<f64>,
    /// `-ln v` of the conditional uniforms.
    e: Vec<f64>,
    t_b: f64,
}

impl CategoricalRelax {
    pub fn sample<R: Rng + ?Sized>(theta: &[f64], lambda: f64, rng: &mut R) -> Result<Self> {
        check_lambda(lambda)?;
        if theta.is_empty() || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("categorical logits must be finite and non-empty"));
        }
        let perturbed: Vec<f64> = theta.iter().map(|&t| t - (-open01(rng).ln()).ln()).collect();
        let b = argmax(&perturbed);
        let mut out = Self::conditional(theta, b, lambda, rng)?;
        out.z = tempered(&perturbed, lambda);
        out.perturbed = perturbed;
        Ok(out)
    }

    /// Only the conditional half; `z` and `perturbed` are left empty.
    pub fn conditional<R: Rng + ?Sized>(theta: &[f64], b: usize, lambda: f64, rng: &mut R) -> Result<Self> {
        check_lambda(lambda)?;
        if b >= theta.len() {
            return Err(Error::invalid(format!("category {b} out of range for {} logits", theta.len())));
        }
        let e: Vec<f64> = (0..theta.len()).map(|_| -open01(rng).ln()).collect();
        let t_b = log_sum_exp(theta) - e[b].ln();
        let perturbed_cond: Vec<f64> = theta
            .iter()
            .zip(&e)
            .enumerate()
            .map(|(k, (&th, &ek))| if k == b { t_b } else { -((-th).exp() * ek + (-t_b).exp()).ln() })
            .collect();
        Ok(Self {
            lambda,
            b,
            probs: softmax(theta),
            perturbed: Vec::new(),
            z: Vec::new(),
            z_cond: tempered(&perturbed_cond, lambda),
            perturbed_cond,
            theta: theta.to_vec(),
            e,
            t_b,
        })
    }

    /// `d log p(b) / d theta`.
    pub fn score(&self) -> Vec<f64> {
        self.probs
            .iter()
            .enumerate()
            .map(|(j, p)| if j == self.b { 1.0 - p } else { -p })
            .collect()
    }

    /// Pulls `dc/dz` back to `theta` through the unconditional relaxation.
    pub fn z_vjp(&self, dc_dz: &[f64]) -> Vec<f64> {
        tempered_vjp(&self.z, dc_dz, self.lambda)
    }

    /// Pulls `dc/dz_cond` back to `theta` through the conditional relaxation
    /// with its uniforms held fixed.
    pub fn z_cond_vjp(&self, dc_dz: &[f64]) -> Vec<f64> {
        let gt = tempered_vjp(&self.z_cond, dc_dz, self.lambda);
        let eb = (-self.t_b).exp();
        let mut out = vec![0.0; self.theta.len()];
        // t_b = LSE(theta) - ln e_b contributes probs_j to every column.
        let mut through_tb = gt[self.b];
        for k in 0..self.theta.len() {
            if k == self.b {
                continue;
            }
            let direct = (-self.theta[k]).exp() * self.e[k];
            let a = direct + eb;
            out[k] += gt[k] * direct / a;
            through_tb += gt[k] * eb / a;
        }
        for (o, p) in out.iter_mut().zip(&self.probs) {
            *o += through_tb * p;
        }
        out
    }
}

/// A hard Bernoulli draw with unconditional and conditional relaxed gates.
#[derive(Clone, Copy, Debug)]
pub struct BernoulliRelax {
    pub lambda: f64,
    pub logit: f64,
    pub p: f64,
    pub b: bool,
    pub q: f64,
    pub q_cond: f64,
    u_cond: f64,
    v: f64,
}

impl BernoulliRelax {
    pub fn sample<R: Rng + ?Sized>(logit_p: f64, lambda: f64, rng: &mut R) -> Result<Self> {
        check_lambda(lambda)?;
        if !logit_p.is_finite() {
            return Err(Error::invalid(format!("Bernoulli logit must be finite, got {logit_p}")));
        }
        let p = sigmoid(logit_p);
        let u = open01(rng);
        let z = logit_p + logit(u);
        let b = z > 0.0;
        let v = open01(rng);
        let u_cond = if b { (1.0 - p) + v * p } else { v * (1.0 - p) };
        let u_cond = u_cond.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
        let z_cond = logit_p + logit(u_cond);
        Ok(Self {
            lambda,
            logit: logit_p,
            p,
            b,
            q: sigmoid(z / lambda),
            q_cond: sigmoid(z_cond / lambda),
            u_cond,
            v,
        })
    }

    pub fn hard(&self) -> f64 {
        if self.b {
            1.0
        } else {
            0.0
        }
    }

    /// `d log p(b) / d logit`.
    pub fn score(&self) -> f64 {
        self.hard() - self.p
    }

    /// `dq / d logit`.
    pub fn dq(&self) -> f64 {
        self.q * (1.0 - self.q) / self.lambda
    }

    /// `dq_cond / d logit` with the conditional uniform held fixed.
    pub fn dq_cond(&self) -> f64 {
        let du_dp = if self.b { self.v - 1.0 } else { -self.v };
        let u = self.u_cond;
        let dz = 1.0 + self.p * (1.0 - self.p) * du_dp / (u * (1.0 - u));
        self.q_cond * (1.0 - self.q_cond) / self.lambda * dz
    }
}

/// An objective over a categorical choice with a differentiable relaxation.
pub trait CategoricalObjective {
    fn hard(&mut self, b: usize) -> Result<f64>;
    /// Value and gradient at a relaxed probability vector.
    fn relaxed(&mut self, z: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// An objective over a binary choice with a differentiable relaxation.
pub trait BernoulliObjective {
    fn hard(&mut self, b: bool) -> Result<f64>;
    /// Value and derivative at a relaxed gate `q` in `(0, 1)`.
    fn relaxed(&mut self, q: f64) -> Result<(f64, f64)>;
}

/// Expectation of a fixed per-category table; its relaxation is linear.
#[derive(Clone, Debug)]
pub struct TableObjective(pub Vec<f64>);

impl CategoricalObjective for TableObjective {
    fn hard(&mut self, b: usize) -> Result<f64> {
        Ok(self.0[b])
    }

    fn relaxed(&mut self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((z.iter().zip(&self.0).map(|(a, b)| a * b).sum(), self.0.clone()))
    }
}

impl BernoulliObjective for TableObjective {
    fn hard(&mut self, b: bool) -> Result<f64> {
        Ok(self.0[b as usize])
    }

    fn relaxed(&mut self, q: f64) -> Result<(f64, f64)> {
        Ok(((1.0 - q) * self.0[0] + q * self.0[1], self.0[1] - self.0[0]))
    }
}

pub fn gumbel_softmax_sample<R: Rng + ?Sized>(theta: &[f64], lambda: f64, rng: &mut R) -> Result<(usize, Vec<f64>)> {
    let s = CategoricalRelax::sample(theta, lambda, rng)?;
    Ok((s.b, s.z))
}

pub fn conditional_gumbel_sample<R: Rng + ?Sized>(theta: &[f64], b: usize, lambda: f64, rng: &mut R) -> Result<Vec<f64>> {
    Ok(CategoricalRelax::conditional(theta, b, lambda, rng)?.z_cond)
}

/// One RELAX sample of `d E[f(b)] / d theta`.
pub fn relax_categorical_grad<F, R>(f: &mut F, theta: &[f64], lambda: f64, rng: &mut R) -> Result<Vec<f64>>
where
    F: CategoricalObjective + ?Sized,
    R: Rng + ?Sized,
{
    let s = CategoricalRelax::sample(theta, lambda, rng)?;
    let fb = finite(f.hard(s.b)?, "objective")?;
    let (_, dz) = f.relaxed(&s.z)?;
    let (c_cond, dz_cond) = f.relaxed(&s.z_cond)?;
    finite(c_cond, "relaxed objective")?;
    let a = s.z_vjp(&dz);
    let b = s.z_cond_vjp(&dz_cond);
    let out: Vec<f64> = s
        .score()
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(sc, (x, y))| (fb - c_cond) * sc + x - y)
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("RELAX categorical estimate".into()));
    }
    Ok(out)
}

/// One RELAX sample of `d E[f(b)] / d logit` for `b ~ Bernoulli(sigmoid(logit))`.
pub fn relax_bernoulli_grad<F, R>(f: &mut F, logit_p: f64, lambda: f64, rng: &mut R) -> Result<f64>
where
    F: BernoulliObjective + ?Sized,
    R: Rng + ?Sized,
{
    let s = BernoulliRelax::sample(logit_p, lambda, rng)?;
    let fb = finite(f.hard(s.b)?, "objective")?;
    let (_, dq) = f.relaxed(s.q)?;
    let (c_cond, dq_cond) = f.relaxed(s.q_cond)?;
    finite(c_cond, "relaxed objective")?;
    finite((fb - c_cond) * s.score() + dq * s.dq() - dq_cond * s.dq_cond(), "RELAX Bernoulli estimate")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    None,
    /// Mean of the objective over earlier samples.
    RunningMean,
}

/// Score-function estimator with an optional running-mean baseline.
#[derive(Clone, Debug)]
pub struct Reinforce {
    pub baseline: Baseline,
    mean: f64,
    count: u64,
}

impl Reinforce {
    pub fn new(baseline: Baseline) -> Self {
        Self {
            baseline,
            mean: 0.0,
            count: 0,
        }
    }

    pub fn estimate<F, R>(&mut self, f: &mut F, theta: &[f64], rng: &mut R) -> Result<Vec<f64>>
    where
        F: CategoricalObjective + ?Sized,
        R: Rng + ?Sized,
    {
        let probs = softmax(theta);
        let b = crate::policy::sample_index(&probs, rng);
        let fb = finite(f.hard(b)?, "objective")?;
        let base = match self.baseline {
            Baseline::None => 0.0,
            Baseline::RunningMean => self.mean,
        };
        self.count += 1;
        self.mean += (fb - self.mean) / self.count as f64;
        Ok(probs
            .iter()
            .enumerate()
            .map(|(j, p)| (fb - base) * (if j == b { 1.0 - p } else { -p }))
            .collect())
    }
}

pub fn reinforce_grad<F, R>(f: &mut F, theta: &[f64], rng: &mut R, baseline: &mut Reinforce) -> Result<Vec<f64>>
where
    F: CategoricalObjective + ?Sized,
    R: Rng + ?Sized,
{
    baseline.estimate(f, theta, rng)
}

/// Largest category count accepted by [`exact_expectation_grad`].
pub const MAX_EXACT: usize = 1024;

/// `d/d theta sum_b softmax(theta)_b f(b)` by enumeration.
pub fn exact_expectation_grad(values: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
    if theta.len() > MAX_EXACT {
        return Err(Error::invalid(format!("{} categories exceed the enumeration limit of {MAX_EXACT}", theta.len())));
    }
    if values.len() != theta.len() {
        return Err(Error::invalid("one objective value per category is required"));
    }
    let probs = softmax(theta);
    let mean: f64 = probs.iter().zip(values).map(|(p, f)| p * f).sum();
    Ok(probs.iter().zip(values).map(|(p, f)| p * (f - mean)).collect())
}

/// Mean and standard error of a set of gradient samples.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub variance: Vec<f64>,
    pub samples: usize,
}

impl EstimatorReport {
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        let Some(first) = samples.first() else {
            return Err(Error::invalid("no samples"));
        };
        let d = first.len();
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / n as f64;
            }
        }
        let mut variance = vec![0.0; d];
        if n > 1 {
            for s in samples {
                for ((acc, v), m) in variance.iter_mut().zip(s).zip(&mean) {
                    *acc += (v - m).powi(2) / (n - 1) as f64;
                }
            }
        }
        let std_error = variance.iter().map(|v| (v / n as f64).sqrt()).collect();
        Ok(Self {
            mean,
            std_error,
            variance,
            samples: n,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
