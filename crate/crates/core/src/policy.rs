//! The augmentation policy: one weighted sub-policy per unordered pair of
//! pool operations, with an application probability and a magnitude for
//! each of the two operations.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::Serialize;
use serde_json::value::RawValue;
use serde_json::Value;

use crate::augment::{apply_op, MagnitudeMap, OpKind, RasterImage, POOL};
use crate::error::{Error, Result};
use crate::tensor::softmax;

#[derive(Clone, Debug, PartialEq)]
pub struct SubPolicy {
    /// Applied in this order, which follows pool order.
    pub ops: [OpKind; 2],
    pub p: [f64; 2],
    pub m: [f64; 2],
    /// Unnormalized sampling logit.
    pub w: f64,
}

impl SubPolicy {
    pub fn new(ops: [OpKind; 2]) -> Self {
        Self {
            ops,
            p: [0.5; 2],
            m: [0.5; 2],
            w: 0.0,
        }
    }

    pub fn contains(&self, kind: OpKind) -> bool {
        self.ops.contains(&kind)
    }

    /// Clamps `p` and `m` back into `[0, 1]`.
    pub fn clamp(&mut self) {
        for v in self.p.iter_mut().chain(self.m.iter_mut()) {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

impl fmt::Display for SubPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.ops[0], self.ops[1])
    }
}

/// How learned logits become follow-up sampling weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Temperature {
    /// `softmax(w / T)`.
    Finite(f64),
    /// Uniform weights.
    Infinite,
    /// `softmax(w)`, no sharpening.
    Original,
}

impl Temperature {
    pub fn finite(t: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::invalid(format!("temperature must be positive, got {t}")));
        }
        Ok(Temperature::Finite(t))
    }
}

impl fmt::Display for Temperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Temperature::Finite(t) => write!(f, "{t}"),
            Temperature::Infinite => f.write_str("inf"),
            Temperature::Original => f.write_str("orig"),
        }
    }
}

impl FromStr for Temperature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(Temperature::Infinite),
            "orig" | "original" => Ok(Temperature::Original),
            other => {
                let t: f64 = other
                    .parse()
                    .map_err(|_| Error::invalid(format!("temperature must be a number, `inf` or `orig`, got `{s}`")))?;
                if t.is_infinite() && t > 0.0 {
                    return Ok(Temperature::Infinite);
                }
                Temperature::finite(t)
            }
        }
    }
}

/// Serialized as its display string: a number, `inf` or `orig`.
impl Serialize for Temperature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Temperature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        let text = match Repr::deserialize(d)? {
            Repr::Number(v) => v.to_string(),
            Repr::Text(t) => t,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SharpenedWeights {
    pub weights: Vec<f64>,
    pub temperature: Temperature,
}

/// Converts logits into sampling weights at temperature `t`.
pub fn sharpen(w: &[f64], t: Temperature) -> Result<SharpenedWeights> {
    if w.is_empty() {
        return Err(Error::invalid("cannot sharpen an empty weight vector"));
    }
    let weights = match t {
        Temperature::Infinite => vec![1.0 / w.len() as f64; w.len()],
        Temperature::Original => softmax(w),
        Temperature::Finite(temp) => {
            if !(temp > 0.0) {
                return Err(Error::invalid(format!("temperature must be positive, got {temp}")));
            }
            softmax(&w.iter().map(|v| v / temp).collect::<Vec<_>>())
        }
    };
    Ok(SharpenedWeights { weights, temperature: t })
}

/// Shannon entropy in nats.
pub fn entropy(weights: &[f64]) -> f64 {
    -weights.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Draws an index from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    WeightedIndex::new(probs).expect("valid probability vector").sample(rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugPolicy {
    pub pool: Vec<OpKind>,
    pub sub_policies: Vec<SubPolicy>,
    /// Temperature recorded alongside the weights, if any.
    pub sharpen_t: Option<Temperature>,
}

/// All pool pairs, in lexicographic order of pool index.
pub fn enumerate_pairs(pool: &[OpKind]) -> Vec<[OpKind; 2]> {
    let mut out = Vec::new();
    for i in 0..pool.len() {
        for j in i + 1..pool.len() {
            out.push([pool[i], pool[j]]);
        }
    }
    out
}

/// The standard policy: every pair of the fifteen-op pool, uniform logits,
/// `p = m = 0.5`.
pub fn init_policy() -> AugPolicy {
    AugPolicy::uniform(&POOL).expect("standard pool is valid")
}

impl AugPolicy {
    /// A policy over every pair of `pool`, uniform logits, `p = m = 0.5`.
    pub fn uniform(pool: &[OpKind]) -> Result<Self> {
        let entries = enumerate_pairs(pool).into_iter().map(SubPolicy::new).collect();
        Self::custom(pool, entries)
    }

    /// A policy with explicit entries. Each entry must pair two distinct pool
    /// operations in pool order, and no pair may repeat.
    pub fn custom(pool: &[OpKind], sub_policies: Vec<SubPolicy>) -> Result<Self> {
        for (i, a) in pool.iter().enumerate() {
            if pool[i + 1..].contains(a) {
                return Err(Error::invalid(format!("pool lists {a} twice")));
            }
        }
        if sub_policies.is_empty() {
            return Err(Error::invalid("a policy needs at least one sub-policy"));
        }
        let mut seen = Vec::new();
        for sp in &sub_policies {
            let idx = |k: OpKind| pool.iter().position(|&o| o == k);
            let (Some(a), Some(b)) = (idx(sp.ops[0]), idx(sp.ops[1])) else {
                return Err(Error::invalid(format!("sub-policy {sp} uses an operation outside the pool")));
            };
            if a >= b {
                return Err(Error::invalid(format!("sub-policy {sp} is not in pool order")));
            }
            if seen.contains(&(a, b)) {
                return Err(Error::invalid(format!("sub-policy {sp} appears twice")));
            }
            seen.push((a, b));
        }
        Ok(Self {
            pool: pool.to_vec(),
            sub_policies,
            sharpen_t: None,
        })
    }

    pub fn len(&self) -> usize {
        self.sub_policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sub_policies.is_empty()
    }

    pub fn logits(&self) -> Vec<f64> {
        self.sub_policies.iter().map(|s| s.w).collect()
    }

    /// Sampling distribution `softmax(w)`.
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits())
    }

    /// Follow-up sampling weights: the normalized weights `softmax(w)`
    /// sharpened at `t`. `Original` returns them unchanged.
    pub fn sampling_weights(&self, t: Temperature) -> Result<SharpenedWeights> {
        match t {
            Temperature::Original => Ok(SharpenedWeights {
                weights: self.probabilities(),
                temperature: t,
            }),
            _ => sharpen(&self.probabilities(), t),
        }
    }

    pub fn sample_subpolicy<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.probabilities(), rng)
    }

    /// Total weight of the sub-policies that contain `kind`.
    pub fn mass_on(&self, weights: &[f64], kind: OpKind) -> f64 {
        self.sub_policies
            .iter()
            .zip(weights)
            .filter(|(s, _)| s.contains(kind))
            .map(|(_, w)| w)
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let pool: Vec<&str> = self.pool.iter().map(|k| k.name()).collect();
        let index = |k: OpKind| self.pool.iter().position(|&o| o == k).expect("validated pool");
        let sub_policies = self
            .sub_policies
            .iter()
            .map(|s| {
                Ok(EntryDoc {
                    ops: [index(s.ops[0]), index(s.ops[1])],
                    p: [number(s.p[0])?, number(s.p[1])?],
                    m: [number(s.m[0])?, number(s.m[1])?],
                    w: number(s.w)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sharpen_t = match self.sharpen_t {
            None | Some(Temperature::Original) => None,
            Some(Temperature::Infinite) => Some(RawValue::from_string("\"inf\"".into())?),
            Some(Temperature::Finite(t)) => Some(number(t)?),
        };
        let doc = PolicyDoc {
            pool,
            sub_policies,
            sharpen_t,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| policy_err("$", e.to_string()))?;
        let obj = root.as_object().ok_or_else(|| policy_err("$", "expected an object"))?;
        let pool_v = obj
            .get("pool")
            .and_then(Value::as_array)
            .ok_or_else(|| policy_err("pool", "expected an array of operation names"))?;
        let mut pool = Vec::new();
        for (i, v) in pool_v.iter().enumerate() {
            let path = format!("pool[{i}]");
            let name = v.as_str().ok_or_else(|| policy_err(&path, "expected a string"))?;
            let kind = OpKind::from_name(name).ok_or_else(|| policy_err(&path, format!("unknown operation `{name}`")))?;
            if pool.contains(&kind) {
                return Err(policy_err(&path, format!("duplicate operation `{name}`")));
            }
            pool.push(kind);
        }
        if pool.len() < 2 {
            return Err(policy_err("pool", "needs at least two operations"));
        }
        let entries = obj
            .get("sub_policies")
            .and_then(Value::as_array)
            .ok_or_else(|| policy_err("sub_policies", "expected an array"))?;
        let expected = pool.len() * (pool.len() - 1) / 2;
        if entries.len() != expected {
            return Err(policy_err(
                "sub_policies",
                format!("expected {expected} entries for a pool of {}, got {}", pool.len(), entries.len()),
            ));
        }
        let mut seen = vec![false; pool.len() * pool.len()];
        let mut subs = Vec::with_capacity(entries.len());
        for (n, e) in entries.iter().enumerate() {
            let base = format!("sub_policies[{n}]");
            let ops = pair(e, &base, "ops", |p, v| {
                let i = v.as_u64().ok_or_else(|| policy_err(p, "expected a pool index"))? as usize;
                if i >= pool.len() {
                    return Err(policy_err(p, format!("index {i} outside a pool of {}", pool.len())));
                }
                Ok(i)
            })?;
            if ops[0] >= ops[1] {
                return Err(policy_err(&format!("{base}.ops"), "indices must be strictly increasing"));
            }
            if std::mem::replace(&mut seen[ops[0] * pool.len() + ops[1]], true) {
                return Err(policy_err(&format!("{base}.ops"), "pair appears more than once"));
            }
            let unit = |p: &str, v: &Value| {
                let x = v.as_f64().ok_or_else(|| policy_err(p, "expected a number"))?;
                if !(0.0..=1.0).contains(&x) {
                    return Err(policy_err(p, format!("{x} is outside [0, 1]")));
                }
                Ok(x)
            };
            let p = pair(e, &base, "p", unit)?;
            let m = pair(e, &base, "m", unit)?;
            let w_path = format!("{base}.w");
            let w = e
                .get("w")
                .and_then(Value::as_f64)
                .ok_or_else(|| policy_err(&w_path, "expected a number"))?;
            subs.push(SubPolicy {
                ops: [pool[ops[0]], pool[ops[1]]],
                p,
                m,
                w,
            });
        }
        let sharpen_t = match obj.get("sharpen_T") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) if s == "inf" => Some(Temperature::Infinite),
            Some(v) => {
                let t = v.as_f64().ok_or_else(|| policy_err("sharpen_T", "expected a number, \"inf\" or null"))?;
                Some(Temperature::finite(t).map_err(|e| policy_err("sharpen_T", e.to_string()))?)
            }
        };
        let mut policy = Self::custom(&pool, subs)?;
        policy.sharpen_t = sharpen_t;
        Ok(policy)
    }
}

fn policy_err(path: &str, msg: impl Into<String>) -> Error {
    Error::Policy {
        path: path.into(),
        msg: msg.into(),
    }
}

fn pair<T>(entry: &Value, base: &str, key: &str, f: impl Fn(&str, &Value) -> Result<T>) -> Result<[T; 2]> {
    let path = format!("{base}.{key}");
    match entry.get(key).and_then(Value::as_array).map(Vec::as_slice) {
        Some([a, b]) => Ok([f(&format!("{path}[0]"), a)?, f(&format!("{path}[1]"), b)?]),
        _ => Err(policy_err(&path, "expected an array of two values")),
    }
}

/// A JSON number with 17 significant digits.
fn number(v: f64) -> Result<Box<RawValue>> {
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("policy value {v}")));
    }
    Ok(RawValue::from_string(format!("{v:.16e}"))?)
}

#[derive(Serialize)]
struct PolicyDoc<'a> {
    pool: Vec<&'a str>,
    sub_policies: Vec<EntryDoc>,
    #[serde(rename = "sharpen_T")]
    sharpen_t: Option<Box<RawValue>>,
}

#[derive(Serialize)]
struct EntryDoc {
    ops: [usize; 2],
    p: [Box<RawValue>; 2],
    m: [Box<RawValue>; 2],
    w: Box<RawValue>,
}

/// Applies both operations in order, each behind its own Bernoulli draw.
pub fn apply_subpolicy<R: Rng + ?Sized>(sp: &SubPolicy, img: &RasterImage, map: &MagnitudeMap, rng: &mut R) -> Result<RasterImage> {
    let mut out = img.clone();
    for i in 0..2 {
        if rng.random::<f64>() < sp.p[i] {
            out = apply_op(sp.ops[i], &out, sp.m[i], map, rng)?;
        }
    }
    Ok(out)
}

/// Draws `n` sub-policies independently from the sharpened weights and
/// applies them in draw order.
pub fn strong_augment<R: Rng + ?Sized>(
    img: &RasterImage,
    sharpened: &SharpenedWeights,
    policy: &AugPolicy,
    n: usize,
    map: &MagnitudeMap,
    rng: &mut R,
) -> Result<RasterImage> {
    if n == 0 {
        return Err(Error::invalid("strong augmentation needs n >= 1"));
    }
    if sharpened.weights.len() != policy.len() {
        return Err(Error::invalid(format!(
            "{} sharpened weights for a policy of {}",
            sharpened.weights.len(),
            policy.len()
        )));
    }
    let mut out = img.clone();
    for _ in 0..n {
        let idx = sample_index(&sharpened.weights, rng);
        out = apply_subpolicy(&policy.sub_policies[idx], &out, map, rng)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
