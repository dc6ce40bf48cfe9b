//! A small convolutional classifier whose parameters live outside the tape.
//!
//! Layout: for each conv width a 3x3 convolution, bias, ReLU and 2x2 mean
//! pool; then a dense hidden layer with ReLU and a dense output layer.

use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{argmax, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub input_size: usize,
    pub channels: usize,
    pub conv_widths: Vec<usize>,
    pub hidden: usize,
    pub classes: usize,
}

impl ModelDescriptor {
    pub fn new(input_size: usize, channels: usize, conv_widths: &[usize], hidden: usize, classes: usize) -> Self {
        Self {
            input_size,
            channels,
            conv_widths: conv_widths.to_vec(),
            hidden,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [self.input_size, self.channels, self.hidden, self.classes];
        if extents.contains(&0) || self.conv_widths.contains(&0) {
            return Err(Error::invalid(format!("model extents must be positive: {self:?}")));
        }
        let div = 1usize << self.conv_widths.len();
        if self.input_size % div != 0 {
            return Err(Error::invalid(format!(
                "input size {} is not divisible by {div} for {} pooling stages",
                self.input_size,
                self.conv_widths.len()
            )));
        }
        Ok(())
    }

    fn flat_features(&self) -> usize {
        let side = self.input_size >> self.conv_widths.len();
        let c = self.conv_widths.last().copied().unwrap_or(self.channels);
        c * side * side
    }

    /// `(name, shape, fan_in)` for every parameter in order.
    fn layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        let mut ci = self.channels;
        for (i, &co) in self.conv_widths.iter().enumerate() {
            out.push((format!("conv{i}.weight"), vec![co, ci, 3, 3], ci * 9));
            out.push((format!("conv{i}.bias"), vec![co], 0));
            ci = co;
        }
        let flat = self.flat_features();
        out.push(("hidden.weight".into(), vec![flat, self.hidden], flat));
        out.push(("hidden.bias".into(), vec![self.hidden], 0));
        out.push(("out.weight".into(), vec![self.hidden, self.classes], self.hidden));
        out.push(("out.bias".into(), vec![self.classes], 0));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
    }
}

/// Architecture choices that do not depend on the data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub conv_widths: Vec<usize>,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv_widths: vec![8, 16],
            hidden: 32,
        }
    }
}

impl ModelConfig {
    /// The descriptor for square `(side, side, channels)` images and `classes` outputs.
    pub fn descriptor(&self, dims: (usize, usize, usize), classes: usize) -> Result<ModelDescriptor> {
        let (h, w, c) = dims;
        if h != w {
            return Err(Error::invalid(format!("the classifier needs square images, got {h}x{w}")));
        }
        let d = ModelDescriptor::new(h, c, &self.conv_widths, self.hidden, classes);
        d.validate()?;
        Ok(d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub descriptor: ModelDescriptor,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

/// He-initialized weights and zero biases, deterministic in `seed`.
pub fn init_model(seed: u64, descriptor: &ModelDescriptor) -> Result<ClassifierParams> {
    descriptor.validate()?;
    let mut rng = rng::stream(seed, "model-init");
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape, fan_in) in descriptor.layout() {
        let n: usize = shape.iter().product();
        let data = if fan_in == 0 {
            vec![0.0; n]
        } else {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        };
        names.push(name);
        tensors.push(Tensor::new(shape, data)?);
    }
    Ok(ClassifierParams {
        descriptor: descriptor.clone(),
        names,
        tensors,
    })
}

impl ClassifierParams {
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Registers every parameter as a differentiable leaf.
    pub fn to_tape(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Reads updated parameter values back from tape entries.
    pub fn with_values(&self, tape: &Tape, vars: &[Var]) -> ClassifierParams {
        ClassifierParams {
            descriptor: self.descriptor.clone(),
            names: self.names.clone(),
            tensors: vars.iter().map(|&v| tape.value(v).clone()).collect(),
        }
    }

    /// Logits `(B, K)` for a `(B, C, H, W)` batch, evaluated off-tape.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.tensors.iter().map(|t| tape.constant(t.clone())).collect();
        let x = tape.constant(images.clone());
        let out = forward_on_tape(&self.descriptor, &mut tape, &vars, x)?;
        Ok(tape.value(out).clone())
    }

    pub fn predict(&self, images: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(images)?;
        let k = self.descriptor.classes;
        Ok(logits.data().chunks(k).map(argmax).collect())
    }

    /// Writes `<stem>.bin` (little-endian f32 values in parameter order) and a
    /// `<stem>.json` sidecar with names and shapes.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let (bin, json) = checkpoint_paths(stem);
        let mut bytes = Vec::with_capacity(self.param_count() * 4);
        for t in &self.tensors {
            for &v in t.data() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let sidecar = Sidecar {
            descriptor: self.descriptor.clone(),
            tensors: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| SidecarEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&sidecar)?;
        fs::write(&json, text).map_err(|e| Error::io(&json, e))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (bin, json) = checkpoint_paths(stem);
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        sidecar.descriptor.validate()?;
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let total: usize = sidecar.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
        if bytes.len() != total * 4 {
            return Err(Error::invalid(format!(
                "checkpoint {} holds {} bytes, sidecar describes {} values",
                bin.display(),
                bytes.len(),
                total
            )));
        }
        let mut values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for e in sidecar.tensors {
            let n: usize = e.shape.iter().product();
            tensors.push(Tensor::new(e.shape, values.by_ref().take(n).collect())?);
            names.push(e.name);
        }
        let expected: Vec<Vec<usize>> = sidecar.descriptor.layout().into_iter().map(|(_, s, _)| s).collect();
        let found: Vec<Vec<usize>> = tensors.iter().map(|t| t.shape().to_vec()).collect();
        if expected != found {
            return Err(Error::invalid("checkpoint tensor shapes do not match the descriptor"));
        }
        Ok(Self {
            descriptor: sidecar.descriptor,
            names,
            tensors,
        })
    }
}

fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    descriptor: ModelDescriptor,
    tensors: Vec<SidecarEntry>,
}

#[derive(Serialize, Deserialize)]
struct SidecarEntry {
    name: String,
    shape: Vec<usize>,
}

/// Records the classifier on `tape` with parameters `vars` (in layout order).
/// Subtracted from every input value so inputs in `[0, 1]` are centered.
pub const INPUT_CENTER: f64 = 0.5;

pub fn forward_on_tape(desc: &ModelDescriptor, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
    let expected = [desc.channels, desc.input_size, desc.input_size];
    let shape = tape.shape(x).to_vec();
    if shape.len() != 4 || shape[1..] != expected {
        return Err(Error::Shape {
            op: "forward",
            lhs: shape,
            rhs: expected.to_vec(),
        });
    }
    if vars.len() != 2 * desc.conv_widths.len() + 4 {
        return Err(Error::invalid(format!("forward: expected {} parameters, got {}", 2 * desc.conv_widths.len() + 4, vars.len())));
    }
    let batch = shape[0];
    let n: usize = shape.iter().product();
    let center = tape.constant(Tensor::new(shape.clone(), vec![INPUT_CENTER; n])?);
    let mut h = tape.sub(x, center)?;
    let mut p = vars.iter().copied();
    for _ in &desc.conv_widths {
        let (w, b) = (p.next().unwrap(), p.next().unwrap());
        h = tape.conv2d_3x3(h, w)?;
        h = tape.add_bias(h, b)?;
        h = tape.relu(h);
        h = tape.avg_pool2(h)?;
    }
    h = tape.reshape(h, &[batch, desc.flat_features()])?;
    let (w, b) = (p.next().unwrap(), p.next().unwrap());
    h = tape.matmul(h, w)?;
    h = tape.add_bias(h, b)?;
    h = tape.relu(h);
    let (w, b) = (p.next().unwrap(), p.next().unwrap());
    h = tape.matmul(h, w)?;
    tape.add_bias(h, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerState;
    use crate::tensor::softmax;

    fn small() -> ModelDescriptor {
        ModelDescriptor::new(8, 3, &[4], 16, 3)
    }

    fn batch(seed: u64, b: usize, d: &ModelDescriptor) -> Tensor {
        use rand::Rng;
        let mut r = rng::stream(seed, "test-batch");
        let n = b * d.channels * d.input_size * d.input_size;
        Tensor::new(
            vec![b, d.channels, d.input_size, d.input_size],
            (0..n).map(|_| r.random::<f64>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn parameter_count_matches_hand_count() {
        // conv 3->8: 3*8*9 + 8 = 224; conv 8->16: 8*16*9 + 16 = 1168
        // dense 16*8*8 -> 64: 1024*64 + 64 = 65600; out 64 -> 10: 650
        let d = ModelDescriptor::new(32, 3, &[8, 16], 64, 10);
        assert_eq!(d.param_count(), 224 + 1168 + 65600 + 650);
        assert_eq!(init_model(0, &d).unwrap().param_count(), 67642);
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let d = small();
        assert_eq!(init_model(3, &d).unwrap(), init_model(3, &d).unwrap());
        assert_ne!(init_model(3, &d).unwrap(), init_model(4, &d).unwrap());
    }

    #[test]
    fn rejects_bad_descriptors_and_inputs() {
        assert!(init_model(0, &ModelDescriptor::new(8, 3, &[0], 4, 2)).is_err());
        assert!(init_model(0, &ModelDescriptor::new(6, 3, &[4, 4], 4, 2)).is_err());
        let p = init_model(0, &small()).unwrap();
        assert!(p.forward(&Tensor::zeros(&[1, 3, 6, 6])).is_err());
    }

    #[test]
    fn black_image_gives_normalizable_logits() {
        let p = init_model(1, &small()).unwrap();
        let logits = p.forward(&Tensor::zeros(&[1, 3, 8, 8])).unwrap();
        assert_eq!(logits.shape(), &[1, 3]);
        assert!(logits.is_finite());
        assert!((softmax(logits.data()).iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identical_rows_and_permutation_equivariance() {
        let d = small();
        let p = init_model(2, &d).unwrap();
        let x = batch(5, 3, &d);
        let per = x.numel() / 3;
        let logits = p.forward(&x).unwrap();
        let mut swapped = x.data().to_vec();
        swapped[..per].copy_from_slice(&x.data()[2 * per..]);
        swapped[2 * per..].copy_from_slice(&x.data()[..per]);
        let ls = p.forward(&Tensor::new(x.shape().to_vec(), swapped).unwrap()).unwrap();
        let k = 3;
        assert_eq!(&ls.data()[..k], &logits.data()[2 * k..]);
        assert_eq!(&ls.data()[k..2 * k], &logits.data()[k..2 * k]);
        let mut dup = x.data()[..per].to_vec();
        dup.extend_from_slice(&x.data()[..per]);
        let ld = p.forward(&Tensor::new(vec![2, 3, 8, 8], dup).unwrap()).unwrap();
        assert_eq!(&ld.data()[..k], &ld.data()[k..]);
    }

    #[test]
    fn clone_is_isolated() {
        let d = small();
        let original = init_model(6, &d).unwrap();
        let x = batch(1, 2, &d);
        let mut copy = original.clone();
        assert_eq!(copy.clone(), copy);
        assert_eq!(original.forward(&x).unwrap(), copy.forward(&x).unwrap());
        let snapshot = original.clone();
        let grads: Vec<Tensor> = copy.tensors.iter().map(|t| Tensor::full(t.shape(), 1.0)).collect();
        OptimizerState::sgd(0.1).unwrap().step(&mut copy.tensors, &grads).unwrap();
        assert_eq!(original, snapshot);
        assert_ne!(original, copy);
    }

    #[test]
    fn checkpoint_round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let p = init_model(9, &small()).unwrap();
        p.save(&stem).unwrap();
        let q = ClassifierParams::load(&stem).unwrap();
        assert_eq!(p.names, q.names);
        for (a, b) in p.tensors.iter().zip(&q.tensors) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*y, *x as f32 as f64);
            }
        }
        std::fs::write(stem.with_extension("bin"), [0u8; 3]).unwrap();
        assert!(ClassifierParams::load(&stem).is_err());
    }

    #[test]
    fn fits_a_small_training_set() {
        let d = ModelDescriptor::new(8, 1, &[4], 32, 5);
        let n = 50;
        let x = batch(11, n, &d);
        let labels: Vec<usize> = (0..n).map(|i| i % 5).collect();
        let mut p = init_model(0, &d).unwrap();
        let mut opt = OptimizerState::adam(0.01).unwrap();
        for _ in 0..200 {
            let mut tape = Tape::new();
            let vars = p.to_tape(&mut tape);
            let xv = tape.constant(x.clone());
            let logits = forward_on_tape(&d, &mut tape, &vars, xv).unwrap();
            let logp = tape.log_softmax(logits).unwrap();
            let loss = tape.nll_loss(logp, &labels).unwrap();
            let grads = tape.backward(loss, &vars).unwrap();
            opt.step(&mut p.tensors, &grads).unwrap();
        }
        assert_eq!(p.predict(&x).unwrap(), labels);
    }
}
