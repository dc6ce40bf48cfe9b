//! SGD and Adam over plain tensors, plus the on-tape inner step used by the
//! bi-level search.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer with its per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        Ok(Self {
            kind,
            lr,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::adam(), lr)
    }

    /// First and second moment buffers (empty until the first Adam step).
    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape {
                op: "optimizer_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "optimizer_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= self.lr * gv;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.first.is_empty() {
                    self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
                    self.second = self.first.clone();
                }
                if self.first.len() != params.len() {
                    return Err(Error::invalid("optimizer_step: parameter count changed between steps"));
                }
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut().zip(self.second.iter_mut()))
                {
                    for (((pv, &gv), mv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let mhat = *mv / c1;
                        let vhat = *vv / c2;
                        *pv -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// One SGD step kept on the tape: `params - lr * grad(loss, params)`.
///
/// Anything differentiated through the returned entries sees the full
/// second-order dependence of the update on whatever `loss` was built from.
pub fn differentiable_inner_step(tape: &mut Tape, params: &[Var], loss: Var, lr: f64) -> Result<Vec<Var>> {
    let grads = tape.grad(loss, params)?;
    params
        .iter()
        .zip(grads)
        .map(|(&p, g)| {
            let step = tape.scale(g, lr);
            tape.sub(p, step)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_example() {
        let mut opt = OptimizerState::sgd(0.1).unwrap();
        let mut p = vec![Tensor::from_vec(vec![1.0])];
        opt.step(&mut p, &[Tensor::from_vec(vec![2.0])]).unwrap();
        assert!((p[0].data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for &g in &[0.05, -0.5, 7.0, 1e4] {
            let lr = 3e-3;
            let mut opt = OptimizerState::adam(lr).unwrap();
            let mut p = vec![Tensor::from_vec(vec![0.25])];
            opt.step(&mut p, &[Tensor::from_vec(vec![g])]).unwrap();
            let delta = p[0].data()[0] - 0.25;
            assert!((delta.abs() - lr).abs() < 1e-6 * lr, "g={g}, delta={delta}");
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn adam_quadratic_increases_monotonically() {
        // Scalar reference: minimize (p - 3)^2 from 0.
        let mut opt = OptimizerState::adam(3e-3).unwrap();
        let mut p = vec![Tensor::from_vec(vec![0.0])];
        let mut prev = 0.0;
        for _ in 0..50 {
            let g = 2.0 * (p[0].data()[0] - 3.0);
            opt.step(&mut p, &[Tensor::from_vec(vec![g])]).unwrap();
            let now = p[0].data()[0];
            assert!(now > prev && now < 3.0);
            prev = now;
        }
    }

    #[test]
    fn moments_match_parameter_shapes() {
        let mut opt = OptimizerState::adam(0.01).unwrap();
        let mut p = vec![Tensor::zeros(&[2, 3]), Tensor::zeros(&[4])];
        let g = vec![Tensor::full(&[2, 3], 1.0), Tensor::full(&[4], -1.0)];
        opt.step(&mut p, &g).unwrap();
        let (m, v) = opt.moments();
        for ((pm, mm), vm) in p.iter().zip(m).zip(v) {
            assert_eq!(pm.shape(), mm.shape());
            assert_eq!(pm.shape(), vm.shape());
        }
    }

    #[test]
    fn rejects_misaligned_gradients() {
        let mut opt = OptimizerState::sgd(0.1).unwrap();
        let mut p = vec![Tensor::zeros(&[2])];
        assert!(opt.step(&mut p, &[Tensor::zeros(&[3])]).is_err());
        assert!(opt.step(&mut p, &[]).is_err());
    }

    #[test]
    fn zero_inner_gradient_keeps_params_exactly() {
        let mut tape = Tape::new();
        let theta = tape.param(Tensor::from_vec(vec![0.3, -1.7]));
        let c = tape.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let prod = tape.mul(theta, c).unwrap();
        let loss = tape.sum(prod);
        let next = differentiable_inner_step(&mut tape, &[theta], loss, 0.5).unwrap();
        assert_eq!(tape.value(next[0]), tape.value(theta));
    }

    #[test]
    fn quadratic_bilevel_matches_closed_form() {
        // inner: 0.5 * |theta - a|^2, outer: |theta'|^2
        // theta' = theta - lr (theta - a)  =>  d outer / d a = 2 lr theta'
        let lr = 0.3;
        let theta0 = [0.7, -1.2, 2.5];
        let a0 = [0.1, 0.4, -0.9];
        let mut tape = Tape::new();
        let theta = tape.param(Tensor::from_vec(theta0.to_vec()));
        let a = tape.param(Tensor::from_vec(a0.to_vec()));
        let diff = tape.sub(theta, a).unwrap();
        let sq = tape.mul(diff, diff).unwrap();
        let s = tape.sum(sq);
        let inner = tape.scale(s, 0.5);
        let next = differentiable_inner_step(&mut tape, &[theta], inner, lr).unwrap();
        let sq2 = tape.mul(next[0], next[0]).unwrap();
        let outer = tape.sum(sq2);
        let g = tape.backward(outer, &[a]).unwrap();
        for i in 0..3 {
            let theta_next = theta0[i] - lr * (theta0[i] - a0[i]);
            let expected = 2.0 * lr * theta_next;
            assert!((g[0].data()[i] - expected).abs() < 1e-10);
        }
    }
}
