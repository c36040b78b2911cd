//! Named parameter storage and the Adam optimizer.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

/// One named, shaped parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of named parameters. The order is the serialization
/// and gradient-reduction order, so it is part of the determinism contract.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<usize> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch { lhs: vec![data.len()], rhs: shape.to_vec() });
        }
        self.params.push(Param { name: name.to_string(), shape: shape.to_vec(), data });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Param {
        &mut self.params[index]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Lifts every parameter onto a tape as a differentiable leaf, in set
    /// order.
    pub fn leaves<'t>(&self, tape: &'t Tape) -> Result<Vec<Tensor<'t>>> {
        self.params.iter().map(|p| tape.variable(&p.shape, p.data.clone())).collect()
    }

    /// Lifts every parameter as a constant (no gradient bookkeeping), for
    /// evaluation passes.
    pub fn constants<'t>(&self, tape: &'t Tape) -> Result<Vec<Tensor<'t>>> {
        self.params.iter().map(|p| tape.constant(&p.shape, p.data.clone())).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam. Deterministic: the update depends only on the
/// config, the step counter, and the gradient history.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    steps: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        let first = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        let second = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Adam { cfg, steps: 0, first_moment: first, second_moment: second }
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    pub fn second_moment(&self, param: usize) -> &[f64] {
        &self.second_moment[param]
    }

    /// One update over every parameter; `grads` must parallel the set.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) -> Result<()> {
        self.step_with_lr(params, grads, self.cfg.lr)
    }

    /// Same as [`Adam::step`] with an externally supplied learning rate, so
    /// schedules can stay a plug-in callback.
    pub fn step_with_lr(
        &mut self,
        params: &mut ParamSet,
        grads: &[Vec<f64>],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::ShapeMismatch { lhs: vec![grads.len()], rhs: vec![params.len()] });
        }
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (i, grad) in grads.iter().enumerate() {
            let param = params.get_mut(i);
            if grad.len() != param.data.len() {
                return Err(Error::ShapeMismatch {
                    lhs: vec![grad.len()],
                    rhs: param.shape.clone(),
                });
            }
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for k in 0..grad.len() {
                let g = grad[k];
                m[k] = self.cfg.beta1 * m[k] + (1.0 - self.cfg.beta1) * g;
                v[k] = self.cfg.beta2 * v[k] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                param.data[k] -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}
