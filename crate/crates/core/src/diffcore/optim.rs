use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamSet, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// SGD (optionally with heavy-ball momentum) or Adam with bias correction.
/// Moment buffers follow the parameter order of the set they were created for.
#[derive(Clone, Debug)]
pub struct Optimizer<T: Real = f32> {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// SGD only: `v ← μ·v + g`, `w ← w − lr·v`.
    pub momentum: f64,
    step: u64,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self { kind, lr, momentum: 0.0, step: 0, first_moment: Vec::new(), second_moment: Vec::new() }
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        for p in params.iter() {
            if p.tensor.grad().is_none() {
                return Err(Error::MissingGradient(p.name.clone()));
            }
        }
        self.step += 1;
        let lr = T::of(self.lr);
        match self.kind {
            OptimizerKind::Sgd if self.momentum == 0.0 => {
                for p in params.iter_mut() {
                    let g = p.tensor.grad().unwrap().to_vec();
                    p.tensor.data_mut().iter_mut().zip(g).for_each(|(w, gv)| *w -= lr * gv);
                }
            }
            OptimizerKind::Sgd => {
                if self.first_moment.is_empty() {
                    self.first_moment = params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect();
                }
                let mu = T::of(self.momentum);
                for (i, p) in params.iter_mut().enumerate() {
                    let g = p.tensor.grad().unwrap().to_vec();
                    let vel = &mut self.first_moment[i];
                    for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
                        vel[j] = mu * vel[j] + g[j];
                        *w -= lr * vel[j];
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first_moment.is_empty() {
                    self.first_moment = params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect();
                    self.second_moment = self.first_moment.clone();
                }
                let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
                let eps = T::of(ADAM_EPSILON);
                let c1 = T::one() - b1.powi(self.step as i32);
                let c2 = T::one() - b2.powi(self.step as i32);
                for (i, p) in params.iter_mut().enumerate() {
                    let g = p.tensor.grad().unwrap().to_vec();
                    let m = &mut self.first_moment[i];
                    let v = &mut self.second_moment[i];
                    for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
                        m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                        v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                        let m_hat = m[j] / c1;
                        let v_hat = v[j] / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Moment buffers and step count, for checkpointing.
    pub fn state(&self) -> (u64, &[Vec<T>], &[Vec<T>]) {
        (self.step, &self.first_moment, &self.second_moment)
    }

    pub fn restore_state(&mut self, step: u64, first: Vec<Vec<T>>, second: Vec<Vec<T>>) {
        self.step = step;
        self.first_moment = first;
        self.second_moment = second;
    }
}
