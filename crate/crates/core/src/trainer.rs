//! Flow-matching objective, Adam and the Euler sampler.
//!
//! With clean latents `z0` and noise `z1`, the path is
//! `z_t = t·z0 + (1 − t)·z1`, so `dz_t/dt = z0 − z1 = v_t`. The network
//! regresses `v_t`; sampling integrates from `t = 0` (noise) to `t = 1`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{Conditioning, Model};
use crate::params::{Bound, ParamStore};
use crate::rng;
use crate::tensor::Tensor;

/// A network trained to predict flow velocity.
pub trait FlowModel {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn velocity_graph(&self, g: &mut Graph, bound: &Bound, z_t: Var, t: f64, cond: &Conditioning) -> Result<Var>;
}

impl FlowModel for Model {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn velocity_graph(&self, g: &mut Graph, bound: &Bound, z_t: Var, t: f64, cond: &Conditioning) -> Result<Var> {
        Ok(self.forward(g, bound, z_t, t, cond)?.velocity)
    }
}

/// `t·z0 + (1 − t)·z1`.
pub fn interpolate(z0: &Tensor, z1: &Tensor, t: f64) -> Result<Tensor> {
    z0.zip_map(z1, |a, b| t * a + (1.0 - t) * b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub z0: Tensor,
    pub z1: Tensor,
    pub t: f64,
    pub z_t: Tensor,
    pub v_t: Tensor,
}

/// Draws `t ~ U[0, 1]` and `z1 ~ N(0, I)`.
pub fn make_train_sample(z0: &Tensor, r: &mut rng::Rng) -> Result<TrainSample> {
    let t = r.random::<f64>();
    sample_at(z0, Tensor::randn(z0.shape(), 1.0, r), t)
}

pub fn sample_at(z0: &Tensor, z1: Tensor, t: f64) -> Result<TrainSample> {
    let z_t = interpolate(z0, &z1, t)?;
    let v_t = z0.zip_map(&z1, |a, b| a - b)?;
    Ok(TrainSample {
        z0: z0.clone(),
        z1,
        t,
        z_t,
        v_t,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear warmup length; the rate is constant afterwards.
    pub warmup_steps: u64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            warmup_steps: 100,
            grad_clip: 1.0,
        }
    }
}

/// Adam moments and step count; buffers mirror the parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: OptimConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: OptimConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let w = self.config.warmup_steps;
        if w == 0 {
            self.config.lr
        } else {
            self.config.lr * ((step + 1) as f64 / w as f64).min(1.0)
        }
    }

    /// One update; returns the learning rate used.
    pub fn update(&mut self, params: &mut ParamStore, grads: &mut [Vec<f64>]) -> Result<f64> {
        if grads.len() != self.m.len() {
            return Err(Error::dim("adam", format!("{} gradients for {} buffers", grads.len(), self.m.len())));
        }
        if self.config.grad_clip > 0.0 {
            let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if norm > self.config.grad_clip {
                let s = self.config.grad_clip / norm;
                grads.iter_mut().flatten().for_each(|g| *g *= s);
            }
        }
        let lr = self.lr_at(self.step);
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((t, g), m), v) in params.tensors_mut().iter_mut().zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &gi), mi), vi) in t.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                *p -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps);
            }
        }
        Ok(lr)
    }
}

/// Mean flow-matching loss over `samples` in one graph, with gradients
/// accumulated on the bound parameters.
pub fn flow_loss<M: FlowModel>(model: &M, batch: &[(&Example, TrainSample)]) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let bound = model.params().bind(&mut g);
    let mut total = None;
    for (ex, s) in batch {
        let z = g.constant(s.z_t.clone());
        let target = g.constant(s.v_t.clone());
        let u = model.velocity_graph(&mut g, &bound, z, s.t, &ex.cond)?;
        let l = g.mse_loss(u, target)?;
        total = Some(match total {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    let total = total.ok_or_else(|| Error::Usage("empty batch".into()))?;
    let loss = g.scale(total, 1.0 / batch.len() as f64);
    g.backward(loss)?;
    Ok((g.value(loss).item(), model.params().grads(&g, &bound)))
}

/// Noise draws for a batch, a pure function of `batch_seed`.
pub fn draw_batch<'a>(batch: &[&'a Example], batch_seed: u64) -> Result<Vec<(&'a Example, TrainSample)>> {
    batch
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut r = rng::seeded(rng::derive(batch_seed, i as u64));
            Ok((*ex, make_train_sample(&ex.target, &mut r)?))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Forward, backward and one Adam update. A non-finite loss aborts before
/// the update with the batch seed in the error.
pub fn train_step<M: FlowModel>(model: &mut M, optim: &mut Adam, batch: &[&Example], batch_seed: u64) -> Result<StepStats> {
    let drawn = draw_batch(batch, batch_seed)?;
    let (loss, mut grads) = flow_loss(model, &drawn)?;
    if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "loss {loss} at step {} (batch seed {batch_seed:#x})",
            optim.step
        )));
    }
    let step = optim.step;
    let lr = optim.update(model.params_mut(), &mut grads)?;
    Ok(StepStats { step, loss, lr })
}

/// Batch membership and noise seed of `step`, independent of any other step.
pub fn batch_plan(master_seed: u64, step: u64, dataset_len: usize, batch_size: usize) -> (Vec<usize>, u64) {
    let seed = rng::derive(master_seed, step);
    let mut r = rng::seeded(seed);
    let idx = (0..batch_size).map(|_| r.random_range(0..dataset_len)).collect();
    (idx, rng::mix(seed))
}

/// Explicit Euler from `z1` at `t = 0` to `t = 1` in `steps` uniform steps.
pub fn euler(z1: Tensor, steps: usize, mut field: impl FnMut(&Tensor, f64) -> Result<Tensor>) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::Usage("sampler needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut z = z1;
    for s in 0..steps {
        let u = field(&z, s as f64 * dt)?;
        z = z.zip_map(&u, |a, b| a + dt * b)?;
    }
    Ok(z)
}

/// Generates target latents of `shape` from fresh noise.
pub fn sample<M: FlowModel>(model: &M, cond: &Conditioning, shape: &[usize], steps: usize, r: &mut rng::Rng) -> Result<Tensor> {
    let z1 = Tensor::randn(shape, 1.0, r);
    euler(z1, steps, |z, t| {
        let mut g = Graph::new();
        let bound = model.params().bind_frozen(&mut g);
        let zv = g.constant(z.clone());
        let u = model.velocity_graph(&mut g, &bound, zv, t, cond)?;
        Ok(g.value(u).clone())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_is_linear_then_constant() {
        let cfg = OptimConfig {
            lr: 1.0,
            warmup_steps: 4,
            ..OptimConfig::default()
        };
        let a = Adam::new(cfg, &ParamStore::new());
        let lrs: Vec<f64> = (0..6).map(|s| a.lr_at(s)).collect();
        assert_eq!(lrs, vec![0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap()).unwrap();
        let cfg = OptimConfig {
            lr: 0.1,
            warmup_steps: 0,
            grad_clip: 0.0,
            ..OptimConfig::default()
        };
        let mut a = Adam::new(cfg, &ps);
        a.update(&mut ps, &mut [vec![3.0, -0.5]]).unwrap();
        let w = ps.by_name("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn batch_plan_is_stable() {
        assert_eq!(batch_plan(7, 3, 10, 4), batch_plan(7, 3, 10, 4));
        assert_ne!(batch_plan(7, 3, 10, 4).1, batch_plan(7, 4, 10, 4).1);
    }
}
