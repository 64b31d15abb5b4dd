//! AdamW applied to exactly one expert's parameters per step.
//!
//! Moments are keyed by parameter tensor, so the shared input/output tensors
//! carry one moment history across all experts while each partition has its
//! own. Step counts are per tensor: partition moments are bias-corrected for
//! their true update count under expert rotation.

use crate::error::{Error, Result};
use crate::experts::ExpertView;
use crate::params::{GradStore, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};
use alloc::collections::BTreeMap;
use alloc::format;

/// Learning-rate schedule. The warmup ramp is linear from 0 to the base rate
/// and the decay is cosine down to `min_lr_fraction` of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    WarmupCosine {
        warmup_steps: u64,
        min_lr_fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    /// Max global gradient norm; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            schedule: LrSchedule::Constant,
            grad_clip: 0.0,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Input(format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < v && v < 1.0) {
                return Err(Error::Input(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Input(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return Err(Error::Input("weight_decay and grad_clip must be >= 0".into()));
        }
        if let LrSchedule::WarmupCosine { min_lr_fraction, .. } = self.schedule {
            if !(0.0..=1.0).contains(&min_lr_fraction) {
                return Err(Error::Input(format!(
                    "min_lr_fraction must lie in [0,1], got {min_lr_fraction}"
                )));
            }
        }
        Ok(())
    }
}

/// First/second moment tensors and the per-tensor step count.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    /// Elementwise >= 0 always.
    pub v: Tensor<T>,
    pub t: u64,
}

/// Optimizer state keyed by parameter tensor, created lazily at zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamWState<T> {
    entries: BTreeMap<ParamId, Moments<T>>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new() -> Self {
        AdamWState {
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Moments<T>> {
        self.entries.get(&id)
    }

    /// Number of optimizer steps that have covered this tensor.
    pub fn step_count(&self, id: ParamId) -> u64 {
        self.entries.get(&id).map(|m| m.t).unwrap_or(0)
    }

    /// Bias-corrected second moment `v / (1 - beta2^t)` for one tensor.
    /// Requires at least one covering step.
    pub fn bias_corrected_v(&self, id: ParamId, beta2: f64) -> Result<Tensor<T>> {
        let entry = self.entries.get(&id).ok_or_else(|| {
            Error::Usage(format!("no optimizer state for {}", id.name()))
        })?;
        if entry.t == 0 {
            return Err(Error::Usage(format!(
                "tensor {} has never been stepped",
                id.name()
            )));
        }
        let correction = T::from_f64(1.0 / (1.0 - libm::pow(beta2, entry.t as f64)));
        let mut out = entry.v.clone();
        for x in out.data_mut() {
            *x = *x * correction;
        }
        Ok(out)
    }

    fn entry_mut(&mut self, id: ParamId, shape: &[usize]) -> &mut Moments<T> {
        self.entries.entry(id).or_insert_with(|| Moments {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
        })
    }
}

/// Learning rate at `global_step` of a `total_steps` run.
pub fn lr_at(cfg: &AdamWConfig, global_step: u64, total_steps: u64) -> f64 {
    match cfg.schedule {
        LrSchedule::Constant => cfg.lr,
        LrSchedule::WarmupCosine {
            warmup_steps,
            min_lr_fraction,
        } => {
            if warmup_steps > 0 && global_step < warmup_steps {
                return cfg.lr * global_step as f64 / warmup_steps as f64;
            }
            let decay_span = total_steps.saturating_sub(warmup_steps);
            let progress = if decay_span == 0 {
                1.0
            } else {
                (global_step - warmup_steps) as f64 / decay_span as f64
            };
            let min_lr = cfg.lr * min_lr_fraction;
            min_lr + (cfg.lr - min_lr) * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
        }
    }
}

/// One AdamW step over the expert's tensors:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `theta <- theta - lr_t * mhat / (sqrt(vhat) + eps) - lr_t * lambda * theta`.
///
/// A non-finite gradient element aborts the whole step before any tensor is
/// touched, surfacing the offending tensor's name.
#[allow(clippy::too_many_arguments)]
pub fn adamw_step<T: Scalar>(
    store: &mut ParamStore<T>,
    expert: &ExpertView,
    grads: &GradStore<T>,
    state: &mut AdamWState<T>,
    cfg: &AdamWConfig,
    global_step: u64,
    total_steps: u64,
) -> Result<()> {
    cfg.validate()?;
    if grads.expert_id != expert.expert_id {
        return Err(Error::Usage(format!(
            "gradients are for expert {} but step is for expert {}",
            grads.expert_id, expert.expert_id
        )));
    }
    let ids = expert.param_ids(store);
    if grads.ids() != ids {
        return Err(Error::Usage(
            "gradient store does not cover exactly the expert's tensors".into(),
        ));
    }

    // Whole-expert abort on any non-finite gradient, before mutation.
    for &id in &ids {
        let g = grads.get(id).expect("id coverage checked above");
        g.validate_finite(&id.name())?;
    }

    // Optional global-norm clip, applied as a scale on the gradients.
    let mut grad_scale = 1.0f64;
    if cfg.grad_clip > 0.0 {
        let mut sumsq = 0.0f64;
        for &id in &ids {
            for &g in grads.get(id).unwrap().data() {
                let g = g.as_f64();
                sumsq += g * g;
            }
        }
        let norm = libm::sqrt(sumsq);
        if norm > cfg.grad_clip {
            grad_scale = cfg.grad_clip / norm;
        }
    }

    let lr_t = lr_at(cfg, global_step, total_steps);
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one_minus_b1 = T::from_f64(1.0 - cfg.beta1);
    let one_minus_b2 = T::from_f64(1.0 - cfg.beta2);
    let eps = T::from_f64(cfg.eps);
    let decay = T::from_f64(lr_t * cfg.weight_decay);
    let scale = T::from_f64(grad_scale);

    for &id in &ids {
        let grad = grads.get(id).unwrap();
        let entry = state.entry_mut(id, grad.shape());
        entry.t += 1;
        let m_corr = T::from_f64(1.0 / (1.0 - libm::pow(cfg.beta1, entry.t as f64)));
        let v_corr = T::from_f64(1.0 / (1.0 - libm::pow(cfg.beta2, entry.t as f64)));
        let lr = T::from_f64(lr_t);

        let param = store.tensor_mut(id)?;
        let pdata = param.data_mut();
        let mdata = entry.m.data_mut();
        let vdata = entry.v.data_mut();
        for i in 0..pdata.len() {
            let g = grad.data()[i] * scale;
            mdata[i] = b1 * mdata[i] + one_minus_b1 * g;
            vdata[i] = b2 * vdata[i] + one_minus_b2 * g * g;
            let mhat = mdata[i] * m_corr;
            let vhat = vdata[i] * v_corr;
            pdata[i] = pdata[i] - lr * mhat / (vhat.sqrt() + eps) - decay * pdata[i];
        }
    }
    Ok(())
}
