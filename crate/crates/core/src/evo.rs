//! Evolutionary operators that transfer the best expert's experience into
//! the current expert after each AdamW step.
//!
//! All three operators act elementwise on partition tensors only, with one
//! independent uniform draw per element, walking blocks in ascending order
//! and fields in canonical order so a recorded stream can be replayed.

use crate::error::{Error, Result};
use crate::experts::{BestExpertSnapshot, ExpertView};
use crate::optim::AdamWConfig;
use crate::optim::AdamWState;
use crate::params::{BlockField, BlockParams, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Scalar;
use alloc::format;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvoOperator {
    Pso,
    Crossover,
    Mutation,
}

/// Knobs of the evolutionary step.
#[derive(Debug, Clone, PartialEq)]
pub struct EvoConfig {
    /// PSO social coefficient on the pull toward the best expert.
    pub r_social: f64,
    /// Per-element probability of copying the best expert's value.
    pub r_c: f64,
    /// Per-element probability of gaussian mutation.
    pub r_m: f64,
    /// Multiplier on the bias-corrected second moment to form the mutation
    /// variance.
    pub mutation_scale: f64,
    pub operator_order: Vec<EvoOperator>,
    pub enabled: bool,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            r_social: 0.1,
            r_c: 0.01,
            r_m: 0.001,
            mutation_scale: 1.0,
            operator_order: alloc::vec![
                EvoOperator::Pso,
                EvoOperator::Crossover,
                EvoOperator::Mutation
            ],
            enabled: true,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("r_c", self.r_c), ("r_m", self.r_m)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Input(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        if self.r_social < 0.0 || self.mutation_scale < 0.0 {
            return Err(Error::Input(
                "r_social and mutation_scale must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Counters reported by one evolutionary step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvoReport {
    pub copied: u64,
    pub mutated: u64,
}

fn check_congruent<T: Scalar>(
    current: &[BlockParams<T>],
    best: &[BlockParams<T>],
) -> Result<()> {
    if current.len() != best.len() {
        return Err(Error::Usage(format!(
            "partition depths differ: {} vs {}",
            current.len(),
            best.len()
        )));
    }
    for (i, (c, b)) in current.iter().zip(best).enumerate() {
        for f in BlockField::ALL {
            if c.field(f).shape() != b.field(f).shape() {
                return Err(Error::Usage(format!(
                    "block {i} field {} shapes differ: {:?} vs {:?}",
                    f.name(),
                    c.field(f).shape(),
                    b.field(f).shape()
                )));
            }
        }
    }
    Ok(())
}

/// PSO social pull: elementwise `theta += r_social * p * (theta_best - theta)`
/// with an independent `p` in `[0,1)` per element.
///
/// Computed anchored at the attractor, `theta_best + (1 - r_social*p) *
/// (theta - theta_best)`, so the distance to the best value never grows in
/// floating point when `r_social <= 1`. A zero coefficient short-circuits
/// without consuming randomness.
pub fn pso_pull<T: Scalar>(
    current: &mut [BlockParams<T>],
    best: &BestExpertSnapshot<T>,
    r_social: f64,
    rng: &mut Rng,
) -> Result<()> {
    check_congruent(current, &best.partition_copy)?;
    if r_social == 0.0 {
        return Ok(());
    }
    for (cur, snap) in current.iter_mut().zip(&best.partition_copy) {
        for f in BlockField::ALL {
            let b = snap.field(f);
            let c = cur.field_mut(f);
            for (x, &xb) in c.data_mut().iter_mut().zip(b.data()) {
                let keep = T::from_f64(1.0 - r_social * rng.uniform());
                *x = xb + keep * (*x - xb);
            }
        }
    }
    Ok(())
}

/// One-way crossover: each element is replaced by the best expert's value
/// with probability `r_c`. Returns the number of copied elements.
pub fn crossover<T: Scalar>(
    current: &mut [BlockParams<T>],
    best: &BestExpertSnapshot<T>,
    r_c: f64,
    rng: &mut Rng,
) -> Result<u64> {
    check_congruent(current, &best.partition_copy)?;
    let mut copied = 0u64;
    for (cur, snap) in current.iter_mut().zip(&best.partition_copy) {
        for f in BlockField::ALL {
            let b = snap.field(f);
            let c = cur.field_mut(f);
            for (x, &xb) in c.data_mut().iter_mut().zip(b.data()) {
                if rng.uniform() < r_c {
                    *x = xb;
                    copied += 1;
                }
            }
        }
    }
    Ok(copied)
}

/// Gaussian mutation: with probability `r_m` per element, add noise drawn
/// from `N(0, mutation_scale * v_hat_j)` where `v_hat` is the bias-corrected
/// AdamW second moment of the same element. Returns the mutation count.
pub fn mutate<T: Scalar>(
    current: &mut [BlockParams<T>],
    v_hat: &[BlockParams<T>],
    r_m: f64,
    mutation_scale: f64,
    rng: &mut Rng,
) -> Result<u64> {
    check_congruent(current, v_hat)?;
    let mut mutated = 0u64;
    for (cur, vh) in current.iter_mut().zip(v_hat) {
        for f in BlockField::ALL {
            let v = vh.field(f);
            let c = cur.field_mut(f);
            for (x, &vj) in c.data_mut().iter_mut().zip(v.data()) {
                if rng.uniform() < r_m {
                    let vj = vj.as_f64();
                    if vj < 0.0 {
                        return Err(Error::Domain(format!(
                            "second moment element is negative ({vj}) in {}",
                            f.name()
                        )));
                    }
                    let variance = mutation_scale * vj;
                    let noise = rng.gaussian(variance)?;
                    if variance > 0.0 {
                        *x = *x + T::from_f64(noise);
                    }
                    mutated += 1;
                }
            }
        }
    }
    Ok(mutated)
}

/// Runs the configured operators on the current expert's partition, in
/// order. No-op when evolution is disabled, when no best snapshot exists
/// yet, or when the current expert *is* the best one (elitism: the incumbent
/// optimum is never pulled or mutated).
pub fn apply_evolution<T: Scalar>(
    store: &mut ParamStore<T>,
    expert: &ExpertView,
    best: Option<&BestExpertSnapshot<T>>,
    state: &AdamWState<T>,
    cfg: &EvoConfig,
    adamw: &AdamWConfig,
    rng: &mut Rng,
) -> Result<EvoReport> {
    if !cfg.enabled {
        return Ok(EvoReport::default());
    }
    cfg.validate()?;
    let best = match best {
        Some(b) => b,
        None => return Ok(EvoReport::default()),
    };
    if best.source_expert_id == expert.expert_id {
        return Ok(EvoReport::default());
    }

    // Bias-corrected second moments of the current partition, fetched only
    // if mutation is actually in the operator list.
    let v_hat: Option<Vec<BlockParams<T>>> = if cfg
        .operator_order
        .contains(&EvoOperator::Mutation)
    {
        let mut blocks = Vec::with_capacity(expert.block_range.len());
        for b in expert.block_range.clone() {
            let mut bundle = BlockParams::zeros(&store.config);
            for f in BlockField::ALL {
                *bundle.field_mut(f) = state.bias_corrected_v(ParamId::Block(b, f), adamw.beta2)?;
            }
            blocks.push(bundle);
        }
        Some(blocks)
    } else {
        None
    };

    let partition = &mut store.blocks[expert.block_range.clone()];
    let mut report = EvoReport::default();
    for op in &cfg.operator_order {
        match op {
            EvoOperator::Pso => pso_pull(partition, best, cfg.r_social, rng)?,
            EvoOperator::Crossover => {
                report.copied += crossover(partition, best, cfg.r_c, rng)?;
            }
            EvoOperator::Mutation => {
                let v_hat = v_hat.as_ref().expect("fetched when mutation is ordered");
                report.mutated += mutate(partition, v_hat, cfg.r_m, cfg.mutation_scale, rng)?;
            }
        }
    }
    Ok(report)
}
