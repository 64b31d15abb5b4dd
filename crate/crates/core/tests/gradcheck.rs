//! Central-difference verification of the hand-derived backward pass, in
//! double precision, over every parameter tensor of an expert.

use eoe_core::{
    backward, finite_diff_grad, forward, init_params, loss, make_experts, ModelConfig, ParamId,
    ParamStore, Rng, TokenBatch,
};

const H: f64 = 1e-5;
const MAX_REL_ERR: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn batch_for(cfg: &ModelConfig, b: usize, t: usize, seed: u64) -> TokenBatch {
    let mut rng = Rng::from_seed(seed);
    let inputs: Vec<u32> = (0..b * t)
        .map(|_| rng.next_below(cfg.vocab_size as u64) as u32)
        .collect();
    let targets: Vec<u32> = (0..b * t)
        .map(|_| rng.next_below(cfg.vocab_size as u64) as u32)
        .collect();
    TokenBatch {
        batch_size: b,
        seq_len: t,
        inputs,
        targets,
    }
}

fn loss_of(params: &ParamStore<f64>, expert_id: usize, batch: &TokenBatch) -> f64 {
    let (logits, _) = forward(params, expert_id, batch).unwrap();
    loss(&logits, batch).unwrap()
}

/// Checks every parameter tensor of `expert_id` against central differences.
fn check_expert(cfg: &ModelConfig, expert_id: usize, batch: &TokenBatch, seed: u64) {
    let params = init_params::<f64>(cfg, &mut Rng::from_seed(seed)).unwrap();
    let experts = make_experts(cfg, &params).unwrap();
    let (_, tape) = forward(&params, expert_id, batch).unwrap();
    let grads = backward(&params, expert_id, &tape, batch).unwrap();

    let mut worst = (0.0f64, String::new());
    for id in experts[expert_id].param_ids(&params) {
        let analytic = grads.get(id).expect("expert tensor must have a gradient");
        let base = params.tensor(id).unwrap().clone();
        let numeric = finite_diff_grad(
            |t| {
                let mut probe = params.clone();
                *probe.tensor_mut(id).unwrap() = t.clone();
                Ok(loss_of(&probe, expert_id, batch))
            },
            &base,
            H,
        )
        .unwrap();

        for (j, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
            let e = rel_err(a, n);
            if e > worst.0 {
                worst = (e, format!("{}[{j}] analytic {a} numeric {n}", id.name()));
            }
            assert!(
                e < MAX_REL_ERR,
                "{}[{j}]: analytic {a}, numeric {n}, rel err {e}",
                id.name()
            );
        }
    }
    println!("expert {expert_id}: max rel err {} at {}", worst.0, worst.1);
}

#[test]
fn single_expert_gradients_match_finite_differences() {
    // vocab 64, T 8, B 2, d 16, 2 heads, 2 blocks, 1 expert.
    let cfg = ModelConfig::new(64, 8, 2, 1, 16, 2).unwrap();
    let batch = batch_for(&cfg, 2, 8, 11);
    check_expert(&cfg, 0, &batch, 42);
}

#[test]
fn partitioned_expert_gradients_match_finite_differences() {
    // Two experts of one block each; check both partitions.
    let cfg = ModelConfig::new(32, 6, 2, 2, 8, 2).unwrap();
    let batch = batch_for(&cfg, 2, 6, 13);
    check_expert(&cfg, 0, &batch, 43);
    check_expert(&cfg, 1, &batch, 43);
}

#[test]
fn gradients_with_ignored_targets_match_finite_differences() {
    let cfg = ModelConfig::new(32, 4, 2, 1, 8, 2).unwrap();
    let mut batch = batch_for(&cfg, 2, 4, 17);
    batch.targets[1] = cfg.ignore_token_id();
    batch.targets[6] = cfg.ignore_token_id();
    check_expert(&cfg, 0, &batch, 44);
}

#[test]
fn untied_head_gradients_match_finite_differences() {
    let mut cfg = ModelConfig::new(32, 4, 2, 1, 8, 2).unwrap();
    cfg.tie_head = false;
    let batch = batch_for(&cfg, 1, 4, 19);
    check_expert(&cfg, 0, &batch, 45);
}

#[test]
fn frozen_partitions_do_not_affect_the_loss() {
    // Finite-difference probe of a tensor outside the trained expert: the
    // loss must not move at all.
    let cfg = ModelConfig::new(32, 6, 2, 2, 8, 2).unwrap();
    let batch = batch_for(&cfg, 2, 6, 23);
    let params = init_params::<f64>(&cfg, &mut Rng::from_seed(46)).unwrap();
    let base = loss_of(&params, 0, &batch);

    let mut probe = params.clone();
    use eoe_core::BlockField;
    probe.blocks[1].qkv_w.data_mut()[0] += 10.0;
    probe.blocks[1].up_w.data_mut()[5] -= 3.0;
    assert_eq!(loss_of(&probe, 0, &batch), base);

    // And the gradient store has no entry for it.
    let (_, tape) = forward(&params, 0, &batch).unwrap();
    let grads = backward(&params, 0, &tape, &batch).unwrap();
    assert!(grads.get(ParamId::Block(1, BlockField::QkvWeight)).is_none());
}
