//! Exact likelihoods, sampling and gradients for the two-direction model.
//!
//! Each direction is a strictly causal autoregressive factorization: the
//! forward direction predicts `a_t` from `a_1 … a_{t−1}`, the backward
//! direction predicts `a_t` from `a_N … a_{t+1}`. The model distribution is
//! their equal-weight mixture, so it is normalized and can be sampled
//! ancestrally. Training minimizes the mean of the two directional
//! per-symbol negative log-likelihoods.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::gru::{layer_backward, layer_forward, layer_step, LayerCache};
use super::params::{Direction, DirectionParams, ModelParams, ALPHABET, START_TOKEN};
use crate::error::{QstError, Result};
use crate::seed::rng_from;

/// Sequences per forward pass when evaluating large sets.
const EVAL_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SequenceLogProb {
    pub forward: f64,
    pub backward: f64,
    pub mixture: f64,
}

impl SequenceLogProb {
    fn from_parts(forward: f64, backward: f64) -> SequenceLogProb {
        let hi = forward.max(backward);
        let mixture = if hi == f64::NEG_INFINITY {
            hi
        } else {
            hi + (0.5 * ((forward - hi).exp() + (backward - hi).exp())).ln()
        };
        SequenceLogProb { forward, backward, mixture }
    }
}

/// A 4-way categorical distribution over the next symbol.
pub type StepDistribution = [f64; ALPHABET];

fn validate(params: &ModelParams, seqs: &[Vec<u8>]) -> Result<()> {
    for s in seqs {
        if s.len() != params.n_qubits {
            return Err(QstError::LengthMismatch { expected: params.n_qubits, got: s.len() });
        }
        if let Some(&a) = s.iter().find(|&&a| a as usize >= ALPHABET) {
            return Err(QstError::InvalidSymbol(a));
        }
    }
    Ok(())
}

/// Sequences rearranged so the direction reads them left to right.
fn ordered(seqs: &[Vec<u8>], d: Direction) -> Vec<Vec<u8>> {
    match d {
        Direction::Forward => seqs.to_vec(),
        Direction::Backward => seqs.iter().map(|s| s.iter().rev().copied().collect()).collect(),
    }
}

/// Embedding rows for the inputs: the start token, then each symbol shifted by one.
fn embed_inputs(p: &DirectionParams, seqs: &[Vec<u8>], steps: usize) -> Array2<f64> {
    let batch = seqs.len();
    let mut x = Array2::zeros((steps * batch, p.hidden_size()));
    for t in 0..steps {
        for (b, seq) in seqs.iter().enumerate() {
            let token = if t == 0 { START_TOKEN } else { seq[t - 1] as usize };
            x.row_mut(t * batch + b).assign(&p.embedding.row(token));
        }
    }
    x
}

struct DirectionPass {
    /// Log-softmax outputs, `steps·batch × ALPHABET`.
    log_probs: Array2<f64>,
    top: Array2<f64>,
    caches: Vec<LayerCache>,
}

fn run_direction(p: &DirectionParams, seqs: &[Vec<u8>], steps: usize) -> DirectionPass {
    let batch = seqs.len();
    let mut x = embed_inputs(p, seqs, steps);
    let mut caches = Vec::with_capacity(p.layers.len());
    for layer in &p.layers {
        let (h, cache) = layer_forward(layer, x, steps, batch);
        caches.push(cache);
        x = h;
    }
    let mut logits = Array2::zeros((steps * batch, ALPHABET));
    logits.assign(&p.out_b.row(0));
    general_mat_mul(1.0, &x, &p.out_w, 1.0, &mut logits);
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    DirectionPass { log_probs: logits, top: x, caches }
}

fn sequence_totals(pass: &DirectionPass, seqs: &[Vec<u8>], steps: usize) -> Vec<f64> {
    let batch = seqs.len();
    seqs.iter()
        .enumerate()
        .map(|(b, seq)| (0..steps).map(|t| pass.log_probs[[t * batch + b, seq[t] as usize]]).sum())
        .collect()
}

/// Per-position next-symbol distributions of one direction, in original position order.
pub fn direction_conditionals(params: &ModelParams, d: Direction, sequence: &[u8]) -> Result<Vec<StepDistribution>> {
    let seqs = vec![sequence.to_vec()];
    validate(params, &seqs)?;
    let n = params.n_qubits;
    let pass = run_direction(params.direction(d), &ordered(&seqs, d), n);
    let mut out: Vec<StepDistribution> =
        (0..n).map(|t| std::array::from_fn(|a| pass.log_probs[[t, a]].exp())).collect();
    if d == Direction::Backward {
        out.reverse();
    }
    Ok(out)
}

/// Directional log-likelihoods of many sequences, evaluated in chunks.
pub fn batch_log_probs(params: &ModelParams, seqs: &[Vec<u8>]) -> Result<Vec<SequenceLogProb>> {
    validate(params, seqs)?;
    let n = params.n_qubits;
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(EVAL_CHUNK) {
        let [fwd, bwd] = Direction::BOTH.map(|d| {
            let ord = ordered(chunk, d);
            let pass = run_direction(params.direction(d), &ord, n);
            sequence_totals(&pass, &ord, n)
        });
        out.extend(fwd.into_iter().zip(bwd).map(|(f, b)| SequenceLogProb::from_parts(f, b)));
    }
    Ok(out)
}

pub fn sequence_log_prob(params: &ModelParams, sequence: &[u8]) -> Result<SequenceLogProb> {
    Ok(batch_log_probs(params, &[sequence.to_vec()])?[0])
}

/// Draws `count` sequences from the mixture with one seeded stream: a fair
/// coin per sequence picks the direction, then each direction group is
/// generated ancestrally (the backward group from position N down to 1).
pub fn sample_batch(params: &ModelParams, count: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = rng_from(seed);
    let coins: Vec<bool> = (0..count).map(|_| rng.random::<bool>()).collect();
    let mut out = vec![Vec::new(); count];
    for d in Direction::BOTH {
        let members: Vec<usize> = (0..count).filter(|&i| coins[i] == (d == Direction::Backward)).collect();
        if members.is_empty() {
            continue;
        }
        let generated = generate(params.direction(d), params.n_qubits, members.len(), &mut rng);
        for (slot, mut seq) in members.into_iter().zip(generated) {
            if d == Direction::Backward {
                seq.reverse();
            }
            out[slot] = seq;
        }
    }
    out
}

/// One sequence drawn from the model mixture.
pub fn sample_sequence(params: &ModelParams, seed: u64) -> Vec<u8> {
    sample_batch(params, 1, seed).pop().unwrap()
}

fn generate<R: Rng>(p: &DirectionParams, steps: usize, batch: usize, rng: &mut R) -> Vec<Vec<u8>> {
    let hidden = p.hidden_size();
    let mut states: Vec<Array2<f64>> = p.layers.iter().map(|_| Array2::zeros((batch, hidden))).collect();
    let mut tokens = vec![START_TOKEN; batch];
    let mut out = vec![Vec::with_capacity(steps); batch];
    let mut logits = Array2::zeros((batch, ALPHABET));
    for _ in 0..steps {
        let mut x = Array2::zeros((batch, hidden));
        for (b, &tok) in tokens.iter().enumerate() {
            x.row_mut(b).assign(&p.embedding.row(tok));
        }
        for (layer, state) in p.layers.iter().zip(states.iter_mut()) {
            *state = layer_step(layer, x.view(), state.view());
            x = state.clone();
        }
        logits.assign(&p.out_b.row(0));
        general_mat_mul(1.0, &x, &p.out_w, 1.0, &mut logits);
        for (b, row) in logits.rows().into_iter().enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let weights: [f64; ALPHABET] = std::array::from_fn(|a| (row[a] - max).exp());
            let total: f64 = weights.iter().sum();
            let mut target = rng.random::<f64>() * total;
            let mut symbol = ALPHABET - 1;
            for (a, w) in weights.iter().enumerate() {
                if target < *w {
                    symbol = a;
                    break;
                }
                target -= w;
            }
            tokens[b] = symbol;
            out[b].push(symbol as u8);
        }
    }
    out
}

/// Mean per-symbol NLL of one direction over a batch and, optionally, its
/// gradient scaled by `grad_scale`.
fn direction_loss(
    p: &DirectionParams,
    seqs: &[Vec<u8>],
    steps: usize,
    grad: Option<(&mut DirectionParams, f64)>,
) -> f64 {
    let batch = seqs.len();
    let pass = run_direction(p, seqs, steps);
    let norm = 1.0 / (steps * batch) as f64;
    let loss = -sequence_totals(&pass, seqs, steps).iter().sum::<f64>() * norm;

    let Some((g, scale)) = grad else {
        return loss;
    };
    // d loss / d logits = (softmax − onehot) / (steps · batch)
    let mut d_logits = pass.log_probs.mapv(f64::exp);
    for t in 0..steps {
        for (b, seq) in seqs.iter().enumerate() {
            d_logits[[t * batch + b, seq[t] as usize]] -= 1.0;
        }
    }
    d_logits *= scale * norm;

    general_mat_mul(1.0, &pass.top.t(), &d_logits, 1.0, &mut g.out_w);
    g.out_b.row_mut(0).scaled_add(1.0, &d_logits.sum_axis(Axis(0)));
    let mut d_h = d_logits.dot(&p.out_w.t());
    for (l, (layer, cache)) in p.layers.iter().zip(&pass.caches).enumerate().rev() {
        d_h = layer_backward(layer, cache, &d_h, steps, batch, &mut g.layers[l]);
    }
    for t in 0..steps {
        for (b, seq) in seqs.iter().enumerate() {
            let token = if t == 0 { START_TOKEN } else { seq[t - 1] as usize };
            g.embedding.row_mut(token).scaled_add(1.0, &d_h.slice(s![t * batch + b, ..]));
        }
    }
    loss
}

/// `L = ½ (L_fwd + L_bwd)` with `L_dir = −(1/(N·B)) Σ_b Σ_t log P_dir(a_t | context)`.
pub fn batch_loss(params: &ModelParams, batch: &[Vec<u8>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(QstError::EmptyBatch);
    }
    validate(params, batch)?;
    let n = params.n_qubits;
    Ok(Direction::BOTH
        .iter()
        .map(|&d| 0.5 * direction_loss(params.direction(d), &ordered(batch, d), n, None))
        .sum())
}

/// Loss and its exact gradient with respect to every parameter block.
pub fn loss_and_gradients(params: &ModelParams, batch: &[Vec<u8>]) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(QstError::EmptyBatch);
    }
    validate(params, batch)?;
    let n = params.n_qubits;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for d in Direction::BOTH {
        let g = grads.direction_mut(d);
        loss += 0.5 * direction_loss(params.direction(d), &ordered(batch, d), n, Some((g, 0.5)));
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{init_model, ModelConfig};
    use crate::states::decode_outcome;

    fn small(seed: u64, n: usize) -> ModelParams {
        init_model(&ModelConfig { n_qubits: n, hidden_size: 6, n_layers: 2, seed }).unwrap()
    }

    fn zero_model(n: usize) -> ModelParams {
        ModelParams::zeros(&ModelConfig { n_qubits: n, hidden_size: 5, n_layers: 2, seed: 0 })
    }

    #[test]
    fn zero_model_is_uniform() {
        let p = zero_model(4);
        for d in Direction::BOTH {
            for dist in direction_conditionals(&p, d, &[0, 3, 1, 2]).unwrap() {
                assert!(dist.iter().all(|&x| (x - 0.25).abs() < 1e-15));
            }
        }
        let lp = sequence_log_prob(&p, &[1, 1, 2, 3]).unwrap();
        let expected = -4.0 * 4f64.ln();
        assert!((lp.forward - expected).abs() < 1e-12);
        assert!((lp.backward - expected).abs() < 1e-12);
        assert!((lp.mixture - expected).abs() < 1e-12);
        let loss = batch_loss(&p, &[vec![0, 1, 2, 3], vec![3, 3, 3, 3]]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.38629).abs() < 1e-5);
    }

    #[test]
    fn mixture_of_equal_parts() {
        let m = SequenceLogProb::from_parts(-3.2, -3.2);
        assert!((m.mixture + 3.2).abs() < 1e-15);
        let m = SequenceLogProb::from_parts(-1.0, -7.0);
        assert!(m.mixture >= -7.0 && m.mixture <= -1.0);
    }

    #[test]
    fn step_distributions_are_normalized() {
        let p = small(5, 5);
        for d in Direction::BOTH {
            for dist in direction_conditionals(&p, d, &[2, 0, 1, 3, 3]).unwrap() {
                assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                assert!(dist.iter().all(|&x| x > 0.0));
            }
        }
    }

    #[test]
    fn directions_are_strictly_causal() {
        let p = small(8, 5);
        let base = vec![1u8, 2, 0, 3, 1];
        let fwd = direction_conditionals(&p, Direction::Forward, &base).unwrap();
        let bwd = direction_conditionals(&p, Direction::Backward, &base).unwrap();
        for j in 0..5 {
            let mut other = base.clone();
            other[j] = (other[j] + 1) % 4;
            let f2 = direction_conditionals(&p, Direction::Forward, &other).unwrap();
            let b2 = direction_conditionals(&p, Direction::Backward, &other).unwrap();
            for t in 0..=j {
                assert_eq!(fwd[t], f2[t], "forward t={t} j={j}");
            }
            for t in j..5 {
                assert_eq!(bwd[t], b2[t], "backward t={t} j={j}");
            }
        }
    }

    #[test]
    fn single_position_uses_only_start_token() {
        let p = small(2, 1);
        let a = direction_conditionals(&p, Direction::Forward, &[0]).unwrap();
        let b = direction_conditionals(&p, Direction::Forward, &[3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mixture_normalizes_over_all_sequences() {
        for seed in 0..3 {
            let p = small(seed, 4);
            let all: Vec<Vec<u8>> = (0..256).map(|i| decode_outcome(i, 4)).collect();
            let lps = batch_log_probs(&p, &all).unwrap();
            for pick in [|l: &SequenceLogProb| l.forward, |l: &SequenceLogProb| l.backward, |l: &SequenceLogProb| l.mixture] {
                let total: f64 = lps.iter().map(|l| pick(l).exp()).sum();
                assert!((total - 1.0).abs() < 1e-10, "total = {total}");
            }
        }
    }

    #[test]
    fn sampling_shape_and_determinism() {
        let p = small(4, 6);
        let a = sample_batch(&p, 50, 17);
        assert_eq!(a, sample_batch(&p, 50, 17));
        assert_ne!(a, sample_batch(&p, 50, 18));
        assert!(a.iter().all(|s| s.len() == 6 && s.iter().all(|&x| x < 4)));
        assert_eq!(sample_sequence(&p, 3), sample_sequence(&p, 3));
    }

    #[test]
    fn loss_rejects_empty_and_invalid_batches() {
        let p = small(0, 3);
        assert!(matches!(loss_and_gradients(&p, &[]), Err(QstError::EmptyBatch)));
        assert!(matches!(batch_loss(&p, &[vec![0, 1]]), Err(QstError::LengthMismatch { .. })));
        assert!(matches!(batch_loss(&p, &[vec![0, 1, 7]]), Err(QstError::InvalidSymbol(7))));
    }

    #[test]
    fn duplicated_batch_has_same_loss_and_gradient() {
        let p = small(11, 4);
        let batch = vec![vec![0, 1, 2, 3], vec![3, 1, 1, 0], vec![2, 2, 0, 1]];
        let doubled: Vec<Vec<u8>> = batch.iter().chain(batch.iter()).cloned().collect();
        let (l1, g1) = loss_and_gradients(&p, &batch).unwrap();
        let (l2, g2) = loss_and_gradients(&p, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for ((_, a), (_, b)) in g1.named_blocks().iter().zip(g2.named_blocks()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-14));
        }
    }

    #[test]
    fn loss_matches_log_probs() {
        let p = small(21, 5);
        let batch = vec![vec![0, 1, 2, 3, 0], vec![3, 3, 1, 0, 2]];
        let lps = batch_log_probs(&p, &batch).unwrap();
        let expected = -lps.iter().map(|l| 0.5 * (l.forward + l.backward)).sum::<f64>() / (5.0 * 2.0);
        let (loss, _) = loss_and_gradients(&p, &batch).unwrap();
        assert!((loss - expected).abs() < 1e-13);
    }
}
