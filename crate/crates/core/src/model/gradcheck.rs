use rand::seq::index::sample;

use super::network::{batch_loss, loss_and_gradients};
use super::params::ModelParams;
use crate::error::Result;
use crate::seed::rng_from;

/// Models with more coordinates than this are checked on a random subsample.
const FULL_CHECK_LIMIT: usize = 5000;
const SUBSAMPLE: usize = 400;
/// Floor on the relative-error denominator, far above finite-difference noise.
const DENOM_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_block: String,
    pub coordinates_checked: usize,
}

/// Compares analytic gradients against central differences
/// `(L(θ + h) − L(θ − h)) / 2h`, coordinate by coordinate.
///
/// Relative error is `|g − ĝ| / max(|g|, |ĝ|, 1e-6)`.
pub fn finite_difference_check(params: &ModelParams, batch: &[Vec<u8>], step: f64, seed: u64) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_gradients(params, batch)?;
    let grad_flat: Vec<(String, f64)> = grads
        .named_blocks()
        .into_iter()
        .flat_map(|(name, b)| b.iter().map(move |&g| (name.clone(), g)).collect::<Vec<_>>())
        .collect();
    let total = grad_flat.len();
    let coords: Vec<usize> = if total <= FULL_CHECK_LIMIT {
        (0..total).collect()
    } else {
        let mut idx = sample(&mut rng_from(seed), total, SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport { max_relative_error: 0.0, worst_block: String::new(), coordinates_checked: coords.len() };
    for &k in &coords {
        let original = coordinate(&mut probe, k, None);
        coordinate(&mut probe, k, Some(original + step));
        let plus = batch_loss(&probe, batch)?;
        coordinate(&mut probe, k, Some(original - step));
        let minus = batch_loss(&probe, batch)?;
        coordinate(&mut probe, k, Some(original));
        let numeric = (plus - minus) / (2.0 * step);
        let (name, analytic) = &grad_flat[k];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
        if rel > report.max_relative_error || report.worst_block.is_empty() {
            report.max_relative_error = report.max_relative_error.max(rel);
            report.worst_block = name.clone();
        }
    }
    Ok(report)
}

/// Reads flat coordinate `k`, writing `value` first when given.
fn coordinate(params: &mut ModelParams, mut k: usize, value: Option<f64>) -> f64 {
    for block in params.blocks_mut() {
        if k < block.len() {
            let slot = block.iter_mut().nth(k).unwrap();
            if let Some(v) = value {
                *slot = v;
            }
            return *slot;
        }
        k -= block.len();
    }
    panic!("coordinate out of range");
}
