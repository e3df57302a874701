//! Classical fidelity (Monte-Carlo and exact), KL divergence, linear-inversion
//! density reconstruction and pure-target quantum fidelity.

use std::fmt::{self, Write as _};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{QstError, Result};
use crate::model::{batch_log_probs, sample_batch, ModelParams};
use crate::povm::{Mat2, PovmFrame};
use crate::seed::{derive_labeled, rng_from};
use crate::states::{
    decode_outcome, encode_outcome, enumerate_distribution_capped, outcome_probability, sample_outcomes, StateSpec,
    DEFAULT_ENUMERATION_CAP,
};

/// Default Monte-Carlo sample count for classical fidelity.
pub const DEFAULT_MC_SAMPLES: usize = 50_000;
pub const DEFAULT_DENSITY_CAP: usize = 8;
/// Samples per independently seeded Monte-Carlo chunk.
const MC_CHUNK: usize = 5_000;

/// Anything that can draw outcome strings and score them exactly.
pub trait GenerativeModel: Sync {
    fn n_qubits(&self) -> usize;
    fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<u8>>>;
    /// Natural-log probabilities of the given outcome strings.
    fn log_probs(&self, seqs: &[Vec<u8>]) -> Result<Vec<f64>>;
}

impl GenerativeModel for ModelParams {
    fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<u8>>> {
        Ok(sample_batch(self, count, seed))
    }

    fn log_probs(&self, seqs: &[Vec<u8>]) -> Result<Vec<f64>> {
        Ok(batch_log_probs(self, seqs)?.into_iter().map(|lp| lp.mixture).collect())
    }
}

/// Oracle model whose distribution is the exact measurement statistics of a state.
pub struct ExactModel<'a> {
    pub state: &'a StateSpec,
    pub frame: &'a PovmFrame,
}

impl GenerativeModel for ExactModel<'_> {
    fn n_qubits(&self) -> usize {
        self.state.n_qubits()
    }

    fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<u8>>> {
        Ok(sample_outcomes(self.state, self.frame, count, seed, "oracle")?.outcomes)
    }

    fn log_probs(&self, seqs: &[Vec<u8>]) -> Result<Vec<f64>> {
        seqs.iter().map(|s| Ok(outcome_probability(self.state, self.frame, s)?.ln())).collect()
    }
}

/// Explicit distribution over all `4^n` outcomes, indexed by [`encode_outcome`].
pub struct TableModel {
    n_qubits: usize,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl TableModel {
    pub fn new(n_qubits: usize, probs: Vec<f64>) -> Result<TableModel> {
        if probs.len() != 1 << (2 * n_qubits) {
            return Err(QstError::ShapeMismatch(format!("{} probabilities for {n_qubits} qubits", probs.len())));
        }
        if let Some(&p) = probs.iter().find(|&&p| !(p >= 0.0)) {
            return Err(QstError::NegativeProbability(p));
        }
        let cdf = probs
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Ok(TableModel { n_qubits, probs, cdf })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl GenerativeModel for TableModel {
    fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<u8>>> {
        let mut rng = rng_from(seed);
        let total = *self.cdf.last().unwrap();
        Ok((0..count)
            .map(|_| {
                let u = rng.random::<f64>() * total;
                let idx = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
                decode_outcome(idx, self.n_qubits)
            })
            .collect())
    }

    fn log_probs(&self, seqs: &[Vec<u8>]) -> Result<Vec<f64>> {
        seqs.iter()
            .map(|s| {
                if s.len() != self.n_qubits {
                    return Err(QstError::LengthMismatch { expected: self.n_qubits, got: s.len() });
                }
                Ok(self.probs[encode_outcome(s)].ln())
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Mc,
    Exact,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mc => "mc",
            Method::Exact => "exact",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FidelityReport {
    pub run_id: String,
    pub method: Method,
    pub classical_fidelity: f64,
    /// Zero for the exact method.
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub n_qubits: usize,
    pub quantum_fidelity: Option<f64>,
}

impl FidelityReport {
    pub const CSV_HEADER: &'static str = "run_id,method,value,stderr,n_samples,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.run_id, self.method, self.classical_fidelity, self.stderr, self.n_samples, self.seed
        )
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        writeln!(out, "run_id={}", self.run_id).unwrap();
        writeln!(out, "method={}", self.method).unwrap();
        writeln!(out, "classical_fidelity={}", self.classical_fidelity).unwrap();
        writeln!(out, "stderr={}", self.stderr).unwrap();
        writeln!(out, "n_samples={}", self.n_samples).unwrap();
        writeln!(out, "seed={}", self.seed).unwrap();
        writeln!(out, "n_qubits={}", self.n_qubits).unwrap();
        if let Some(q) = self.quantum_fidelity {
            writeln!(out, "quantum_fidelity={q}").unwrap();
        }
        out
    }
}

/// `E_{a∼P_model} √(P_target(a)/P_model(a))` from `n_samples` model draws.
///
/// Draws are split into chunks with seeds derived from `seed`; chunk results
/// are reduced in chunk order so the estimate does not depend on scheduling.
pub fn classical_fidelity_mc<M: GenerativeModel + ?Sized>(
    model: &M,
    target: &StateSpec,
    frame: &PovmFrame,
    n_samples: usize,
    seed: u64,
) -> Result<FidelityReport> {
    if model.n_qubits() != target.n_qubits() {
        return Err(QstError::QubitMismatch { left: model.n_qubits(), right: target.n_qubits() });
    }
    if n_samples == 0 {
        return Err(QstError::EmptyBatch);
    }
    let chunks: Vec<(usize, usize)> =
        (0..n_samples).step_by(MC_CHUNK).enumerate().map(|(c, start)| (c, MC_CHUNK.min(n_samples - start))).collect();
    let per_chunk: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|&(c, len)| {
            let seqs = model.sample(len, derive_labeled(seed, "fc-chunk", c as u64))?;
            let log_q = model.log_probs(&seqs)?;
            seqs.iter()
                .zip(log_q)
                .map(|(s, lq)| Ok((0.5 * (outcome_probability(target, frame, s)?.ln() - lq)).exp()))
                .collect()
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = per_chunk.into_iter().flatten().collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(FidelityReport {
        run_id: String::new(),
        method: Method::Mc,
        classical_fidelity: mean,
        stderr,
        n_samples,
        seed,
        n_qubits: target.n_qubits(),
        quantum_fidelity: None,
    })
}

/// All `4^n` model probabilities, indexed by [`encode_outcome`].
pub fn model_distribution<M: GenerativeModel + ?Sized>(model: &M, cap: usize) -> Result<Vec<f64>> {
    let n = model.n_qubits();
    if n > cap {
        return Err(QstError::CapExceeded { what: "enumeration", n, cap });
    }
    let seqs: Vec<Vec<u8>> = (0..1usize << (2 * n)).map(|i| decode_outcome(i, n)).collect();
    Ok(model.log_probs(&seqs)?.into_iter().map(f64::exp).collect())
}

/// Bhattacharyya coefficient `Σ √(p q)`.
pub fn bhattacharyya(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum()
}

pub fn classical_fidelity_exact<M: GenerativeModel + ?Sized>(
    model: &M,
    target: &StateSpec,
    frame: &PovmFrame,
) -> Result<FidelityReport> {
    if model.n_qubits() != target.n_qubits() {
        return Err(QstError::QubitMismatch { left: model.n_qubits(), right: target.n_qubits() });
    }
    let p = enumerate_distribution_capped(target, frame, DEFAULT_ENUMERATION_CAP)?;
    let q = model_distribution(model, DEFAULT_ENUMERATION_CAP)?;
    Ok(FidelityReport {
        run_id: String::new(),
        method: Method::Exact,
        classical_fidelity: bhattacharyya(&p, &q),
        stderr: 0.0,
        n_samples: 0,
        seed: 0,
        n_qubits: target.n_qubits(),
        quantum_fidelity: None,
    })
}

/// `Σ P_target log(P_target / P_model)`, skipping outcomes with zero target mass.
pub fn kl_divergence_exact<M: GenerativeModel + ?Sized>(
    target: &StateSpec,
    model: &M,
    frame: &PovmFrame,
) -> Result<f64> {
    if model.n_qubits() != target.n_qubits() {
        return Err(QstError::QubitMismatch { left: target.n_qubits(), right: model.n_qubits() });
    }
    let p = enumerate_distribution_capped(target, frame, DEFAULT_ENUMERATION_CAP)?;
    let q = model_distribution(model, DEFAULT_ENUMERATION_CAP)?;
    let kl: f64 = p.iter().zip(&q).filter(|(&a, _)| a > 0.0).map(|(a, b)| a * (a / b).ln()).sum();
    // Rounding can leave identical distributions a hair below zero.
    Ok(kl.max(0.0))
}

fn to_dmatrix(m: &Mat2) -> DMatrix<Complex64> {
    DMatrix::from_fn(2, 2, |i, j| m.0[i][j])
}

/// `ρ̂ = Σ_a probs[a] ⊗_i Θ_{a_i}` for an explicit distribution over `4^n` outcomes.
pub fn reconstruct_density_from_probs(probs: &[f64], frame: &PovmFrame, n_qubits: usize) -> Result<DMatrix<Complex64>> {
    if n_qubits > DEFAULT_DENSITY_CAP {
        return Err(QstError::CapExceeded { what: "density reconstruction", n: n_qubits, cap: DEFAULT_DENSITY_CAP });
    }
    if probs.len() != 1 << (2 * n_qubits) {
        return Err(QstError::ShapeMismatch(format!("{} probabilities for {n_qubits} qubits", probs.len())));
    }
    let duals: Vec<DMatrix<Complex64>> = frame.dual.iter().map(to_dmatrix).collect();
    // Outcome indices put qubit 1 in the most significant digit, so each
    // quarter of `probs` is the conditional block for one first symbol.
    fn build(probs: &[f64], duals: &[DMatrix<Complex64>], n: usize) -> DMatrix<Complex64> {
        if n == 0 {
            return DMatrix::from_element(1, 1, Complex64::new(probs[0], 0.0));
        }
        let quarter = probs.len() / 4;
        let dim = 1 << n;
        let mut out = DMatrix::zeros(dim, dim);
        for (a, theta) in duals.iter().enumerate() {
            let block = &probs[a * quarter..(a + 1) * quarter];
            if block.iter().all(|&p| p == 0.0) {
                continue;
            }
            out += theta.kronecker(&build(block, duals, n - 1));
        }
        out
    }
    Ok(build(probs, &duals, n_qubits))
}

/// Linear-inversion estimate from a model's full distribution. The result is
/// Hermitian with unit trace but need not be positive semidefinite.
pub fn reconstruct_density<M: GenerativeModel + ?Sized>(model: &M, frame: &PovmFrame) -> Result<DMatrix<Complex64>> {
    let n = model.n_qubits();
    if n > DEFAULT_DENSITY_CAP {
        return Err(QstError::CapExceeded { what: "density reconstruction", n, cap: DEFAULT_DENSITY_CAP });
    }
    let probs = model_distribution(model, DEFAULT_DENSITY_CAP)?;
    reconstruct_density_from_probs(&probs, frame, n)
}

/// Smallest eigenvalue of a Hermitian matrix; negative values flag a non-physical estimate.
pub fn most_negative_eigenvalue(rho: &DMatrix<Complex64>) -> f64 {
    let herm = (rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    SymmetricEigen::new(herm).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `√⟨ψ|ρ|ψ⟩` for a normalized pure target.
pub fn quantum_fidelity_pure(target: &[Complex64], rho: &DMatrix<Complex64>) -> Result<f64> {
    if rho.nrows() != target.len() || rho.ncols() != target.len() {
        return Err(QstError::ShapeMismatch(format!(
            "state of dimension {} vs {}×{} density matrix",
            target.len(),
            rho.nrows(),
            rho.ncols()
        )));
    }
    let psi = DVector::from_column_slice(target);
    let overlap = (psi.adjoint() * rho * &psi)[(0, 0)];
    if overlap.im.abs() > 1e-10 {
        return Err(QstError::InvalidState(format!("⟨ψ|ρ|ψ⟩ has imaginary part {:e}", overlap.im)));
    }
    Ok(overlap.re.max(0.0).sqrt())
}

/// Dense statevector of a target followed by its fidelity with `rho`.
pub fn quantum_fidelity_state(target: &StateSpec, rho: &DMatrix<Complex64>) -> Result<f64> {
    let psi = target.to_dense(DEFAULT_DENSITY_CAP)?;
    quantum_fidelity_pure(&psi, rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use crate::povm::pauli4_povm;
    use crate::states::{enumerate_distribution, ghz, haar_random, product_plus, w_state};

    fn frame() -> PovmFrame {
        pauli4_povm()
    }

    fn max_abs(m: &DMatrix<Complex64>) -> f64 {
        m.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn oracle_model_has_unit_fidelity() {
        let f = frame();
        let state = w_state(4);
        let oracle = ExactModel { state: &state, frame: &f };
        let exact = classical_fidelity_exact(&oracle, &state, &f).unwrap();
        assert!((exact.classical_fidelity - 1.0).abs() < 1e-10);
        assert_eq!(exact.stderr, 0.0);
        let mc = classical_fidelity_mc(&oracle, &state, &f, 3000, 5).unwrap();
        assert!((mc.classical_fidelity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_model_against_single_qubit_ghz() {
        let f = frame();
        let state = ghz(1);
        let uniform = TableModel::new(1, vec![0.25; 4]).unwrap();
        let p = enumerate_distribution(&state, &f).unwrap();
        let expected: f64 = p.iter().map(|x| (x * 0.25).sqrt()).sum();
        let got = classical_fidelity_exact(&uniform, &state, &f).unwrap().classical_fidelity;
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn disjoint_support_scores_near_zero() {
        let f = frame();
        let state = ghz(3);
        let p = enumerate_distribution(&state, &f).unwrap();
        let mut q = vec![0.0; p.len()];
        let idx = p.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        q[idx] = 1.0;
        let model = TableModel::new(3, q).unwrap();
        let mc = classical_fidelity_mc(&model, &state, &f, 100, 0).unwrap();
        assert!(mc.classical_fidelity < 0.05, "{}", mc.classical_fidelity);
    }

    #[test]
    fn mc_agrees_with_exact_on_random_model() {
        let f = frame();
        let state = ghz(6);
        let params = init_model(&ModelConfig { n_qubits: 6, hidden_size: 8, n_layers: 1, seed: 2 }).unwrap();
        let exact = classical_fidelity_exact(&params, &state, &f).unwrap().classical_fidelity;
        let mc = classical_fidelity_mc(&params, &state, &f, 20_000, 11).unwrap();
        assert!(
            (mc.classical_fidelity - exact).abs() <= 3.0 * mc.stderr,
            "mc {} ± {} vs exact {exact}",
            mc.classical_fidelity,
            mc.stderr
        );
    }

    #[test]
    fn mc_is_deterministic_per_seed() {
        let f = frame();
        let state = product_plus(3);
        let params = init_model(&ModelConfig { n_qubits: 3, hidden_size: 4, n_layers: 1, seed: 0 }).unwrap();
        let a = classical_fidelity_mc(&params, &state, &f, 12_000, 4).unwrap();
        let b = classical_fidelity_mc(&params, &state, &f, 12_000, 4).unwrap();
        assert_eq!(a.csv_row(), b.csv_row());
        let c = classical_fidelity_mc(&params, &state, &f, 12_000, 5).unwrap();
        assert_ne!(a.classical_fidelity, c.classical_fidelity);
    }

    #[test]
    fn qubit_mismatch_is_an_error() {
        let f = frame();
        let params = init_model(&ModelConfig { n_qubits: 3, hidden_size: 4, n_layers: 1, seed: 0 }).unwrap();
        assert!(matches!(
            classical_fidelity_mc(&params, &ghz(4), &f, 10, 0),
            Err(QstError::QubitMismatch { .. })
        ));
        assert!(matches!(classical_fidelity_exact(&params, &ghz(4), &f), Err(QstError::QubitMismatch { .. })));
    }

    #[test]
    fn bhattacharyya_is_symmetric_and_bounded() {
        let mut rng = rng_from(17);
        for _ in 0..20 {
            let mut p: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
            let mut q: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
            let (sp, sq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
            p.iter_mut().for_each(|x| *x /= sp);
            q.iter_mut().for_each(|x| *x /= sq);
            let pq = bhattacharyya(&p, &q);
            assert_eq!(pq, bhattacharyya(&q, &p));
            assert!(pq <= 1.0 + 1e-9 && pq >= 0.0);
            assert!((bhattacharyya(&p, &p) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_is_zero_for_oracle_and_positive_otherwise() {
        let f = frame();
        let state = ghz(3);
        let oracle = ExactModel { state: &state, frame: &f };
        assert!(kl_divergence_exact(&state, &oracle, &f).unwrap() < 1e-12);
        let uniform = TableModel::new(3, vec![1.0 / 64.0; 64]).unwrap();
        assert!(kl_divergence_exact(&state, &uniform, &f).unwrap() > 0.0);
    }

    #[test]
    fn single_qubit_zero_state_is_recovered() {
        let f = frame();
        let state = StateSpec::product(vec![[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]]).unwrap();
        let p = enumerate_distribution(&state, &f).unwrap();
        let rho = reconstruct_density_from_probs(&p, &f, 1).unwrap();
        let mut expected = DMatrix::zeros(2, 2);
        expected[(0, 0)] = Complex64::new(1.0, 0.0);
        assert!(max_abs(&(rho - expected)) < 1e-10);
    }

    #[test]
    fn bell_state_is_recovered() {
        let f = frame();
        let state = ghz(2);
        let p = enumerate_distribution(&state, &f).unwrap();
        let rho = reconstruct_density_from_probs(&p, &f, 2).unwrap();
        let psi = state.to_dense(4).unwrap();
        let v = DVector::from_column_slice(&psi);
        let projector = &v * v.adjoint();
        assert!(max_abs(&(&rho - projector)) < 1e-10);
        assert!((quantum_fidelity_pure(&psi, &rho).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn every_state_family_reconstructs_to_unit_fidelity() {
        let f = frame();
        for state in [ghz(4), w_state(4), product_plus(4), haar_random(4, 3).unwrap()] {
            let p = enumerate_distribution(&state, &f).unwrap();
            let rho = reconstruct_density_from_probs(&p, &f, 4).unwrap();
            let fid = quantum_fidelity_state(&state, &rho).unwrap();
            assert!((fid - 1.0).abs() < 1e-8, "{fid}");
            assert!(most_negative_eigenvalue(&rho) > -1e-10);
        }
    }

    #[test]
    fn maximally_mixed_fidelity() {
        for n in 1..=3 {
            let dim = 1 << n;
            let rho = DMatrix::<Complex64>::identity(dim, dim) * Complex64::new(1.0 / dim as f64, 0.0);
            let psi = ghz(n).to_dense(4).unwrap();
            let fid = quantum_fidelity_pure(&psi, &rho).unwrap();
            assert!((fid - 2f64.powf(-(n as f64) / 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction_is_linear_and_trace_preserving() {
        let f = frame();
        let p = enumerate_distribution(&ghz(3), &f).unwrap();
        let q = enumerate_distribution(&w_state(3), &f).unwrap();
        let lambda = 0.3;
        let mix: Vec<f64> = p.iter().zip(&q).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let rp = reconstruct_density_from_probs(&p, &f, 3).unwrap();
        let rq = reconstruct_density_from_probs(&q, &f, 3).unwrap();
        let rm = reconstruct_density_from_probs(&mix, &f, 3).unwrap();
        let combo = rp * Complex64::new(lambda, 0.0) + rq * Complex64::new(1.0 - lambda, 0.0);
        assert!(max_abs(&(&rm - combo)) < 1e-10);
        assert!((rm.trace() - Complex64::new(1.0, 0.0)).norm() < 1e-8);
        assert!(max_abs(&(&rm - rm.adjoint())) < 1e-10);
    }

    #[test]
    fn random_model_reconstruction_has_unit_trace() {
        let f = frame();
        let params = init_model(&ModelConfig { n_qubits: 3, hidden_size: 6, n_layers: 2, seed: 8 }).unwrap();
        let rho = reconstruct_density(&params, &f).unwrap();
        assert!((rho.trace() - Complex64::new(1.0, 0.0)).norm() < 1e-8);
        assert!(max_abs(&(&rho - rho.adjoint())) < 1e-10);
    }

    #[test]
    fn caps_and_dimensions_are_enforced() {
        let f = frame();
        let psi = ghz(2).to_dense(4).unwrap();
        let rho = DMatrix::<Complex64>::identity(8, 8);
        assert!(matches!(quantum_fidelity_pure(&psi, &rho), Err(QstError::ShapeMismatch(_))));
        let params = init_model(&ModelConfig { n_qubits: 9, hidden_size: 2, n_layers: 1, seed: 0 }).unwrap();
        assert!(matches!(reconstruct_density(&params, &f), Err(QstError::CapExceeded { .. })));
    }

    #[test]
    fn report_serialization() {
        let r = FidelityReport {
            run_id: "ghz10-g0".into(),
            method: Method::Mc,
            classical_fidelity: 0.99,
            stderr: 0.001,
            n_samples: 50000,
            seed: 3,
            n_qubits: 10,
            quantum_fidelity: None,
        };
        assert_eq!(r.csv_row(), "ghz10-g0,mc,0.99,0.001,50000,3");
        assert!(r.to_key_values().contains("method=mc\n"));
        assert!(!r.to_key_values().contains("quantum_fidelity"));
    }
}
