//! Pure-state families, exact Pauli-4 outcome probabilities and exact samplers.
//!
//! Outcome strings are `&[u8]` over `0..=3`, qubit 1 first. Flat indices into
//! an enumerated distribution use base 4 with qubit 1 most significant, and
//! dense statevectors use base 2 with qubit 1 most significant.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dataset::MeasurementDataset;
use crate::error::{QstError, Result};
use crate::povm::PovmFrame;
use crate::seed::{derive_seed, rng_from};

pub const DEFAULT_DENSE_CAP: usize = 12;
pub const DEFAULT_ENUMERATION_CAP: usize = 8;

const NORM_TOL: f64 = 1e-12;
const NEGATIVE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct BasisTerm {
    pub amplitude: Complex64,
    pub bits: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StateSpec {
    /// Tensor product of single-qubit pure states.
    Product { locals: Vec<[Complex64; 2]> },
    /// Superposition of a few computational-basis strings.
    BasisSuperposition { n_qubits: usize, terms: Vec<BasisTerm> },
    /// Full statevector of length `2^n`.
    Dense { n_qubits: usize, amplitudes: Vec<Complex64> },
}

impl StateSpec {
    pub fn product(locals: Vec<[Complex64; 2]>) -> Result<StateSpec> {
        if locals.is_empty() {
            return Err(QstError::InvalidState("product state needs at least one qubit".into()));
        }
        for (i, v) in locals.iter().enumerate() {
            let norm = v[0].norm_sqr() + v[1].norm_sqr();
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(QstError::InvalidState(format!("local state {i} has squared norm {norm}")));
            }
        }
        Ok(StateSpec::Product { locals })
    }

    pub fn basis_superposition(n_qubits: usize, terms: Vec<BasisTerm>) -> Result<StateSpec> {
        if n_qubits == 0 || terms.is_empty() {
            return Err(QstError::InvalidState("superposition needs qubits and terms".into()));
        }
        for t in &terms {
            if t.bits.len() != n_qubits || t.bits.iter().any(|&b| b > 1) {
                return Err(QstError::InvalidState(format!("bad bitstring {:?}", t.bits)));
            }
        }
        let mut sorted: Vec<&[u8]> = terms.iter().map(|t| t.bits.as_slice()).collect();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(QstError::InvalidState("duplicate bitstrings".into()));
        }
        let norm: f64 = terms.iter().map(|t| t.amplitude.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(QstError::InvalidState(format!("squared norm {norm}")));
        }
        Ok(StateSpec::BasisSuperposition { n_qubits, terms })
    }

    pub fn dense(amplitudes: Vec<Complex64>, cap: usize) -> Result<StateSpec> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(QstError::InvalidState(format!("statevector length {len} is not 2^n")));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > cap {
            return Err(QstError::CapExceeded { what: "dense state", n: n_qubits, cap });
        }
        let norm: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(QstError::InvalidState(format!("squared norm {norm}")));
        }
        Ok(StateSpec::Dense { n_qubits, amplitudes })
    }

    pub fn n_qubits(&self) -> usize {
        match self {
            StateSpec::Product { locals } => locals.len(),
            StateSpec::BasisSuperposition { n_qubits, .. } | StateSpec::Dense { n_qubits, .. } => *n_qubits,
        }
    }

    /// Full statevector, qubit 1 most significant.
    pub fn to_dense(&self, cap: usize) -> Result<Vec<Complex64>> {
        let n = self.n_qubits();
        if n > cap {
            return Err(QstError::CapExceeded { what: "dense conversion", n, cap });
        }
        Ok(match self {
            StateSpec::Dense { amplitudes, .. } => amplitudes.clone(),
            StateSpec::BasisSuperposition { terms, .. } => {
                let mut psi = vec![Complex64::new(0.0, 0.0); 1 << n];
                for t in terms {
                    let idx = t.bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
                    psi[idx] = t.amplitude;
                }
                psi
            }
            StateSpec::Product { locals } => {
                let mut psi = vec![Complex64::new(1.0, 0.0)];
                for v in locals {
                    psi = psi.iter().flat_map(|&c| [c * v[0], c * v[1]]).collect();
                }
                psi
            }
        })
    }
}

/// The state families used by the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateFamily {
    Ghz,
    W,
    Product,
    Hard { seed: u64 },
}

impl StateFamily {
    pub fn parse(name: &str, state_seed: u64) -> Result<StateFamily> {
        match name {
            "ghz" => Ok(StateFamily::Ghz),
            "w" => Ok(StateFamily::W),
            "product" => Ok(StateFamily::Product),
            "hard" => Ok(StateFamily::Hard { seed: state_seed }),
            other => Err(QstError::InvalidConfig(format!("unknown state family `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StateFamily::Ghz => "ghz",
            StateFamily::W => "w",
            StateFamily::Product => "product",
            StateFamily::Hard { .. } => "hard",
        }
    }

    /// Identifier used in dataset headers, e.g. `ghz` or `hard-3`.
    pub fn label(&self) -> String {
        match self {
            StateFamily::Hard { seed } => format!("hard-{seed}"),
            other => other.name().to_string(),
        }
    }

    pub fn build(&self, n: usize) -> Result<StateSpec> {
        if n == 0 {
            return Err(QstError::InvalidState("need at least one qubit".into()));
        }
        match *self {
            StateFamily::Ghz => Ok(ghz(n)),
            StateFamily::W => Ok(w_state(n)),
            StateFamily::Product => Ok(product_plus(n)),
            StateFamily::Hard { seed } => haar_random(n, seed),
        }
    }
}

/// `(|0…0⟩ + |1…1⟩)/√2`.
pub fn ghz(n: usize) -> StateSpec {
    assert!(n >= 1, "ghz needs at least one qubit");
    let amp = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    StateSpec::BasisSuperposition {
        n_qubits: n,
        terms: vec![
            BasisTerm { amplitude: amp, bits: vec![0; n] },
            BasisTerm { amplitude: amp, bits: vec![1; n] },
        ],
    }
}

/// Equal superposition of the `n` one-hot bitstrings.
pub fn w_state(n: usize) -> StateSpec {
    assert!(n >= 1, "w_state needs at least one qubit");
    let amp = Complex64::new(1.0 / (n as f64).sqrt(), 0.0);
    let terms = (0..n)
        .map(|k| {
            let mut bits = vec![0; n];
            bits[k] = 1;
            BasisTerm { amplitude: amp, bits }
        })
        .collect();
    StateSpec::BasisSuperposition { n_qubits: n, terms }
}

/// `H^{⊗n}|0…0⟩`.
pub fn product_plus(n: usize) -> StateSpec {
    assert!(n >= 1, "product_plus needs at least one qubit");
    let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    StateSpec::Product { locals: vec![[s, s]; n] }
}

pub fn haar_random(n: usize, seed: u64) -> Result<StateSpec> {
    haar_random_capped(n, seed, DEFAULT_DENSE_CAP)
}

/// Normalized vector of i.i.d. standard complex Gaussians.
pub fn haar_random_capped(n: usize, seed: u64, cap: usize) -> Result<StateSpec> {
    if n > cap {
        return Err(QstError::CapExceeded { what: "haar random state", n, cap });
    }
    let mut rng = rng_from(seed);
    let mut amps: Vec<Complex64> = (0..1usize << n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm = amps.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    amps.iter_mut().for_each(|c| *c /= norm);
    StateSpec::dense(amps, cap)
}

fn check_outcome(state: &StateSpec, outcome: &[u8]) -> Result<()> {
    if outcome.len() != state.n_qubits() {
        return Err(QstError::LengthMismatch { expected: state.n_qubits(), got: outcome.len() });
    }
    check_symbols(outcome)
}

fn check_symbols(outcome: &[u8]) -> Result<()> {
    match outcome.iter().find(|&&a| a > 3) {
        Some(&a) => Err(QstError::InvalidSymbol(a)),
        None => Ok(()),
    }
}

fn clip_probability(p: f64) -> Result<f64> {
    if p < -NEGATIVE_TOL {
        Err(QstError::NegativeProbability(p))
    } else {
        Ok(p.clamp(0.0, 1.0))
    }
}

/// `M_a[x][y]` lookups for the superposition formulas.
fn effect_elements(frame: &PovmFrame) -> [[[Complex64; 2]; 2]; 4] {
    std::array::from_fn(|a| frame.effects[a].0)
}

/// Applies the 2×2 operator `m` to qubit `q` of an `n`-qubit statevector.
fn apply_single(m: &[[Complex64; 2]; 2], q: usize, n: usize, src: &[Complex64], dst: &mut [Complex64]) {
    let stride = 1usize << (n - 1 - q);
    for base in (0..src.len()).filter(|i| i & stride == 0) {
        let (x0, x1) = (src[base], src[base | stride]);
        dst[base] = m[0][0] * x0 + m[0][1] * x1;
        dst[base | stride] = m[1][0] * x0 + m[1][1] * x1;
    }
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// `P(a) = ⟨ψ| ⊗_i M_{a_i} |ψ⟩`.
pub fn outcome_probability(state: &StateSpec, frame: &PovmFrame, outcome: &[u8]) -> Result<f64> {
    check_outcome(state, outcome)?;
    let p = match state {
        StateSpec::Product { locals } => locals
            .iter()
            .zip(outcome)
            .map(|(v, &a)| frame.effects[a as usize].sandwich(*v, *v).re)
            .product(),
        StateSpec::BasisSuperposition { terms, .. } => {
            let m = effect_elements(frame);
            let mut total = Complex64::new(0.0, 0.0);
            for tk in terms {
                for tl in terms {
                    let mut prod = tk.amplitude * tl.amplitude.conj();
                    for (i, &a) in outcome.iter().enumerate() {
                        prod *= m[a as usize][tl.bits[i] as usize][tk.bits[i] as usize];
                        if prod == Complex64::new(0.0, 0.0) {
                            break;
                        }
                    }
                    total += prod;
                }
            }
            total.re
        }
        StateSpec::Dense { n_qubits, amplitudes } => {
            let m = effect_elements(frame);
            let mut cur = amplitudes.clone();
            let mut next = vec![Complex64::new(0.0, 0.0); cur.len()];
            for (q, &a) in outcome.iter().enumerate() {
                apply_single(&m[a as usize], q, *n_qubits, &cur, &mut next);
                std::mem::swap(&mut cur, &mut next);
            }
            inner(amplitudes, &cur).re
        }
    };
    clip_probability(p)
}

/// Pair bookkeeping for the superposition marginal formula: `last_diff[k][l]`
/// is one past the last position where `b_k` and `b_l` differ (0 if equal).
struct PairTable {
    n_terms: usize,
    last_diff: Vec<usize>,
    bits: Vec<Vec<u8>>,
    coeff: Vec<Complex64>,
}

impl PairTable {
    fn new(terms: &[BasisTerm]) -> PairTable {
        let k = terms.len();
        let mut last_diff = vec![0; k * k];
        let mut coeff = vec![Complex64::new(0.0, 0.0); k * k];
        for (i, ti) in terms.iter().enumerate() {
            for (j, tj) in terms.iter().enumerate() {
                last_diff[i * k + j] = ti
                    .bits
                    .iter()
                    .zip(&tj.bits)
                    .rposition(|(a, b)| a != b)
                    .map_or(0, |p| p + 1);
                coeff[i * k + j] = ti.amplitude * tj.amplitude.conj();
            }
        }
        PairTable { n_terms: k, last_diff, bits: terms.iter().map(|t| t.bits.clone()).collect(), coeff }
    }

    /// Unnormalized weights `P(prefix · a)` for all four `a` at position `pos`,
    /// given the running pair products over the prefix.
    fn next_weights(&self, m: &[[[Complex64; 2]; 2]; 4], pairs: &[Complex64], pos: usize) -> [f64; 4] {
        let k = self.n_terms;
        let mut w = [Complex64::new(0.0, 0.0); 4];
        for i in 0..k {
            for j in 0..k {
                let idx = i * k + j;
                if self.last_diff[idx] > pos + 1 || pairs[idx] == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let (bl, bk) = (self.bits[j][pos] as usize, self.bits[i][pos] as usize);
                for (a, wa) in w.iter_mut().enumerate() {
                    *wa += pairs[idx] * m[a][bl][bk];
                }
            }
        }
        w.map(|c| c.re)
    }

    fn advance(&self, m: &[[[Complex64; 2]; 2]; 4], pairs: &mut [Complex64], pos: usize, a: u8) {
        let k = self.n_terms;
        for i in 0..k {
            for j in 0..k {
                let (bl, bk) = (self.bits[j][pos] as usize, self.bits[i][pos] as usize);
                pairs[i * k + j] *= m[a as usize][bl][bk];
            }
        }
    }

    fn prefix_probability(&self, m: &[[[Complex64; 2]; 2]; 4], prefix: &[u8]) -> f64 {
        let mut pairs = self.coeff.clone();
        for (pos, &a) in prefix.iter().enumerate() {
            self.advance(m, &mut pairs, pos, a);
        }
        let k = self.n_terms;
        (0..k * k)
            .filter(|&idx| self.last_diff[idx] <= prefix.len())
            .map(|idx| pairs[idx].re)
            .sum()
    }
}

/// `P(a_1 … a_m)`, marginalizing the unmeasured qubits.
pub fn marginal_prefix_probability(state: &StateSpec, frame: &PovmFrame, prefix: &[u8]) -> Result<f64> {
    let n = state.n_qubits();
    if prefix.len() > n {
        return Err(QstError::LengthMismatch { expected: n, got: prefix.len() });
    }
    check_symbols(prefix)?;
    let p = match state {
        StateSpec::Product { locals } => locals
            .iter()
            .zip(prefix)
            .map(|(v, &a)| frame.effects[a as usize].sandwich(*v, *v).re)
            .product(),
        StateSpec::BasisSuperposition { terms, .. } => {
            PairTable::new(terms).prefix_probability(&effect_elements(frame), prefix)
        }
        StateSpec::Dense { .. } => {
            let dist = enumerate_distribution(state, frame)?;
            let block = 1usize << (2 * (n - prefix.len()));
            let start = prefix.iter().fold(0usize, |acc, &a| acc * 4 + a as usize) * block;
            dist[start..start + block].iter().sum()
        }
    };
    clip_probability(p)
}

fn draw_index(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let mut target = u * total;
    for (i, w) in weights.iter().enumerate() {
        let w = w.max(0.0);
        if target < w {
            return i;
        }
        target -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

enum Sampler {
    Product(Vec<[f64; 4]>),
    Superposition { table: PairTable, m: [[[Complex64; 2]; 2]; 4] },
    Enumerated { cdf: Vec<f64>, n: usize },
}

impl Sampler {
    fn new(state: &StateSpec, frame: &PovmFrame) -> Result<Sampler> {
        Ok(match state {
            StateSpec::Product { locals } => Sampler::Product(
                locals
                    .iter()
                    .map(|v| std::array::from_fn(|a| frame.effects[a].sandwich(*v, *v).re))
                    .collect(),
            ),
            StateSpec::BasisSuperposition { terms, .. } => {
                Sampler::Superposition { table: PairTable::new(terms), m: effect_elements(frame) }
            }
            StateSpec::Dense { n_qubits, .. } => {
                let dist = enumerate_distribution(state, frame)?;
                let mut acc = 0.0;
                let cdf = dist
                    .iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect();
                Sampler::Enumerated { cdf, n: *n_qubits }
            }
        })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec<u8> {
        match self {
            Sampler::Product(locals) => {
                locals.iter().map(|w| draw_index(w, rng.random::<f64>()) as u8).collect()
            }
            Sampler::Superposition { table, m } => {
                let n = table.bits[0].len();
                let mut pairs = table.coeff.clone();
                let mut out = Vec::with_capacity(n);
                for pos in 0..n {
                    let w = table.next_weights(m, &pairs, pos);
                    let a = draw_index(&w, rng.random::<f64>()) as u8;
                    table.advance(m, &mut pairs, pos, a);
                    out.push(a);
                }
                out
            }
            Sampler::Enumerated { cdf, n } => {
                let total = *cdf.last().unwrap();
                let u = rng.random::<f64>() * total;
                let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                decode_outcome(idx, *n)
            }
        }
    }
}

/// `count` exact i.i.d. samples; sample `i` draws from a stream seeded by `(seed, i)`.
pub fn sample_outcomes(
    state: &StateSpec,
    frame: &PovmFrame,
    count: usize,
    seed: u64,
    source: &str,
) -> Result<MeasurementDataset> {
    let sampler = Sampler::new(state, frame)?;
    let outcomes: Vec<Vec<u8>> = (0..count as u64)
        .into_par_iter()
        .map(|i| sampler.sample(&mut rng_from(derive_seed(seed, i))))
        .collect();
    Ok(MeasurementDataset {
        n_qubits: state.n_qubits(),
        outcomes,
        source: source.to_string(),
        seed,
        povm_name: "pauli4".to_string(),
    })
}

/// Base-4 index of an outcome string, qubit 1 most significant.
pub fn encode_outcome(outcome: &[u8]) -> usize {
    outcome.iter().fold(0usize, |acc, &a| acc * 4 + a as usize)
}

pub fn decode_outcome(mut index: usize, n: usize) -> Vec<u8> {
    let mut out = vec![0u8; n];
    for slot in out.iter_mut().rev() {
        *slot = (index % 4) as u8;
        index /= 4;
    }
    out
}

pub fn enumerate_distribution(state: &StateSpec, frame: &PovmFrame) -> Result<Vec<f64>> {
    enumerate_distribution_capped(state, frame, DEFAULT_ENUMERATION_CAP)
}

/// All `4^n` outcome probabilities, indexed by [`encode_outcome`].
pub fn enumerate_distribution_capped(state: &StateSpec, frame: &PovmFrame, cap: usize) -> Result<Vec<f64>> {
    let n = state.n_qubits();
    if n > cap {
        return Err(QstError::CapExceeded { what: "enumeration", n, cap });
    }
    let mut dist = Vec::with_capacity(1 << (2 * n));
    match state {
        StateSpec::Product { locals } => {
            dist.push(1.0);
            for v in locals {
                let local: [f64; 4] = std::array::from_fn(|a| frame.effects[a].sandwich(*v, *v).re);
                dist = dist.iter().flat_map(|&p| local.map(|q| p * q)).collect();
            }
        }
        StateSpec::BasisSuperposition { terms, .. } => {
            let table = PairTable::new(terms);
            let m = effect_elements(frame);
            fn walk(
                table: &PairTable,
                m: &[[[Complex64; 2]; 2]; 4],
                pairs: &[Complex64],
                pos: usize,
                n: usize,
                dist: &mut Vec<f64>,
            ) {
                if pos == n {
                    dist.push(pairs.iter().map(|c| c.re).sum());
                    return;
                }
                let mut next = pairs.to_vec();
                for a in 0..4u8 {
                    next.copy_from_slice(pairs);
                    table.advance(m, &mut next, pos, a);
                    walk(table, m, &next, pos + 1, n, dist);
                }
            }
            walk(&table, &m, &table.coeff, 0, n, &mut dist);
        }
        StateSpec::Dense { amplitudes, .. } => {
            let m = effect_elements(frame);
            let mut stack = vec![amplitudes.clone(); n + 1];
            fn walk(
                m: &[[[Complex64; 2]; 2]; 4],
                stack: &mut [Vec<Complex64>],
                psi: &[Complex64],
                q: usize,
                n: usize,
                dist: &mut Vec<f64>,
            ) {
                if q == n {
                    dist.push(inner(psi, &stack[n]).re);
                    return;
                }
                for a in 0..4 {
                    let (head, tail) = stack.split_at_mut(q + 1);
                    apply_single(&m[a], q, n, &head[q], &mut tail[0]);
                    walk(m, stack, psi, q + 1, n, dist);
                }
            }
            walk(&m, &mut stack, amplitudes, 0, n, &mut dist);
        }
    }
    dist.into_iter().map(clip_probability).collect()
}

/// Number of distinct values after sorting and merging neighbours closer than `tol`.
pub fn distinct_value_count(distribution: &[f64], tol: f64) -> usize {
    if distribution.is_empty() {
        return 0;
    }
    let mut sorted = distribution.to_vec();
    sorted.sort_by(f64::total_cmp);
    1 + sorted.windows(2).filter(|w| w[1] - w[0] > tol).count()
}
