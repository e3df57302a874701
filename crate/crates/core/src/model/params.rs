use ndarray::Array2;
use rand::Rng;
use rand_distr::Uniform;

use crate::error::{QstError, Result};
use crate::seed::{derive_labeled, rng_from};

/// Four measurement symbols plus the start token.
pub const ALPHABET: usize = 4;
pub const START_TOKEN: usize = ALPHABET;
pub const VOCAB: usize = ALPHABET + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_qubits: usize,
    pub hidden_size: usize,
    pub n_layers: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(n_qubits: usize) -> ModelConfig {
        ModelConfig { n_qubits, hidden_size: 64, n_layers: 3, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 || self.hidden_size == 0 || self.n_layers == 0 {
            return Err(QstError::InvalidConfig(format!(
                "qubits, hidden size and layers must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn init_bound(&self) -> f64 {
        1.0 / (self.hidden_size as f64).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Predicts position `t` from positions before it.
    Forward,
    /// Predicts position `t` from positions after it.
    Backward,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Forward, Direction::Backward];

    pub fn tag(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Backward => "bwd",
        }
    }
}

/// One GRU layer. Inputs are row vectors: `x · W`, `h · U`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer {
    pub w_z: Array2<f64>,
    pub w_r: Array2<f64>,
    pub w_h: Array2<f64>,
    pub u_z: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_h: Array2<f64>,
    /// Biases are `1 × H` rows.
    pub b_z: Array2<f64>,
    pub b_r: Array2<f64>,
    pub b_h: Array2<f64>,
}

impl GruLayer {
    pub const NAMES: [&'static str; 9] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];

    pub fn zeros(input: usize, hidden: usize) -> GruLayer {
        let w = || Array2::zeros((input, hidden));
        let u = || Array2::zeros((hidden, hidden));
        let b = || Array2::zeros((1, hidden));
        GruLayer { w_z: w(), w_r: w(), w_h: w(), u_z: u(), u_r: u(), u_h: u(), b_z: b(), b_r: b(), b_h: b() }
    }

    pub fn hidden_size(&self) -> usize {
        self.u_z.nrows()
    }

    pub fn arrays(&self) -> [&Array2<f64>; 9] {
        [&self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r, &self.b_h]
    }

    pub fn arrays_mut(&mut self) -> [&mut Array2<f64>; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }
}

/// Embedding, stacked GRU layers and output projection for one direction.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionParams {
    /// `VOCAB × H`; row `START_TOKEN` seeds the recurrence.
    pub embedding: Array2<f64>,
    pub layers: Vec<GruLayer>,
    /// `H × ALPHABET`.
    pub out_w: Array2<f64>,
    /// `1 × ALPHABET`.
    pub out_b: Array2<f64>,
}

impl DirectionParams {
    pub fn zeros(hidden: usize, n_layers: usize) -> DirectionParams {
        DirectionParams {
            embedding: Array2::zeros((VOCAB, hidden)),
            layers: (0..n_layers).map(|_| GruLayer::zeros(hidden, hidden)).collect(),
            out_w: Array2::zeros((hidden, ALPHABET)),
            out_b: Array2::zeros((1, ALPHABET)),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.embedding.ncols()
    }

    fn named(&self, prefix: &str) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![(format!("{prefix}.embedding"), &self.embedding)];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, arr) in GruLayer::NAMES.iter().zip(layer.arrays()) {
                out.push((format!("{prefix}.layer{l}.{name}"), arr));
            }
        }
        out.push((format!("{prefix}.out_w"), &self.out_w));
        out.push((format!("{prefix}.out_b"), &self.out_b));
        out
    }

    fn arrays_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.embedding];
        for layer in &mut self.layers {
            out.extend(layer.arrays_mut());
        }
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }
}

/// Parameters of both directions. Gradients and optimizer moments reuse
/// this type, so every parameter block has a stable name and order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub n_qubits: usize,
    pub forward: DirectionParams,
    pub backward: DirectionParams,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> ModelParams {
        ModelParams {
            n_qubits: config.n_qubits,
            forward: DirectionParams::zeros(config.hidden_size, config.n_layers),
            backward: DirectionParams::zeros(config.hidden_size, config.n_layers),
        }
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams::zeros(&self.config_echo())
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size()
    }

    pub fn n_layers(&self) -> usize {
        self.forward.layers.len()
    }

    /// Shape-level configuration; the seed is not recoverable and reads as 0.
    pub fn config_echo(&self) -> ModelConfig {
        ModelConfig { n_qubits: self.n_qubits, hidden_size: self.hidden_size(), n_layers: self.n_layers(), seed: 0 }
    }

    pub fn direction(&self, d: Direction) -> &DirectionParams {
        match d {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    pub fn direction_mut(&mut self, d: Direction) -> &mut DirectionParams {
        match d {
            Direction::Forward => &mut self.forward,
            Direction::Backward => &mut self.backward,
        }
    }

    /// All blocks, forward direction first, in checkpoint order.
    pub fn named_blocks(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = self.forward.named("fwd");
        out.extend(self.backward.named("bwd"));
        out
    }

    pub fn block_names(&self) -> Vec<String> {
        self.named_blocks().into_iter().map(|(n, _)| n).collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = self.forward.arrays_mut();
        out.extend(self.backward.arrays_mut());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_blocks().iter().map(|(_, a)| a.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named_blocks().iter().all(|(_, a)| a.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`, blockwise.
    pub fn scaled_add(&mut self, scale: f64, other: &ModelParams) {
        let others: Vec<&Array2<f64>> = other.named_blocks().into_iter().map(|(_, a)| a).collect();
        for (mine, theirs) in self.blocks_mut().into_iter().zip(others) {
            mine.scaled_add(scale, theirs);
        }
    }
}

/// Weights uniform in `(−1/√H, 1/√H)`, biases zero.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut params = ModelParams::zeros(config);
    let bound = config.init_bound();
    let dist = Uniform::new(-bound, bound).expect("bound is positive and finite");
    let names = params.block_names();
    let mut rng = rng_from(derive_labeled(config.seed, "init", 0));
    for (name, block) in names.iter().zip(params.blocks_mut()) {
        let is_bias = name.ends_with(".b_z") || name.ends_with(".b_r") || name.ends_with(".b_h") || name.ends_with(".out_b");
        if !is_bias {
            block.iter_mut().for_each(|x| *x = rng.sample(dist));
        }
    }
    Ok(params)
}
