//! Minibatch training with a per-epoch loss ledger and fluctuation-based
//! checkpoint selection.
//!
//! The fluctuation series is `d_i = loss_i − loss_{i−1}`. A window of `n`
//! consecutive differences is scored by `Σ |d_i|`; the quietest window wins
//! (earliest on ties) and, among the `n + 1` epochs whose losses enter it,
//! the epoch with the smallest loss is selected (earliest on ties).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::dataset::MeasurementDataset;
use crate::error::{QstError, Result};
use crate::model::{
    adam_step, init_model, loss_and_gradients, read_checkpoint, write_checkpoint, AdamConfig, AdamState, ModelConfig,
    ModelParams,
};
use crate::seed::{derive_labeled, rng_from};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub window_n: usize,
    pub seed: u64,
    pub epoch_loss: EpochLoss,
}

/// How batch losses combine into the per-epoch loss the selection rule reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpochLoss {
    /// Unweighted mean of batch means. A short final batch counts as much as a full one.
    BatchMean,
    /// Batch means weighted by batch size: the mean per-sequence loss over the epoch.
    SampleWeighted,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 64,
            learning_rate: 1e-3,
            window_n: 50,
            seed: 0,
            epoch_loss: EpochLoss::SampleWeighted,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // A window of n differences spans n + 1 epochs, so this also enforces epochs ≥ 2.
        if self.window_n == 0 || self.window_n + 1 > self.epochs {
            return Err(QstError::TooFewEpochs { needed: self.window_n.max(1) + 1, have: self.epochs });
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(QstError::InvalidConfig(format!("batch size and learning rate must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Outcome of the window rule. Epochs are 1-based.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub epoch: usize,
    /// Index `j` of the window's first difference `d_j = loss_j − loss_{j−1}`;
    /// the window covers epochs `j − 1 ..= j + n − 1`.
    pub window_start: usize,
    pub window_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLedger {
    pub losses: Vec<f64>,
    pub fluctuations: Vec<f64>,
    pub selection: Selection,
    /// Checkpoints still held after pruning, keyed by epoch.
    pub checkpoints: BTreeMap<usize, String>,
}

impl TrainLedger {
    pub fn selected_epoch(&self) -> usize {
        self.selection.epoch
    }

    pub fn final_epoch(&self) -> usize {
        self.losses.len()
    }

    pub const CSV_HEADER: &'static str = "epoch,loss,d";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (i, loss) in self.losses.iter().enumerate() {
            let d = if i == 0 { String::new() } else { self.fluctuations[i - 1].to_string() };
            writeln!(out, "{},{},{}", i + 1, loss, d).unwrap();
        }
        let s = &self.selection;
        writeln!(out, "# selected_epoch={} window_start={} window_score={}", s.epoch, s.window_start, s.window_score)
            .unwrap();
        out
    }
}

pub fn fluctuation_series(losses: &[f64]) -> Result<Vec<f64>> {
    if losses.len() < 2 {
        return Err(QstError::TooFewEpochs { needed: 2, have: losses.len() });
    }
    Ok(losses.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Zero-based start of the quietest complete window and its score.
fn best_window(d: &[f64], n: usize) -> (usize, f64) {
    let mut score: f64 = d[..n].iter().map(|x| x.abs()).sum();
    let mut best = (0, score);
    for k in 1..=d.len() - n {
        // Recompute instead of sliding to keep sums exact and order-independent.
        score = d[k..k + n].iter().map(|x| x.abs()).sum();
        if score < best.1 {
            best = (k, score);
        }
    }
    best
}

pub fn select_checkpoint(losses: &[f64], window_n: usize) -> Result<Selection> {
    if window_n == 0 || losses.len() < window_n + 1 {
        return Err(QstError::TooFewEpochs { needed: window_n.max(1) + 1, have: losses.len() });
    }
    let d = fluctuation_series(losses)?;
    let (k, score) = best_window(&d, window_n);
    // Window k covers zero-based loss indices k ..= k + n.
    let mut epoch = k;
    for i in k..=k + window_n {
        if losses[i] < losses[epoch] {
            epoch = i;
        }
    }
    Ok(Selection { epoch: epoch + 1, window_start: k + 2, window_score: score })
}

/// Epochs (1-based) that the selection rule may still pick once more epochs arrive.
fn still_selectable(losses: &[f64], window_n: usize) -> BTreeSet<usize> {
    let e = losses.len();
    if e < window_n + 1 {
        return (1..=e).collect();
    }
    let d = fluctuation_series(losses).expect("at least two losses");
    let (k, _) = best_window(&d, window_n);
    let mut keep: BTreeSet<usize> = (k + 1..=k + window_n + 1).collect();
    keep.extend(e.saturating_sub(window_n).max(1)..=e);
    keep
}

/// Where per-epoch parameters go while training runs.
pub trait CheckpointStore {
    /// Stores parameters for `epoch`, returning a reference string.
    fn save(&mut self, epoch: usize, params: &ModelParams) -> Result<String>;
    fn load(&self, epoch: usize) -> Result<ModelParams>;
    fn remove(&mut self, epoch: usize) -> Result<()>;
}

#[derive(Default)]
pub struct MemoryStore {
    held: BTreeMap<usize, ModelParams>,
}

impl CheckpointStore for MemoryStore {
    fn save(&mut self, epoch: usize, params: &ModelParams) -> Result<String> {
        self.held.insert(epoch, params.clone());
        Ok(format!("memory:{epoch}"))
    }

    fn load(&self, epoch: usize) -> Result<ModelParams> {
        self.held.get(&epoch).cloned().ok_or(QstError::MissingCheckpoint(epoch))
    }

    fn remove(&mut self, epoch: usize) -> Result<()> {
        self.held.remove(&epoch);
        Ok(())
    }
}

/// Text checkpoints `epoch-00012.ckpt` in a directory, written atomically.
pub struct DirStore {
    dir: PathBuf,
}

impl DirStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<DirStore> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(DirStore { dir })
    }

    pub fn path_for(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch-{epoch:05}.ckpt"))
    }
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl CheckpointStore for DirStore {
    fn save(&mut self, epoch: usize, params: &ModelParams) -> Result<String> {
        let path = self.path_for(epoch);
        let mut buf = Vec::new();
        write_checkpoint(params, epoch, &mut buf)?;
        write_atomic(&path, &buf)?;
        Ok(path.display().to_string())
    }

    fn load(&self, epoch: usize) -> Result<ModelParams> {
        let file = fs::File::open(self.path_for(epoch)).map_err(|_| QstError::MissingCheckpoint(epoch))?;
        Ok(read_checkpoint(BufReader::new(file))?.0)
    }

    fn remove(&mut self, epoch: usize) -> Result<()> {
        match fs::remove_file(self.path_for(epoch)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }
}

/// What an observer sees at the end of each epoch.
pub struct EpochReport<'a> {
    pub epoch: usize,
    pub loss: f64,
    pub params: &'a ModelParams,
}

pub struct TrainOutcome {
    pub ledger: TrainLedger,
    pub selected: ModelParams,
    pub final_params: ModelParams,
}

/// Trains with in-memory checkpoints and no observer.
pub fn train(dataset: &MeasurementDataset, model: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, model, config, &mut MemoryStore::default(), |_| {})
}

pub fn train_with<S, F>(
    dataset: &MeasurementDataset,
    model: &ModelConfig,
    config: &TrainConfig,
    store: &mut S,
    mut observer: F,
) -> Result<TrainOutcome>
where
    S: CheckpointStore,
    F: FnMut(&EpochReport<'_>),
{
    if dataset.is_empty() {
        return Err(QstError::EmptyDataset);
    }
    if dataset.n_qubits != model.n_qubits {
        return Err(QstError::QubitMismatch { left: dataset.n_qubits, right: model.n_qubits });
    }
    config.validate()?;

    let mut params = init_model(model)?;
    let adam = AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() };
    let mut opt = AdamState::new(&params);
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    let mut refs: BTreeMap<usize, String> = BTreeMap::new();

    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_from(derive_labeled(config.seed, "shuffle", epoch as u64)));
        let mut batch_losses = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Vec<u8>> = chunk.iter().map(|&i| dataset.outcomes[i].clone()).collect();
            let (loss, grads) = loss_and_gradients(&params, &batch)?;
            step += 1;
            adam_step(&adam, &mut opt, &mut params, &grads, step)?;
            batch_losses.push((loss, chunk.len()));
        }
        let epoch_loss = match config.epoch_loss {
            EpochLoss::BatchMean => batch_losses.iter().map(|b| b.0).sum::<f64>() / batch_losses.len() as f64,
            EpochLoss::SampleWeighted => {
                batch_losses.iter().map(|&(l, n)| l * n as f64).sum::<f64>() / dataset.len() as f64
            }
        };
        losses.push(epoch_loss);
        refs.insert(epoch, store.save(epoch, &params)?);
        observer(&EpochReport { epoch, loss: epoch_loss, params: &params });

        let keep = still_selectable(&losses, config.window_n);
        let stale: Vec<usize> = refs.keys().filter(|e| !keep.contains(e)).copied().collect();
        for e in stale {
            store.remove(e)?;
            refs.remove(&e);
        }
    }

    let selection = select_checkpoint(&losses, config.window_n)?;
    let final_epoch = losses.len();
    let selected = store.load(selection.epoch)?;
    let stale: Vec<usize> =
        refs.keys().filter(|&&e| e != selection.epoch && e != final_epoch).copied().collect();
    for e in stale {
        store.remove(e)?;
        refs.remove(&e);
    }
    let fluctuations = fluctuation_series(&losses)?;
    Ok(TrainOutcome {
        ledger: TrainLedger { losses, fluctuations, selection, checkpoints: refs },
        selected,
        final_params: params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn fluctuations() {
        assert_eq!(fluctuation_series(&[0.5; 4]).unwrap(), vec![0.0; 3]);
        let d = fluctuation_series(&[1.0, 0.6, 0.4]).unwrap();
        assert!(close(d[0], -0.4) && close(d[1], -0.2));
        assert!(matches!(fluctuation_series(&[1.0]), Err(QstError::TooFewEpochs { .. })));
    }

    #[test]
    fn worked_selection_example() {
        let losses = [1.00, 0.60, 0.40, 0.39, 0.41, 0.38];
        let s = select_checkpoint(&losses, 3).unwrap();
        assert_eq!(s.epoch, 6);
        assert!((s.window_score - 0.06).abs() < 1e-12);
        // Window {d_4, d_5, d_6} covers epochs 3..=6.
        assert_eq!(s.window_start, 4);
    }

    #[test]
    fn equal_steps_pick_earliest_window() {
        let losses: Vec<f64> = (0..8).map(|i| 2.0 - 0.25 * i as f64).collect();
        let s = select_checkpoint(&losses, 3).unwrap();
        assert_eq!(s.window_start, 2);
        assert_eq!(s.epoch, 4);
    }

    #[test]
    fn single_window_returns_global_minimum() {
        let losses = [0.9, 0.3, 0.5, 0.2, 0.7];
        assert_eq!(select_checkpoint(&losses, 4).unwrap().epoch, 4);
        assert!(matches!(select_checkpoint(&losses, 5), Err(QstError::TooFewEpochs { .. })));
    }

    #[test]
    fn config_preconditions() {
        assert!(TrainConfig { epochs: 1, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 50, window_n: 50, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 51, window_n: 50, ..Default::default() }.validate().is_ok());
    }

    proptest! {
        #[test]
        fn selection_stays_inside_winning_window(losses in proptest::collection::vec(0.0f64..3.0, 2..40), n in 1usize..10) {
            prop_assume!(losses.len() > n);
            let s = select_checkpoint(&losses, n).unwrap();
            prop_assert!(s.epoch + 1 >= s.window_start && s.epoch <= s.window_start + n - 1);
        }

        #[test]
        fn pruning_never_drops_the_eventual_winner(losses in proptest::collection::vec(0.0f64..3.0, 2..40), n in 1usize..6) {
            prop_assume!(losses.len() > n);
            let mut held: BTreeSet<usize> = BTreeSet::new();
            for e in 1..=losses.len() {
                held.insert(e);
                let keep = still_selectable(&losses[..e], n);
                held.retain(|x| keep.contains(x));
            }
            let s = select_checkpoint(&losses, n).unwrap();
            prop_assert!(held.contains(&s.epoch));
            prop_assert!(held.contains(&losses.len()));
        }

        #[test]
        fn appending_worse_windows_keeps_selection(
            losses in proptest::collection::vec(0.0f64..3.0, 4..30),
            n in 1usize..4,
        ) {
            prop_assume!(losses.len() > n + 1);
            let before = select_checkpoint(&losses, n).unwrap();
            // A large oscillation makes every new window strictly noisier.
            let mut extended = losses.clone();
            let last = *losses.last().unwrap();
            let bump = before.window_score + 10.0;
            for i in 0..5 {
                extended.push(if i % 2 == 0 { last + bump } else { last });
            }
            let after = select_checkpoint(&extended, n).unwrap();
            prop_assert_eq!(before, after);
        }
    }
}
