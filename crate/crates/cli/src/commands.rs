use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use qst_core::evaluation::{
    bhattacharyya, classical_fidelity_mc, model_distribution, most_negative_eigenvalue, quantum_fidelity_state,
    reconstruct_density_from_probs, FidelityReport, Method, DEFAULT_DENSITY_CAP, DEFAULT_MC_SAMPLES,
};
use qst_core::model::{read_checkpoint, ModelConfig, ModelParams};
use qst_core::seed::derive_labeled;
use qst_core::states::{enumerate_distribution, sample_outcomes, DEFAULT_ENUMERATION_CAP};
use qst_core::training::{train_with, write_atomic, DirStore, TrainConfig, TrainLedger};
use qst_core::{pauli4_povm, EpochLoss, MeasurementDataset, StateFamily, StateSpec};

use crate::settings::Settings;

#[derive(Args)]
pub struct GenDataArgs {
    /// ghz, w, product or hard.
    #[arg(long)]
    pub state: Option<String>,
    #[arg(long)]
    pub qubits: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Seed of the Haar-random state (hard family only).
    #[arg(long)]
    pub state_seed: Option<u64>,
    /// File name inside the output directory.
    #[arg(long)]
    pub file: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset file written by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Fluctuation window length n.
    #[arg(long)]
    pub window: Option<usize>,
    /// Epoch loss: `weighted` (per-sequence mean) or `batch-mean`.
    #[arg(long)]
    pub epoch_loss: Option<String>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub state: Option<String>,
    /// Target qubit count; defaults to the checkpoint's.
    #[arg(long)]
    pub qubits: Option<usize>,
    #[arg(long)]
    pub state_seed: Option<u64>,
    /// Generative samples per Monte-Carlo group.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Independent Monte-Carlo groups, each with its own derived seed.
    #[arg(long)]
    pub groups: Option<usize>,
    /// Skip the exact report even when the system is small enough.
    #[arg(long)]
    pub no_exact: bool,
    #[arg(long)]
    pub run_id: Option<String>,
    /// Results CSV inside the output directory; rows are appended.
    #[arg(long)]
    pub results: Option<String>,
}

pub fn target_state(s: &Settings, state: &Option<String>, qubits: usize, state_seed: Option<u64>) -> Result<(StateFamily, StateSpec)> {
    let name = s.get(state.clone(), "state", "ghz".to_string())?;
    let state_seed = s.get(state_seed, "state_seed", 0)?;
    let family = StateFamily::parse(&name, state_seed)?;
    let spec = family.build(qubits)?;
    Ok((family, spec))
}

pub fn gen_data(s: &Settings, a: &GenDataArgs) -> Result<()> {
    let qubits = s.get(a.qubits, "qubits", 6)?;
    let samples = s.get(a.samples, "samples", 1000)?;
    let (family, state) = target_state(s, &a.state, qubits, a.state_seed)?;
    let label = family.label();
    let data = sample_outcomes(&state, &pauli4_povm(), samples, s.seed, &label)?;
    let name = s.get_opt(a.file.clone(), "file")?.unwrap_or_else(|| format!("{label}-{qubits}q-{samples}.txt"));
    let path = s.out_path(&name)?;
    write_atomic(&path, data.to_text().as_bytes())?;
    println!("wrote {samples} samples of {label} ({qubits} qubits, seed {}) to {}", s.seed, path.display());
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<MeasurementDataset> {
    let file = fs::File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    MeasurementDataset::read_from(BufReader::new(file)).with_context(|| format!("reading dataset {}", path.display()))
}

pub fn read_model(path: &Path) -> Result<ModelParams> {
    let file = fs::File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    Ok(read_checkpoint(BufReader::new(file)).with_context(|| format!("reading checkpoint {}", path.display()))?.0)
}

pub fn train_configs(s: &Settings, a: &TrainArgs, n_qubits: usize) -> Result<(ModelConfig, TrainConfig)> {
    let defaults = TrainConfig::default();
    let model = ModelConfig {
        n_qubits,
        hidden_size: s.get(a.hidden, "hidden", 64)?,
        n_layers: s.get(a.layers, "layers", 3)?,
        seed: s.seed,
    };
    let train = TrainConfig {
        epochs: s.get(a.epochs, "epochs", defaults.epochs)?,
        batch_size: s.get(a.batch, "batch", defaults.batch_size)?,
        learning_rate: s.get(a.lr, "lr", defaults.learning_rate)?,
        window_n: s.get(a.window, "window", defaults.window_n)?,
        seed: s.seed,
        epoch_loss: match s.get(a.epoch_loss.clone(), "epoch_loss", "weighted".to_string())?.as_str() {
            "weighted" => EpochLoss::SampleWeighted,
            "batch-mean" => EpochLoss::BatchMean,
            other => bail!("unknown epoch loss `{other}`; use weighted or batch-mean"),
        },
    };
    model.validate()?;
    train.validate().with_context(|| format!("the fluctuation window of {} needs window + 1 epochs", train.window_n))?;
    Ok((model, train))
}

fn clear_checkpoints(dir: &Path) -> Result<()> {
    if let Ok(entries) = fs::read_dir(dir) {
        for entry in entries {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("epoch-") && name.ends_with(".ckpt") {
                fs::remove_file(&path)?;
            }
        }
    }
    Ok(())
}

pub fn train(s: &Settings, a: &TrainArgs) -> Result<()> {
    let Some(data_path) = s.get_opt(a.data.clone().map(|p| p.display().to_string()), "data")? else {
        bail!("--data is required");
    };
    // Validate hyperparameters before touching the dataset so bad flags fail fast.
    train_configs(s, a, 1)?;
    let data = read_dataset(Path::new(&data_path))?;
    let (model, config) = train_configs(s, a, data.n_qubits)?;
    println!(
        "qubits={} samples={} hidden={} layers={} lr={} batch={} epochs={} window={} seed={}",
        model.n_qubits,
        data.len(),
        model.hidden_size,
        model.n_layers,
        config.learning_rate,
        config.batch_size,
        config.epochs,
        config.window_n,
        s.seed
    );
    let ckpt_dir = s.out_path("checkpoints")?;
    clear_checkpoints(&ckpt_dir)?;
    let mut store = DirStore::new(&ckpt_dir)?;
    let report_every = (config.epochs / 10).max(1);
    let outcome = train_with(&data, &model, &config, &mut store, |r| {
        if r.epoch % report_every == 0 || r.epoch == config.epochs {
            eprintln!("epoch {:>5}  loss {:.6}", r.epoch, r.loss);
        }
    })?;
    write_ledger(s, &outcome.ledger)?;
    let sel = outcome.ledger.selection;
    println!(
        "selected_epoch={} window_start={} window_score={} final_epoch={}",
        sel.epoch,
        sel.window_start,
        sel.window_score,
        outcome.ledger.final_epoch()
    );
    for (epoch, path) in &outcome.ledger.checkpoints {
        let role = if *epoch == sel.epoch { "selected" } else { "final" };
        println!("{role}_checkpoint={path}");
    }
    Ok(())
}

fn write_ledger(s: &Settings, ledger: &TrainLedger) -> Result<()> {
    let path = s.out_path("ledger.csv")?;
    write_atomic(&path, ledger.to_csv().as_bytes())?;
    Ok(())
}

/// Appends rows to a results CSV, creating it with a header when absent.
pub fn append_results(path: &Path, rows: &[String]) -> Result<()> {
    let mut text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => format!("{}\n", FidelityReport::CSV_HEADER),
        Err(e) => return Err(e.into()),
    };
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Exact classical fidelity plus, within the density cap, the quantum fidelity
/// of the linear-inversion estimate and its smallest eigenvalue.
pub fn exact_report(model: &ModelParams, target: &StateSpec, run_id: &str) -> Result<(FidelityReport, Option<f64>)> {
    let frame = pauli4_povm();
    let p = enumerate_distribution(target, &frame)?;
    let q = model_distribution(model, DEFAULT_ENUMERATION_CAP)?;
    let mut report = FidelityReport {
        run_id: run_id.to_string(),
        method: Method::Exact,
        classical_fidelity: bhattacharyya(&p, &q),
        stderr: 0.0,
        n_samples: 0,
        seed: 0,
        n_qubits: target.n_qubits(),
        quantum_fidelity: None,
    };
    let mut min_eig = None;
    if target.n_qubits() <= DEFAULT_DENSITY_CAP {
        let rho = reconstruct_density_from_probs(&q, &frame, target.n_qubits())?;
        report.quantum_fidelity = Some(quantum_fidelity_state(target, &rho)?);
        min_eig = Some(most_negative_eigenvalue(&rho));
    }
    Ok((report, min_eig))
}

pub fn eval(s: &Settings, a: &EvalArgs) -> Result<()> {
    let Some(ckpt) = s.get_opt(a.checkpoint.clone().map(|p| p.display().to_string()), "checkpoint")? else {
        bail!("--checkpoint is required");
    };
    let ckpt = PathBuf::from(ckpt);
    let model = read_model(&ckpt)?;
    let qubits = s.get(a.qubits, "qubits", model.n_qubits)?;
    if qubits != model.n_qubits {
        bail!("checkpoint has {} qubits but the target has {qubits}", model.n_qubits);
    }
    let (family, target) = target_state(s, &a.state, qubits, a.state_seed)?;
    let samples = s.get(a.samples, "samples", DEFAULT_MC_SAMPLES)?;
    let groups = s.get(a.groups, "groups", 1)?;
    let default_id = format!(
        "{}-{}",
        family.label(),
        ckpt.file_stem().and_then(|n| n.to_str()).unwrap_or("model")
    );
    let run_id = s.get(a.run_id.clone(), "run_id", default_id)?;
    let frame = pauli4_povm();

    let mut reports = Vec::new();
    for g in 0..groups {
        let seed = derive_labeled(s.seed, "group", g as u64);
        let mut r = classical_fidelity_mc(&model, &target, &frame, samples, seed)?;
        r.run_id = if groups > 1 { format!("{run_id}-g{g}") } else { run_id.clone() };
        reports.push(r);
    }
    if !a.no_exact && qubits <= DEFAULT_ENUMERATION_CAP {
        let (r, min_eig) = exact_report(&model, &target, &format!("{run_id}-exact"))?;
        reports.push(r);
        if let Some(e) = min_eig {
            println!("min_eigenvalue={e}");
        }
    }
    for r in &reports {
        println!("{}", r.to_key_values());
    }
    let results = s.get(a.results.clone(), "results", "results.csv".to_string())?;
    let rows: Vec<String> = reports.iter().map(FidelityReport::csv_row).collect();
    append_results(&s.out_path(results)?, &rows)?;
    Ok(())
}
