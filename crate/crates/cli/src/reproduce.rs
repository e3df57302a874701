//! CSV bundles behind the figures. Each figure writes into `<out>/<figure>/`
//! together with a manifest describing every file's columns.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use qst_core::evaluation::{classical_fidelity_exact, classical_fidelity_mc, FidelityReport};
use qst_core::model::{ModelConfig, ModelParams};
use qst_core::seed::derive_labeled;
use qst_core::states::{distinct_value_count, enumerate_distribution, sample_outcomes, DEFAULT_ENUMERATION_CAP};
use qst_core::training::{train_with, write_atomic, MemoryStore, TrainConfig, TrainOutcome};
use qst_core::{pauli4_povm, StateFamily, StateSpec};
use rayon::prelude::*;

use crate::settings::{parse_list, Settings};

#[derive(Clone, Copy, ValueEnum)]
pub enum Figure {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

#[derive(Args)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub figure: Figure,
    #[arg(long)]
    pub qubits: Option<usize>,
    /// Comma-separated training-set sizes (fig2, fig3 override, fig5 grid).
    #[arg(long)]
    pub samples: Option<String>,
    /// Comma-separated qubit counts for fig3.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Comma-separated state families for fig4 and fig5.
    #[arg(long)]
    pub state: Option<String>,
    #[arg(long)]
    pub state_seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Generative samples per Monte-Carlo fidelity estimate.
    #[arg(long)]
    pub fc_samples: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    /// Gap tolerance for grouping equal probabilities (fig4).
    #[arg(long)]
    pub tol: Option<f64>,
}

/// Training-set sizes the paper reports for each GHZ size at ≥ 99% fidelity.
const FIG3_SIZES: [(usize, usize); 6] = [(10, 900), (20, 1300), (30, 1800), (40, 2500), (50, 3000), (60, 3300)];

struct Bundle<'a> {
    dir: &'a Path,
    manifest: String,
}

impl<'a> Bundle<'a> {
    fn new(dir: &'a Path, title: &str) -> Result<Bundle<'a>> {
        std::fs::create_dir_all(dir)?;
        Ok(Bundle { dir, manifest: format!("# {title}\n") })
    }

    fn note(&mut self, line: &str) {
        self.manifest.push_str(line);
        self.manifest.push('\n');
    }

    fn write(&mut self, name: &str, header: &str, rows: &[String], about: &str) -> Result<()> {
        let mut text = String::from(header);
        text.push('\n');
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        write_atomic(&self.dir.join(name), text.as_bytes())?;
        writeln!(self.manifest, "{name}: {header}\n  {about}").unwrap();
        Ok(())
    }

    fn finish(self) -> Result<()> {
        write_atomic(&self.dir.join("manifest.txt"), self.manifest.as_bytes())?;
        println!("wrote {}", self.dir.display());
        Ok(())
    }
}

struct Leg {
    state: StateSpec,
    n_samples: usize,
    model: ModelConfig,
    train: TrainConfig,
    data_seed: u64,
}

impl Leg {
    fn run<F: FnMut(usize, &ModelParams)>(&self, label: &str, mut observe: F) -> Result<TrainOutcome> {
        let data = sample_outcomes(&self.state, &pauli4_povm(), self.n_samples, self.data_seed, label)?;
        Ok(train_with(&data, &self.model, &self.train, &mut MemoryStore::default(), |r| observe(r.epoch, r.params))?)
    }
}

/// Exact fidelity within the enumeration cap, otherwise a Monte-Carlo estimate.
fn fidelity(model: &ModelParams, target: &StateSpec, fc_samples: usize, seed: u64) -> Result<FidelityReport> {
    if target.n_qubits() <= DEFAULT_ENUMERATION_CAP {
        Ok(classical_fidelity_exact(model, target, &pauli4_povm())?)
    } else {
        Ok(classical_fidelity_mc(model, target, &pauli4_povm(), fc_samples, seed)?)
    }
}

fn train_config(s: &Settings, a: &ReproduceArgs, epochs: usize, seed: u64) -> Result<TrainConfig> {
    let config = TrainConfig {
        epochs: s.get(a.epochs, "epochs", epochs)?,
        window_n: s.get(a.window, "window", TrainConfig::default().window_n)?,
        seed,
        ..TrainConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn model_config(s: &Settings, a: &ReproduceArgs, n_qubits: usize, seed: u64) -> Result<ModelConfig> {
    Ok(ModelConfig { n_qubits, hidden_size: s.get(a.hidden, "hidden", 64)?, n_layers: 3, seed })
}

pub fn run(s: &Settings, a: &ReproduceArgs) -> Result<()> {
    match a.figure {
        Figure::Fig2 => fig2(s, a),
        Figure::Fig3 => fig3(s, a),
        Figure::Fig4 => fig4(s, a),
        Figure::Fig5 => fig5(s, a),
    }
}

fn families(s: &Settings, a: &ReproduceArgs, default: &str) -> Result<Vec<StateFamily>> {
    let names: Vec<String> = parse_list(&s.get(a.state.clone(), "state", default.to_string())?)?;
    let state_seed = s.get(a.state_seed, "state_seed", 0)?;
    names.iter().map(|n| Ok(StateFamily::parse(n, state_seed)?)).collect()
}

fn fig4(s: &Settings, a: &ReproduceArgs) -> Result<()> {
    let qubits = s.get(a.qubits, "qubits", 6)?;
    let tol = s.get(a.tol, "tol", 1e-10)?;
    let frame = pauli4_povm();
    let dir = s.out_path("fig4")?;
    let mut bundle = Bundle::new(&dir, "fig4: sorted outcome distributions and distinct-value counts")?;
    let mut dist_rows = Vec::new();
    let mut count_rows = Vec::new();
    for family in families(s, a, "ghz,w,product,hard")? {
        let mut dist = enumerate_distribution(&family.build(qubits)?, &frame)?;
        dist.sort_by(|x, y| y.total_cmp(x));
        let label = family.label();
        dist_rows.extend(dist.iter().enumerate().map(|(rank, p)| format!("{label},{},{p:e}", rank + 1)));
        let paper = match (family, qubits) {
            (StateFamily::Ghz, 6) => "17",
            (StateFamily::W, 6) => "41",
            (StateFamily::Product, 6) => "59",
            (StateFamily::Hard { .. }, 6) => "4096",
            _ => "",
        };
        let count = distinct_value_count(&dist, tol);
        println!("{label}: {count} distinct values (paper: {})", if paper.is_empty() { "n/a" } else { paper });
        count_rows.push(format!("{label},{qubits},{tol:e},{count},{paper}"));
    }
    bundle.write(
        "distributions.csv",
        "state,rank,probability",
        &dist_rows,
        "all 4^N outcome probabilities per state, sorted in decreasing order",
    )?;
    bundle.write(
        "counts.csv",
        "state,qubits,tol,distinct_values,paper_value",
        &count_rows,
        "equivalence classes after merging sorted neighbours closer than tol; paper_value is blank off the 6-qubit case",
    )?;
    bundle.finish()
}

fn fig2(s: &Settings, a: &ReproduceArgs) -> Result<()> {
    let qubits = s.get(a.qubits, "qubits", 6)?;
    let sizes: Vec<usize> = parse_list(&s.get(a.samples.clone(), "samples", "500".to_string())?)?;
    let fc_samples = s.get(a.fc_samples, "fc_samples", 5000)?;
    let target = StateFamily::Ghz.build(qubits)?;
    let legs: Vec<Leg> = sizes
        .iter()
        .map(|&n_samples| {
            Ok(Leg {
                state: target.clone(),
                n_samples,
                model: model_config(s, a, qubits, s.seed)?,
                train: train_config(s, a, 300, s.seed)?,
                data_seed: s.seed,
            })
        })
        .collect::<Result<_>>()?;
    let results: Vec<(Vec<String>, String)> = legs
        .par_iter()
        .map(|leg| {
            let mut fcs = Vec::new();
            let outcome = leg.run("ghz", |epoch, params| {
                let seed = derive_labeled(s.seed, "fig2-fc", epoch as u64);
                fcs.push(fidelity(params, &leg.state, fc_samples, seed));
            })?;
            let fcs: Vec<f64> = fcs.into_iter().map(|r| r.map(|r| r.classical_fidelity)).collect::<Result<_>>()?;
            let ledger = &outcome.ledger;
            let rows = ledger
                .losses
                .iter()
                .enumerate()
                .map(|(i, loss)| {
                    let d = if i == 0 { String::new() } else { ledger.fluctuations[i - 1].to_string() };
                    format!("{},{loss},{d},{}", i + 1, fcs[i])
                })
                .collect();
            let best = (0..fcs.len()).fold(0, |b, i| if fcs[i] > fcs[b] { i } else { b });
            let sel = ledger.selection;
            let summary = format!(
                "{},{},{},{},{},{},{}",
                leg.n_samples,
                sel.epoch,
                sel.window_start,
                fcs[sel.epoch - 1],
                fcs[fcs.len() - 1],
                best + 1,
                fcs[best]
            );
            Ok((rows, summary))
        })
        .collect::<Result<_>>()?;
    let dir = s.out_path("fig2")?;
    let mut bundle = Bundle::new(&dir, &format!("fig2: {qubits}-qubit GHZ training curves"))?;
    bundle.note(if qubits <= DEFAULT_ENUMERATION_CAP {
        "fc is the exact classical fidelity"
    } else {
        "fc is a Monte-Carlo estimate with fc_samples draws per epoch"
    });
    for (n_samples, (rows, _)) in sizes.iter().zip(&results) {
        bundle.write(
            &format!("ns{n_samples}.csv"),
            "epoch,loss,d,fc",
            rows,
            "per-epoch mean training loss, fluctuation d = loss_e - loss_{e-1}, classical fidelity",
        )?;
    }
    let summary: Vec<String> = results.into_iter().map(|(_, s)| s).collect();
    bundle.write(
        "summary.csv",
        "n_samples,selected_epoch,window_start,fc_selected,fc_final,best_epoch,fc_best",
        &summary,
        "fluctuation-rule selection against the final and the best epoch",
    )?;
    bundle.finish()
}

fn fig3(s: &Settings, a: &ReproduceArgs) -> Result<()> {
    let sizes: Vec<usize> = parse_list(&s.get(a.sizes.clone(), "sizes", "10".to_string())?)?;
    let overrides: Option<Vec<usize>> = s.get_opt(a.samples.clone(), "samples")?.map(|l| parse_list(&l)).transpose()?;
    if let Some(o) = &overrides {
        if o.len() != sizes.len() {
            bail!("--samples needs one entry per size");
        }
    }
    let groups = s.get(a.groups, "groups", 5)?;
    let fc_samples = s.get(a.fc_samples, "fc_samples", 50_000)?;
    let legs: Vec<Leg> = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let n_samples = match &overrides {
                Some(o) => o[i],
                None => FIG3_SIZES.iter().find(|(q, _)| *q == n).map(|&(_, ns)| ns).unwrap_or(1000),
            };
            Ok(Leg {
                state: StateFamily::Ghz.build(n)?,
                n_samples,
                model: model_config(s, a, n, s.seed)?,
                train: train_config(s, a, 500, s.seed)?,
                data_seed: s.seed,
            })
        })
        .collect::<Result<_>>()?;
    let results: Vec<(Vec<String>, String)> = legs
        .par_iter()
        .map(|leg| {
            let outcome = leg.run("ghz", |_, _| {})?;
            let n = leg.state.n_qubits();
            let sel = outcome.ledger.selection.epoch;
            let mut rows = Vec::new();
            let mut values = Vec::new();
            for g in 0..groups {
                let seed = derive_labeled(s.seed, "group", g as u64);
                let r = classical_fidelity_mc(&outcome.selected, &leg.state, &pauli4_povm(), fc_samples, seed)?;
                rows.push(format!("{n},{},{sel},{g},{seed},{},{}", leg.n_samples, r.classical_fidelity, r.stderr));
                values.push(r.classical_fidelity);
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let std = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            Ok((rows, format!("{n},{},{sel},{mean},{std},{min}", leg.n_samples)))
        })
        .collect::<Result<_>>()?;
    let dir = s.out_path("fig3")?;
    let mut bundle = Bundle::new(&dir, "fig3: GHZ classical fidelity by size, five Monte-Carlo groups per model")?;
    bundle.note("The caption lists sizes 10..60 while the text says 10 to 50 qubits; all six are accepted via --sizes.");
    bundle.note("Default training-set sizes per qubit count: 10:900 20:1300 30:1800 40:2500 50:3000 60:3300.");
    let (groups_rows, summary): (Vec<Vec<String>>, Vec<String>) = results.into_iter().unzip();
    bundle.write(
        "groups.csv",
        "qubits,n_samples,selected_epoch,group,seed,fc,stderr",
        &groups_rows.concat(),
        "one Monte-Carlo classical fidelity per group of fc_samples generative samples",
    )?;
    bundle.write(
        "summary.csv",
        "qubits,n_samples,selected_epoch,mean_fc,std_fc,min_fc",
        &summary,
        "mean, sample standard deviation and minimum over the groups",
    )?;
    bundle.finish()
}

fn fig5(s: &Settings, a: &ReproduceArgs) -> Result<()> {
    let qubits = s.get(a.qubits, "qubits", 6)?;
    let grid: Vec<usize> = parse_list(&s.get(a.samples.clone(), "samples", "100,300,1000,3000,10000".to_string())?)?;
    let fc_samples = s.get(a.fc_samples, "fc_samples", 50_000)?;
    let mut legs = Vec::new();
    for family in families(s, a, "ghz,w,product,hard")? {
        for &n_samples in &grid {
            let leg = Leg {
                state: family.build(qubits)?,
                n_samples,
                model: model_config(s, a, qubits, s.seed)?,
                train: train_config(s, a, 100, s.seed)?,
                data_seed: s.seed,
            };
            legs.push((family.label(), leg));
        }
    }
    let rows: Vec<String> = legs
        .par_iter()
        .map(|(label, leg)| {
            let outcome = leg.run(label, |_, _| {})?;
            let seed = derive_labeled(s.seed, "fig5-fc", leg.n_samples as u64);
            let sel = fidelity(&outcome.selected, &leg.state, fc_samples, seed)?;
            let fin = fidelity(&outcome.final_params, &leg.state, fc_samples, seed)?;
            Ok(format!(
                "{label},{},{},{},{}",
                leg.n_samples,
                outcome.ledger.selection.epoch,
                sel.classical_fidelity,
                fin.classical_fidelity
            ))
        })
        .collect::<Result<_>>()?;
    let dir = s.out_path("fig5")?;
    let mut bundle = Bundle::new(&dir, &format!("fig5: {qubits}-qubit classical fidelity against training-set size"))?;
    bundle.write(
        "fc_vs_ns.csv",
        "state,n_samples,selected_epoch,fc_selected,fc_final",
        &rows,
        "classical fidelity (exact within the enumeration cap) of the selected and final checkpoints",
    )?;
    bundle.finish()
}
