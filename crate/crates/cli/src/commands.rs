use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dsparse_core::ablation::{run_ablation, AblationMode, AblationReport};
use dsparse_core::eval::{evaluate, AggregateReport, EvalReport};
use dsparse_core::kg::{generate_toy_kg, write_dataset, KnowledgeGraph, PairIndex, Split};
use dsparse_core::model::config_fmt_real;
use dsparse_core::train::{load_checkpoint, repeated_runs, save_checkpoint, EpochRecord, TrainState};
use dsparse_core::Error;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.dspc";
pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const HISTORY_FILE: &str = "history.csv";

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::usage(format!("cannot create output directory '{}': {e}", dir.display())))
}

fn write_history(path: &Path, history: &[EpochRecord]) -> CliResult<()> {
    let mut out = String::from("epoch,loss,valid_mrr,valid_hits1\n");
    for r in history {
        let (mrr, h1) = r
            .valid
            .map(|m| (format!("{:?}", m.mrr), format!("{:?}", m.hits1)))
            .unwrap_or_default();
        let _ = writeln!(out, "{},{},{mrr},{h1}", r.epoch, config_fmt_real(r.loss));
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_report(dir: &Path, report: &AggregateReport) -> CliResult<()> {
    fs::write(dir.join(REPORT_TEXT), report.to_text())?;
    fs::write(dir.join(REPORT_JSON), report.to_json())?;
    Ok(())
}

/// Trains `runs` models; one run writes its checkpoint straight into
/// `out`, several runs get `run<i>/` subdirectories.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> CliResult<AggregateReport> {
    cfg.validate()?;
    let kg = cfg.load_kg()?;
    create_dir(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_text())?;
    let model = cfg.model_for(&kg);
    let rr = repeated_runs(&kg, &model, &cfg.train, cfg.runs, cfg.eval_split)?;
    for (i, outcome) in rr.outcomes.iter().enumerate() {
        let dir = if cfg.runs == 1 { out.to_path_buf() } else { out.join(format!("run{i}")) };
        create_dir(&dir)?;
        save_checkpoint(&outcome.state, &dir.join(CHECKPOINT_FILE))?;
        write_history(&dir.join(HISTORY_FILE), &outcome.history)?;
    }
    write_report(out, &rr.aggregate)?;
    Ok(rr.aggregate)
}

/// Loads a checkpoint and checks it against the graph's vocabulary.
pub fn load_for(checkpoint: &Path, kg: &KnowledgeGraph) -> CliResult<TrainState> {
    if !checkpoint.is_file() {
        return Err(CliError::usage(format!("checkpoint '{}' does not exist", checkpoint.display())));
    }
    let state = load_checkpoint(checkpoint)?;
    let m = state.model.config();
    if m.n_entities != kg.n_entities() || m.n_relations != kg.n_relations() {
        return Err(Error::Integrity(format!(
            "checkpoint vocabulary {} entities / {} relations does not match data {} / {}",
            m.n_entities,
            m.n_relations,
            kg.n_entities(),
            kg.n_relations()
        ))
        .into());
    }
    Ok(state)
}

pub fn cmd_eval(checkpoint: &Path, cfg: &RunConfig, split: Split, out: Option<&Path>) -> CliResult<EvalReport> {
    let kg = cfg.load_kg()?;
    let state = load_for(checkpoint, &kg)?;
    let report = evaluate(&state.model, &kg, split)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        let agg = AggregateReport::from_runs(&[(state.train.seed, report.clone())])?;
        write_report(dir, &agg)?;
    }
    Ok(report)
}

pub fn cmd_ablate(cfg: &RunConfig, mode: AblationMode, grid: &str, out: &Path) -> CliResult<AblationReport> {
    cfg.validate()?;
    let kg = cfg.load_kg()?;
    let model = cfg.model_for(&kg);
    // grid errors surface before anything is written or trained
    dsparse_core::ablation::plan(mode, grid, &model, &cfg.train)?;
    create_dir(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_text())?;
    let report = run_ablation(&kg, mode, grid, &model, &cfg.train, cfg.runs, cfg.eval_split)?;
    fs::write(out.join("ablation.txt"), report.to_text())?;
    fs::write(out.join("ablation.json"), report.to_json())?;
    Ok(report)
}

/// Writes `entity,relation,g_1..g_k` for every distinct train pair
/// (plus valid/test pairs with `all_splits`). Returns the row count.
pub fn cmd_export_gates(checkpoint: &Path, cfg: &RunConfig, out: &Path, all_splits: bool) -> CliResult<usize> {
    let kg = cfg.load_kg()?;
    let state = load_for(checkpoint, &kg)?;
    let model = &state.model;
    let Some(k) = model.gate_width() else {
        return Err(CliError::Runtime(anyhow::anyhow!("checkpoint has no gated expert layer")));
    };
    let mut pairs: BTreeSet<(usize, usize)> = PairIndex::new(kg.train_augmented()).pairs().iter().copied().collect();
    if all_splits {
        for split in [Split::Valid, Split::Test] {
            pairs.extend(kg.augmented(split).iter().map(|t| (t.subject, t.relation)));
        }
    }
    let pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
    let (subjects, relations): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    let gates = model.gates(&subjects, &relations)?.expect("gate width checked above");

    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(out)?;
    let mut header = vec!["entity".to_string(), "relation".to_string()];
    header.extend((1..=k).map(|i| format!("g_{i}")));
    w.write_record(&header)?;
    let vocab = kg.vocab();
    for ((s, r), g) in pairs.iter().zip(gates.chunks(k)) {
        let mut row = vec![vocab.entity_name(*s).to_string(), vocab.relation_name(*r).to_string()];
        row.extend(g.iter().map(|&v| config_fmt_real(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(pairs.len())
}

pub fn cmd_make_toy(n: usize, seed: u64, out: &Path) -> CliResult<PathBuf> {
    let kg = generate_toy_kg(n, seed)?;
    create_dir(out)?;
    write_dataset(out, &kg)?;
    Ok(out.to_path_buf())
}
