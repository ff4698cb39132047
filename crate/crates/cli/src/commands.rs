//! Subcommand implementations. Each command reads the resolved config, runs
//! the corresponding library pipeline, writes its output files into the run's
//! output directory, and prints a short human-readable summary. Outputs carry
//! no timestamps, so re-running a command with the same config and seed
//! overwrites them byte-identically.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use histopad_core::augment::{balance_corpus_with_manifest, pad_to};
use histopad_core::corpus::{compute_stats, load_corpus, ImageSample};
use histopad_core::ensemble::predict;
use histopad_core::eval::ablation::{
    ablation_report, render_ablation_csv, AblationContext, PipelineVariant,
};
use histopad_core::eval::{confusion, f1_report, write_prediction_dump, write_submission};
use histopad_core::train::{
    load_checkpoint, run_pipeline, save_checkpoint, Checkpoint, EpochRecord, TrainOptions,
};
use histopad_core::{ClassLabel, Error as CoreError};

use crate::config::ResolvedConfig;

/// Failure carrying the process exit code: 1 for validation problems (bad
/// config, bad inputs), 2 for runtime failures (io, training, decoding).
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn validation(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }

    pub fn runtime(error: anyhow::Error) -> Self {
        Self { code: 2, error }
    }
}

impl From<CoreError> for Failure {
    fn from(error: CoreError) -> Self {
        let code = match &error {
            CoreError::Io { .. }
            | CoreError::ImageDecode { .. }
            | CoreError::WeightsUnavailable { .. }
            | CoreError::NonFinite { .. }
            | CoreError::NonFiniteLoss { .. }
            | CoreError::CheckpointVersion { .. }
            | CoreError::CheckpointFingerprintMissing { .. }
            | CoreError::CheckpointCorrupt { .. } => 2,
            _ => 1,
        };
        Self {
            code,
            error: anyhow::Error::new(error),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self::validation(error)
    }
}

pub type CmdResult = Result<(), Failure>;

fn ensure_out_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(Failure::runtime)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::runtime)
}

fn load_labeled_corpus(config: &ResolvedConfig) -> Result<Vec<ImageSample>, Failure> {
    let labels = config.dataset_root.join("labels.csv");
    if !labels.is_file() {
        return Err(Failure::validation(anyhow!(
            "labels table not found at {}",
            labels.display()
        )));
    }
    Ok(load_corpus(&config.dataset_root, Some(&labels))?)
}

/// Corpus statistics and the balanced-corpus manifest.
pub fn cmd_prepare(config: &ResolvedConfig) -> CmdResult {
    let corpus = load_labeled_corpus(config)?;
    let stats = compute_stats(&corpus)?;
    let (balanced, manifest) =
        balance_corpus_with_manifest(&corpus, &config.jitter, config.seed)?;

    ensure_out_dir(&config.output_dir)?;
    let stats_json = serde_json::to_string_pretty(&serde_json::json!({
        "max_height": stats.max_height,
        "max_width": stats.max_width,
        "total": stats.total,
        "labeled": stats.labeled(),
        "class_counts": stats.class_counts,
        "balanced_total": balanced.len(),
    }))
    .expect("stats serialize");
    write_text(&config.output_dir.join("stats.json"), &(stats_json + "\n"))?;

    let mut table = String::from("id,source_id,class,transform\n");
    for row in &manifest {
        let _ = writeln!(
            table,
            "{},{},{},{}",
            row.id, row.source_id, row.class, row.transform
        );
    }
    write_text(&config.output_dir.join("manifest.csv"), &table)?;

    print!("{}", stats.render());
    println!("balanced corpus: {} samples", balanced.len());
    println!(
        "manifest: {} rows ({} synthetic) -> {}",
        manifest.len(),
        manifest.iter().filter(|r| r.transform != "original").count(),
        config.output_dir.join("manifest.csv").display()
    );
    Ok(())
}

fn write_train_log(path: &Path, log: &[EpochRecord]) -> Result<(), Failure> {
    let mut table = String::from("member,epoch,train_loss,val_loss\n");
    for record in log {
        let val = record
            .val_loss
            .map(|v| v.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            table,
            "{},{},{},{}",
            record.member, record.epoch, record.train_loss, val
        );
    }
    write_text(path, &table)
}

/// Fine-tune every ensemble member and save one checkpoint per member.
pub fn cmd_train(config: &ResolvedConfig) -> CmdResult {
    let corpus = load_labeled_corpus(config)?;
    let options = TrainOptions {
        padding_overrides: config.padding_overrides,
        ..TrainOptions::default()
    };
    let (outcomes, prepared) = run_pipeline(
        &config.ensemble,
        &corpus,
        &config.jitter,
        &config.train,
        &options,
    )?;

    ensure_out_dir(&config.output_dir)?;
    let mut log = Vec::new();
    for outcome in &outcomes {
        let path = config
            .output_dir
            .join(format!("member_{}.hpck", outcome.checkpoint.member_index));
        save_checkpoint(&outcome.checkpoint, &path)?;
        println!(
            "member {} ({}): best epoch {} loss {:.6} -> {}",
            outcome.checkpoint.member_index,
            outcome.checkpoint.spec.architecture,
            outcome.checkpoint.best_epoch,
            outcome.checkpoint.best_loss,
            path.display()
        );
        log.extend(outcome.log.iter().cloned());
    }
    write_train_log(&config.output_dir.join("train_log.csv"), &log)?;
    println!(
        "trained {} members on {} samples (validation {}), padded to {}x{}",
        outcomes.len(),
        prepared.train.len(),
        prepared.validation.len(),
        prepared.padding.target_height,
        prepared.padding.target_width
    );
    Ok(())
}

/// Load checkpoints, pad the input corpus to their target, and write the
/// prediction dump plus the submission file.
pub fn cmd_predict(
    config: &ResolvedConfig,
    checkpoint_paths: &[PathBuf],
    input: &Path,
) -> CmdResult {
    if checkpoint_paths.is_empty() {
        return Err(Failure::validation(anyhow!("no checkpoints given")));
    }
    let checkpoints = checkpoint_paths
        .iter()
        .map(|p| load_checkpoint(p))
        .collect::<Result<Vec<Checkpoint>, _>>()?;
    let corpus = load_corpus(input, None)?;
    let padding = checkpoints[0].padding;
    let padded = corpus
        .iter()
        .map(|s| pad_to(s, &padding))
        .collect::<Result<Vec<_>, _>>()?;

    let predictions = predict(&checkpoints, &padded)?;
    ensure_out_dir(&config.output_dir)?;
    let predictions_path = config.output_dir.join("predictions.csv");
    let submission_path = config.output_dir.join("submission.csv");
    write_prediction_dump(&predictions, &predictions_path)?;
    write_submission(&predictions, &submission_path)?;
    println!(
        "predicted {} samples with {} members -> {}, {}",
        predictions.len(),
        checkpoints.len(),
        predictions_path.display(),
        submission_path.display()
    );
    Ok(())
}

fn read_label_table(path: &Path) -> Result<BTreeMap<String, ClassLabel>, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::runtime)?;
    let mut out = BTreeMap::new();
    for (line_no, line) in text.lines().enumerate() {
        if line_no == 0 || line.trim().is_empty() {
            continue; // header
        }
        let mut fields = line.split(',');
        let id = fields
            .next()
            .ok_or_else(|| Failure::validation(anyhow!("{}: empty row", path.display())))?
            .trim()
            .to_string();
        let label_text = fields
            .next_back()
            .ok_or_else(|| {
                Failure::validation(anyhow!(
                    "{}: row for {id} has no label column",
                    path.display()
                ))
            })?
            .trim();
        let label = ClassLabel::parse(label_text).map_err(|_| {
            Failure::validation(anyhow!(
                "{}: invalid label {label_text:?} for {id}",
                path.display()
            ))
        })?;
        if out.insert(id.clone(), label).is_some() {
            return Err(Failure::validation(anyhow!(
                "{}: duplicate id {id}",
                path.display()
            )));
        }
    }
    if out.is_empty() {
        return Err(Failure::validation(anyhow!(
            "{}: no label rows",
            path.display()
        )));
    }
    Ok(out)
}

/// Score a predictions table against a truth table by id.
pub fn cmd_evaluate(truth_path: &Path, predictions_path: &Path, out: &Path) -> CmdResult {
    let truth = read_label_table(truth_path)?;
    let predictions = read_label_table(predictions_path)?;

    let missing: Vec<&String> = truth
        .keys()
        .filter(|id| !predictions.contains_key(*id))
        .collect();
    let extra: Vec<&String> = predictions
        .keys()
        .filter(|id| !truth.contains_key(*id))
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Failure::validation(anyhow!(
            "id sets differ: {} truth ids without predictions {:?}, {} predicted ids without truth {:?}",
            missing.len(),
            missing.iter().take(10).collect::<Vec<_>>(),
            extra.len(),
            extra.iter().take(10).collect::<Vec<_>>()
        )));
    }

    let ids: Vec<&String> = truth.keys().collect();
    let truth_labels: Vec<ClassLabel> = ids.iter().map(|id| truth[*id]).collect();
    let pred_labels: Vec<ClassLabel> = ids.iter().map(|id| predictions[*id]).collect();
    let cm = confusion(&truth_labels, &pred_labels)?;
    let report = f1_report(&cm);

    ensure_out_dir(out)?;
    let report_path = out.join("report.json");
    let json = serde_json::to_string_pretty(&report.to_json(&cm)).expect("report serialize");
    write_text(&report_path, &(json + "\n"))?;

    print!("{}", cm.render());
    print!("{}", report.render(&cm));
    println!("report -> {}", report_path.display());
    Ok(())
}

/// Compare {pad, resize, crop} x {ensemble, best-single} across seeds.
pub fn cmd_ablate(config: &ResolvedConfig, seeds: &[u64]) -> CmdResult {
    let corpus = load_labeled_corpus(config)?;
    let context = AblationContext {
        ensemble: config.ensemble.clone(),
        jitter: config.jitter,
        train: config.train.clone(),
    };
    let variants = PipelineVariant::default_grid();
    let rows = ablation_report(&variants, &corpus, seeds, &context)?;

    ensure_out_dir(&config.output_dir)?;
    let table = render_ablation_csv(&rows);
    write_text(&config.output_dir.join("ablation.csv"), &table)?;

    println!("{:<22} {:>10} {:>10}", "variant", "mean_f1", "std_f1");
    for row in &rows {
        println!(
            "{:<22} {:>10.4} {:>10.4}",
            row.variant, row.mean_macro_f1, row.std_macro_f1
        );
    }
    println!(
        "ablation over {} seeds -> {}",
        seeds.len(),
        config.output_dir.join("ablation.csv").display()
    );
    Ok(())
}

pub fn parse_seed_list(text: &str) -> anyhow::Result<Vec<u64>> {
    let seeds = text
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("invalid seed list {text:?}"))?;
    if seeds.is_empty() {
        bail!("seed list is empty");
    }
    Ok(seeds)
}
