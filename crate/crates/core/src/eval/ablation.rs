//! Pipeline ablations: compare sizing strategies (pad / resize / crop) and
//! model strategies (full ensemble / best single member) by held-out macro F1
//! across seeds, on a common split per seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::augment::JitterSpec;
use crate::corpus::ImageSample;
use crate::ensemble::predict;
use crate::eval::{confusion, f1_report};
use crate::model::EnsembleSpec;
use crate::train::{
    run_pipeline, Checkpoint, SizingMode, TrainConfig, TrainOptions,
};
use crate::{ClassLabel, Error, Result};

/// Which members vote at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ModelStrategy {
    /// Average all members.
    Ensemble,
    /// Only the member with the lowest selection loss.
    BestSingle,
}

/// One pipeline configuration under comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineVariant {
    pub name: String,
    pub sizing: SizingMode,
    pub strategy: ModelStrategy,
}

impl PipelineVariant {
    pub fn new(name: impl Into<String>, sizing: SizingMode, strategy: ModelStrategy) -> Self {
        Self {
            name: name.into(),
            sizing,
            strategy,
        }
    }

    /// The default comparison grid: {pad, resize, crop} x {ensemble, best-single}.
    pub fn default_grid() -> Vec<Self> {
        let mut grid = Vec::new();
        for (sizing, sizing_name) in [
            (SizingMode::Pad, "pad"),
            (SizingMode::Resize, "resize"),
            (SizingMode::Crop, "crop"),
        ] {
            for (strategy, strategy_name) in [
                (ModelStrategy::Ensemble, "ensemble"),
                (ModelStrategy::BestSingle, "best-single"),
            ] {
                grid.push(Self::new(
                    format!("{sizing_name}+{strategy_name}"),
                    sizing,
                    strategy,
                ));
            }
        }
        grid
    }
}

/// Shared settings every variant trains under.
#[derive(Debug, Clone)]
pub struct AblationContext {
    pub ensemble: EnsembleSpec,
    pub jitter: JitterSpec,
    pub train: TrainConfig,
}

/// Macro-F1 mean and spread for one variant across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    pub per_seed: Vec<f64>,
}

/// Select the checkpoint with the lowest selection loss (ties toward the
/// lowest member index).
pub fn best_single(checkpoints: &[Checkpoint]) -> &Checkpoint {
    checkpoints
        .iter()
        .min_by(|a, b| {
            a.best_loss
                .partial_cmp(&b.best_loss)
                .expect("losses are finite")
                .then(a.member_index.cmp(&b.member_index))
        })
        .expect("at least one checkpoint")
}

fn macro_f1_of(checkpoints: &[Checkpoint], validation: &[ImageSample]) -> Result<f64> {
    let predictions = predict(checkpoints, validation)?;
    let truth: Vec<ClassLabel> = validation
        .iter()
        .map(|s| {
            s.label.ok_or_else(|| Error::UnlabeledSample {
                id: s.id.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let predicted: Vec<ClassLabel> = predictions.iter().map(|p| p.label).collect();
    Ok(f1_report(&confusion(&truth, &predicted)?).macro_f1)
}

/// Run every variant across every seed and tabulate macro F1 mean and
/// standard deviation (population form, so a single seed reports 0).
///
/// Within one seed all variants share the same held-out split; variants that
/// share a sizing mode also share trained checkpoints, so identical variants
/// produce identical rows.
pub fn ablation_report(
    variants: &[PipelineVariant],
    corpus: &[ImageSample],
    seeds: &[u64],
    context: &AblationContext,
) -> Result<Vec<AblationRow>> {
    if variants.len() < 2 {
        return Err(Error::InvalidSpec(
            "ablation needs at least 2 variants".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidSpec("ablation needs at least 1 seed".into()));
    }

    let mut per_variant: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
    for &seed in seeds {
        let config = TrainConfig {
            seed,
            ..context.train.clone()
        };
        // One training run per sizing mode per seed, shared by strategies.
        let mut runs: BTreeMap<&'static str, _> = BTreeMap::new();
        for (v_idx, variant) in variants.iter().enumerate() {
            let key = match variant.sizing {
                SizingMode::Pad => "pad",
                SizingMode::Resize => "resize",
                SizingMode::Crop => "crop",
            };
            if !runs.contains_key(key) {
                let options = TrainOptions {
                    sizing: variant.sizing,
                    ..TrainOptions::default()
                };
                let (outcomes, prepared) =
                    run_pipeline(&context.ensemble, corpus, &context.jitter, &config, &options)?;
                let checkpoints: Vec<Checkpoint> =
                    outcomes.into_iter().map(|o| o.checkpoint).collect();
                runs.insert(key, (checkpoints, prepared.validation));
            }
            let (checkpoints, validation) = runs.get(key).expect("inserted above");
            let score = match variant.strategy {
                ModelStrategy::Ensemble => macro_f1_of(checkpoints, validation)?,
                ModelStrategy::BestSingle => {
                    macro_f1_of(std::slice::from_ref(best_single(checkpoints)), validation)?
                }
            };
            per_variant[v_idx].push(score);
        }
    }

    Ok(variants
        .iter()
        .zip(per_variant)
        .map(|(variant, per_seed)| {
            let n = per_seed.len() as f64;
            let mean = per_seed.iter().sum::<f64>() / n;
            let var = per_seed.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
            AblationRow {
                variant: variant.name.clone(),
                mean_macro_f1: mean,
                std_macro_f1: var.sqrt(),
                per_seed,
            }
        })
        .collect())
}

/// Render the comparison as a CSV table: `variant,mean_macro_f1,std_macro_f1,per_seed`.
pub fn render_ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,mean_macro_f1,std_macro_f1,per_seed\n");
    for row in rows {
        let per_seed = row
            .per_seed
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.variant, row.mean_macro_f1, row.std_macro_f1, per_seed
        );
    }
    out
}
