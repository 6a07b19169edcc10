//! Experiment harnesses: encoder comparison, schedule strategies and task
//! subsets. Each row is averaged over several training seeds.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, MetricsBundle};
use super::trainer::{train, TrainConfig};
use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};
use crate::hierarchy::{ModelSpec, Preset, TaskMask};
use crate::schedule::{
    StrategyKind, StrategySpec, DEFAULT_NS_SENTENCE, DEFAULT_NS_TOKEN, DEFAULT_STATIONARY,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// One row per encoder architecture.
    Exp1,
    /// One row per (strategy, sigma).
    Exp2,
    /// One row per task subset.
    Exp3,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Exp1 => "exp1",
            ExperimentKind::Exp2 => "exp2",
            ExperimentKind::Exp3 => "exp3",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exp1" => Ok(ExperimentKind::Exp1),
            "exp2" => Ok(ExperimentKind::Exp2),
            "exp3" => Ok(ExperimentKind::Exp3),
            _ => Err(Error::InvalidArgument(format!(
                "unknown experiment `{s}` (expected exp1, exp2 or exp3)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskSubset {
    Joint,
    Polarity,
    Entity,
}

impl TaskSubset {
    pub fn mask(self) -> TaskMask {
        match self {
            TaskSubset::Joint => TaskMask::JOINT,
            TaskSubset::Polarity => TaskMask::POLARITY,
            TaskSubset::Entity => TaskMask::ENTITY,
        }
    }
}

fn all_presets() -> Vec<Preset> {
    Preset::ALL.to_vec()
}
fn all_strategies() -> Vec<StrategyKind> {
    StrategyKind::SCHEDULED.to_vec()
}
fn default_sigmas() -> Vec<f64> {
    vec![1.0, 5.0, 10.0]
}
fn all_subsets() -> Vec<TaskSubset> {
    vec![TaskSubset::Joint, TaskSubset::Polarity, TaskSubset::Entity]
}
fn default_seeds() -> usize {
    7
}
fn default_model() -> Preset {
    Preset::IndBiGruAtt
}
fn default_weights() -> [f64; 3] {
    DEFAULT_STATIONARY
}
fn default_true() -> bool {
    true
}
fn default_split() -> Split {
    Split::Test
}
fn default_ns_token() -> usize {
    DEFAULT_NS_TOKEN
}
fn default_ns_sentence() -> usize {
    DEFAULT_NS_SENTENCE
}

/// Grid of configurations. Fields a given experiment does not vary are
/// ignored by it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    #[serde(default = "all_presets")]
    pub presets: Vec<Preset>,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<StrategyKind>,
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "all_subsets")]
    pub subsets: Vec<TaskSubset>,
    /// Training seeds per row; seed `k` is `base_seed + k`.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Architecture of the schedule and task-subset experiments.
    #[serde(default = "default_model")]
    pub model: Preset,
    /// Caps every recurrent width.
    #[serde(default)]
    pub width_cap: Option<usize>,
    /// Constant task weights of the encoder and task-subset experiments.
    #[serde(default = "default_weights")]
    pub weights: [f64; 3],
    /// Adds a text-only-supervision row to the encoder experiment.
    #[serde(default = "default_true")]
    pub text_only_row: bool,
    #[serde(default = "default_ns_token")]
    pub ns_token: usize,
    #[serde(default = "default_ns_sentence")]
    pub ns_sentence: usize,
    /// Split whose metrics fill the table.
    #[serde(default = "default_split")]
    pub eval_split: Split,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            presets: all_presets(),
            strategies: all_strategies(),
            sigmas: default_sigmas(),
            subsets: all_subsets(),
            seeds: default_seeds(),
            base_seed: 0,
            model: default_model(),
            width_cap: None,
            weights: default_weights(),
            text_only_row: true,
            ns_token: default_ns_token(),
            ns_sentence: default_ns_sentence(),
            eval_split: default_split(),
        }
    }
}

/// One table row; metric columns are means over seeds. Metrics of tasks a
/// row did not train are `None` and print as `X`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: ExperimentKind,
    pub label: String,
    pub model: String,
    pub strategy: String,
    pub sigma: Option<f64>,
    pub tasks: String,
    pub seeds: usize,
    pub val_mae: f64,
    pub text_mae: f64,
    pub token_f1: Option<f64>,
    pub pol_f1: Option<f64>,
    pub tar_f1: Option<f64>,
    pub sentence_f1: Option<f64>,
    pub valence_f1: Option<f64>,
}

struct RowPlan {
    label: String,
    preset: Preset,
    strategy: StrategySpec,
    subset: &'static str,
    mask: TaskMask,
    sigma: Option<f64>,
}

fn plan(kind: ExperimentKind, grid: &ExperimentGrid) -> Result<Vec<RowPlan>> {
    let fixed = StrategySpec::fixed(grid.weights);
    let mut rows = Vec::new();
    match kind {
        ExperimentKind::Exp1 => {
            for &p in &grid.presets {
                rows.push(RowPlan {
                    label: p.name().to_string(),
                    preset: p,
                    strategy: fixed.clone(),
                    subset: "joint",
                    mask: TaskMask::JOINT,
                    sigma: None,
                });
            }
            if grid.text_only_row {
                rows.push(RowPlan {
                    label: format!("{} text-only", grid.model),
                    preset: grid.model,
                    strategy: StrategySpec::fixed([0.0, 0.0, 1.0]),
                    subset: "text",
                    mask: TaskMask::JOINT,
                    sigma: None,
                });
            }
        }
        ExperimentKind::Exp2 => {
            for &s in &grid.strategies {
                for &sigma in &grid.sigmas {
                    let strategy = StrategySpec {
                        ns_token: grid.ns_token,
                        ns_sentence: grid.ns_sentence,
                        ..StrategySpec::new(s, sigma)
                    };
                    strategy.validate()?;
                    rows.push(RowPlan {
                        label: format!("{s} sigma={sigma}"),
                        preset: grid.model,
                        strategy,
                        subset: "joint",
                        mask: TaskMask::JOINT,
                        sigma: Some(sigma),
                    });
                }
            }
        }
        ExperimentKind::Exp3 => {
            for &t in &grid.subsets {
                let mask = t.mask();
                rows.push(RowPlan {
                    label: mask.name().to_string(),
                    preset: grid.model,
                    strategy: fixed.clone(),
                    subset: mask.name(),
                    mask,
                    sigma: None,
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!("{kind} grid is empty")));
    }
    Ok(rows)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Trains every (row, seed) job in parallel and averages metrics per row.
pub fn run_experiment(
    kind: ExperimentKind,
    corpus: &Corpus,
    grid: &ExperimentGrid,
    train_cfg: &TrainConfig,
) -> Result<Vec<ResultRow>> {
    if grid.seeds == 0 {
        return Err(Error::InvalidArgument(
            "experiment needs at least one seed".into(),
        ));
    }
    train_cfg.validate()?;
    let rows = plan(kind, grid)?;
    let jobs: Vec<(usize, u64)> = (0..rows.len())
        .flat_map(|r| (0..grid.seeds as u64).map(move |k| (r, grid.base_seed + k)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(r, seed)| -> Result<(f64, MetricsBundle)> {
            let row = &rows[r];
            let mut spec = ModelSpec::preset(row.preset, corpus.dims, corpus.entities);
            if let Some(cap) = grid.width_cap {
                spec = spec.with_width_cap(cap);
            }
            let cfg = TrainConfig {
                seed,
                mask: row.mask,
                ..train_cfg.clone()
            };
            let out = train::<f64>(corpus, &spec, &row.strategy, &cfg)?;
            let metrics = evaluate(&out.model, corpus, grid.eval_split, &row.mask)?;
            Ok((out.best().val.text_mae, metrics))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let runs: Vec<&(f64, MetricsBundle)> = jobs
                .iter()
                .zip(&results)
                .filter(|((job, _), _)| *job == r)
                .map(|(_, res)| res)
                .collect();
            ResultRow {
                experiment: kind,
                label: row.label.clone(),
                model: row.preset.name().to_string(),
                strategy: row.strategy.kind.to_string(),
                sigma: row.sigma,
                tasks: row.subset.to_string(),
                seeds: runs.len(),
                val_mae: mean(runs.iter().map(|r| r.0)),
                text_mae: mean(runs.iter().map(|r| r.1.text_mae)),
                token_f1: mean_opt(runs.iter().map(|r| r.1.token_micro_f1)),
                pol_f1: mean_opt(runs.iter().map(|r| r.1.token_pol_f1)),
                tar_f1: mean_opt(runs.iter().map(|r| r.1.token_tar_f1)),
                sentence_f1: mean_opt(runs.iter().map(|r| r.1.sentence_micro_f1)),
                valence_f1: mean_opt(runs.iter().map(|r| r.1.valence_f1)),
            }
        })
        .collect())
}

/// Mean table MAE per sigma over the strategy rows of a schedule experiment.
pub fn sigma_summary(rows: &[ResultRow]) -> Vec<(f64, f64)> {
    let mut sigmas: Vec<f64> = rows.iter().filter_map(|r| r.sigma).collect();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    sigmas
        .into_iter()
        .map(|s| {
            (
                s,
                mean(
                    rows.iter()
                        .filter(|r| r.sigma == Some(s))
                        .map(|r| r.text_mae),
                ),
            )
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "X".to_string(), |x| format!("{x:.4}"))
}

pub const RESULT_COLUMNS: [&str; 14] = [
    "experiment",
    "label",
    "model",
    "strategy",
    "sigma",
    "tasks",
    "seeds",
    "val_mae",
    "text_mae",
    "token_f1",
    "pol_f1",
    "tar_f1",
    "sentence_f1",
    "valence_f1",
];

fn record(r: &ResultRow) -> [String; 14] {
    [
        r.experiment.to_string(),
        r.label.clone(),
        r.model.clone(),
        r.strategy.clone(),
        r.sigma.map_or_else(String::new, |s| s.to_string()),
        r.tasks.clone(),
        r.seeds.to_string(),
        format!("{:.4}", r.val_mae),
        format!("{:.4}", r.text_mae),
        cell(r.token_f1),
        cell(r.pol_f1),
        cell(r.tar_f1),
        cell(r.sentence_f1),
        cell(r.valence_f1),
    ]
}

pub fn write_results<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RESULT_COLUMNS)?;
    for r in rows {
        out.write_record(record(r))?;
    }
    out.flush().map_err(|e| Error::io("<results>", e))?;
    Ok(())
}

/// Column-aligned plain text rendering.
pub fn format_results(rows: &[ResultRow]) -> String {
    let cols: Vec<usize> = vec![1, 4, 7, 8, 9, 10, 11, 12, 13];
    let body: Vec<[String; 14]> = rows.iter().map(record).collect();
    let widths: Vec<usize> = cols
        .iter()
        .map(|&c| {
            body.iter()
                .map(|r| r[c].len())
                .chain([RESULT_COLUMNS[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = vec![line(cols.iter().map(|&c| RESULT_COLUMNS[c]).collect())];
    for r in &body {
        out.push(line(cols.iter().map(|&c| r[c].as_str()).collect()));
    }
    out.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthSpec};

    fn corpus() -> Corpus {
        generate_synthetic(
            &SynthSpec {
                n_reviews: 14,
                sentences: (2, 3),
                tokens: (3, 4),
                ..SynthSpec::default()
            },
            8,
        )
        .unwrap()
    }

    fn quick() -> (ExperimentGrid, TrainConfig) {
        let grid = ExperimentGrid {
            seeds: 1,
            width_cap: Some(3),
            ..ExperimentGrid::default()
        };
        (grid, TrainConfig::new(2, 0))
    }

    #[test]
    fn exp1_includes_average_embedding_row() {
        let (mut grid, cfg) = quick();
        grid.presets = vec![Preset::IndBiGruAtt, Preset::AvgEmb];
        let rows = run_experiment(ExperimentKind::Exp1, &corpus(), &grid, &cfg).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].label, "AvEmb");
        assert!(rows[2].label.ends_with("text-only"));
    }

    #[test]
    fn exp2_has_one_row_per_pair() {
        let (mut grid, cfg) = quick();
        grid.strategies = vec![StrategyKind::S1, StrategyKind::S3];
        grid.sigmas = vec![1.0, 10.0];
        let rows = run_experiment(ExperimentKind::Exp2, &corpus(), &grid, &cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(sigma_summary(&rows).len(), 2);
    }

    #[test]
    fn exp3_marks_untrained_heads() {
        let (grid, cfg) = quick();
        let rows = run_experiment(ExperimentKind::Exp3, &corpus(), &grid, &cfg).unwrap();
        assert_eq!(rows.len(), 3);
        let joint = &rows[0];
        assert!(
            joint.pol_f1.is_some()
                && joint.tar_f1.is_some()
                && joint.sentence_f1.is_some()
                && joint.valence_f1.is_some()
        );
        let pol = &rows[1];
        assert!(pol.pol_f1.is_some() && pol.valence_f1.is_some());
        assert!(pol.tar_f1.is_none() && pol.sentence_f1.is_none());
        let ent = &rows[2];
        assert!(ent.tar_f1.is_some() && ent.sentence_f1.is_some());
        assert!(ent.pol_f1.is_none() && ent.valence_f1.is_none());
        let mut buf = Vec::new();
        write_results(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(2).unwrap().contains(",X,"));
        assert!(format_results(&rows).lines().count() == 4);
    }

    #[test]
    fn parse_kinds() {
        assert_eq!(
            "EXP2".parse::<ExperimentKind>().unwrap(),
            ExperimentKind::Exp2
        );
        assert!("exp4".parse::<ExperimentKind>().is_err());
    }
}
