//! TOML run configuration shared by the `train` and `experiment` commands.
//!
//! ```toml
//! [corpus]
//! path = "corpus.jsonl"
//!
//! [model]
//! preset = "IndBiGRU+att"
//! width_cap = 8
//!
//! [strategy]
//! kind = "s2"
//! sigma = 5.0
//!
//! [train]
//! max_epochs = 100
//! seed = 0
//!
//! [output]
//! model = "model.json"
//! history = "history.csv"
//! ```
//!
//! Unknown keys are rejected. Relative paths resolve against the directory
//! of the config file. `HIERMINE_SEED` replaces `train.seed`.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::corpus::{Corpus, Dims};
use crate::error::{Error, Result};
use crate::hierarchy::{ModelSpec, PoolKind, Preset};
use crate::schedule::{
    StrategyKind, StrategySpec, DEFAULT_NS_SENTENCE, DEFAULT_NS_TOKEN, DEFAULT_STATIONARY,
};
use crate::train::{ExperimentGrid, ExperimentKind, TrainConfig};

pub const SEED_ENV: &str = "HIERMINE_SEED";

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: PathBuf,
}

/// Architecture choice. Input sizes come from the corpus.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_preset")]
    pub preset: Preset,
    #[serde(default)]
    pub width_cap: Option<usize>,
    #[serde(default)]
    pub token_hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub sentence_hidden: Option<usize>,
    #[serde(default)]
    pub token_pool: Option<PoolKind>,
    #[serde(default)]
    pub text_pool: Option<PoolKind>,
}

fn default_preset() -> Preset {
    Preset::IndBiGruAtt
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: default_preset(),
            width_cap: None,
            token_hidden: None,
            sentence_hidden: None,
            token_pool: None,
            text_pool: None,
        }
    }
}

impl ModelSection {
    pub fn spec(&self, dims: Dims, entities: usize) -> Result<ModelSpec> {
        let mut spec = ModelSpec::preset(self.preset, dims, entities);
        if let Some(h) = &self.token_hidden {
            spec.token_hidden = h.clone();
        }
        if let Some(h) = self.sentence_hidden {
            spec.sentence_hidden = h;
        }
        if let Some(p) = self.token_pool {
            spec.token_pool = p;
        }
        if let Some(p) = self.text_pool {
            spec.text_pool = p;
        }
        if let Some(cap) = self.width_cap {
            if cap == 0 {
                return Err(Error::Config(vec![
                    "model.width_cap must be positive".into()
                ]));
            }
            spec = spec.with_width_cap(cap);
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    pub kind: StrategyKind,
    pub sigma: f64,
    #[serde(default = "default_ns_token")]
    pub ns_token: usize,
    #[serde(default = "default_ns_sentence")]
    pub ns_sentence: usize,
    #[serde(default = "default_stationary")]
    pub stationary: [f64; 3],
}

fn default_ns_token() -> usize {
    DEFAULT_NS_TOKEN
}
fn default_ns_sentence() -> usize {
    DEFAULT_NS_SENTENCE
}
fn default_stationary() -> [f64; 3] {
    DEFAULT_STATIONARY
}

impl StrategySection {
    pub fn spec(&self) -> Result<StrategySpec> {
        let spec = StrategySpec {
            kind: self.kind,
            ns_token: self.ns_token,
            ns_sentence: self.ns_sentence,
            sigma: self.sigma,
            stationary: self.stationary,
        };
        spec.validate()
            .map_err(|e| Error::Config(vec![format!("strategy: {e}")]))?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub history: Option<PathBuf>,
    #[serde(default)]
    pub results: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub grid: ExperimentGrid,
}

/// Parsed file before command-specific checks.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub corpus: CorpusSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub strategy: Option<StrategySection>,
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub experiment: Option<ExperimentSection>,
}

/// Which command the file feeds; decides the required keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Train,
    Experiment,
}

impl Purpose {
    fn required(self) -> &'static [&'static str] {
        match self {
            Purpose::Train => &[
                "corpus.path",
                "strategy.kind",
                "strategy.sigma",
                "train.max_epochs",
                "train.seed",
                "output.model",
                "output.history",
            ],
            Purpose::Experiment => &[
                "corpus.path",
                "train.max_epochs",
                "train.seed",
                "experiment.kind",
                "output.results",
            ],
        }
    }
}

/// Fully checked training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub corpus: PathBuf,
    pub model: ModelSection,
    pub strategy: StrategySpec,
    pub train: TrainConfig,
    pub model_out: PathBuf,
    pub history_out: PathBuf,
}

/// Fully checked experiment run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRun {
    pub corpus: PathBuf,
    pub kind: ExperimentKind,
    pub grid: ExperimentGrid,
    pub train: TrainConfig,
    pub results_out: PathBuf,
}

fn lookup<'a>(table: &'a toml::Table, key: &str) -> Option<&'a toml::Value> {
    let mut parts = key.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

/// Parses `text`, applies the seed override and checks that every key the
/// purpose needs is present. All missing keys are reported together.
pub fn parse_config(
    text: &str,
    purpose: Purpose,
    seed_override: Option<u64>,
) -> Result<RunConfigFile> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
    if let Some(seed) = seed_override {
        let train = table
            .entry("train")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match train.as_table_mut() {
            Some(t) => {
                t.insert("seed".into(), toml::Value::Integer(seed as i64));
            }
            None => return Err(Error::Config(vec!["train must be a table".into()])),
        }
    }
    let missing: Vec<String> = purpose
        .required()
        .iter()
        .filter(|k| lookup(&table, k).is_none())
        .map(|k| format!("missing key `{k}`"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(missing));
    }
    let cfg: RunConfigFile = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
    cfg.train.validate()?;
    Ok(cfg)
}

/// Reads `HIERMINE_SEED`; a value that is not an unsigned integer is an error.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| {
            Error::Config(vec![format!(
                "{SEED_ENV} must be an unsigned integer, got `{s}`"
            )])
        }),
        Err(_) => Ok(None),
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl TrainRun {
    pub fn from_str(text: &str, base: &Path, seed_override: Option<u64>) -> Result<Self> {
        let cfg = parse_config(text, Purpose::Train, seed_override)?;
        let strategy = cfg.strategy.as_ref().expect("checked above").spec()?;
        let out = &cfg.output;
        Ok(Self {
            corpus: resolve(base, &cfg.corpus.path),
            model: cfg.model.clone(),
            strategy,
            train: cfg.train.clone(),
            model_out: resolve(base, out.model.as_ref().expect("checked above")),
            history_out: resolve(base, out.history.as_ref().expect("checked above")),
        })
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        Self::from_str(&read(path)?, &base_dir(path), seed_override)
    }

    pub fn model_spec(&self, corpus: &Corpus) -> Result<ModelSpec> {
        self.model.spec(corpus.dims, corpus.entities)
    }
}

impl ExperimentRun {
    pub fn from_str(text: &str, base: &Path, seed_override: Option<u64>) -> Result<Self> {
        let cfg = parse_config(text, Purpose::Experiment, seed_override)?;
        let exp = cfg.experiment.clone().expect("checked above");
        let mut grid = exp.grid;
        // the training seed doubles as the first seed of the grid
        grid.base_seed = cfg.train.seed;
        if grid.width_cap.is_none() {
            grid.width_cap = cfg.model.width_cap;
        }
        Ok(Self {
            corpus: resolve(base, &cfg.corpus.path),
            kind: exp.kind,
            grid,
            train: cfg.train,
            results_out: resolve(base, cfg.output.results.as_ref().expect("checked above")),
        })
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        Self::from_str(&read(path)?, &base_dir(path), seed_override)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRAIN: &str = r#"
[corpus]
path = "data/c.jsonl"

[model]
preset = "MFN"
width_cap = 4

[strategy]
kind = "s2"
sigma = 5.0

[train]
max_epochs = 3
seed = 11

[output]
model = "m.json"
history = "/tmp/h.csv"
"#;

    fn config_errors(r: Result<impl std::fmt::Debug>) -> Vec<String> {
        match r {
            Err(Error::Config(v)) => v,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn full_train_config() {
        let run = TrainRun::from_str(TRAIN, Path::new("/work"), None).unwrap();
        assert_eq!(run.corpus, PathBuf::from("/work/data/c.jsonl"));
        assert_eq!(run.model_out, PathBuf::from("/work/m.json"));
        assert_eq!(run.history_out, PathBuf::from("/tmp/h.csv"));
        assert_eq!(run.strategy, StrategySpec::new(StrategyKind::S2, 5.0));
        assert_eq!(run.train, TrainConfig::new(3, 11));
        let spec = run.model.spec(Dims::new(6, 2, 2), 3).unwrap();
        assert_eq!(
            spec,
            ModelSpec::preset(Preset::Mfn, Dims::new(6, 2, 2), 3).with_width_cap(4)
        );
    }

    #[test]
    fn missing_sigma_is_named() {
        let text = TRAIN.replace("sigma = 5.0", "");
        let errs = config_errors(TrainRun::from_str(&text, Path::new(""), None));
        assert_eq!(errs, vec!["missing key `strategy.sigma`".to_string()]);
    }

    #[test]
    fn all_missing_keys_listed() {
        let errs = config_errors(TrainRun::from_str(
            "[corpus]\npath = \"x\"\n",
            Path::new(""),
            None,
        ));
        assert!(errs.iter().any(|e| e.contains("strategy.kind")));
        assert!(errs.iter().any(|e| e.contains("train.max_epochs")));
        assert!(errs.iter().any(|e| e.contains("output.history")));
        assert!(!errs.iter().any(|e| e.contains("corpus.path")));
    }

    #[test]
    fn unknown_key_rejected() {
        let text = TRAIN.replace("seed = 11", "seed = 11\nlearning_rate = 0.1");
        let errs = config_errors(TrainRun::from_str(&text, Path::new(""), None));
        assert!(errs[0].contains("learning_rate"), "{errs:?}");
    }

    #[test]
    fn values_are_type_checked() {
        let text = TRAIN.replace("max_epochs = 3", "max_epochs = \"three\"");
        assert!(TrainRun::from_str(&text, Path::new(""), None).is_err());
        let text = TRAIN.replace("sigma = 5.0", "sigma = -1.0");
        let errs = config_errors(TrainRun::from_str(&text, Path::new(""), None));
        assert!(errs[0].contains("sigma"), "{errs:?}");
        let text = TRAIN.replace("max_epochs = 3", "max_epochs = 3\ndropout = 1.5");
        let errs = config_errors(TrainRun::from_str(&text, Path::new(""), None));
        assert!(errs[0].contains("train.dropout"), "{errs:?}");
    }

    #[test]
    fn seed_override_wins_and_fills_missing_seed() {
        let run = TrainRun::from_str(TRAIN, Path::new(""), Some(99)).unwrap();
        assert_eq!(run.train.seed, 99);
        let text = TRAIN.replace("seed = 11", "");
        assert!(TrainRun::from_str(&text, Path::new(""), None).is_err());
        assert_eq!(
            TrainRun::from_str(&text, Path::new(""), Some(3))
                .unwrap()
                .train
                .seed,
            3
        );
    }

    #[test]
    fn experiment_config() {
        let text = r#"
[corpus]
path = "c.jsonl"
[train]
max_epochs = 2
seed = 5
[experiment]
kind = "exp2"
[experiment.grid]
seeds = 2
sigmas = [1.0, 10.0]
[output]
results = "r.csv"
"#;
        let run = ExperimentRun::from_str(text, Path::new("base"), None).unwrap();
        assert_eq!(run.kind, ExperimentKind::Exp2);
        assert_eq!(run.grid.seeds, 2);
        assert_eq!(run.grid.base_seed, 5);
        assert_eq!(run.grid.sigmas, vec![1.0, 10.0]);
        assert_eq!(run.results_out, PathBuf::from("base/r.csv"));
        let errs = config_errors(ExperimentRun::from_str(TRAIN, Path::new(""), None));
        assert!(errs.iter().any(|e| e.contains("experiment.kind")));
    }
}
