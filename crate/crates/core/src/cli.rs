//! Subcommands of the `hiermine` binary. Results go to the `out` writer
//! (stdout in the binary); progress notes and diagnostics go to stderr.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::align::{levenshtein_script, transfer_tags};
use crate::config::{seed_from_env, ExperimentRun, TrainRun};
use crate::corpus::{generate_synthetic, load_corpus, save_corpus, Corpus, Dims, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::hierarchy::{HierModel, TaskMask};
use crate::schedule::{simplex_path, simplex_svg, write_simplex_csv, StrategyKind, StrategySpec};
use crate::schedule::{DEFAULT_NS_SENTENCE, DEFAULT_NS_TOKEN, DEFAULT_STATIONARY};
use crate::train::{
    evaluate, format_results, run_experiment, sigma_summary, train, write_history, write_results,
    ExperimentKind, MetricsBundle, Predictor,
};

#[derive(Debug, Parser)]
#[command(
    name = "hiermine",
    version,
    about = "Hierarchical multimodal opinion mining"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled corpus.
    Synth(SynthArgs),
    /// Carry token tags from one tokenization onto another.
    Align(AlignArgs),
    /// Train a model from a TOML run config.
    Train(TrainArgs),
    /// Score a saved model on one split of a corpus.
    Eval(EvalArgs),
    /// Export the task-weight path of a strategy.
    Schedule(ScheduleArgs),
    /// Run an experiment grid from a TOML run config.
    Experiment(ExperimentArgs),
}

fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let v = parse_list(s, 3)?;
    if v.contains(&0) {
        return Err("every dimension must be positive".into());
    }
    Ok(Dims::new(v[0], v[1], v[2]))
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let v = parse_list(s, 2)?;
    if v[0] == 0 || v[0] > v[1] {
        return Err("expected MIN,MAX with 1 <= MIN <= MAX".into());
    }
    Ok((v[0], v[1]))
}

fn parse_list(s: &str, n: usize) -> std::result::Result<Vec<usize>, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated integers"));
    }
    Ok(v)
}

fn parse_weights(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| "expected 3 comma-separated numbers".to_string())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of reviews.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Sentences per review as MIN,MAX.
    #[arg(long, default_value = "3,8", value_parser = parse_range)]
    pub sentences: (usize, usize),
    /// Tokens per sentence as MIN,MAX.
    #[arg(long, default_value = "4,20", value_parser = parse_range)]
    pub tokens: (usize, usize),
    /// Text, audio and video feature sizes.
    #[arg(long, default_value = "16,4,4", value_parser = parse_dims)]
    pub dims: Dims,
    /// Number of entity categories.
    #[arg(long, default_value_t = 5)]
    pub entities: usize,
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Source tokens, one per line.
    #[arg(long)]
    pub src: PathBuf,
    /// Target tokens, one per line.
    #[arg(long)]
    pub dst: PathBuf,
    /// One tag per source token.
    #[arg(long)]
    pub tags: PathBuf,
    /// Tag given to inserted tokens.
    #[arg(long, default_value = "O")]
    pub fill: String,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub config: PathBuf,
    /// Check the config and build the model without training.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Metrics CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// S1, S2, S3, S4 or fixed.
    #[arg(long)]
    pub strategy: String,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = DEFAULT_NS_TOKEN)]
    pub ns_token: usize,
    #[arg(long, default_value_t = DEFAULT_NS_SENTENCE)]
    pub ns_sentence: usize,
    /// Stationary weights as TOKEN,SENTENCE,TEXT.
    #[arg(long, value_parser = parse_weights)]
    pub stationary: Option<[f64; 3]>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SVG rendering of the path in the simplex.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    pub config: PathBuf,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Align(a) => cmd_align(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Schedule(a) => cmd_schedule(&a, out),
        Command::Experiment(a) => cmd_experiment(&a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn create(path: &Path) -> Result<std::fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let spec = SynthSpec {
        n_reviews: a.n,
        sentences: a.sentences,
        tokens: a.tokens,
        dims: a.dims,
        entities: a.entities,
        signal_strength: a.signal,
        noise_std: a.noise,
    };
    let corpus = generate_synthetic(&spec, a.seed)?;
    save_corpus(&corpus, &a.out)?;
    emit(out, &corpus.summary().to_string())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect())
}

/// Edit distance and transferred tags, the body of `align`.
pub fn align_files(
    src: &Path,
    dst: &Path,
    tags: &Path,
    fill: &str,
) -> Result<(usize, Vec<String>)> {
    let (s, d, t) = (read_lines(src)?, read_lines(dst)?, read_lines(tags)?);
    if s.len() != t.len() {
        let first = s.len().min(t.len()) + 1;
        return Err(Error::InvalidArgument(format!(
            "{} has {} tags but {} has {} tokens; first unmatched line is {first}",
            tags.display(),
            t.len(),
            src.display(),
            s.len()
        )));
    }
    let (dist, script) = levenshtein_script(&s, &d);
    let moved = transfer_tags(&t, &script, fill.to_string())?;
    Ok((dist, moved))
}

pub fn format_alignment(distance: usize, tags: &[String]) -> String {
    let mut s = format!("# distance: {distance}\n");
    for t in tags {
        s.push_str(t);
        s.push('\n');
    }
    s
}

pub fn cmd_align(a: &AlignArgs, out: &mut dyn Write) -> Result<()> {
    let (dist, tags) = align_files(&a.src, &a.dst, &a.tags, &a.fill)?;
    let text = format_alignment(dist, &tags);
    match &a.out {
        Some(p) => {
            create(p)?
                .write_all(text.as_bytes())
                .map_err(|e| Error::io(p, e))?;
            eprintln!(
                "distance {dist}, {} tags written to {}",
                tags.len(),
                p.display()
            );
            Ok(())
        }
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let run = TrainRun::load(&a.config, seed_from_env()?)?;
    let corpus = load_corpus(&run.corpus)?;
    let spec = run.model_spec(&corpus)?;
    if a.dry_run {
        let model = HierModel::<f64>::new(spec, run.train.seed)?;
        let check = corpus.reviews_in(Split::Train);
        let first = check
            .first()
            .ok_or_else(|| Error::Split("train split is empty".into()))?;
        model.objective(
            first,
            &crate::hierarchy::TaskWeights::TEXT_ONLY,
            &run.train.mask,
        )?;
        return emit(
            out,
            &format!(
                "config ok: {} parameters, token state {}, sentence state {}",
                model.num_parameters(),
                model.token_state_dim(),
                model.sentence_state_dim()
            ),
        );
    }
    let outcome = train::<f64>(&corpus, &spec, &run.strategy, &run.train)?;
    drop(create(&run.model_out)?);
    outcome.model.save(&run.model_out)?;
    write_history(&outcome.history, create(&run.history_out)?)?;
    eprintln!(
        "model written to {}, history to {}",
        run.model_out.display(),
        run.history_out.display()
    );
    let best = outcome.best();
    emit(out, &format!("best epoch {} (val)", outcome.best_epoch))?;
    emit(out, &format_metrics(&best.val))
}

fn load_any(path: &Path) -> Result<HierModel<f64>> {
    match HierModel::<f64>::load(path) {
        Ok(m) => Ok(m),
        Err(Error::Schema(msg)) if msg.contains("\"f32\"") => {
            Ok(HierModel::<f32>::load(path)?.cast())
        }
        Err(e) => Err(e),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "X".into(), |x| format!("{x:.4}"))
}

/// (metric, value) rows of a bundle.
fn metric_rows(m: &MetricsBundle) -> Vec<(&'static str, String)> {
    vec![
        ("reviews", m.reviews.to_string()),
        ("token_micro_f1", opt(m.token_micro_f1)),
        ("token_pol_f1", opt(m.token_pol_f1)),
        ("token_tar_f1", opt(m.token_tar_f1)),
        ("sentence_micro_f1", opt(m.sentence_micro_f1)),
        ("valence_f1", opt(m.valence_f1)),
        ("text_mae", format!("{:.4}", m.text_mae)),
    ]
}

/// Aligned plain-text report: summary metrics, then one row per entity
/// with its gold value count.
pub fn format_metrics(m: &MetricsBundle) -> String {
    let rows = metric_rows(m);
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::new();
    for (k, v) in &rows {
        let _ = writeln!(s, "{k:<w$}  {v:>8}");
    }
    if !m.per_entity.is_empty() {
        let _ = writeln!(
            s,
            "\n{:<8}  {:>8}  {:>6}  {:>6}",
            "entity", "f1", "count", "pred"
        );
        for e in &m.per_entity {
            let _ = writeln!(
                s,
                "{:<8}  {:>8.4}  {:>6}  {:>6}",
                e.entity, e.f1, e.gold_count, e.pred_count
            );
        }
    }
    s.trim_end().to_string()
}

/// CSV with columns `metric,value,count`; entity rows carry their gold
/// value count.
pub fn write_metrics_csv<W: Write>(m: &MetricsBundle, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "value", "count"])?;
    for (k, v) in metric_rows(m) {
        out.write_record([k, v.as_str(), ""])?;
    }
    for e in &m.per_entity {
        out.write_record([
            format!("entity_{}_f1", e.entity),
            format!("{:.4}", e.f1),
            e.gold_count.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Scores `predictor` on `split` with every label component enabled.
pub fn eval_report<P: Predictor + ?Sized>(
    predictor: &P,
    corpus: &Corpus,
    split: &str,
) -> Result<MetricsBundle> {
    let split: Split = split.parse()?;
    evaluate(predictor, corpus, split, &TaskMask::JOINT)
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let split: Split = a.split.parse()?;
    let model = load_any(&a.model)?;
    let corpus = load_corpus(&a.corpus)?;
    let spec = model.spec();
    if spec.dims != corpus.dims {
        return Err(Error::InvalidArgument(format!(
            "model expects dims ({},{},{}), corpus has ({},{},{})",
            spec.dims.text,
            spec.dims.audio,
            spec.dims.video,
            corpus.dims.text,
            corpus.dims.audio,
            corpus.dims.video
        )));
    }
    if spec.entities != corpus.entities {
        return Err(Error::DimMismatch {
            what: "entity count of model vs corpus",
            expected: spec.entities,
            got: corpus.entities,
        });
    }
    let m = eval_report(&model, &corpus, split.name())?;
    emit(out, &format!("split {split}"))?;
    emit(out, &format_metrics(&m))?;
    if let Some(p) = &a.out {
        write_metrics_csv(&m, create(p)?)?;
        eprintln!("metrics written to {}", p.display());
    }
    Ok(())
}

pub fn cmd_schedule(a: &ScheduleArgs, out: &mut dyn Write) -> Result<()> {
    let kind: StrategyKind = a.strategy.parse()?;
    let spec = StrategySpec {
        kind,
        ns_token: a.ns_token,
        ns_sentence: a.ns_sentence,
        sigma: a.sigma,
        stationary: a.stationary.unwrap_or(DEFAULT_STATIONARY),
    };
    spec.validate()?;
    let points = simplex_path(&spec, a.epochs)?;
    match &a.out {
        Some(p) => {
            write_simplex_csv(&points, create(p)?)?;
            eprintln!("{} rows written to {}", points.len(), p.display());
        }
        None => write_simplex_csv(&points, &mut *out)?,
    }
    if let Some(p) = &a.plot {
        let title = format!("{kind} sigma={}", a.sigma);
        create(p)?
            .write_all(simplex_svg(&points, &title).as_bytes())
            .map_err(|e| Error::io(p, e))?;
        eprintln!("plot written to {}", p.display());
    }
    Ok(())
}

pub fn cmd_experiment(a: &ExperimentArgs, out: &mut dyn Write) -> Result<()> {
    let run = ExperimentRun::load(&a.config, seed_from_env()?)?;
    let corpus = load_corpus(&run.corpus)?;
    let rows = run_experiment(run.kind, &corpus, &run.grid, &run.train)?;
    write_results(&rows, create(&run.results_out)?)?;
    eprintln!(
        "{} rows written to {}",
        rows.len(),
        run.results_out.display()
    );
    emit(out, &format_results(&rows))?;
    if run.kind == ExperimentKind::Exp2 {
        for (sigma, mae) in sigma_summary(&rows) {
            emit(out, &format!("sigma {sigma}: mean text MAE {mae:.4}"))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Review;
    use crate::hierarchy::{PredictionBundle, SentencePrediction};

    struct Oracle;

    impl Predictor for Oracle {
        fn predict(&self, r: &Review) -> Result<PredictionBundle<f64>> {
            Ok(PredictionBundle {
                tokens: r
                    .sentences
                    .iter()
                    .map(|s| {
                        s.tokens
                            .iter()
                            .map(|t| [t.labels.pol as f64, t.labels.tar as f64])
                            .collect()
                    })
                    .collect(),
                sentences: r
                    .sentences
                    .iter()
                    .map(|s| SentencePrediction {
                        entities: s.labels.entities.iter().map(|&e| e as f64).collect(),
                        valence: s.labels.valence.iter().map(|&v| v as f64).collect(),
                    })
                    .collect(),
                text: r.text_score,
                token_attention: vec![None; r.sentences.len()],
                sentence_attention: None,
            })
        }
    }

    fn corpus() -> Corpus {
        let spec = SynthSpec {
            n_reviews: 30,
            ..SynthSpec::default()
        };
        generate_synthetic(&spec, 3).unwrap()
    }

    #[test]
    fn oracle_stub_gives_all_ones() {
        let c = corpus();
        let m = eval_report(&Oracle, &c, "test").unwrap();
        let table = format_metrics(&m);
        for key in [
            "token_micro_f1",
            "token_pol_f1",
            "token_tar_f1",
            "sentence_micro_f1",
            "valence_f1",
        ] {
            let line = table.lines().find(|l| l.starts_with(key)).unwrap();
            assert!(line.ends_with("1.0000"), "{line}");
        }
        assert!(table
            .lines()
            .any(|l| l.starts_with("text_mae") && l.ends_with("0.0000")));
    }

    #[test]
    fn per_entity_rows_carry_value_counts() {
        let c = corpus();
        let m = eval_report(&Oracle, &c, "test").unwrap();
        let table = format_metrics(&m);
        assert!(table.contains("count"));
        let mut buf = Vec::new();
        write_metrics_csv(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("metric,value,count\n"));
        let gold: usize = c
            .reviews_in(Split::Test)
            .iter()
            .flat_map(|r| &r.sentences)
            .filter(|s| s.labels.entities[0] == 1)
            .count();
        assert!(
            text.contains(&format!("entity_0_f1,1.0000,{gold}\n")),
            "{text}"
        );
        assert_eq!(text.matches("entity_").count(), c.entities);
    }

    #[test]
    fn unknown_split_lists_valid_ones() {
        let err = eval_report(&Oracle, &corpus(), "dev")
            .unwrap_err()
            .to_string();
        for s in ["train", "val", "test", "dev"] {
            assert!(err.contains(s), "{err}");
        }
    }

    #[test]
    fn dims_parser() {
        assert_eq!(parse_dims("16,4,4").unwrap(), Dims::new(16, 4, 4));
        assert!(parse_dims("0,4,4").is_err());
        assert!(parse_dims("4,4").is_err());
        assert!(parse_range("5,3").is_err());
        assert_eq!(parse_weights("0,0,1").unwrap(), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn alignment_format() {
        let tags = vec!["B".to_string(), "O".to_string()];
        assert_eq!(format_alignment(1, &tags), "# distance: 1\nB\nO\n");
    }
}
