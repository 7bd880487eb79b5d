use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use fsmt_core::annotator::Annotator;
use fsmt_core::corpus::{read_annotated, read_contrastive, read_lexicon, read_parallel, split, SplitConfig, TsvWriter};
use fsmt_core::hyperopt::{search, SearchData, SearchSpace};
use fsmt_core::lexicon::{extract_lexicon, parse_annotated};
use fsmt_core::metric::{matched_accuracy, EvalEntry};
use fsmt_core::mlm::{evaluate_masked, MaskConfig};
use fsmt_core::model::{
    build_vocabularies, decode, encode_pair, load_checkpoint, pairs_from_annotated, save_checkpoint, train, Checkpoint,
    DecodeConfig, TextPair, TrainConfig, TrainError,
};
use fsmt_core::{stage_seed, FormalityLabel};
use fsmt_service::{AppState, LoadedModel};

use crate::config::PipelineConfig;
use crate::error::{CliError, Context};
use crate::{Cli, Command, ModelArgs};

struct Env {
    cfg: PipelineConfig,
    work_dir: PathBuf,
}

impl Env {
    fn artifact(&self, name: &str) -> PathBuf {
        self.work_dir.join(name)
    }

    fn ensure_work_dir(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.work_dir).category("io", || format!("creating {}", self.work_dir.display()))
    }

    fn seed(&self, stage: &str) -> u64 {
        stage_seed(self.cfg.seed, stage)
    }

    fn checkpoint_path(&self, args: &ModelArgs) -> PathBuf {
        args.checkpoint
            .clone()
            .unwrap_or_else(|| self.artifact("checkpoint.fmt"))
    }

    fn load_model(&self, args: &ModelArgs) -> Result<Checkpoint, CliError> {
        let path = self.checkpoint_path(args);
        if !path.exists() {
            return Err(CliError::new(
                "no-checkpoint",
                format!("{} does not exist; run `fsmt train` first", path.display()),
            ));
        }
        load_checkpoint(&path).category("checkpoint", || path.display().to_string())
    }

    fn input(&self, flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
        flag.or_else(|| configured.clone()).ok_or_else(|| {
            CliError::new(
                "config",
                format!("no {what} file; pass --{what} or set it in the config"),
            )
        })
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.artifact(name);
        let mut text = serde_json::to_string_pretty(value).category("io", || name.to_string())?;
        text.push('\n');
        fs::write(&path, text).category("io", || format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).category("io", || "report".to_string())?;
    println!("{text}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = PipelineConfig::load(cli.common.config.as_deref())?;
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    let work_dir = cli
        .common
        .work_dir
        .or_else(|| cfg.work_dir.clone())
        .unwrap_or_else(|| PathBuf::from("work"));
    let env = Env { cfg, work_dir };
    match cli.command {
        Command::ExtractLexicon { contrastive } => extract(&env, contrastive),
        Command::Annotate { parallel, lexicon } => annotate(&env, parallel, lexicon),
        Command::Train { annotated, epochs } => cmd_train(&env, annotated, epochs),
        Command::Search {
            annotated,
            budget,
            epochs_per_trial,
        } => cmd_search(&env, annotated, budget, epochs_per_trial),
        Command::Translate {
            text,
            formality,
            beams,
            max_length,
            model,
        } => translate(&env, &text, formality, beams, max_length, &model),
        Command::EvalMetric {
            contrastive,
            hypotheses,
            formality,
            mode,
            model,
        } => eval_metric(&env, contrastive, hypotheses, formality, mode, &model),
        Command::EvalMasked {
            annotated,
            verbose,
            model,
        } => eval_masked(&env, annotated, verbose, &model),
        Command::Serve {
            host,
            port,
            lexicon,
            model,
        } => serve(&env, host, port, lexicon, &model),
    }
}

fn extract(env: &Env, contrastive: Option<PathBuf>) -> Result<(), CliError> {
    let path = env.input(contrastive, &env.cfg.contrastive, "contrastive")?;
    let records = read_contrastive(&path).map_err(CliError::corpus)?;
    let lexicon =
        extract_lexicon(&records, &env.cfg.normalization).category("corpus", || path.display().to_string())?;
    env.ensure_work_dir()?;
    env.write_json("lexicon.json", &lexicon)?;
    let report = lexicon.report();
    env.write_json("lexicon_report.json", &report)?;
    print_json(&report)
}

fn annotate(env: &Env, parallel: Option<PathBuf>, lexicon: Option<PathBuf>) -> Result<(), CliError> {
    let path = env.input(parallel, &env.cfg.parallel, "parallel")?;
    let lexicon_path = lexicon.unwrap_or_else(|| env.artifact("lexicon.json"));
    let lexicon = read_lexicon(&lexicon_path).map_err(CliError::corpus)?;
    let pairs = read_parallel(&path).map_err(CliError::corpus)?;
    env.ensure_work_dir()?;
    let annotator = Annotator::new(&lexicon, env.cfg.normalization.clone());
    let mut stream = annotator.annotate_stream(pairs, 1024);
    let out_path = env.artifact("annotated.tsv");
    let mut out = TsvWriter::create(&out_path).map_err(CliError::corpus)?;
    for result in stream.by_ref() {
        let r = result.category("annotate", || path.display().to_string())?;
        out.write_row(&[&r.source_text, &r.target_tagged, r.label.as_str()])
            .map_err(CliError::corpus)?;
    }
    out.finish().map_err(CliError::corpus)?;
    let report = stream.report();
    env.write_json("distribution.json", &report)?;
    print_json(&report)
}

struct Prepared {
    train: Vec<TextPair>,
    val: Vec<TextPair>,
    src_vocab: fsmt_core::model::Vocabulary,
    tgt_vocab: fsmt_core::model::Vocabulary,
}

fn prepare(env: &Env, annotated: Option<PathBuf>) -> Result<Prepared, CliError> {
    let path = annotated.unwrap_or_else(|| env.artifact("annotated.tsv"));
    let records = read_annotated(&path).map_err(CliError::corpus)?;
    let pairs = pairs_from_annotated(&records).category("corpus", || path.display().to_string())?;
    let split_cfg = SplitConfig {
        validation_fraction: env.cfg.validation_fraction(),
        seed: env.seed("split"),
    };
    let (train, val) = split(&pairs, &split_cfg).map_err(|e| match e {
        fsmt_core::corpus::CorpusError::InvalidSplit(m) => CliError::new("config", m),
        other => CliError::corpus(other),
    })?;
    let (src_vocab, tgt_vocab) = build_vocabularies(&train, &env.cfg.normalization, env.cfg.min_freq());
    Ok(Prepared {
        train,
        val,
        src_vocab,
        tgt_vocab,
    })
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    train_pairs: usize,
    val_pairs: usize,
    final_train_loss: Option<f64>,
    val_loss: Option<f64>,
    val_accuracy: Option<f64>,
}

fn cmd_train(env: &Env, annotated: Option<PathBuf>, epochs: Option<usize>) -> Result<(), CliError> {
    let data = prepare(env, annotated)?;
    let config = env.cfg.model.to_config(&data.src_vocab, &data.tgt_vocab);
    config.validate().category("config", || "model".to_string())?;
    let norm = &env.cfg.normalization;
    let encode = |pairs: &[TextPair]| -> Vec<_> {
        pairs
            .iter()
            .map(|p| encode_pair(p, &data.src_vocab, &data.tgt_vocab, &config, norm))
            .collect()
    };
    let tc = TrainConfig {
        epochs: epochs.unwrap_or(env.cfg.train.epochs),
        seed: env.seed("train"),
        refresh_every: None,
        ..env.cfg.train.clone()
    };
    env.ensure_work_dir()?;
    let (params, history) = match train(&encode(&data.train), &encode(&data.val), &config, &tc) {
        Ok(out) => out,
        Err(TrainError::Diverged {
            epoch, reason, history, ..
        }) => {
            fs::write(env.artifact("history.csv"), history.to_csv()).category("io", || "history.csv".to_string())?;
            env.write_json("history.json", &history)?;
            return Err(CliError::new("diverged", format!("epoch {epoch}: {reason}")));
        }
        Err(e) => return Err(CliError::new("train", e.to_string())),
    };
    let checkpoint = Checkpoint {
        config,
        params,
        src_vocab: data.src_vocab,
        tgt_vocab: data.tgt_vocab,
        norm: norm.clone(),
    };
    let path = env.artifact("checkpoint.fmt");
    save_checkpoint(&checkpoint, &path).category("io", || path.display().to_string())?;
    fs::write(env.artifact("history.csv"), history.to_csv()).category("io", || "history.csv".to_string())?;
    env.write_json("history.json", &history)?;
    let last = history.epochs.last();
    print_json(&TrainSummary {
        epochs: history.epochs.len(),
        train_pairs: data.train.len(),
        val_pairs: data.val.len(),
        final_train_loss: last.map(|e| e.train_loss),
        val_loss: last.and_then(|e| e.val_loss),
        val_accuracy: last.and_then(|e| e.val_accuracy),
    })
}

fn cmd_search(
    env: &Env,
    annotated: Option<PathBuf>,
    budget: Option<usize>,
    epochs_per_trial: Option<usize>,
) -> Result<(), CliError> {
    let data = prepare(env, annotated)?;
    let space = SearchSpace {
        trial_budget: budget.unwrap_or(env.cfg.search.trial_budget),
        epochs_per_trial: epochs_per_trial.unwrap_or(env.cfg.search.epochs_per_trial),
        seed: env.seed("search"),
        ..env.cfg.search.clone()
    };
    let search_data = SearchData {
        train: &data.train,
        val: &data.val,
        src_vocab: &data.src_vocab,
        tgt_vocab: &data.tgt_vocab,
        norm: &env.cfg.normalization,
    };
    let result = search(&space, &search_data, &env.cfg.train).map_err(|e| CliError::new("search", e.to_string()))?;
    env.ensure_work_dir()?;
    let log_path = env.artifact("trials.jsonl");
    let file = fs::File::create(&log_path).category("io", || log_path.display().to_string())?;
    result
        .write_log(std::io::BufWriter::new(file))
        .category("io", || log_path.display().to_string())?;
    #[derive(Serialize)]
    struct Best<'a> {
        best_config: &'a fsmt_core::hyperopt::TrialConfig,
        best_accuracy: f64,
    }
    let best = Best {
        best_config: &result.best_config,
        best_accuracy: result.best_accuracy,
    };
    env.write_json("best_config.json", &best)?;
    print_json(&best)
}

fn translate(
    env: &Env,
    text: &str,
    formality: FormalityLabel,
    beams: usize,
    max_length: usize,
    args: &ModelArgs,
) -> Result<(), CliError> {
    let model = env.load_model(args)?;
    let dcfg = DecodeConfig {
        max_length,
        num_beams: beams,
        ..Default::default()
    };
    let hypothesis = decode(&model, text, formality, &dcfg).category("decode", || "translate".to_string())?;
    println!("{}", hypothesis.text);
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let file = fs::File::open(path).map_err(|e| {
        let category = if e.kind() == std::io::ErrorKind::NotFound {
            "missing-file"
        } else {
            "io"
        };
        CliError::new(category, format!("{}: {e}", path.display()))
    })?;
    BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .category("io", || path.display().to_string())
}

fn eval_metric(
    env: &Env,
    contrastive: Option<PathBuf>,
    hypotheses: Option<PathBuf>,
    formality: FormalityLabel,
    mode: Option<fsmt_core::metric::MatchMode>,
    args: &ModelArgs,
) -> Result<(), CliError> {
    let path = env.input(contrastive, &env.cfg.contrastive, "contrastive")?;
    let records = read_contrastive(&path).map_err(CliError::corpus)?;
    let hyps = match hypotheses {
        Some(h) => {
            let lines = read_lines(&h)?;
            if lines.len() != records.len() {
                return Err(CliError::new(
                    "input",
                    format!(
                        "{} has {} lines but the contrastive set has {}",
                        h.display(),
                        lines.len(),
                        records.len()
                    ),
                ));
            }
            lines
        }
        None => {
            let model = env.load_model(args)?;
            records
                .iter()
                .map(|r| decode(&model, &r.source_text, formality, &DecodeConfig::default()).map(|h| h.text))
                .collect::<Result<_, _>>()
                .category("decode", || "eval-metric".to_string())?
        }
    };
    let entries = records
        .iter()
        .zip(hyps)
        .enumerate()
        .map(|(i, (r, hypothesis))| {
            let line = || format!("{} line {}", path.display(), i + 1);
            Ok(EvalEntry {
                hypothesis,
                formal_ref: parse_annotated(&r.formal_ref_tagged).category("corpus", line)?,
                informal_ref: parse_annotated(&r.informal_ref_tagged).category("corpus", line)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let result = matched_accuracy(&entries, mode.unwrap_or(env.cfg.metric_mode))
        .map_err(|e| CliError::new("input", e.to_string()))?;
    print_json(&result)
}

fn eval_masked(env: &Env, annotated: Option<PathBuf>, verbose: bool, args: &ModelArgs) -> Result<(), CliError> {
    let model = env.load_model(args)?;
    let path = annotated.unwrap_or_else(|| env.artifact("annotated.tsv"));
    let pairs: Vec<(String, String)> = read_annotated(&path)
        .map_err(CliError::corpus)?
        .into_iter()
        .map(|r| (r.source_text, r.target_tagged))
        .collect();
    let cfg = MaskConfig {
        seed: env.seed("mask"),
        ..env.cfg.mask.clone()
    };
    cfg.validate().category("config", || "mask".to_string())?;
    let report = evaluate_masked(&pairs, &model, &cfg, verbose).category("eval", || path.display().to_string())?;
    print_json(&report)
}

fn serve(
    env: &Env,
    host: Option<String>,
    port: Option<u16>,
    lexicon: Option<PathBuf>,
    args: &ModelArgs,
) -> Result<(), CliError> {
    let checkpoint = env.checkpoint_path(args);
    if !checkpoint.exists() {
        return Err(CliError::new(
            "no-checkpoint",
            format!("{} does not exist; run `fsmt train` first", checkpoint.display()),
        ));
    }
    let lexicon = lexicon.or_else(|| Some(env.artifact("lexicon.json")).filter(|p| p.exists()));
    let model = LoadedModel::from_files(&checkpoint, lexicon.as_deref())
        .map_err(|e| CliError::new("checkpoint", e.to_string()))?;
    let mut service = env.cfg.service.clone();
    if let Some(host) = host {
        service.host = host;
    }
    if let Some(port) = port {
        service.port = port;
    }
    std::io::stderr().flush().ok();
    fsmt_service::serve_blocking(&service, AppState::new(Some(model)))
        .map_err(|e| CliError::new("service", e.to_string()))
}
