//! Command-line interface.
//!
//! Subcommands: `tokenize`, `star-sub`, `gen-corpus`, `gen-conformers`,
//! `pretrain`, `finetune`, `evaluate`, `embed`. Progress and diagnostics go
//! to stderr (silenced by `--quiet`); results go to files and stdout. Exit
//! codes: 0 success, 1 usage, 2 data/config error, 3 numeric failure.

pub mod checkpoint;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointError, CheckpointMeta, KIND_FINETUNED,
    KIND_PRETRAINED,
};

use crate::config::{load_config_file, ConfigError, RunConfig};
use crate::conformer::{add_virtual_atom, chain_embed, load_conformers, write_conformers, ConformerError};
use crate::finetune::{
    evaluate_model, run_cross_validation, train_full_model, FinetuneConfig, FinetuneError,
    Modality, PropertyDataset, PropertyRecord,
};
use crate::numerics::NumericsError;
use crate::pretrain::{
    run_pretraining, write_trace, PretrainConfig, PretrainError, TaskToggles,
};
use crate::psmiles::{
    build_vocabulary, synthesize_corpus, tokenize, transform_stars, PSmiles, PsmilesError,
    StarStrategy, Vocabulary,
};

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 1;
const EXIT_DATA: i32 = 2;
const EXIT_NUMERIC: i32 = 3;

#[derive(Parser)]
#[command(
    name = "polymm",
    version,
    about = "Multimodal polymer pretraining and property regression",
    disable_help_subcommand = true
)]
struct Cli {
    /// Base RNG seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct CommonPretrain {
    /// Flat JSON config file (keys override the desk-scale defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override: optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Override: learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Override: batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Override: star strategy (keep|remove|substitute).
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a P-SMILES string and print the tokens.
    Tokenize { psmiles: String },
    /// Apply a star strategy to a P-SMILES string and print the result.
    #[command(name = "star-sub")]
    StarSub {
        #[arg(long)]
        strategy: String,
        psmiles: String,
    },
    /// Generate a synthetic P-SMILES corpus (and optional heavy-atom CSV).
    #[command(name = "gen-corpus")]
    GenCorpus {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write a psmiles,value CSV with the heavy-atom count.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Embed a corpus into deterministic chain-layout conformers (JSONL).
    #[command(name = "gen-conformers")]
    GenConformers {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "substitute")]
        strategy: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multitask pretraining; writes a checkpoint and a loss-trace CSV.
    Pretrain {
        #[command(flatten)]
        common: CommonPretrain,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        conformers: PathBuf,
        /// Comma-separated task list: mlm,denoise,contrast.
        #[arg(long, default_value = "mlm,denoise,contrast")]
        tasks: String,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV path (default: <out>.trace.csv).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// k-fold cross-validated fine-tuning from a pretrained checkpoint.
    Finetune {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "1d")]
        modality: String,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Report JSON output path.
        #[arg(long)]
        out: PathBuf,
        /// Additionally fine-tune on the full dataset and save the model.
        #[arg(long)]
        save_model: Option<PathBuf>,
        /// Train the head only, leaving encoder parameters frozen.
        #[arg(long)]
        freeze_encoder: bool,
    },
    /// Evaluate a finetuned checkpoint on a dataset (prints JSON metrics).
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "1d")]
        modality: String,
    },
    /// Export per-polymer embeddings as CSV.
    Embed {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "1d")]
        modality: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors mapped onto the documented exit codes.
enum CliError {
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

fn numeric_or_data(e: &NumericsError, text: String) -> CliError {
    match e {
        NumericsError::NumericFailure(_) | NumericsError::ZeroVector(_) => CliError::Numeric(text),
        NumericsError::ShapeMismatch(_) => CliError::Data(text),
    }
}

impl From<PsmilesError> for CliError {
    fn from(e: PsmilesError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<ConformerError> for CliError {
    fn from(e: ConformerError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        let text = e.to_string();
        numeric_or_data(&e, text)
    }
}
impl From<PretrainError> for CliError {
    fn from(e: PretrainError) -> Self {
        let text = e.to_string();
        match &e {
            PretrainError::Numeric { .. } => CliError::Numeric(text),
            PretrainError::Numerics(inner) => numeric_or_data(inner, text),
            _ => CliError::Data(text),
        }
    }
}
impl From<FinetuneError> for CliError {
    fn from(e: FinetuneError) -> Self {
        let text = e.to_string();
        match &e {
            FinetuneError::Numerics(inner) => numeric_or_data(inner, text),
            _ => CliError::Data(text),
        }
    }
}
impl From<crate::seq_encoder::SeqError> for CliError {
    fn from(e: crate::seq_encoder::SeqError) -> Self {
        CliError::Data(e.to_string())
    }
}
impl From<crate::struct_encoder::StructError> for CliError {
    fn from(e: crate::struct_encoder::StructError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn io_data(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("cannot access {}: {e}", path.display()))
}

/// Parses argv (including the program name) and runs one subcommand,
/// returning the process exit code.
pub fn run_command(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the same error path; those
            // are successful outcomes.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let progress = Progress { quiet: cli.quiet };
    match cli.cmd {
        Command::Tokenize { psmiles } => {
            let p = PSmiles::new(psmiles)?;
            let tokens = tokenize(&p)?;
            println!("{}", tokens.tokens().join(" "));
            Ok(())
        }
        Command::StarSub { strategy, psmiles } => {
            let strategy = parse_strategy(&strategy)?;
            let p = PSmiles::new(psmiles)?;
            println!("{}", transform_stars(&p, strategy)?.text());
            Ok(())
        }
        Command::GenCorpus { count, out, csv } => {
            let seed = cli.seed.unwrap_or(RunConfig::default().seed);
            let corpus = synthesize_corpus(count, seed);
            let text: String = corpus
                .iter()
                .map(|p| format!("{}\n", p.text()))
                .collect();
            std::fs::write(&out, text).map_err(|e| io_data(&out, e))?;
            progress.say(&format!("wrote {} polymers to {}", count, out.display()));
            if let Some(csv_path) = csv {
                let records = corpus
                    .iter()
                    .map(|p| {
                        Ok(PropertyRecord {
                            psmiles: p.clone(),
                            value: p.heavy_atom_count()? as f64,
                        })
                    })
                    .collect::<Result<Vec<_>, PsmilesError>>()?;
                let ds = PropertyDataset::new("heavy-atoms".into(), records, None)?;
                ds.write_csv(&csv_path)?;
                progress.say(&format!("wrote property CSV to {}", csv_path.display()));
            }
            Ok(())
        }
        Command::GenConformers {
            corpus,
            strategy,
            out,
        } => {
            let strategy = parse_strategy(&strategy)?;
            let polymers = read_corpus(&corpus)?;
            let mut conformers = Vec::with_capacity(polymers.len());
            for p in &polymers {
                let converted = transform_stars(p, strategy)?;
                conformers.push(chain_embed(&converted)?);
            }
            write_conformers(&out, &conformers)?;
            progress.say(&format!(
                "embedded {} conformers ({} strategy) to {}",
                conformers.len(),
                strategy,
                out.display()
            ));
            Ok(())
        }
        Command::Pretrain {
            common,
            corpus,
            conformers,
            tasks,
            out,
            trace,
        } => cmd_pretrain(
            &progress, cli.seed, common, &corpus, &conformers, &tasks, &out, trace,
        ),
        Command::Finetune {
            config,
            data,
            checkpoint,
            modality,
            folds,
            epochs,
            out,
            save_model,
            freeze_encoder,
        } => cmd_finetune(
            &progress,
            cli.seed,
            config,
            &data,
            &checkpoint,
            &modality,
            folds,
            epochs,
            &out,
            save_model,
            freeze_encoder,
        ),
        Command::Evaluate {
            data,
            checkpoint,
            modality,
        } => cmd_evaluate(&data, &checkpoint, &modality),
        Command::Embed {
            data,
            checkpoint,
            modality,
            out,
        } => cmd_embed(&progress, &data, &checkpoint, &modality, &out),
    }
}

struct Progress {
    quiet: bool,
}

impl Progress {
    fn say(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

fn parse_strategy(s: &str) -> Result<StarStrategy, CliError> {
    StarStrategy::parse(s)
        .ok_or_else(|| CliError::Data(format!("unknown strategy {s:?} (keep|remove|substitute)")))
}

fn parse_modality(s: &str) -> Result<Modality, CliError> {
    Modality::parse(s).ok_or_else(|| CliError::Data(format!("unknown modality {s:?} (1d|3d|both)")))
}

fn read_corpus(path: &Path) -> Result<Vec<PSmiles>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_data(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let p = PSmiles::new(line)
            .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        out.push(p);
    }
    if out.is_empty() {
        return Err(CliError::Data(format!(
            "{}: corpus has no P-SMILES entries",
            path.display()
        )));
    }
    Ok(out)
}

fn resolve_config(
    file: Option<&Path>,
    base: RunConfig,
    seed_flag: Option<u64>,
) -> Result<RunConfig, CliError> {
    let mut cfg = match file {
        Some(path) => load_config_file(path, base)?,
        None => base,
    };
    if let Some(seed) = seed_flag {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[allow(clippy::too_many_arguments)]
fn cmd_pretrain(
    progress: &Progress,
    seed_flag: Option<u64>,
    common: CommonPretrain,
    corpus_path: &Path,
    conformers_path: &Path,
    tasks: &str,
    out: &Path,
    trace_path: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg = resolve_config(common.config.as_deref(), RunConfig::default(), seed_flag)?;
    if let Some(steps) = common.steps {
        cfg.steps = steps;
    }
    if let Some(lr) = common.lr {
        cfg.lr = lr;
    }
    if let Some(batch) = common.batch_size {
        cfg.batch_size = batch;
    }
    if let Some(strategy) = &common.strategy {
        cfg.strategy = strategy.clone();
    }
    cfg.validate()?;

    let toggles = TaskToggles::from_list(tasks).map_err(CliError::Data)?;
    if !toggles.any() {
        return Err(CliError::Data(
            "at least one task must be enabled (mlm,denoise,contrast)".into(),
        ));
    }
    let corpus = read_corpus(corpus_path)?;
    let conformers = load_conformers(conformers_path)?;
    let vocab = build_vocabulary(&corpus)?;
    let seq_cfg = cfg.seq_config(vocab.len());
    let struct_cfg = cfg.struct_config();
    let pre_cfg = PretrainConfig {
        batch_size: cfg.batch_size,
        steps: cfg.steps,
        lr: cfg.lr,
        tau: cfg.tau,
        noise_scale: cfg.noise_scale,
        mask_rate: cfg.mask_rate,
        contrast_dim: cfg.contrast_dim,
        seed: cfg.seed,
        strategy: cfg.star_strategy()?,
    };

    progress.say(&format!(
        "pretraining: {} polymers, tasks [{}], {} steps, seed {}",
        corpus.len(),
        toggles.label(),
        pre_cfg.steps,
        pre_cfg.seed
    ));
    let (params, trace) = run_pretraining(
        &corpus,
        &conformers,
        &vocab,
        &seq_cfg,
        &struct_cfg,
        &pre_cfg,
        &toggles,
    )?;
    for row in &trace {
        progress.say(&format!(
            "step={} l_1d={:.6} l_3d={:.6} l_contrast={:.6} total={:.6}",
            row.step, row.l_1d, row.l_3d, row.l_contrast, row.total
        ));
    }

    let trace_path = trace_path.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".trace.csv");
        PathBuf::from(p)
    });
    write_trace(&trace_path, &trace)?;
    let meta = CheckpointMeta {
        kind: KIND_PRETRAINED.into(),
        config: cfg,
        vocab: vocab.token_list().to_vec(),
        modality: None,
        dataset: None,
    };
    save_checkpoint(out, &params, &meta)?;
    progress.say(&format!(
        "checkpoint -> {}   trace -> {}",
        out.display(),
        trace_path.display()
    ));
    Ok(())
}

/// Loads a checkpoint plus a consistent effective config: overrides may
/// change training keys but never the architecture baked into the tensors.
fn load_checkpoint_with_config(
    checkpoint: &Path,
    config: Option<&Path>,
    seed_flag: Option<u64>,
) -> Result<(CheckpointMeta, crate::numerics::ParamStore, RunConfig, Vocabulary), CliError> {
    let (meta, params) = load_checkpoint(checkpoint)?;
    let cfg = resolve_config(config, meta.config.clone(), seed_flag)?;
    if !cfg.arch_matches(&meta.config) {
        return Err(CliError::Data(
            CheckpointError::VersionMismatch(
                "requested architecture differs from the checkpoint snapshot".into(),
            )
            .to_string(),
        ));
    }
    let vocab = Vocabulary::from_token_list(meta.vocab.clone())?;
    Ok((meta, params, cfg, vocab))
}

#[allow(clippy::too_many_arguments)]
fn cmd_finetune(
    progress: &Progress,
    seed_flag: Option<u64>,
    config: Option<PathBuf>,
    data: &Path,
    checkpoint: &Path,
    modality: &str,
    folds: Option<usize>,
    epochs: Option<usize>,
    out: &Path,
    save_model: Option<PathBuf>,
    freeze_encoder: bool,
) -> Result<(), CliError> {
    let modality = parse_modality(modality)?;
    let (meta, params, mut cfg, vocab) =
        load_checkpoint_with_config(checkpoint, config.as_deref(), seed_flag)?;
    if meta.kind != KIND_PRETRAINED {
        return Err(CliError::Data(format!(
            "finetune needs a pretrained checkpoint, got kind {:?}",
            meta.kind
        )));
    }
    if let Some(folds) = folds {
        cfg.folds = folds;
    }
    if let Some(epochs) = epochs {
        cfg.ft_epochs = epochs;
    }
    if freeze_encoder {
        cfg.freeze_encoder = true;
    }
    cfg.validate()?;

    let name = data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let ds = PropertyDataset::load_csv(data, &name, None)?;
    let seq_cfg = cfg.seq_config(vocab.len());
    let struct_cfg = cfg.struct_config();
    let ft = FinetuneConfig {
        folds: cfg.folds,
        epochs: cfg.ft_epochs,
        batch_size: cfg.ft_batch_size,
        lr: cfg.ft_lr,
        head_hidden: cfg.head_hidden,
        freeze_encoder: cfg.freeze_encoder,
        seed: cfg.seed,
        strategy: cfg.star_strategy()?,
    };
    progress.say(&format!(
        "fine-tuning {} ({} records, modality {}, {} folds, {} epochs)",
        ds.name,
        ds.len(),
        modality,
        ft.folds,
        ft.epochs
    ));
    let report = run_cross_validation(&ds, &params, &vocab, &seq_cfg, &struct_cfg, &ft, modality)?;
    for f in &report.folds {
        progress.say(&format!(
            "fold={} rmse={:.5} r2={:.5}",
            f.fold, f.rmse, f.r2
        ));
    }
    std::fs::write(out, report.to_json()).map_err(|e| io_data(out, e))?;
    print!("{}", report.to_table());

    if let Some(model_path) = save_model {
        progress.say("training full-data model for --save-model");
        let full = train_full_model(&ds, &params, &vocab, &seq_cfg, &struct_cfg, &ft, modality)?;
        let meta = CheckpointMeta {
            kind: KIND_FINETUNED.into(),
            config: cfg,
            vocab: vocab.token_list().to_vec(),
            modality: Some(modality.as_str().into()),
            dataset: Some(ds.name.clone()),
        };
        save_checkpoint(&model_path, &full, &meta)?;
        progress.say(&format!("model -> {}", model_path.display()));
    }
    Ok(())
}

fn cmd_evaluate(data: &Path, checkpoint: &Path, modality: &str) -> Result<(), CliError> {
    let modality = parse_modality(modality)?;
    let (meta, params, cfg, vocab) = load_checkpoint_with_config(checkpoint, None, None)?;
    if meta.kind != KIND_FINETUNED {
        return Err(CliError::Data(format!(
            "evaluate needs a finetuned checkpoint (with a regression head), got kind {:?}",
            meta.kind
        )));
    }
    if meta.modality.as_deref() != Some(modality.as_str()) {
        return Err(CliError::Data(format!(
            "checkpoint was finetuned with modality {:?}, requested {}",
            meta.modality.as_deref().unwrap_or("?"),
            modality
        )));
    }
    let name = data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let ds = PropertyDataset::load_csv(data, &name, None)?;
    let (rmse, r2) = evaluate_model(
        &ds,
        &params,
        &vocab,
        &cfg.seq_config(vocab.len()),
        &cfg.struct_config(),
        modality,
        cfg.star_strategy()?,
    )?;
    println!(
        "{}",
        serde_json::json!({ "dataset": ds.name, "modality": modality.as_str(), "rmse": rmse, "r2": r2 })
    );
    Ok(())
}

fn cmd_embed(
    progress: &Progress,
    data: &Path,
    checkpoint: &Path,
    modality: &str,
    out: &Path,
) -> Result<(), CliError> {
    let modality = parse_modality(modality)?;
    let (_, params, cfg, vocab) = load_checkpoint_with_config(checkpoint, None, None)?;
    let name = data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let ds = PropertyDataset::load_csv(data, &name, None)?;
    let seq_cfg = cfg.seq_config(vocab.len());
    let struct_cfg = cfg.struct_config();
    let strategy = cfg.star_strategy()?;

    let mut text = String::new();
    for r in &ds.records {
        let conformer = if modality.needs_struct() {
            let converted = transform_stars(&r.psmiles, strategy)?;
            Some(add_virtual_atom(&chain_embed(&converted)?))
        } else {
            None
        };
        let emb = crate::finetune::polymer_embedding(
            &r.psmiles,
            conformer.as_ref(),
            modality,
            &vocab,
            &seq_cfg,
            &struct_cfg,
            &params,
        )?;
        text.push_str(r.psmiles.text());
        text.push(',');
        text.push_str(&r.value.to_string());
        for x in emb {
            text.push(',');
            text.push_str(&x.to_string());
        }
        text.push('\n');
    }
    std::fs::write(out, text).map_err(|e| io_data(out, e))?;
    progress.say(&format!(
        "wrote {} embeddings ({}) to {}",
        ds.len(),
        modality,
        out.display()
    ));
    Ok(())
}
