use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mug_core::data::{generate, Dataset, Split};
use mug_core::meta::{FrozenBank, LabelStore};
use mug_core::metrics::{label_quality, PerModality};
use mug_core::model::export_embeddings;
use mug_core::nn::checkpoint;
use mug_core::pipeline::{build_model, evaluate, run_all, run_stage1, run_stage2, run_stage3, Config, RunArtifacts, RunLog};
use mug_core::textio::write_atomic;
use mug_core::Result;

#[derive(Parser, Debug)]
#[command(
    name = "mug",
    version,
    about = "Three-stage unimodal label learning on synthetic multimodal data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// `key = value` config file; defaults apply to missing keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (train/val/test JSONL plus baseline.json)
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Pre-train and write the stage-1 checkpoint and frozen bank
    Stage1 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Meta-learn unimodal labels from a frozen bank
    Stage2 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bank: PathBuf,
    },
    /// Joint training from scratch with learned labels, then test evaluation
    Stage3 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// All three stages; generates data from the config unless --data is given
    RunAll {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare a label store with the ground truth of the training split
    EvalLabels {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Write unimodal and projected embeddings of one split as CSV rows
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Val)]
        split: SplitName,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_log(dir: &Path, name: &str, log: &RunLog) -> Result<()> {
    write_atomic(&dir.join(name), log.to_text().as_bytes())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { common } => {
            let cfg = load_config(&common)?;
            let (data, baseline) = generate(&cfg.data)?;
            data.save(&common.out)?;
            let json = serde_json::to_string_pretty(&baseline).expect("baseline serializes");
            write_atomic(&common.out.join("baseline.json"), format!("{json}\n").as_bytes())?;
            println!(
                "wrote {} / {} / {} samples to {}",
                data.train.len(),
                data.val.len(),
                data.test.len(),
                common.out.display()
            );
        }
        Command::Stage1 { common, data } => {
            let cfg = load_config(&common)?;
            let data = Dataset::load(&data)?;
            let mut log = RunLog::default();
            let out = run_stage1(&cfg, &data.train.observations, &mut log)?;
            let paths = RunArtifacts::in_dir(&common.out);
            checkpoint::save(&out.params, &paths.stage1_checkpoint)?;
            out.bank.save(&paths.frozen_bank)?;
            write_log(&common.out, "stage1.log", &log)?;
            println!("{}", paths.frozen_bank.display());
        }
        Command::Stage2 { common, bank } => {
            let cfg = load_config(&common)?;
            let bank = FrozenBank::load(&bank)?;
            let mut log = RunLog::default();
            let out = run_stage2(&cfg, &bank, &mut log)?;
            let paths = RunArtifacts::in_dir(&common.out);
            out.labels.save(&paths.label_store)?;
            write_log(&common.out, "stage2.log", &log)?;
            println!("{}", paths.label_store.display());
        }
        Command::Stage3 { common, data, labels } => {
            let cfg = load_config(&common)?;
            let data = Dataset::load(&data)?;
            let labels = LabelStore::load(cfg.rho, &labels)?;
            let mut log = RunLog::default();
            let out = run_stage3(&cfg, &data.train.observations, &data.val.observations, &labels, &mut log)?;
            let report = evaluate(&cfg, &out, &data.test, &data.train, &labels)?;
            let paths = RunArtifacts::in_dir(&common.out);
            checkpoint::save(&out.params, &paths.stage3_checkpoint)?;
            write_atomic(&paths.metrics, report.to_json().as_bytes())?;
            write_log(&common.out, "stage3.log", &log)?;
            print!("{}", report.to_json());
        }
        Command::RunAll { common, data } => {
            let cfg = load_config(&common)?;
            let data = match data {
                Some(dir) => Dataset::load(&dir)?,
                None => generate(&cfg.data)?.0,
            };
            write_atomic(&common.out.join("config.txt"), cfg.to_text().as_bytes())?;
            let summary = run_all(&cfg, &data, &common.out)?;
            print!("{}", summary.report.to_json());
        }
        Command::EvalLabels { common, data, labels } => {
            let cfg = load_config(&common)?;
            let data = Dataset::load(&data)?;
            let labels = LabelStore::load(cfg.rho, &labels)?;
            let q = label_quality(&labels, &data.train)?;
            let json = serde_json::json!({
                "label_mae": PerModality::from_array(q.label_mae),
                "baseline_mae": PerModality::from_array(q.baseline_mae),
                "n_eval": q.n,
            });
            let text = format!("{}\n", serde_json::to_string_pretty(&json).expect("json serializes"));
            write_atomic(&common.out.join("label_quality.json"), text.as_bytes())?;
            print!("{text}");
        }
        Command::ExportEmbeddings {
            common,
            data,
            checkpoint: ckpt,
            split,
        } => {
            let cfg = load_config(&common)?;
            let data = Dataset::load(&data)?;
            let params = checkpoint::load(&ckpt)?;
            let model = build_model(&cfg, data.feature_dims()?)?;
            let rows: &Split = match split {
                SplitName::Train => &data.train,
                SplitName::Val => &data.val,
                SplitName::Test => &data.test,
            };
            let text = export_embeddings(&model, &params, &rows.observations)?;
            let path = common.out.join("embeddings.csv");
            write_atomic(&path, text.as_bytes())?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
