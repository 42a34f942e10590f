use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use slidefuse::io::{
    gen_classification_dataset, gen_survival_dataset, load_checkpoint, read_bag, read_dataset, save_checkpoint,
    write_dataset, write_meta, Checkpoint, Dataset, RunConfig,
};
use slidefuse::metrics::{km_estimate, km_svg, log_rank, stratify_by_risk, write_km_csv, LogRank, RiskGroup};
use slidefuse::mil::{complexity_probe, write_patch_scores, MilConfig, MilEncoder};
use slidefuse::model::{Model, SampleInput};
use slidefuse::numkit::ParameterStore;
use slidefuse::objectives::Task;
use slidefuse::trainer::{evaluate, prepare, split_samples, train, write_history, EvalReport};
use slidefuse::{Error, Result};

#[derive(Parser)]
#[command(name = "slidefuse", version, about = "Bag-of-patches MIL with graph, clinical and state-space branches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Classification,
    Survival,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset directory.
    Gen {
        kind: GenKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory; writes checkpoint.json and history.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the validation split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export per-patch selector scores for one bag.
    Scores {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bag: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the MIL encoder over growing bag sizes.
    ProbeComplexity {
        #[arg(long, value_delimiter = ',', default_value = "4096,8192,16384")]
        sizes: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("slidefuse: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingFile(_) => 3,
        Error::Config(_) => 4,
        Error::Schema(_) => 5,
        Error::BadMagic { .. } | Error::Truncated { .. } | Error::Version { .. } => 6,
        Error::Checkpoint(_) => 7,
        _ => 1,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

fn load_data(dir: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let fields = if cfg.clinical.enabled { cfg.clinical.fields.as_slice() } else { &[] };
    read_dataset(dir, cfg.task, &cfg.clinical.id_column, fields)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { kind, config, out } => {
            let cfg = RunConfig::load(&config)?;
            let (data, meta) = match kind {
                GenKind::Classification => gen_classification_dataset(cfg.data.seed, &cfg.data.classification)?,
                GenKind::Survival => gen_survival_dataset(cfg.data.seed, &cfg.data.survival)?,
            };
            create_dir(&out)?;
            write_dataset(&out, &data, &cfg.clinical.id_column)?;
            write_meta(&out, &meta)?;
            println!("wrote {} samples to {}", data.samples.len(), out.display());
        }
        Command::Train { config, data, out } => {
            let cfg = RunConfig::load(&config)?;
            let ds = load_data(&data, &cfg)?;
            let outcome = train(&ds, &cfg)?;
            create_dir(&out)?;
            save_checkpoint(&out.join("checkpoint.json"), &outcome.checkpoint)?;
            write_history(&out.join("history.csv"), &outcome.history)?;
            if let Some(b) = &outcome.checkpoint.best {
                println!("best epoch {} val metric {:.4} ({} epochs run)", b.epoch, b.metric, outcome.history.len());
            }
        }
        Command::Eval { checkpoint, data, out } => eval(&checkpoint, &data, &out)?,
        Command::Scores { checkpoint, bag, out } => {
            let ck = load_checkpoint(&checkpoint)?;
            let model = Model::new(ck.config.model_config(), ck.d_patch, ck.schema.as_ref())?;
            let bag = read_bag(&bag)?;
            if bag.dim() != ck.d_patch {
                return Err(Error::Schema(format!("bag has {} features, checkpoint expects {}", bag.dim(), ck.d_patch)));
            }
            let graph = model.build_graph(&bag)?;
            let input = SampleInput { bag: &bag, graph: graph.as_ref(), clinical: None };
            let scores = model.patch_scores(&ck.store, &input)?;
            write_patch_scores(&out, &bag.coords, &scores)?;
        }
        Command::ProbeComplexity { sizes, out, dim, repeats, seed } => {
            let enc = MilEncoder::new(MilConfig::default(), dim, "mil")?.without_instance_head();
            let mut store = ParameterStore::<f32>::new();
            enc.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let r = complexity_probe(&enc, &store, &sizes, repeats.max(1), seed)?;
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["n", "seconds", "ratio_to_previous"])?;
            for (i, (n, s)) in r.sizes.iter().zip(&r.seconds).enumerate() {
                let ratio = if i == 0 { String::new() } else { r.ratios[i - 1].to_string() };
                w.write_record([n.to_string(), s.to_string(), ratio])?;
            }
            w.flush().map_err(|e| Error::io(&out, e))?;
            println!("fitted exponent {:.3}", r.exponent);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalFile {
    task: Task,
    n: usize,
    accuracy: Option<f64>,
    auc: Option<f64>,
    c_index: Option<f64>,
    log_rank: Option<LogRank>,
}

fn eval(checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let ck: Checkpoint = load_checkpoint(checkpoint)?;
    let ds = load_data(data, &ck.config)?;
    let (_, val) = split_samples(&ds, &ck.config.train)?;
    if let Some(s) = val.iter().find(|s| s.bag.dim() != ck.d_patch) {
        return Err(Error::Schema(format!("bag {} has {} features, checkpoint expects {}", s.id, s.bag.dim(), ck.d_patch)));
    }
    let model = Model::new(ck.config.model_config(), ck.d_patch, ck.schema.as_ref())?;
    let prepared = prepare(&model, ck.schema.as_ref(), &val)?;
    let report: EvalReport = evaluate(&model, &ck.store, &prepared)?;
    create_dir(out)?;

    let mut w = csv::Writer::from_path(out.join("predictions.csv"))?;
    w.write_record(["id", "prediction"])?;
    for (s, p) in val.iter().zip(&report.predictions) {
        w.write_record([s.id.clone(), p.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;

    let mut lr = None;
    if ck.config.task == Task::Survival {
        let groups = stratify_by_risk(&report.predictions)?;
        let split = |g: RiskGroup| {
            val.iter().zip(&groups).filter(|(_, &x)| x == g).filter_map(|(s, _)| s.target.survival()).collect::<Vec<_>>()
        };
        let (low, high) = (split(RiskGroup::Low), split(RiskGroup::High));
        let (kl, kh) = (km_estimate(&low)?, km_estimate(&high)?);
        let curves = [("low", &kl), ("high", &kh)];
        write_km_csv(&out.join("km.csv"), &curves)?;
        let svg = km_svg(&curves, "Kaplan-Meier by predicted risk");
        std::fs::write(out.join("km.svg"), svg).map_err(|e| Error::io(out, e))?;
        lr = match log_rank(&low, &high) {
            Ok(r) => Some(r),
            Err(Error::NoEvents(m)) => {
                eprintln!("slidefuse: log-rank skipped: {m}");
                None
            }
            Err(e) => return Err(e),
        };
    }
    let file = EvalFile {
        task: report.task,
        n: report.n,
        accuracy: report.accuracy,
        auc: report.auc,
        c_index: report.c_index,
        log_rank: lr,
    };
    write_json(&out.join("metrics.json"), &file)?;
    match (file.auc, file.c_index) {
        (Some(auc), _) => println!("accuracy {:.4} auc {auc:.4}", file.accuracy.unwrap_or(f64::NAN)),
        (_, Some(c)) => println!(
            "c-index {c:.4} log-rank p {}",
            file.log_rank.as_ref().map_or("n/a".to_string(), |l| format!("{:.3e}", l.p_value))
        ),
        _ => {}
    }
    Ok(())
}
