use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gada::dictionary::Dictionary;
use gada::facemodel::{generate_synthetic_model, FaceModel};
use gada::harness::{
    means, report, run_sequence_with, write_outputs, AttackKind, Dataset, Experiment, ExperimentConfig, Mode,
};
use gada::{Error, Result};

#[derive(Parser)]
#[command(name = "gada", version, about = "Hard-label face-verification attacks in UV texture space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Attack seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct AttackArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    attack: Option<AttackKind>,
    /// dodging or impersonation.
    #[arg(long)]
    mode: Option<Mode>,
    /// Per-image query budget.
    #[arg(long)]
    budget: Option<usize>,
    /// Dictionary file, loaded if present and saved after each image.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Fixed detector threshold instead of calibrating on benign traffic.
    #[arg(long)]
    detector_threshold: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic face model to `<out>/model.tensors`.
    GenModel(Common),
    /// Write model and dataset (with calibrated threshold) under `<out>`.
    GenData(Common),
    /// Run one attack sequence and write traces and summaries.
    Attack(AttackArgs),
    /// Run one attack sequence behind the stateful detector.
    DetectEval(AttackArgs),
    /// Recompute summaries from the trace files under `<out>/traces`.
    Metrics(AttackArgs),
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.out_dir = Some(common.out.clone());
    Ok(cfg)
}

fn apply_attack_args(args: &AttackArgs) -> Result<ExperimentConfig> {
    let mut cfg = load_config(&args.common)?;
    if let Some(a) = args.attack {
        cfg.attack = a;
    }
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    if let Some(d) = &args.dict {
        cfg.dict_path = Some(d.clone());
    }
    if let Some(t) = args.detector_threshold {
        cfg.detector.threshold = t;
        cfg.calibrate_detector = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn build_model(cfg: &ExperimentConfig) -> Result<FaceModel> {
    let m = &cfg.model;
    Ok(generate_synthetic_model(m.seed, m.grid_n, m.n_id, m.n_exp)?.quantize_f32())
}

/// Uses `<out>/model.tensors` and `<out>/data.tensors` when both exist.
fn experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Experiment> {
    let (model_path, data_path) = (out.join("model.tensors"), out.join("data.tensors"));
    if model_path.exists() && data_path.exists() {
        Experiment::from_parts(cfg, FaceModel::load(&model_path)?, Dataset::load(&data_path)?)
    } else {
        Experiment::prepare(cfg)
    }
}

fn attack(args: &AttackArgs, detection: bool) -> Result<()> {
    let mut cfg = apply_attack_args(args)?;
    cfg.detection |= detection;
    let out = &args.common.out;
    create_dir(out)?;
    let exp = experiment(&cfg, out)?;
    let dict = match &cfg.dict_path {
        Some(p) if p.exists() && cfg.attack.dictionary_policy().is_some() => Some(Dictionary::load(p)?),
        _ => None,
    };
    let dict_path = cfg.dict_path.clone();
    let result = run_sequence_with(&exp, &cfg, dict, |d| match &dict_path {
        Some(p) => d.save(p),
        None => Ok(()),
    })?;
    let rows = write_outputs(out, &result, &cfg)?;
    if let Ok(m) = means(&rows) {
        println!(
            "{} {:?}: {} images, mean norms {:?}, mean queries_to {:?}, mean detections {}",
            m.attack, cfg.mode, m.images, m.norms, m.queries_to, m.detections
        );
    }
    if detection {
        for r in &rows {
            println!("{} detections={}", r.image, r.detections);
        }
    }
    Ok(())
}

fn metrics(args: &AttackArgs) -> Result<()> {
    let cfg = apply_attack_args(args)?;
    let traces = args.common.out.join("traces");
    let prefix = format!("{}_", cfg.attack.name());
    let mut files: Vec<PathBuf> = std::fs::read_dir(&traces)
        .map_err(|e| Error::Io {
            path: traces.clone(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&prefix) && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    let metric = gada::harness::report_metric(cfg.attack);
    let mut rows = Vec::new();
    for f in &files {
        let records = report::read_trace(f)?;
        let image = f
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.rsplit('_').next())
            .unwrap_or("?")
            .to_string();
        let (norms, queries_to) =
            gada::harness::compute_metrics(&records, &cfg.budgets, &cfg.thresholds, cfg.budget, metric);
        rows.push(gada::harness::MetricsRow {
            image,
            attack: cfg.attack.name().into(),
            norms,
            queries_to,
            detections: records.iter().filter(|r| r.detected).count(),
        });
    }
    let path = args.common.out.join(format!("summary_{}_recomputed.csv", cfg.attack.name()));
    report::write_summary(&path, &cfg.budgets, &cfg.thresholds, &rows)?;
    println!("{} rows -> {}", rows.len(), path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenModel(common) => {
            let cfg = load_config(&common)?;
            create_dir(&common.out)?;
            let path = common.out.join("model.tensors");
            build_model(&cfg)?.save(&path)?;
            println!("model -> {}", path.display());
        }
        Command::GenData(common) => {
            let cfg = load_config(&common)?;
            create_dir(&common.out)?;
            let exp = Experiment::prepare(&cfg)?;
            exp.model.save(common.out.join("model.tensors"))?;
            let path = common.out.join("data.tensors");
            exp.dataset.save(&path)?;
            println!(
                "{} pairs, threshold {:?} -> {}",
                exp.dataset.len(),
                exp.dataset.threshold,
                path.display()
            );
        }
        Command::Attack(args) => attack(&args, false)?,
        Command::DetectEval(args) => attack(&args, true)?,
        Command::Metrics(args) => metrics(&args)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
