//! `ibeam`: dataset generation, surrogate training, physics-informed
//! fine-tuning, evaluation, reporting, and verification oracles.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ibeam_surrogate::dataset::{generate, read_dataset, DatasetSpec, Task};
use ibeam_surrogate::evaluator::{self, EvalMetrics, ReportRow, Series};
use ibeam_surrogate::geometry::MeshResolution;
use ibeam_surrogate::gnn::{load_checkpoint, save_checkpoint, Arch, GraphData, ModelConfig};
use ibeam_surrogate::nn::Activation;
use ibeam_surrogate::trainer::{self, TrainConfig, TrainMode, TrainOutcome};
use ibeam_surrogate::verify::{self, Level};
use ibeam_surrogate::{parallel, Error};

#[derive(Parser, Debug)]
#[command(name = "ibeam", about = "I-beam FEA surrogate workbench", version)]
struct Cli {
    /// JSON config file; flags and --set override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Flat dotted-key override, e.g. --set train.lr=0.001 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Force single-threaded numerics.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate the FEA ground-truth dataset.
    GenData(GenDataArgs),
    /// Stage-1 pre-training (or the naive joint-training diagnostic).
    Train(TrainArgs),
    /// Stage-2 physics-informed fine-tuning from a checkpoint.
    Finetune(FinetuneArgs),
    /// Evaluate checkpoints on the test split and emit one report.
    Eval(EvalArgs),
    /// Plot training histories as SVG loss curves.
    Report(ReportArgs),
    /// Run verification oracles.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    /// Full DatasetSpec JSON; overrides the gen.* config section.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// Mesh resolution "LENxCROSS", e.g. 4x2.
    #[arg(long)]
    res: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// pretrain (default) or naive-joint.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[arg(long)]
    from: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint to evaluate (repeatable).
    #[arg(long = "ckpt", required = true)]
    ckpts: Vec<PathBuf>,
    /// Skip the inference-latency benchmark.
    #[arg(long)]
    no_bench: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    out: PathBuf,
    /// History CSV (repeatable).
    #[arg(long = "history", required = true)]
    histories: Vec<PathBuf>,
    /// Curve label per history (defaults to the file stem).
    #[arg(long = "label")]
    labels: Vec<String>,
    #[arg(long, default_value = "Validation Loss Curves")]
    title: String,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value = "all")]
    level: String,
}

// --- file config ----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, rename_all = "kebab-case")]
struct GenSection {
    task: String,
    n: usize,
    res: [usize; 2],
    seed: u64,
}

impl Default for GenSection {
    fn default() -> Self {
        GenSection {
            task: "specialist-high".into(),
            n: 150,
            res: [4, 2],
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, rename_all = "kebab-case")]
struct ModelSection {
    arch: String,
    hidden: usize,
    layers: usize,
    heads: Vec<usize>,
    activation: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            arch: "mpnn".into(),
            hidden: 128,
            layers: 3,
            heads: vec![4, 4, 1],
            activation: "silu".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, rename_all = "kebab-case")]
struct TrainSection {
    epochs: usize,
    batch_size: usize,
    lr: f64,
    weight_decay: f64,
    seed: u64,
    collocation: usize,
    patience: usize,
    beta2: f64,
    alpha_target: f64,
    ramp_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::new(TrainMode::Pretrain, 7);
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            weight_decay: t.weight_decay,
            seed: 7,
            collocation: t.collocation,
            patience: t.patience,
            beta2: t.beta2,
            alpha_target: t.weights.alpha_target,
            ramp_fraction: t.weights.ramp_fraction,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, rename_all = "kebab-case")]
struct FileConfig {
    gen: GenSection,
    model: ModelSection,
    train: TrainSection,
}

fn load_config(path: Option<&Path>, sets: &[String]) -> Result<FileConfig, Error> {
    let mut value: serde_json::Value = match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => serde_json::json!({}),
    };
    for kv in sets {
        let (key, raw) = kv.split_once('=').ok_or_else(|| {
            Error::ConfigMismatch(format!("--set expects KEY=VALUE, got '{kv}'"))
        })?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut node = &mut value;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let map = node.as_object_mut().ok_or_else(|| {
                Error::ConfigMismatch(format!("--set key '{key}' does not address an object"))
            })?;
            if i + 1 == parts.len() {
                map.insert((*part).into(), parsed.clone());
                break;
            }
            node = map
                .entry(*part)
                .or_insert_with(|| serde_json::json!({}));
        }
    }
    let cfg: FileConfig = serde_json::from_value(value)
        .map_err(|e| Error::ConfigMismatch(format!("invalid config: {e}")))?;
    Ok(cfg)
}

// --- string parsing -------------------------------------------------------

fn parse_task(s: &str) -> Result<Task, Error> {
    match s {
        "generalist" => Ok(Task::Generalist),
        "specialist-low" => Ok(Task::SpecialistLow),
        "specialist-high" => Ok(Task::SpecialistHigh),
        other => Err(Error::ConfigMismatch(format!("unknown task '{other}'"))),
    }
}

fn task_name(t: Task) -> &'static str {
    match t {
        Task::Generalist => "generalist",
        Task::SpecialistLow => "specialist-low",
        Task::SpecialistHigh => "specialist-high",
    }
}

fn parse_arch(s: &str) -> Result<Arch, Error> {
    match s {
        "gcn" => Ok(Arch::Gcn),
        "gat" => Ok(Arch::Gat),
        "mpnn" => Ok(Arch::Mpnn),
        "transformer" => Ok(Arch::Transformer),
        other => Err(Error::ConfigMismatch(format!("unknown arch '{other}'"))),
    }
}

fn arch_name(a: Arch) -> &'static str {
    match a {
        Arch::Gcn => "gcn",
        Arch::Gat => "gat",
        Arch::Mpnn => "mpnn",
        Arch::Transformer => "transformer",
    }
}

fn parse_activation(s: &str) -> Result<Activation, Error> {
    match s {
        "relu" => Ok(Activation::Relu),
        "silu" => Ok(Activation::Silu),
        "leaky-relu" => Ok(Activation::LeakyRelu),
        "identity" => Ok(Activation::Identity),
        other => Err(Error::ConfigMismatch(format!("unknown activation '{other}'"))),
    }
}

fn parse_res(s: &str) -> Result<MeshResolution, Error> {
    let (a, b) = s.split_once('x').ok_or_else(|| {
        Error::ConfigMismatch(format!("resolution must be LENxCROSS, got '{s}'"))
    })?;
    let nl: usize = a
        .parse()
        .map_err(|_| Error::ConfigMismatch(format!("bad resolution '{s}'")))?;
    let nc: usize = b
        .parse()
        .map_err(|_| Error::ConfigMismatch(format!("bad resolution '{s}'")))?;
    MeshResolution::new(nl, nc)
}

fn train_config(sec: &TrainSection, mode: TrainMode) -> TrainConfig {
    let mut cfg = TrainConfig::new(mode, sec.seed);
    cfg.epochs = sec.epochs;
    cfg.batch_size = sec.batch_size;
    cfg.lr = sec.lr;
    cfg.weight_decay = sec.weight_decay;
    cfg.collocation = sec.collocation;
    cfg.patience = sec.patience;
    cfg.beta2 = sec.beta2;
    cfg.weights.alpha_target = sec.alpha_target;
    cfg.weights.ramp_fraction = sec.ramp_fraction;
    cfg
}

fn dump_effective<T: Serialize>(label: &str, value: &T) {
    println!(
        "effective-config {label}: {}",
        serde_json::to_string(value).unwrap_or_else(|_| "<unserializable>".into())
    );
}

// --- subcommands ----------------------------------------------------------

fn cmd_gen_data(a: &GenDataArgs, cfg: &FileConfig) -> Result<(), Error> {
    let spec = match &a.spec {
        Some(p) => serde_json::from_str::<DatasetSpec>(&std::fs::read_to_string(p)?)
            .map_err(|e| Error::ConfigMismatch(format!("invalid dataset spec: {e}")))?,
        None => {
            let mut g = cfg.gen.clone();
            if let Some(t) = &a.task {
                g.task = t.clone();
            }
            if let Some(n) = a.n {
                g.n = n;
            }
            if let Some(r) = &a.res {
                let res = parse_res(r)?;
                g.res = [res.n_len, res.n_cross];
            }
            if let Some(s) = a.seed {
                g.seed = s;
            }
            DatasetSpec::preset(
                parse_task(&g.task)?,
                g.n,
                MeshResolution::new(g.res[0], g.res[1])?,
                g.seed,
            )
        }
    };
    dump_effective("gen-data", &spec);
    let summary = generate(&spec, &a.out)?;
    println!(
        "gen-data: {} samples ({} replaced, resumed from {}) in {:.2}s -> {}",
        summary.n_samples,
        summary.n_replaced,
        summary.resumed_from,
        summary.wall_seconds,
        a.out.display()
    );
    Ok(())
}

fn write_outcome(out_dir: &Path, outcome: &TrainOutcome, stats_hash: u64) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir)?;
    let ckpt = out_dir.join("checkpoint.ckpt");
    save_checkpoint(&ckpt, &outcome.model, outcome.best_epoch, stats_hash)?;
    outcome.history.write_csv(&out_dir.join("history.csv"))?;
    println!(
        "best epoch {} (val rel-L2 {:.4}%) -> {}",
        outcome.best_epoch,
        outcome.best_val_rel_l2,
        ckpt.display()
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs, cfg: &FileConfig) -> Result<(), Error> {
    let (ds, manifest) = read_dataset(&a.dataset)?;
    let mut model_sec = cfg.model.clone();
    if let Some(arch) = &a.arch {
        model_sec.arch = arch.clone();
    }
    let model_cfg = ModelConfig {
        hidden: model_sec.hidden,
        layers: model_sec.layers,
        heads: model_sec.heads.clone(),
        activation: parse_activation(&model_sec.activation)?,
        ..ModelConfig::new(parse_arch(&model_sec.arch)?, ds.spec.task)
    };
    let mode = match a.mode.as_deref() {
        None | Some("pretrain") => TrainMode::Pretrain,
        Some("naive-joint") => TrainMode::NaiveJoint,
        Some(other) => {
            return Err(Error::ConfigMismatch(format!(
                "train mode must be pretrain or naive-joint, got '{other}'"
            )))
        }
    };
    let mut train_sec = cfg.train.clone();
    if let Some(s) = a.seed {
        train_sec.seed = s;
    }
    if let Some(e) = a.epochs {
        train_sec.epochs = e;
    }
    let tcfg = train_config(&train_sec, mode);
    dump_effective("train.model", &model_cfg);
    dump_effective("train.config", &tcfg);
    let outcome = match mode {
        TrainMode::NaiveJoint => trainer::naive_joint(model_cfg, &ds, &manifest, &tcfg)?,
        _ => trainer::pretrain(model_cfg, &ds, &manifest, &tcfg)?,
    };
    write_outcome(&a.out, &outcome, manifest.stats.hash())
}

fn cmd_finetune(a: &FinetuneArgs, cfg: &FileConfig) -> Result<(), Error> {
    let (ds, manifest) = read_dataset(&a.dataset)?;
    let mut train_sec = cfg.train.clone();
    if let Some(s) = a.seed {
        train_sec.seed = s;
    }
    if let Some(e) = a.epochs {
        train_sec.epochs = e;
    }
    let tcfg = train_config(&train_sec, TrainMode::Finetune);
    dump_effective("finetune.config", &tcfg);
    let outcome = trainer::finetune(&a.from, &ds, &manifest, &tcfg)?;
    write_outcome(&a.out, &outcome, manifest.stats.hash())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Error> {
    let (ds, manifest) = read_dataset(&a.dataset)?;
    let stats = &manifest.stats;
    let test_graphs: Vec<GraphData> = manifest
        .splits
        .test
        .iter()
        .map(|&si| GraphData::from_sample(ds.spec.task, &ds.samples[si as usize], stats))
        .collect();
    if test_graphs.is_empty() {
        return Err(Error::ConfigMismatch("dataset has an empty test split".into()));
    }
    let truths: Vec<_> = test_graphs
        .iter()
        .map(|g| evaluator::denormalize_targets(&g.targets, stats))
        .collect();
    let mut rows = Vec::new();
    for ckpt in &a.ckpts {
        let (model, header) = load_checkpoint(ckpt)?;
        if header.norm_stats_hash != stats.hash() {
            return Err(Error::ConfigMismatch(format!(
                "{}: normalization stats hash does not match dataset",
                ckpt.display()
            )));
        }
        let preds: Vec<_> = test_graphs
            .iter()
            .map(|g| evaluator::predict(&model, &ds.topo, g, stats))
            .collect::<Result<_, _>>()?;
        let inference_ms = if a.no_bench {
            0.0
        } else {
            evaluator::benchmark_inference(&model, &ds.topo, &test_graphs)?
        };
        rows.push(ReportRow {
            model: arch_name(model.config.arch).into(),
            task: task_name(ds.spec.task).into(),
            metrics: EvalMetrics {
                mae: evaluator::mae(&preds, &truths),
                rel_l2: evaluator::rel_l2(&preds, &truths)?,
                r2: evaluator::r2(&preds, &truths),
                inference_ms,
                params_m: model.param_count() as f64 / 1e6,
            },
        });
    }
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("report.csv"), evaluator::report_csv(&rows))?;
    std::fs::write(a.out.join("report.md"), evaluator::report_md(&rows))?;
    print!("{}", evaluator::report_md(&rows));
    Ok(())
}

fn read_history_column(path: &Path, col: &str) -> Result<Vec<f64>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::ConfigMismatch(format!("{}: empty history", path.display())))?;
    let idx = header.split(',').position(|h| h == col).ok_or_else(|| {
        Error::ConfigMismatch(format!("{}: no '{col}' column", path.display()))
    })?;
    let mut vals = Vec::new();
    for line in lines {
        let field = line.split(',').nth(idx).ok_or_else(|| {
            Error::ConfigMismatch(format!("{}: ragged row", path.display()))
        })?;
        vals.push(field.parse::<f64>().map_err(|_| {
            Error::ConfigMismatch(format!("{}: bad float '{field}'", path.display()))
        })?);
    }
    Ok(vals)
}

fn cmd_report(a: &ReportArgs) -> Result<(), Error> {
    if !a.labels.is_empty() && a.labels.len() != a.histories.len() {
        return Err(Error::ConfigMismatch(
            "--label count must match --history count".into(),
        ));
    }
    let mut val_series = Vec::new();
    let mut train_series = Vec::new();
    for (i, path) in a.histories.iter().enumerate() {
        let label = a
            .labels
            .get(i)
            .cloned()
            .unwrap_or_else(|| {
                path.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("history-{i}"))
            });
        val_series.push(Series {
            name: format!("{label} (val)"),
            values: read_history_column(path, "val_loss")?,
        });
        train_series.push(Series {
            name: format!("{label} (train)"),
            values: read_history_column(path, "train_loss")?,
        });
    }
    let plots = a.out.join("plots");
    std::fs::create_dir_all(&plots)?;
    std::fs::write(
        plots.join("val_loss.svg"),
        evaluator::plot_svg(&a.title, &val_series),
    )?;
    std::fs::write(
        plots.join("train_loss.svg"),
        evaluator::plot_svg("Training Loss Curves", &train_series),
    )?;
    println!("report: wrote {}", plots.display());
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Result<bool, Error> {
    let level: Level = a.level.parse()?;
    let outcomes = verify::run_level(level)?;
    for o in &outcomes {
        println!("{}", o.line());
    }
    Ok(verify::all_passed(&outcomes))
}

// --- entry ----------------------------------------------------------------

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::InvalidParam { .. }
        | Error::InvalidMaterial { .. }
        | Error::ConfigMismatch(_)
        | Error::BadMagic { .. }
        | Error::UnsupportedVersion { .. } => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.deterministic {
        parallel::force_sequential(true);
    }
    if let Some(w) = cli.workers {
        parallel::set_workers(w);
    }
    let cfg = match load_config(cli.config.as_deref(), &cli.sets) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.cmd {
        Cmd::GenData(a) => cmd_gen_data(a, &cfg),
        Cmd::Train(a) => cmd_train(a, &cfg),
        Cmd::Finetune(a) => cmd_finetune(a, &cfg),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Report(a) => cmd_report(a),
        Cmd::Verify(a) => {
            return match cmd_verify(a) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(1),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code_for(&e))
                }
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
