//! Command implementations behind the `openhybrid` binary.

pub mod config;

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use rayon::prelude::*;

use openhybrid::checkpoint::write_atomic;
use openhybrid::data::idx::load_idx;
use openhybrid::data::{gen_gaussian_mixture, partition, LabeledDataset, PartitionSpec, Split};
use openhybrid::inference::write_score_dump;
use openhybrid::metrics::EvalReport;
use openhybrid::model::{Architecture, ModelParams, Regime};
use openhybrid::protocol::{evaluate, run_partition, Aggregate, Evaluation, PartitionRun, Protocol};
use openhybrid::trainer::{fit, write_loss_log, TrainConfig};

pub use config::{ConfigError, DatasetSpec, ExperimentConfig};

pub const USAGE: &str = "usage: openhybrid {train|eval|histogram|compare} --config <path> [--key value ...]";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(openhybrid::Error),
}

impl CliError {
    /// 1 for numeric failures, 2 for usage and IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numeric() => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<openhybrid::Error> for CliError {
    fn from(e: openhybrid::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.0)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Histogram,
    Compare,
}

impl Command {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Command::Train),
            "eval" => Some(Command::Eval),
            "histogram" => Some(Command::Histogram),
            "compare" => Some(Command::Compare),
            _ => None,
        }
    }
}

/// Parses the full argument list (without the program name) and runs it.
pub fn run(args: &[String], threads: usize) -> Result<()> {
    let (cmd, rest) = args.split_first().ok_or_else(|| CliError::Usage(USAGE.into()))?;
    let cmd = Command::parse(cmd).ok_or_else(|| CliError::Usage(format!("unknown command {cmd:?}\n{USAGE}")))?;
    let mut overrides = config::parse_overrides(rest)?;
    let pos = overrides
        .iter()
        .position(|(k, _)| k == "config")
        .ok_or_else(|| CliError::Usage(format!("--config is required\n{USAGE}")))?;
    let (_, path) = overrides.remove(pos);
    let cfg = ExperimentConfig::load(Path::new(&path), &overrides)?;
    match cmd {
        Command::Train => cmd_train(&cfg).map(|_| ()),
        Command::Eval => cmd_eval(&cfg).map(|_| ()),
        Command::Histogram => cmd_histogram(&cfg).map(|_| ()),
        Command::Compare => cmd_compare(&cfg, threads).map(|_| ()),
    }
}

/// Concurrency cap from `OPENHYBRID_THREADS`, else the machine's parallelism.
pub fn thread_cap() -> Result<usize> {
    match std::env::var("OPENHYBRID_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!("OPENHYBRID_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<LabeledDataset> {
    Ok(match spec {
        DatasetSpec::Synthetic {
            n_per_class,
            n_classes,
            dim,
            spread,
            seed,
        } => gen_gaussian_mixture(*n_per_class, *n_classes, *dim, *spread, *seed)?,
        DatasetSpec::Idx {
            images,
            labels,
            max_per_class,
        } => {
            for path in [images, labels] {
                if !path.is_file() {
                    return Err(CliError::Usage(format!("IDX file {} not found", path.display())));
                }
            }
            let ds = load_idx(images, labels)?;
            match max_per_class {
                Some(m) => ds.subset_per_class(*m),
                None => ds,
            }
        }
    })
}

fn architecture(cfg: &ExperimentConfig, ds: &LabeledDataset, spec: &PartitionSpec) -> Architecture {
    Architecture {
        input_dim: ds.feature_dim(),
        classes: spec.k(),
        ..cfg.arch.clone()
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", dir.display())))
}

/// The partition a single-run command works on.
pub struct Prepared {
    pub dataset: LabeledDataset,
    pub train: Split,
    pub test: Split,
    pub spec: PartitionSpec,
    pub arch: Architecture,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let dataset = load_dataset(&cfg.dataset)?;
    if cfg.k_known >= dataset.class_count {
        return Err(CliError::Usage(format!(
            "k_known = {} leaves no unknown classes among {}",
            cfg.k_known, dataset.class_count
        )));
    }
    let (train, test, spec) = partition(&dataset, cfg.k_known, cfg.seed)?;
    let arch = architecture(cfg, &dataset, &spec);
    Ok(Prepared {
        dataset,
        train,
        test,
        spec,
        arch,
    })
}

pub struct TrainOutcome {
    pub model: ModelParams,
    pub logs: Vec<openhybrid::trainer::EpochLog>,
}

/// Trains on the configured partition and writes `checkpoint` and `loss_log.csv`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let p = prepare(cfg)?;
    prepare_out_dir(&cfg.out_dir)?;
    if let Some(dir) = cfg.checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        prepare_out_dir(dir)?;
    }
    info!(
        "training {} on {} samples, known classes {:?}",
        cfg.train.regime,
        p.train.len(),
        p.spec.known_classes
    );
    let mut model = ModelParams::new(&p.arch, cfg.train.regime, cfg.seed)?;
    let logs = fit(&mut model, &p.train.features, &p.train.labels, &cfg.train)?;
    let mut buf = Vec::new();
    write_loss_log(&logs, &mut buf)?;
    write_atomic(&cfg.out_dir.join("loss_log.csv"), &buf)?;
    model.save(&cfg.checkpoint)?;
    info!("wrote {}", cfg.checkpoint.display());
    Ok(TrainOutcome { model, logs })
}

fn load_model(cfg: &ExperimentConfig, p: &Prepared) -> Result<ModelParams> {
    if !cfg.checkpoint.exists() {
        return Err(CliError::Usage(format!(
            "checkpoint {} not found; run train first",
            cfg.checkpoint.display()
        )));
    }
    Ok(ModelParams::load(&cfg.checkpoint, &p.arch, cfg.train.regime)?)
}

/// Calibrates on the training split, scores the test split and writes
/// `report.csv`, `report.txt` and `scores.csv`.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<Evaluation> {
    let p = prepare(cfg)?;
    let model = load_model(cfg, &p)?;
    prepare_out_dir(&cfg.out_dir)?;
    let ev = evaluate(&model, &p.train, &p.test, &p.spec, cfg.s)?;
    let r = &ev.report;
    write_text(
        &cfg.out_dir.join("report.csv"),
        &format!("{}\n{}\n", r.csv_header(), r.csv_row()),
    )?;
    let mut txt = format!(
        "regime {}\nseed {}\nknown classes {:?}\nunknown classes {:?}\nscore {}\n",
        cfg.train.regime, cfg.seed, p.spec.known_classes, p.spec.unknown_classes, ev.threshold.kind
    );
    txt.push_str(&r.text_block());
    write_text(&cfg.out_dir.join("report.txt"), &txt)?;
    let mut buf = Vec::new();
    write_score_dump(&ev.test_scores, &p.test.labels, &ev.threshold, &p.test.ids, &mut buf)?;
    write_atomic(&cfg.out_dir.join("scores.csv"), &buf)?;
    info!("auroc {:.4}, macro F {:.4}", r.auroc, r.f_score_macro);
    Ok(ev)
}

pub struct HistogramSummary {
    pub overlap: f64,
    pub tau: f64,
    pub rows: usize,
}

/// Writes every training and test log-likelihood to `histogram.csv`, tagged
/// by split, and the overlap statistic to `histogram_summary.txt`.
pub fn cmd_histogram(cfg: &ExperimentConfig) -> Result<HistogramSummary> {
    let p = prepare(cfg)?;
    let model = load_model(cfg, &p)?;
    prepare_out_dir(&cfg.out_dir)?;
    let ev = evaluate(&model, &p.train, &p.test, &p.spec, cfg.s)?;
    let k = p.spec.k();
    let mut csv = String::from("split,log_prob_nats\n");
    for v in &ev.train_scores.log_prob {
        writeln!(csv, "train,{v}").unwrap();
    }
    for (i, v) in ev.test_scores.log_prob.iter().enumerate() {
        let tag = if p.test.labels[i] == k { "test-unknown" } else { "test-known" };
        writeln!(csv, "{tag},{v}").unwrap();
    }
    write_text(&cfg.out_dir.join("histogram.csv"), &csv)?;
    let overlap = ev.overlap(&p.test, k);
    let summary = format!(
        "tau {}\nscore {}\noverlap {}\nn_train {}\nn_test {}\n",
        ev.threshold.tau,
        ev.threshold.kind,
        overlap,
        p.train.len(),
        p.test.len()
    );
    write_text(&cfg.out_dir.join("histogram_summary.txt"), &summary)?;
    Ok(HistogramSummary {
        overlap,
        tau: ev.threshold.tau,
        rows: p.train.len() + p.test.len(),
    })
}

/// One regime's results from [`cmd_compare`].
pub struct RegimeResult {
    pub aggregate: Aggregate,
    /// Per seed, in seed order.
    pub overlaps: Vec<f64>,
}

fn partition_rows(runs: &[PartitionRun]) -> String {
    let mut out = String::new();
    for (i, run) in runs.iter().enumerate() {
        if i == 0 {
            writeln!(out, "seed,overlap,{}", run.evaluation.report.csv_header()).unwrap();
        }
        writeln!(
            out,
            "{},{},{}",
            run.seed,
            run.evaluation.overlap(&run.test, run.spec.k()),
            run.evaluation.report.csv_row()
        )
        .unwrap();
    }
    out
}

fn fmt_pm((m, s): (f64, f64)) -> String {
    format!("{m:.4} ± {s:.4}")
}

/// Runs every regime over the partition protocol, at most `threads`
/// partitions at a time, each single-threaded. Writes `compare.csv`,
/// `compare.txt` and one subdirectory per regime.
pub fn cmd_compare(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<RegimeResult>> {
    let dataset = load_dataset(&cfg.dataset)?;
    if cfg.k_known >= dataset.class_count {
        return Err(CliError::Usage(format!(
            "k_known = {} leaves no unknown classes among {}",
            cfg.k_known, dataset.class_count
        )));
    }
    prepare_out_dir(&cfg.out_dir)?;
    let protocol_for = |regime: Regime| Protocol {
        k_known: cfg.k_known,
        seeds: cfg.seeds.clone(),
        arch: cfg.arch.clone(),
        train: TrainConfig {
            regime,
            ..cfg.train.clone()
        },
        s: cfg.s,
    };
    let jobs: Vec<(Regime, u64)> = Regime::ALL
        .iter()
        .flat_map(|&r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    info!("running {} partitions on {} threads", jobs.len(), threads.max(1));
    let runs: Vec<PartitionRun> = pool.install(|| {
        jobs.par_iter()
            .map(|&(regime, seed)| run_partition(&dataset, &protocol_for(regime), seed))
            .collect::<openhybrid::Result<Vec<_>>>()
    })?;

    let mut results = Vec::new();
    let mut csv = String::from(
        "regime,auroc_mean,auroc_std,f_score_mean,f_score_std,accuracy_mean,accuracy_std,openness,partitions\n",
    );
    let mut table = format!("{:<20} {:<18} {:<18}\n", "regime", "AUROC", "macro F");
    for (regime, chunk) in Regime::ALL.iter().zip(runs.chunks(cfg.seeds.len())) {
        let reports: Vec<EvalReport> = chunk.iter().map(|r| r.evaluation.report.clone()).collect();
        let aggregate = Aggregate::from_reports(*regime, reports)?;
        let overlaps = chunk.iter().map(|r| r.evaluation.overlap(&r.test, r.spec.k())).collect();

        let dir = cfg.out_dir.join(regime.to_string());
        prepare_out_dir(&dir)?;
        write_text(&dir.join("partitions.csv"), &partition_rows(chunk))?;
        for run in chunk {
            let mut buf = Vec::new();
            write_loss_log(&run.logs, &mut buf)?;
            write_atomic(&dir.join(format!("loss_log_seed{}.csv", run.seed)), &buf)?;
        }

        let a = &aggregate;
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            regime,
            a.auroc.0,
            a.auroc.1,
            a.f_score_macro.0,
            a.f_score_macro.1,
            a.overall_accuracy.0,
            a.overall_accuracy.1,
            a.openness.0,
            chunk.len()
        )
        .unwrap();
        writeln!(table, "{:<20} {:<18} {:<18}", regime.to_string(), fmt_pm(a.auroc), fmt_pm(a.f_score_macro)).unwrap();
        results.push(RegimeResult { aggregate, overlaps });
    }
    write_text(&cfg.out_dir.join("compare.csv"), &csv)?;
    write_text(&cfg.out_dir.join("compare.txt"), &table)?;
    print!("{table}");
    Ok(results)
}

