//! Implementation of the subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fovreg::dataset::{
    build_pairs, generate_synthetic_world, load_observations, load_pairs, load_poses, read_vectors,
    write_observations, write_pairs, write_poses, Dataset, DatasetError, SimilarityPair,
};
use fovreg::encoder::{Checkpoint, LrSchedule, SgdConfig};
use fovreg::losses::LossKind;
use fovreg::metrics::{
    evaluate_detailed, recall_at_k, DescriptorSets, EvalConfig, EvalReport, GroundTruth,
    KlGroundTruth, WhiteningConfig, SEARCH_DEPTH,
};
use fovreg::retrieval::DEFAULT_WHITENING_EPS;
use fovreg::sampler::BucketKind;
use fovreg::trainer::{
    checkpoint_file_name, evaluate_snapshots, persist_snapshots, train, write_curve_csv,
    write_loss_log_csv, Snapshot, SnapshotSource, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::args::{
    Command, CurveArgs, EvalArgs, GtArgs, KlGroundTruthArg, LossArg, MetricArgs, SynthArgs,
    TrainArgs,
};
use crate::config::ExperimentConfig;
use crate::CliError;

pub const POSES_FILE: &str = "poses.csv";
pub const OBSERVATIONS_FILE: &str = "observations.bin";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const RUN_FILE: &str = "run.json";
pub const CURVE_FILE: &str = "curve.csv";

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => synth(&a),
        Command::Gt(a) => gt(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval(&a),
        Command::Curve(a) => curve(&a),
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Input(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn written<T, E: std::fmt::Display>(path: &Path, r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    written(path, std::fs::create_dir_all(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let write = || -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, value)?;
        out.write_all(b"\n")?;
        out.flush()
    };
    written(path, write())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("invalid {what} {}: {e}", path.display())))
}

fn with_path(path: &Path, e: DatasetError) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

/// Poses plus observations from a `synth` output directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    let poses = dir.join(POSES_FILE);
    let obs = dir.join(OBSERVATIONS_FILE);
    let ds = load_poses(&poses).map_err(|e| with_path(&poses, e))?;
    let records = load_observations(&obs).map_err(|e| with_path(&obs, e))?;
    ds.with_observations(records)
        .map_err(|e| with_path(&obs, e))
}

fn load_ground_truth(path: &Path, ds: &Dataset) -> Result<GroundTruth, CliError> {
    let gt: GroundTruth = read_json(path, "ground truth")?;
    gt.validate_against(ds)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(gt)
}

fn psi_summary(pairs: &[SimilarityPair]) -> String {
    let count = |kind| {
        pairs
            .iter()
            .filter(|p| BucketKind::of(p.psi) == kind)
            .count()
    };
    let mut hist = [0usize; 10];
    for p in pairs {
        hist[((p.psi * 10.0) as usize).min(9)] += 1;
    }
    let bars: Vec<String> = hist
        .iter()
        .enumerate()
        .map(|(k, n)| {
            format!(
                "  [{:.1}, {:.1}{} {n}",
                k as f64 / 10.0,
                (k + 1) as f64 / 10.0,
                if k == 9 { "]" } else { ")" }
            )
        })
        .collect();
    format!(
        "pairs: {} (high {}, mid {}, zero {})\npsi histogram:\n{}",
        pairs.len(),
        count(BucketKind::High),
        count(BucketKind::Mid),
        count(BucketKind::Zero),
        bars.join("\n")
    )
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let paths = [POSES_FILE, OBSERVATIONS_FILE, PAIRS_FILE].map(|f| args.out.join(f));
    for p in &paths {
        refuse_overwrite(p, args.force)?;
    }
    let [poses, obs, pairs_path] = paths;
    let ds = generate_synthetic_world(&cfg.world)?;
    create_dir(&args.out)?;
    written(&poses, write_poses(&poses, &ds))?;
    written(&obs, write_observations(&obs, &ds))?;
    // labels come from the poses as they will be read back from disk
    let stored = load_dataset(&args.out)?;
    let pairs = build_pairs(&stored, cfg.pairs.n_pairs, cfg.pairs.seed)?;
    written(&pairs_path, write_pairs(&pairs_path, &pairs))?;

    println!(
        "images: {} ({} map, {} query), observation dim {}",
        stored.len(),
        stored.map_ids().len(),
        stored.query_ids().len(),
        stored.d_in().unwrap_or(0)
    );
    println!("{}", psi_summary(&pairs));
    Ok(())
}

pub fn gt(args: &GtArgs) -> Result<(), CliError> {
    if !(args.dist_m >= 0.0 && args.dist_m.is_finite()) {
        return Err(CliError::Input(
            "--dist-m must be a finite value >= 0".into(),
        ));
    }
    if !(args.angle_deg >= 0.0 && args.angle_deg.is_finite()) {
        return Err(CliError::Input(
            "--angle-deg must be a finite value >= 0".into(),
        ));
    }
    refuse_overwrite(&args.out, args.force)?;
    let ds = load_poses(&args.poses).map_err(|e| with_path(&args.poses, e))?;
    let gt = GroundTruth::from_poses(&ds, args.dist_m, args.angle_deg.to_radians());
    write_json(&args.out, &gt)?;
    let answerable = gt.positives.values().filter(|s| !s.is_empty()).count();
    let links: usize = gt.positives.values().map(|s| s.len()).sum();
    println!(
        "queries: {}, with positives: {answerable}, positive pairs: {links}",
        gt.positives.len()
    );
    Ok(())
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub train: TrainConfig,
    pub dims: Vec<usize>,
    pub snapshots: Vec<SnapshotEntry>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub iteration: u64,
    pub checkpoint: String,
}

fn loss_of(arg: LossArg) -> LossKind {
    match arg {
        LossArg::Mse => LossKind::Mse,
        LossArg::Cl => LossKind::contrastive(),
        LossArg::Gcl => LossKind::gcl(),
    }
}

fn describe_lr(sgd: &SgdConfig) -> String {
    match sgd.schedule {
        LrSchedule::Constant => format!("constant {}", sgd.learning_rate),
        LrSchedule::Step { factor, period } => {
            format!(
                "{} decayed x{factor} every {period} iterations",
                sgd.learning_rate
            )
        }
    }
}

fn is_checkpoint_name(name: &str) -> bool {
    name.starts_with("ckpt_") && name.ends_with(".json")
}

pub fn train_cmd(args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(loss) = args.loss {
        let kind = loss_of(loss);
        if std::mem::discriminant(&kind) != std::mem::discriminant(&cfg.train.loss) {
            cfg.train.loss = kind;
        }
    }
    if let Some(period) = args.step_period {
        cfg.train.step_period = period;
    }
    cfg.validate()?;
    let train_cfg = cfg.train.to_train_config();

    let loss_log = args.out.join(LOSS_LOG_FILE);
    let manifest_path = args.out.join(RUN_FILE);
    refuse_overwrite(&loss_log, args.force)?;
    refuse_overwrite(&manifest_path, args.force)?;
    let stale: Vec<PathBuf> = match std::fs::read_dir(&args.out) {
        Ok(entries) => entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(is_checkpoint_name)
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    if let Some(first) = stale.first() {
        refuse_overwrite(first, args.force)?;
    }

    let ds = load_dataset(&args.data)?;
    let pairs_path = args.data.join(PAIRS_FILE);
    let pairs = load_pairs(&pairs_path).map_err(|e| with_path(&pairs_path, e))?;
    eprintln!(
        "training {} for {} iterations, batch {}, learning rate {}",
        train_cfg.loss.name(),
        train_cfg.iterations,
        train_cfg.batch.batch_size,
        describe_lr(&train_cfg.sgd)
    );
    let run = train(&ds, &pairs, &train_cfg)?;
    for s in &run.snapshots {
        let lr = train_cfg.sgd.learning_rate(s.iteration);
        match s
            .iteration
            .checked_sub(1)
            .and_then(|i| run.loss_log.get(i as usize))
        {
            Some((_, loss)) => eprintln!("iteration {:>8}  lr {lr:e}  loss {loss:.6}", s.iteration),
            None => eprintln!("iteration {:>8}  lr {lr:e}", s.iteration),
        }
    }

    create_dir(&args.out)?;
    for p in &stale {
        written(p, std::fs::remove_file(p))?;
    }
    let saved = written(&args.out, persist_snapshots(&run, &args.out))?;
    let write_log = || -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(&loss_log)?);
        write_loss_log_csv(&mut out, &run.loss_log)?;
        out.flush()
    };
    written(&loss_log, write_log())?;
    let manifest = RunManifest {
        dims: train_cfg.dims(ds.d_in().unwrap_or(0)),
        train: train_cfg,
        snapshots: saved
            .iter()
            .map(|s| SnapshotEntry {
                iteration: s.iteration,
                checkpoint: checkpoint_file_name(s.iteration),
            })
            .collect(),
        final_loss: run.loss_log.last().map_or(f64::NAN, |(_, l)| *l),
    };
    write_json(&manifest_path, &manifest)?;
    println!(
        "wrote {} checkpoints, {LOSS_LOG_FILE} and {RUN_FILE} to {}",
        saved.len(),
        args.out.display()
    );
    Ok(())
}

fn eval_config(m: &MetricArgs, descriptor_dim: usize) -> Result<EvalConfig, CliError> {
    if m.bins < 2 {
        return Err(CliError::Input("--bins must be >= 2".into()));
    }
    if !(m.smoothing > 0.0 && m.smoothing.is_finite()) {
        return Err(CliError::Input("--smoothing must be > 0".into()));
    }
    if m.max_kl_pairs == 0 {
        return Err(CliError::Input("--max-kl-pairs must be > 0".into()));
    }
    Ok(EvalConfig {
        bins: m.bins,
        smoothing: m.smoothing,
        max_kl_pairs: m.max_kl_pairs,
        kl_seed: m.kl_seed,
        kl_ground_truth: match m.kl_ground_truth {
            KlGroundTruthArg::Graded => KlGroundTruth::Graded,
            KlGroundTruthArg::Binary => KlGroundTruth::Binary,
        },
        whitening: m.whiten.then(|| WhiteningConfig {
            dim: m.pca_dim.unwrap_or(descriptor_dim),
            eps: DEFAULT_WHITENING_EPS,
        }),
    })
}

/// Settings echoed into `report.json`.
#[derive(Debug, Serialize)]
struct ReportConfig {
    source: &'static str,
    bins: usize,
    smoothing: f64,
    max_kl_pairs: usize,
    kl_seed: u64,
    kl_ground_truth: KlGroundTruth,
    k: Vec<usize>,
    whitening: bool,
    dim: usize,
}

#[derive(Debug, Serialize)]
struct ReportFile {
    #[serde(flatten)]
    report: EvalReport,
    recall_at_k: BTreeMap<usize, f64>,
    config: ReportConfig,
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut ks = args.k.clone();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks.iter().any(|&k| k == 0 || k > SEARCH_DEPTH) {
        return Err(CliError::Input(format!(
            "--k values must be between 1 and {SEARCH_DEPTH}"
        )));
    }
    refuse_overwrite(&args.out, args.force)?;
    let ds = load_dataset(&args.metrics.data)?;
    let gt = load_ground_truth(&args.metrics.gt, &ds)?;
    let (sets, source) = match (&args.checkpoint, &args.descriptors) {
        (Some(path), _) => {
            let model = Checkpoint::load(path)
                .and_then(Checkpoint::into_model)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            (DescriptorSets::from_model(&model, &ds)?, "checkpoint")
        }
        (None, Some(path)) => {
            let file = File::open(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let (_, records) =
                read_vectors(std::io::BufReader::new(file)).map_err(|e| with_path(path, e))?;
            (DescriptorSets::from_records(records, &ds)?, "descriptors")
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let dim = sets.maps.first().map_or(0, Vec::len);
    let cfg = eval_config(&args.metrics, dim)?;
    let (report, rankings) = evaluate_detailed(&sets, &ds, &gt, &cfg)?;
    let recall_at_k = ks
        .iter()
        .map(|&k| Ok((k, recall_at_k(&rankings, &gt, k)?)))
        .collect::<Result<BTreeMap<_, _>, CliError>>()?;
    let file = ReportFile {
        config: ReportConfig {
            source,
            bins: cfg.bins,
            smoothing: cfg.smoothing,
            max_kl_pairs: cfg.max_kl_pairs,
            kl_seed: cfg.kl_seed,
            kl_ground_truth: cfg.kl_ground_truth,
            k: ks,
            whitening: cfg.whitening.is_some(),
            dim: report.dim,
        },
        recall_at_k,
        report,
    };
    write_json(&args.out, &file)?;
    let r = &file.report;
    println!(
        "R@1 {:.4}  R@5 {:.4}  R@10 {:.4}  MRR@5 {:.4}  KL {:.4}  ({} of {} queries answerable, dim {})",
        r.r_at_1, r.r_at_5, r.r_at_10, r.mrr5, r.kldiv, r.n_answerable, r.n_queries, r.dim
    );
    Ok(())
}

pub fn curve(args: &CurveArgs) -> Result<(), CliError> {
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.run.join(CURVE_FILE));
    refuse_overwrite(&out, args.force)?;
    let manifest: RunManifest = read_json(&args.run.join(RUN_FILE), "run manifest")?;
    let ds = load_dataset(&args.metrics.data)?;
    let gt = load_ground_truth(&args.metrics.gt, &ds)?;
    let cfg = eval_config(&args.metrics, manifest.train.d_out)?;
    let snapshots: Vec<Snapshot> = manifest
        .snapshots
        .iter()
        .map(|s| Snapshot {
            iteration: s.iteration,
            source: SnapshotSource::File(args.run.join(&s.checkpoint)),
        })
        .collect();
    let points = evaluate_snapshots(&snapshots, &ds, &gt, &cfg)?;
    let write = || -> std::io::Result<()> {
        let mut f = BufWriter::new(File::create(&out)?);
        write_curve_csv(&mut f, &points)?;
        f.flush()
    };
    written(&out, write())?;
    for p in &points {
        println!(
            "iteration {:>8}  R@5 {:.4}  KL {:.4}",
            p.iteration, p.report.r_at_5, p.report.kldiv
        );
    }
    Ok(())
}
