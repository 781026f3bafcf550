use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use vsgat::data::synthetic::{generate_synthetic, RuleTable, SyntheticParams, RULES_FILE};
use vsgat::data::{
    filter_detections, load_scene, Dataset, DatasetManifest, HoiCategory, SceneFixture, MANIFEST_FILE,
};
use vsgat::features::EmbeddingTable;
use vsgat::graphnet::{forward, load_checkpoint, GraphError, ModelParams, Variant};
use vsgat::train::{evaluate_scenes, fit, gradcheck, GradcheckOptions, TrainConfig, TrainError, Widths};

/// Visual-semantic graph attention networks for human-object interaction
/// detection on synthetic scenes.
#[derive(Debug, Parser)]
#[command(name = "vsgat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train a model and write checkpoints, the resolved config and a log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split and write AP reports.
    Eval(EvalArgs),
    /// Score every human-object pair of one scene.
    Infer(InferArgs),
    /// Train and evaluate several variants over several seeds.
    Ablate(AblateArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, clap::Args)]
struct GenDataArgs {
    /// Generator seed; the output depends only on the seed and the flags.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_scenes: usize,
    /// Share of object classes whose action depends on scene context.
    #[arg(long, default_value_t = 0.5)]
    context_fraction: f64,
    #[arg(long, default_value_t = 6)]
    n_object_classes: usize,
    #[arg(long, default_value_t = 6)]
    n_actions: usize,
    /// Width of the per-detection visual feature.
    #[arg(long, default_value_t = 16)]
    visual_dim: usize,
    /// Width of the word embeddings.
    #[arg(long, default_value_t = 300)]
    embedding_dim: usize,
    /// Maximum detection box jitter in pixels.
    #[arg(long, default_value_t = 2.0)]
    box_jitter: f64,
    /// Standard deviation of visual feature noise.
    #[arg(long, default_value_t = 0.05)]
    feature_noise: f64,
    /// Share of scenes in the training split.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    /// JSON training config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (overrides `data` in the config).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
}

#[derive(Debug, clap::Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Per-category AP CSV; printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-action AP spread CSV.
    #[arg(long)]
    spread: Option<PathBuf>,
    /// IoU a prediction must exceed on both boxes to match.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, value_enum, default_value_t = Split::Val)]
    split: Split,
}

#[derive(Debug, clap::Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Scene JSON file.
    #[arg(long)]
    scene: PathBuf,
    /// Dataset directory holding the manifest and embeddings; by default the
    /// nearest ancestor of the scene with a manifest.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Keep only actions whose score exceeds this.
    #[arg(long, default_value_t = 0.3)]
    min_action_score: f64,
    /// Output JSON file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Base training config; its variant and seed are replaced per job.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated variants.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "full,01,02,03,04,05,06,baseline-pair-only"
    )]
    variants: Vec<Variant>,
    /// Seeds per variant, counted up from the config seed.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// Comparison CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WidthArg {
    /// 4-wide features, 8-wide layers; finishes in well under a second.
    Toy,
    /// 1024-wide layers and 300-d embeddings; slow, samples entries.
    Paper,
}

#[derive(Debug, clap::Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = WidthArg::Toy)]
    widths: WidthArg,
    #[arg(long, default_value = "full")]
    variant: Variant,
    /// Entries checked per tensor; defaults to all (toy) or 16 (paper).
    #[arg(long)]
    max_entries: Option<usize>,
    /// Perturb one analytic gradient entry, which must make the check fail.
    #[arg(long)]
    debug_corrupt_gradient: bool,
}

/// A failure caused by the numbers, reported with exit code 3.
#[derive(Debug)]
struct NumericalFailure(String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<NumericalFailure>() {
            return 3;
        }
        if let Some(t) = cause.downcast_ref::<TrainError>() {
            if t.is_numerical() {
                return 3;
            }
        }
        if let Some(GraphError::Numerics(_)) = cause.downcast_ref::<GraphError>() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Infer(a) => infer(a),
        Command::Ablate(a) => ablate(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    }
}

fn announce(config: &impl Serialize, seed: u64) {
    eprintln!("config: {}", serde_json::to_string(config).expect("config serializes"));
    eprintln!("seed: {seed}");
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let params = SyntheticParams {
        n_scenes: a.n_scenes,
        n_object_classes: a.n_object_classes,
        n_actions: a.n_actions,
        context_fraction: a.context_fraction,
        visual_dim: a.visual_dim,
        embedding_dim: a.embedding_dim,
        box_jitter: a.box_jitter,
        feature_noise: a.feature_noise,
        train_fraction: a.train_fraction,
    };
    announce(&params, a.seed);
    let m = generate_synthetic(a.seed, &params, &a.out)?;
    eprintln!(
        "wrote {} train and {} val scenes to {}",
        m.train_scenes.len(),
        m.val_scenes.len(),
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if a.data.is_some() {
        cfg.data = a.data;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    let Some(data_dir) = cfg.data.clone() else {
        bail!("no dataset given: pass --data or set `data` in the config");
    };
    let Some(out) = cfg.out.clone() else {
        bail!("no output directory given: pass --out or set `out` in the config");
    };
    let data = Dataset::open(&data_dir)?;
    let outcome = fit(&cfg, &data, Some(&out), |row| {
        let mut line = format!("epoch {} train_loss {:.6}", row.epoch, row.train_loss);
        if let Some((loss, full, rare, nonrare)) = row.val {
            let _ = write!(line, " val_loss {loss:.6} mAP {full:.4} rare {rare:.4} non-rare {nonrare:.4}");
        }
        eprintln!("{line}");
    })?;
    announce(&outcome.resolved, outcome.resolved.seed);
    if let Some(e) = outcome.best_epoch {
        eprintln!("best validation mAP at epoch {e}");
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// Checks that a checkpoint fits a dataset's embeddings and action list.
fn check_compatible(params: &ModelParams, table: &EmbeddingTable, n_actions: usize) -> Result<()> {
    let cfg = params.config();
    if cfg.word_dim != table.dim() {
        bail!("checkpoint expects {}-d embeddings, dataset has {}-d", cfg.word_dim, table.dim());
    }
    if cfg.n_actions != n_actions {
        bail!("checkpoint predicts {} actions, dataset has {}", cfg.n_actions, n_actions);
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if !(0.0..1.0).contains(&a.iou) {
        bail!("--iou {} outside [0, 1)", a.iou);
    }
    let params = load_checkpoint(&a.ckpt)?;
    announce(params.config(), 0);
    let data = Dataset::open(&a.data)?;
    check_compatible(&params, &data.embeddings, data.vocab.n_actions())?;
    let scenes = match a.split {
        Split::Train => &data.train,
        Split::Val => &data.val,
    };
    let outcome = evaluate_scenes(
        &params,
        scenes,
        &data.vocab,
        &data.embeddings,
        &data.manifest.train_counts(),
        a.iou,
    )?;
    let r = &outcome.report;
    eprintln!(
        "{} scenes, {} categories: mAP full {:.4} rare {:.4} non-rare {:.4}",
        scenes.len(),
        r.categories.len(),
        r.map_full,
        r.map_rare,
        r.map_nonrare
    );
    write_or_print(a.report.as_deref(), &r.report_csv())?;
    if let Some(p) = &a.spread {
        write_or_print(Some(p), &r.spread_csv())?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct PredictionRecord {
    human_box: [f64; 4],
    action: String,
    object_box: [f64; 4],
    object_class: String,
    s_a: f64,
    s_r: f64,
}

fn find_dataset_root(scene: &Path) -> Result<PathBuf> {
    let abs = std::fs::canonicalize(scene).with_context(|| format!("reading {}", scene.display()))?;
    abs.ancestors()
        .skip(1)
        .find(|d| d.join(MANIFEST_FILE).is_file())
        .map(Path::to_path_buf)
        .with_context(|| format!("no {MANIFEST_FILE} above {}; pass --data", scene.display()))
}

fn infer(a: InferArgs) -> Result<()> {
    let params = load_checkpoint(&a.ckpt)?;
    announce(params.config(), 0);
    let root = match a.data {
        Some(d) => d,
        None => find_dataset_root(&a.scene)?,
    };
    let manifest = DatasetManifest::load(&root.join(MANIFEST_FILE))?;
    let vocab = manifest.vocabulary();
    let table = EmbeddingTable::load(&root.join(&manifest.embeddings))?;
    check_compatible(&params, &table, vocab.n_actions())?;
    let scene = filter_detections(&load_scene(&a.scene, &vocab)?);
    let records = predict(&scene, &params, &table, vocab.actions(), a.min_action_score)?;
    eprintln!("{} predictions above {}", records.len(), a.min_action_score);
    let mut text = serde_json::to_string_pretty(&records).expect("predictions serialize");
    text.push('\n');
    write_or_print(a.out.as_deref(), &text)
}

fn predict(
    scene: &SceneFixture,
    params: &ModelParams,
    table: &EmbeddingTable,
    actions: &[String],
    min_score: f64,
) -> Result<Vec<PredictionRecord>> {
    let preds = match forward(scene, params, table) {
        Ok((_, p)) => p,
        // Fewer than two detections survive filtering: nothing to pair.
        Err(GraphError::SceneTooSmall { .. }) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for p in &preds {
        for (k, action) in actions.iter().enumerate() {
            let s_a = p.action_scores[k];
            if !s_a.is_finite() {
                return Err(NumericalFailure(format!("non-finite score for {action}")).into());
            }
            if s_a > min_score {
                out.push(PredictionRecord {
                    human_box: p.human_box.to_array(),
                    action: action.clone(),
                    object_box: p.object_box.to_array(),
                    object_class: p.object_class.clone(),
                    s_a,
                    s_r: p.triplet_scores[k],
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct JobResult {
    map_full: f64,
    map_rare: f64,
    map_nonrare: f64,
    map_context: Option<f64>,
}

fn worker_count(jobs: usize) -> Result<usize> {
    let cap = match std::env::var("VSGAT_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => bail!("VSGAT_THREADS must be a positive integer, got `{v}`"),
        },
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(cap.min(jobs).max(1))
}

fn run_job(base: &TrainConfig, data: &Dataset, context: Option<&[HoiCategory]>) -> Result<JobResult> {
    let outcome = fit(base, data, None, |_| {})?;
    let e = evaluate_scenes(
        &outcome.final_params,
        &data.val,
        &data.vocab,
        &data.embeddings,
        &data.manifest.train_counts(),
        base.iou_threshold,
    )?;
    let r = &e.report;
    Ok(JobResult {
        map_full: r.map_full,
        map_rare: r.map_rare,
        map_nonrare: r.map_nonrare,
        map_context: context.map(|c| r.mean_over(c)),
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn ablate(a: AblateArgs) -> Result<()> {
    if a.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    if a.variants.is_empty() {
        bail!("--variants is empty");
    }
    let base = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let jobs: Vec<(Variant, u64)> = a
        .variants
        .iter()
        .flat_map(|&v| (0..a.seeds).map(move |k| (v, base.seed + k)))
        .collect();
    let workers = worker_count(jobs.len())?;
    announce(&base, base.seed);
    eprintln!(
        "variants: {}; {} seeds; {} jobs on {} threads",
        a.variants.iter().map(|v| v.tag()).collect::<Vec<_>>().join(","),
        a.seeds,
        jobs.len(),
        workers
    );
    let data = Dataset::open(&a.data)?;
    let rules_path = a.data.join(RULES_FILE);
    let context: Option<Vec<HoiCategory>> = if rules_path.is_file() {
        let rules = RuleTable::load(&rules_path)?;
        Some(
            rules
                .context_categories()
                .into_iter()
                .map(|(act, obj)| HoiCategory::new(act, obj))
                .collect(),
        )
    } else {
        None
    };

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<JobResult>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(variant, seed)) = jobs.get(i) else {
                    break;
                };
                let cfg = TrainConfig {
                    variant,
                    seed,
                    ..base.clone()
                };
                let r = run_job(&cfg, &data, context.as_deref());
                match &r {
                    Ok(j) => eprintln!("{variant} seed {seed}: mAP {:.4}", j.map_full),
                    Err(e) => eprintln!("{variant} seed {seed}: failed: {e:#}"),
                }
                results.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    let mut done = Vec::with_capacity(jobs.len());
    for (r, &(v, seed)) in results.into_inner().expect("no worker panicked").into_iter().zip(&jobs) {
        let r = r.expect("every job ran").with_context(|| format!("variant {v}, seed {seed}"))?;
        done.push(r);
    }

    let mut csv = String::from("variant,seed,map_full,map_rare,map_nonrare,map_context\n");
    for (&(v, seed), r) in jobs.iter().zip(&done) {
        let _ = writeln!(
            csv,
            "{v},{seed},{},{},{},{}",
            r.map_full,
            r.map_rare,
            r.map_nonrare,
            fmt_opt(r.map_context)
        );
    }
    for &v in &a.variants {
        let rows: Vec<&JobResult> = jobs.iter().zip(&done).filter(|((jv, _), _)| *jv == v).map(|(_, r)| r).collect();
        let ctx = context
            .as_ref()
            .map(|_| mean(rows.iter().map(|r| r.map_context.expect("context set"))));
        let _ = writeln!(
            csv,
            "{v},mean,{},{},{},{}",
            mean(rows.iter().map(|r| r.map_full)),
            mean(rows.iter().map(|r| r.map_rare)),
            mean(rows.iter().map(|r| r.map_nonrare)),
            fmt_opt(ctx)
        );
    }
    write_or_print(a.out.as_deref(), &csv)
}

fn run_gradcheck(a: GradcheckArgs) -> Result<()> {
    let widths = match a.widths {
        WidthArg::Toy => Widths::Toy,
        WidthArg::Paper => Widths::Paper,
    };
    let max_entries = a.max_entries.or(match widths {
        Widths::Toy => None,
        Widths::Paper => Some(16),
    });
    eprintln!(
        "config: {{\"widths\":\"{}\",\"variant\":\"{}\",\"max_entries\":{},\"corrupt\":{}}}",
        format!("{:?}", a.widths).to_lowercase(),
        a.variant,
        max_entries.map_or("null".into(), |m| m.to_string()),
        a.debug_corrupt_gradient
    );
    eprintln!("seed: {}", a.seed);
    let r = gradcheck(&GradcheckOptions {
        seed: a.seed,
        widths,
        variant: a.variant,
        max_entries_per_tensor: max_entries,
        corrupt: a.debug_corrupt_gradient,
    })?;
    println!("max_rel_error {:e}", r.max_rel_error);
    println!("worst {}[{}]", r.worst.0, r.worst.1);
    println!("checked {} of {} parameters", r.checked, r.parameter_count);
    println!("loss {}", r.loss);
    if !r.passed() {
        return Err(NumericalFailure(format!(
            "max relative error {:e} is not below {:e}",
            r.max_rel_error,
            vsgat::train::GRADCHECK_TOLERANCE
        ))
        .into());
    }
    Ok(())
}
