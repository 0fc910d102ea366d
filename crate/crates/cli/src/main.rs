mod manifest;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use physasset::annotate::{
    annotate_prompt, apply_annotation, build_prompt, raw_from_asset, AnnotateError, HttpBackend, MockBackend,
    RawAnnotation, RetryPolicy, ReviewEvent, ReviewLog, ReviewState, ReviewStatus, VlmBackend, VlmConfig,
};
use physasset::asset::{load_asset, load_asset_raw, save_asset, KinematicConstraint, ObjectAsset, ASSET_FILE};
use physasset::cfm::{euler_sample, train, AnyField, Mixture, MlpField, TrainConfig};
use physasset::geometry::{merge_tiny_parts, normalize_object, MergePolicy};
use physasset::kinematics::{estimate_constraint, AxisCandidate, FittedPlane, KinematicsConfig};
use physasset::metrics::{evaluate, EvalConfig};
use physasset::physfeat::{
    attach_semantics, normalize_channels, voxelize_with, HashingEmbedder, HttpEmbedder, PhysError, TextEmbedder,
    DEFAULT_SAMPLES, EMBED_DIM,
};
use physasset::procgen::{compose, enumerate_plans, Mode, ProcgenConfig};
use physasset::render::save_png;
use physasset::{canonical_json, sha256_hex};
use serde::{Deserialize, Serialize};

use manifest::{JobManifest, JobStatus};

const ANNOTATION_FILE: &str = "annotation.json";

/// Physically annotated articulated assets: preparation, annotation, joint
/// estimation, procedural composition, feature packing and evaluation.
///
/// Exit status: 0 on success, 2 on invalid input or validation failure,
/// 3 when a remote backend (VLM or text embedder) is unavailable.
/// Every command except `serve` writes `<out>.manifest.json` and skips
/// reruns with identical inputs unless `--force` is given.
#[derive(Debug, Parser)]
#[command(name = "physasset", version)]
struct Cli {
    /// Seed overriding every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML or JSON file with optional sections: kinematics, merge, vlm, procgen, evaluate, cfm, voxel.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Rerun even when the manifest says the outputs are up to date.
    #[arg(long, global = true)]
    force: bool,
    /// Manifest location (default: `<out>.manifest.json`).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ModeArg {
    Cross,
    Intra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum EmbedderArg {
    Hashing,
    Http,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Center and scale an asset into [-1, 1].
    Normalize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Absorb tiny parts into their neighbours.
    Merge {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render isolation images and query the VLM for part annotations.
    Annotate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Answer from `<request hash>.txt` files in this directory instead of the network.
        #[arg(long, conflicts_with = "mock_self")]
        mock_dir: Option<PathBuf>,
        /// Answer with the input asset's own annotation (offline round trip).
        #[arg(long)]
        mock_self: bool,
        /// Record human approval by this editor after the VLM pass.
        #[arg(long)]
        approve: Option<String>,
        /// Isolation image size (default from the vlm config).
        #[arg(long)]
        resolution: Option<u32>,
    },
    /// Estimate joint parameters. Uses approved annotation stubs when the input
    /// holds annotation.json, else re-estimates every joint of the asset.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Finalize each joint with its top candidate.
        #[arg(long)]
        auto_select: bool,
    },
    /// Compose new assets from the assets under a root directory.
    Procgen {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "cross")]
        mode: ModeArg,
        /// Compose at most this many plans.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Pack per-voxel physical features into a binary grid file.
    Voxelize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = physasset::physfeat::DEFAULT_RESOLUTION)]
        resolution: u32,
        /// Store channels normalized to unit ranges.
        #[arg(long)]
        normalize: bool,
        /// Attach description embeddings.
        #[arg(long, value_enum)]
        semantics: Option<EmbedderArg>,
    },
    /// Compare a predicted asset against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy flow-matching field on a 2D Gaussian mixture.
    CfmToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, default_value_t = 4096)]
        data: usize,
    },
    /// Serve an asset directory over HTTP for review (no authentication).
    Serve {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Populate the root with the built-in articulated fixtures first.
        #[arg(long)]
        fixtures: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct VoxelConfig {
    samples: usize,
    seed: u64,
    embed_endpoint: String,
    embed_model: String,
}

impl Default for VoxelConfig {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            seed: 0,
            embed_endpoint: "http://127.0.0.1:8081/embed".into(),
            embed_model: "clip-vit-l-14".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PipelineConfig {
    kinematics: KinematicsConfig,
    merge: MergePolicy,
    vlm: VlmConfig,
    procgen: ProcgenConfig,
    evaluate: EvalConfig,
    cfm: TrainConfig,
    voxel: VoxelConfig,
}

impl PipelineConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.kinematics.seed = s;
            self.merge.seed = s;
            self.procgen.seed = s;
            self.evaluate.seed = s;
            self.cfm.seed = s;
            self.voxel.seed = s;
        }
        self
    }

    /// Seed reported in the manifest.
    fn seed_for(&self, command: &Command) -> u64 {
        match command {
            Command::Merge { .. } => self.merge.seed,
            Command::Estimate { .. } | Command::Serve { .. } => self.kinematics.seed,
            Command::Procgen { .. } => self.procgen.seed,
            Command::Evaluate { .. } => self.evaluate.seed,
            Command::CfmToy { .. } => self.cfm.seed,
            Command::Voxelize { .. } => self.voxel.seed,
            Command::Normalize { .. } | Command::Annotate { .. } => 0,
        }
    }
}

/// Input or validation problem reported with exit status 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<AnnotateError>() {
            if matches!(
                e,
                AnnotateError::BackendUnavailable(_) | AnnotateError::RateLimited(_) | AnnotateError::Timeout(_)
            ) {
                return 3;
            }
        }
        if let Some(PhysError::EmbedderUnavailable(_)) = cause.downcast_ref::<PhysError>() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

struct Job {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    manifest: PathBuf,
}

fn job_for(cli: &Cli) -> Option<Job> {
    let (inputs, outputs): (Vec<&PathBuf>, Vec<&PathBuf>) = match &cli.command {
        Command::Normalize { input, out } | Command::Merge { input, out } => (vec![input], vec![out]),
        Command::Annotate { input, out, mock_dir, .. } => {
            let mut i = vec![input];
            i.extend(mock_dir);
            (i, vec![out])
        }
        Command::Estimate { input, out, .. } | Command::Voxelize { input, out, .. } => (vec![input], vec![out]),
        Command::Procgen { root, out, .. } => (vec![root], vec![out]),
        Command::Evaluate { pred, gt, out } => (vec![pred, gt], out.iter().collect()),
        Command::CfmToy { out, .. } => (vec![], vec![out]),
        Command::Serve { .. } => return None,
    };
    let manifest = cli.manifest.clone().unwrap_or_else(|| match outputs.first() {
        Some(out) => manifest::default_path(out),
        None => PathBuf::from("evaluate.manifest.json"),
    });
    Some(Job {
        inputs: inputs.into_iter().cloned().collect(),
        outputs: outputs.into_iter().cloned().collect(),
        manifest,
    })
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = PipelineConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    let Some(job) = job_for(cli) else { return run(cli, &cfg) };
    let command = serde_json::to_value(&cli.command).expect("serializable command");
    let name = command
        .as_object()
        .and_then(|o| o.keys().next().cloned())
        .unwrap_or_default();
    let config_hash = sha256_hex(canonical_json(&cfg).as_bytes());
    let seed = cfg.seed_for(&cli.command);
    let hash = manifest::job_hash(&name, &command, &job.inputs, &config_hash, seed)?;
    if !cli.force {
        if let Some(prev) = JobManifest::read(&job.manifest) {
            if prev.satisfies(&hash) {
                eprintln!("{name}: up to date ({}); use --force to rerun", job.manifest.display());
                return Ok(());
            }
        }
    }
    let result = run(cli, &cfg);
    let record = JobManifest {
        command: name,
        inputs: job.inputs,
        config_hash,
        seed,
        outputs: job.outputs,
        status: if result.is_ok() { JobStatus::Succeeded } else { JobStatus::Failed },
        job_hash: hash,
        error: result.as_ref().err().map(|e| format!("{e:#}")),
    };
    record.write(&job.manifest)?;
    result
}

fn invalid(e: impl std::fmt::Display) -> anyhow::Error {
    Invalid(e.to_string()).into()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load(dir: &Path) -> Result<ObjectAsset> {
    load_asset(dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))
}

fn save(asset: &ObjectAsset, dir: &Path) -> Result<()> {
    save_asset(asset, dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))
}

fn run(cli: &Cli, cfg: &PipelineConfig) -> Result<()> {
    match &cli.command {
        Command::Normalize { input, out } => {
            let raw = load_asset_raw(input).map_err(|e| invalid(format!("{}: {e}", input.display())))?;
            save(&normalize_object(&raw).map_err(invalid)?, out)
        }
        Command::Merge { input, out } => {
            let outcome = merge_tiny_parts(&load(input)?, &cfg.merge).map_err(invalid)?;
            save(&outcome.asset, out)?;
            write_text(&out.join("merge_report.json"), &canonical_json(&outcome.report))
        }
        Command::Annotate {
            input,
            out,
            mock_dir,
            mock_self,
            approve,
            resolution,
        } => run_annotate(input, out, mock_dir.as_deref(), *mock_self, approve.as_deref(), *resolution, &cfg.vlm),
        Command::Estimate { input, out, auto_select } => run_estimate(input, out, *auto_select, &cfg.kinematics),
        Command::Procgen { root, out, mode, limit } => run_procgen(root, out, *mode, *limit, &cfg.procgen),
        Command::Voxelize {
            input,
            out,
            resolution,
            normalize,
            semantics,
        } => {
            let asset = load(input)?;
            let mut grid = voxelize_with(&asset, *resolution, cfg.voxel.samples, cfg.voxel.seed).map_err(invalid)?;
            if *normalize {
                grid = normalize_channels(&grid);
            }
            if let Some(kind) = semantics {
                let embedder: Box<dyn TextEmbedder> = match kind {
                    EmbedderArg::Hashing => Box::new(HashingEmbedder::new(cfg.voxel.seed)),
                    EmbedderArg::Http => Box::new(HttpEmbedder {
                        endpoint: cfg.voxel.embed_endpoint.clone(),
                        model: cfg.voxel.embed_model.clone(),
                        dim: EMBED_DIM,
                    }),
                };
                attach_semantics(&mut grid, &asset, embedder.as_ref())?;
            }
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            grid.write(out)?;
            log::info!("{} occupied voxels at resolution {resolution}", grid.occupied.len());
            Ok(())
        }
        Command::Evaluate { pred, gt, out } => {
            let report = evaluate(&load(pred)?, &load(gt)?, &cfg.evaluate).map_err(invalid)?;
            let text = canonical_json(&report);
            print!("{text}");
            if let Some(out) = out {
                write_text(out, &text)?;
            }
            Ok(())
        }
        Command::CfmToy { out, steps, hidden, data } => run_cfm(out, *steps, *hidden, *data, &cfg.cfm),
        Command::Serve { root, addr, fixtures } => {
            if *fixtures {
                std::fs::create_dir_all(root)?;
                let ids = physasset_service::seed_fixture_root(root)?;
                eprintln!("seeded {}", ids.join(", "));
            }
            eprintln!("serving {} on http://{addr}", root.display());
            tokio::runtime::Runtime::new()?.block_on(physasset_service::serve(root, *addr, cfg.kinematics.clone()))?;
            Ok(())
        }
    }
}

fn run_annotate(
    input: &Path,
    out: &Path,
    mock_dir: Option<&Path>,
    mock_self: bool,
    approve: Option<&str>,
    resolution: Option<u32>,
    vlm: &VlmConfig,
) -> Result<()> {
    let asset = load(input)?;
    let prompt = build_prompt(&asset, resolution.unwrap_or(vlm.resolution))?;
    for w in &prompt.warnings {
        log::warn!("part {} is not visible from any view", w.part);
    }
    let backend: Box<dyn VlmBackend> = if let Some(dir) = mock_dir {
        Box::new(MockBackend::from_dir(dir)?)
    } else if mock_self {
        Box::new(MockBackend::from_annotation(raw_from_asset(&asset)))
    } else {
        Box::new(HttpBackend::new(vlm.clone()))
    };
    let retry = RetryPolicy {
        tries: vlm.retries.max(1),
        base_delay: Duration::from_millis(vlm.backoff_ms),
    };
    let raw = annotate_prompt(backend.as_ref(), &prompt, &vlm.model, vlm.max_images_per_request, &retry)?;
    save(&asset, out)?;
    write_text(&out.join(ANNOTATION_FILE), &canonical_json(&raw))?;
    write_text(&out.join("system_prompt.txt"), &prompt.system)?;
    for image in &prompt.images {
        let png = physasset::render::render_isolation(&asset, image.label, &physasset::render::default_property_views()[image.view]
            .clone()
            .with_resolution(resolution.unwrap_or(vlm.resolution), resolution.unwrap_or(vlm.resolution)))?;
        save_png(&png, &out.join(format!("part_{}.png", image.label)))?;
    }
    let log_path = out.join(physasset_service::REVIEW_LOG);
    if log_path.exists() {
        std::fs::remove_file(&log_path)?;
    }
    let mut log = ReviewLog::open(&log_path)?;
    let sha = Some(sha256_hex(canonical_json(&raw).as_bytes()));
    let event = |to, editor: &str| ReviewEvent {
        asset_id: asset.object_name.clone(),
        to,
        editor: editor.to_string(),
        timestamp: humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string(),
        annotation_sha256: sha.clone(),
    };
    log.append(&event(ReviewStatus::VlmDone, &vlm.model))?;
    if let Some(editor) = approve {
        log.append(&event(ReviewStatus::HumanApproved, editor))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EstimateRecord {
    constraint: KinematicConstraint,
    candidates: Vec<AxisCandidate>,
    plane: FittedPlane,
    region_size: usize,
}

fn run_estimate(input: &Path, out: &Path, auto_select: bool, config: &KinematicsConfig) -> Result<()> {
    let asset = load(input)?;
    let annotation = input.join(ANNOTATION_FILE);
    let (mut asset, stubs) = if annotation.exists() {
        let text = std::fs::read_to_string(&annotation)?;
        let raw: RawAnnotation = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", annotation.display())))?;
        let log_path = input.join(physasset_service::REVIEW_LOG);
        let review = if log_path.exists() { ReviewLog::replay(&log_path)? } else { ReviewState::default() };
        let applied = apply_annotation(&asset, &raw, &review).map_err(|e| match e {
            AnnotateError::NotApproved(s) => invalid(format!("annotation is {s:?}; approve it first (annotate --approve)")),
            other => invalid(other),
        })?;
        (applied.asset, applied.stubs)
    } else {
        let stubs: Vec<KinematicConstraint> = asset
            .constraints
            .iter()
            .filter(|c| c.kind.has_parts())
            .map(|c| KinematicConstraint::stub(c.kind, c.parent_part.unwrap(), c.child_part.unwrap()))
            .collect();
        let mut a = asset.clone();
        a.constraints.retain(|c| !c.kind.has_parts());
        (a, stubs)
    };
    if stubs.is_empty() {
        log::warn!("{}: no joints to estimate", input.display());
    }
    let mut records = Vec::new();
    for stub in &stubs {
        let (child, parent) = (stub.child_part.unwrap(), stub.parent_part.unwrap());
        let start = Instant::now();
        let est = estimate_constraint(&asset, child, parent, stub.kind, config)
            .map_err(|e| invalid(format!("joint {parent}->{child}: {e}")))?;
        log::info!("joint {parent}->{child} ({}) in {:.2}s", stub.kind, start.elapsed().as_secs_f64());
        let constraint = KinematicConstraint {
            finalized: auto_select,
            ..est.constraint
        };
        records.push(EstimateRecord {
            constraint: constraint.clone(),
            candidates: est.candidates,
            plane: est.plane,
            region_size: est.region_size,
        });
        asset.constraints.push(constraint);
    }
    save(&asset, out)?;
    let constraints: Vec<&KinematicConstraint> = records.iter().map(|r| &r.constraint).collect();
    write_text(&out.join("constraints.json"), &canonical_json(&constraints))?;
    write_text(&out.join("estimates.json"), &canonical_json(&records))
}

fn load_root(root: &Path) -> Result<Vec<(String, ObjectAsset)>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .with_context(|| format!("reading {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(ASSET_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter()
        .map(|d| Ok((d.file_name().unwrap().to_string_lossy().into_owned(), load(d)?)))
        .collect()
}

fn run_procgen(root: &Path, out: &Path, mode: ModeArg, limit: Option<usize>, cfg: &ProcgenConfig) -> Result<()> {
    let set = load_root(root)?;
    if set.is_empty() {
        bail!(invalid(format!("{}: no assets", root.display())));
    }
    let mode = match mode {
        ModeArg::Cross => Mode::Cross,
        ModeArg::Intra => Mode::Intra,
    };
    let mut e = enumerate_plans(&set, &set, mode, cfg);
    e.plans.truncate(limit.unwrap_or(usize::MAX));
    std::fs::create_dir_all(out)?;
    let mut made = Vec::new();
    for plan in &e.plans {
        let base = &set.iter().find(|(n, _)| *n == plan.base_asset_id).unwrap().1;
        let donor = &set.iter().find(|(n, _)| *n == plan.component_asset_id).unwrap().1;
        let name = format!("{}+{}-{}", plan.base_asset_id, plan.component_asset_id, plan.component_root_part);
        match compose(base, donor, plan) {
            Ok(asset) => {
                save(&asset, &out.join(&name))?;
                made.push(name);
            }
            Err(err) => e.rejected.push(physasset::procgen::Rejection {
                base_asset_id: plan.base_asset_id.clone(),
                component_asset_id: plan.component_asset_id.clone(),
                component_root_part: plan.component_root_part,
                reason: err.to_string(),
            }),
        }
    }
    write_text(&out.join("plans.json"), &canonical_json(&e.plans))?;
    write_text(&out.join("rejected.json"), &canonical_json(&e.rejected))?;
    write_text(&out.join("composed.json"), &canonical_json(&made))?;
    eprintln!("{} composed, {} rejected", made.len(), e.rejected.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct CfmReport {
    steps: usize,
    hidden: usize,
    initial_eval_loss: f64,
    final_eval_loss: f64,
    reduction: f64,
    mean_mode_distance_1_step: f64,
    mean_mode_distance_10_steps: f64,
}

fn run_cfm(out: &Path, steps: Option<usize>, hidden: usize, n: usize, base: &TrainConfig) -> Result<()> {
    let cfg = TrainConfig {
        steps: steps.unwrap_or(base.steps),
        ..base.clone()
    };
    let mixture = Mixture::toy_2d();
    let data = mixture.sample(n.max(1), cfg.seed);
    let mut model = MlpField::new(mixture.dim(), hidden, cfg.seed);
    let start = Instant::now();
    let report = train(&mut model, &data, &cfg).map_err(invalid)?;
    log::info!("trained {} steps in {:.1}s", cfg.steps, start.elapsed().as_secs_f64());
    std::fs::create_dir_all(out)?;
    write_text(&out.join("loss.csv"), &report.to_csv())?;
    let noise = Mixture {
        means: vec![vec![0.0; mixture.dim()]],
        std: 1.0,
    }
    .sample(256, cfg.seed ^ 1);
    let mut csv = String::from("steps,x,y\n");
    let mut dist = [0.0; 2];
    for (k, sub) in [1usize, 10].into_iter().enumerate() {
        for eps in noise.chunks(mixture.dim()) {
            let x = euler_sample(&model, eps, sub);
            dist[k] += mixture.nearest_mode_distance(&x) / 256.0;
            csv.push_str(&format!("{sub},{},{}\n", x[0], x[1]));
        }
    }
    write_text(&out.join("samples.csv"), &csv)?;
    let summary = CfmReport {
        steps: cfg.steps,
        hidden,
        initial_eval_loss: report.initial_eval(),
        final_eval_loss: report.final_eval(),
        reduction: 1.0 - report.final_eval() / report.initial_eval(),
        mean_mode_distance_1_step: dist[0],
        mean_mode_distance_10_steps: dist[1],
    };
    write_text(&out.join("report.json"), &canonical_json(&summary))?;
    AnyField::Mlp(model).save(&out.join("model.phxc"))?;
    Ok(())
}
