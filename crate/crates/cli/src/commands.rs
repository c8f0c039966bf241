use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use warpgen_core::data::{load_dir_clouds, normalize, save_cloud, synth_dataset, CloudFormat};
use warpgen_core::discriminator::critical_points;
use warpgen_core::metrics::{evaluate, UniformityConfig};
use warpgen_core::rng::{derive_seed, streams};
use warpgen_core::trainer::{load_checkpoint, save_checkpoint, Ablation};
use warpgen_core::{
    Dataset, Error, PointCloud, PriorKind, PriorSet, ShapeFamily, TrainConfig, TrainState,
};

use crate::usage;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Ply,
    Xyz,
}

impl From<Format> for CloudFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Ply => CloudFormat::Ply,
            Format::Xyz => CloudFormat::Xyz,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory of .ply/.xyz shapes, or `synthetic:NAME` with NAME one of spheres, boxes, cylinders, mixed.
    #[arg(long)]
    data: String,
    /// Output directory for the log, checkpoint and report.
    #[arg(long)]
    out: PathBuf,
    /// Total iterations (a resumed run continues up to this count).
    #[arg(long, default_value_t = 2000)]
    iters: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of priors.
    #[arg(long = "M", default_value_t = 16)]
    num_priors: usize,
    /// Points per prior.
    #[arg(long = "n", default_value_t = 128)]
    points_per_prior: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long = "lambda-s", default_value_t = 0.05)]
    lambda_s: f64,
    #[arg(long = "lambda-gp", default_value_t = 10.0)]
    lambda_gp: f64,
    /// Neighbors per critical point in the stitching loss.
    #[arg(long = "knn-k", default_value_t = 40)]
    knn_k: usize,
    /// Critic updates per generator update.
    #[arg(long = "d-steps", default_value_t = 1)]
    d_steps: usize,
    /// Comma-separated: no-stitch, no-enhance, no-global-code, single-prior.
    #[arg(long, value_delimiter = ',')]
    ablate: Vec<String>,
    /// Prior lattice: uniform3d, uniform2d or nonuniform3d.
    #[arg(long, default_value = "uniform3d")]
    prior: String,
    /// Shapes to synthesize for `synthetic:` data.
    #[arg(long, default_value_t = 200)]
    shapes: usize,
    /// Shapes kept out of training for the final report [default: min(50, 20% of the data)].
    #[arg(long)]
    holdout: Option<usize>,
    /// Iterations between checkpoints; 0 writes only the final one.
    #[arg(long = "checkpoint-every", default_value_t = 500)]
    checkpoint_every: u64,
    /// Iterations between log lines.
    #[arg(long = "log-every", default_value_t = 10)]
    log_every: u64,
    /// Continue from a checkpoint; its configuration replaces the model flags.
    #[arg(long)]
    resume: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self) -> anyhow::Result<TrainConfig> {
        let mut c = TrainConfig {
            seed: self.seed,
            points_per_prior: self.points_per_prior,
            batch: self.batch,
            d_steps: self.d_steps,
            ..TrainConfig::default()
        };
        c.generator.num_priors = self.num_priors;
        c.stitch.lambda_s = self.lambda_s;
        c.stitch.k = self.knn_k;
        c.gp.lambda_gp = self.lambda_gp;
        c.prior = self
            .prior
            .parse()
            .map_err(|e: Error| usage(format!("--prior: {e}")))?;
        for name in &self.ablate {
            let a: Ablation = name
                .parse()
                .map_err(|e: Error| usage(format!("--ablate: {e}")))?;
            c.apply(a);
        }

        let flag_checks: [(bool, String); 6] = [
            (self.num_priors == 0, "--M must be positive".into()),
            (self.points_per_prior == 0, "--n must be positive".into()),
            (self.batch == 0, "--batch must be positive".into()),
            (self.d_steps == 0, "--d-steps must be positive".into()),
            (
                !c.generator
                    .enhanced_dim
                    .is_multiple_of(c.generator.num_priors),
                format!(
                    "--M {} must divide the enhanced code width {}",
                    self.num_priors, c.generator.enhanced_dim
                ),
            ),
            (
                self.knn_k < 2 || self.knn_k >= c.points_per_cloud(),
                format!(
                    "--knn-k {} must lie in [2, --M * --n) = [2, {})",
                    self.knn_k,
                    c.points_per_cloud()
                ),
            ),
        ];
        if let Some((_, msg)) = flag_checks.into_iter().find(|(bad, _)| *bad) {
            return Err(usage(msg));
        }
        if [self.lambda_s, self.lambda_gp]
            .iter()
            .any(|v| v.is_nan() || *v < 0.0)
        {
            return Err(usage("--lambda-s and --lambda-gp must be non-negative"));
        }
        c.validate().map_err(|e| usage(e.to_string()))?;
        Ok(c)
    }
}

fn load_dataset(spec: &str, shapes: usize, points: usize, seed: u64) -> anyhow::Result<Dataset> {
    let seed = derive_seed(seed, streams::DATASET);
    if let Some(name) = spec.strip_prefix("synthetic:") {
        let family: ShapeFamily = name
            .parse()
            .map_err(|e: Error| usage(format!("--data: {e}")))?;
        if shapes == 0 {
            return Err(usage("--shapes must be positive"));
        }
        Ok(synth_dataset(family, shapes, points, seed)?)
    } else {
        let dir = Path::new(spec);
        if !dir.is_dir() {
            return Err(usage(format!(
                "--data: `{spec}` is neither a directory nor synthetic:NAME"
            )));
        }
        Dataset::load_dir(dir, points, seed).with_context(|| format!("loading {}", dir.display()))
    }
}

fn progress(quiet: bool, msg: &str) {
    if !quiet {
        eprintln!("{msg}");
    }
}

pub fn train(args: TrainArgs, quiet: bool) -> anyhow::Result<()> {
    let mut state = match &args.resume {
        Some(path) => {
            load_checkpoint(path).with_context(|| format!("resuming from {}", path.display()))?
        }
        None => TrainState::new(args.config()?)?,
    };
    let seed = state.config.seed;
    let mut data = load_dataset(
        &args.data,
        args.shapes,
        state.config.points_per_cloud(),
        seed,
    )?;
    let holdout = args.holdout.unwrap_or((data.len() / 5).min(50));
    if holdout >= data.len() || data.len() - holdout < state.config.batch {
        return Err(usage(format!(
            "{} shapes leave fewer than --batch {} for training after holding out {holdout} (--holdout)",
            data.len(),
            state.config.batch
        )));
    }
    let heldout = data.split_off(holdout);
    crate::ensure_dir(&args.out)?;

    let log_path = args.out.join("train.log");
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let ckpt_path = args.out.join("checkpoint.ckpt");
    progress(
        quiet,
        &format!(
            "training on {} shapes of {} points ({} held out), iterations {}..{}",
            data.len(),
            state.config.points_per_cloud(),
            heldout.len(),
            state.iteration(),
            args.iters
        ),
    );

    while state.iteration() < args.iters {
        let step = state.train_step(&data.shapes)?;
        let it = step.iteration;
        if (args.log_every > 0 && it % args.log_every == 0) || it == args.iters {
            writeln!(log, "{}", step.line())
                .with_context(|| format!("writing {}", log_path.display()))?;
            progress(quiet, &step.line());
        }
        if args.checkpoint_every > 0 && it % args.checkpoint_every == 0 {
            save_checkpoint(&state, &ckpt_path)?;
        }
    }
    save_checkpoint(&state, &ckpt_path)?;
    progress(
        quiet,
        &format!("checkpoint written to {}", ckpt_path.display()),
    );

    if heldout.is_empty() {
        return Ok(());
    }
    let generated = state.sample(heldout.len(), state.config.points_per_prior, seed)?;
    let report = evaluate(&generated, &heldout.shapes, &UniformityConfig::default())?;
    write_report(&report, &args.out.join("report.json"))?;
    print!("{}", report.to_text());
    Ok(())
}

fn write_report(report: &warpgen_core::MetricReport, path: &Path) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(&report.to_json())?;
    fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    let text = path.with_extension("txt");
    fs::write(&text, report.to_text()).with_context(|| format!("writing {}", text.display()))
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of clouds to write.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Points per prior [default: the training value].
    #[arg(long = "points-per-prior")]
    points_per_prior: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Ply)]
    format: Format,
    /// Color PLY vertices by the prior they were warped from.
    #[arg(long)]
    colors: bool,
}

pub fn generate(args: GenerateArgs, quiet: bool) -> anyhow::Result<()> {
    let state = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let n = args
        .points_per_prior
        .unwrap_or(state.config.points_per_prior);
    if n == 0 {
        return Err(usage("--points-per-prior must be positive"));
    }
    crate::ensure_dir(&args.out_dir)?;
    if args.count == 0 {
        return Ok(());
    }
    let format = CloudFormat::from(args.format);
    let clouds = state.sample(args.count, n, args.seed)?;
    for (i, cloud) in clouds.iter().enumerate() {
        let path = args
            .out_dir
            .join(format!("sample_{i:04}.{}", format.extension()));
        save_cloud(cloud, &path, format, args.colors)?;
    }
    progress(
        quiet,
        &format!(
            "wrote {} clouds of {} points to {}",
            clouds.len(),
            n * state.config.generator.num_priors,
            args.out_dir.display()
        ),
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Generated shapes; may be replaced by --checkpoint.
    #[arg(long = "gen-dir")]
    gen_dir: Option<PathBuf>,
    /// Reference shapes.
    #[arg(long = "ref-dir")]
    ref_dir: PathBuf,
    /// Sample as many clouds as there are references from this checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Points per prior when sampling from --checkpoint [default: the training value].
    #[arg(long = "points-per-prior")]
    points_per_prior: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report path; a text copy is written next to it.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Dump each cloud's critical points under --critical-dir (needs --checkpoint).
    #[arg(long)]
    critical: bool,
    #[arg(long = "critical-dir", default_value = "critical")]
    critical_dir: PathBuf,
    /// Skip per-shape normalization before computing metrics.
    #[arg(long)]
    raw: bool,
}

pub fn eval(args: EvalArgs, quiet: bool) -> anyhow::Result<()> {
    if args.critical && args.checkpoint.is_none() {
        return Err(usage("--critical needs --checkpoint"));
    }
    if args.gen_dir.is_none() && args.checkpoint.is_none() {
        return Err(usage("eval needs --gen-dir or --checkpoint"));
    }
    let state = match &args.checkpoint {
        Some(p) => Some(load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let prepare = |clouds: Vec<PointCloud>| -> Vec<PointCloud> {
        if args.raw {
            clouds
        } else {
            clouds.iter().map(|c| normalize(c).cloud).collect()
        }
    };
    let reference = prepare(
        load_dir_clouds(&args.ref_dir)
            .with_context(|| format!("reading --ref-dir {}", args.ref_dir.display()))?,
    );
    let generated = match (&args.gen_dir, &state) {
        (Some(dir), _) => prepare(
            load_dir_clouds(dir).with_context(|| format!("reading --gen-dir {}", dir.display()))?,
        ),
        (None, Some(s)) => {
            let n = args.points_per_prior.unwrap_or(s.config.points_per_prior);
            s.sample(reference.len(), n, args.seed)?
        }
        (None, None) => unreachable!("checked above"),
    };

    if args.critical {
        let state = state.as_ref().expect("checked above");
        crate::ensure_dir(&args.critical_dir)?;
        for (tag, set) in [("gen", &generated), ("ref", &reference)] {
            for (i, cloud) in set.iter().enumerate() {
                let crit = critical_points(cloud, &state.discriminator)?;
                let path = args.critical_dir.join(format!("{tag}_{i:04}.xyz"));
                save_cloud(
                    &PointCloud::new(crit.points),
                    &path,
                    CloudFormat::Xyz,
                    false,
                )?;
            }
        }
        progress(
            quiet,
            &format!("critical points written to {}", args.critical_dir.display()),
        );
    }

    let report = evaluate(&generated, &reference, &UniformityConfig::default())?;
    if let Some(path) = &args.report {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            crate::ensure_dir(parent)?;
        }
        write_report(&report, path)?;
    }
    print!("{}", report.to_text());
    Ok(())
}

#[derive(Args, Debug)]
pub struct PriorArgs {
    /// Take kind, count and seed from a checkpoint instead of the flags.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// uniform3d, uniform2d or nonuniform3d.
    #[arg(long, default_value = "uniform3d")]
    kind: String,
    /// Points per prior [default: 128, or the checkpoint's value].
    #[arg(long = "n")]
    points_per_prior: Option<usize>,
    #[arg(long = "M", default_value_t = 16)]
    num_priors: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; the extension (.ply or .xyz) picks the format.
    #[arg(long)]
    out: PathBuf,
}

pub fn priors(args: PriorArgs) -> anyhow::Result<()> {
    let format = CloudFormat::from_path(&args.out).map_err(|e| usage(format!("--out: {e}")))?;
    let set: PriorSet = match &args.checkpoint {
        Some(p) => {
            let state = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            let n = args
                .points_per_prior
                .unwrap_or(state.config.points_per_prior);
            TrainState::priors_for(&state.config, n)?
        }
        None => {
            let kind: PriorKind = args
                .kind
                .parse()
                .map_err(|e: Error| usage(format!("--kind: {e}")))?;
            let n = args.points_per_prior.unwrap_or(128);
            if n == 0 || args.num_priors == 0 {
                return Err(usage("--n and --M must be positive"));
            }
            PriorSet::build(
                kind,
                n,
                args.num_priors,
                derive_seed(args.seed, streams::PRIOR),
            )?
        }
    };
    let mut cloud = PointCloud::from_tensor(&set.stacked())?;
    cloud.partition_of = Some((0..set.total()).map(|i| i / set.n()).collect());
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        crate::ensure_dir(parent)?;
    }
    save_cloud(&cloud, &args.out, format, true)?;
    Ok(())
}
