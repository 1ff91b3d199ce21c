//! Command-line front end: `gen`, `reconstruct`, `eval` and `bench`.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 on internal errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geom::Polyline;
use crate::io::{
    decode_gradient_map, encode_gradient_map, encode_rgb, read_gradient_map, write_gradient_map, write_overlap_map, GroundTruthFile,
};
use crate::metrics::{ottp, psnr, OttpReport};
use crate::pipeline::{reconstruct, render_overlay, PipelineConfig, StageTimings};
use crate::raster::GradientMap;
use crate::spline::ThreadSpline;
use crate::synth::{apply_salt_noise, degraded_inputs, generate_scene, Rect, SceneConfig, ThreadCurve};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "THREADTRACE_THREADS";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "threadtrace", version, about = "Reconstruct ordered thread centerlines from gradient maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground truth.
    Gen(GenArgs),
    /// Reconstruct the thread spline from a gradient map (and its conjugate).
    Reconstruct(ReconstructArgs),
    /// Score reconstructions of a dataset against its ground truth.
    Eval(EvalArgs),
    /// Time repeated reconstructions of one frame.
    Bench(BenchArgs),
}

/// Pipeline parameters. Flags override `--config`, which overrides defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON file with pipeline configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Thread width in pixels.
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub t_l: Option<f64>,
    #[arg(long)]
    pub t_u: Option<f64>,
    #[arg(long)]
    pub t_d: Option<f64>,
    #[arg(long)]
    pub t_v: Option<f64>,
    #[arg(long)]
    pub t_c: Option<usize>,
    #[arg(long)]
    pub mask_tolerance: Option<f64>,
    #[arg(long)]
    pub mask_threshold: Option<f64>,
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[arg(long)]
    pub n_samples: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_json(&read_file(path)?)?,
            None => PipelineConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field {
                    cfg.$field = v;
                })*
            };
        }
        apply!(w, t_l, t_u, t_d, t_v, t_c, mask_tolerance, mask_threshold, smoothing, n_samples);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Seed of the first scene; scene `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 384)]
    pub height: usize,
    /// Thread width in pixels.
    #[arg(long, default_value_t = 4.0)]
    pub w: f64,
    #[arg(long, default_value_t = 8)]
    pub control_points: usize,
    #[arg(long, default_value_t = 0)]
    pub min_crossings: usize,
    #[arg(long, default_value_t = 2)]
    pub max_crossings: usize,
    #[arg(long, default_value_t = 0)]
    pub occluders: usize,
    #[arg(long, default_value_t = 40)]
    pub occluder_size: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    /// Fraction of gradient-map pixels replaced by random values.
    #[arg(long, default_value_t = 0.0)]
    pub salt: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub gradient: PathBuf,
    #[arg(long)]
    pub conjugate: Option<PathBuf>,
    /// Output JSON with the spline and its uniform samples.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional RGB overlay PNG.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory of `<id>.json` reconstruction files to score instead of reconstructing.
    #[arg(long, conflicts_with = "maps")]
    pub predictions: Option<PathBuf>,
    /// Directory of predicted maps `<id>/gradient.png` (and optional `<id>/conjugate.png`).
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// Ignore conjugate maps.
    #[arg(long)]
    pub no_fusion: bool,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Gradient map; a scene is generated from `--seed` when absent.
    #[arg(long)]
    pub gradient: Option<PathBuf>,
    #[arg(long, requires = "gradient")]
    pub conjugate: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// One scene of a generated dataset. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub gradient: PathBuf,
    pub conjugate: PathBuf,
    pub overlap: PathBuf,
    pub ground_truth: PathBuf,
    /// Maps fed to the reconstruction (equal to the clean maps without degradation).
    pub input_gradient: PathBuf,
    pub input_conjugate: PathBuf,
    pub occluders: Vec<Rect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scene: SceneConfig,
    pub salt: f64,
    pub scenes: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&read_file(path)?)?)
    }
}

/// File written by `reconstruct`; `eval --predictions` needs only `sampled`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructionFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spline: Option<ThreadSpline>,
    pub sampled: Polyline,
}

fn serialize_db<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) if v.is_infinite() && *v > 0.0 => s.serialize_str("inf"),
        Some(v) => s.serialize_f64(*v),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameReport {
    pub id: String,
    /// Input gradient map against the clean one; absent for curve predictions.
    #[serde(serialize_with = "serialize_db")]
    pub psnr_db: Option<f64>,
    pub ottp: Option<OttpReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub frames: usize,
    pub detected: usize,
    /// Means over detected frames.
    pub mean_overall: Option<f64>,
    pub mean_needle_end: Option<f64>,
    pub mean_tail_end: Option<f64>,
    /// Share of detected frames with overall OTTP at most 3 px.
    pub within_3px: Option<f64>,
    #[serde(serialize_with = "serialize_db")]
    pub mean_psnr_db: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub frames: Vec<FrameReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub runs: usize,
    pub threads: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub stage_median_ms: StageTimings,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn load_map(path: &Path) -> Result<GradientMap> {
    read_gradient_map(path).map_err(|e| match e {
        Error::Io(io) => Error::InvalidArgument(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

fn to_json_pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("report serializes");
    out.push(b'\n');
    out
}

pub fn gen(args: &GenArgs) -> Result<Manifest> {
    if !(0.0..=1.0).contains(&args.salt) {
        return Err(Error::InvalidArgument(format!("salt fraction must be in [0, 1], got {}", args.salt)));
    }
    let base = SceneConfig {
        width: args.width,
        height: args.height,
        thread_width: args.w,
        n_control_points: args.control_points,
        min_self_intersections: args.min_crossings,
        max_self_intersections: args.max_crossings,
        occlusion_rects: args.occluders,
        occluder_size: args.occluder_size,
        noise_sigma: args.noise_sigma,
        seed: args.seed,
    };
    base.validate()?;
    std::fs::create_dir_all(&args.out)?;
    let degraded = args.occluders > 0 || args.noise_sigma > 0.0 || args.salt > 0.0;
    let scenes = (0..args.count)
        .into_par_iter()
        .map(|i| {
            let cfg = SceneConfig {
                seed: args.seed.wrapping_add(i as u64),
                ..base.clone()
            };
            let id = format!("scene_{i:04}");
            let dir = args.out.join(&id);
            std::fs::create_dir_all(&dir)?;
            let gt = generate_scene(&cfg)?;
            let rel = |name: &str| PathBuf::from(&id).join(name);
            write_gradient_map(&dir.join("gradient.png"), &gt.gradient)?;
            write_gradient_map(&dir.join("conjugate.png"), &gt.conjugate)?;
            write_overlap_map(&dir.join("overlap.png"), &gt.overlap)?;
            std::fs::write(dir.join("ground_truth.json"), gt.curve.to_file().to_json())?;
            let mut entry = ManifestEntry {
                id: id.clone(),
                seed: cfg.seed,
                gradient: rel("gradient.png"),
                conjugate: rel("conjugate.png"),
                overlap: rel("overlap.png"),
                ground_truth: rel("ground_truth.json"),
                input_gradient: rel("gradient.png"),
                input_conjugate: rel("conjugate.png"),
                occluders: Vec::new(),
            };
            if degraded {
                let (mut g, c, rects) = degraded_inputs(&gt, &cfg)?;
                if args.salt > 0.0 {
                    g = apply_salt_noise(&g, args.salt, cfg.seed);
                }
                write_gradient_map(&dir.join("input_gradient.png"), &g)?;
                write_gradient_map(&dir.join("input_conjugate.png"), &c)?;
                entry.input_gradient = rel("input_gradient.png");
                entry.input_conjugate = rel("input_conjugate.png");
                entry.occluders = rects;
            }
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        scene: base,
        salt: args.salt,
        scenes,
    };
    std::fs::write(args.out.join(MANIFEST_FILE), to_json_pretty(&manifest))?;
    Ok(manifest)
}

pub fn run_reconstruct(args: &ReconstructArgs) -> Result<ReconstructionFile> {
    let cfg = args.config.resolve()?;
    let g = load_map(&args.gradient)?;
    let c = args.conjugate.as_deref().map(load_map).transpose()?;
    let r = reconstruct(&g, c.as_ref(), &cfg)?;
    let file = ReconstructionFile {
        spline: Some(r.spline),
        sampled: r.sampled,
    };
    write_file(&args.out, &to_json_pretty(&file))?;
    if let Some(path) = &args.overlay {
        let bg = r.fused_field;
        write_file(path, &encode_rgb(bg.width(), bg.height(), &render_overlay(&bg, &file.sampled)))?;
    }
    Ok(file)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn eval_frame(entry: &ManifestEntry, root: &Path, args: &EvalArgs, cfg: &PipelineConfig) -> Result<FrameReport> {
    let gt_file = GroundTruthFile::from_json(&read_file(&root.join(&entry.ground_truth))?)?;
    let curve = ThreadCurve::from_file(&gt_file)?;
    let mut report = FrameReport {
        id: entry.id.clone(),
        psnr_db: None,
        ottp: None,
        error: None,
    };
    let sampled = if let Some(dir) = &args.predictions {
        let pred: ReconstructionFile = serde_json::from_slice(&read_file(&dir.join(format!("{}.json", entry.id)))?)?;
        pred.sampled
    } else {
        let (g_path, c_path) = match &args.maps {
            Some(dir) => (dir.join(&entry.id).join("gradient.png"), Some(dir.join(&entry.id).join("conjugate.png")).filter(|p| p.exists())),
            None => (root.join(&entry.input_gradient), Some(root.join(&entry.input_conjugate))),
        };
        let g = load_map(&g_path)?;
        let clean = load_map(&root.join(&entry.gradient))?;
        let g_cmp = if (g.width(), g.height()) == (clean.width(), clean.height()) { g.clone() } else { g.resize(clean.width(), clean.height())? };
        report.psnr_db = Some(psnr(&g_cmp, &clean)?);
        let c = match c_path.filter(|_| !args.no_fusion) {
            Some(p) => Some(load_map(&p)?),
            None => None,
        };
        match reconstruct(&g, c.as_ref(), cfg) {
            Ok(r) => r.sampled,
            Err(e @ (Error::NoThreadDetected | Error::AllSegmentsDropped { .. })) => {
                report.error = Some(e.to_string());
                return Ok(report);
            }
            Err(e) => return Err(e),
        }
    };
    report.ottp = Some(ottp(&sampled, &curve.centerline)?);
    Ok(report)
}

pub fn eval(args: &EvalArgs) -> Result<EvalReport> {
    let cfg = args.config.resolve()?;
    let manifest = Manifest::read(&args.manifest)?;
    let root = args.manifest.parent().unwrap_or(Path::new("."));
    let frames = manifest
        .scenes
        .par_iter()
        .map(|e| eval_frame(e, root, args, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let detected: Vec<&OttpReport> = frames.iter().filter_map(|f| f.ottp.as_ref()).collect();
    let summary = EvalSummary {
        frames: frames.len(),
        detected: detected.len(),
        mean_overall: mean(detected.iter().map(|o| o.overall)),
        mean_needle_end: mean(detected.iter().map(|o| o.needle_end)),
        mean_tail_end: mean(detected.iter().map(|o| o.tail_end)),
        within_3px: mean(detected.iter().map(|o| if o.overall <= 3.0 { 1.0 } else { 0.0 })),
        mean_psnr_db: mean(frames.iter().filter_map(|f| f.psnr_db)),
    };
    let report = EvalReport { summary, frames };
    let bytes = to_json_pretty(&report);
    match &args.out {
        Some(path) => write_file(path, &bytes)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(report)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn bench(args: &BenchArgs) -> Result<BenchReport> {
    let cfg = args.config.resolve()?;
    if args.runs == 0 {
        return Err(Error::InvalidArgument("runs must be at least 1".into()));
    }
    let (g, c) = match &args.gradient {
        Some(path) => (load_map(path)?, args.conjugate.as_deref().map(load_map).transpose()?),
        None => {
            let gt = generate_scene(&SceneConfig {
                seed: args.seed,
                ..SceneConfig::default()
            })?;
            // Through the file format, as `reconstruct` would see them.
            let g = decode_gradient_map(&encode_gradient_map(&gt.gradient))?;
            let c = decode_gradient_map(&encode_gradient_map(&gt.conjugate))?;
            (g, Some(c))
        }
    };
    for _ in 0..args.warmup {
        reconstruct(&g, c.as_ref(), &cfg)?;
    }
    let mut totals = Vec::with_capacity(args.runs);
    let mut stages: Vec<StageTimings> = Vec::with_capacity(args.runs);
    for _ in 0..args.runs {
        let t = Instant::now();
        let r = reconstruct(&g, c.as_ref(), &cfg)?;
        totals.push(t.elapsed().as_secs_f64() * 1e3);
        stages.push(r.timings);
    }
    let stage = |f: fn(&StageTimings) -> f64| median(stages.iter().map(f).collect());
    let report = BenchReport {
        width: g.width(),
        height: g.height(),
        runs: args.runs,
        threads: rayon::current_num_threads(),
        median_ms: median(totals.clone()),
        mean_ms: mean(totals.iter().copied()).unwrap_or(0.0),
        min_ms: totals.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: totals.iter().copied().fold(0.0, f64::max),
        stage_median_ms: StageTimings {
            fusion_ms: stage(|s| s.fusion_ms),
            ridge_ms: stage(|s| s.ridge_ms),
            search_ms: stage(|s| s.search_ms),
            link_ms: stage(|s| s.link_ms),
            fit_ms: stage(|s| s.fit_ms),
            total_ms: stage(|s| s.total_ms),
        },
    };
    let bytes = to_json_pretty(&report);
    match &args.out {
        Some(path) => write_file(path, &bytes)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(report)
}

/// Exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::CoincidentPoints { .. } => 2,
        _ => 1,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // Already initialized when `run` is called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Gen(a) => gen(a).map(|m| eprintln!("wrote {} scenes to {}", m.scenes.len(), a.out.display())),
        Command::Reconstruct(a) => run_reconstruct(a).map(drop),
        Command::Eval(a) => eval(a).map(drop),
        Command::Bench(a) => bench(a).map(drop),
    }
}

/// Parse `argv` and run the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match std::panic::catch_unwind(|| dispatch(&cli)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("threadtrace: error: {e}");
            exit_code(&e)
        }
        Err(_) => {
            eprintln!("threadtrace: internal error");
            2
        }
    }
}
