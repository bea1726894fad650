//! `qrsr`: make images scan as QR codes.
//!
//! Exit codes: 0 success (and scannable), 1 completed but unscannable,
//! 2 usage error, 3 input or domain error.

// `!(x < y)`-style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use config::{Format, JobConfig};
use qrsr::qart::{desired_pattern, transform, MatchReport};
use qrsr::qr::{decode, decode_matrix, encode, rasterize, CodeConfig, EcLevel, ModuleMatrix};
use qrsr::refine::{repair, RefineConfig, StopReason};
use qrsr::srl::srl;
use qrsr::tilt::TiltSpec;
use qrsr::verify::{format_table, overlay_errors, scan, sweep, ScanOptions, SsrReport, SweepSpec};
use qrsr::PixelImage;

#[derive(Parser)]
#[command(name = "qrsr", version, about = "Scanning-robust QR code images")]
struct Cli {
    /// TOML job configuration; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Report format on stdout.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a message and write the raster and module matrix.
    Encode {
        #[arg(long)]
        message: String,
        #[arg(long, short)]
        output: PathBuf,
        /// Module matrix text (default: output with .txt).
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[command(flatten)]
        code: CodeArgs,
    },
    /// Choose padding bits so the symbol resembles a reference image.
    Qart {
        #[arg(long)]
        message: String,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// Module matrix text (default: output with .txt).
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Match report JSON (default: output with .json).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        code: CodeArgs,
    },
    /// Refine an image (or a directory of PNGs) until it scans.
    Repair(RepairArgs),
    /// Decode images, optionally through a simulated tilt.
    Verify {
        #[arg(long)]
        message: String,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Tilt angle in degrees.
        #[arg(long, allow_hyphen_values = true)]
        tilt: Option<f64>,
        /// Camera focal length in image widths.
        #[arg(long)]
        focal: Option<f64>,
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        code: CodeArgs,
    },
    /// Repair a corpus across levels, messages and tilt angles.
    Sweep {
        /// Input images (default: the config's `sweep.inputs`).
        inputs: Vec<PathBuf>,
        #[arg(long, env = "QRSR_JOBS")]
        jobs: Option<usize>,
        /// Also write the JSON report here.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Per-module loss, error rate and decoder result for one image.
    Analyze {
        #[arg(long, required_unless_present = "target")]
        message: Option<String>,
        input: PathBuf,
        /// Target module matrix text (e.g. from `qart`); default encodes the message.
        #[arg(long)]
        target: Option<PathBuf>,
        /// Write a copy with misread modules tinted red.
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Include every module's score in JSON output.
        #[arg(long)]
        per_module: bool,
        #[command(flatten)]
        code: CodeArgs,
    },
}

#[derive(Args)]
struct RepairArgs {
    #[arg(long)]
    message: String,
    #[arg(required_unless_present = "dir", conflicts_with = "dir")]
    input: Option<PathBuf>,
    /// Repair every PNG in a directory.
    #[arg(long, requires = "out_dir")]
    dir: Option<PathBuf>,
    #[arg(long, short, required_unless_present = "dir")]
    output: Option<PathBuf>,
    /// Output directory for `--dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Trace JSONL (default: <output stem>.trace.jsonl).
    #[arg(long, conflicts_with = "dir")]
    trace: Option<PathBuf>,
    /// Residual-error overlay (default: <output stem>.overlay.png).
    #[arg(long, conflicts_with = "dir")]
    overlay: Option<PathBuf>,
    #[arg(long, env = "QRSR_JOBS")]
    jobs: Option<usize>,
    #[command(flatten)]
    code: CodeArgs,
    #[command(flatten)]
    refine: RefineArgs,
}

#[derive(Args)]
struct CodeArgs {
    /// QR version (1-5).
    #[arg(long = "qr-version")]
    qr_version: Option<u8>,
    /// Error-correction level: L, M, Q or H.
    #[arg(long, value_parser = parse_ec)]
    ec: Option<EcLevel>,
    #[arg(long)]
    mask: Option<u8>,
    #[arg(long)]
    module_px: Option<usize>,
    #[arg(long)]
    quiet_px: Option<usize>,
}

impl CodeArgs {
    fn resolve(&self, base: CodeConfig) -> Result<CodeConfig> {
        let cfg = CodeConfig {
            version: self.qr_version.unwrap_or(base.version),
            ec_level: self.ec.unwrap_or(base.ec_level),
            mask_id: self.mask.unwrap_or(base.mask_id),
            module_px: self.module_px.unwrap_or(base.module_px),
            quiet_px: self.quiet_px.unwrap_or(base.quiet_px),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda_reg: Option<f64>,
    /// Error-rate gate (default: the level's nominal capacity).
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    polish_iters: Option<usize>,
}

impl RefineArgs {
    fn resolve(&self, job: &JobConfig, ec: EcLevel) -> Result<RefineConfig> {
        let base = job.refine;
        let cfg = RefineConfig {
            lambda1: self.lambda1.unwrap_or(base.lambda1),
            lambda2: self.lambda2.unwrap_or(base.lambda2),
            lambda_reg: self.lambda_reg.unwrap_or(base.lambda_reg),
            tau: self
                .tau
                .or(job.tau_explicit.then_some(base.tau))
                .unwrap_or(ec.nominal_capacity()),
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            polish_iters: self.polish_iters.unwrap_or(base.polish_iters),
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_ec(s: &str) -> std::result::Result<EcLevel, String> {
    match s.to_ascii_uppercase().as_str() {
        "L" => Ok(EcLevel::L),
        "M" => Ok(EcLevel::M),
        "Q" => Ok(EcLevel::Q),
        "H" => Ok(EcLevel::H),
        _ => Err(format!("unknown error-correction level '{s}' (expected L, M, Q or H)")),
    }
}

enum Verdict {
    Scannable,
    Unscannable,
}

impl Verdict {
    fn from(ok: bool) -> Self {
        if ok {
            Verdict::Scannable
        } else {
            Verdict::Unscannable
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Verdict::Scannable) => ExitCode::SUCCESS,
        Ok(Verdict::Unscannable) => ExitCode::from(1),
        Err(e) => {
            eprintln!("qrsr: {e:#}");
            ExitCode::from(3)
        }
    }
}

struct Ctx {
    job: JobConfig,
    format: Format,
}

impl Ctx {
    fn emit<T: Serialize>(&self, value: &T, table: impl FnOnce() -> String) -> Result<()> {
        match self.format {
            Format::Json => println!("{}", serde_json::to_string_pretty(value)?),
            Format::Table => print!("{}", table()),
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<Verdict> {
    let job = match &cli.config {
        Some(path) => JobConfig::load(path)?,
        None => JobConfig::default(),
    };
    let ctx = Ctx {
        format: cli.format.or(job.format).unwrap_or_default(),
        job,
    };
    match cli.command {
        Command::Encode {
            message,
            output,
            matrix,
            code,
        } => cmd_encode(&ctx, &message, &output, matrix, &code.resolve(ctx.job.code)?),
        Command::Qart {
            message,
            reference,
            output,
            matrix,
            report,
            code,
        } => cmd_qart(
            &ctx,
            &message,
            &reference,
            &output,
            matrix,
            report,
            &code.resolve(ctx.job.code)?,
        ),
        Command::Repair(args) => cmd_repair(&ctx, args),
        Command::Verify {
            message,
            inputs,
            tilt,
            focal,
            report,
            code,
        } => {
            let spec = TiltSpec {
                degrees: tilt.unwrap_or(ctx.job.tilt.degrees),
                focal: focal.unwrap_or(ctx.job.tilt.focal),
            };
            cmd_verify(&ctx, &message, inputs, spec, report, &code.resolve(ctx.job.code)?)
        }
        Command::Sweep { inputs, jobs, output } => cmd_sweep(&ctx, inputs, jobs, output),
        Command::Analyze {
            message,
            input,
            target,
            overlay,
            per_module,
            code,
        } => cmd_analyze(
            &ctx,
            message,
            &input,
            target,
            overlay,
            per_module,
            &code.resolve(ctx.job.code)?,
        ),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input {} does not exist or is not a file", path.display());
    }
    Ok(())
}

fn require_writable(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            bail!("output directory {} does not exist", dir.display())
        }
        _ => Ok(()),
    }
}

fn sibling(output: &Path, suffix: &str) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    output.with_file_name(format!("{stem}{suffix}"))
}

fn load(path: &Path) -> Result<PixelImage> {
    PixelImage::load_png(path).with_context(|| format!("cannot load {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn save(image: &PixelImage, path: &Path) -> Result<()> {
    image
        .save_png(path)
        .with_context(|| format!("cannot write {}", path.display()))
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .context("cannot start worker pool")
}

#[derive(Serialize)]
struct EncodeSummary {
    output: PathBuf,
    matrix: PathBuf,
    code: CodeConfig,
    side_px: usize,
    capacity: usize,
}

fn cmd_encode(ctx: &Ctx, message: &str, output: &Path, matrix: Option<PathBuf>, cfg: &CodeConfig) -> Result<Verdict> {
    let matrix = matrix.unwrap_or_else(|| output.with_extension("txt"));
    require_writable(output)?;
    require_writable(&matrix)?;
    let m = encode(message.as_bytes(), cfg)?;
    save(&rasterize(&m, cfg), output)?;
    write(&matrix, m.to_text())?;
    let summary = EncodeSummary {
        output: output.to_path_buf(),
        matrix,
        code: *cfg,
        side_px: cfg.image_side(),
        capacity: cfg.block_spec()?.byte_capacity(),
    };
    ctx.emit(&summary, || {
        format_table(
            &["output", "version", "ec", "mask", "side_px", "capacity"],
            &[vec![
                summary.output.display().to_string(),
                cfg.version.to_string(),
                cfg.ec_level.to_string(),
                cfg.mask_id.to_string(),
                summary.side_px.to_string(),
                summary.capacity.to_string(),
            ]],
        )
    })?;
    Ok(Verdict::Scannable)
}

fn cmd_qart(
    ctx: &Ctx,
    message: &str,
    reference: &Path,
    output: &Path,
    matrix: Option<PathBuf>,
    report: Option<PathBuf>,
    cfg: &CodeConfig,
) -> Result<Verdict> {
    let matrix = matrix.unwrap_or_else(|| output.with_extension("txt"));
    let report = report.unwrap_or_else(|| output.with_extension("json"));
    require_file(reference)?;
    for p in [output, matrix.as_path(), report.as_path()] {
        require_writable(p)?;
    }
    let pattern = desired_pattern(&load(reference)?, cfg)?;
    let (m, matching) = transform(message.as_bytes(), cfg, &pattern)?;
    save(&rasterize(&m, cfg), output)?;
    write(&matrix, m.to_text())?;
    write(&report, serde_json::to_string_pretty(&matching)?)?;
    ctx.emit(&matching, || match_table(&matching))?;
    Ok(Verdict::Scannable)
}

fn match_table(m: &MatchReport) -> String {
    format_table(
        &["before", "after", "attainable", "free_bits", "modules_changed"],
        &[vec![
            format!("{:.4}", m.before),
            format!("{:.4}", m.after),
            format!("{:.4}", m.attainable),
            m.free_bits.to_string(),
            m.modules_changed.to_string(),
        ]],
    )
}

#[derive(Serialize)]
struct RepairSummary {
    input: PathBuf,
    output: PathBuf,
    scannable: bool,
    final_error_rate: f64,
    iterations: usize,
    gate_fired: bool,
    stops: Vec<String>,
    matching: MatchReport,
}

struct RepairJob {
    input: PathBuf,
    image: PixelImage,
    output: PathBuf,
    trace: PathBuf,
    overlay: PathBuf,
}

fn run_repair(job: &RepairJob, message: &str, code: &CodeConfig, refine: &RefineConfig) -> Result<RepairSummary> {
    let r = repair(&job.image, message.as_bytes(), code, refine)
        .with_context(|| format!("repairing {}", job.input.display()))?;
    save(&r.image, &job.output)?;
    write(&job.trace, r.trace.to_jsonl())?;
    save(&overlay_errors(&r.image, &r.target)?, &job.overlay)?;
    Ok(RepairSummary {
        input: job.input.clone(),
        output: job.output.clone(),
        scannable: r.scannable(),
        final_error_rate: r.trace.final_error_rate,
        iterations: r.trace.iterations(),
        gate_fired: !r.trace.gate_never_fired(),
        stops: r
            .trace
            .stops
            .iter()
            .map(|(p, s)| format!("{p:?}:{}", stop_name(*s)))
            .collect(),
        matching: r.matching,
    })
}

fn stop_name(s: StopReason) -> &'static str {
    match s {
        StopReason::ErrorFree => "error_free",
        StopReason::GateOffStable => "gate_off_stable",
        StopReason::MaxIters => "max_iters",
        StopReason::Stalled => "stalled",
    }
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    files.sort();
    Ok(files)
}

fn cmd_repair(ctx: &Ctx, args: RepairArgs) -> Result<Verdict> {
    let code = args.code.resolve(ctx.job.code)?;
    let refine = args.refine.resolve(&ctx.job, code.ec_level)?;
    encode(args.message.as_bytes(), &code)?;

    let jobs: Vec<RepairJob> = if let Some(dir) = &args.dir {
        let out_dir = args.out_dir.as_ref().expect("clap enforces --out-dir");
        let files = png_files(dir)?;
        if files.is_empty() {
            bail!("no PNG files in {}", dir.display());
        }
        std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
        files
            .into_iter()
            .map(|input| {
                let stem = input.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                Ok(RepairJob {
                    image: load(&input)?,
                    output: out_dir.join(format!("{stem}.png")),
                    trace: out_dir.join(format!("{stem}.trace.jsonl")),
                    overlay: out_dir.join(format!("{stem}.overlay.png")),
                    input,
                })
            })
            .collect::<Result<_>>()?
    } else {
        let input = args.input.clone().expect("clap enforces an input");
        let output = args.output.clone().expect("clap enforces --output");
        require_file(&input)?;
        let trace = args.trace.clone().unwrap_or_else(|| sibling(&output, ".trace.jsonl"));
        let overlay = args.overlay.clone().unwrap_or_else(|| sibling(&output, ".overlay.png"));
        for p in [&output, &trace, &overlay] {
            require_writable(p)?;
        }
        vec![RepairJob {
            image: load(&input)?,
            input,
            output,
            trace,
            overlay,
        }]
    };

    let summaries: Vec<RepairSummary> = pool(args.jobs)?.install(|| {
        jobs.par_iter()
            .map(|job| run_repair(job, &args.message, &code, &refine))
            .collect::<Result<_>>()
    })?;
    let all = summaries.iter().all(|s| s.scannable);
    ctx.emit(&summaries, || {
        let rows: Vec<Vec<String>> = summaries
            .iter()
            .map(|s| {
                vec![
                    s.input.display().to_string(),
                    if s.scannable { "yes".into() } else { "no".into() },
                    format!("{:.4}", s.final_error_rate),
                    s.iterations.to_string(),
                    s.stops.join(" "),
                ]
            })
            .collect();
        format_table(&["input", "scannable", "error_rate", "iterations", "stops"], &rows)
    })?;
    Ok(Verdict::from(all))
}

fn cmd_verify(
    ctx: &Ctx,
    message: &str,
    mut inputs: Vec<PathBuf>,
    tilt: TiltSpec,
    report: Option<PathBuf>,
    code: &CodeConfig,
) -> Result<Verdict> {
    inputs.sort();
    for p in &inputs {
        require_file(p)?;
    }
    if let Some(r) = &report {
        require_writable(r)?;
    }
    if !(tilt.degrees.abs() < 90.0) {
        bail!("tilt of {}° leaves nothing visible", tilt.degrees);
    }
    let side = code.image_side();
    let mut items = Vec::with_capacity(inputs.len());
    for p in &inputs {
        let image = load(p)?;
        if image.width() != side || image.height() != side {
            bail!(
                "{} is {}x{}, expected {side}x{side} for this code configuration",
                p.display(),
                image.width(),
                image.height()
            );
        }
        items.push(image);
    }
    let opts = ScanOptions {
        code: *code,
        tilt: Some(tilt),
    };
    let results = inputs
        .iter()
        .zip(&items)
        .map(|(p, img)| scan(&p.display().to_string(), img, message.as_bytes(), None, &opts))
        .collect();
    let ssr = SsrReport::from_items(results);
    if let Some(r) = &report {
        write(r, ssr.to_json())?;
    }
    ctx.emit(&ssr, || ssr.to_table())?;
    Ok(Verdict::from(ssr.scannable == ssr.corpus_size))
}

fn cmd_sweep(ctx: &Ctx, inputs: Vec<PathBuf>, jobs: Option<usize>, output: Option<PathBuf>) -> Result<Verdict> {
    let job = &ctx.job;
    let section = &job.sweep;
    let mut inputs = if inputs.is_empty() {
        section.inputs.clone()
    } else {
        inputs
    };
    inputs.sort();
    for p in &inputs {
        require_file(p)?;
    }
    if let Some(o) = &output {
        require_writable(o)?;
    }
    job.code.validate()?;
    let images: Vec<PixelImage> = if inputs.is_empty() {
        if section.desk_photos == 0 {
            bail!("sweep needs input images or `sweep.desk_photos` in the config");
        }
        (0..section.desk_photos as u64)
            .map(|s| qrsr::desk::photo(s, job.code.image_side()))
            .collect()
    } else {
        inputs.iter().map(|p| load(p)).collect::<Result<_>>()?
    };
    let spec = SweepSpec {
        ec_levels: section.ec_levels.clone(),
        angles: section.angles.clone(),
        messages: section.messages.clone(),
        blend_alpha: section.blend_alpha,
        focal: job.tilt.focal,
        code: job.code,
        refine: job.refine,
    };
    let report = pool(jobs)?.install(|| sweep(&spec, &images))?;
    if let Some(o) = &output {
        write(o, report.to_json())?;
    }
    ctx.emit(&report, || report.to_table())?;
    Ok(Verdict::Scannable)
}

#[derive(Serialize)]
struct AnalyzeSummary {
    input: PathBuf,
    loss: f64,
    error_rate: f64,
    mismatch_count: usize,
    modules: usize,
    scannable: bool,
    decoded: Option<String>,
    corrections: Option<usize>,
    failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_module: Option<Vec<qrsr::srl::ModuleScore>>,
}

fn cmd_analyze(
    ctx: &Ctx,
    message: Option<String>,
    input: &Path,
    target: Option<PathBuf>,
    overlay: Option<PathBuf>,
    per_module: bool,
    code: &CodeConfig,
) -> Result<Verdict> {
    require_file(input)?;
    if let Some(t) = &target {
        require_file(t)?;
    }
    if let Some(o) = &overlay {
        require_writable(o)?;
    }
    let target: ModuleMatrix = match &target {
        Some(t) => ModuleMatrix::from_text(
            &std::fs::read_to_string(t).with_context(|| format!("cannot read {}", t.display()))?,
        )?,
        None => encode(message.as_deref().unwrap_or_default().as_bytes(), code)?,
    };
    let expected = match &message {
        Some(m) => m.as_bytes().to_vec(),
        None => decode_matrix(&target).context("target matrix does not decode")?.payload,
    };
    if target.side() != code.side() {
        bail!(
            "target has {} modules per side, the code configuration {}",
            target.side(),
            code.side()
        );
    }
    let image = load(input)?.with_grid(code.geometry()).with_context(|| {
        format!(
            "{} does not match the {}px code raster",
            input.display(),
            code.image_side()
        )
    })?;
    let report = srl(&image, &target)?;
    if let Some(o) = &overlay {
        save(&overlay_errors(&image, &target)?, o)?;
    }
    let decoded = decode(&image, code);
    let scannable = decoded.as_ref().is_ok_and(|d| d.payload == expected);
    let summary = AnalyzeSummary {
        input: input.to_path_buf(),
        loss: report.loss,
        error_rate: report.error_rate,
        mismatch_count: report.mismatch_count,
        modules: report.per_module.len(),
        scannable,
        decoded: decoded
            .as_ref()
            .ok()
            .map(|d| String::from_utf8_lossy(&d.payload).into_owned()),
        corrections: decoded.as_ref().ok().map(|d| d.report.total()),
        failure: decoded.as_ref().err().map(|e| e.to_string()),
        per_module: per_module.then(|| report.per_module.clone()),
    };
    ctx.emit(&summary, || {
        format_table(
            &["input", "loss", "error_rate", "misread", "scannable", "corrections"],
            &[vec![
                summary.input.display().to_string(),
                format!("{:.6}", summary.loss),
                format!("{:.4}", summary.error_rate),
                format!("{}/{}", summary.mismatch_count, summary.modules),
                if scannable { "yes".into() } else { "no".into() },
                summary.corrections.map_or("-".into(), |c| c.to_string()),
            ]],
        )
    })?;
    Ok(Verdict::from(scannable))
}
