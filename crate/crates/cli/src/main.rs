use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use patchsvd::archive::{self, ArchiveError};
use patchsvd::codec::{self, Analysis, CodecError, CompressedImage};
use patchsvd::metrics;
use patchsvd::ratemath::{self, ConfigError, RateError};
use patchsvd::sweep::{self, CodecKind, JpegTools, SweepSpec};
use patchsvd::{CodecConfig, Image, Precision, ScoreFunction};

/// Exit codes beyond clap's own 2 for usage errors.
const EXIT_INPUT: u8 = 3;
const EXIT_CONFIG: u8 = 4;
const EXIT_CORRUPT: u8 = 5;

#[derive(Parser, Debug)]
#[command(version, about = "Patch-wise SVD image compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Cap on worker threads
    #[arg(long, global = true, env = "PATCHSVD_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compress a PNG into a .psvd archive
    Compress {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        codec: CodecArgs,
    },
    /// Restore a PNG from a .psvd archive
    Decompress {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compare two images: MSE, PSNR, SSIM
    Eval {
        reference: PathBuf,
        candidate: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run a codec/ratio/patch-size grid over a directory of PNGs
    Sweep {
        dir: PathBuf,
        #[arg(short, long, default_value = "sweep.csv")]
        output: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "16")]
        patch: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.8,0.85,0.9")]
        cr: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "std")]
        score: Vec<ScoreFunction>,
        #[arg(long, value_delimiter = ',', default_value = "patchsvd,svd")]
        codec: Vec<CodecKind>,
        /// Explicit complex rank for every patch size (requires --ks)
        #[arg(long, requires = "ks")]
        kc: Option<usize>,
        #[arg(long, requires = "kc")]
        ks: Option<usize>,
        #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
        precision: PrecisionArg,
    },
    /// Write original | PatchSVD | SVD side by side at the same ratio
    Compare {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        codec: CodecArgs,
        /// Pixels of black between panels
        #[arg(long, default_value_t = 4)]
        gap: usize,
    },
}

#[derive(Args, Debug, Clone)]
struct CodecArgs {
    /// Target compression ratio (fraction of values saved)
    #[arg(long, default_value_t = 0.85)]
    cr: f64,
    /// Square patch size
    #[arg(long, default_value_t = 16)]
    patch: usize,
    /// Patch width, overrides --patch
    #[arg(long)]
    patch_x: Option<usize>,
    /// Patch height, overrides --patch
    #[arg(long)]
    patch_y: Option<usize>,
    /// Rank of complex patches [default: largest rank that still compresses]
    #[arg(long)]
    kc: Option<usize>,
    /// Rank of simple patches
    #[arg(long, default_value_t = 1)]
    ks: usize,
    #[arg(long, default_value_t = ScoreFunction::Std)]
    score: ScoreFunction,
    /// Rank of the global approximation whose residual ranks patches
    #[arg(long, default_value_t = 1)]
    base_rank: usize,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    precision: PrecisionArg,
}

impl CodecArgs {
    fn config(&self) -> CodecConfig {
        let p_x = self.patch_x.unwrap_or(self.patch);
        let p_y = self.patch_y.unwrap_or(self.patch);
        CodecConfig {
            p_x,
            p_y,
            k_c: self
                .kc
                .unwrap_or_else(|| ratemath::default_complex_rank(p_x, p_y)),
            k_s: self.ks,
            target_cr: self.cr,
            score_fn: self.score,
            base_rank: self.base_rank,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("warning: could not size thread pool: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ArchiveError>() {
            return EXIT_CORRUPT;
        }
        if cause.is::<ConfigError>() || cause.is::<RateError>() {
            return EXIT_CONFIG;
        }
        if let Some(c) = cause.downcast_ref::<CodecError>() {
            return match c {
                CodecError::Config(_) | CodecError::Rate(_) => EXIT_CONFIG,
                CodecError::Corrupt(_) => EXIT_CORRUPT,
                _ => EXIT_INPUT,
            };
        }
    }
    EXIT_INPUT
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Compress {
            input,
            output,
            codec,
        } => compress(&input, output, &codec),
        Command::Decompress { input, output } => decompress(&input, output),
        Command::Eval {
            reference,
            candidate,
            json,
        } => eval(&reference, &candidate, json),
        Command::Sweep {
            dir,
            output,
            patch,
            cr,
            score,
            codec,
            kc,
            ks,
            precision,
        } => {
            let mut spec = SweepSpec::from_dir(&dir)?;
            spec.patch_sizes = patch;
            spec.crs = cr;
            spec.score_fns = score;
            spec.codecs = codec;
            spec.precision = precision.into();
            spec.ranks = kc.zip(ks);
            if spec.codecs.contains(&CodecKind::Jpeg) {
                spec.jpeg = JpegTools::discover();
            }
            run_sweep(&spec, &output)
        }
        Command::Compare {
            input,
            output,
            codec,
            gap,
        } => compare(&input, &output, &codec, gap),
    }
}

fn read_png(path: &Path) -> Result<Image> {
    Ok(Image::read_png(path)?)
}

/// Validates up front so a bad config is reported before the SVD runs.
fn checked_config(args: &CodecArgs) -> Result<CodecConfig> {
    let cfg = args.config();
    cfg.validate()?;
    if cfg.k_c == cfg.k_s {
        eprintln!("warning: k_c equals k_s; every patch gets the same rank (uniform SVD path)");
    }
    Ok(cfg)
}

fn compress(input: &Path, output: Option<PathBuf>, args: &CodecArgs) -> Result<()> {
    let cfg = checked_config(args)?;
    let img = read_png(input)?;
    let c = codec::compress_with(&img, &cfg, args.precision.into())?;
    let bytes = archive::encode(&c)?;
    let output = output.unwrap_or_else(|| input.with_extension(archive::EXTENSION));
    fs::write(&output, &bytes).with_context(|| format!("writing {}", output.display()))?;
    print_summary(&c, bytes.len(), &img);
    if c.element_compression_ratio() < cfg.target_cr {
        eprintln!(
            "warning: uniform ranks fix the ratio at {:.6}, below the target {}",
            c.element_compression_ratio(),
            cfg.target_cr
        );
    }
    println!("wrote {}", output.display());
    Ok(())
}

fn print_summary(c: &CompressedImage, archive_len: usize, img: &Image) {
    println!(
        "element compression ratio: {:.6}",
        c.element_compression_ratio()
    );
    println!(
        "byte compression ratio: {:.6} ({} of {} bytes)",
        archive::byte_compression_ratio(archive_len, img),
        archive_len,
        img.raw_bytes()
    );
    let counts: Vec<String> = c.complex_counts().iter().map(|n| n.to_string()).collect();
    println!("complex patches per channel: {}", counts.join(" "));
    if c.fallback {
        println!("fallback: whole-image SVD (budget buys no complex patch)");
    } else {
        println!("fallback: no");
    }
}

fn decompress(input: &Path, output: Option<PathBuf>) -> Result<()> {
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let c = archive::decode(&bytes).with_context(|| format!("decoding {}", input.display()))?;
    let img = codec::decompress(&c)?;
    let output = output.unwrap_or_else(|| input.with_extension("png"));
    img.write_png(&output)
        .with_context(|| format!("writing {}", output.display()))?;
    println!(
        "wrote {} ({}x{}, {} channel(s), {}-bit)",
        output.display(),
        img.cols(),
        img.rows(),
        img.channels(),
        img.bit_depth()
    );
    Ok(())
}

fn eval(reference: &Path, candidate: &Path, json: bool) -> Result<()> {
    let a = read_png(reference)?;
    let b = read_png(candidate)?;
    let q = metrics::evaluate(&a, &b)?;
    if json {
        let psnr = if q.psnr.is_finite() {
            serde_json::Value::from(q.psnr)
        } else {
            serde_json::Value::Null
        };
        let v = serde_json::json!({ "mse": q.mse, "psnr_db": psnr, "ssim": q.ssim });
        println!("{v}");
    } else {
        println!("mse: {}", q.mse);
        if q.psnr.is_finite() {
            println!("psnr: {:.4} dB", q.psnr);
        } else {
            println!("psnr: inf dB");
        }
        println!("ssim: {:.6}", q.ssim);
    }
    Ok(())
}

fn run_sweep(spec: &SweepSpec, output: &Path) -> Result<()> {
    let report = sweep::run(spec)?;
    for n in &report.notices {
        eprintln!("notice: {n}");
    }
    let file =
        fs::File::create(output).with_context(|| format!("creating {}", output.display()))?;
    report.write_csv(std::io::BufWriter::new(file))?;

    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "{:<14} {:>5} {:>6} {:>6} {:>10} {:>8} {:>7}",
        "codec", "patch", "score", "cr", "mse", "psnr", "ssim"
    )?;
    for r in report.aggregates() {
        let Some(q) = r.quality else {
            writeln!(out, "{:<14} all images failed", r.point.codec)?;
            continue;
        };
        writeln!(
            out,
            "{:<14} {:>5} {:>6} {:>6.3} {:>10.3} {:>8.3} {:>7.4}",
            r.point.codec.name(),
            r.point.patch.map(|p| p.to_string()).unwrap_or_default(),
            r.point.score_fn.map(|f| f.name()).unwrap_or(""),
            r.point.target_cr,
            q.mse,
            q.psnr,
            q.ssim
        )?;
    }
    let failures = report.per_image().filter(|r| r.error.is_some()).count();
    if failures > 0 {
        writeln!(out, "{failures} row(s) failed; see the error column")?;
    }
    writeln!(out, "wrote {}", output.display())?;
    Ok(())
}

fn compare(input: &Path, output: &Path, args: &CodecArgs, gap: usize) -> Result<()> {
    if output.extension().and_then(|e| e.to_str()) != Some("png") {
        bail!("comparison output must be a .png file");
    }
    let cfg = checked_config(args)?;
    let img = read_png(input)?;
    let precision = args.precision.into();
    let analysis = Analysis::new(&img)?;
    let patched = analysis.compress(&cfg, precision)?;
    let rank = ratemath::fallback_rank(cfg.target_cr, img.rows(), img.cols());
    let plain = analysis.compress_svd(rank, precision)?;
    let a = codec::decompress(&patched)?;
    let b = codec::decompress(&plain)?;
    for (name, c, restored) in [("patchsvd", &patched, &a), ("svd", &plain, &b)] {
        let q = metrics::evaluate(&img, restored)?;
        println!(
            "{name:<9} cr {:.4}  mse {:.3}  psnr {:.3} dB  ssim {:.4}{}",
            c.element_compression_ratio(),
            q.mse,
            q.psnr,
            q.ssim,
            if c.fallback && name == "patchsvd" {
                "  (fallback)"
            } else {
                ""
            }
        );
    }
    let panel = Image::side_by_side(&[&img, &a, &b], gap)?;
    panel
        .write_png(output)
        .with_context(|| format!("writing {}", output.display()))?;
    println!("wrote {}", output.display());
    Ok(())
}
