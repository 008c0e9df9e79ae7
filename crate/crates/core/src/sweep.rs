//! Dataset sweeps: every (codec, CR, patch size, score function) point on a
//! directory of PNGs, written as CSV with one row per image and one mean row
//! per configuration.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::archive;
use crate::codec::{self, Analysis, CompressedImage, Precision};
use crate::image::{Channel, Image, ImagePlane};
use crate::linalg::Matrix;
use crate::metrics::{self, QualityReport};
use crate::ratemath::{self, CodecConfig};
use crate::scoring::ScoreFunction;

pub const CSV_COLUMNS: [&str; 14] = [
    "image",
    "codec",
    "patch",
    "score_fn",
    "target_cr",
    "achieved_cr_elements",
    "achieved_cr_bytes",
    "mse",
    "psnr",
    "ssim",
    "n_c",
    "fallback",
    "wall_time_ms",
    "error",
];

/// Image name used on aggregate rows.
pub const AGGREGATE_NAME: &str = "mean";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("cannot list {path}")]
    ListDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no PNG images found in {0}")]
    NoImages(PathBuf),
    #[error("sweep grid is empty: {0}")]
    EmptyGrid(&'static str),
    #[error("invalid sweep value: {0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodecKind {
    PatchSvd,
    Svd,
    Jpeg,
}

impl CodecKind {
    pub fn name(self) -> &'static str {
        match self {
            CodecKind::PatchSvd => "patchsvd",
            CodecKind::Svd => "svd",
            CodecKind::Jpeg => "jpeg-external",
        }
    }
}

impl fmt::Display for CodecKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CodecKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "patchsvd" => Ok(CodecKind::PatchSvd),
            "svd" => Ok(CodecKind::Svd),
            "jpeg" | "jpeg-external" => Ok(CodecKind::Jpeg),
            other => Err(format!(
                "unknown codec `{other}` (expected patchsvd, svd or jpeg-external)"
            )),
        }
    }
}

/// A pair of libjpeg-style command-line tools (`cjpeg`, `djpeg`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JpegTools {
    pub encoder: PathBuf,
    pub decoder: PathBuf,
}

impl JpegTools {
    /// `PATCHSVD_CJPEG` / `PATCHSVD_DJPEG` if set, else `cjpeg` / `djpeg`
    /// found on `PATH`.
    pub fn discover() -> Option<Self> {
        let find = |var: &str, name: &str| -> Option<PathBuf> {
            if let Some(p) = std::env::var_os(var) {
                let p = PathBuf::from(p);
                return p.is_file().then_some(p);
            }
            std::env::split_paths(&std::env::var_os("PATH")?)
                .map(|dir| dir.join(name))
                .find(|p| p.is_file())
        };
        Some(Self {
            encoder: find("PATCHSVD_CJPEG", "cjpeg")?,
            decoder: find("PATCHSVD_DJPEG", "djpeg")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub images: Vec<PathBuf>,
    pub patch_sizes: Vec<usize>,
    pub crs: Vec<f64>,
    pub score_fns: Vec<ScoreFunction>,
    pub codecs: Vec<CodecKind>,
    pub precision: Precision,
    /// Explicit `(k_c, k_s)`; `None` uses the per-size defaults.
    pub ranks: Option<(usize, usize)>,
    pub jpeg: Option<JpegTools>,
}

impl SweepSpec {
    /// Defaults: P = 16, CR 0.80/0.85/0.90, std scoring, PatchSVD vs SVD.
    pub fn new(images: Vec<PathBuf>) -> Self {
        Self {
            images,
            patch_sizes: vec![16],
            crs: vec![0.80, 0.85, 0.90],
            score_fns: vec![ScoreFunction::Std],
            codecs: vec![CodecKind::PatchSvd, CodecKind::Svd],
            precision: Precision::F32,
            ranks: None,
            jpeg: None,
        }
    }

    pub fn from_dir(dir: &Path) -> Result<Self, SweepError> {
        Ok(Self::new(list_pngs(dir)?))
    }

    fn check(&self) -> Result<(), SweepError> {
        if self.images.is_empty() {
            return Err(SweepError::EmptyGrid("no images"));
        }
        if self.crs.is_empty() {
            return Err(SweepError::EmptyGrid("no compression ratios"));
        }
        if self.codecs.is_empty() {
            return Err(SweepError::EmptyGrid("no codecs"));
        }
        if self.codecs.contains(&CodecKind::PatchSvd) {
            if self.patch_sizes.is_empty() {
                return Err(SweepError::EmptyGrid("no patch sizes"));
            }
            if self.score_fns.is_empty() {
                return Err(SweepError::EmptyGrid("no score functions"));
            }
        }
        if let Some(cr) = self.crs.iter().find(|c| !(0.0..1.0).contains(*c)) {
            return Err(SweepError::Invalid(format!(
                "compression ratio {cr} is outside [0, 1)"
            )));
        }
        if self.patch_sizes.contains(&0) {
            return Err(SweepError::Invalid("patch size 0".into()));
        }
        Ok(())
    }

    /// Every configuration in output order. SVD and JPEG do not depend on
    /// patch size or score function, so they get one point per CR.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &codec in &self.codecs {
            if codec == CodecKind::Jpeg && self.jpeg.is_none() {
                continue;
            }
            for &cr in &self.crs {
                match codec {
                    CodecKind::PatchSvd => {
                        for &p in &self.patch_sizes {
                            for &f in &self.score_fns {
                                out.push(SweepPoint {
                                    codec,
                                    target_cr: cr,
                                    patch: Some(p),
                                    score_fn: Some(f),
                                });
                            }
                        }
                    }
                    _ => out.push(SweepPoint {
                        codec,
                        target_cr: cr,
                        patch: None,
                        score_fn: None,
                    }),
                }
            }
        }
        out
    }
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>, SweepError> {
    let entries = std::fs::read_dir(dir).map_err(|source| SweepError::ListDir {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for e in entries {
        let path = e?.path();
        let is_png = path
            .extension()
            .and_then(|x| x.to_str())
            .is_some_and(|x| x.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(SweepError::NoImages(dir.to_path_buf()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub codec: CodecKind,
    pub target_cr: f64,
    pub patch: Option<usize>,
    pub score_fn: Option<ScoreFunction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackFlag {
    Yes,
    No,
    /// Aggregate over images that disagree.
    Mixed,
}

impl FallbackFlag {
    fn name(self) -> &'static str {
        match self {
            FallbackFlag::Yes => "true",
            FallbackFlag::No => "false",
            FallbackFlag::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub image: String,
    pub point: SweepPoint,
    pub achieved_cr_elements: Option<f64>,
    pub achieved_cr_bytes: Option<f64>,
    pub quality: Option<QualityReport>,
    /// Complex patches summed over channels.
    pub n_c: Option<usize>,
    pub fallback: Option<FallbackFlag>,
    pub wall_time_ms: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(image: &str, point: SweepPoint, error: String) -> Self {
        Self {
            image: image.to_string(),
            point,
            achieved_cr_elements: None,
            achieved_cr_bytes: None,
            quality: None,
            n_c: None,
            fallback: None,
            wall_time_ms: None,
            error: Some(error),
        }
    }

    pub fn is_aggregate(&self) -> bool {
        self.image == AGGREGATE_NAME
    }

    fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let q = self.quality;
        vec![
            self.image.clone(),
            self.point.codec.name().to_string(),
            self.point.patch.map(|p| p.to_string()).unwrap_or_default(),
            self.point
                .score_fn
                .map(|f| f.name().to_string())
                .unwrap_or_default(),
            fmt_f64(self.point.target_cr),
            opt(self.achieved_cr_elements),
            opt(self.achieved_cr_bytes),
            opt(q.map(|q| q.mse)),
            opt(q.map(|q| q.psnr)),
            opt(q.map(|q| q.ssim)),
            self.n_c.map(|n| n.to_string()).unwrap_or_default(),
            self.fallback
                .map(|f| f.name().to_string())
                .unwrap_or_default(),
            self.wall_time_ms
                .map(|t| format!("{t:.3}"))
                .unwrap_or_default(),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Things the caller should tell the user, e.g. skipped codecs.
    pub notices: Vec<String>,
}

impl SweepReport {
    pub fn per_image(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| !r.is_aggregate())
    }

    pub fn aggregates(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.is_aggregate())
    }

    pub fn aggregate(&self, point: &SweepPoint) -> Option<&SweepRow> {
        self.aggregates().find(|r| &r.point == point)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SweepError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_COLUMNS)?;
        for r in &self.rows {
            out.write_record(r.record())?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs the whole grid. Images are processed in parallel; row order is
/// deterministic: images in the given order, then the aggregates.
pub fn run(spec: &SweepSpec) -> Result<SweepReport, SweepError> {
    spec.check()?;
    let mut notices = Vec::new();
    if spec.codecs.contains(&CodecKind::Jpeg) && spec.jpeg.is_none() {
        notices.push(
            "no external JPEG codec found (cjpeg/djpeg); jpeg-external rows skipped".to_string(),
        );
    }
    let points = spec.points();
    let per_image: Vec<Vec<SweepRow>> = spec
        .images
        .par_iter()
        .map(|path| run_image(path, &points, spec))
        .collect();

    let mut rows: Vec<SweepRow> = per_image.iter().flatten().cloned().collect();
    for (i, point) in points.iter().enumerate() {
        let group: Vec<&SweepRow> = per_image.iter().map(|r| &r[i]).collect();
        rows.push(aggregate(*point, &group));
    }
    Ok(SweepReport { rows, notices })
}

fn image_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// An error and its sources on one line.
fn describe(e: &dyn std::error::Error) -> String {
    let mut out = e.to_string();
    let mut cause = e.source();
    while let Some(c) = cause {
        out.push_str(": ");
        out.push_str(&c.to_string());
        cause = c.source();
    }
    out
}

fn run_image(path: &Path, points: &[SweepPoint], spec: &SweepSpec) -> Vec<SweepRow> {
    let name = image_name(path);
    let img = match Image::read_png(path) {
        Ok(img) => img,
        Err(e) => {
            return points
                .iter()
                .map(|p| SweepRow::failed(&name, *p, describe(&e)))
                .collect()
        }
    };
    let analysis = match Analysis::new(&img) {
        Ok(a) => a,
        Err(e) => {
            return points
                .iter()
                .map(|p| SweepRow::failed(&name, *p, e.to_string()))
                .collect()
        }
    };
    points
        .iter()
        .map(|p| {
            let start = Instant::now();
            let result = match p.codec {
                CodecKind::PatchSvd => {
                    let patch = p.patch.unwrap_or(16);
                    let mut cfg = CodecConfig::square(patch, p.target_cr)
                        .score(p.score_fn.unwrap_or_default());
                    if let Some((k_c, k_s)) = spec.ranks {
                        cfg = cfg.ranks(k_c, k_s);
                    }
                    analysis
                        .compress(&cfg, spec.precision)
                        .map_err(|e| e.to_string())
                        .and_then(|c| measure_archive(&img, &c))
                }
                CodecKind::Svd => {
                    let rank = ratemath::fallback_rank(p.target_cr, img.rows(), img.cols());
                    analysis
                        .compress_svd(rank, spec.precision)
                        .map_err(|e| e.to_string())
                        .and_then(|c| measure_archive(&img, &c))
                }
                CodecKind::Jpeg => match &spec.jpeg {
                    Some(tools) => jpeg_at_ratio(&img, p.target_cr, tools),
                    None => Err("no JPEG codec".to_string()),
                },
            };
            match result {
                Ok(mut row) => {
                    row.image = name.clone();
                    row.point = *p;
                    row.wall_time_ms = Some(start.elapsed().as_secs_f64() * 1e3);
                    row
                }
                Err(e) => SweepRow::failed(&name, *p, e),
            }
        })
        .collect()
}

fn measure_archive(img: &Image, c: &CompressedImage) -> Result<SweepRow, String> {
    let bytes = archive::encode(c).map_err(|e| e.to_string())?;
    let restored = codec::decompress(c).map_err(|e| e.to_string())?;
    let quality = metrics::evaluate(img, &restored).map_err(|e| e.to_string())?;
    Ok(SweepRow {
        image: String::new(),
        point: SweepPoint {
            codec: CodecKind::PatchSvd,
            target_cr: 0.0,
            patch: None,
            score_fn: None,
        },
        achieved_cr_elements: Some(c.element_compression_ratio()),
        achieved_cr_bytes: Some(archive::byte_compression_ratio(bytes.len(), img)),
        quality: Some(quality),
        n_c: Some(c.complex_counts().iter().sum()),
        fallback: Some(if c.fallback {
            FallbackFlag::Yes
        } else {
            FallbackFlag::No
        }),
        wall_time_ms: None,
        error: None,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn aggregate(point: SweepPoint, group: &[&SweepRow]) -> SweepRow {
    let ok: Vec<&&SweepRow> = group.iter().filter(|r| r.error.is_none()).collect();
    let failed = group.len() - ok.len();
    let quality = (!ok.is_empty()).then(|| QualityReport {
        mse: mean(ok.iter().filter_map(|r| r.quality.map(|q| q.mse))).unwrap_or(f64::NAN),
        psnr: mean(ok.iter().filter_map(|r| r.quality.map(|q| q.psnr))).unwrap_or(f64::NAN),
        ssim: mean(ok.iter().filter_map(|r| r.quality.map(|q| q.ssim))).unwrap_or(f64::NAN),
    });
    let flags: Vec<FallbackFlag> = ok.iter().filter_map(|r| r.fallback).collect();
    let fallback = match flags.first() {
        None => None,
        Some(&f) if flags.iter().all(|&g| g == f) => Some(f),
        Some(_) => Some(FallbackFlag::Mixed),
    };
    SweepRow {
        image: AGGREGATE_NAME.to_string(),
        point,
        achieved_cr_elements: mean(ok.iter().filter_map(|r| r.achieved_cr_elements)),
        achieved_cr_bytes: mean(ok.iter().filter_map(|r| r.achieved_cr_bytes)),
        quality,
        n_c: None,
        fallback,
        wall_time_ms: mean(ok.iter().filter_map(|r| r.wall_time_ms)),
        error: (failed > 0).then(|| format!("{failed} of {} images failed", group.len())),
    }
}

// -- external JPEG --------------------------------------------------------

/// Highest JPEG quality whose file meets the byte budget of `target_cr`.
fn jpeg_at_ratio(img: &Image, target_cr: f64, tools: &JpegTools) -> Result<SweepRow, String> {
    if img.bit_depth() != 8 {
        return Err("external JPEG comparison needs 8-bit input".into());
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let src = dir.path().join("input.pnm");
    std::fs::write(&src, encode_pnm(img)).map_err(|e| e.to_string())?;
    let budget = (1.0 - target_cr) * img.raw_bytes() as f64;

    let encode = |q: u32| -> Result<Vec<u8>, String> {
        let out = Command::new(&tools.encoder)
            .arg("-quality")
            .arg(q.to_string())
            .arg(&src)
            .output()
            .map_err(|e| format!("running {}: {e}", tools.encoder.display()))?;
        if !out.status.success() || out.stdout.is_empty() {
            return Err(format!(
                "{} failed: {}",
                tools.encoder.display(),
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
        Ok(out.stdout)
    };

    // File size is not strictly monotone in quality, but close enough for a
    // binary search to find a quality that fits.
    let (mut lo, mut hi) = (1u32, 100u32);
    let mut best: Option<Vec<u8>> = None;
    while lo <= hi {
        let q = (lo + hi) / 2;
        let jpeg = encode(q)?;
        if (jpeg.len() as f64) <= budget {
            best = Some(jpeg);
            lo = q + 1;
        } else {
            hi = q - 1;
        }
    }
    let jpeg = match best {
        Some(j) => j,
        None => return Err(format!("no JPEG quality reaches CR {target_cr}")),
    };
    let jpg_path = dir.path().join("coded.jpg");
    std::fs::write(&jpg_path, &jpeg).map_err(|e| e.to_string())?;
    let out = Command::new(&tools.decoder)
        .arg("-pnm")
        .arg(&jpg_path)
        .output()
        .map_err(|e| format!("running {}: {e}", tools.decoder.display()))?;
    if !out.status.success() {
        return Err(format!(
            "{} failed: {}",
            tools.decoder.display(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    let restored = decode_pnm(&out.stdout)?;
    let quality = metrics::evaluate(img, &restored).map_err(|e| e.to_string())?;
    Ok(SweepRow {
        image: String::new(),
        point: SweepPoint {
            codec: CodecKind::Jpeg,
            target_cr,
            patch: None,
            score_fn: None,
        },
        achieved_cr_elements: None,
        achieved_cr_bytes: Some(1.0 - jpeg.len() as f64 / img.raw_bytes() as f64),
        quality: Some(quality),
        n_c: None,
        fallback: None,
        wall_time_ms: None,
        error: None,
    })
}

/// Binary PGM/PPM for an 8-bit image.
fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.cols(), img.rows()).into_bytes();
    out.extend(img.interleaved_samples());
    out
}

/// Parses the binary 8-bit PGM/PPM that `djpeg -pnm` writes.
fn decode_pnm(bytes: &[u8]) -> Result<Image, String> {
    let mut pos = 0;
    let mut token = || -> Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PNM header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let num = |s: String| {
        s.parse::<usize>()
            .map_err(|_| format!("bad PNM field `{s}`"))
    };
    let cols = num(token()?)?;
    let rows = num(token()?)?;
    let maxval = num(token()?)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(format!("unsupported PNM type {m}")),
    };
    if maxval != 255 {
        return Err(format!("unsupported PNM maxval {maxval}"));
    }
    let data = bytes.get(pos + 1..).ok_or("truncated PNM data")?;
    if data.len() < rows * cols * channels {
        return Err("truncated PNM data".into());
    }
    let layout = Channel::layout(channels).ok_or("bad channel count")?;
    let planes = layout
        .iter()
        .enumerate()
        .map(|(ch, &channel)| {
            let m = Matrix::from_fn(rows, cols, |r, c| {
                data[(r * cols + c) * channels + ch] as f64
            });
            ImagePlane::new(channel, 8, m)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Image::new(planes).map_err(|e| e.to_string())
}
