//! The patch-wise compressor and its inverse.
//!
//! Per channel: factor the whole plane once, subtract its rank-`base_rank`
//! approximation to get the residual, score mean-padded residual patches,
//! mark the top `n_c` as complex, then keep a rank-`k_c` or rank-`k_s`
//! truncated SVD of each border-cropped image patch. When the budget buys
//! less than one complex patch the whole plane is stored as a single
//! truncated SVD instead.

use rayon::prelude::*;
use thiserror::Error;

use crate::image::{max_value, Channel, Image, ImageError, ImagePlane};
use crate::linalg::{svd, FactorTriple, LinalgError, Matrix};
use crate::patching::{self, PatchError, PatchGrid};
use crate::ratemath::{self, CodecConfig, ConfigError, RateError, RatePlan};
use crate::scoring::{self, ScoreFunction};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("corrupt compressed image: {0}")]
    Corrupt(String),
}

/// Storage precision for factor values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn id(self) -> u8 {
        match self {
            Precision::F32 => 0,
            Precision::F64 => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Precision::F32),
            1 => Some(Precision::F64),
            _ => None,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    fn quantize(self, f: FactorTriple) -> FactorTriple {
        match self {
            Precision::F64 => f,
            Precision::F32 => {
                let q = |m: Matrix| m.map(|v| v as f32 as f64);
                FactorTriple {
                    u: q(f.u),
                    sigma: f.sigma.into_iter().map(|v| v as f32 as f64).collect(),
                    vt: q(f.vt),
                }
            }
        }
    }
}

/// The part of [`CodecConfig`] that the decoder needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchParams {
    pub p_x: usize,
    pub p_y: usize,
    pub k_c: usize,
    pub k_s: usize,
    pub base_rank: usize,
    pub score_fn: ScoreFunction,
}

impl From<&CodecConfig> for PatchParams {
    fn from(c: &CodecConfig) -> Self {
        Self {
            p_x: c.p_x,
            p_y: c.p_y,
            k_c: c.k_c,
            k_s: c.k_s,
            base_rank: c.base_rank,
            score_fn: c.score_fn,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// One factorization per patch in canonical order.
    Patches(Vec<FactorTriple>),
    /// Whole-plane factorization.
    Whole(FactorTriple),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedChannel {
    pub channel: Channel,
    /// `true` for complex patches; empty for whole-plane payloads.
    pub complexity: Vec<bool>,
    pub payload: Payload,
}

impl CompressedChannel {
    pub fn complex_count(&self) -> usize {
        self.complexity.iter().filter(|&&c| c).count()
    }

    pub fn factors(&self) -> Box<dyn Iterator<Item = &FactorTriple> + '_> {
        match &self.payload {
            Payload::Patches(p) => Box::new(p.iter()),
            Payload::Whole(f) => Box::new(std::iter::once(f)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedImage {
    pub params: PatchParams,
    pub rows: usize,
    pub cols: usize,
    pub bit_depth: u8,
    pub precision: Precision,
    pub fallback: bool,
    pub channels: Vec<CompressedChannel>,
}

/// Rank stored for a patch of the given extent.
pub fn patch_rank(params: &PatchParams, complex: bool, rows: usize, cols: usize) -> usize {
    let k = if complex { params.k_c } else { params.k_s };
    k.min(rows).min(cols)
}

impl CompressedImage {
    pub fn grid(&self) -> Result<PatchGrid, PatchError> {
        PatchGrid::new(self.rows, self.cols, self.params.p_x, self.params.p_y)
    }

    /// Exact count of stored factor values over all channels.
    pub fn stored_element_count(&self) -> usize {
        self.channels
            .iter()
            .flat_map(|c| c.factors())
            .map(FactorTriple::element_count)
            .sum()
    }

    /// `1 - stored values / original samples`.
    pub fn element_compression_ratio(&self) -> f64 {
        let original = (self.rows * self.cols * self.channels.len()) as f64;
        1.0 - self.stored_element_count() as f64 / original
    }

    /// Complex patch count of each channel.
    pub fn complex_counts(&self) -> Vec<usize> {
        self.channels
            .iter()
            .map(CompressedChannel::complex_count)
            .collect()
    }

    /// Structural consistency: channel layout, per-patch ranks and shapes.
    pub fn check(&self) -> Result<(), CodecError> {
        let corrupt = |m: String| Err(CodecError::Corrupt(m));
        if Channel::layout(self.channels.len()).is_none() {
            return corrupt(format!("{} channels", self.channels.len()));
        }
        let grid = self.grid()?;
        let min_dim = self.rows.min(self.cols);
        let mut counts = Vec::new();
        for (ci, ch) in self.channels.iter().enumerate() {
            match (&ch.payload, self.fallback) {
                (Payload::Whole(f), true) => {
                    if !ch.complexity.is_empty() {
                        return corrupt(format!(
                            "channel {ci}: complexity map on whole-plane payload"
                        ));
                    }
                    if f.rank() == 0
                        || f.rank() > min_dim
                        || f.rows() != self.rows
                        || f.cols() != self.cols
                    {
                        return corrupt(format!("channel {ci}: whole-plane factor shape"));
                    }
                    check_factor_shape(f, self.rows, self.cols, f.rank())
                        .map_err(|m| CodecError::Corrupt(format!("channel {ci}: {m}")))?;
                }
                (Payload::Patches(patches), false) => {
                    if ch.complexity.len() != grid.len() || patches.len() != grid.len() {
                        return corrupt(format!("channel {ci}: expected {} patches", grid.len()));
                    }
                    for (i, (f, e)) in patches.iter().zip(grid.extents()).enumerate() {
                        let k = patch_rank(&self.params, ch.complexity[i], e.rows, e.cols);
                        check_factor_shape(f, e.rows, e.cols, k).map_err(|m| {
                            CodecError::Corrupt(format!("channel {ci} patch {i}: {m}"))
                        })?;
                    }
                    counts.push(ch.complex_count());
                }
                _ => {
                    return corrupt(format!(
                        "channel {ci}: payload kind disagrees with fallback flag"
                    ))
                }
            }
        }
        if counts.windows(2).any(|w| w[0] != w[1]) {
            return corrupt("complex patch count differs between channels".into());
        }
        Ok(())
    }
}

fn check_factor_shape(f: &FactorTriple, rows: usize, cols: usize, k: usize) -> Result<(), String> {
    if f.u.shape() != (rows, k) || f.vt.shape() != (k, cols) || f.sigma.len() != k {
        return Err(format!(
            "factor shapes u {:?} vt {:?} sigma {} for {rows}x{cols} at rank {k}",
            f.u.shape(),
            f.vt.shape(),
            f.sigma.len()
        ));
    }
    Ok(())
}

/// A decomposed image that can be compressed at many settings without
/// refactoring each channel.
pub struct Analysis<'a> {
    image: &'a Image,
    factors: Vec<FactorTriple>,
}

impl<'a> Analysis<'a> {
    pub fn new(image: &'a Image) -> Result<Self, CodecError> {
        let factors = image
            .planes()
            .par_iter()
            .map(|p| svd(&p.pixels))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { image, factors })
    }

    pub fn image(&self) -> &Image {
        self.image
    }

    /// Whole-plane SVD of each channel.
    pub fn factors(&self) -> &[FactorTriple] {
        &self.factors
    }

    pub fn compress(
        &self,
        cfg: &CodecConfig,
        precision: Precision,
    ) -> Result<CompressedImage, CodecError> {
        cfg.validate()?;
        let grid = PatchGrid::new(self.image.rows(), self.image.cols(), cfg.p_x, cfg.p_y)?;
        let plan = ratemath::plan(cfg, &grid)?;
        if plan.fallback {
            return self.whole_plane(PatchParams::from(cfg), plan.fallback_rank, precision);
        }
        let params = PatchParams::from(cfg);
        let channels = self
            .image
            .planes()
            .iter()
            .zip(&self.factors)
            .map(|(plane, factors)| {
                compress_plane(plane, factors, &params, &grid, &plan, precision)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CompressedImage {
            params,
            rows: self.image.rows(),
            cols: self.image.cols(),
            bit_depth: self.image.bit_depth(),
            precision,
            fallback: false,
            channels,
        })
    }

    /// Plain truncated SVD of every channel at `rank`, stored as a
    /// whole-plane archive. This is the baseline the patch codec is
    /// measured against.
    pub fn compress_svd(
        &self,
        rank: usize,
        precision: Precision,
    ) -> Result<CompressedImage, CodecError> {
        let params = PatchParams {
            p_x: self.image.cols(),
            p_y: self.image.rows(),
            k_c: rank,
            k_s: rank,
            base_rank: 1,
            score_fn: ScoreFunction::Std,
        };
        self.whole_plane(params, rank, precision)
    }

    fn whole_plane(
        &self,
        params: PatchParams,
        rank: usize,
        precision: Precision,
    ) -> Result<CompressedImage, CodecError> {
        let channels = self
            .image
            .planes()
            .iter()
            .zip(&self.factors)
            .map(|(plane, f)| {
                Ok(CompressedChannel {
                    channel: plane.channel,
                    complexity: Vec::new(),
                    payload: Payload::Whole(precision.quantize(f.truncate(rank)?)),
                })
            })
            .collect::<Result<Vec<_>, LinalgError>>()?;
        Ok(CompressedImage {
            params,
            rows: self.image.rows(),
            cols: self.image.cols(),
            bit_depth: self.image.bit_depth(),
            precision,
            fallback: true,
            channels,
        })
    }
}

fn compress_plane(
    plane: &ImagePlane,
    factors: &FactorTriple,
    params: &PatchParams,
    grid: &PatchGrid,
    plan: &RatePlan,
    precision: Precision,
) -> Result<CompressedChannel, CodecError> {
    let a = &plane.pixels;
    let complexity = if plan.uniform {
        vec![false; grid.len()]
    } else {
        let delta = scoring::delta_from_factors(a, factors, params.base_rank)?;
        let padded = patching::pad_with_mean(&delta, grid)?;
        let delta_patches = patching::split(&padded, grid, false)?;
        let scores: Vec<f64> = delta_patches
            .par_iter()
            .map(|p| scoring::score_patch(p, params.score_fn))
            .collect();
        scoring::rank_scores(scores).complexity_map(plan.n_c)
    };

    let patches = patching::split(a, grid, true)?;
    let stored = patches
        .par_iter()
        .zip(complexity.par_iter())
        .map(|(p, &complex)| {
            let k = patch_rank(params, complex, p.rows(), p.cols());
            Ok(precision.quantize(svd(p)?.truncate(k)?))
        })
        .collect::<Result<Vec<_>, LinalgError>>()?;

    Ok(CompressedChannel {
        channel: plane.channel,
        complexity,
        payload: Payload::Patches(stored),
    })
}

/// Compresses at 32-bit factor precision.
pub fn compress(img: &Image, cfg: &CodecConfig) -> Result<CompressedImage, CodecError> {
    compress_with(img, cfg, Precision::F32)
}

pub fn compress_with(
    img: &Image,
    cfg: &CodecConfig,
    precision: Precision,
) -> Result<CompressedImage, CodecError> {
    cfg.validate()?;
    Analysis::new(img)?.compress(cfg, precision)
}

/// Real-valued reconstruction of each channel, before clamping or rounding.
pub fn reconstruct_planes(c: &CompressedImage) -> Result<Vec<Matrix>, CodecError> {
    c.check()?;
    let grid = c.grid()?;
    c.channels
        .iter()
        .map(|ch| match &ch.payload {
            Payload::Whole(f) => Ok(f.reconstruct()),
            Payload::Patches(p) => {
                let blocks: Vec<Matrix> = p.par_iter().map(FactorTriple::reconstruct).collect();
                Ok(patching::assemble(&blocks, &grid)?)
            }
        })
        .collect()
}

/// Reconstructs pixels, clamped to the valid range and rounded half-to-even.
pub fn decompress(c: &CompressedImage) -> Result<Image, CodecError> {
    let max = max_value(c.bit_depth);
    let planes = reconstruct_planes(c)?
        .into_iter()
        .zip(&c.channels)
        .map(|(m, ch)| {
            let px = m.map(|v| v.clamp(0.0, max).round_ties_even());
            ImagePlane::new(ch.channel, c.bit_depth, px)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Image::new(planes)?)
}

pub fn stored_element_count(c: &CompressedImage) -> usize {
    c.stored_element_count()
}
