//! Patch-wise SVD image compression.
//!
//! An image plane is factored once; the residual left by a low-rank global
//! approximation tells which patches carry detail the global SVD misses.
//! Those "complex" patches keep a higher rank than the rest, and the number
//! of them is chosen so the stored value count meets a target compression
//! ratio.
//!
//! ```no_run
//! use patchsvd::{codec, archive, CodecConfig, Image};
//!
//! let img = Image::read_png("kodim01.png")?;
//! let cfg = CodecConfig::square(16, 0.85);
//! let compressed = codec::compress(&img, &cfg)?;
//! let bytes = archive::encode(&compressed)?;
//! let restored = codec::decompress(&archive::decode(&bytes)?)?;
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod archive;
pub mod codec;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod patching;
pub mod ratemath;
pub mod scoring;
pub mod sweep;

pub use codec::{CompressedImage, Precision};
pub use image::{Channel, Image, ImagePlane};
pub use linalg::{FactorTriple, Matrix};
pub use patching::PatchGrid;
pub use ratemath::{CodecConfig, RatePlan};
pub use scoring::ScoreFunction;
