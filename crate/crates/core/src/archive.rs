//! `.psvd` archive format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PSVD"
//! 4       1     version (1)
//! 5       1     channels (1 or 3)
//! 6       1     bit depth (8 or 16)
//! 7       4     rows (u32)
//! 11      4     cols (u32)
//! 15      2     p_x (u16)
//! 17      2     p_y (u16)
//! 19      2     k_c (u16)
//! 21      2     k_s (u16)
//! 23      2     base rank (u16)
//! 25      1     score function (0 std, 1 mean, 2 max)
//! 26      1     fallback flag (0 or 1)
//! 27      4*C   per channel: complex patch count, or whole-plane rank when fallback
//! 27+4C   1     precision (0 f32, 1 f64)
//! ```
//!
//! Payload, per channel in order:
//! * patch mode: complexity bitmap of `t` bits, row-major, LSB first,
//!   zero-padded to a byte; then per patch in canonical order `U`
//!   column-major, `sigma`, `Vᵀ` row-major.
//! * fallback: `U` column-major, `sigma`, `Vᵀ` row-major of the whole plane.
//!
//! Per-patch rank is `k_c` or `k_s` by the bitmap, clamped to the patch's
//! smaller side, so the header and bitmap fix every payload offset.

use thiserror::Error;

use crate::codec::{
    patch_rank, CompressedChannel, CompressedImage, PatchParams, Payload, Precision,
};
use crate::image::{Channel, Image};
use crate::linalg::{FactorTriple, Matrix};
use crate::patching::PatchGrid;
use crate::scoring::ScoreFunction;

pub const MAGIC: [u8; 4] = *b"PSVD";
pub const VERSION: u8 = 1;
pub const EXTENSION: &str = "psvd";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArchiveError {
    #[error("truncated archive: need {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: u128,
        available: usize,
    },
    #[error("bad magic {found:02x?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u8),
    #[error("invalid header field `{field}` at offset {offset}: {reason}")]
    InvalidField {
        field: &'static str,
        offset: usize,
        reason: String,
    },
    #[error("inconsistent archive at offset {offset}: {reason}")]
    Inconsistent { offset: usize, reason: String },
    #[error("{count} trailing bytes after payload at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("cannot encode: {0}")]
    Unencodable(String),
}

impl ArchiveError {
    /// Byte offset the error refers to, if any.
    pub fn offset(&self) -> Option<usize> {
        match self {
            ArchiveError::Truncated { offset, .. }
            | ArchiveError::InvalidField { offset, .. }
            | ArchiveError::Inconsistent { offset, .. }
            | ArchiveError::TrailingBytes { offset, .. } => Some(*offset),
            ArchiveError::BadMagic { .. } => Some(0),
            ArchiveError::UnsupportedVersion(_) => Some(4),
            ArchiveError::Unencodable(_) => None,
        }
    }
}

/// Decoded fixed-layout header.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveHeader {
    pub version: u8,
    pub channels: u8,
    pub bit_depth: u8,
    pub rows: u32,
    pub cols: u32,
    pub p_x: u16,
    pub p_y: u16,
    pub k_c: u16,
    pub k_s: u16,
    pub base_rank: u16,
    pub score_fn: ScoreFunction,
    pub fallback: bool,
    /// Complex patch count, or whole-plane rank when `fallback`.
    pub per_channel: Vec<u32>,
    pub precision: Precision,
}

impl ArchiveHeader {
    pub fn len(&self) -> usize {
        header_len(self.channels as usize)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn params(&self) -> PatchParams {
        PatchParams {
            p_x: self.p_x as usize,
            p_y: self.p_y as usize,
            k_c: self.k_c as usize,
            k_s: self.k_s as usize,
            base_rank: self.base_rank as usize,
            score_fn: self.score_fn,
        }
    }

    fn grid(&self) -> PatchGrid {
        PatchGrid::new(
            self.rows as usize,
            self.cols as usize,
            self.p_x as usize,
            self.p_y as usize,
        )
        .expect("validated non-zero")
    }
}

/// Header length for `channels` channels: `28 + 4 C`.
pub fn header_len(channels: usize) -> usize {
    28 + 4 * channels
}

/// Total archive length implied by a header and, in patch mode, the
/// per-channel complexity maps.
pub fn layout_size(h: &ArchiveHeader, maps: &[Vec<bool>]) -> u128 {
    let (m, n) = (h.rows as u128, h.cols as u128);
    let w = h.precision.bytes() as u128;
    let mut total = h.len() as u128;
    if h.fallback {
        for &k in &h.per_channel {
            total += k as u128 * (m + n + 1) * w;
        }
        return total;
    }
    let grid = h.grid();
    let params = h.params();
    for map in maps {
        total += grid.len().div_ceil(8) as u128;
        for (e, &complex) in grid.extents().zip(map) {
            let k = patch_rank(&params, complex, e.rows, e.cols) as u128;
            total += k * (e.rows as u128 + e.cols as u128 + 1) * w;
        }
    }
    total
}

fn narrow<T: TryFrom<usize>>(v: usize, field: &str) -> Result<T, ArchiveError> {
    T::try_from(v).map_err(|_| {
        ArchiveError::Unencodable(format!("{field} = {v} does not fit its header field"))
    })
}

pub fn encode(c: &CompressedImage) -> Result<Vec<u8>, ArchiveError> {
    c.check()
        .map_err(|e| ArchiveError::Unencodable(e.to_string()))?;
    let mut out = Vec::with_capacity(header_len(c.channels.len()) + 4 * c.stored_element_count());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(c.channels.len() as u8);
    out.push(c.bit_depth);
    out.extend_from_slice(&narrow::<u32>(c.rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&narrow::<u32>(c.cols, "cols")?.to_le_bytes());
    let p = &c.params;
    for (v, name) in [
        (p.p_x, "p_x"),
        (p.p_y, "p_y"),
        (p.k_c, "k_c"),
        (p.k_s, "k_s"),
        (p.base_rank, "base_rank"),
    ] {
        out.extend_from_slice(&narrow::<u16>(v, name)?.to_le_bytes());
    }
    out.push(p.score_fn.id());
    out.push(c.fallback as u8);
    for ch in &c.channels {
        let v = match &ch.payload {
            Payload::Whole(f) => f.rank(),
            Payload::Patches(_) => ch.complex_count(),
        };
        out.extend_from_slice(&narrow::<u32>(v, "per-channel count")?.to_le_bytes());
    }
    out.push(c.precision.id());

    for ch in &c.channels {
        if let Payload::Patches(_) = ch.payload {
            let mut bitmap = vec![0u8; ch.complexity.len().div_ceil(8)];
            for (i, &b) in ch.complexity.iter().enumerate() {
                if b {
                    bitmap[i / 8] |= 1 << (i % 8);
                }
            }
            out.extend_from_slice(&bitmap);
        }
        for f in ch.factors() {
            write_factor(&mut out, f, c.precision);
        }
    }
    Ok(out)
}

fn write_factor(out: &mut Vec<u8>, f: &FactorTriple, precision: Precision) {
    let mut put = |v: f64| match precision {
        Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
    };
    for j in 0..f.rank() {
        for i in 0..f.rows() {
            put(f.u.get(i, j));
        }
    }
    for &s in &f.sigma {
        put(s);
    }
    for &v in f.vt.as_slice() {
        put(v);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn ensure(&self, needed: u128) -> Result<(), ArchiveError> {
        if needed > self.remaining() as u128 {
            return Err(ArchiveError::Truncated {
                offset: self.pos,
                needed,
                available: self.remaining(),
            });
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ArchiveError> {
        self.ensure(n as u128)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ArchiveError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ArchiveError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn value(&mut self, precision: Precision) -> Result<f64, ArchiveError> {
        let at = self.pos;
        let v = match precision {
            Precision::F32 => f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64,
            Precision::F64 => f64::from_le_bytes(self.take(8)?.try_into().unwrap()),
        };
        if !v.is_finite() {
            return Err(ArchiveError::Inconsistent {
                offset: at,
                reason: "non-finite factor value".into(),
            });
        }
        Ok(v)
    }

    fn factor(
        &mut self,
        rows: usize,
        cols: usize,
        k: usize,
        precision: Precision,
    ) -> Result<FactorTriple, ArchiveError> {
        self.ensure(k as u128 * (rows as u128 + cols as u128 + 1) * precision.bytes() as u128)?;
        let mut u = Matrix::zeros(rows, k);
        for j in 0..k {
            for i in 0..rows {
                u.set(i, j, self.value(precision)?);
            }
        }
        let mut sigma = Vec::with_capacity(k);
        for _ in 0..k {
            let at = self.pos;
            let s = self.value(precision)?;
            if s < 0.0 || sigma.last().is_some_and(|&prev| s > prev) {
                return Err(ArchiveError::Inconsistent {
                    offset: at,
                    reason: "singular values must be non-negative and non-increasing".into(),
                });
            }
            sigma.push(s);
        }
        let mut vt = Matrix::zeros(k, cols);
        for v in vt.as_mut_slice() {
            *v = self.value(precision)?;
        }
        Ok(FactorTriple { u, sigma, vt })
    }
}

fn invalid(field: &'static str, offset: usize, reason: impl Into<String>) -> ArchiveError {
    ArchiveError::InvalidField {
        field,
        offset,
        reason: reason.into(),
    }
}

/// Parses and validates the header.
pub fn decode_header(bytes: &[u8]) -> Result<ArchiveHeader, ArchiveError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| ArchiveError::BadMagic {
        found: bytes[..bytes.len().min(4)].to_vec(),
    })?;
    if magic != MAGIC {
        return Err(ArchiveError::BadMagic {
            found: magic.to_vec(),
        });
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(ArchiveError::UnsupportedVersion(version));
    }
    let channels = r.u8()?;
    if channels != 1 && channels != 3 {
        return Err(invalid(
            "channels",
            5,
            format!("{channels} (expected 1 or 3)"),
        ));
    }
    let bit_depth = r.u8()?;
    if bit_depth != 8 && bit_depth != 16 {
        return Err(invalid(
            "bit_depth",
            6,
            format!("{bit_depth} (expected 8 or 16)"),
        ));
    }
    let rows = r.u32()?;
    let cols = r.u32()?;
    if rows == 0 || cols == 0 {
        return Err(invalid("rows/cols", 7, "zero image dimension"));
    }
    let p_x = r.u16()?;
    let p_y = r.u16()?;
    if p_x == 0 || p_y == 0 {
        return Err(invalid("p_x/p_y", 15, "zero patch dimension"));
    }
    let k_c = r.u16()?;
    let k_s = r.u16()?;
    if k_s == 0 || k_c < k_s {
        return Err(invalid("k_c/k_s", 19, format!("k_c = {k_c}, k_s = {k_s}")));
    }
    let base_rank = r.u16()?;
    if base_rank == 0 {
        return Err(invalid("base_rank", 23, "zero"));
    }
    let score_id = r.u8()?;
    let score_fn = ScoreFunction::from_id(score_id)
        .ok_or_else(|| invalid("score_fn", 25, format!("id {score_id}")))?;
    let fallback = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(invalid("fallback", 26, format!("{other}"))),
    };
    let t = (rows as u128).div_ceil(p_y as u128) * (cols as u128).div_ceil(p_x as u128);
    let min_dim = rows.min(cols);
    let mut per_channel = Vec::with_capacity(channels as usize);
    for _ in 0..channels {
        let at = r.pos;
        let v = r.u32()?;
        if fallback && (v == 0 || v > min_dim) {
            return Err(invalid(
                "rank",
                at,
                format!("whole-plane rank {v} outside 1..={min_dim}"),
            ));
        }
        if !fallback && v as u128 > t {
            return Err(invalid("n_c", at, format!("{v} complex patches of {t}")));
        }
        per_channel.push(v);
    }
    if !fallback && per_channel.windows(2).any(|w| w[0] != w[1]) {
        return Err(invalid("n_c", 27, "complex counts differ between channels"));
    }
    let prec_id = r.u8()?;
    let precision = Precision::from_id(prec_id)
        .ok_or_else(|| invalid("precision", r.pos - 1, format!("id {prec_id}")))?;
    Ok(ArchiveHeader {
        version,
        channels,
        bit_depth,
        rows,
        cols,
        p_x,
        p_y,
        k_c,
        k_s,
        base_rank,
        score_fn,
        fallback,
        per_channel,
        precision,
    })
}

pub fn decode(bytes: &[u8]) -> Result<CompressedImage, ArchiveError> {
    let h = decode_header(bytes)?;
    let mut r = Reader {
        bytes,
        pos: h.len(),
    };
    let (rows, cols) = (h.rows as usize, h.cols as usize);
    let params = h.params();
    let layout = Channel::layout(h.channels as usize).expect("validated");

    let mut channels = Vec::with_capacity(layout.len());
    if h.fallback {
        // Cheap size check before any allocation.
        r.ensure(layout_size(&h, &[]) - h.len() as u128)?;
        for (&channel, &k) in layout.iter().zip(&h.per_channel) {
            let f = r.factor(rows, cols, k as usize, h.precision)?;
            channels.push(CompressedChannel {
                channel,
                complexity: Vec::new(),
                payload: Payload::Whole(f),
            });
        }
    } else {
        let t128 = (rows as u128).div_ceil(h.p_y as u128) * (cols as u128).div_ceil(h.p_x as u128);
        // Each patch stores at least one value per row and column, so the
        // bitmap alone bounds t by the remaining length.
        r.ensure(t128.div_ceil(8) + t128 * 3 * h.precision.bytes() as u128)?;
        let grid = h.grid();
        let t = grid.len();
        for (&channel, &n_c) in layout.iter().zip(&h.per_channel) {
            let bitmap_at = r.pos;
            let bitmap = r.take(t.div_ceil(8))?;
            let complexity: Vec<bool> = (0..t)
                .map(|i| bitmap[i / 8] & (1 << (i % 8)) != 0)
                .collect();
            let pad_bits = t.div_ceil(8) * 8 - t;
            if pad_bits > 0 && bitmap[bitmap.len() - 1] >> (8 - pad_bits) != 0 {
                return Err(ArchiveError::Inconsistent {
                    offset: bitmap_at + bitmap.len() - 1,
                    reason: "non-zero bitmap padding".into(),
                });
            }
            let popcount = complexity.iter().filter(|&&b| b).count();
            if popcount != n_c as usize {
                return Err(ArchiveError::Inconsistent {
                    offset: bitmap_at,
                    reason: format!("bitmap marks {popcount} complex patches, header says {n_c}"),
                });
            }
            let mut patches = Vec::with_capacity(t);
            for (e, &complex) in grid.extents().zip(&complexity) {
                let k = patch_rank(&params, complex, e.rows, e.cols);
                patches.push(r.factor(e.rows, e.cols, k, h.precision)?);
            }
            channels.push(CompressedChannel {
                channel,
                complexity,
                payload: Payload::Patches(patches),
            });
        }
    }
    if r.remaining() != 0 {
        return Err(ArchiveError::TrailingBytes {
            offset: r.pos,
            count: r.remaining(),
        });
    }
    Ok(CompressedImage {
        params,
        rows,
        cols,
        bit_depth: h.bit_depth,
        precision: h.precision,
        fallback: h.fallback,
        channels,
    })
}

/// `1 - archive bytes / raw sample bytes`. Negative when the archive is
/// larger than the raw image.
pub fn byte_compression_ratio(archive_len: usize, original: &Image) -> f64 {
    1.0 - archive_len as f64 / original.raw_bytes() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{compress, compress_with};
    use crate::ratemath::CodecConfig;

    fn image(rows: usize, cols: usize) -> Image {
        Image::gray(
            8,
            Matrix::from_fn(rows, cols, |r, c| ((r * 29 + c * 13 + r * c) % 256) as f64),
        )
        .unwrap()
    }

    #[test]
    fn header_offsets() {
        assert_eq!(header_len(1), 32);
        assert_eq!(header_len(3), 40);
        let img = image(64, 96);
        let c = compress(&img, &CodecConfig::square(16, 0.8)).unwrap();
        let bytes = encode(&c).unwrap();
        let h = decode_header(&bytes).unwrap();
        assert_eq!((h.rows, h.cols, h.p_x, h.k_s), (64, 96, 16, 1));
        assert_eq!(&bytes[0..4], b"PSVD");
        assert_eq!(u32::from_le_bytes(bytes[7..11].try_into().unwrap()), 64);
        assert_eq!(u32::from_le_bytes(bytes[11..15].try_into().unwrap()), 96);
        assert_eq!(bytes[31], 0);
        assert_eq!(
            bytes.len() as u128,
            layout_size(&h, &[c.channels[0].complexity.clone()])
        );
    }

    #[test]
    fn encode_is_deterministic_and_roundtrips() {
        let img = image(40, 33);
        for prec in [Precision::F32, Precision::F64] {
            let c = compress_with(&img, &CodecConfig::square(8, 0.6), prec).unwrap();
            let a = encode(&c).unwrap();
            assert_eq!(a, encode(&c).unwrap());
            assert_eq!(decode(&a).unwrap(), c);
        }
    }

    #[test]
    fn fallback_roundtrips() {
        let img = image(32, 32);
        let c = compress(&img, &CodecConfig::square(16, 0.85).ranks(4, 1)).unwrap();
        assert!(c.fallback);
        let bytes = encode(&c).unwrap();
        assert_eq!(decode(&bytes).unwrap(), c);
        let k = c.stored_element_count() / 65;
        assert_eq!(bytes.len(), 32 + 4 * k * 65);
    }

    #[test]
    fn error_paths() {
        let img = image(16, 16);
        let bytes = encode(&compress(&img, &CodecConfig::square(8, 0.7)).unwrap()).unwrap();

        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode(cut), Err(ArchiveError::Truncated { .. })));
        assert!(decode(cut).unwrap_err().offset().is_some());

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(ArchiveError::BadMagic { .. })));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(decode(&bad), Err(ArchiveError::UnsupportedVersion(2)));

        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            decode(&longer),
            Err(ArchiveError::TrailingBytes { count: 1, .. })
        ));

        assert!(matches!(decode(&[]), Err(ArchiveError::BadMagic { .. })));
    }

    #[test]
    fn bitmap_count_mismatch_detected() {
        let img = image(64, 64);
        let c = compress(&img, &CodecConfig::square(8, 0.7)).unwrap();
        assert!(!c.fallback);
        let n_c = c.channels[0].complex_count();
        let mut bytes = encode(&c).unwrap();
        // Flip a bitmap bit: popcount no longer matches the header.
        bytes[header_len(1)] ^= 1;
        let err = decode(&bytes).unwrap_err();
        assert!(
            matches!(
                err,
                ArchiveError::Inconsistent { .. } | ArchiveError::Truncated { .. }
            ),
            "{err:?} (n_c = {n_c})"
        );
    }

    #[test]
    fn byte_ratio_examples() {
        let img = image(16, 16);
        assert!((byte_compression_ratio(0, &img) - 1.0).abs() < 1e-15);
        assert!(byte_compression_ratio(1024, &img) < 0.0);
    }
}
