//! Pixel planes, multi-channel images, and PNG ingestion.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("png decode failed: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("png encode failed: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("unsupported image: {0}")]
    Unsupported(String),
    #[error("invalid image: {0}")]
    Invalid(String),
}

/// Which colour component a plane carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Gray,
    Red,
    Green,
    Blue,
}

impl Channel {
    pub fn layout(channels: usize) -> Option<&'static [Channel]> {
        match channels {
            1 => Some(&[Channel::Gray]),
            3 => Some(&[Channel::Red, Channel::Green, Channel::Blue]),
            _ => None,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Gray => "gray",
            Channel::Red => "red",
            Channel::Green => "green",
            Channel::Blue => "blue",
        })
    }
}

/// One channel of intensities in `[0, 2^bit_depth - 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    pub channel: Channel,
    pub bit_depth: u8,
    pub pixels: Matrix,
}

impl ImagePlane {
    pub fn new(channel: Channel, bit_depth: u8, pixels: Matrix) -> Result<Self, ImageError> {
        check_bit_depth(bit_depth)?;
        if pixels.rows() == 0 || pixels.cols() == 0 {
            return Err(ImageError::Invalid("empty plane".into()));
        }
        Ok(Self {
            channel,
            bit_depth,
            pixels,
        })
    }

    pub fn rows(&self) -> usize {
        self.pixels.rows()
    }

    pub fn cols(&self) -> usize {
        self.pixels.cols()
    }

    pub fn max_value(&self) -> f64 {
        max_value(self.bit_depth)
    }
}

/// Largest representable intensity at `bit_depth`.
pub fn max_value(bit_depth: u8) -> f64 {
    ((1u32 << bit_depth) - 1) as f64
}

fn check_bit_depth(bit_depth: u8) -> Result<(), ImageError> {
    match bit_depth {
        8 | 16 => Ok(()),
        other => Err(ImageError::Unsupported(format!("bit depth {other}"))),
    }
}

/// A grayscale (one plane) or RGB (three planes) image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    planes: Vec<ImagePlane>,
}

impl Image {
    pub fn new(planes: Vec<ImagePlane>) -> Result<Self, ImageError> {
        let layout = Channel::layout(planes.len())
            .ok_or_else(|| ImageError::Unsupported(format!("{} channels", planes.len())))?;
        let first = &planes[0];
        for (p, expect) in planes.iter().zip(layout) {
            if p.channel != *expect {
                return Err(ImageError::Invalid(format!(
                    "plane {} where {} expected",
                    p.channel, expect
                )));
            }
            if p.pixels.shape() != first.pixels.shape() || p.bit_depth != first.bit_depth {
                return Err(ImageError::Invalid(
                    "planes disagree on size or depth".into(),
                ));
            }
        }
        Ok(Self { planes })
    }

    pub fn gray(bit_depth: u8, pixels: Matrix) -> Result<Self, ImageError> {
        Self::new(vec![ImagePlane::new(Channel::Gray, bit_depth, pixels)?])
    }

    pub fn rgb(bit_depth: u8, r: Matrix, g: Matrix, b: Matrix) -> Result<Self, ImageError> {
        Self::new(vec![
            ImagePlane::new(Channel::Red, bit_depth, r)?,
            ImagePlane::new(Channel::Green, bit_depth, g)?,
            ImagePlane::new(Channel::Blue, bit_depth, b)?,
        ])
    }

    pub fn planes(&self) -> &[ImagePlane] {
        &self.planes
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn rows(&self) -> usize {
        self.planes[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.planes[0].cols()
    }

    pub fn bit_depth(&self) -> u8 {
        self.planes[0].bit_depth
    }

    /// Size of the uncompressed samples in bytes.
    pub fn raw_bytes(&self) -> usize {
        self.rows() * self.cols() * self.channels() * (self.bit_depth() as usize / 8)
    }

    /// Decodes an 8- or 16-bit grayscale or RGB PNG.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode_png(BufReader::new(file))
    }

    pub fn decode_png<R: std::io::BufRead + std::io::Seek>(reader: R) -> Result<Self, ImageError> {
        let mut decoder = png::Decoder::new(reader);
        // Palette and sub-byte gray are expanded to 8 bits; 16-bit stays 16-bit.
        decoder.set_transformations(png::Transformations::EXPAND);
        let mut reader = decoder.read_info()?;
        let mut buf = vec![
            0;
            reader.output_buffer_size().ok_or_else(|| {
                ImageError::Unsupported("image too large".into())
            })?
        ];
        let info = reader.next_frame(&mut buf)?;
        let (width, height) = (info.width as usize, info.height as usize);
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::Rgb => 3,
            other => {
                return Err(ImageError::Unsupported(format!(
                    "color type {other:?}; only grayscale and RGB are accepted"
                )))
            }
        };
        let bit_depth: u8 = match info.bit_depth {
            png::BitDepth::Eight => 8,
            png::BitDepth::Sixteen => 16,
            other => return Err(ImageError::Unsupported(format!("bit depth {other:?}"))),
        };
        let bytes_per_sample = bit_depth as usize / 8;
        let line = info.line_size;
        let mut planes: Vec<Vec<f64>> = vec![Vec::with_capacity(width * height); channels];
        for y in 0..height {
            let row = &buf[y * line..y * line + width * channels * bytes_per_sample];
            for (i, sample) in row.chunks_exact(bytes_per_sample).enumerate() {
                let v = if bytes_per_sample == 1 {
                    sample[0] as f64
                } else {
                    u16::from_be_bytes([sample[0], sample[1]]) as f64
                };
                planes[i % channels].push(v);
            }
        }
        let layout = Channel::layout(channels).expect("1 or 3 channels");
        let planes = planes
            .into_iter()
            .zip(layout)
            .map(|(data, &ch)| {
                let m = Matrix::from_vec(height, width, data).expect("sizes match");
                ImagePlane::new(ch, bit_depth, m)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(planes)
    }

    /// Writes the image as PNG. Samples are clamped and rounded half-to-even.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.encode_png(BufWriter::new(file))
    }

    pub fn encode_png<W: std::io::Write>(&self, writer: W) -> Result<(), ImageError> {
        let mut enc = png::Encoder::new(writer, self.cols() as u32, self.rows() as u32);
        enc.set_color(if self.channels() == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(if self.bit_depth() == 8 {
            png::BitDepth::Eight
        } else {
            png::BitDepth::Sixteen
        });
        let mut w = enc.write_header()?;
        w.write_image_data(&self.interleaved_samples())?;
        Ok(())
    }

    /// Interleaved big-endian samples, as PNG and PNM store them.
    pub fn interleaved_samples(&self) -> Vec<u8> {
        let max = max_value(self.bit_depth());
        let wide = self.bit_depth() == 16;
        let n = self.rows() * self.cols();
        let mut out = Vec::with_capacity(self.raw_bytes());
        for i in 0..n {
            for p in &self.planes {
                let v = p.pixels.as_slice()[i].clamp(0.0, max).round_ties_even();
                if wide {
                    out.extend_from_slice(&(v as u16).to_be_bytes());
                } else {
                    out.push(v as u8);
                }
            }
        }
        out
    }

    /// Places images left to right on a shared canvas; shorter ones are
    /// padded with black. All inputs must share channel count and depth.
    pub fn side_by_side(images: &[&Image], gap: usize) -> Result<Image, ImageError> {
        let first = images
            .first()
            .ok_or_else(|| ImageError::Invalid("nothing to join".into()))?;
        if images
            .iter()
            .any(|i| i.channels() != first.channels() || i.bit_depth() != first.bit_depth())
        {
            return Err(ImageError::Invalid("channel layout differs".into()));
        }
        let rows = images.iter().map(|i| i.rows()).max().unwrap_or(0);
        let cols = images.iter().map(|i| i.cols()).sum::<usize>() + gap * (images.len() - 1);
        let mut planes = Vec::new();
        for c in 0..first.channels() {
            let mut canvas = Matrix::zeros(rows, cols);
            let mut x = 0;
            for img in images {
                canvas.set_block(0, x, &img.planes[c].pixels);
                x += img.cols() + gap;
            }
            planes.push(ImagePlane::new(
                first.planes[c].channel,
                first.bit_depth(),
                canvas,
            )?);
        }
        Image::new(planes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn roundtrip(img: &Image) -> Image {
        let mut bytes = Vec::new();
        img.encode_png(&mut bytes).unwrap();
        Image::decode_png(Cursor::new(bytes)).unwrap()
    }

    #[test]
    fn png_roundtrip_gray8_and_rgb16() {
        let g = Image::gray(8, Matrix::from_fn(3, 5, |r, c| (r * 40 + c * 7) as f64)).unwrap();
        assert_eq!(roundtrip(&g), g);
        let mk = |o: usize| Matrix::from_fn(4, 2, move |r, c| (r * 9000 + c * 300 + o) as f64);
        let rgb = Image::rgb(16, mk(1), mk(2), mk(65)).unwrap();
        assert_eq!(roundtrip(&rgb), rgb);
    }

    #[test]
    fn alpha_is_rejected() {
        let mut bytes = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut bytes, 1, 1);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header()
                .unwrap()
                .write_image_data(&[1, 2, 3, 4])
                .unwrap();
        }
        assert!(matches!(
            Image::decode_png(Cursor::new(bytes)),
            Err(ImageError::Unsupported(_))
        ));
    }

    #[test]
    fn mismatched_planes_rejected() {
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(2, 3);
        assert!(Image::rgb(8, a.clone(), a, b).is_err());
        assert!(Image::gray(12, Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn write_clamps_and_rounds_half_even() {
        let g = Image::gray(8, Matrix::from_rows(&[&[-3.0, 2.5, 3.5, 300.0]]).unwrap()).unwrap();
        assert_eq!(g.interleaved_samples(), vec![0, 2, 4, 255]);
    }
}
