//! MSE, PSNR and SSIM.
//!
//! SSIM follows the usual reference setup: an 11x11 Gaussian window with
//! sigma 1.5, `K1 = 0.01`, `K2 = 0.03`, evaluated at every position where the
//! window fits entirely inside the image, then averaged. Colour images are
//! scored per channel and the channel scores averaged.

use thiserror::Error;

use crate::image::{max_value, Image};
use crate::linalg::Matrix;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("images differ in shape: {0}")]
    Mismatch(String),
    #[error("image {rows}x{cols} is smaller than the {window}x{window} SSIM window")]
    TooSmall {
        rows: usize,
        cols: usize,
        window: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub mse: f64,
    /// `f64::INFINITY` for identical images.
    pub psnr: f64,
    pub ssim: f64,
}

impl QualityReport {
    pub fn psnr_is_infinite(&self) -> bool {
        self.psnr.is_infinite()
    }
}

fn check_pair(a: &Image, b: &Image) -> Result<(), MetricError> {
    if a.rows() != b.rows() || a.cols() != b.cols() || a.channels() != b.channels() {
        return Err(MetricError::Mismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.rows(),
            a.cols(),
            a.channels(),
            b.rows(),
            b.cols(),
            b.channels()
        )));
    }
    if a.bit_depth() != b.bit_depth() {
        return Err(MetricError::Mismatch(format!(
            "{}-bit vs {}-bit",
            a.bit_depth(),
            b.bit_depth()
        )));
    }
    Ok(())
}

/// Mean squared difference over every sample of every channel.
pub fn mse(a: &Image, b: &Image) -> Result<f64, MetricError> {
    check_pair(a, b)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pa, pb) in a.planes().iter().zip(b.planes()) {
        for (x, y) in pa.pixels.as_slice().iter().zip(pb.pixels.as_slice()) {
            let d = x - y;
            sum += d * d;
        }
        count += pa.pixels.as_slice().len();
    }
    Ok(sum / count as f64)
}

pub fn psnr_from_mse(mse: f64, bit_depth: u8) -> f64 {
    if mse == 0.0 {
        return f64::INFINITY;
    }
    let peak = max_value(bit_depth);
    10.0 * (peak * peak / mse).log10()
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64, MetricError> {
    Ok(psnr_from_mse(mse(a, b)?, a.bit_depth()))
}

/// Normalized `size x size` Gaussian weights, row-major.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let g = gaussian_1d(size, sigma);
    let mut w = Vec::with_capacity(size * size);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    w
}

fn gaussian_1d(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of `m` with the 1-D kernel `g` along both axes.
fn filter_valid(m: &Matrix, g: &[f64]) -> Matrix {
    let w = g.len();
    let (rows, cols) = m.shape();
    let oc = cols - w + 1;
    let orow = rows - w + 1;
    let horiz = Matrix::from_fn(rows, oc, |r, c| {
        let row = &m.row(r)[c..c + w];
        row.iter().zip(g).map(|(x, k)| x * k).sum()
    });
    Matrix::from_fn(orow, oc, |r, c| {
        (0..w).map(|i| horiz.get(r + i, c) * g[i]).sum()
    })
}

/// Mean SSIM of one plane pair with peak value `peak`.
pub fn ssim_plane(a: &Matrix, b: &Matrix, peak: f64) -> Result<f64, MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::Mismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (rows, cols) = a.shape();
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(MetricError::TooSmall {
            rows,
            cols,
            window: SSIM_WINDOW,
        });
    }
    let g = gaussian_1d(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);

    let mu_a = filter_valid(a, &g);
    let mu_b = filter_valid(b, &g);
    let aa = filter_valid(&a.map(|v| v * v), &g);
    let bb = filter_valid(&b.map(|v| v * v), &g);
    let ab_prod = Matrix::from_fn(rows, cols, |r, c| a.get(r, c) * b.get(r, c));
    let ab = filter_valid(&ab_prod, &g);

    let n = mu_a.as_slice().len();
    let mut total = 0.0;
    for i in 0..n {
        let ma = mu_a.as_slice()[i];
        let mb = mu_b.as_slice()[i];
        let va = aa.as_slice()[i] - ma * ma;
        let vb = bb.as_slice()[i] - mb * mb;
        let cov = ab.as_slice()[i] - ma * mb;
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / n as f64)
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricError> {
    check_pair(a, b)?;
    let peak = max_value(a.bit_depth());
    let mut sum = 0.0;
    for (pa, pb) in a.planes().iter().zip(b.planes()) {
        sum += ssim_plane(&pa.pixels, &pb.pixels, peak)?;
    }
    Ok(sum / a.channels() as f64)
}

pub fn evaluate(reference: &Image, candidate: &Image) -> Result<QualityReport, MetricError> {
    let mse = mse(reference, candidate)?;
    Ok(QualityReport {
        mse,
        psnr: psnr_from_mse(mse, reference.bit_depth()),
        ssim: ssim(reference, candidate)?,
    })
}
