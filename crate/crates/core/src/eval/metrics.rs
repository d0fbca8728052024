use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::sst::SparseSpacetimeTensor;

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Flicker is reported as mean absolute difference times this.
pub const FLICKER_SCALE: f64 = 100.0;

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{a} vs {b} values")));
    }
    Ok(())
}

pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    same_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty input".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / a.len() as f64)
}

/// `10·log10(peak² / MSE)`; `+∞` for identical inputs.
pub fn psnr(a: &[f32], b: &[f32], peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak {peak}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// `value` with `+∞` replaced by [`PSNR_CAP`].
pub fn cap_psnr(value: f64) -> f64 {
    value.min(PSNR_CAP)
}

pub fn psnr_images(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    psnr(a.data(), b.data(), 1.0)
}

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::shape(format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height())));
    }
    Ok(())
}

/// Normalized 11×11 Gaussian window, row-major.
pub fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b / (s * s));
        }
    }
    w
}

/// Mean SSIM over all fully contained windows of a single-channel image with
/// dynamic range 1.
pub fn ssim(a: &[f32], b: &[f32], width: usize, height: usize) -> Result<f64> {
    same_len(a.len(), b.len())?;
    same_len(a.len(), width * height)?;
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::TooSmall { width, height, window: SSIM_WINDOW });
    }
    let w = ssim_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let (nx, ny) = (width - SSIM_WINDOW + 1, height - SSIM_WINDOW + 1);
    for y0 in 0..ny {
        for x0 in 0..nx {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                let row = (y0 + dy) * width + x0;
                for dx in 0..SSIM_WINDOW {
                    let k = w[dy * SSIM_WINDOW + dx];
                    let (p, q) = (a[row + dx] as f64, b[row + dx] as f64);
                    ma += k * p;
                    mb += k * q;
                    saa += k * p * p;
                    sbb += k * q * q;
                    sab += k * p * q;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (nx * ny) as f64)
}

/// SSIM averaged over the three colour channels.
pub fn ssim_images(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let channel = |img: &Image, c: usize| img.data().iter().skip(c).step_by(3).copied().collect::<Vec<f32>>();
    let mut s = 0.0;
    for c in 0..3 {
        s += ssim(&channel(a, c), &channel(b, c), a.width(), a.height())?;
    }
    Ok(s / 3.0)
}

/// Mean over adjacent pairs of the mean absolute difference, times [`FLICKER_SCALE`].
pub fn flicker<F: AsRef<[f32]>>(frames: &[F]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::TooFewFrames);
    }
    let n = frames[0].as_ref().len();
    let mut total = 0.0;
    for pair in frames.windows(2) {
        let (a, b) = (pair[0].as_ref(), pair[1].as_ref());
        same_len(n, a.len())?;
        same_len(n, b.len())?;
        if n == 0 {
            return Err(Error::InvalidArgument("empty frames".into()));
        }
        total += a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum::<f64>() / n as f64;
    }
    Ok(FLICKER_SCALE * total / (frames.len() - 1) as f64)
}

pub fn image_flicker(frames: &[Image]) -> Result<f64> {
    flicker(&frames.iter().map(|f| f.data()).collect::<Vec<_>>())
}

/// Flicker of per-voxel channels `start..start + len`, over voxels active in
/// both frames of each adjacent pair. Pairs sharing no voxel are skipped.
pub fn voxel_flicker(x: &SparseSpacetimeTensor, start: usize, len: usize) -> Result<f64> {
    if x.frames() < 2 {
        return Err(Error::TooFewFrames);
    }
    if len == 0 || start + len > x.channels() {
        return Err(Error::WidthMismatch { got: x.channels(), want: start + len });
    }
    let frames: Vec<HashMap<[u16; 3], &[f32]>> = (0..x.frames() as usize)
        .map(|t| {
            let r = x.structure().frame_range(t);
            r.map(|i| (x.coords()[i].xyz(), &x.feature(i)[start..start + len])).collect()
        })
        .collect();
    let mut total = 0.0;
    let mut pairs = 0;
    for pair in frames.windows(2) {
        let (mut sum, mut count) = (0.0, 0usize);
        for (xyz, a) in &pair[0] {
            if let Some(b) = pair[1].get(xyz) {
                sum += a.iter().zip(b.iter()).map(|(p, q)| (*p as f64 - *q as f64).abs()).sum::<f64>();
                count += len;
            }
        }
        if count > 0 {
            total += sum / count as f64;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Ok(0.0);
    }
    Ok(FLICKER_SCALE * total / pairs as f64)
}

/// Energy distance `2E|X−Y| − E|X−X'| − E|Y−Y'|` between two point sets of
/// dimension `dim` (row-major), with the within-set terms over distinct pairs.
pub fn energy_distance(x: &[f64], y: &[f64], dim: usize) -> Result<f64> {
    if dim == 0 || x.len() % dim != 0 || y.len() % dim != 0 {
        return Err(Error::shape(format!("{} and {} values for dimension {dim}", x.len(), y.len())));
    }
    let (n, m) = (x.len() / dim, y.len() / dim);
    if n < 2 || m < 2 {
        return Err(Error::InvalidArgument("need at least two points per set".into()));
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let mut xy = 0.0;
    for a in x.chunks_exact(dim) {
        for b in y.chunks_exact(dim) {
            xy += dist(a, b);
        }
    }
    let within = |s: &[f64], k: usize| {
        let mut acc = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                acc += dist(&s[i * dim..(i + 1) * dim], &s[j * dim..(j + 1) * dim]);
            }
        }
        2.0 * acc / (k * (k - 1)) as f64
    };
    Ok(2.0 * xy / (n * m) as f64 - within(x, n) - within(y, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let a = vec![0.3f32; 64];
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(cap_psnr(psnr(&a, &a, 1.0).unwrap()), PSNR_CAP);
        let b: Vec<f32> = a.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-5);
        assert!(matches!(psnr(&a, &b[..3], 1.0), Err(Error::ShapeMismatch(_))));
        assert!(psnr(&a, &b, 0.0).is_err());
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = vec![0.0f32; 100];
        assert!(matches!(ssim(&a, &a, 10, 10), Err(Error::TooSmall { window: 11, .. })));
    }

    #[test]
    fn flicker_closed_forms() {
        assert!(matches!(flicker(&[vec![0.0f32; 3]]), Err(Error::TooFewFrames)));
        assert_eq!(flicker(&vec![vec![0.4f32; 5]; 4]).unwrap(), 0.0);
        let alt: Vec<Vec<f32>> = (0..5).map(|t| vec![(t % 2) as f32; 7]).collect();
        assert_eq!(flicker(&alt).unwrap(), 100.0);
    }
}
