//! Brute-force metric oracles, f64 throughout.

use std::collections::{HashMap, HashSet};

use spacetime::sst::{SparseSpacetimeTensor, VoxelCoord4D};
use spacetime::training::MaskAugmentConfig;

pub fn psnr_oracle(a: &[f32], b: &[f32], peak: f64) -> f64 {
    let mut sq = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        sq += d * d;
    }
    10.0 * (peak * peak / (sq / a.len() as f64)).log10()
}

/// Direct SSIM: separate passes for means, then centred second moments.
pub fn ssim_oracle(a: &[f32], b: &[f32], w: usize, h: usize) -> f64 {
    let mut g = [0.0f64; 11];
    for (i, gi) in g.iter_mut().enumerate() {
        *gi = (-((i as f64 - 5.0).powi(2)) / 4.5).exp();
    }
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = (0.0001, 0.0009);
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let at = |img: &[f32], dx: usize, dy: usize| img[(y0 + dy) * w + x0 + dx] as f64;
            let wt = |dx: usize, dy: usize| g[dx] * g[dy] / norm;
            let (mut ma, mut mb) = (0.0, 0.0);
            for dy in 0..11 {
                for dx in 0..11 {
                    ma += wt(dx, dy) * at(a, dx, dy);
                    mb += wt(dx, dy) * at(b, dx, dy);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for dy in 0..11 {
                for dx in 0..11 {
                    let (p, q) = (at(a, dx, dy) - ma, at(b, dx, dy) - mb);
                    va += wt(dx, dy) * p * p;
                    vb += wt(dx, dy) * q * q;
                    cov += wt(dx, dy) * p * q;
                }
            }
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Two loops: mean |Δ| per adjacent pair, averaged over pairs, ×100.
pub fn flicker_oracle(frames: &[Vec<f32>]) -> f64 {
    let t = frames.len();
    let n = frames[0].len();
    let mut total = 0.0;
    for i in 0..t - 1 {
        let mut s = 0.0;
        for j in 0..n {
            s += (frames[i + 1][j] as f64 - frames[i][j] as f64).abs();
        }
        total += s / n as f64;
    }
    total * 100.0 / (t - 1) as f64
}

/// Scans every `(t, x, y, z)` of an `n³ × frames` grid; channels `1..4`.
pub fn voxel_flicker_oracle(x: &SparseSpacetimeTensor) -> f64 {
    let n = x.resolution() as u16;
    let lookup: HashMap<VoxelCoord4D, &[f32]> = x.entries().collect();
    let mut total = 0.0;
    let mut pairs = 0;
    for t in 0..x.frames() as u16 - 1 {
        let (mut s, mut k) = (0.0, 0);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if let (Some(p), Some(q)) = (lookup.get(&VoxelCoord4D::new(t, a, b, c)), lookup.get(&VoxelCoord4D::new(t + 1, a, b, c))) {
                        for ch in 1..4 {
                            s += (p[ch] as f64 - q[ch] as f64).abs();
                            k += 1;
                        }
                    }
                }
            }
        }
        if k > 0 {
            total += s / k as f64;
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        100.0 * total / pairs as f64
    }
}

pub fn iou_oracle(a: &SparseSpacetimeTensor, b: &SparseSpacetimeTensor) -> f64 {
    let sa: HashSet<_> = a.coords().iter().collect();
    let sb: HashSet<_> = b.coords().iter().collect();
    sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64
}

/// `2E|X−Y| − E|X−X'| − E|Y−Y'|` over 2D points, within-set terms over `i ≠ j`.
pub fn energy_oracle(x: &[f64], y: &[f64]) -> f64 {
    let pts = |v: &[f64]| v.chunks(2).map(|c| (c[0], c[1])).collect::<Vec<_>>();
    let (px, py) = (pts(x), pts(y));
    let d = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let mut xy = 0.0;
    for a in &px {
        for b in &py {
            xy += d(*a, *b);
        }
    }
    xy /= (px.len() * py.len()) as f64;
    let within = |p: &[(f64, f64)]| {
        let mut s = 0.0;
        for i in 0..p.len() {
            for j in 0..p.len() {
                if i != j {
                    s += d(p[i], p[j]);
                }
            }
        }
        s / (p.len() * (p.len() - 1)) as f64
    };
    2.0 * xy - within(&px) - within(&py)
}

/// Exact probability that a given pixel ends up black.
pub fn mask_coverage_oracle(cfg: &MaskAugmentConfig, side: usize, x: usize, y: usize) -> f64 {
    let (a, b) = cfg.size;
    // P(side = k): measure of f in [a, b] rounding to k, clamped to [1, side].
    let side_dist: Vec<(usize, f64)> = (1..=side)
        .map(|k| {
            let lo = if k == 1 { f64::NEG_INFINITY } else { (k as f64 - 0.5) / side as f64 };
            let hi = if k == side { f64::INFINITY } else { (k as f64 + 0.5) / side as f64 };
            let m = (hi.min(b) - lo.max(a)).max(0.0);
            (k, if b > a { m / (b - a) } else { (lo <= a && a < hi) as u8 as f64 })
        })
        .collect();
    let axis = |p: usize| -> f64 {
        side_dist
            .iter()
            .map(|&(w, pw)| {
                let starts = side - w + 1;
                let hits = (0..starts).filter(|&s| s <= p && p < s + w).count();
                pw * hits as f64 / starts as f64
            })
            .sum()
    };
    let q = axis(x) * axis(y);
    let counts = cfg.rects.0..=cfg.rects.1;
    let n = counts.clone().count() as f64;
    let miss: f64 = counts.map(|k| (1.0 - q).powi(k as i32)).sum::<f64>() / n;
    cfg.probability * (1.0 - miss)
}
