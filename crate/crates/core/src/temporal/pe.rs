use crate::error::{Error, Result};
use crate::nn::sinusoidal;
use crate::numerics::DenseTensor;
use crate::sst::VoxelCoord4D;

pub const PE_BASE: f64 = 10000.0;

/// Sinusoidal encoding of a 3D position: one `dim/3` block per axis.
pub fn absolute_pe_3d(p: [f64; 3], dim: usize) -> Result<Vec<f32>> {
    if dim == 0 || dim % 6 != 0 {
        return Err(Error::BadDim(dim));
    }
    let block = dim / 3;
    Ok(p.iter().flat_map(|&v| sinusoidal(v, block, PE_BASE)).map(|v| v as f32).collect())
}

/// `[L, dim]` table of spatial encodings for `coords`.
pub fn absolute_pe_table(coords: &[VoxelCoord4D], dim: usize) -> Result<DenseTensor<f32>> {
    let mut data = Vec::with_capacity(coords.len() * dim);
    for c in coords {
        data.extend(absolute_pe_3d([c.x as f64, c.y as f64, c.z as f64], dim)?);
    }
    DenseTensor::new(vec![coords.len(), dim], data)
}

fn rotate(v: &[f64], t: f64, base: f64) -> Vec<f64> {
    let d = v.len();
    let mut out = v.to_vec();
    for j in 0..d / 2 {
        let ang = t * base.powf(-2.0 * j as f64 / d as f64);
        let (s, c) = ang.sin_cos();
        out[2 * j] = v[2 * j] * c - v[2 * j + 1] * s;
        out[2 * j + 1] = v[2 * j] * s + v[2 * j + 1] * c;
    }
    out
}

/// Rotates consecutive coordinate pairs of `q` and `k` by `t·θ_j`,
/// `θ_j = base^(−2j/d)`.
pub fn rope_1d(q: &[f64], k: &[f64], t_q: i64, t_k: i64, base: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if q.len() % 2 != 0 {
        return Err(Error::OddDim(q.len()));
    }
    if k.len() != q.len() {
        return Err(Error::shape(format!("rope q has {} dims, k has {}", q.len(), k.len())));
    }
    Ok((rotate(q, t_q as f64, base), rotate(k, t_k as f64, base)))
}
