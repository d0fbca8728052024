use std::sync::Arc;

use super::coord::VoxelCoord4D;
use super::structure::Structure;
use super::tensor::SparseSpacetimeTensor;
use crate::error::{Error, Result};

/// Default binarization threshold for occupancy values.
pub const DEFAULT_THRESHOLD: f32 = 0.5;

/// Per-frame dense `N³` occupancy grids, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOccupancySequence {
    resolution: u32,
    frames: u32,
    values: Vec<f32>,
}

impl DenseOccupancySequence {
    pub fn zeros(resolution: u32, frames: u32) -> Result<Self> {
        Structure::check_dims(resolution, frames)?;
        let n = resolution as usize;
        Ok(DenseOccupancySequence {
            resolution,
            frames,
            values: vec![0.0; frames as usize * n * n * n],
        })
    }

    pub fn from_values(resolution: u32, frames: u32, values: Vec<f32>) -> Result<Self> {
        Structure::check_dims(resolution, frames)?;
        let n = resolution as usize;
        if values.len() != frames as usize * n * n * n {
            return Err(Error::shape(format!(
                "{} values for T={frames}, N={resolution}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("occupancy values must be finite".into()));
        }
        Ok(DenseOccupancySequence {
            resolution,
            frames,
            values,
        })
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn frames(&self) -> u32 {
        self.frames
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn frame_len(&self) -> usize {
        let n = self.resolution as usize;
        n * n * n
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let len = self.frame_len();
        &self.values[t * len..(t + 1) * len]
    }

    #[inline]
    pub fn offset(&self, t: usize, x: usize, y: usize, z: usize) -> usize {
        let n = self.resolution as usize;
        ((t * n + x) * n + y) * n + z
    }

    pub fn get(&self, t: usize, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.offset(t, x, y, z)]
    }

    pub fn set(&mut self, t: usize, x: usize, y: usize, z: usize, v: f32) {
        let o = self.offset(t, x, y, z);
        self.values[o] = v;
    }

    pub fn count_at_least(&self, tau: f32) -> usize {
        self.values.iter().filter(|&&v| v >= tau).count()
    }

    pub fn binarize(&self, tau: f32) -> Self {
        DenseOccupancySequence {
            resolution: self.resolution,
            frames: self.frames,
            values: self
                .values
                .iter()
                .map(|&v| if v >= tau { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Keeps voxels at or above `tau` that have at least one 6-neighbour
    /// below it; neighbours outside the grid count as empty.
    pub fn surface(&self, tau: f32) -> Self {
        let n = self.resolution as usize;
        let mut out = DenseOccupancySequence {
            resolution: self.resolution,
            frames: self.frames,
            values: vec![0.0; self.values.len()],
        };
        let filled = |t: usize, x: isize, y: isize, z: isize| -> bool {
            if x < 0 || y < 0 || z < 0 || x >= n as isize || y >= n as isize || z >= n as isize {
                return false;
            }
            self.get(t, x as usize, y as usize, z as usize) >= tau
        };
        for t in 0..self.frames as usize {
            for x in 0..n {
                for y in 0..n {
                    for z in 0..n {
                        if self.get(t, x, y, z) < tau {
                            continue;
                        }
                        let (xi, yi, zi) = (x as isize, y as isize, z as isize);
                        let exposed = !filled(t, xi - 1, yi, zi)
                            || !filled(t, xi + 1, yi, zi)
                            || !filled(t, xi, yi - 1, zi)
                            || !filled(t, xi, yi + 1, zi)
                            || !filled(t, xi, yi, zi - 1)
                            || !filled(t, xi, yi, zi + 1);
                        if exposed {
                            out.set(t, x, y, z, 1.0);
                        }
                    }
                }
            }
        }
        out
    }

    /// Nearest-neighbour upsampling by an integer factor per axis.
    pub fn upsample(&self, factor: u32) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidArgument("upsample factor must be positive".into()));
        }
        let n = self.resolution as usize;
        let f = factor as usize;
        let mut out = Self::zeros(self.resolution * factor, self.frames)?;
        for t in 0..self.frames as usize {
            for x in 0..n * f {
                for y in 0..n * f {
                    for z in 0..n * f {
                        let v = self.get(t, x / f, y / f, z / f);
                        out.set(t, x, y, z, v);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Max-pool downsampling by an integer factor (any active child activates the parent).
    pub fn downsample_max(&self, factor: u32) -> Result<Self> {
        if factor == 0 || self.resolution % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot downsample N={} by {factor}",
                self.resolution
            )));
        }
        let n = self.resolution as usize;
        let f = factor as usize;
        let mut out = Self::zeros(self.resolution / factor, self.frames)?;
        for t in 0..self.frames as usize {
            for x in 0..n {
                for y in 0..n {
                    for z in 0..n {
                        let v = self.get(t, x, y, z);
                        let o = out.offset(t, x / f, y / f, z / f);
                        if v > out.values[o] {
                            out.values[o] = v;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Active coordinate set at threshold `tau`.
    pub fn structure(&self, tau: f32) -> Structure {
        let n = self.resolution as usize;
        let mut coords = Vec::new();
        for t in 0..self.frames as usize {
            for x in 0..n {
                for y in 0..n {
                    for z in 0..n {
                        if self.get(t, x, y, z) >= tau {
                            coords.push(VoxelCoord4D::new(t as u16, x as u16, y as u16, z as u16));
                        }
                    }
                }
            }
        }
        // Emitted in lexicographic order, in bounds, unique.
        Structure::new_unchecked(self.resolution, self.frames, coords)
    }
}

/// Feature source used by [`sparsify`].
pub enum FeatureSource<'a> {
    Constant(Vec<f32>),
    Function {
        channels: usize,
        f: &'a dyn Fn(VoxelCoord4D, &mut [f32]),
    },
}

impl FeatureSource<'_> {
    fn channels(&self) -> usize {
        match self {
            FeatureSource::Constant(v) => v.len(),
            FeatureSource::Function { channels, .. } => *channels,
        }
    }
}

/// Active entries are the voxels with value `>= tau`.
pub fn sparsify(
    dense: &DenseOccupancySequence,
    tau: f32,
    source: &FeatureSource<'_>,
) -> Result<SparseSpacetimeTensor> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {tau} not in (0, 1)")));
    }
    let channels = source.channels();
    let structure = dense.structure(tau);
    let mut features = vec![0.0f32; structure.len() * channels];
    for (c, row) in structure.coords().iter().zip(features.chunks_exact_mut(channels.max(1))) {
        match source {
            FeatureSource::Constant(v) => row.copy_from_slice(v),
            FeatureSource::Function { f, .. } => f(*c, row),
        }
    }
    SparseSpacetimeTensor::new(Arc::new(structure), channels, features)
}

/// Binary occupancy of the active coordinates.
pub fn densify(sst: &SparseSpacetimeTensor) -> DenseOccupancySequence {
    densify_structure(sst.structure())
}

pub fn densify_structure(s: &Structure) -> DenseOccupancySequence {
    let mut out = DenseOccupancySequence::zeros(s.resolution(), s.frames())
        .expect("structure dims were validated");
    for c in s.coords() {
        out.set(c.t as usize, c.x as usize, c.y as usize, c.z as usize, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedRng;
    use crate::sst::build_sparse;

    #[test]
    fn all_zero_and_all_one() {
        let z = DenseOccupancySequence::zeros(4, 2).unwrap();
        let s = sparsify(&z, 0.5, &FeatureSource::Constant(vec![1.0])).unwrap();
        assert_eq!(s.len(), 0);
        let ones = DenseOccupancySequence::from_values(2, 1, vec![1.0; 8]).unwrap();
        let s = sparsify(&ones, 0.5, &FeatureSource::Constant(vec![1.0, 2.0])).unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(s.feature(3), &[1.0, 2.0]);
    }

    #[test]
    fn random_dense_count_matches_direct_count() {
        let mut rng = SeedRng::new(11);
        let vals: Vec<f32> = (0..3 * 5 * 5 * 5).map(|_| rng.uniform() as f32).collect();
        let d = DenseOccupancySequence::from_values(5, 3, vals.clone()).unwrap();
        let s = sparsify(&d, 0.5, &FeatureSource::Constant(vec![0.0])).unwrap();
        let mut direct = 0;
        for v in &vals {
            if *v >= 0.5 {
                direct += 1;
            }
        }
        assert_eq!(s.len(), direct);
    }

    #[test]
    fn feature_function_is_sampled_per_voxel() {
        let d = DenseOccupancySequence::from_values(2, 1, vec![1.0; 8]).unwrap();
        let f = |c: VoxelCoord4D, out: &mut [f32]| out[0] = (c.x * 4 + c.y * 2 + c.z) as f32;
        let s = sparsify(&d, 0.5, &FeatureSource::Function { channels: 1, f: &f }).unwrap();
        let got: Vec<f32> = s.features().to_vec();
        assert_eq!(got, (0..8).map(|v| v as f32).collect::<Vec<_>>());
    }

    #[test]
    fn bad_threshold() {
        let z = DenseOccupancySequence::zeros(2, 1).unwrap();
        assert!(sparsify(&z, 1.0, &FeatureSource::Constant(vec![0.0])).is_err());
        assert!(sparsify(&z, 0.0, &FeatureSource::Constant(vec![0.0])).is_err());
    }

    #[test]
    fn densify_sparsify_round_trip() {
        let mut rng = SeedRng::new(5);
        for _ in 0..10 {
            let mut entries = Vec::new();
            for t in 0..3u16 {
                for x in 0..4u16 {
                    for y in 0..4u16 {
                        for z in 0..4u16 {
                            if rng.uniform() < 0.2 {
                                entries.push((VoxelCoord4D::new(t, x, y, z), vec![1.0]));
                            }
                        }
                    }
                }
            }
            let s = build_sparse(entries, 4, 3, 1).unwrap();
            let back = sparsify(&densify(&s), 0.5, &FeatureSource::Constant(vec![1.0])).unwrap();
            assert_eq!(back.coords(), s.coords());
        }
    }

    #[test]
    fn surface_of_solid_cube_drops_the_interior() {
        let mut d = DenseOccupancySequence::zeros(5, 1).unwrap();
        for x in 1..4 {
            for y in 1..4 {
                for z in 1..4 {
                    d.set(0, x, y, z, 1.0);
                }
            }
        }
        let s = d.surface(0.5);
        assert_eq!(s.count_at_least(0.5), 26);
        assert_eq!(s.get(0, 2, 2, 2), 0.0);
    }

    #[test]
    fn up_then_down_is_identity() {
        let mut rng = SeedRng::new(8);
        let vals: Vec<f32> = (0..2 * 27).map(|_| (rng.uniform() < 0.4) as u8 as f32).collect();
        let d = DenseOccupancySequence::from_values(3, 2, vals).unwrap();
        let up = d.upsample(2).unwrap();
        assert_eq!(up.resolution(), 6);
        assert_eq!(up.count_at_least(0.5), 8 * d.count_at_least(0.5));
        assert_eq!(up.downsample_max(2).unwrap(), d);
    }
}
