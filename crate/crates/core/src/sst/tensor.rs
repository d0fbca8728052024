use std::collections::HashSet;
use std::sync::Arc;

use super::coord::VoxelCoord4D;
use super::structure::Structure;
use crate::error::{Error, Result};

/// Sparse `(t, x, y, z)`-indexed features: `L` active voxels with a
/// `C`-wide feature row each. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpacetimeTensor {
    structure: Arc<Structure>,
    channels: usize,
    features: Vec<f32>,
}

/// The entries of one frame, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFrame {
    pub t: usize,
    pub coords: Vec<[u16; 3]>,
    pub channels: usize,
    pub features: Vec<f32>,
}

impl SparseFrame {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }
}

/// Builds a validated tensor from unordered entries. Duplicate coordinates
/// are an error.
pub fn build_sparse(
    entries: Vec<(VoxelCoord4D, Vec<f32>)>,
    resolution: u32,
    frames: u32,
    channels: usize,
) -> Result<SparseSpacetimeTensor> {
    Structure::check_dims(resolution, frames)?;
    if channels == 0 {
        return Err(Error::InvalidArgument("channel count must be positive".into()));
    }
    for (c, f) in &entries {
        if !c.in_bounds(resolution, frames) {
            return Err(Error::OutOfBounds(*c));
        }
        if f.len() != channels {
            return Err(Error::BadFeatureWidth {
                got: f.len(),
                want: channels,
            });
        }
    }
    let mut entries = entries;
    entries.sort_unstable_by_key(|e| e.0);
    let mut features = Vec::with_capacity(entries.len() * channels);
    let mut coords = Vec::with_capacity(entries.len());
    for (c, f) in entries {
        features.extend_from_slice(&f);
        coords.push(c);
    }
    let structure = Structure::from_sorted(resolution, frames, coords)?;
    SparseSpacetimeTensor::new(Arc::new(structure), channels, features)
}

impl SparseSpacetimeTensor {
    pub fn new(structure: Arc<Structure>, channels: usize, features: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("channel count must be positive".into()));
        }
        if features.len() != structure.len() * channels {
            return Err(Error::BadFeatureWidth {
                got: features.len() / structure.len().max(1),
                want: channels,
            });
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature(structure.coords()[i / channels]));
        }
        Ok(SparseSpacetimeTensor {
            structure,
            channels,
            features,
        })
    }

    /// Same structure, every feature set to `value`.
    pub fn constant(structure: Arc<Structure>, channels: usize, value: f32) -> Result<Self> {
        let n = structure.len() * channels;
        Self::new(structure, channels, vec![value; n])
    }

    pub fn resolution(&self) -> u32 {
        self.structure.resolution()
    }

    pub fn frames(&self) -> u32 {
        self.structure.frames()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.structure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.structure.is_empty()
    }

    pub fn structure(&self) -> &Arc<Structure> {
        &self.structure
    }

    pub fn coords(&self) -> &[VoxelCoord4D] {
        self.structure.coords()
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn feature(&self, row: usize) -> &[f32] {
        &self.features[row * self.channels..(row + 1) * self.channels]
    }

    pub fn get(&self, c: VoxelCoord4D) -> Option<&[f32]> {
        self.structure.find(c).map(|i| self.feature(i))
    }

    pub fn entries(&self) -> impl Iterator<Item = (VoxelCoord4D, &[f32])> {
        self.coords()
            .iter()
            .copied()
            .zip(self.features.chunks_exact(self.channels))
    }

    /// Replaces the features, keeping the structure.
    pub fn with_features(&self, channels: usize, features: Vec<f32>) -> Result<Self> {
        Self::new(self.structure.clone(), channels, features)
    }

    /// Keeps a contiguous block of feature channels.
    pub fn select_channels(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.channels || len == 0 {
            return Err(Error::BadFeatureWidth {
                got: start + len,
                want: self.channels,
            });
        }
        let features = self
            .features
            .chunks_exact(self.channels)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        Self::new(self.structure.clone(), len, features)
    }

    pub fn frame_slice(&self, t: usize) -> Result<SparseFrame> {
        if t >= self.frames() as usize {
            return Err(Error::FrameOutOfRange {
                t,
                frames: self.frames() as usize,
            });
        }
        let range = self.structure.frame_range(t);
        Ok(SparseFrame {
            t,
            coords: self.coords()[range.clone()].iter().map(|c| c.xyz()).collect(),
            channels: self.channels,
            features: self.features[range.start * self.channels..range.end * self.channels].to_vec(),
        })
    }

    /// Keeps the frames in `[start, start + len)`, renumbered from zero.
    pub fn frame_window(&self, start: usize, len: usize) -> Result<Self> {
        let frames = self.frames() as usize;
        if len == 0 || start + len > frames {
            return Err(Error::FrameOutOfRange {
                t: start + len,
                frames,
            });
        }
        let lo = self.structure.frame_range(start).start;
        let hi = self.structure.frame_range(start + len - 1).end;
        let coords = self.coords()[lo..hi]
            .iter()
            .map(|c| c.with_t(c.t - start as u16))
            .collect();
        let structure = Structure::from_sorted(self.resolution(), len as u32, coords)?;
        Self::new(
            Arc::new(structure),
            self.channels,
            self.features[lo * self.channels..hi * self.channels].to_vec(),
        )
    }
}

/// Intersection over union of the two coordinate sets; 1.0 when both are empty.
pub fn coords_iou(a: &SparseSpacetimeTensor, b: &SparseSpacetimeTensor) -> Result<f64> {
    if a.resolution() != b.resolution() || a.frames() != b.frames() {
        return Err(Error::shape(format!(
            "N={}, T={} vs N={}, T={}",
            a.resolution(),
            a.frames(),
            b.resolution(),
            b.frames()
        )));
    }
    structure_iou(a.structure(), b.structure())
}

pub fn structure_iou(a: &Structure, b: &Structure) -> Result<f64> {
    if a.resolution() != b.resolution() || a.frames() != b.frames() {
        return Err(Error::shape("structures differ in N or T"));
    }
    if a.is_empty() && b.is_empty() {
        return Ok(1.0);
    }
    let inter = a.coords().iter().filter(|c| b.contains(**c)).count();
    let union = a.len() + b.len() - inter;
    Ok(inter as f64 / union as f64)
}

/// Coordinates present in both tensors (used by metrics over shared voxels).
pub fn shared_coords(a: &Structure, b: &Structure) -> Vec<VoxelCoord4D> {
    let small: HashSet<VoxelCoord4D> = b.coords().iter().copied().collect();
    a.coords().iter().copied().filter(|c| small.contains(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedRng;
    use proptest::prelude::*;

    fn c(t: u16, x: u16, y: u16, z: u16) -> VoxelCoord4D {
        VoxelCoord4D::new(t, x, y, z)
    }

    #[test]
    fn empty_build() {
        let s = build_sparse(vec![], 16, 4, 8).unwrap();
        assert_eq!(s.len(), 0);
        assert_eq!(s.channels(), 8);
    }

    #[test]
    fn single_entry() {
        let s = build_sparse(vec![(c(0, 0, 0, 0), vec![1.0])], 1, 1, 1).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.coords()[0], c(0, 0, 0, 0));
    }

    #[test]
    fn duplicates_are_errors() {
        let e = build_sparse(
            vec![(c(0, 2, 2, 2), vec![1.0]), (c(0, 2, 2, 2), vec![2.0])],
            4,
            1,
            1,
        )
        .unwrap_err();
        assert!(matches!(e, Error::DuplicateCoord(d) if d == c(0, 2, 2, 2)));
    }

    #[test]
    fn bounds_and_width_errors() {
        assert!(matches!(
            build_sparse(vec![(c(0, 4, 0, 0), vec![0.0])], 4, 1, 1),
            Err(Error::OutOfBounds(_))
        ));
        assert!(matches!(
            build_sparse(vec![(c(1, 0, 0, 0), vec![0.0])], 4, 1, 1),
            Err(Error::OutOfBounds(_))
        ));
        assert!(matches!(
            build_sparse(vec![(c(0, 0, 0, 0), vec![0.0, 1.0])], 4, 1, 1),
            Err(Error::BadFeatureWidth { got: 2, want: 1 })
        ));
        assert!(build_sparse(vec![(c(0, 0, 0, 0), vec![f32::NAN])], 4, 1, 1).is_err());
    }

    #[test]
    fn frame_slices() {
        let s = build_sparse(
            vec![
                (c(1, 0, 0, 1), vec![3.0]),
                (c(0, 1, 0, 0), vec![2.0]),
                (c(0, 0, 0, 0), vec![1.0]),
            ],
            2,
            2,
            1,
        )
        .unwrap();
        let f0 = s.frame_slice(0).unwrap();
        assert_eq!(f0.coords, vec![[0, 0, 0], [1, 0, 0]]);
        assert_eq!(f0.features, vec![1.0, 2.0]);
        assert_eq!(s.frame_slice(1).unwrap().len(), 1);
        assert!(matches!(s.frame_slice(2), Err(Error::FrameOutOfRange { .. })));
        let empty = build_sparse(vec![], 2, 3, 1).unwrap();
        assert!(empty.frame_slice(2).unwrap().is_empty());
    }

    #[test]
    fn iou_cases() {
        let mk = |cs: &[VoxelCoord4D]| {
            build_sparse(cs.iter().map(|&c| (c, vec![0.0])).collect(), 4, 2, 1).unwrap()
        };
        let a = mk(&[c(0, 0, 0, 0), c(0, 1, 0, 0), c(1, 0, 0, 0), c(1, 1, 1, 1)]);
        let b = mk(&[
            c(0, 0, 0, 0),
            c(0, 1, 0, 0),
            c(1, 0, 0, 0),
            c(1, 1, 1, 1),
            c(0, 3, 3, 3),
            c(0, 2, 3, 3),
            c(1, 2, 2, 2),
            c(1, 3, 2, 2),
        ]);
        assert_eq!(coords_iou(&a, &a).unwrap(), 1.0);
        // |A ∩ B| = 4, |A ∪ B| = 8.
        assert_eq!(coords_iou(&a, &b).unwrap(), 0.5);
        let d = mk(&[c(0, 3, 0, 0)]);
        assert_eq!(coords_iou(&a, &d).unwrap(), 0.0);
        assert_eq!(coords_iou(&mk(&[]), &mk(&[])).unwrap(), 1.0);
        let other = build_sparse(vec![], 8, 2, 1).unwrap();
        assert!(matches!(coords_iou(&a, &other), Err(Error::ShapeMismatch(_))));
    }

    fn random_tensor(rng: &mut SeedRng, n: u32, t: u32, count: usize) -> SparseSpacetimeTensor {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for _ in 0..count {
            let co = c(
                rng.below(t as usize) as u16,
                rng.below(n as usize) as u16,
                rng.below(n as usize) as u16,
                rng.below(n as usize) as u16,
            );
            if seen.insert(co) {
                entries.push((co, vec![rng.normal() as f32, 1.0]));
            }
        }
        build_sparse(entries, n, t, 2).unwrap()
    }

    #[test]
    fn frame_slices_partition_the_entries() {
        let mut rng = SeedRng::new(3);
        for _ in 0..20 {
            let s = random_tensor(&mut rng, 6, 5, 60);
            let total: usize = (0..5).map(|t| s.frame_slice(t).unwrap().len()).sum();
            assert_eq!(total, s.len());
            let mut rebuilt = Vec::new();
            for t in 0..5 {
                let f = s.frame_slice(t).unwrap();
                for (i, xyz) in f.coords.iter().enumerate() {
                    rebuilt.push((c(t as u16, xyz[0], xyz[1], xyz[2]), f.feature(i).to_vec()));
                }
            }
            let direct: Vec<_> = s.entries().map(|(c, f)| (c, f.to_vec())).collect();
            assert_eq!(rebuilt, direct);
        }
    }

    proptest! {
        #[test]
        fn builds_are_strictly_sorted(raw in proptest::collection::vec((0u16..3, 0u16..4, 0u16..4, 0u16..4), 0..40)) {
            let mut seen = HashSet::new();
            let entries: Vec<_> = raw
                .into_iter()
                .map(|(t, x, y, z)| c(t, x, y, z))
                .filter(|c| seen.insert(*c))
                .map(|c| (c, vec![c.x as f32]))
                .collect();
            let s = build_sparse(entries, 4, 3, 1).unwrap();
            for w in s.coords().windows(2) {
                prop_assert!(w[0] < w[1]);
            }
            for (co, f) in s.entries() {
                prop_assert_eq!(f[0], co.x as f32);
            }
        }
    }
}
