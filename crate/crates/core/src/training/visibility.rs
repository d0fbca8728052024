use crate::error::{Error, Result};
use crate::sst::SparseFrame;

/// Viewing direction of an axis-aligned orthographic camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewAxis {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl ViewAxis {
    /// The ring order: four side views, then top-down and bottom-up.
    pub const RING: [ViewAxis; 6] = [ViewAxis::PosZ, ViewAxis::NegX, ViewAxis::NegZ, ViewAxis::PosX, ViewAxis::NegY, ViewAxis::PosY];

    pub fn direction(self) -> [f64; 3] {
        match self {
            ViewAxis::PosX => [1.0, 0.0, 0.0],
            ViewAxis::NegX => [-1.0, 0.0, 0.0],
            ViewAxis::PosY => [0.0, 1.0, 0.0],
            ViewAxis::NegY => [0.0, -1.0, 0.0],
            ViewAxis::PosZ => [0.0, 0.0, 1.0],
            ViewAxis::NegZ => [0.0, 0.0, -1.0],
        }
    }
}

/// Orthographic camera looking along one grid axis, one pixel per voxel column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyCamera {
    pub axis: ViewAxis,
    pub size: usize,
}

impl ToyCamera {
    /// The first `views` cameras of [`ViewAxis::RING`].
    pub fn ring(views: usize, size: usize) -> Result<Vec<ToyCamera>> {
        if views == 0 || views > ViewAxis::RING.len() {
            return Err(Error::InvalidArgument(format!("{views} views; 1 to 6 supported")));
        }
        Ok(ViewAxis::RING[..views].iter().map(|&axis| ToyCamera { axis, size }).collect())
    }

    /// Pixel `(u, v)` and depth along the view ray of voxel `xyz`.
    pub fn project(&self, xyz: [usize; 3]) -> (usize, usize, usize) {
        let m = self.size - 1;
        let [x, y, z] = xyz;
        match self.axis {
            ViewAxis::PosX => (z, y, x),
            ViewAxis::NegX => (m - z, y, m - x),
            ViewAxis::PosY => (x, z, y),
            ViewAxis::NegY => (x, m - z, m - y),
            ViewAxis::PosZ => (x, y, z),
            ViewAxis::NegZ => (m - x, y, m - z),
        }
    }

    /// Inverse of [`Self::project`].
    pub fn unproject(&self, u: usize, v: usize, depth: usize) -> [usize; 3] {
        let m = self.size - 1;
        match self.axis {
            ViewAxis::PosX => [depth, v, u],
            ViewAxis::NegX => [m - depth, v, m - u],
            ViewAxis::PosY => [u, depth, v],
            ViewAxis::NegY => [u, m - depth, m - v],
            ViewAxis::PosZ => [u, v, depth],
            ViewAxis::NegZ => [m - u, v, m - depth],
        }
    }
}

/// A dense `N³` occupancy frame, `x`-major like [`crate::sst::DenseOccupancySequence`].
#[derive(Debug, Clone, Copy)]
pub struct OccupancyFrame<'a> {
    pub resolution: usize,
    pub values: &'a [f32],
}

impl OccupancyFrame<'_> {
    pub fn occupied(&self, xyz: [usize; 3]) -> bool {
        let n = self.resolution;
        self.values[(xyz[0] * n + xyz[1]) * n + xyz[2]] >= 0.5
    }

    /// Occupied voxels in lexicographic order.
    pub fn active(&self) -> Vec<[usize; 3]> {
        let n = self.resolution;
        let mut out = Vec::new();
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    if self.occupied([x, y, z]) {
                        out.push([x, y, z]);
                    }
                }
            }
        }
        out
    }
}

/// Per-pixel features seen by one camera and the depth buffer they came
/// from; `None` where the ray hits nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub size: usize,
    pub channels: usize,
    pub pixels: Vec<Option<Vec<f32>>>,
    pub depth: Vec<Option<usize>>,
}

impl FeatureImage {
    pub fn get(&self, u: usize, v: usize) -> Option<&[f32]> {
        self.pixels[v * self.size + u].as_deref()
    }

    pub fn depth_at(&self, u: usize, v: usize) -> Option<usize> {
        self.depth[v * self.size + u]
    }
}

/// Depth of the first occupied voxel along each pixel's ray.
pub fn first_hits(frame: OccupancyFrame<'_>, cam: &ToyCamera) -> Result<Vec<Option<usize>>> {
    if cam.size != frame.resolution {
        return Err(Error::shape(format!("camera size {} for N = {}", cam.size, frame.resolution)));
    }
    let n = cam.size;
    let mut out = vec![None; n * n];
    for v in 0..n {
        for u in 0..n {
            out[v * n + u] = (0..n).find(|&d| frame.occupied(cam.unproject(u, v, d)));
        }
    }
    Ok(out)
}

/// What `cam` sees: at each pixel, the feature of the first occupied voxel.
pub fn render_feature_view(frame: OccupancyFrame<'_>, cam: &ToyCamera, channels: usize, feature: impl Fn([usize; 3]) -> Vec<f32>) -> Result<FeatureImage> {
    let depth = first_hits(frame, cam)?;
    let n = cam.size;
    let pixels = (0..n * n)
        .map(|i| depth[i].map(|d| feature(cam.unproject(i % n, i / n, d))))
        .collect();
    Ok(FeatureImage { size: n, channels, pixels, depth })
}

fn check_views(frame: OccupancyFrame<'_>, views: &[FeatureImage], cams: &[ToyCamera]) -> Result<usize> {
    if cams.is_empty() || views.len() != cams.len() {
        return Err(Error::InvalidArgument(format!("{} feature images for {} cameras", views.len(), cams.len())));
    }
    let channels = views[0].channels;
    for (v, c) in views.iter().zip(cams) {
        if v.size != frame.resolution || c.size != frame.resolution || v.channels != channels || v.depth.len() != v.size * v.size || v.pixels.len() != v.depth.len() {
            return Err(Error::shape("feature image does not match the occupancy grid".to_string()));
        }
    }
    Ok(channels)
}

fn aggregate(frame: OccupancyFrame<'_>, t: usize, views: &[FeatureImage], cams: &[ToyCamera], visible_only: bool) -> Result<SparseFrame> {
    let channels = check_views(frame, views, cams)?;
    let mut coords = Vec::new();
    let mut features = Vec::new();
    let mut acc = vec![0.0f64; channels];
    for xyz in frame.active() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        let mut count = 0;
        for (view, cam) in views.iter().zip(cams) {
            let (u, v, d) = cam.project(xyz);
            if visible_only && view.depth_at(u, v) != Some(d) {
                continue;
            }
            if let Some(f) = view.get(u, v) {
                for (a, x) in acc.iter_mut().zip(f) {
                    *a += *x as f64;
                }
                count += 1;
            }
        }
        if visible_only && count == 0 {
            continue;
        }
        coords.push([xyz[0] as u16, xyz[1] as u16, xyz[2] as u16]);
        let denom = count.max(1) as f64;
        features.extend(acc.iter().map(|a| (a / denom) as f32));
    }
    Ok(SparseFrame { t, coords, channels, features })
}

/// Averages each active voxel's projected features over the views whose depth
/// buffer puts it first along the ray; voxels seen by no view are dropped.
/// The depth buffers must come from `frame` (see [`render_feature_view`]).
pub fn visible_aggregate(frame: OccupancyFrame<'_>, t: usize, views: &[FeatureImage], cams: &[ToyCamera]) -> Result<SparseFrame> {
    aggregate(frame, t, views, cams, true)
}

/// Averages projected features over every view, occluded or not.
pub fn mean_aggregate(frame: OccupancyFrame<'_>, t: usize, views: &[FeatureImage], cams: &[ToyCamera]) -> Result<SparseFrame> {
    aggregate(frame, t, views, cams, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Visible,
    Mean,
}

impl Aggregation {
    pub fn run(self, frame: OccupancyFrame<'_>, t: usize, views: &[FeatureImage], cams: &[ToyCamera]) -> Result<SparseFrame> {
        match self {
            Aggregation::Visible => visible_aggregate(frame, t, views, cams),
            Aggregation::Mean => mean_aggregate(frame, t, views, cams),
        }
    }
}
