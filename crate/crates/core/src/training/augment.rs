use crate::error::{Error, Result};
use crate::generative::ConditioningVideo;
use crate::rng::SeedRng;

/// Frame-length stages `(first step, frames)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgressiveSchedule {
    stages: Vec<(u64, usize)>,
}

impl ProgressiveSchedule {
    /// Thresholds and lengths must both increase strictly; the first
    /// threshold must be 0.
    pub fn new(stages: Vec<(u64, usize)>) -> Result<Self> {
        let ok = !stages.is_empty()
            && stages[0].0 == 0
            && stages.iter().all(|s| s.1 > 0)
            && stages.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1);
        if !ok {
            return Err(Error::InvalidArgument(format!("bad progressive schedule {stages:?}")));
        }
        Ok(ProgressiveSchedule { stages })
    }

    /// 8 → 16 → 32 frames at 0, 40% and 70% of `total_steps`.
    pub fn default_for(total_steps: u64) -> Result<Self> {
        Self::scaled(total_steps, 32)
    }

    /// `max/4 → max/2 → max` frames at 0, 40% and 70% of `total_steps`.
    /// Lengths are rounded down to even (at least 2) so temporal pooling
    /// stays valid; stages that would repeat a length or a threshold are dropped.
    pub fn scaled(total_steps: u64, max_frames: usize) -> Result<Self> {
        let mut stages: Vec<(u64, usize)> = Vec::new();
        for (at, len) in [(0, max_frames / 4), (total_steps * 2 / 5, max_frames / 2), (total_steps * 7 / 10, max_frames)] {
            let len = if max_frames >= 2 { (len & !1).max(2) } else { max_frames.max(1) };
            match stages.last() {
                Some(&(_, l)) if l >= len => continue,
                Some(&(s, _)) if s >= at => {
                    stages.pop();
                }
                _ => {}
            }
            if stages.is_empty() {
                stages.push((0, len));
            } else {
                stages.push((at, len));
            }
        }
        Self::new(stages)
    }

    /// A single stage of `frames` from step 0.
    pub fn constant(frames: usize) -> Result<Self> {
        Self::new(vec![(0, frames)])
    }

    pub fn stages(&self) -> &[(u64, usize)] {
        &self.stages
    }
}

/// Length of the last stage whose threshold is at or below `step`.
pub fn schedule_frames(schedule: &ProgressiveSchedule, step: u64) -> usize {
    schedule
        .stages
        .iter()
        .take_while(|(s, _)| *s <= step)
        .last()
        .map(|s| s.1)
        .unwrap_or(schedule.stages[0].1)
}

/// Black-rectangle augmentation of conditioning frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskAugmentConfig {
    pub probability: f64,
    /// Inclusive range of rectangles per masked frame.
    pub rects: (usize, usize),
    /// Range of each rectangle side as a fraction of the frame side.
    pub size: (f64, f64),
}

impl Default for MaskAugmentConfig {
    fn default() -> Self {
        MaskAugmentConfig {
            probability: 0.3,
            rects: (1, 3),
            size: (0.1, 0.4),
        }
    }
}

impl MaskAugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.probability)
            && self.rects.0 >= 1
            && self.rects.0 <= self.rects.1
            && self.size.0 > 0.0
            && self.size.0 <= self.size.1
            && self.size.1 <= 1.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("bad mask config {self:?}")));
        }
        Ok(())
    }

    /// Side length in pixels for fraction `f` of `side`.
    pub fn side_pixels(f: f64, side: usize) -> usize {
        ((f * side as f64).round() as usize).clamp(1, side)
    }
}

/// Per frame: with `probability`, paint `rects` black rectangles with sides
/// drawn uniformly from `size` (times the frame side) at uniform positions.
/// Embeddings are recomputed from the masked frames.
pub fn apply_masks(video: &ConditioningVideo, cfg: &MaskAugmentConfig, rng: &mut SeedRng) -> Result<ConditioningVideo> {
    cfg.validate()?;
    let mut frames = video.frames.clone();
    let mut changed = false;
    for img in frames.iter_mut() {
        if rng.uniform() >= cfg.probability {
            continue;
        }
        let k = cfg.rects.0 + rng.below(cfg.rects.1 - cfg.rects.0 + 1);
        for _ in 0..k {
            let w = MaskAugmentConfig::side_pixels(rng.uniform_in(cfg.size.0, cfg.size.1), img.width());
            let h = MaskAugmentConfig::side_pixels(rng.uniform_in(cfg.size.0, cfg.size.1), img.height());
            let x0 = rng.below(img.width() - w + 1);
            let y0 = rng.below(img.height() - h + 1);
            img.fill_rect(x0, y0, x0 + w, y0 + h, [0.0; 3]);
        }
        changed = true;
    }
    if !changed {
        return Ok(video.clone());
    }
    video.with_frames(frames)
}
