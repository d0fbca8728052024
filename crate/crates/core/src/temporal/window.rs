use std::ops::Range;

use crate::error::{Error, Result};

/// Frames per attention window and the shift of the first window boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalWindowConfig {
    window: u32,
    shift: u32,
}

impl TemporalWindowConfig {
    pub fn new(window: u32, shift: u32) -> Result<Self> {
        if window == 0 || shift >= window {
            return Err(Error::InvalidArgument(format!("window {window} with shift {shift}")));
        }
        Ok(TemporalWindowConfig { window, shift })
    }

    pub fn unshifted(window: u32) -> Result<Self> {
        Self::new(window, 0)
    }

    pub fn shifted(window: u32) -> Result<Self> {
        Self::new(window, window / 2)
    }

    /// Layer `i` of a stack: even layers unshifted, odd layers shifted.
    pub fn alternating(window: u32, layer: usize) -> Result<Self> {
        if layer % 2 == 0 {
            Self::unshifted(window)
        } else {
            Self::shifted(window)
        }
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    pub fn shift(&self) -> u32 {
        self.shift
    }
}

/// Splits `[0, frames)` into consecutive windows. A nonzero shift makes the
/// first window `[0, w − s)`; windows never wrap around.
pub fn partition_windows(frames: u32, cfg: TemporalWindowConfig) -> Vec<Range<u32>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut end = if cfg.shift == 0 { cfg.window } else { cfg.window - cfg.shift };
    while start < frames {
        let e = end.min(frames);
        out.push(start..e);
        start = e;
        end = e + cfg.window;
    }
    out
}
