use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::metrics::cap_psnr;

/// One row of a metric report. Every key is always present; quantities not
/// measured by a run are `null`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    /// dB, capped at [`super::PSNR_CAP`].
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    /// Scaled mean L1 between adjacent frames.
    pub flicker: Option<f64>,
    pub iou: Option<f64>,
    /// Objects per second.
    pub encode_speed: Option<f64>,
    /// Mean active-voxel count per object.
    pub avg_length: Option<f64>,
}

impl MetricReport {
    pub fn new(label: impl Into<String>) -> Self {
        MetricReport { label: label.into(), ..Default::default() }
    }

    pub fn with_psnr(mut self, v: f64) -> Self {
        self.psnr = Some(cap_psnr(v));
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.psnr, self.ssim, self.flicker, self.iou, self.encode_speed, self.avg_length];
        if fields.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite metric in {self:?}")));
        }
        if self.flicker.is_some_and(|f| f < 0.0) || self.iou.is_some_and(|v| !(0.0..=1.0).contains(&v)) || self.ssim.is_some_and(|v| !(-1.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument(format!("metric out of range in {self:?}")));
        }
        Ok(())
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl(reports: &[MetricReport], mut out: impl Write) -> Result<()> {
    for r in reports {
        r.validate()?;
        let line = serde_json::to_string(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<MetricReport>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format("metric report", e.to_string())))
        .collect()
}
