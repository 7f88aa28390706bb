//! Detection-event wire format, prediction lines and latency metrics.

mod driver;
mod format;
mod metrics;

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use driver::{decode_stream, DriveError};
pub use format::{
    decode_frame, encode_frame, FrameEvent, FrameReader, FrameWriter, StreamHeader, FORMAT_VERSION, HEADER_BYTES, MAGIC,
};
pub use metrics::{
    median, quantile, BacklogAlarm, BacklogMonitor, LatencyRecord, MetricRecord, MetricsSink, ShotLatency,
    TimingBudget, TimingReport,
};

use crate::model::ObservableMask;
use crate::parallel::Prediction;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("bad magic: not a detection-event stream")]
    BadMagic,
    #[error("unsupported stream version {0}")]
    UnsupportedVersion(u16),
    #[error("header declares zero detectors per cycle")]
    NoDetectors,
    #[error("truncated frame at byte offset {offset}")]
    TruncatedFrame { offset: u64 },
    #[error("terminator inside bounded shot at byte offset {offset}")]
    TerminatorInBoundedShot { offset: u64 },
    #[error("padding bits set in frame at byte offset {offset}")]
    PaddingBits { offset: u64 },
    #[error("invalid guard byte {byte:#04x} at byte offset {offset}")]
    BadGuard { offset: u64, byte: u8 },
    #[error("terminator with no cycles at byte offset {offset}")]
    EmptyShot { offset: u64 },
    #[error("stream ended at byte offset {offset} after {cycles} of {expected} cycles")]
    ShortShot { offset: u64, cycles: u64, expected: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub shot: u64,
    pub observables: String,
    pub heralded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_of_shot_latency_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_software_median_us: Option<f64>,
}

impl PredictionLine {
    pub fn new(prediction: &Prediction, latency: Option<&ShotLatency>) -> Self {
        PredictionLine {
            shot: prediction.shot_index,
            observables: format!("{:#x}", prediction.observables),
            heralded: prediction.heralded,
            end_of_shot_latency_us: latency.map(|l| l.end_of_shot_latency_ns as f64 / 1e3),
            t_software_median_us: latency.map(|l| l.t_software_median_ns as f64 / 1e3),
        }
    }

    pub fn mask(&self) -> Option<ObservableMask> {
        parse_mask(&self.observables)
    }
}

/// Parses a `0x`-prefixed hex mask.
pub fn parse_mask(s: &str) -> Option<ObservableMask> {
    let hex = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X"))?;
    ObservableMask::from_str_radix(hex, 16).ok()
}

/// Formats a prediction as one JSON line, without the trailing newline.
pub fn emit_prediction(prediction: &Prediction, latency: Option<&ShotLatency>) -> String {
    serde_json::to_string(&PredictionLine::new(prediction, latency)).expect("prediction serializes")
}
