//! Response traces: a participant's captured answer to one challenge, in
//! per-frame feature form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Channel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("trace has no frames")]
    Empty,
    #[error("frame {index}: {field} = {value} is out of range")]
    FrameOutOfRange {
        index: usize,
        field: &'static str,
        value: f64,
    },
    #[error("trace has {frames} frames but {fps} fps x {duration_s} s implies {expected}")]
    FrameCountMismatch {
        frames: usize,
        fps: f64,
        duration_s: f64,
        expected: u64,
    },
    #[error("invalid timing: fps {fps}, duration {duration_s} s")]
    InvalidTiming { fps: f64, duration_s: f64 },
}

/// Features extracted from one video frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameFeatures {
    /// Quality-metric output; 1 is perfectly realistic.
    pub realism: f64,
    pub yaw_deg: f64,
    pub expression_intensity: f64,
    pub occlusion_fraction: f64,
    pub luminance_shift: f64,
    pub n_faces: u32,
}

impl FrameFeatures {
    /// A neutral frontal frame with the given realism.
    pub fn neutral(realism: f64) -> Self {
        Self {
            realism,
            yaw_deg: 0.0,
            expression_intensity: 0.0,
            occlusion_fraction: 0.0,
            luminance_shift: 0.0,
            n_faces: 1,
        }
    }

    pub fn anomaly(&self) -> f64 {
        1.0 - self.realism
    }

    pub fn channel(&self, channel: Channel) -> Option<f64> {
        match channel {
            Channel::YawAngle => Some(self.yaw_deg),
            Channel::ExpressionIntensity => Some(self.expression_intensity),
            Channel::OcclusionFraction => Some(self.occlusion_fraction),
            Channel::LuminanceShift => Some(self.luminance_shift),
            Channel::None => None,
        }
    }

    fn validate(&self, index: usize) -> Result<(), TraceError> {
        let unit = |field: &'static str, value: f64, lo: f64| {
            if value.is_finite() && (lo..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(TraceError::FrameOutOfRange {
                    index,
                    field,
                    value,
                })
            }
        };
        unit("realism", self.realism, 0.0)?;
        unit("expression_intensity", self.expression_intensity, 0.0)?;
        unit("occlusion_fraction", self.occlusion_fraction, 0.0)?;
        unit("luminance_shift", self.luminance_shift, -1.0)?;
        if !self.yaw_deg.is_finite() {
            return Err(TraceError::FrameOutOfRange {
                index,
                field: "yaw_deg",
                value: self.yaw_deg,
            });
        }
        if self.n_faces == 0 {
            return Err(TraceError::FrameOutOfRange {
                index,
                field: "n_faces",
                value: 0.0,
            });
        }
        Ok(())
    }
}

/// Number of frames a capture of `duration_s` at `fps` holds.
pub fn frame_count(fps: f64, duration_s: f64) -> u64 {
    (fps * duration_s).round().max(0.0) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseTrace {
    pub challenge_id: String,
    pub frames: Vec<FrameFeatures>,
    pub nominal_fps: f64,
    pub duration_s: f64,
}

impl ResponseTrace {
    pub fn new(
        challenge_id: impl Into<String>,
        frames: Vec<FrameFeatures>,
        nominal_fps: f64,
        duration_s: f64,
    ) -> Result<Self, TraceError> {
        let trace = Self {
            challenge_id: challenge_id.into(),
            frames,
            nominal_fps,
            duration_s,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if !(self.nominal_fps.is_finite()
            && self.nominal_fps > 0.0
            && self.duration_s.is_finite()
            && self.duration_s > 0.0)
        {
            return Err(TraceError::InvalidTiming {
                fps: self.nominal_fps,
                duration_s: self.duration_s,
            });
        }
        if self.frames.is_empty() {
            return Err(TraceError::Empty);
        }
        let expected = frame_count(self.nominal_fps, self.duration_s);
        if self.frames.len() as u64 != expected {
            return Err(TraceError::FrameCountMismatch {
                frames: self.frames.len(),
                fps: self.nominal_fps,
                duration_s: self.duration_s,
                expected,
            });
        }
        for (i, f) in self.frames.iter().enumerate() {
            f.validate(i)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn realism(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().map(|f| f.realism)
    }

    /// Time of frame `index` relative to the start of capture.
    pub fn timestamp(&self, index: usize) -> f64 {
        index as f64 / self.nominal_fps
    }

    /// Keeps only the frames captured within the first `max_s` seconds.
    pub fn truncated(&self, max_s: f64) -> Self {
        if self.duration_s <= max_s {
            return self.clone();
        }
        let keep = frame_count(self.nominal_fps, max_s).max(1) as usize;
        let frames = self.frames[..keep.min(self.frames.len())].to_vec();
        Self {
            challenge_id: self.challenge_id.clone(),
            duration_s: frames.len() as f64 / self.nominal_fps,
            frames,
            nominal_fps: self.nominal_fps,
        }
    }
}
