//! Trace synthesis, passive transforms and the feed-overload frame-rate model.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::profile::{PassiveTransform, PipelineProfile, TransformKind};
use super::SimError;
use crate::catalog::{Challenge, Channel, Mode};
use crate::seed;
use crate::session::{Response, ResponseSource};
use crate::trace::{frame_count, FrameFeatures, ResponseTrace};

/// Overshoot of the compliance ramp past the required sweep.
const RAMP_OVERSHOOT: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureConfig {
    pub fps: f64,
    pub duration_s: f64,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            duration_s: 5.0,
        }
    }
}

/// Frame rate a pipeline sustains while tracking `n_faces` faces.
/// `n_faces` of 0 is treated as 1.
pub fn fps_under_load(n_faces: u32, profile: &PipelineProfile) -> f64 {
    profile
        .fps_max
        .min(profile.fps_capacity / f64::from(n_faces.max(1)))
}

fn channel_baseline(channel: Channel) -> f64 {
    match channel {
        Channel::ExpressionIntensity => 0.1,
        _ => 0.0,
    }
}

fn channel_max(channel: Channel) -> f64 {
    match channel {
        Channel::YawAngle => 90.0,
        _ => 1.0,
    }
}

fn set_channel(frame: &mut FrameFeatures, channel: Channel, value: f64) {
    match channel {
        Channel::YawAngle => frame.yaw_deg = value,
        Channel::ExpressionIntensity => frame.expression_intensity = value,
        Channel::OcclusionFraction => frame.occlusion_fraction = value,
        Channel::LuminanceShift => frame.luminance_shift = value,
        Channel::None => {}
    }
}

/// One simulated response to `challenge`.
///
/// Per-frame realism is drawn from the profile's normal distribution and
/// clamped to `[0, 1]`. With probability `compliance_prob` the compliance
/// channel ramps linearly past the required sweep inside the challenge's
/// window and then holds; otherwise it stays flat.
pub fn synthesize_response(
    profile: &PipelineProfile,
    challenge: &Challenge,
    capture: &CaptureConfig,
    rng_seed: u64,
) -> Result<ResponseTrace, SimError> {
    let behavior = profile.behavior(&challenge.id)?;
    let fps = capture.fps.min(fps_under_load(1, profile));
    let n = frame_count(fps, capture.duration_s) as usize;
    if !(fps > 0.0 && n >= 1) {
        return Err(SimError::InvalidCapture(format!(
            "{fps} fps over {} s yields no frames",
            capture.duration_s
        )));
    }
    let mut rng = seed::rng(rng_seed);
    let noise = Normal::new(behavior.realism_mean, behavior.realism_std)
        .map_err(|e| SimError::InvalidCapture(e.to_string()))?;
    let complies = rng.random::<f64>() < behavior.compliance_prob;

    let spec = &challenge.compliance;
    let base = channel_baseline(spec.channel);
    let peak = (base + RAMP_OVERSHOOT * spec.min_delta).min(channel_max(spec.channel));
    let ramp = ((spec.within_s * fps + 1e-9).floor() as usize).min(n - 1);

    let frames = (0..n)
        .map(|i| {
            let mut f = FrameFeatures::neutral(noise.sample(&mut rng).clamp(0.0, 1.0));
            let value = if complies && ramp > 0 {
                base + (peak - base) * (i.min(ramp) as f64 / ramp as f64)
            } else {
                base
            };
            set_channel(&mut f, spec.channel, value);
            f
        })
        .collect();
    Ok(ResponseTrace::new(
        challenge.id.clone(),
        frames,
        fps,
        capture.duration_s,
    )?)
}

/// Applies a passive challenge's transform to a captured trace.
///
/// Manipulated feeds lose `degradation_delta` realism on every frame; a
/// genuine feed is left as captured. Feed duplication also adds faces to
/// every frame and drops the frame rate to what the pipeline sustains under
/// that load, keeping every k-th frame.
pub fn apply_passive(
    trace: &ResponseTrace,
    transform: &PassiveTransform,
    profile: &PipelineProfile,
) -> ResponseTrace {
    let delta = if profile.name.is_fake() {
        transform.degradation_delta
    } else {
        0.0
    };
    let mut out = trace.clone();
    for f in &mut out.frames {
        f.realism = (f.realism - delta).max(0.0);
    }
    if let TransformKind::FeedDuplication { extra_faces } = transform.kind {
        for f in &mut out.frames {
            f.n_faces = f.n_faces.saturating_add(extra_faces);
        }
        let faces = out.frames[0].n_faces;
        let fps = fps_under_load(faces, profile).min(trace.nominal_fps);
        let n = (frame_count(fps, trace.duration_s) as usize).max(1);
        let old = out.frames.len();
        out.frames = (0..n).map(|i| out.frames[i * old / n]).collect();
        out.nominal_fps = fps;
        out.duration_s = n as f64 / fps;
    }
    out
}

/// A seeded stand-in for a call participant driven by a profile.
#[derive(Debug, Clone)]
pub struct SimulatedParticipant {
    id: String,
    profile: PipelineProfile,
    capture: CaptureConfig,
    seed: u64,
}

impl SimulatedParticipant {
    pub fn new(
        id: impl Into<String>,
        profile: PipelineProfile,
        capture: CaptureConfig,
        seed: u64,
    ) -> Self {
        Self {
            id: id.into(),
            profile,
            capture,
            seed,
        }
    }

    pub fn profile(&self) -> &PipelineProfile {
        &self.profile
    }

    /// The trace this participant produces for `challenge` on attempt `attempt`.
    pub fn trace(
        &self,
        challenge: &Challenge,
        attempt: u32,
        timeout_s: f64,
    ) -> Result<ResponseTrace, SimError> {
        let capture = CaptureConfig {
            fps: self.capture.fps,
            duration_s: self.capture.duration_s.min(timeout_s),
        };
        let seed = seed::derive(self.seed, &challenge.id, u64::from(attempt));
        let trace = synthesize_response(&self.profile, challenge, &capture, seed)?;
        Ok(match (challenge.mode, self.profile.passive.get(&challenge.id)) {
            (Mode::Passive, Some(t)) => apply_passive(&trace, t, &self.profile),
            _ => trace,
        })
    }
}

impl ResponseSource for SimulatedParticipant {
    fn participant_id(&self) -> &str {
        &self.id
    }

    /// Challenges the profile does not cover are answered with a timeout.
    fn respond(&mut self, challenge: &Challenge, attempt: u32, timeout_s: f64) -> Response {
        match self.trace(challenge, attempt, timeout_s) {
            Ok(t) => Response::Trace(t),
            Err(_) => Response::Timeout,
        }
    }
}
