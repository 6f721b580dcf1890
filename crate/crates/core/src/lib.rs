//! Challenge-response verification for live video participants.
//!
//! The engine issues a context-aware cascade of challenges, verifies that the
//! participant performed each one, grades the captured response with a
//! likelihood-ratio test on per-frame realism, and accumulates the graded
//! evidence into a session verdict. The [`simulation`] module supplies
//! seeded stand-ins for genuine participants and real-time deepfake pipelines.

pub mod api;
pub mod cascade;
pub mod catalog;
pub mod grader;
pub mod metrics;
pub mod seed;
pub mod session;
pub mod simulation;
pub mod trace;
