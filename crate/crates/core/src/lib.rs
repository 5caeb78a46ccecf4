//! Closed-loop environment curriculum simulator.
//!
//! Indoor scenes are scene graphs of rotated-rectangle furniture. Navigation
//! agents run in them, their trajectories are analyzed into structured
//! feedback, and a generator turns that feedback into single-object edits that
//! are applied with collision-aware placement.

pub mod analysis;
pub mod canon;
pub mod curriculum;
pub mod generator;
pub mod geometry;
pub mod llm;
pub mod navigation;
pub mod placement;
pub mod render;
pub mod scene;
