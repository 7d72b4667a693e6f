//! Deterministic headless playroom simulator: seeded scenes, a child and a
//! parent agent, scripted teacher lessons with grounded speech, evaluation
//! tasks, ray-cast observations and a replayable wire protocol.

pub mod agents;
pub mod catalog;
pub mod events;
pub mod geometry;
pub mod hash;
pub mod kinetics;
pub mod language;
pub mod lessons;
pub mod protocol;
pub mod rng;
pub mod sensors;
pub mod tasks;
pub mod world;
