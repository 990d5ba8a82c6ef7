pub mod engine;
pub mod error;
pub mod geometry;
pub mod ingest;
pub mod mask;
pub mod memory;
pub mod objects;
pub mod places;
pub mod protocol;
pub mod regions;
pub mod synth;

pub use engine::{EngineConfig, SceneGraph};
pub use error::{Error, Result};
