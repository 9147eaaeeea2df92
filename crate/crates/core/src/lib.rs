//! Probability-flow (Kim–Milman) transport maps for targets whose
//! Ornstein–Uhlenbeck-evolved scores are exactly computable, together with
//! estimators and explicit constants for Fisher-information stability bounds.

pub mod bounds;
pub mod error;
pub mod fisher;
pub mod flow;
pub mod harness;
pub mod linalg;
pub mod measures;
pub mod ou;
pub mod rng;

pub use error::{Error, Result};
pub use measures::TargetMeasure;
pub use rng::SamplerSeed;
