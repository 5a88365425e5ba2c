pub mod baselines;
pub mod datagen;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod format;
pub mod linalg;
pub mod memory;
pub mod model;
pub mod numfmt;
pub mod rng;
pub mod series;
pub mod trainer;
