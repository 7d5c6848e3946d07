//! Training, evaluation and reenactment of the head avatar.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod train;

pub use config::{Config, TranslatorMode};
pub use data::{FrameData, TrainingData};
pub use error::{Error, Result};
pub use model::{Avatar, Gamma};
pub use train::{LossRecord, Trainer};
