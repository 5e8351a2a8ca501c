//! Learning conversion-rate models from delayed feedback.

pub mod criteo;
pub mod data;
pub mod dfm;
pub mod error;
pub mod eventlog;
pub mod fsiw;
pub mod harness;
pub mod model;
pub mod optim;
pub mod metrics;
pub mod risk;
pub mod synthetic;

pub use data::{BiasedExample, ClassPriors, ClickEvent, FeatureVector, Label, OracleExample, Snapshot, SnapshotConfig};
pub use error::{DflError, Result};
pub use model::{LinearModel, Prediction};
pub use optim::{Method, NnMode, TrainConfig, TrainData};
