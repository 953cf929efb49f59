//! End-to-end training: configuration, the learner, the interaction loop,
//! evaluation, metrics, checkpoints and plots.

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod metrics;
pub mod plot;
pub mod train;

pub use agent::{Agent, Scalar};
pub use checkpoint::Snapshot;
pub use config::{Algorithm, TrainConfig};
pub use evaluate::{evaluate, random_policy_baseline, EvalResult};
pub use metrics::{MetricsRow, HEADER};
pub use plot::export_curves;
pub use train::{train, TrainSummary, Trainer};
