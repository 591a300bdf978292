//! Batch-efficient ODE-RNN for irregularly sampled time series.
//!
//! The crate carries its own small reverse-mode autodiff ([`autodiff`]),
//! forward-Euler evolvers with per-row step sizes ([`evolver`]), the
//! ODE-RNN, combined-time and simple-RNN models ([`models`]), synthetic and
//! file datasets ([`data`]), an Adam training loop ([`training`]) and
//! experiment reports ([`experiment`]).
//!
//! ```
//! use odernn::{EvolverConfig, Model, ModelKind, TimeSeriesBatch, IrregularSeries};
//!
//! let s = IrregularSeries {
//!     times: vec![0.0, 0.4, 1.3],
//!     values: vec![vec![0.1], vec![0.7], vec![-0.2]],
//!     target: None,
//! };
//! let batch = TimeSeriesBatch::from_series(&[&s]).unwrap();
//! let kind = ModelKind::Odernn { evolver: EvolverConfig::FixedDt { step_size: 0.1 } };
//! let model = Model::new(kind, 1, 1, 10, 0).unwrap();
//! let pred = model.predict(&batch).unwrap();
//! assert_eq!(pred.shape(), (1, 1));
//! ```

pub mod autodiff;
pub mod data;
mod error;
pub mod evolver;
pub mod experiment;
mod init;
pub mod models;
#[cfg(any(test, feature = "testing"))]
pub mod testing;
pub mod training;

pub use autodiff::{Matrix, NodeId, ParamId, ParamSet, Tape};
pub use data::{generate_sine_dataset, read_dataset, split_dataset, write_dataset, DatasetSplit, IrregularSeries, SineDatasetConfig};
pub use error::{Error, Result};
pub use evolver::{evolve, geometric_step_count, Dynamics, DynamicsNet, EvolverConfig, EvolverMode, StepSchedule};
pub use experiment::{run_experiment, DatasetSource, ExperimentConfig, RunReport, RunStatus};
pub use models::{combined_time_forward, odernn_forward, simple_rnn_forward, Model, ModelKind, TimeSeriesBatch};
pub use training::{mse_loss, train, Adam, EpochRecord, TrainConfig, TrainOutcome};
