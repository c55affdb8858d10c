//! Few-shot domain adaptation for multivariate sensor time series.
//!
//! The source domain is clustered with a diagonal Gaussian mixture, one small
//! LSTM expert is trained per cluster, a handful of labelled target windows
//! (four per class) are routed to the expert that explains them best, the
//! experts are retrained with those windows, and a softmax-regression gate
//! learns to send unseen target windows to the right expert.
//!
//! Modules:
//! - [`ingest`]: CSV loading, column harmonisation, z-scoring, windowing, few-shot splits.
//! - [`gmm`]: diagonal-covariance Gaussian mixture fitted by EM.
//! - [`nets`]: hand-differentiated LSTM, MLP and softmax regression, Adam, gradient checking.
//! - [`baselines`]: SAMME AdaBoost over stumps and the self-growing 1-NN classifier.
//! - [`pipeline`]: the clustered-expert model, its staged objectives and run selection.
//! - [`bench`]: experiment runner, synthetic two-domain generator, accuracy and reports.

pub mod baselines;
pub mod bench;
mod error;
pub mod gmm;
pub mod ingest;
pub mod nets;
pub mod pipeline;
pub mod seed;
mod serde_inf;

pub use error::{Error, Result};
pub use ingest::{Class, N_CLASSES};
