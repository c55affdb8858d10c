//! Non-neural comparison classifiers.

mod adaboost;
mod nnss;

pub use adaboost::{adaboost_predict, adaboost_train, AdaBoostModel, Stump, DEFAULT_ESTIMATORS};
pub use nnss::{nearest_neighbor, ss_classify_stream, ss_init, NnSsState};
