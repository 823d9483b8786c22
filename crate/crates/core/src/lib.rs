//! Acoustic escalation detection.
//!
//! The pipeline runs voice activity detection, extracts MFCC or log-mel
//! filterbank features, passes them through a small residual network with a
//! global-average-pooling bottleneck, and classifies the pooled embeddings
//! with a one-vs-rest linear SVM. Systems can be fused early (embedding
//! concatenation or mean) or late (majority vote), and everything is scored
//! by unweighted average recall.

pub mod dataset_io;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod fusion;
pub mod metrics;
pub mod pipeline;
pub mod svm;
pub mod tinynet;
pub mod vad;

pub use error::{Error, Result};
