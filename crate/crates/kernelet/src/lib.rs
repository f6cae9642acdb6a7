//! Desk-scale laboratory for concurrent GPU-kernel co-scheduling.
//!
//! The crate models a streaming multiprocessor as a Markov chain over
//! idle-warp counts, predicts per-kernel IPC and the co-scheduling profit
//! of kernel pairs, prunes unprofitable pairs by resource-utilization
//! dissimilarity, slices kernels via index rectification of a PTX-like IR,
//! and compares scheduling policies against a stochastic simulation
//! oracle.
//!
//! Entry points:
//! - [`kernel`]: kernel descriptors, SM configurations, occupancy.
//! - [`markov`]: chain construction, steady states, IPC, balanced splits.
//! - [`slicer`]: PTX-lite parsing, index rectification, interpretation.
//! - [`scheduler`]: pruning, co-schedule selection, the scheduling loop.
//! - [`sim`]: stochastic chain simulation and schedule execution.
//! - [`harness`]: synthetic workloads and policy comparison.

pub mod error;
pub mod harness;
pub mod kernel;
pub mod markov;
pub mod scheduler;
pub mod sim;
pub mod slicer;

pub use error::{Error, Result};
