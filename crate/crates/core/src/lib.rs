//! Optimization of line-to-stream assignments for sequentially read event data.
//!
//! Events are selected by *lines*; lines are grouped into *modules* that must
//! stay together; modules are assigned to output *streams*. A user job reading
//! one line's events has to scan the whole stream containing it, so the total
//! read cost is the sum over streams of `lines in stream × events in stream`.
//!
//! The crate provides:
//!
//! * [`model`]: the dataset types (event/line incidence, line catalog, module
//!   folding, hard schemes) and their validation.
//! * [`cost`]: the discrete read-cost and storage models on hard schemes.
//! * [`relax`]: the softmax-relaxed differentiable surrogate and its analytic
//!   gradient.
//! * [`optimize`]: multi-restart AdaMax descent on the surrogate, rounding and
//!   stream-count sweeps.
//! * [`oracle`]: exhaustive enumeration over set partitions and a Monte-Carlo
//!   check of the prescale expectations.
//! * [`calibrate`]: least-squares calibration of model terms against external
//!   measurements and the initialization-corrected measured read cost.

pub mod calibrate;
pub mod cost;
pub mod error;
pub mod model;
pub mod numeric;
pub mod optimize;
pub mod oracle;
pub mod relax;

pub use error::{Error, Result};
pub use model::{
    fold_modules, validate_dataset, Dataset, EventLineIncidence, LineCatalog, LineRecord,
    ModuleIncidence, Scheme, ValidationReport, Violation,
};
