//! Weighted resolvent estimates, Gevrey cutoffs and local energy decay on
//! radial grids.

pub mod error;
pub mod gevrey;
pub mod kernel;
pub mod linalg;
pub mod operator;
pub mod par;
pub mod quad;
pub mod special;
pub mod tridiag;
pub mod wave;

pub use error::{Error, Result};
pub use par::Exec;
