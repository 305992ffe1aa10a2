//! Wasserstein compression of input/output datasets and distributionally
//! robust data-enabled predictive control.

pub mod compress;
pub mod deepc;
pub mod error;
pub mod hankel;
pub mod harness;
pub mod linalg;
pub mod lp;
pub mod system;
pub mod transport;

pub use error::{Error, Result};
