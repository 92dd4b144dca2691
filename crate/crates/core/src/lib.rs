#![no_std]
extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod closed_form;
pub mod conic;
pub mod error;
pub mod hybrid;
pub mod linalg;
pub mod sampling;
pub mod spin;
pub mod stats;

pub use error::{Error, Result};
