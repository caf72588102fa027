pub mod acquisition;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod optim;
pub mod par;
pub mod tasks;
pub mod verify;

pub use error::{Error, Result};
