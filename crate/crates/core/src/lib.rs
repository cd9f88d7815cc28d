pub mod analysis;
pub mod error;
pub mod experiment;
pub mod io;
pub mod numkit;
pub mod policy;
pub mod reward;
pub mod scenegen;
pub mod seed;
pub mod tasks;
pub mod taskvec;

pub use error::{Error, Result};
