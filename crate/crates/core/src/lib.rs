pub mod error;
pub mod grammar;
pub mod harness;
pub mod learn;
pub mod paff;
pub mod policy;
pub mod relabeler;
pub mod util;
pub mod world;

pub use error::{Error, Result};
