pub mod coda;
pub mod error;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod mcd;
pub mod model;
pub mod robust;
pub mod sim;

pub use error::{Error, Result};
