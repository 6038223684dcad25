pub mod dmap;
pub mod error;
pub mod io;
pub mod model;
pub mod qbd;
pub mod region;
pub mod sim;

pub use error::{Error, Result};
