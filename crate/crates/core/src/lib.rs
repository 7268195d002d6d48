pub mod critvals;
pub mod error;
pub mod linalg;
pub mod longrun;
pub mod monitor;
pub mod netsim;
pub mod offline;
pub mod online;
pub mod timeseries;
pub mod trend;

pub use error::{Error, Result};
