pub mod demos;
pub mod error;
pub mod est_design;
pub mod linsolve;
pub mod moments;
pub mod mor;
pub mod nonlinear;
pub mod sim;
pub mod ssc;
pub mod stab_design;
pub mod sysfile;
pub mod systems;

pub use error::{Error, Result};
