pub mod beltrami;
pub mod covcheck;
pub mod dyadic;
pub mod error;
pub mod events;
pub mod exact;
pub mod gmc;
pub mod grid;
pub mod homeo;
pub mod io;
pub mod quad;
pub mod rng;
pub mod stats;
pub mod walk;
pub mod welding;
pub mod whitenoise;

pub use error::{Error, Result};
