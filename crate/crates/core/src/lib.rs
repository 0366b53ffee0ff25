pub mod equivalence;
pub mod error;
pub mod io;
pub mod linalg;
pub mod models;
pub mod ridge;
pub mod spatial;
pub mod two_step;

pub use error::{Error, Result};
pub use linalg::Tolerances;

// Book chapters compile and run as doctests of this crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/hat_operators.md")]
    mod hat_operators {}
    #[doc = include_str!("../../../book/src/criteria.md")]
    mod criteria {}
    #[doc = include_str!("../../../book/src/structured_models.md")]
    mod structured_models {}
    #[doc = include_str!("../../../book/src/spatial_weights.md")]
    mod spatial_weights {}
    #[doc = include_str!("../../../book/src/two_step.md")]
    mod two_step {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
