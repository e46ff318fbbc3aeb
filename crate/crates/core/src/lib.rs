pub mod blocks;
pub mod caustic;
pub mod error;
pub mod infinity;
pub mod levelt;
pub mod linalg;
pub mod monodromy;
pub mod flow;
pub mod ode;
pub mod pfaffian;
pub mod showcase;
pub mod tolerances;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/systems.md")]
    mod systems {}
    #[doc = include_str!("../../../book/src/flows.md")]
    mod flows {}
    #[doc = include_str!("../../../book/src/local-data.md")]
    mod local_data {}
    #[doc = include_str!("../../../book/src/monodromy.md")]
    mod monodromy {}
    #[doc = include_str!("../../../book/src/showcase.md")]
    mod showcase {}
    #[doc = include_str!("../../../book/src/caustic.md")]
    mod caustic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
