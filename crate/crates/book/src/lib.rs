//! Compiles every chapter of the guide in `book/` as rustdoc so that
//! `cargo test` runs its snippets. One module per chapter keeps failures
//! traceable to a file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/measures.md")]
pub mod measures {}
#[doc = include_str!("../../../book/src/market.md")]
pub mod market {}
#[doc = include_str!("../../../book/src/characteristic.md")]
pub mod characteristic {}
#[doc = include_str!("../../../book/src/valuation.md")]
pub mod valuation {}
#[doc = include_str!("../../../book/src/mean_path_laplace.md")]
pub mod mean_path_laplace {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
