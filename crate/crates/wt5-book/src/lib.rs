//! Runs the guide's Rust snippets as doc-tests. mdbook cannot resolve
//! workspace dependencies when testing, so each chapter is included here
//! as the docs of an empty module and `cargo test --doc` does the rest.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}
#[doc = include_str!("../../../book/src/parsing.md")]
pub mod parsing {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/mixtures.md")]
pub mod mixtures {}
#[doc = include_str!("../../../book/src/toy-model.md")]
pub mod toy_model {}
#[doc = include_str!("../../../book/src/rating.md")]
pub mod rating {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
