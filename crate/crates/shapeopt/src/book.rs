//! Runs every code block in the guide as a doc-test, keeping the book in
//! sync with the library. Only compiled when rustdoc collects doc-tests.
#![cfg(doctest)]

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/meshes.md")]
pub mod meshes {}
#[doc = include_str!("../../../book/src/poisson.md")]
pub mod poisson {}
#[doc = include_str!("../../../book/src/shape-calculus.md")]
pub mod shape_calculus {}
#[doc = include_str!("../../../book/src/stationarity.md")]
pub mod stationarity {}
#[doc = include_str!("../../../book/src/reconstruction.md")]
pub mod reconstruction {}
#[doc = include_str!("../../../book/src/descent.md")]
pub mod descent {}
#[doc = include_str!("../../../book/src/benchmarks.md")]
pub mod benchmarks {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
