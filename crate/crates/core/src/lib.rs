//! Optimal individual attacks on BB84 when the two preparation bases are not
//! conjugate: probe-metric model, Helström evaluation, a constrained
//! multi-start optimizer, and an independent state-vector oracle.

pub mod alignment;
pub mod error;
pub mod helstrom;
pub mod infotheory;
pub mod optimizer;
pub mod oracle;
pub mod probe;
pub mod table;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/misalignment.md")]
    mod misalignment {}
    #[doc = include_str!("../../../book/src/probe-metric.md")]
    mod probe_metric {}
    #[doc = include_str!("../../../book/src/helstrom.md")]
    mod helstrom {}
    #[doc = include_str!("../../../book/src/optimization.md")]
    mod optimization {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
