#![doc = include_str!("../../../book/src/introduction.md")]

pub use sjde_cli as cli;

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/posterior.md")]
pub mod posterior {}

#[doc = include_str!("../../../book/src/policy.md")]
pub mod policy {}

#[doc = include_str!("../../../book/src/stopping.md")]
pub mod stopping {}

#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}

#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli_chapter {}
