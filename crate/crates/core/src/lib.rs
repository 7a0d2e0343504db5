//! Distributed model-predictive control for low-voltage microgrids.

pub mod coordinator;
pub mod devices;
pub mod lp;
pub mod mpc;
pub mod plant;
pub mod powerflow;
pub mod profile;
pub mod scenario;
pub mod transport;

/// The guide's chapters, so that `cargo test` runs their code blocks.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/lp.md")]
    mod lp {}
    #[doc = include_str!("../../../book/src/mpc.md")]
    mod mpc {}
    #[doc = include_str!("../../../book/src/coordination.md")]
    mod coordination {}
    #[doc = include_str!("../../../book/src/closed-loop.md")]
    mod closed_loop {}
    #[doc = include_str!("../../../book/src/power-flow.md")]
    mod power_flow {}
    #[doc = include_str!("../../../book/src/distributed.md")]
    mod distributed {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
