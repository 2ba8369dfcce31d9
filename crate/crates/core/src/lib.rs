//! Multi-user OFDM pilot pattern design for channel extrapolation.

pub mod ambiguity;
pub mod error;
pub mod optimizer;
pub mod receiver;
pub mod resolution;
pub mod simulation;
pub mod waveform;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/waveform.md")]
    mod waveform {}
    #[doc = include_str!("../../../book/src/sidelobes.md")]
    mod sidelobes {}
    #[doc = include_str!("../../../book/src/resolution.md")]
    mod resolution {}
    #[doc = include_str!("../../../book/src/optimizer.md")]
    mod optimizer {}
    #[doc = include_str!("../../../book/src/receiver.md")]
    mod receiver {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
