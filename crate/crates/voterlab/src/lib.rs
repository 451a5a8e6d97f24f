//! Finite multi-type voter models with mutation, their coalescing duals, and
//! the measure-valued limit objects used to study them.
//!
//! The crate is organised around one simulation pipeline: build a jump kernel
//! on a finite site set ([`kernel`]), attach a metric space of types and a
//! mutation measure ([`typespace`]), realise the voter dynamics through a
//! graphical construction with an exact pathwise dual ([`graphical`]), and
//! compare empirical type measures ([`measures`]) against coalescent and
//! Fleming-Viot references ([`coalescent`], [`fvref`]).  Generator algebra for
//! test functions of the empirical measure lives in [`generators`].

pub mod coalescent;
pub mod error;
pub mod fvref;
pub mod generators;
pub mod graphical;
pub mod kernel;
pub mod measures;
pub mod typespace;

mod linalg;
pub mod rng;
pub mod stats;

pub use error::Error;

/// Site-indexed assignment of type indices, the state of the voter model.
pub type Configuration = Vec<u32>;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
