//! Goldschmidt division with a reciprocal ROM seed, and a cycle-accurate
//! model of two hardware organisations for it: the replicated pipelined
//! datapath and the feedback datapath that reuses one multiplier pair
//! through a logic block.

pub mod datapath;
pub mod error;
pub mod fixedpoint;
pub mod goldschmidt;
pub mod harness;
pub mod recip_table;

pub use error::{Error, Result};
pub use fixedpoint::{ComplementMode, FixedValue, Rational};
