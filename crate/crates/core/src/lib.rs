//! Iteratively coupled transmission and distribution power flow.
//!
//! The transmission system is solved in sequence components (three-sequence
//! power flow), each distribution feeder in phase coordinates with a
//! backward/forward sweep, and the two exchange PCC voltages and powers until
//! the boundary settles. A time-series driver adds economic dispatch at a
//! slower cadence than the load flow.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cosim;
pub mod dsolve;
pub mod ed;
pub mod io;
pub mod netmodel;
pub mod seqxform;
pub mod tsolve;

pub use num_complex::Complex64;
