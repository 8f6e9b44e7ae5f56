//! Modeling of memory reads at symbolic addresses for dynamic symbolic
//! execution.

pub mod bv;
pub mod expr;
pub mod smtlib;
pub mod bench;
pub mod bounds;
pub mod memmodel;
pub mod microexec;
