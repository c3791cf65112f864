//! Checks shared by the unit-style suites and the acceptance runner.
#![allow(dead_code)]

pub mod gp;
pub mod grad;
pub mod kernel;
