//! Fault-injection laboratory for CRT-RSA countermeasures.

pub mod circuit;
pub mod cli;
pub mod countermeasures;
pub mod faultengine;
pub mod keytools;
pub mod modmath;
pub mod transforms;
