//! Independent reference implementations shared by the integration tests
//! and the acceptance runner.
#![allow(dead_code)]

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

pub mod edits;
pub mod flmi;
pub mod nets;
pub mod rules;
pub mod stats;
