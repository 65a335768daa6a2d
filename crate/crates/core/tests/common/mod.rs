#![allow(dead_code)]

pub mod coverage;
pub mod forward;
pub mod search;
