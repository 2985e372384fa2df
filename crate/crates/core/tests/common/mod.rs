#![allow(dead_code)]

pub mod gradops;
pub mod propagation;
pub mod shapley;
