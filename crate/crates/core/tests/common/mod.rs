#![allow(dead_code)]

pub mod alg1;
pub mod bench;
pub mod grad;
pub mod protocol;
pub mod trivial;
