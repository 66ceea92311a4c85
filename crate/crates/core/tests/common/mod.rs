#![allow(dead_code)]

pub mod dd;
pub mod gradient;
pub mod reference;
