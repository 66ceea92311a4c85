//! EVM bytecode vulnerability scanner: disassembly, hex-token vocabulary,
//! sliding windows, a from-scratch transformer classifier with an LSTM
//! baseline, training and evaluation, and corpus tooling.
//!
//! The guide in `book/` walks through each stage; its code blocks are
//! compiled as doc-tests of this crate.

pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod disasm;
pub mod error;
pub mod model;
pub mod tensor;
pub mod tokenizer;
pub mod training;
pub mod window;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/bytecode.md")]
    struct Bytecode;
    #[doc = include_str!("../../../book/src/windows.md")]
    struct Windows;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    struct Autodiff;
    #[doc = include_str!("../../../book/src/models.md")]
    struct Models;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/corpus.md")]
    struct Corpus;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
