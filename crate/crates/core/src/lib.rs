//! Store-journey modeling: spatial codes, purchase localization, journey
//! text, a byte-level BPE tokenizer and a small transformer trained on it.

pub mod bpe;
pub mod codec;
pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod formats;
pub mod generator;
pub mod io;
pub mod layout;
pub mod nn;
pub mod purchase;
pub mod synthstore;
pub mod training;

pub use error::{Error, Result};
