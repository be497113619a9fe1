//! Binary arithmetic coding of integer latents.

pub mod arith;
pub mod symbol;

pub use arith::{Decoder, Encoder};
pub use symbol::{decode_symbol, derive_range, encode_symbol, SymbolRange};
