//! Residual coding toolkit: integer transforms, quantization, trellis search
//! and context-adaptive multi-symbol entropy coding for AV2-style transform
//! blocks.

pub mod block_codec;
pub mod chroma_xform;
pub mod coeff_coding;
pub mod entropy_core;
pub mod error;
pub mod lossless_tools;
pub mod primary_xform;
pub mod quantizer;
pub mod secondary_xform;
pub mod trellis_quant;
pub mod tx_signaling;
pub mod types;

pub use error::{Error, Result};
pub use types::{Block, IntraMode, Plane, Prediction};
