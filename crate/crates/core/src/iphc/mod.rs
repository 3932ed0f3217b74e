//! IPHC-style TCP/IP header compression.
//!
//! The first packet of every flow travels as a FULL_HEADER that installs a
//! context under a one-byte CID. Later packets travel as COMPRESSED_TCP:
//!
//! ```text
//! +-----+------+-----------+---------------------------+
//! | CID | mask | checksum  | W? A? S? I? (in that order)|
//! +-----+------+-----------+---------------------------+
//!   1      1        2            0..=17 bytes
//! ```
//!
//! Mask bits, most significant first: `r r U W A S P I`. A changed field is
//! sent as a one-byte delta when it fits, otherwise as a zero escape byte
//! followed by the full field value. See `docs/format.md` for the full layout.

mod codec;
mod field_model;
mod header;

pub use codec::{
    CodecError, CompressedRecord, CompressionContext, Compressor, Decompressor, RecordKind, RefreshPolicy, MAX_CONTEXTS,
};
pub use field_model::{
    expected_reduced_header, sample_header_size, sample_header_sizes, ChangeProbabilities, DirectionFieldModel,
    FieldChange, FieldDeltaModel, FIXED_COMPRESSED_BYTES, IPID_BYTES,
};
pub use header::{DefFields, TcpIpHeader, HEADER_LEN, MAX_FLOW_ID};

/// Mask bit layout of a COMPRESSED_TCP header.
pub mod mask {
    pub const RESERVED: u8 = 0b1100_0000;
    pub const URGENT: u8 = 0b0010_0000;
    pub const WINDOW: u8 = 0b0001_0000;
    pub const ACK: u8 = 0b0000_1000;
    pub const SEQ: u8 = 0b0000_0100;
    pub const PUSH: u8 = 0b0000_0010;
    pub const IPID: u8 = 0b0000_0001;
}
