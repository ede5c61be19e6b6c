//! On-disk formats: the raw event stream (`.hep`), the CRC-framed record
//! stream (`.rec`) and the flat float payload stored inside each record.

mod example;
mod raw;
mod record;

pub use example::{
    decode_example, encode_example, Example, Label, Llf, COL_IS_PADDING, COL_LEPTON_FLAG,
    EXAMPLE_FLOATS, EXAMPLE_PAYLOAD_BYTES, HLF_LEN, LLF_COLS, LLF_ROWS,
};
pub use raw::{
    read_raw_events, write_raw_events, Category, Particle, RawEvent, RawReader, RawWriter,
};
pub use record::{
    crc32c, decode_record, encode_record, mask_crc, unmask_crc, RecordReader, RecordWriter,
    CRC_MASK_DELTA, FRAME_OVERHEAD,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error at byte {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated event {event}")]
    TruncatedEvent { event: u64 },
    #[error("event {event}: invalid label byte {value}")]
    InvalidLabel { event: u64, value: u8 },
    #[error("event {event} particle {particle}: invalid category byte {value}")]
    InvalidCategory {
        event: u64,
        particle: u32,
        value: u8,
    },
    #[error("event {event} particle {particle}: {reason}")]
    InvalidParticle {
        event: u64,
        particle: u32,
        reason: &'static str,
    },
    #[error("event {event} has no particles")]
    EmptyEvent { event: u64 },
    #[error("record at byte {offset}: length checksum mismatch")]
    CorruptLength { offset: u64 },
    #[error("record at byte {offset}: payload checksum mismatch")]
    CorruptPayload { offset: u64 },
    #[error("record at byte {offset}: truncated frame")]
    TruncatedRecord { offset: u64 },
    #[error("payload is {found} bytes, expected {expected}")]
    Shape { expected: usize, found: usize },
    #[error("label is not a one-hot vector: {0:?}")]
    InvalidOneHot([f32; 3]),
}

pub type Result<T> = std::result::Result<T, FormatError>;
