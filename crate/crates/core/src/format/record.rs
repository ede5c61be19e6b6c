//! Length-delimited, checksummed record framing.
//!
//! ```text
//! length: u64 | masked_crc32c(length bytes): u32 | payload | masked_crc32c(payload): u32
//! ```
//!
//! The framing matches the TFRecord container byte for byte, so third-party
//! readers can walk the frames of a `.rec` file.

use std::io::{self, Read, Write};

use super::{FormatError, Result};

pub const CRC_MASK_DELTA: u32 = 0xa282_ead8;
/// Bytes added around every payload.
pub const FRAME_OVERHEAD: usize = 8 + 4 + 4;

/// CRC-32C (Castagnoli) of `bytes`.
pub fn crc32c(bytes: &[u8]) -> u32 {
    crc32c::crc32c(bytes)
}

pub fn mask_crc(crc: u32) -> u32 {
    crc.rotate_right(15).wrapping_add(CRC_MASK_DELTA)
}

pub fn unmask_crc(masked: u32) -> u32 {
    masked.wrapping_sub(CRC_MASK_DELTA).rotate_left(15)
}

/// Writes one frame around `payload`.
pub fn encode_record<W: Write>(payload: &[u8], sink: &mut W) -> io::Result<()> {
    let len = (payload.len() as u64).to_le_bytes();
    let mut head = [0u8; 12];
    head[..8].copy_from_slice(&len);
    head[8..].copy_from_slice(&mask_crc(crc32c(&len)).to_le_bytes());
    sink.write_all(&head)?;
    sink.write_all(payload)?;
    sink.write_all(&mask_crc(crc32c(payload)).to_le_bytes())
}

/// Reads and verifies one frame. Returns `Ok(None)` on a clean end of stream.
pub fn decode_record<R: Read>(source: &mut R) -> Result<Option<Vec<u8>>> {
    let mut reader = RecordReader::new(source);
    reader.read_record()
}

pub struct RecordWriter<W: Write> {
    sink: W,
    offset: u64,
    count: u64,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(sink: W) -> Self {
        Self {
            sink,
            offset: 0,
            count: 0,
        }
    }

    pub fn write_record(&mut self, payload: &[u8]) -> Result<()> {
        encode_record(payload, &mut self.sink).map_err(|source| FormatError::Io {
            offset: self.offset,
            source,
        })?;
        self.offset += (payload.len() + FRAME_OVERHEAD) as u64;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn bytes_written(&self) -> u64 {
        self.offset
    }

    pub fn finish(mut self) -> Result<W> {
        self.sink.flush().map_err(|source| FormatError::Io {
            offset: self.offset,
            source,
        })?;
        Ok(self.sink)
    }
}

/// Iterates over the payloads of a record stream, verifying both checksums.
pub struct RecordReader<R: Read> {
    source: R,
    offset: u64,
    failed: bool,
}

impl<R: Read> RecordReader<R> {
    pub fn new(source: R) -> Self {
        Self {
            source,
            offset: 0,
            failed: false,
        }
    }

    /// Byte offset of the next frame.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn fill(&mut self, buf: &mut [u8], frame_start: u64) -> Result<()> {
        self.source.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => FormatError::TruncatedRecord {
                offset: frame_start,
            },
            _ => FormatError::Io {
                offset: frame_start,
                source: e,
            },
        })
    }

    pub fn read_record(&mut self) -> Result<Option<Vec<u8>>> {
        let start = self.offset;
        let mut head = [0u8; 12];
        // distinguish a clean end of stream from a frame cut inside its header
        let mut got = 0;
        while got < head.len() {
            match self.source.read(&mut head[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(source) => {
                    return Err(FormatError::Io {
                        offset: start,
                        source,
                    })
                }
            }
        }
        if got == 0 {
            return Ok(None);
        }
        if got < head.len() {
            return Err(FormatError::TruncatedRecord { offset: start });
        }
        let len_bytes: [u8; 8] = head[..8].try_into().unwrap();
        let len_crc = u32::from_le_bytes(head[8..].try_into().unwrap());
        if mask_crc(crc32c(&len_bytes)) != len_crc {
            return Err(FormatError::CorruptLength { offset: start });
        }
        let len = u64::from_le_bytes(len_bytes);
        let len = usize::try_from(len).map_err(|_| FormatError::CorruptLength { offset: start })?;
        let mut payload = Vec::new();
        // `len` is untrusted until the payload checksum passes
        const STEP: usize = 1 << 20;
        while payload.len() < len {
            let take = (len - payload.len()).min(STEP);
            let at = payload.len();
            payload.resize(at + take, 0);
            self.fill(&mut payload[at..], start)?;
        }
        let mut crc = [0u8; 4];
        self.fill(&mut crc, start)?;
        if mask_crc(crc32c(&payload)) != u32::from_le_bytes(crc) {
            return Err(FormatError::CorruptPayload { offset: start });
        }
        self.offset = start + (len + FRAME_OVERHEAD) as u64;
        Ok(Some(payload))
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.read_record() {
            Ok(Some(p)) => Some(Ok(p)),
            Ok(None) => None,
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}
