//! Raw event stream.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "HEP1" | version: u32 = 1 | event*
//! event    = label: u8 | n_particles: u32 | particle * n_particles
//! particle = category: u8 | px | py | pz | E | charge | d0 | dz | iso   (f32 each)
//! ```

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::{FormatError, Result};

const MAGIC: [u8; 4] = *b"HEP1";
const VERSION: u32 = 1;
const PARTICLE_BYTES: usize = 1 + 8 * 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Category {
    ChargedHadron = 0,
    NeutralHadron = 1,
    Photon = 2,
    Electron = 3,
    Muon = 4,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::ChargedHadron,
        Category::NeutralHadron,
        Category::Photon,
        Category::Electron,
        Category::Muon,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn is_lepton(self) -> bool {
        matches!(self, Category::Electron | Category::Muon)
    }

    pub fn is_hadron(self) -> bool {
        matches!(self, Category::ChargedHadron | Category::NeutralHadron)
    }

    pub fn is_neutral(self) -> bool {
        matches!(self, Category::NeutralHadron | Category::Photon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub category: Category,
    pub px: f32,
    pub py: f32,
    pub pz: f32,
    pub e: f32,
    pub charge: f32,
    pub d0: f32,
    pub dz: f32,
    pub iso: f32,
}

impl Particle {
    /// Checks the per-particle invariants. Zero energy is accepted.
    pub fn validate(&self) -> std::result::Result<(), &'static str> {
        if !(self.e >= 0.0) {
            return Err("negative or non-finite energy");
        }
        if self.charge != 0.0 && self.charge.abs() != 1.0 {
            return Err("charge magnitude must be 0 or 1");
        }
        if self.category.is_neutral() && self.charge != 0.0 {
            return Err("neutral category with nonzero charge");
        }
        Ok(())
    }

    pub fn pt(&self) -> f64 {
        (self.px as f64).hypot(self.py as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub label: super::Label,
    pub particles: Vec<Particle>,
}

/// Streaming writer. The header is emitted on construction.
pub struct RawWriter<W: Write> {
    sink: W,
    offset: u64,
    count: u64,
}

impl<W: Write> RawWriter<W> {
    pub fn new(mut sink: W) -> Result<Self> {
        let mut header = [0u8; 8];
        header[..4].copy_from_slice(&MAGIC);
        header[4..].copy_from_slice(&VERSION.to_le_bytes());
        sink.write_all(&header)
            .map_err(|source| FormatError::Io { offset: 0, source })?;
        Ok(Self {
            sink,
            offset: 8,
            count: 0,
        })
    }

    pub fn write_event(&mut self, event: &RawEvent) -> Result<()> {
        let mut buf = Vec::with_capacity(5 + event.particles.len() * PARTICLE_BYTES);
        buf.push(event.label as u8);
        buf.extend_from_slice(&(event.particles.len() as u32).to_le_bytes());
        for p in &event.particles {
            buf.push(p.category as u8);
            for v in [p.px, p.py, p.pz, p.e, p.charge, p.d0, p.dz, p.iso] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        self.sink
            .write_all(&buf)
            .map_err(|source| FormatError::Io {
                offset: self.offset,
                source,
            })?;
        self.offset += buf.len() as u64;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(mut self) -> Result<W> {
        self.sink.flush().map_err(|source| FormatError::Io {
            offset: self.offset,
            source,
        })?;
        Ok(self.sink)
    }
}

/// Writes a header and every event; returns the number of events written.
pub fn write_raw_events<'a, W, I>(events: I, sink: W) -> Result<u64>
where
    W: Write,
    I: IntoIterator<Item = &'a RawEvent>,
{
    let mut writer = RawWriter::new(sink)?;
    for event in events {
        writer.write_event(event)?;
    }
    let n = writer.count();
    writer.finish()?;
    Ok(n)
}

/// Streaming reader; yields one event at a time and never buffers the file.
pub struct RawReader<R: Read> {
    source: R,
    offset: u64,
    index: u64,
    failed: bool,
}

impl<R: Read> RawReader<R> {
    pub fn new(mut source: R) -> Result<Self> {
        let mut header = [0u8; 8];
        source.read_exact(&mut header).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => FormatError::BadMagic {
                found: [0; 4],
                expected: MAGIC,
            },
            _ => FormatError::Io {
                offset: 0,
                source: e,
            },
        })?;
        let found: [u8; 4] = header[..4].try_into().unwrap();
        if found != MAGIC {
            return Err(FormatError::BadMagic {
                found,
                expected: MAGIC,
            });
        }
        let version = u32::from_le_bytes(header[4..].try_into().unwrap());
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        Ok(Self {
            source,
            offset: 8,
            index: 0,
            failed: false,
        })
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.source.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                Err(FormatError::TruncatedEvent { event: self.index })
            }
            Err(source) => Err(FormatError::Io {
                offset: self.offset,
                source,
            }),
        }
    }

    /// Returns `Ok(None)` on a clean end of stream at an event boundary.
    fn read_first_byte(&mut self) -> Result<Option<u8>> {
        let mut b = [0u8; 1];
        loop {
            match self.source.read(&mut b) {
                Ok(0) => return Ok(None),
                Ok(_) => {
                    self.offset += 1;
                    return Ok(Some(b[0]));
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(source) => {
                    return Err(FormatError::Io {
                        offset: self.offset,
                        source,
                    })
                }
            }
        }
    }

    fn read_event(&mut self) -> Result<Option<RawEvent>> {
        let Some(label_byte) = self.read_first_byte()? else {
            return Ok(None);
        };
        let event = self.index;
        let label = super::Label::from_u8(label_byte).ok_or(FormatError::InvalidLabel {
            event,
            value: label_byte,
        })?;
        let mut n = [0u8; 4];
        self.read_exact(&mut n)?;
        let n = u32::from_le_bytes(n);
        if n == 0 {
            return Err(FormatError::EmptyEvent { event });
        }
        let mut particles = Vec::with_capacity((n as usize).min(4096));
        let mut buf = [0u8; PARTICLE_BYTES];
        for i in 0..n {
            self.read_exact(&mut buf)?;
            let category = Category::from_u8(buf[0]).ok_or(FormatError::InvalidCategory {
                event,
                particle: i,
                value: buf[0],
            })?;
            let f = |k: usize| {
                let at = 1 + 4 * k;
                f32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
            };
            let p = Particle {
                category,
                px: f(0),
                py: f(1),
                pz: f(2),
                e: f(3),
                charge: f(4),
                d0: f(5),
                dz: f(6),
                iso: f(7),
            };
            p.validate()
                .map_err(|reason| FormatError::InvalidParticle {
                    event,
                    particle: i,
                    reason,
                })?;
            particles.push(p);
        }
        self.index += 1;
        Ok(Some(RawEvent { label, particles }))
    }
}

impl<R: Read> Iterator for RawReader<R> {
    type Item = Result<RawEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.read_event() {
            Ok(Some(e)) => Some(Ok(e)),
            Ok(None) => None,
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Opens a streaming reader over `source` after validating the header.
pub fn read_raw_events<R: Read>(source: R) -> Result<RawReader<R>> {
    RawReader::new(source)
}
