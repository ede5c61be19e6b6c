//! Training example and its flat payload.
//!
//! The payload is `EXAMPLE_FLOATS` little-endian `f32` values:
//! `label one-hot (3) | hlf (14) | llf row-major (801 x 19)`, i.e. 60944 bytes.

use serde::{Deserialize, Serialize};

use super::{FormatError, Result};

pub const HLF_LEN: usize = 14;
pub const LLF_ROWS: usize = 801;
pub const LLF_COLS: usize = 19;
pub const EXAMPLE_FLOATS: usize = 3 + HLF_LEN + LLF_ROWS * LLF_COLS;
pub const EXAMPLE_PAYLOAD_BYTES: usize = 4 * EXAMPLE_FLOATS;

/// Column holding the padding flag of an LLF row.
pub const COL_IS_PADDING: usize = 17;
/// Column holding the isolated-lepton flag of an LLF row.
pub const COL_LEPTON_FLAG: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    W = 0,
    Qcd = 1,
    TTbar = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::W, Label::Qcd, Label::TTbar];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::W => "w",
            Label::Qcd => "qcd",
            Label::TTbar => "ttbar",
        }
    }

    pub fn one_hot(self) -> [f32; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }

    fn from_one_hot(v: [f32; 3]) -> Option<Self> {
        let mut found = None;
        for (i, x) in v.iter().enumerate() {
            match x.to_bits() {
                0 => {}
                b if b == 1.0f32.to_bits() && found.is_none() => found = Some(i),
                _ => return None,
            }
        }
        found.map(|i| Self::ALL[i])
    }
}

/// The 801 x 19 low-level feature matrix.
///
/// Only the leading rows are stored; rows at or past `stored_rows()` are the
/// canonical padding row (all zeros with the padding flag set).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Llf {
    rows: Vec<[f32; LLF_COLS]>,
}

impl Llf {
    pub fn padding_row() -> [f32; LLF_COLS] {
        let mut row = [0.0; LLF_COLS];
        row[COL_IS_PADDING] = 1.0;
        row
    }

    pub fn is_padding_row(row: &[f32; LLF_COLS]) -> bool {
        row[COL_IS_PADDING] > 0.5
    }

    /// Panics if more than `LLF_ROWS` rows are given.
    pub fn from_rows(rows: Vec<[f32; LLF_COLS]>) -> Self {
        assert!(
            rows.len() <= LLF_ROWS,
            "{} rows exceed {LLF_ROWS}",
            rows.len()
        );
        let mut llf = Self { rows };
        llf.trim();
        llf
    }

    fn trim(&mut self) {
        let pad = Self::padding_row();
        while self
            .rows
            .last()
            .is_some_and(|r| r.iter().zip(&pad).all(|(a, b)| a.to_bits() == b.to_bits()))
        {
            self.rows.pop();
        }
    }

    pub fn stored_rows(&self) -> &[[f32; LLF_COLS]] {
        &self.rows
    }

    pub fn stored_rows_mut(&mut self) -> &mut [[f32; LLF_COLS]] {
        &mut self.rows
    }

    pub fn row(&self, i: usize) -> [f32; LLF_COLS] {
        assert!(i < LLF_ROWS);
        self.rows.get(i).copied().unwrap_or_else(Self::padding_row)
    }

    pub fn shape(&self) -> (usize, usize) {
        (LLF_ROWS, LLF_COLS)
    }

    /// Number of rows whose padding flag is clear.
    pub fn real_rows(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| !Self::is_padding_row(r))
            .count()
    }

    pub fn to_dense(&self) -> Vec<f32> {
        (0..LLF_ROWS).flat_map(|i| self.row(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub label: Label,
    pub hlf: [f32; HLF_LEN],
    pub llf: Llf,
}

pub fn encode_example(e: &Example) -> Vec<u8> {
    let mut out = Vec::with_capacity(EXAMPLE_PAYLOAD_BYTES);
    let mut put = |v: f32| out.extend_from_slice(&v.to_le_bytes());
    e.label.one_hot().into_iter().for_each(&mut put);
    e.hlf.iter().copied().for_each(&mut put);
    for i in 0..LLF_ROWS {
        e.llf.row(i).into_iter().for_each(&mut put);
    }
    debug_assert_eq!(out.len(), EXAMPLE_PAYLOAD_BYTES);
    out
}

pub fn decode_example(bytes: &[u8]) -> Result<Example> {
    if bytes.len() != EXAMPLE_PAYLOAD_BYTES {
        return Err(FormatError::Shape {
            expected: EXAMPLE_PAYLOAD_BYTES,
            found: bytes.len(),
        });
    }
    let mut floats = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut next = || floats.next().unwrap();
    let one_hot = [next(), next(), next()];
    let label = Label::from_one_hot(one_hot).ok_or(FormatError::InvalidOneHot(one_hot))?;
    let mut hlf = [0.0; HLF_LEN];
    hlf.iter_mut().for_each(|v| *v = next());
    let mut rows = Vec::with_capacity(LLF_ROWS);
    for _ in 0..LLF_ROWS {
        let mut row = [0.0; LLF_COLS];
        row.iter_mut().for_each(|v| *v = next());
        rows.push(row);
    }
    Ok(Example {
        label,
        hlf,
        llf: Llf::from_rows(rows),
    })
}
