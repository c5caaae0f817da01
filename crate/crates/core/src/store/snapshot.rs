//! Snapshot file layout: a sequence of records, each a one-byte section tag,
//! a big-endian u64 length and that many payload bytes, followed by the
//! 64-bit FNV-1a checksum of everything before it.

use super::StoreError;
use crate::dht::fnv1a64;

const MAGIC: &[u8; 8] = b"XSTORE1\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Section {
    Config = 1,
    /// Document id (u64) followed by the document text.
    Doc = 2,
    /// One resource id.
    Resource = 3,
    /// Tab-separated triple.
    Triple = 4,
}

impl Section {
    fn from_byte(b: u8) -> Option<Section> {
        Some(match b {
            1 => Section::Config,
            2 => Section::Doc,
            3 => Section::Resource,
            4 => Section::Triple,
            _ => return None,
        })
    }
}

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self { buf: MAGIC.to_vec() }
    }

    pub fn record(&mut self, section: Section, payload: &[u8]) {
        self.buf.push(section as u8);
        self.buf.extend_from_slice(&(payload.len() as u64).to_be_bytes());
        self.buf.extend_from_slice(payload);
    }

    pub fn finish(mut self) -> Vec<u8> {
        let sum = fnv1a64(&self.buf);
        self.buf.extend_from_slice(&sum.to_be_bytes());
        self.buf
    }
}

fn corrupt(msg: &str) -> StoreError {
    StoreError::CorruptSnapshot(msg.to_string())
}

/// Checks the checksum and splits the file into records.
pub fn read(bytes: &[u8]) -> Result<Vec<(Section, &[u8])>, StoreError> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(corrupt("file too short"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 8);
    if fnv1a64(body).to_be_bytes() != sum {
        return Err(corrupt("checksum mismatch"));
    }
    let mut rest = body.strip_prefix(MAGIC.as_slice()).ok_or_else(|| corrupt("not a snapshot file"))?;
    let mut out = Vec::new();
    while let Some((&tag, tail)) = rest.split_first() {
        let section = Section::from_byte(tag).ok_or_else(|| corrupt("unknown section"))?;
        if tail.len() < 8 {
            return Err(corrupt("truncated record header"));
        }
        let (len, tail) = tail.split_at(8);
        let len = u64::from_be_bytes(len.try_into().expect("8 bytes")) as usize;
        if tail.len() < len {
            return Err(corrupt("truncated record"));
        }
        let (payload, tail) = tail.split_at(len);
        out.push((section, payload));
        rest = tail;
    }
    Ok(out)
}
