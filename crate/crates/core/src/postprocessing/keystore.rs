//! Final-key store file and the classical-channel transcript.
//!
//! Key store layout, little-endian:
//!
//! ```text
//! magic "QKSK" | u16 version | u64 session_id | u64 bit_length
//! ceil(bit_length / 8) bytes of key, MSB-first
//! u32 metadata_length | metadata as UTF-8 JSON
//! ```

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::{pack_bits, unpack_bits, AuthTag};

pub const KEYSTORE_MAGIC: &[u8; 4] = b"QKSK";
pub const KEYSTORE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredKey {
    pub session_id: u64,
    pub bits: Vec<u8>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

pub fn write_keystore<W: Write>(key: &StoredKey, mut out: W) -> io::Result<()> {
    out.write_all(KEYSTORE_MAGIC)?;
    out.write_all(&KEYSTORE_VERSION.to_le_bytes())?;
    out.write_all(&key.session_id.to_le_bytes())?;
    out.write_all(&(key.bits.len() as u64).to_le_bytes())?;
    out.write_all(&pack_bits(&key.bits))?;
    let meta = serde_json::to_vec(&key.metadata)?;
    out.write_all(&(meta.len() as u32).to_le_bytes())?;
    out.write_all(&meta)
}

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

pub fn read_keystore<R: Read>(mut input: R) -> io::Result<StoredKey> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != KEYSTORE_MAGIC {
        return Err(invalid("not a key store file"));
    }
    let mut b2 = [0u8; 2];
    input.read_exact(&mut b2)?;
    if u16::from_le_bytes(b2) != KEYSTORE_VERSION {
        return Err(invalid("unsupported key store version"));
    }
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let session_id = u64::from_le_bytes(b8);
    input.read_exact(&mut b8)?;
    let len = usize::try_from(u64::from_le_bytes(b8)).map_err(|_| invalid("key too long"))?;
    let mut packed = vec![0u8; len.div_ceil(8)];
    input.read_exact(&mut packed)?;
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let mut meta = vec![0u8; u32::from_le_bytes(b4) as usize];
    input.read_exact(&mut meta)?;
    Ok(StoredKey {
        session_id,
        bits: unpack_bits(&packed, len),
        metadata: serde_json::from_slice(&meta)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AliceToBob,
    BobToAlice,
}

/// One authenticated classical message as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub direction: Direction,
    #[serde(rename = "type")]
    pub msg_type: String,
    pub payload_bytes: usize,
    pub leakage_delta: u64,
    pub tag: AuthTag,
}

pub fn write_transcript<W: Write>(entries: &[TranscriptEntry], mut out: W) -> io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keystore_round_trip() {
        let mut metadata = BTreeMap::new();
        metadata.insert("qber".to_string(), serde_json::json!(0.031));
        metadata.insert("seed".to_string(), serde_json::json!(7));
        let key = StoredKey {
            session_id: 99,
            bits: (0..77).map(|i| (i % 3 == 1) as u8).collect(),
            metadata,
        };
        let mut buf = Vec::new();
        write_keystore(&key, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"QKSK");
        assert_eq!(read_keystore(buf.as_slice()).unwrap(), key);
        buf[0] = b'X';
        assert!(read_keystore(buf.as_slice()).is_err());
    }

    #[test]
    fn transcript_lines() {
        let e = TranscriptEntry {
            direction: Direction::BobToAlice,
            msg_type: "bases".into(),
            payload_bytes: 10,
            leakage_delta: 0,
            tag: AuthTag { index: 0, value: 5 },
        };
        let mut buf = Vec::new();
        write_transcript(&[e.clone(), e], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("{\"direction\":\"bob_to_alice\",\"type\":\"bases\""));
    }
}
