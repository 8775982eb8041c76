//! Line-delimited JSON telemetry with CRC-32 framing, and the binary layout
//! used to hand pulse-frame blocks from the transmitter to the link.
//!
//! A telemetry line is `{"t_s":..,"type":..,"fields":{..},"crc32":N}`. The
//! checksum covers the exact bytes of the line with the `crc32` member
//! removed, i.e. `{"t_s":..,"type":..,"fields":{..}}`.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transmitter::{IntensityClass, PulseFrame, Role};

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("malformed telemetry record: {0}")]
    Malformed(String),
    #[error("crc mismatch: record says {stored:#010x}, payload gives {computed:#010x}")]
    Crc { stored: u32, computed: u32 },
    #[error("frame block: {0}")]
    FrameBlock(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketType {
    Housekeeping,
    Calibration,
    Alarm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryPacket {
    pub t_s: f64,
    #[serde(rename = "type")]
    pub packet_type: PacketType,
    pub fields: BTreeMap<String, f64>,
    pub crc32: u32,
}

#[derive(Serialize)]
struct Payload<'a> {
    t_s: f64,
    #[serde(rename = "type")]
    packet_type: PacketType,
    fields: &'a BTreeMap<String, f64>,
}

const CRC_KEY: &str = ",\"crc32\":";

impl TelemetryPacket {
    /// Build a packet and seal it with the checksum of its payload.
    pub fn new(t_s: f64, packet_type: PacketType, fields: BTreeMap<String, f64>) -> Self {
        let mut p = Self {
            t_s,
            packet_type,
            fields,
            crc32: 0,
        };
        p.crc32 = crc32fast::hash(p.payload().as_bytes());
        p
    }

    fn payload(&self) -> String {
        serde_json::to_string(&Payload {
            t_s: self.t_s,
            packet_type: self.packet_type,
            fields: &self.fields,
        })
        .expect("telemetry payload is always serialisable")
    }

    pub fn is_valid(&self) -> bool {
        crc32fast::hash(self.payload().as_bytes()) == self.crc32
    }

    /// One JSON line without the trailing newline.
    pub fn to_line(&self) -> String {
        let mut s = self.payload();
        s.pop();
        s.push_str(CRC_KEY);
        s.push_str(&self.crc32.to_string());
        s.push('}');
        s
    }

    pub fn from_line(line: &str) -> Result<Self, TelemetryError> {
        let line = line.trim_end_matches(['\n', '\r']);
        let idx = line
            .rfind(CRC_KEY)
            .ok_or_else(|| TelemetryError::Malformed("missing crc32".into()))?;
        let payload = format!("{}}}", &line[..idx]);
        let computed = crc32fast::hash(payload.as_bytes());
        let packet: TelemetryPacket =
            serde_json::from_str(line).map_err(|e| TelemetryError::Malformed(e.to_string()))?;
        if packet.crc32 != computed {
            return Err(TelemetryError::Crc {
                stored: packet.crc32,
                computed,
            });
        }
        Ok(packet)
    }
}

pub fn write_log<W: Write>(packets: &[TelemetryPacket], mut out: W) -> io::Result<()> {
    for p in packets {
        writeln!(out, "{}", p.to_line())?;
    }
    Ok(())
}

pub fn read_log<R: BufRead>(input: R) -> Result<Vec<TelemetryPacket>, TelemetryError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(TelemetryPacket::from_line(&line)?);
        }
    }
    Ok(out)
}

pub const FRAME_MAGIC: &[u8; 4] = b"QFRM";
pub const FRAME_VERSION: u16 = 1;

/// Frame block layout, little-endian:
///
/// ```text
/// magic "QFRM" | u16 version | u64 count
/// count x { u64 slot | u8 flags | f64 mean_photon_number | f64 phase_rad }
/// ```
///
/// `flags`: bit 0 reference role, bit 1 basis, bit 2 bit value,
/// bits 3-4 intensity class (0 signal, 1 decoy, 2 vacuum).
pub fn write_frames<W: Write>(frames: &[PulseFrame], mut out: W) -> io::Result<()> {
    out.write_all(FRAME_MAGIC)?;
    out.write_all(&FRAME_VERSION.to_le_bytes())?;
    out.write_all(&(frames.len() as u64).to_le_bytes())?;
    for f in frames {
        let flags = u8::from(f.role == Role::Reference)
            | (f.basis << 1)
            | (f.bit << 2)
            | ((f.intensity_class.index() as u8) << 3);
        out.write_all(&f.slot.to_le_bytes())?;
        out.write_all(&[flags])?;
        out.write_all(&f.mean_photon_number.to_le_bytes())?;
        out.write_all(&f.phase_rad.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    input.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_frames<R: Read>(mut input: R) -> Result<Vec<PulseFrame>, TelemetryError> {
    if &read_array::<4, _>(&mut input)? != FRAME_MAGIC {
        return Err(TelemetryError::FrameBlock("bad magic".into()));
    }
    let version = u16::from_le_bytes(read_array(&mut input)?);
    if version != FRAME_VERSION {
        return Err(TelemetryError::FrameBlock(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(read_array(&mut input)?);
    let mut frames = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let slot = u64::from_le_bytes(read_array(&mut input)?);
        let [flags] = read_array::<1, _>(&mut input)?;
        let mu = f64::from_le_bytes(read_array(&mut input)?);
        let phase = f64::from_le_bytes(read_array(&mut input)?);
        let intensity_class = IntensityClass::from_index(((flags >> 3) & 0b11) as usize)
            .ok_or_else(|| TelemetryError::FrameBlock(format!("bad flags {flags:#04x}")))?;
        frames.push(PulseFrame {
            slot,
            role: if flags & 1 == 1 { Role::Reference } else { Role::Quantum },
            basis: (flags >> 1) & 1,
            bit: (flags >> 2) & 1,
            intensity_class,
            mean_photon_number: mu,
            phase_rad: phase,
        });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packet() -> TelemetryPacket {
        let mut fields = BTreeMap::new();
        fields.insert("phase_bias_rad".to_string(), 0.012_345_678_901_234_5);
        fields.insert("photodiode".to_string(), 1e-7);
        fields.insert("counter".to_string(), 123_456.0);
        TelemetryPacket::new(12.5, PacketType::Housekeeping, fields)
    }

    #[test]
    fn line_round_trip() {
        let p = packet();
        let line = p.to_line();
        let q = TelemetryPacket::from_line(&line).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.to_line(), line);
        assert!(q.is_valid());
    }

    #[test]
    fn every_single_byte_corruption_detected() {
        let line = packet().to_line();
        let bytes = line.as_bytes();
        for i in 0..bytes.len() {
            let mut b = bytes.to_vec();
            b[i] ^= 0x01;
            let Ok(s) = String::from_utf8(b) else { continue };
            assert!(TelemetryPacket::from_line(&s).is_err(), "byte {i} flip undetected: {s}");
        }
    }

    #[test]
    fn log_round_trip() {
        let ps = vec![packet(), TelemetryPacket::new(1.0, PacketType::Alarm, BTreeMap::new())];
        let mut buf = Vec::new();
        write_log(&ps, &mut buf).unwrap();
        assert_eq!(read_log(buf.as_slice()).unwrap(), ps);
    }

    #[test]
    fn frame_block_round_trip() {
        let frames = vec![
            PulseFrame {
                slot: 7,
                role: Role::Quantum,
                basis: 1,
                bit: 0,
                intensity_class: IntensityClass::Decoy,
                mean_photon_number: 0.1,
                phase_rad: std::f64::consts::FRAC_PI_2,
            },
            PulseFrame {
                slot: 8,
                role: Role::Reference,
                basis: 0,
                bit: 1,
                intensity_class: IntensityClass::Vacuum,
                mean_photon_number: 1e4,
                phase_rad: -0.3,
            },
        ];
        let mut buf = Vec::new();
        write_frames(&frames, &mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 2 + 8 + 2 * 25);
        assert_eq!(read_frames(buf.as_slice()).unwrap(), frames);
        buf[0] = b'X';
        assert!(read_frames(buf.as_slice()).is_err());
    }
}
