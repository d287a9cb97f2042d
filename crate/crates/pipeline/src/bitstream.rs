//! The self-describing bitstream container.
//!
//! Layout (all multi-byte fields big-endian):
//! magic `HDJ1` (4) | version u8 | H u16 | W u16 | lambda-index u8 |
//! eta f32 dB | len(b_v) u32 | len(b_z) u32 | b_v | b_z | CRC32 of all
//! preceding bytes. Payload segments are byte-aligned.

use crate::{PipelineError, Result};

pub const MAGIC: &[u8; 4] = b"HDJ1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 2 + 2 + 1 + 4 + 4 + 4;
pub const TRAILER_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerHeader {
    pub height: u16,
    pub width: u16,
    /// 1-based rate index into the model's lambda set.
    pub lambda_index: u8,
    pub eta_db: f32,
    pub len_v: u32,
    pub len_z: u32,
}

pub fn write_container(header: &ContainerHeader, b_v: &[u8], b_z: &[u8]) -> Result<Vec<u8>> {
    if b_v.len() != header.len_v as usize || b_z.len() != header.len_z as usize {
        return Err(PipelineError::CorruptedStream(
            "header lengths disagree with payloads".into(),
        ));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + b_v.len() + b_z.len() + TRAILER_LEN);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&header.height.to_be_bytes());
    out.extend_from_slice(&header.width.to_be_bytes());
    out.push(header.lambda_index);
    out.extend_from_slice(&header.eta_db.to_be_bytes());
    out.extend_from_slice(&header.len_v.to_be_bytes());
    out.extend_from_slice(&header.len_z.to_be_bytes());
    out.extend_from_slice(b_v);
    out.extend_from_slice(b_z);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

pub fn read_container(bytes: &[u8]) -> Result<(ContainerHeader, &[u8], &[u8])> {
    if bytes.len() < HEADER_LEN + TRAILER_LEN {
        return Err(PipelineError::CorruptedStream(format!(
            "container of {} bytes is shorter than the framing",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(PipelineError::CorruptedStream("bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(PipelineError::CorruptedStream(format!(
            "container version {} unsupported (expected {VERSION})",
            bytes[4]
        )));
    }
    let crc_stored = u32::from_be_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if crc != crc_stored {
        return Err(PipelineError::CorruptedStream(format!(
            "checksum {crc:#010x} != stored {crc_stored:#010x}"
        )));
    }
    let header = ContainerHeader {
        height: u16::from_be_bytes([bytes[5], bytes[6]]),
        width: u16::from_be_bytes([bytes[7], bytes[8]]),
        lambda_index: bytes[9],
        eta_db: f32::from_be_bytes(bytes[10..14].try_into().unwrap()),
        len_v: u32::from_be_bytes(bytes[14..18].try_into().unwrap()),
        len_z: u32::from_be_bytes(bytes[18..22].try_into().unwrap()),
    };
    let expect = HEADER_LEN + header.len_v as usize + header.len_z as usize + TRAILER_LEN;
    if bytes.len() != expect {
        return Err(PipelineError::CorruptedStream(format!(
            "container holds {} bytes, framing implies {expect}",
            bytes.len()
        )));
    }
    let v_start = HEADER_LEN;
    let z_start = v_start + header.len_v as usize;
    Ok((
        header,
        &bytes[v_start..z_start],
        &bytes[z_start..z_start + header.len_z as usize],
    ))
}

/// Backhaul latency in channel uses: `ceil(L_b / R_N)`, so
/// `k' * R_N >= L_b` with equality up to integer rounding.
pub fn backhaul_latency(payload_bits: u64, backhaul_rate: f64) -> u64 {
    (payload_bits as f64 / backhaul_rate).ceil() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(len_v: u32, len_z: u32) -> ContainerHeader {
        ContainerHeader {
            height: 32,
            width: 32,
            lambda_index: 5,
            eta_db: 5.0,
            len_v,
            len_z,
        }
    }

    #[test]
    fn framing_accounts_for_every_byte() {
        let b_v = vec![1u8; 13];
        let b_z = vec![2u8; 200];
        let c = write_container(&header(13, 200), &b_v, &b_z).unwrap();
        assert_eq!(c.len(), HEADER_LEN + 13 + 200 + TRAILER_LEN);
        let (h, v, z) = read_container(&c).unwrap();
        assert_eq!(h, header(13, 200));
        assert_eq!(v, &b_v[..]);
        assert_eq!(z, &b_z[..]);
    }

    #[test]
    fn corruption_is_detected() {
        let c = write_container(&header(4, 4), &[1, 2, 3, 4], &[5, 6, 7, 8]).unwrap();
        for i in [0usize, 5, 9, HEADER_LEN + 2, c.len() - 1] {
            let mut bad = c.clone();
            bad[i] ^= 0x40;
            assert!(read_container(&bad).is_err(), "byte {i} flip undetected");
        }
        assert!(read_container(&c[..c.len() - 1]).is_err());
    }

    #[test]
    fn latency_accounting_is_exact() {
        assert_eq!(backhaul_latency(1536, 2.0), 768);
        assert_eq!(backhaul_latency(1537, 2.0), 769);
        assert_eq!(backhaul_latency(0, 2.0), 0);
        // k' * R_N >= L_b
        for bits in [1u64, 7, 100, 4551] {
            for rate in [0.5, 1.0, 2.0, 3.0] {
                let k = backhaul_latency(bits, rate);
                assert!(k as f64 * rate >= bits as f64);
                assert!((k as f64 - 1.0) * rate < bits as f64);
            }
        }
    }
}
