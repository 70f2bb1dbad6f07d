//! Binary dataset container and CSV export.
//!
//! Layout (little endian): magic `SGD0`, version `u16`, obs_dim `u16`,
//! act_dim `u16`, record count `u64`, then one `f64` column per scalar
//! field in the order obs.., act.., reward, next_obs.., done (0/1), and a
//! trailing CRC32 of everything before it.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, ReplayBuffer, TransitionRecord};

pub const DATASET_MAGIC: &[u8; 4] = b"SGD0";
pub const DATASET_VERSION: u16 = 1;
pub const CSV_HEADER: &str = "obs0,obs1,obs2,act0,rew,nobs0,nobs1,nobs2,done";

const HEADER_LEN: usize = 4 + 2 + 2 + 2 + 8;

pub fn encode_dataset(buf: &ReplayBuffer) -> Vec<u8> {
    let n = buf.len();
    let (od, ad) = (buf.obs_dim(), buf.act_dim());
    let width = 2 * od + ad + 2;
    let mut cols = vec![Vec::with_capacity(n); width];
    for r in buf.records() {
        let mut c = 0;
        for v in r.obs.iter().chain(&r.act).copied() {
            cols[c].push(v);
            c += 1;
        }
        cols[c].push(r.reward);
        c += 1;
        for &v in &r.next_obs {
            cols[c].push(v);
            c += 1;
        }
        cols[c].push(if r.done { 1.0 } else { 0.0 });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + width * n * 8 + 4);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(od as u16).to_le_bytes());
    out.extend_from_slice(&(ad as u16).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for col in &cols {
        for v in col {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<ReplayBuffer, DataError> {
    if bytes.len() < 4 {
        return Err(DataError::Truncated);
    }
    if &bytes[..4] != DATASET_MAGIC {
        return Err(DataError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(DataError::Truncated);
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(4);
    if version != DATASET_VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let od = u16_at(6) as usize;
    let ad = u16_at(8) as usize;
    let n = u64::from_le_bytes(bytes[10..18].try_into().expect("8 bytes")) as usize;
    let width = 2 * od + ad + 2;
    let body = width
        .checked_mul(n)
        .and_then(|v| v.checked_mul(8))
        .ok_or(DataError::Truncated)?;
    let expected = HEADER_LEN + body + 4;
    if bytes.len() < expected {
        return Err(DataError::Truncated);
    }
    if bytes.len() > expected {
        return Err(DataError::TrailingBytes(bytes.len() - expected));
    }
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..expected - 4]);
    if stored != computed {
        return Err(DataError::ChecksumMismatch { stored, computed });
    }
    let col = |c: usize, i: usize| {
        let o = HEADER_LEN + (c * n + i) * 8;
        f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"))
    };
    let records = (0..n).map(|i| {
        let obs = (0..od).map(|c| col(c, i)).collect();
        let act = (0..ad).map(|c| col(od + c, i)).collect();
        let reward = col(od + ad, i);
        let next_obs = (0..od).map(|c| col(od + ad + 1 + c, i)).collect();
        let done = col(2 * od + ad + 1, i) != 0.0;
        TransitionRecord {
            obs,
            act,
            reward,
            next_obs,
            done,
        }
    });
    ReplayBuffer::from_records(od, ad, records)
}

pub fn save_dataset(buf: &ReplayBuffer, path: impl AsRef<Path>) -> Result<(), DataError> {
    fs::write(path, encode_dataset(buf))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<ReplayBuffer, DataError> {
    decode_dataset(&fs::read(path)?)
}

/// Writes one CSV row per transition under a header line. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn export_csv(buf: &ReplayBuffer, mut out: impl Write) -> Result<(), DataError> {
    let mut header: Vec<String> = Vec::new();
    header.extend((0..buf.obs_dim()).map(|i| format!("obs{i}")));
    header.extend((0..buf.act_dim()).map(|i| format!("act{i}")));
    header.push("rew".into());
    header.extend((0..buf.obs_dim()).map(|i| format!("nobs{i}")));
    header.push("done".into());
    writeln!(out, "{}", header.join(","))?;
    for r in buf.records() {
        let mut fields: Vec<String> = Vec::with_capacity(header.len());
        fields.extend(r.obs.iter().chain(&r.act).map(|v| v.to_string()));
        fields.push(r.reward.to_string());
        fields.extend(r.next_obs.iter().map(|v| v.to_string()));
        fields.push(if r.done { "1" } else { "0" }.into());
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pendulum::collect_dataset;

    #[test]
    fn round_trip_is_bit_exact() {
        let buf = collect_dataset(3, 10, 1).unwrap();
        let back = decode_dataset(&encode_dataset(&buf)).unwrap();
        assert_eq!(back.len(), buf.len());
        for (a, b) in buf.records().zip(back.records()) {
            for (x, y) in a.obs.iter().zip(&b.obs) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert_eq!(a.reward.to_bits(), b.reward.to_bits());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.sgd");
        let buf = collect_dataset(2, 5, 8).unwrap();
        save_dataset(&buf, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), buf);
    }

    #[test]
    fn corruption_is_classified() {
        let bytes = encode_dataset(&collect_dataset(1, 4, 2).unwrap());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dataset(&bad), Err(DataError::BadMagic)));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_dataset(&bad),
            Err(DataError::UnsupportedVersion(9))
        ));
        assert!(matches!(
            decode_dataset(&bytes[..bytes.len() - 10]),
            Err(DataError::Truncated)
        ));
        assert!(matches!(
            decode_dataset(&bytes[..12]),
            Err(DataError::Truncated)
        ));
        let mut bad = bytes.clone();
        bad[40] ^= 0x10;
        assert!(matches!(
            decode_dataset(&bad),
            Err(DataError::ChecksumMismatch { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode_dataset(&long),
            Err(DataError::TrailingBytes(1))
        ));
    }

    #[test]
    fn csv_has_header_plus_one_row_per_record() {
        let buf = collect_dataset(2, 7, 3).unwrap();
        let mut out = Vec::new();
        export_csv(&buf, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), buf.len() + 1);
        assert_eq!(lines[0], CSV_HEADER);
        let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        let rec = buf.get(0).unwrap();
        assert_eq!(first[0], rec.obs[0]);
        assert_eq!(first[4], rec.reward);
    }
}
