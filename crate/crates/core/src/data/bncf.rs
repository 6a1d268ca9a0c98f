//! `BNCF` feature files, shared with the external feature extractor.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "BNCF"
//! 4       4     u32 version = 1
//! 8       8     u64 N (rows)
//! 16      4     u32 D (feature dim)
//! 20      4     u32 k (classes)
//! 24      1     u8 has_labels (0 or 1)
//! 25      16    domain name, UTF-8, zero-padded
//! 41      4·N·D f32 features, row-major
//! ...     2·N   u16 labels (only if has_labels)
//! ```
//!
//! Everything is little-endian and there are no trailing bytes.

use std::fs;
use std::path::Path;

use super::FeatureDataset;
use crate::bytes::Reader;
use crate::error::{Error, FormatError, Result};
use crate::linalg::Matrix;

pub const BNCF_MAGIC: [u8; 4] = *b"BNCF";
pub const BNCF_VERSION: u32 = 1;
pub const BNCF_NAME_LEN: usize = 16;

pub fn encode_features(ds: &FeatureDataset) -> Result<Vec<u8>> {
    let name = ds.domain().as_bytes();
    if name.len() > BNCF_NAME_LEN {
        return Err(Error::Validation(format!(
            "domain name '{}' exceeds {BNCF_NAME_LEN} bytes",
            ds.domain()
        )));
    }
    if name.contains(&0) {
        return Err(Error::Validation("domain name contains NUL".into()));
    }
    let dim = u32::try_from(ds.dim())
        .map_err(|_| Error::Validation(format!("feature dim {} exceeds u32", ds.dim())))?;
    let k = u32::try_from(ds.num_classes())
        .map_err(|_| Error::Validation(format!("k={} exceeds u32", ds.num_classes())))?;

    let n = ds.len();
    let mut out = Vec::with_capacity(41 + 4 * n * ds.dim() + 2 * n);
    out.extend_from_slice(&BNCF_MAGIC);
    out.extend_from_slice(&BNCF_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&k.to_le_bytes());
    out.push(ds.labels().is_some() as u8);
    let mut padded = [0u8; BNCF_NAME_LEN];
    padded[..name.len()].copy_from_slice(name);
    out.extend_from_slice(&padded);

    for (i, &v) in ds.features().as_slice().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::Validation(format!(
                "feature {v} at row {}, column {} does not fit in f32",
                i / ds.dim(),
                i % ds.dim()
            )));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    if let Some(labels) = ds.labels() {
        for (row, &l) in labels.iter().enumerate() {
            let l = u16::try_from(l).map_err(|_| {
                Error::Validation(format!("label {l} at row {row} does not fit in u16"))
            })?;
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_features(buf: &[u8]) -> Result<FeatureDataset> {
    let mut r = Reader::new(buf);
    let magic = r.take(BNCF_MAGIC.len().min(buf.len()))?;
    if magic != BNCF_MAGIC {
        return Err(FormatError::Magic {
            expected: BNCF_MAGIC,
            found: magic.to_vec(),
        }
        .into());
    }
    let version = r.u32()?;
    if version != BNCF_VERSION {
        return Err(FormatError::Version(version).into());
    }
    let n = r.u64()?;
    let dim = r.u32()?;
    let k = r.u32()?;
    let has_labels = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(FormatError::Header(format!("has_labels byte {b}")).into()),
    };
    let name_bytes = r.take(BNCF_NAME_LEN)?;
    let end = name_bytes.iter().position(|&b| b == 0).unwrap_or(BNCF_NAME_LEN);
    if name_bytes[end..].iter().any(|&b| b != 0) {
        return Err(FormatError::Header("domain name padding is not zero".into()).into());
    }
    let domain = std::str::from_utf8(&name_bytes[..end])
        .map_err(|_| FormatError::Header("domain name is not UTF-8".into()))?
        .to_string();

    if n == 0 || dim == 0 || k == 0 {
        return Err(FormatError::Header(format!("empty shape N={n} D={dim} k={k}")).into());
    }
    let cells = (n as u128) * (dim as u128);
    let payload = cells * 4 + if has_labels { n as u128 * 2 } else { 0 };
    if payload > r.remaining() as u128 {
        return Err(FormatError::Truncated {
            needed: ((buf.len() - r.remaining()) as u128 + payload).min(u64::MAX as u128) as u64,
            available: buf.len() as u64,
        }
        .into());
    }
    if payload < r.remaining() as u128 {
        return Err(FormatError::TrailingBytes((r.remaining() as u128 - payload) as u64).into());
    }

    let (n, dim) = (n as usize, dim as usize);
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n * dim {
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(FormatError::NonFinite {
                row: i / dim,
                col: i % dim,
            }
            .into());
        }
        data.push(f64::from(v));
    }
    let labels = if has_labels {
        let mut ls = Vec::with_capacity(n);
        for row in 0..n {
            let l = u32::from(r.u16()?);
            if l >= k {
                return Err(FormatError::LabelOutOfRange { row, label: l, k }.into());
            }
            ls.push(l);
        }
        Some(ls)
    } else {
        None
    };
    r.finish()?;
    FeatureDataset::new(Matrix::from_vec(n, dim, data)?, labels, k as usize, domain)
}

pub fn write_features(path: impl AsRef<Path>, ds: &FeatureDataset) -> Result<()> {
    fs::write(path, encode_features(ds)?)?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    decode_features(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SeededRng;

    fn sample(labels: bool) -> FeatureDataset {
        let x = SeededRng::new(1).randn(7, 3, 0.0, 10.0).unwrap();
        let ls = labels.then(|| vec![0, 1, 2, 3, 4, 0, 4]);
        FeatureDataset::new(x, ls, 5, "Art").unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_features(&sample(true)).unwrap();
        assert_eq!(&bytes[..4], b"BNCF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 7);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 5);
        assert_eq!(bytes[24], 1);
        assert_eq!(&bytes[25..41], b"Art\0\0\0\0\0\0\0\0\0\0\0\0\0");
        assert_eq!(bytes.len(), 41 + 7 * 3 * 4 + 7 * 2);
    }

    #[test]
    fn round_trip_within_f32() {
        for labeled in [true, false] {
            let ds = sample(labeled);
            let back = decode_features(&encode_features(&ds).unwrap()).unwrap();
            assert_eq!(back.labels(), ds.labels());
            assert_eq!(back.domain(), "Art");
            assert_eq!(back.num_classes(), 5);
            for (a, b) in back.features().as_slice().iter().zip(ds.features().as_slice()) {
                assert_eq!(*a, f64::from(*b as f32));
            }
        }
    }

    #[test]
    fn label_equal_to_k_rejected() {
        let mut bytes = encode_features(&sample(true)).unwrap();
        let last = bytes.len() - 2;
        bytes[last..].copy_from_slice(&5u16.to_le_bytes());
        assert!(matches!(
            decode_features(&bytes),
            Err(Error::Format(FormatError::LabelOutOfRange { row: 6, label: 5, k: 5 }))
        ));
    }

    #[test]
    fn empty_file_is_corrupt() {
        assert!(matches!(decode_features(&[]), Err(Error::Format(FormatError::Magic { .. }))));
    }

    #[test]
    fn long_domain_name_rejected_on_write() {
        let ds = FeatureDataset::new(Matrix::zeros(1, 1), None, 1, "a".repeat(17)).unwrap();
        assert!(encode_features(&ds).is_err());
    }

    #[test]
    fn huge_header_counts_do_not_allocate() {
        let mut bytes = encode_features(&sample(false)).unwrap();
        bytes[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(
            decode_features(&bytes),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
    }
}
