//! `CADS` dataset archives.
//!
//! Little-endian layout: magic `CADS`, version u32, then u32 N, S, channels
//! and class count; per class a u16 length and UTF-8 name; labels u16 × N;
//! f32 pixels in row-major N×S×S×channels order.

use std::path::Path;

use super::Dataset;
use crate::binio::Reader;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CADS";
pub const VERSION: u32 = 1;

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let u32_of =
        |v: usize, what: &str| u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in u32")));
    let mut out = Vec::with_capacity(24 + ds.images.len() * 4 + ds.len() * 2);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (v, what) in [
        (ds.len(), "sample count"),
        (ds.size(), "image size"),
        (ds.channels(), "channel count"),
        (ds.num_classes(), "class count"),
    ] {
        out.extend_from_slice(&u32_of(v, what)?.to_le_bytes());
    }
    for name in &ds.class_names {
        let n = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("class name too long: {name}")))?;
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for &l in &ds.labels {
        let l = u16::try_from(l).map_err(|_| Error::invalid(format!("label {l} does not fit in u16")))?;
        out.extend_from_slice(&l.to_le_bytes());
    }
    for v in ds.images.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses an archive; `source` is recorded as the dataset manifest.
pub fn decode_dataset(bytes: &[u8], source: &str) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.header(MAGIC, VERSION)?;
    let n = r.u32("sample count")? as usize;
    let s = r.u32("image size")? as usize;
    let c = r.u32("channel count")? as usize;
    let k = r.u32("class count")? as usize;
    if n == 0 || s == 0 || c == 0 || k == 0 {
        return Err(Error::format(8, format!("empty dimension in N={n} S={s} C={c} classes={k}")));
    }
    let mut class_names = Vec::with_capacity(k.min(1 << 16));
    for _ in 0..k {
        let len = r.u16("class name length")? as usize;
        class_names.push(r.utf8(len, "class name")?);
    }
    let mut labels = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let at = r.offset();
        let l = r.u16("label")? as usize;
        if l >= k {
            return Err(Error::format(at, format!("label {l} outside 0..{k}")));
        }
        labels.push(l);
    }
    let count = [n, s, s, c].iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let count = count.ok_or_else(|| r.err("pixel count overflows"))?;
    let pixels = r.f32s(count, "pixels")?;
    r.finish()?;
    Dataset::new(Tensor::new(vec![n, s, s, c], pixels)?, labels, class_names, vec![source.to_string()])
}

pub fn write_dataset_archive(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn read_dataset_archive(path: &Path) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?, &format!("archive:{}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic_dataset;

    fn sample() -> Dataset {
        let mut ds = generate_synthetic_dataset(2, 16, 9).unwrap();
        ds.images.data_mut()[0] = f32::from_bits(3);
        ds.source = vec!["x".into()];
        ds
    }

    #[test]
    fn roundtrip_bit_exact() {
        let ds = sample();
        let back = decode_dataset(&encode_dataset(&ds).unwrap(), "x").unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.class_names, ds.class_names);
        let bits = |d: &Dataset| d.images.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ds));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.cads");
        let ds = sample();
        write_dataset_archive(&ds, &p).unwrap();
        assert_eq!(read_dataset_archive(&p).unwrap().images, ds.images);
    }

    #[test]
    fn corruption_rejected() {
        let b = encode_dataset(&sample()).unwrap();
        let mut bad = b.clone();
        bad[3] = b'X';
        assert!(matches!(decode_dataset(&bad, ""), Err(Error::Format { offset: 0, .. })));
        let mut bad = b.clone();
        bad[4] = 9;
        assert!(matches!(decode_dataset(&bad, ""), Err(Error::Format { offset: 4, .. })));
        for cut in [0, 7, 20, 30, b.len() - 1] {
            assert!(matches!(decode_dataset(&b[..cut], ""), Err(Error::Format { .. })), "cut {cut}");
        }
        let mut long = b.clone();
        long.extend([0; 4]);
        assert!(decode_dataset(&long, "").is_err());
    }

    #[test]
    fn label_out_of_range_rejected() {
        let b = encode_dataset(&sample()).unwrap();
        // Header (24) + two names (2 + 5 each) puts the first label at 38.
        let at = 24 + 2 * (2 + 5);
        assert_eq!(&b[at..at + 2], &[0, 0]);
        let mut bad = b.clone();
        bad[at] = 2;
        match decode_dataset(&bad, "") {
            Err(Error::Format { offset, reason }) => {
                assert_eq!(offset, at as u64);
                assert!(reason.contains("label 2"));
            }
            other => panic!("{other:?}"),
        }
    }
}
