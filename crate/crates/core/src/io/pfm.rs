//! Grayscale PFM (`Pf`) reader and writer.
//!
//! Layout: `Pf\n<width> <height>\n<scale>\n` followed by `width * height`
//! f32 samples, rows stored bottom-up. A negative scale means little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::DisparityMap;

use super::header::HeaderReader;

/// Byte order used when writing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<DisparityMap> {
    let mut hdr = HeaderReader::new(bytes, path);
    let magic = hdr.token()?;
    match magic.as_str() {
        "Pf" => {}
        "PF" => {
            return Err(Error::Unsupported {
                path: path.to_path_buf(),
                reason: "three-channel PF maps are not supported; expected grayscale Pf".into(),
            })
        }
        other => return Err(hdr.error(format!("bad magic {other:?}"))),
    }
    let width: usize = hdr.number()?;
    let height: usize = hdr.number()?;
    let scale_at = hdr.offset();
    let scale: f64 = hdr.number()?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: scale_at,
            reason: format!("scale must be a non-zero number, got {scale}"),
        });
    }
    let start = hdr.end_of_header()?;
    let little = scale < 0.0;
    let need = width * height * 4;
    let payload = &bytes[start..];
    if payload.len() < need {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len(),
            reason: format!("truncated payload: need {need} bytes after offset {start}, found {}", payload.len()),
        });
    }
    let mut data = vec![0.0; width * height];
    for (i, chunk) in payload[..need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row_from_bottom, x) = (i / width, i % width);
        data[(height - 1 - row_from_bottom) * width + x] = v as f64;
    }
    DisparityMap::new(height, width, data)
}

pub fn encode_pfm(map: &DisparityMap, endian: Endian) -> Vec<u8> {
    let scale = match endian {
        Endian::Little => "-1",
        Endian::Big => "1",
    };
    let mut out = format!("Pf\n{} {}\n{scale}\n", map.width, map.height).into_bytes();
    out.reserve(map.data.len() * 4);
    for y in (0..map.height).rev() {
        for &v in &map.data[y * map.width..][..map.width] {
            let v = v as f32;
            out.extend_from_slice(&match endian {
                Endian::Little => v.to_le_bytes(),
                Endian::Big => v.to_be_bytes(),
            });
        }
    }
    out
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<DisparityMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}

/// Writes a little-endian PFM.
pub fn write_pfm(path: impl AsRef<Path>, map: &DisparityMap) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pfm(map, Endian::Little)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(seed: u64, h: usize, w: usize) -> DisparityMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DisparityMap::new(h, w, (0..h * w).map(|_| rng.random_range(-50.0f32..50.0) as f64).collect()).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let map = random_map(1, 16, 8);
        write_pfm(&path, &map).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!((back.height, back.width), (16, 8));
        for (a, b) in map.data.iter().zip(&back.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rows_are_stored_bottom_up() {
        let map = DisparityMap::new(2, 1, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&map, Endian::Little);
        let payload = &bytes[bytes.len() - 8..];
        assert_eq!(&payload[..4], &2.0f32.to_le_bytes());
    }

    #[test]
    fn big_endian_twin_reads_identically() {
        let map = random_map(2, 5, 7);
        let p = Path::new("mem");
        let le = decode_pfm(&encode_pfm(&map, Endian::Little), p).unwrap();
        let be = decode_pfm(&encode_pfm(&map, Endian::Big), p).unwrap();
        assert_eq!(le, be);
    }

    #[test]
    fn colour_pfm_is_unsupported() {
        let err = decode_pfm(b"PF\n1 1\n-1\n\0\0\0\0\0\0\0\0\0\0\0\0", Path::new("c.pfm")).unwrap_err();
        assert!(matches!(err, Error::Unsupported { .. }));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let mut bytes = encode_pfm(&random_map(3, 4, 4), Endian::Little);
        bytes.truncate(bytes.len() - 3);
        match decode_pfm(&bytes, Path::new("t.pfm")).unwrap_err() {
            Error::Format { offset, reason, .. } => {
                assert_eq!(offset, bytes.len());
                assert!(reason.contains("truncated"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_header() {
        assert!(matches!(
            decode_pfm(b"Pf\nfour 4\n-1\n", Path::new("m.pfm")),
            Err(Error::Format { offset: 3, .. })
        ));
        assert!(matches!(decode_pfm(b"P6\n", Path::new("m.pfm")), Err(Error::Format { .. })));
    }
}
